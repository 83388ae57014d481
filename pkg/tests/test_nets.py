import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import qmc

from qcqpnet.nets import (
    InstanceTooLargeError,
    NetConfig,
    generate_net,
    net_block,
    sample_uniform_cube,
    t_value,
    verify_net_property,
)


def test_single_point_net_is_origin():
    ps = generate_net(NetConfig(m=0, s=2))
    np.testing.assert_array_equal(ps.points, [[0.0, 0.0]])


def test_one_dimensional_net_is_radical_inverse_in_order():
    ps = generate_net(NetConfig(m=3, s=1))
    expected = [0, 1 / 2, 1 / 4, 3 / 4, 1 / 8, 5 / 8, 3 / 8, 7 / 8]
    np.testing.assert_array_equal(ps.points[:, 0], expected)


def _radical_inverse(k: int, bits: int) -> float:
    rev = int(format(k, f"0{bits}b")[::-1], 2) if bits else 0
    return rev / 2**bits


@pytest.mark.parametrize("m", [1, 5, 10, 16])
def test_first_coordinate_matches_hand_radical_inverse(m):
    pts = generate_net(NetConfig(m=m, s=3)).points[:, 0]
    ref = [_radical_inverse(k, m) for k in range(2**m)]
    np.testing.assert_array_equal(pts, ref)
    np.testing.assert_array_equal(np.sort(pts), np.arange(2**m) / 2**m)


@pytest.mark.parametrize("s", [1, 2, 5, 40, 200])
@pytest.mark.parametrize("m", [4, 10])
def test_matches_reference_sobol_generator_as_a_set(m, s):
    # the reference emits the same points in Gray-code order
    ref = qmc.Sobol(d=s, scramble=False).random_base2(m)
    ours = generate_net(NetConfig(m=m, s=s)).points
    np.testing.assert_array_equal(ours[np.lexsort(ours.T)], ref[np.lexsort(ref.T)])


def test_m4_s2_net_has_one_point_per_elementary_interval():
    cfg = NetConfig(m=4, s=2, t=0)
    ps = generate_net(cfg)
    assert verify_net_property(ps, cfg)
    # independent count over all dyadic boxes of volume 1/16
    P = ps.points
    for k1 in range(5):
        k2 = 4 - k1
        cells = np.floor(P[:, 0] * 2**k1).astype(int) * 2**k2 + np.floor(P[:, 1] * 2**k2).astype(int)
        assert np.bincount(cells, minlength=16).tolist() == [1] * 16


def test_uniform_points_fail_net_property_for_pinned_seed():
    cfg = NetConfig(m=4, s=2, t=0)
    ps = sample_uniform_cube(16, 2, seed=0)
    assert not verify_net_property(ps, cfg)


def test_single_point_passes_net_property():
    cfg = NetConfig(m=0, s=3)
    assert verify_net_property(generate_net(cfg), cfg)


def test_verify_rejects_large_instances():
    cfg = NetConfig(m=17, s=1)
    with pytest.raises(InstanceTooLargeError):
        verify_net_property(generate_net(cfg), cfg)
    cfg = NetConfig(m=4, s=5)
    with pytest.raises(InstanceTooLargeError):
        verify_net_property(generate_net(cfg), cfg)


@pytest.mark.parametrize(
    "m,s,t",
    [(4, 2, 0), (6, 2, 0), (4, 3, 1), (8, 1, 0), (10, 3, 1), (8, 4, 3), (6, 4, 2)],
)
def test_t_value_of_construction(m, s, t):
    assert t_value(m, s) == t
    cfg = NetConfig(m=m, s=s, t=t)
    assert verify_net_property(generate_net(cfg), cfg)
    if t > 0:
        # the net is not one with a smaller t
        assert not verify_net_property(generate_net(cfg), NetConfig(m=m, s=s, t=t - 1))


def test_requesting_unattainable_t_is_rejected():
    with pytest.raises(ValueError):
        generate_net(NetConfig(m=4, s=3, t=0))


@pytest.mark.parametrize(
    "kwargs",
    [dict(base=3, m=2, s=1), dict(m=-1, s=1), dict(m=2, s=0), dict(m=2, s=1, t=3), dict(m=40, s=1)],
)
def test_invalid_configs_rejected(kwargs):
    with pytest.raises(ValueError):
        generate_net(NetConfig(**kwargs))


def test_dimension_beyond_table_rejected():
    with pytest.raises(ValueError):
        generate_net(NetConfig(m=2, s=10**6))


@settings(max_examples=30, deadline=None)
@given(m=st.integers(0, 12), s=st.integers(1, 64))
def test_coordinates_are_dyadic_and_in_unit_interval(m, s):
    P = generate_net(NetConfig(m=m, s=s)).points
    assert P.shape == (2**m, s)
    assert P.min() >= 0.0 and P.max() < 1.0
    np.testing.assert_array_equal(P * 2**m, np.round(P * 2**m))


@settings(max_examples=20, deadline=None)
@given(m=st.integers(0, 12), s=st.integers(1, 4))
def test_net_property_holds_for_construction_t(m, s):
    cfg = NetConfig(m=m, s=s, t=t_value(m, s))
    assert verify_net_property(generate_net(cfg), cfg)


def test_generate_net_is_deterministic():
    cfg = NetConfig(m=8, s=7)
    np.testing.assert_array_equal(generate_net(cfg).points, generate_net(cfg).points)


def test_point_sets_are_read_only():
    ps = generate_net(NetConfig(m=3, s=2))
    with pytest.raises(ValueError):
        ps.points[0, 0] = 0.5


def test_later_blocks_are_nets_too():
    cfg = NetConfig(m=6, s=2, t=0)
    for block in (1, 2, 5):
        ps = generate_net(cfg, block=block)
        assert verify_net_property(ps, cfg)
    # consecutive blocks continue the same sequence
    whole = net_block(NetConfig(m=7, s=2))
    np.testing.assert_array_equal(whole[64:], net_block(cfg, block=1))


def test_chunked_rows_match_whole_block():
    cfg = NetConfig(m=10, s=9)
    whole = net_block(cfg)
    np.testing.assert_array_equal(np.vstack([net_block(cfg, 0, a, min(a + 100, 1024)) for a in range(0, 1024, 100)]), whole)


def test_uniform_cube_is_deterministic():
    a = sample_uniform_cube(1, 2, seed=7).points
    b = sample_uniform_cube(1, 2, seed=7).points
    np.testing.assert_array_equal(a, b)


def test_uniform_cube_mean_is_near_half():
    x = sample_uniform_cube(10**4, 1, seed=3).points[:, 0]
    assert abs(x.mean() - 0.5) <= 0.02
    assert x.min() >= 0.0 and x.max() < 1.0


def test_uniform_cube_rejects_empty_request():
    with pytest.raises(ValueError):
        sample_uniform_cube(0, 2, seed=1)


def test_csv_round_trip(tmp_path):
    ps = generate_net(NetConfig(m=5, s=3))
    path = tmp_path / "net.csv"
    ps.to_csv(path)
    back = np.loadtxt(path, delimiter=",", skiprows=1)
    np.testing.assert_array_equal(back, ps.points)
