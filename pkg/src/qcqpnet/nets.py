"""Binary digital (t, m, s)-nets and seeded uniform samplers on the unit cube.

Nets are built from Sobol' generating matrices using the Joe & Kuo
direction numbers (``new-joe-kuo-6.21201``), the same table that ships with
SciPy's ``scipy.stats.qmc.Sobol``.  Points are enumerated in natural index
order (not Gray-code order), so the first coordinate is exactly the base-2
radical inverse of the point index.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

__all__ = [
    "MAX_DIM",
    "MAX_M",
    "NetConfig",
    "CubePointSet",
    "generate_net",
    "net_block",
    "t_value",
    "sample_uniform_cube",
    "verify_net_property",
    "InstanceTooLargeError",
]

MAX_M = 30
# Exhaustive verification limits.
MAX_VERIFY_POINTS = 2**16
MAX_VERIFY_DIM = 4

class InstanceTooLargeError(ValueError):
    """Raised when an exhaustive check is requested above its size limit."""


@lru_cache(maxsize=1)
def _joe_kuo_table() -> tuple[np.ndarray, np.ndarray]:
    import scipy.stats

    path = Path(scipy.stats.__file__).parent / "_sobol_direction_numbers.npz"
    with np.load(path) as data:
        return data["poly"].astype(np.int64), data["vinit"].astype(np.int64)


def _max_dim() -> int:
    return int(_joe_kuo_table()[0].shape[0])


MAX_DIM = 21201


@dataclass(frozen=True)
class NetConfig:
    """Parameters of a base-``base`` digital net with ``base**m`` points in ``[0,1)^s``.

    ``t=None`` means "whatever the construction achieves"; an explicit ``t``
    is checked against the exact quality parameter of the generating matrices
    when that is cheap to compute.
    """

    base: int = 2
    m: int = 0
    s: int = 1
    t: int | None = None

    def __post_init__(self):
        if self.base < 2:
            raise ValueError(f"base must be >= 2, got {self.base}")
        if self.m < 0:
            raise ValueError(f"m must be >= 0, got {self.m}")
        if self.s < 1:
            raise ValueError(f"s must be >= 1, got {self.s}")
        if self.t is not None and not 0 <= self.t <= self.m:
            raise ValueError(f"t must satisfy 0 <= t <= m, got t={self.t}, m={self.m}")

    @property
    def n_points(self) -> int:
        return self.base**self.m


@dataclass(frozen=True)
class CubePointSet:
    """Immutable point set in ``[0,1)^s``."""

    points: np.ndarray
    provenance: str = "net"
    config: NetConfig | None = field(default=None, compare=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True)
        if pts.ndim != 2:
            raise ValueError("points must be a 2-d array of shape (N, s)")
        if pts.size and (pts.min() < 0.0 or pts.max() >= 1.0):
            raise ValueError("cube coordinates must lie in [0, 1)")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def to_csv(self, path) -> None:
        _write_points_csv(path, self.points)


def _write_points_csv(path, points: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"y{j + 1}" for j in range(points.shape[1])])
        for row in points:
            writer.writerow([repr(float(v)) for v in row])


@lru_cache(maxsize=32)
def _direction_integers(s: int, bits: int) -> np.ndarray:
    """Odd integers ``m_k`` (``m_k < 2**(k+1)``) of shape ``(s, bits)``.

    Dimension 0 is the van der Corput generator (all ones); dimension ``d``
    follows the Bratley-Fox recurrence for primitive polynomial ``poly[d]``.
    """
    poly, vinit = _joe_kuo_table()
    poly = poly[:s]
    deg = np.zeros(s, dtype=np.int64)
    deg[1:] = np.array([int(p).bit_length() - 1 for p in poly[1:]], dtype=np.int64)

    mk = np.zeros((s, bits), dtype=np.int64)
    ncopy = min(bits, vinit.shape[1])
    mk[:, :ncopy] = vinit[:s, :ncopy]
    mk[0, :] = 1

    maxdeg = int(deg.max()) if s > 1 else 0
    # a_i(d): coefficient of x^(deg-i) in poly[d], i = 1..deg-1
    coeffs = np.zeros((s, max(maxdeg, 1)), dtype=np.int64)
    for i in range(1, maxdeg):
        shift = np.maximum(deg - i, 0)
        coeffs[:, i] = np.where(i < deg, (poly >> shift) & 1, 0)

    for k in range(bits):
        rec = (deg > 0) & (deg <= k)
        if not rec.any():
            continue
        d = deg[rec]
        rows = np.nonzero(rec)[0]
        prev = mk[rows, k - d]
        val = prev ^ (prev << d)
        for i in range(1, maxdeg):
            use = i < d
            if not use.any():
                continue
            term = (coeffs[rows, i] * mk[rows, k - i]) << i
            val ^= np.where(use, term, 0)
        mk[rows, k] = val
    return mk


def _direction_numbers(s: int, bits: int) -> np.ndarray:
    """Column ``k`` holds the ``bits``-bit integer image of index bit ``k``."""
    mk = _direction_integers(s, bits)
    shifts = bits - 1 - np.arange(bits, dtype=np.int64)
    return (mk << shifts).astype(np.uint64)


def _check_config(cfg: NetConfig) -> None:
    if cfg.base != 2:
        raise ValueError(f"only base 2 is supported, got base={cfg.base}")
    if cfg.s > _max_dim():
        raise ValueError(f"s={cfg.s} exceeds the direction-number table ({_max_dim()} dimensions)")
    if cfg.m > MAX_M:
        raise ValueError(f"m={cfg.m} too large to enumerate (max {MAX_M})")


def net_block(cfg: NetConfig, block: int = 0, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Rows ``start:stop`` of the ``block``-th consecutive ``2**m`` run of the sequence.

    Every aligned block of ``2**m`` Sobol' points is a digital shift of block
    zero and therefore a net with the same ``t``.  Values are integers scaled
    by ``2**-bits`` where ``bits = m`` for block zero.
    """
    _check_config(cfg)
    n = cfg.n_points
    stop = n if stop is None else stop
    if not 0 <= start <= stop <= n:
        raise ValueError(f"invalid row range [{start}, {stop}) for {n} points")
    if block < 0:
        raise ValueError("block index must be non-negative")
    bits = cfg.m + int(block).bit_length()
    if bits > 62:
        raise ValueError("block index too large")
    out = np.zeros((stop - start, cfg.s), dtype=np.uint64)
    if bits == 0:
        return out.astype(float)
    v = _direction_numbers(cfg.s, bits)
    idx = np.arange(start, stop, dtype=np.int64) + (int(block) << cfg.m)
    for k in range(bits):
        rows = ((idx >> k) & 1).astype(bool)
        if rows.any():
            out[rows] ^= v[:, k]
    return out.astype(float) / float(2**bits)


def t_value(m: int, s: int) -> int:
    """Exact quality parameter of the first ``2**m`` points in ``s`` dimensions.

    Computed from the generating matrices: the net has quality ``t`` iff for
    every composition ``d_1 + ... + d_s = m - t`` the first ``d_j`` rows of the
    ``j``-th matrix are linearly independent over GF(2).  Exponential in
    ``s``; intended for small instances.
    """
    if m == 0:
        return 0
    dirs = _direction_numbers(s, m)
    # row r of matrix j: bit (m-1-r) of every column, packed into an int over k
    rows = []
    for j in range(s):
        mat = []
        for r in range(m):
            word = 0
            for k in range(m):
                if (int(dirs[j, k]) >> (m - 1 - r)) & 1:
                    word |= 1 << k
            mat.append(word)
        rows.append(mat)

    def independent(comp) -> bool:
        vecs = [rows[j][r] for j, d in enumerate(comp) for r in range(d)]
        return _gf2_rank(vecs) == len(vecs)

    for strength in range(m, -1, -1):
        if all(independent(c) for c in _compositions(strength, s)):
            return m - strength
    return m


def _gf2_rank(vectors) -> int:
    basis: list[int] = []
    for v in vectors:
        for b in basis:
            v = min(v, v ^ b)
        if v:
            basis.append(v)
    return len(basis)


def _compositions(total: int, parts: int):
    for cuts in itertools.combinations_with_replacement(range(total + 1), parts - 1):
        bounds = (0, *cuts, total)
        yield tuple(bounds[i + 1] - bounds[i] for i in range(parts))


def generate_net(cfg: NetConfig, block: int = 0) -> CubePointSet:
    """Digital (t, m, s)-net in base 2 with ``2**m`` points.

    Parameters
    ----------
    cfg : NetConfig
        Net parameters.  Only ``base=2`` is supported; ``s`` is limited by the
        Joe & Kuo table (21201 dimensions).
    block : int
        Which aligned run of ``2**m`` sequence points to return.  Distinct
        blocks give distinct nets of the same quality.

    Raises
    ------
    ValueError
        Unsupported base, ``s`` beyond the table, ``m`` above ``MAX_M``, or an
        explicit ``cfg.t`` smaller than the construction achieves.
    """
    _check_config(cfg)
    if cfg.t is not None and cfg.s <= 6 and cfg.m <= 20:
        achieved = t_value(cfg.m, cfg.s)
        if cfg.t < achieved:
            raise ValueError(
                f"Sobol' construction gives t={achieved} for m={cfg.m}, s={cfg.s}; t={cfg.t} requested"
            )
    return CubePointSet(net_block(cfg, block), provenance="net", config=cfg)


def _philox(seed, *extra) -> np.random.Generator:
    key = [int(seed), *(int(e) for e in extra)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def sample_uniform_cube(n_points: int, s: int, seed: int) -> CubePointSet:
    """I.i.d. uniform points on ``[0,1)^s`` from a counter-based (Philox) stream."""
    if n_points < 1:
        raise ValueError(f"n_points must be >= 1, got {n_points}")
    if s < 1:
        raise ValueError(f"s must be >= 1, got {s}")
    pts = _philox(seed).random((n_points, s))
    return CubePointSet(pts, provenance="uniform-cube")


def verify_net_property(ps: CubePointSet, cfg: NetConfig) -> bool:
    """Exhaustive check that every elementary box of volume ``base**(t-m)`` holds ``base**t`` points.

    ``cfg.t=None`` is read as ``t=0``.  Only intended for small instances.
    """
    n_expected = cfg.n_points
    if n_expected > MAX_VERIFY_POINTS or cfg.s > MAX_VERIFY_DIM:
        raise InstanceTooLargeError(
            f"exhaustive check limited to {MAX_VERIFY_POINTS} points and s <= {MAX_VERIFY_DIM}"
        )
    pts = ps.points
    if pts.shape != (n_expected, cfg.s):
        return False
    t = 0 if cfg.t is None else cfg.t
    strength = cfg.m - t
    per_box = cfg.base**t
    eta = cfg.base
    for comp in _compositions(strength, cfg.s):
        # box index along axis j: floor(y_j * eta**d_j)
        keys = np.zeros(len(pts), dtype=np.int64)
        for j, d in enumerate(comp):
            cells = np.floor(pts[:, j] * eta**d).astype(np.int64)
            keys = keys * eta**d + cells
        counts = np.bincount(keys, minlength=eta**strength)
        if counts.shape[0] != eta**strength or np.any(counts != per_box):
            return False
    return True
