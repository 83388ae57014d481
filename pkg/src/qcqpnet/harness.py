"""Random problem generation, the end-to-end pipeline, metrics and parameter sweeps."""
from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import InfeasibleError
from .geometry import BoundaryPointSet, EllipsoidConstraint, _psi, cube_to_sphere
from .linalg import HouseholderProduct, haar_orthogonal, spectral_matrix
from .linearizer import QcqpProblem, QpProblem, build_qp, default_n_points, tangent_constraints
from .nets import NetConfig, _philox, net_block
from .oracle import OracleSolution, solve_exact_bisection, solve_grid_bruteforce
from .qpsolver import SolveReport, SolverConfig, solve_qp

__all__ = [
    "SAMPLERS",
    "ExperimentConfig",
    "MetricsRow",
    "generate_problem",
    "sample_boundary",
    "pipeline_qp",
    "solve_pipeline",
    "exact_solution",
    "feasibility_error",
    "rel_sq_error",
    "run_sweep",
    "cell_seed",
]

log = logging.getLogger(__name__)

SAMPLERS = ("net", "uniform-cube", "uniform-sphere")
EIG_RANGE = (0.5, 5.0)
# above this size the random orthogonal factor is a short Householder product
DENSE_ORTHOGONAL_MAX_N = 2048
HOUSEHOLDER_REFLECTORS = 64
# radius of S relative to the distance from its center to the origin, in the B-norm
RADIUS_FRACTION = 0.5
BOX_FRACTION = 0.9
CHUNK_ROWS = 1024


def _random_spd(n: int, rng: np.random.Generator):
    eigvals = rng.uniform(*EIG_RANGE, size=n)
    if n <= DENSE_ORTHOGONAL_MAX_N:
        Q = haar_orthogonal(n, rng)
    else:
        Q = HouseholderProduct.random(n, HOUSEHOLDER_REFLECTORS, rng)
    return spectral_matrix(Q, eigvals), eigvals, Q


def _inverse_diagonal(eigvals: np.ndarray, Q) -> np.ndarray:
    """``diag(Q diag(1/eigvals) Q^T)`` without forming the inverse."""
    n = eigvals.shape[0]
    out = np.zeros(n)
    for j in range(0, n, CHUNK_ROWS):
        E = np.zeros((n, min(CHUNK_ROWS, n - j)))
        E[np.arange(j, j + E.shape[1]), np.arange(E.shape[1])] = 1.0
        # rows of Q restricted to columns j..: (Q^T E)^T
        QtE = Q.T @ E
        out[j:j + E.shape[1]] = np.einsum("ki,k,ki->i", QtE, 1.0 / eigvals, QtE)
    return out


def generate_problem(n: int, seed: int, box: bool = True) -> QcqpProblem:
    """Random convex instance ``min x^T A x`` over one ellipsoid and, optionally, a box.

    ``A`` and ``B`` have eigenvalues uniform on ``[0.5, 5]`` and random
    orthogonal eigenvectors (Haar for ``n <= 2048``, a product of 64 random
    reflectors beyond).  The center ``b`` is uniform on ``[-1, 1]^n`` and
    ``b_tilde = 0.25 b^T B b``, so the origin is outside ``S`` and the optimum
    sits on its boundary.  The box is ``b +/- delta`` with ``delta_i`` equal to
    0.9 of the half-width of ``S`` along axis ``i``, so every face cuts ``S``.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    rng = _philox(seed, n)
    A, _, _ = _random_spd(n, rng)
    B, eig_b, Q_b = _random_spd(n, rng)
    b = rng.uniform(-1.0, 1.0, size=n)
    spectrum = (eig_b, Q_b)
    Bb = np.sqrt(eig_b) * (b @ Q_b)
    b_tilde = float(RADIUS_FRACTION**2 * (Bb @ Bb))
    e = EllipsoidConstraint(B, b, b_tilde, spectrum=spectrum)
    l = u = None
    if box:
        delta = BOX_FRACTION * np.sqrt(b_tilde * _inverse_diagonal(eig_b, Q_b))
        l, u = b - delta, b + delta
    return QcqpProblem(A, np.zeros(n), ellipsoids=[e], l=l, u=u, check=False)


def feasibility_error(x, e: EllipsoidConstraint) -> float:
    """Constraint violation ``((x - b)^T B (x - b) - b_tilde)_+``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (e.n,):
        raise ValueError(f"x has shape {x.shape}, expected ({e.n},)")
    return max(float(e.value(x)) - e.b_tilde, 0.0)


def rel_sq_error(x_approx, x_exact) -> float:
    """``||x_approx - x_exact||^2 / ||x_exact||^2``."""
    x_approx = np.asarray(x_approx, dtype=float)
    x_exact = np.asarray(x_exact, dtype=float)
    if x_approx.shape != x_exact.shape:
        raise ValueError("vectors differ in shape")
    denom = float(x_exact @ x_exact)
    if denom == 0.0:
        raise ValueError("exact solution has zero norm")
    diff = x_approx - x_exact
    return float(diff @ diff) / denom


def cell_seed(*key) -> int:
    """Deterministic 63-bit seed derived from integers and strings."""
    ints = [int.from_bytes(k.encode(), "little") if isinstance(k, str) else int(k) for k in key]
    return int(np.random.SeedSequence(ints).generate_state(1, np.uint64)[0] >> np.uint64(1))


def sample_boundary(
    e: EllipsoidConstraint,
    sampler: str,
    n_points: int,
    seed: int = 0,
    block: int = 0,
    chunk_rows: int = CHUNK_ROWS,
):
    """Yield consecutive chunks of boundary points of ``e`` as :class:`BoundaryPointSet`.

    ``net`` takes block ``block`` of the base-2 net in ``n - 1`` dimensions,
    ``uniform-cube`` replaces it by i.i.d. uniform cube points (both then go
    through the sphere map and ``psi``) and ``uniform-sphere`` draws uniform
    sphere points that go through ``psi`` only.
    """
    if sampler not in SAMPLERS:
        raise ValueError(f"unknown sampler {sampler!r}; expected one of {SAMPLERS}")
    n = e.n
    if sampler == "net":
        m = int(n_points).bit_length() - 1
        if n_points < 1 or 2**m != n_points:
            raise ValueError(f"net sampler needs a power of two, got {n_points}")
        cfg = NetConfig(m=m, s=n - 1)
    else:
        rng = _philox(seed, 11)
    for start in range(0, n_points, chunk_rows):
        stop = min(start + chunk_rows, n_points)
        if sampler == "net":
            U = cube_to_sphere(net_block(cfg, block, start, stop))
        elif sampler == "uniform-cube":
            U = cube_to_sphere(rng.random((stop - start, n - 1)))
        else:
            Z = rng.standard_normal((stop - start, n))
            U = Z / np.linalg.norm(Z, axis=1)[:, None]
        yield BoundaryPointSet(_psi(U, e), e)


def _tangent_block(e: EllipsoidConstraint, sampler: str, n_points: int, seed: int, block: int):
    G = np.empty((n_points, e.n))
    h = np.empty(n_points)
    row = 0
    for pts in sample_boundary(e, sampler, n_points, seed, block):
        Gi, hi = tangent_constraints(pts)
        G[row:row + len(pts)] = Gi
        h[row:row + len(pts)] = hi
        row += len(pts)
    return G, h


@dataclass
class MetricsRow:
    n: int
    N: int
    sampler: str
    seed: int
    objective_approx: float
    objective_exact: float
    rel_sq_error: float
    feasibility_error: float
    solve_time: float
    iterations: int
    status: str

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def __post_init__(self):
        if self.feasibility_error < 0 or (self.rel_sq_error < 0):
            raise ValueError("error metrics must be non-negative")


def exact_solution(p: QcqpProblem, grid_resolution: int = 2001) -> OracleSolution | None:
    """Reference optimum when one of the oracles applies, else ``None``.

    The bisection oracle ignores the box; its answer is exact whenever it
    lies in the box.  Otherwise the grid oracle handles ``n <= 3``.
    """
    if len(p.ellipsoids) != 1:
        return None
    if p.has_box:
        relaxed = QcqpProblem(p.A, p.a, p.C, p.c, p.ellipsoids, check=False)
    else:
        relaxed = p
    try:
        sol = solve_exact_bisection(relaxed)
    except InfeasibleError:
        sol = None
    if sol is not None and (not p.has_box or np.all((sol.x_star >= p.l) & (sol.x_star <= p.u))):
        return sol
    if p.n <= 2:
        return solve_grid_bruteforce(p, resolution=grid_resolution, levels=4)
    if p.n == 3:
        return solve_grid_bruteforce(p, resolution=101, levels=10)
    return None


def pipeline_qp(p: QcqpProblem, sampler: str, N: int, seed: int = 0) -> QpProblem:
    """The linearized QP that :func:`solve_pipeline` solves for the same arguments."""
    if not p.ellipsoids:
        raise ValueError("problem has no ellipsoidal constraint to linearize")
    blocks = [_tangent_block(e, sampler, N, cell_seed(seed, i), i) for i, e in enumerate(p.ellipsoids)]
    return build_qp(p, blocks)


def solve_pipeline(
    p: QcqpProblem,
    sampler: str,
    N: int,
    cfg: SolverConfig | None = None,
    seed: int = 0,
    exact: OracleSolution | None = None,
) -> tuple[SolveReport, MetricsRow]:
    """Sample, map, linearize and solve with ``N`` boundary points per ellipsoid.

    Ellipsoid ``i`` gets net block ``i`` (or its own random stream), so
    several ellipsoids never share a point set.
    """
    qp = pipeline_qp(p, sampler, N, seed)
    report = solve_qp(qp, cfg)
    del qp
    feas = max(feasibility_error(report.x, e) for e in p.ellipsoids)
    if exact is not None:
        obj_exact = exact.objective
        rse = rel_sq_error(report.x, exact.x_star)
    else:
        obj_exact = rse = math.nan
    row = MetricsRow(
        n=p.n,
        N=N,
        sampler=sampler,
        seed=seed,
        objective_approx=report.objective,
        objective_exact=obj_exact,
        rel_sq_error=rse,
        feasibility_error=feas,
        solve_time=report.wall_time,
        iterations=report.iterations,
        status=report.status,
    )
    return report, row


@dataclass
class ExperimentConfig:
    """One sweep: every ``(n, N, sampler, rep)`` cell of the grid.

    ``N_values=None`` applies the default rule ``max(1024, 2**m)`` with
    ``2**m >= 10 n``.  ``exact_max_n`` bounds the dimension for which oracle
    columns are filled.
    """

    dims: list[int]
    samplers: list[str] = field(default_factory=lambda: list(SAMPLERS))
    N_values: list[int] | None = None
    n_seeds: int = 1
    seed: int = 0
    box: bool = True
    out: str = "sweep.csv"
    workers: int = 1
    exact_max_n: int = 200
    solver: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(n < 2 for n in self.dims):
            raise ValueError("dimensions must be >= 2")
        for s in self.samplers:
            if s not in SAMPLERS:
                raise ValueError(f"unknown sampler {s!r}")
        if self.N_values is not None and "net" in self.samplers:
            for N in self.N_values:
                if N < 1 or N & (N - 1):
                    raise ValueError(f"net sampler needs powers of two, got N={N}")
        if self.n_seeds < 0 or self.workers < 1:
            raise ValueError("n_seeds must be >= 0 and workers >= 1")

    def solver_config(self) -> SolverConfig:
        return SolverConfig(**self.solver)

    def cells(self):
        for n in self.dims:
            Ns = self.N_values if self.N_values is not None else [default_n_points(n)]
            for rep in range(self.n_seeds):
                for N in Ns:
                    for sampler in self.samplers:
                        yield (n, N, sampler, rep)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown experiment fields: {sorted(unknown)}")
        return cls(**d)


def _run_cell(cfg: ExperimentConfig, cell) -> MetricsRow:
    n, N, sampler, rep = cell
    p = generate_problem(n, cell_seed(cfg.seed, n, rep), box=cfg.box)
    exact = exact_solution(p) if n <= cfg.exact_max_n else None
    _, row = solve_pipeline(p, sampler, N, cfg.solver_config(), cell_seed(cfg.seed, n, N, sampler, rep), exact)
    row.seed = rep
    return row


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _read_done(path: str) -> dict:
    done = {}
    if not os.path.exists(path):
        return done
    cols = MetricsRow.columns()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != cols:
            raise ValueError(f"{path} has an unexpected header; refusing to resume")
        for rec in reader:
            if None in rec.values() or None in rec:
                continue  # truncated trailing line from an interrupted run
            key = (int(rec["n"]), int(rec["N"]), rec["sampler"], int(rec["seed"]))
            done[key] = [rec[c] for c in cols]
    return done


def run_sweep(cfg: ExperimentConfig) -> str:
    """Run all cells, appending each finished row to ``cfg.out``; returns the path.

    Cells already present in ``cfg.out`` are skipped, so an interrupted sweep
    resumes where it stopped.  Rows are written by this process only; with
    ``workers > 1`` cells are computed in a process pool.  The finished file
    is rewritten in canonical cell order.
    """
    path = cfg.out
    cols = MetricsRow.columns()
    done = _read_done(path)
    cells = list(cfg.cells())
    todo = [c for c in cells if c not in done]
    if not done:
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerow(cols)

    def record(cell, row: MetricsRow):
        values = [_format(getattr(row, c)) for c in cols]
        done[cell] = values
        with open(path, "a", newline="") as fh:
            csv.writer(fh).writerow(values)

    try:
        if cfg.workers > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                futures = [(c, pool.submit(_run_cell, cfg, c)) for c in todo]
                for cell, fut in futures:
                    record(cell, _result(cell, fut.result))
        else:
            for cell in todo:
                record(cell, _result(cell, lambda c=cell: _run_cell(cfg, c)))
    except OSError as exc:
        raise OSError(f"writing {path} failed: {exc}") from exc

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for cell in cells:
            writer.writerow(done[cell])
    return path


def _result(cell, thunk) -> MetricsRow:
    try:
        return thunk()
    except Exception as exc:
        raise RuntimeError(f"sweep cell (n, N, sampler, rep)={cell} failed: {exc}") from exc
