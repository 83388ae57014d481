"""Exact reference solvers for small single-ellipsoid problems."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import InfeasibleError
from .geometry import EllipsoidConstraint
from .linearizer import QcqpProblem

__all__ = ["OracleSolution", "solve_exact_bisection", "solve_grid_bruteforce", "norm_bound", "MEMBERSHIP_RTOL"]

MEMBERSHIP_RTOL = 1e-9
MAX_GRID_DIM = 3


@dataclass(frozen=True)
class OracleSolution:
    x_star: np.ndarray
    lambda_star: float
    objective: float
    active: bool
    mu: np.ndarray | None = None
    # grid oracle only: Lipschitz constant times grid step (an estimate)
    error_bound: float = 0.0

    def __post_init__(self):
        if self.lambda_star < 0:
            raise ValueError("lambda_star must be non-negative")


def norm_bound(e: EllipsoidConstraint) -> float:
    """Radius bound ``||b|| + sqrt(b_tilde / sigma_min(B))`` valid for every point of the ellipsoid."""
    return float(np.linalg.norm(e.b) + np.sqrt(e.b_tilde / e.sigma_min))


def _single_ellipsoid(p: QcqpProblem) -> EllipsoidConstraint:
    if len(p.ellipsoids) != 1:
        raise ValueError(f"expected exactly one ellipsoid, got {len(p.ellipsoids)}")
    return p.ellipsoids[0]


def _kkt_solve(K: np.ndarray, rhs: np.ndarray, n: int):
    sol = linalg.solve(K, rhs, assume_a="sym", check_finite=False)
    return sol[:n], sol[n:]


def solve_exact_bisection(p: QcqpProblem, rtol: float = 1e-12) -> OracleSolution:
    """Solve ``min (x-a)^T A (x-a)`` over one ellipsoid and ``C x = c`` by bisection on the multiplier.

    For fixed ``lam`` the stationarity system

        [A + lam B   C^T] [x ]   [A a + lam B b]
        [C           0  ] [mu] = [c            ]

    gives ``x(lam)``, whose constraint value is non-increasing in ``lam``.
    The upper bracket doubles from 1 until ``x(lam)`` is feasible; the
    returned point is the feasible end of the final bracket.  Multipliers use
    the halved gradient ``A (x - a) + lam B (x - b) + C^T mu = 0``.

    Raises
    ------
    InfeasibleError
        If no point with ``C x = c`` lies in the ellipsoid.
    ValueError
        If the problem has a box or not exactly one ellipsoid.
    """
    e = _single_ellipsoid(p)
    if p.has_box:
        raise ValueError("bisection oracle does not handle box constraints")
    n, k = p.n, p.C.shape[0]
    A, B = p.A, e.B
    Aa, Bb = A @ p.a, B @ e.b
    K = np.zeros((n + k, n + k))
    K[:n, n:] = p.C.T
    K[n:, :n] = p.C

    def x_of(lam):
        K[:n, :n] = A + lam * B
        rhs = np.concatenate([Aa + lam * Bb, p.c])
        return _kkt_solve(K, rhs, n)

    def g(x):
        return float(e.value(x))

    bt = e.b_tilde
    if k:
        # minimum of the constraint over the affine set decides feasibility
        K[:n, :n] = B
        xb, _ = _kkt_solve(K, np.concatenate([Bb, p.c]), n)
        if g(xb) > bt * (1 + MEMBERSHIP_RTOL):
            raise InfeasibleError("no point of the equality set lies in the ellipsoid")

    x0, mu0 = x_of(0.0)
    if g(x0) <= bt:
        return OracleSolution(x0, 0.0, p.objective(x0), False, mu0)

    lo, hi = 0.0, 1.0
    x_hi, mu_hi = x_of(hi)
    while g(x_hi) > bt:
        lo, hi = hi, 2.0 * hi
        if hi > 1e300:
            raise InfeasibleError("multiplier bracket diverged")
        x_hi, mu_hi = x_of(hi)
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        x_mid, mu_mid = x_of(mid)
        if g(x_mid) > bt:
            lo = mid
        else:
            hi, x_hi, mu_hi = mid, x_mid, mu_mid
    return OracleSolution(x_hi, hi, p.objective(x_hi), True, mu_hi)


def _grid_axes(center: np.ndarray, half: np.ndarray, resolution: int):
    return [np.linspace(c - h, c + h, resolution) for c, h in zip(center, half)]


def solve_grid_bruteforce(
    p: QcqpProblem,
    resolution: int = 2001,
    levels: int = 1,
    chunk: int = 1 << 20,
) -> OracleSolution:
    """Best feasible point of a regular grid, for ``n <= 3``.

    The grid lives on the affine set ``C x = c`` (orthonormal null-space
    coordinates) and covers the ball of radius ``sqrt(b_tilde / sigma_min)``
    around the ellipsoid center, clipped to the box when there are no
    equalities.  With ``levels > 1`` each further level re-grids the bounding
    box, padded by two steps, of all feasible grid points whose objective is
    within the error estimate of the incumbent.  Ties go to the lowest
    lexicographic grid index.  ``error_bound`` is the objective's Lipschitz
    constant over the search region times the final grid step diagonal.  It
    is a first-order estimate, not a guarantee: near a curved boundary the
    grid point closest to the optimum may be infeasible, in which case a zoom
    window can miss the optimum.

    Raises
    ------
    ValueError
        If ``n > 3``.
    InfeasibleError
        If no grid point is feasible.
    """
    e = _single_ellipsoid(p)
    n = p.n
    if n > MAX_GRID_DIM:
        raise ValueError(f"grid oracle supports n <= {MAX_GRID_DIM}, got {n}")
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    if p.C.shape[0]:
        x0 = linalg.lstsq(p.C, p.c)[0]
        Z = linalg.null_space(p.C)
    else:
        x0 = np.zeros(n)
        Z = np.eye(n)
    dim = Z.shape[1]
    radius = np.sqrt(e.b_tilde / e.sigma_min)

    def feasible(X):
        ok = e.value(X) <= e.b_tilde
        if p.has_box:
            ok &= np.all((X >= p.l) & (X <= p.u), axis=1)
        return ok

    if dim == 0:
        if not feasible(x0[None, :])[0]:
            raise InfeasibleError("the unique equality solution violates the constraints")
        return OracleSolution(x0, 0.0, p.objective(x0), bool(np.isclose(e.value(x0), e.b_tilde)))

    center = Z.T @ (e.b - x0)
    half = np.full(dim, radius)
    bound_radius = np.linalg.norm(half)
    if p.has_box and p.C.shape[0] == 0:
        lo = np.maximum(center - half, p.l)
        hi = np.minimum(center + half, p.u)
        if np.any(lo > hi):
            raise InfeasibleError("box and ellipsoid do not intersect")
        center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    # gradient bound 2 ||A|| max ||x - a|| over the search region
    reach = np.linalg.norm(x0 + Z @ (Z.T @ (e.b - x0)) - p.a) + bound_radius
    lip = 2.0 * np.linalg.norm(p.A, 2) * reach

    ZAZ, ZBZ = Z.T @ p.A @ Z, Z.T @ e.B @ Z

    def scan(axes):
        """Yield ``(rows, f)``: objective on a block of the grid, ``inf`` where infeasible.

        Both quadratics are expanded around the grid center and evaluated by
        broadcasting over the axes, so no point array is materialized.
        """
        wc = np.array([ax[(resolution - 1) // 2] for ax in axes])
        xc = x0 + Z @ wc
        da, db = xc - p.a, xc - e.b
        lin_a, lin_b = 2.0 * Z.T @ (p.A @ da), 2.0 * Z.T @ (e.B @ db)
        const_a, const_b = da @ p.A @ da, db @ e.B @ db
        step_rows = max(1, chunk // resolution ** (dim - 1))
        for r0 in range(0, resolution, step_rows):
            rows = slice(r0, min(r0 + step_rows, resolution))
            d = np.meshgrid(axes[0][rows] - wc[0], *[ax - c for ax, c in zip(axes[1:], wc[1:])], indexing="ij", sparse=True)
            f = np.full(np.broadcast_shapes(*(x.shape for x in d)), const_a)
            g = np.full(f.shape, const_b)
            for i in range(dim):
                f += d[i] * (lin_a[i] + ZAZ[i, i] * d[i])
                g += d[i] * (lin_b[i] + ZBZ[i, i] * d[i])
                for j in range(i + 1, dim):
                    f += 2.0 * ZAZ[i, j] * d[i] * d[j]
                    g += 2.0 * ZBZ[i, j] * d[i] * d[j]
            bad = g > e.b_tilde
            if p.has_box:
                for k in range(n):
                    xk = xc[k] + sum(Z[k, i] * d[i] for i in range(dim))
                    bad |= (xk < p.l[k]) | (xk > p.u[k])
            f[bad] = np.inf
            yield rows, f

    def coords(rows, flat_idx, shape):
        sub = np.unravel_index(flat_idx, shape)
        return np.array([axes[0][rows][sub[0]]] + [axes[i][sub[i]] for i in range(1, dim)]).T

    best_w, best_f = None, np.inf
    step = 0.0
    for level in range(levels):
        axes = _grid_axes(center, half, resolution)
        widths = np.array([ax[1] - ax[0] for ax in axes])
        step = float(np.linalg.norm(widths))
        # a finer grid need not contain the incumbent, so keep the best so far
        for rows, f in scan(axes):
            j = int(np.argmin(f))
            if f.flat[j] < best_f:
                best_f, best_w = f.flat[j], coords(rows, j, f.shape)
        if best_w is None:
            raise InfeasibleError("no feasible grid point")
        if level == levels - 1:
            break
        # the optimum can sit far from the incumbent along a flat stretch of the
        # boundary, so zoom onto every near-optimal grid point, not just the best
        lo, hi = best_w.copy(), best_w.copy()
        for rows, f in scan(axes):
            near = coords(rows, np.flatnonzero(f <= best_f + lip * step), f.shape)
            if near.size:
                lo = np.minimum(lo, near.min(axis=0))
                hi = np.maximum(hi, near.max(axis=0))
        center = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo) + 2.0 * widths

    x = x0 + Z @ best_w
    g = e.value(x)
    return OracleSolution(
        x,
        0.0,
        p.objective(x),
        bool(g >= e.b_tilde * (1 - 1e-6)),
        error_bound=float(lip * step),
    )
