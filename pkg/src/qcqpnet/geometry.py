"""Maps from the unit cube to the sphere and from the sphere to an ellipsoid boundary.

The ellipsoid is ``S = {x : (x - b)^T B (x - b) <= b_tilde}``.  Points on its
boundary are produced as ``psi(Phi(y))`` where ``Phi`` sends ``[0,1)^(n-1)``
to the unit sphere in cylindrical coordinates and
``psi(u) = sqrt(b_tilde) B^(-1/2) u + b``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize, special
from scipy.spatial.distance import pdist

from .errors import (
    DimensionMismatchError,
    InfiniteEnergyError,
    NotPositiveDefiniteError,
    UnboundedCoverError,
)
from .linalg import HouseholderProduct, is_symmetric
from .nets import CubePointSet, _philox, _write_points_csv

__all__ = [
    "EllipsoidConstraint",
    "SpherePointSet",
    "BoundaryPointSet",
    "cube_to_sphere",
    "map_cube_to_sphere",
    "map_sphere_to_ellipsoid",
    "boundary_points",
    "sample_uniform_sphere",
    "riesz_energy",
    "cover_distance_2d",
    "cover_excess_2d",
    "cap_threshold",
    "equidistribution_test",
]

UNIT_NORM_TOL = 1e-12
BOUNDARY_RTOL = 1e-9


class EllipsoidConstraint:
    """Quadratic constraint ``(x - b)^T B (x - b) <= b_tilde``.

    Parameters
    ----------
    B : (n, n) array
        Symmetric positive definite shape matrix.
    b : (n,) array
        Center.
    b_tilde : float
        Positive level.
    spectrum : tuple, optional
        Known eigendecomposition ``(eigvals, Q)`` of ``B`` with ``Q`` a dense
        orthogonal array or a :class:`~qcqpnet.linalg.HouseholderProduct`.
        When omitted it is computed on first use with ``scipy.linalg.eigh``
        and cached.
    """

    def __init__(self, B, b, b_tilde, *, spectrum=None):
        B = np.asarray(B, dtype=float)
        b = np.asarray(b, dtype=float).reshape(-1)
        n = b.shape[0]
        if B.shape != (n, n):
            raise DimensionMismatchError(f"B has shape {B.shape}, expected {(n, n)}")
        if n < 2:
            raise ValueError("ellipsoids in dimension n < 2 are not supported")
        b_tilde = float(b_tilde)
        if not b_tilde > 0:
            raise ValueError(f"b_tilde must be positive, got {b_tilde}")
        if not is_symmetric(B):
            raise NotPositiveDefiniteError("B is not symmetric")
        self.B = B
        self.b = b
        self.b_tilde = b_tilde
        if spectrum is not None:
            eigvals = np.asarray(spectrum[0], dtype=float)
            if eigvals.shape != (n,):
                raise DimensionMismatchError("spectrum eigenvalues have the wrong shape")
            if eigvals.min() <= 0:
                raise NotPositiveDefiniteError("B has a non-positive eigenvalue")
            self._spectrum = (eigvals, spectrum[1])
        else:
            self._spectrum = None
            try:
                linalg.cholesky(B, lower=True, check_finite=True)
            except linalg.LinAlgError as exc:
                raise NotPositiveDefiniteError("B is not positive definite") from exc

    def __repr__(self) -> str:
        return f"EllipsoidConstraint(n={self.n}, b_tilde={self.b_tilde:g})"

    @property
    def n(self) -> int:
        return self.b.shape[0]

    @property
    def spectrum(self):
        if self._spectrum is None:
            eigvals, Q = linalg.eigh(self.B)
            if eigvals[0] <= 0:
                raise NotPositiveDefiniteError("B is not positive definite")
            self._spectrum = (eigvals, Q)
        return self._spectrum

    @property
    def sigma_min(self) -> float:
        return float(self.spectrum[0].min())

    @property
    def sigma_max(self) -> float:
        return float(self.spectrum[0].max())

    @property
    def condition_number(self) -> float:
        return self.sigma_max / self.sigma_min

    def apply_power(self, X: np.ndarray, power: float) -> np.ndarray:
        """Rows of ``X`` multiplied by ``B**power`` (``X`` has shape ``(N, n)``)."""
        eigvals, Q = self.spectrum
        return ((X @ Q) * eigvals**power) @ Q.T

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Rows of ``X`` multiplied by ``B``; uses the cached spectrum when it is cheap."""
        if isinstance(self._spectrum, tuple) and isinstance(self._spectrum[1], HouseholderProduct):
            return self.apply_power(X, 1.0)
        return X @ self.B

    def value(self, X: np.ndarray) -> np.ndarray:
        """``(x - b)^T B (x - b)`` for each row ``x`` of ``X`` (or a single vector)."""
        X = np.asarray(X, dtype=float)
        D = np.atleast_2d(X) - self.b
        vals = np.einsum("ij,ij->i", self.apply(D), D)
        return vals if X.ndim == 2 else vals[0]

    def contains(self, X, rtol: float = BOUNDARY_RTOL):
        return self.value(X) <= self.b_tilde * (1.0 + rtol)

    def pullback(self, X: np.ndarray) -> np.ndarray:
        """Inverse of ``psi``: rows ``B^(1/2)(x - b) / sqrt(b_tilde)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.apply_power(X - self.b, 0.5) / np.sqrt(self.b_tilde)

    def to_dict(self) -> dict:
        return {"B": self.B.tolist(), "b": self.b.tolist(), "b_tilde": self.b_tilde}

    @classmethod
    def from_dict(cls, d: dict) -> "EllipsoidConstraint":
        return cls(d["B"], d["b"], d["b_tilde"])


@dataclass(frozen=True)
class SpherePointSet:
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True)
        if pts.ndim != 2:
            raise ValueError("points must have shape (N, n)")
        norms = np.linalg.norm(pts, axis=1)
        if pts.size and np.abs(norms - 1.0).max() > UNIT_NORM_TOL:
            raise ValueError("sphere points must have unit norm")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def to_csv(self, path) -> None:
        _write_points_csv(path, self.points)


@dataclass(frozen=True)
class BoundaryPointSet:
    points: np.ndarray
    ellipsoid: EllipsoidConstraint

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True)
        if pts.ndim != 2 or pts.shape[1] != self.ellipsoid.n:
            raise DimensionMismatchError("boundary points do not match the ellipsoid dimension")
        if len(pts):
            resid = np.abs(self.ellipsoid.value(pts) - self.ellipsoid.b_tilde)
            if resid.max() > BOUNDARY_RTOL * self.ellipsoid.b_tilde:
                raise ValueError(f"points are off the ellipsoid boundary (max residual {resid.max():.3g})")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def to_csv(self, path) -> None:
        _write_points_csv(path, self.points)


# below this quantile the leading tail term is exact to double precision in t = 1 - 2x
_TAIL_X = 1e-9


def _symmetric_beta_quantile(a, y):
    """Quantile of Beta(a, a); the far tail uses ``I_x(a, a) ~ x^a / (a B(a, a))``.

    The library inverse loses accuracy (and can return NaN) for tiny ``y``.
    """
    a = np.broadcast_to(np.asarray(a, dtype=float), np.shape(y))
    with np.errstate(divide="ignore"):
        tail = np.exp((np.log(y) + np.log(a) + special.betaln(a, a)) / a)
    use_tail = tail < _TAIL_X
    q = np.where(use_tail, tail, 0.5)
    rest = ~use_tail
    q[rest] = special.betaincinv(a[rest], a[rest], y[rest])
    return q


def _heights(y: np.ndarray, d) -> np.ndarray:
    # Height on S^d has density ~ (1 - t^2)^((d-2)/2); for d = 2 it is uniform.
    d = np.asarray(d, dtype=float)
    return np.where(d == 2, 1.0 - 2.0 * y, 1.0 - 2.0 * _symmetric_beta_quantile(0.5 * d, y))


def cube_to_sphere(Y: np.ndarray) -> np.ndarray:
    """Area-preserving map of rows of ``Y`` in ``[0,1)^(n-1)`` to the unit sphere in ``R^n``.

    The first coordinate sets the angle ``2*pi*y_1`` on the circle; each
    later coordinate ``y_d`` sets the height ``t_d`` of the next cylindrical
    level ``x_d = (sqrt(1 - t_d^2) x_(d-1), t_d)``.  On ``S^2`` the height is
    ``1 - 2 y_d`` (Archimedes); on ``S^d`` with ``d >= 3`` it is the matching
    quantile of the height density ``(1 - t^2)^((d-2)/2)``, which keeps the
    map measure preserving in every dimension.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[1] < 1:
        raise ValueError("expected an (N, n-1) array with n >= 2")
    N, s = Y.shape
    n = s + 1
    X = np.empty((N, n))
    phi = 2.0 * np.pi * Y[:, 0]
    X[:, 0] = np.cos(phi)
    X[:, 1] = np.sin(phi)
    if n > 2:
        T = _heights(Y[:, 1:], np.arange(2, n))
        X[:, 2:] = T
        # coordinate j is scaled by every later level's radius: suffix products
        R = np.sqrt(np.clip(1.0 - T * T, 0.0, None))
        scale = np.ones((N, n - 1))
        scale[:, :-1] = np.cumprod(R[:, ::-1], axis=1)[:, ::-1]
        X[:, 0] *= scale[:, 0]
        X[:, 1:] *= scale
    X /= np.linalg.norm(X, axis=1)[:, None]
    return X


def map_cube_to_sphere(y) -> np.ndarray:
    """Single-point version of :func:`cube_to_sphere`."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size < 1:
        raise ValueError("need n >= 2, i.e. at least one cube coordinate")
    if np.any(y < 0) or np.any(y >= 1):
        raise ValueError("cube coordinates must lie in [0, 1)")
    return cube_to_sphere(y[None, :])[0]


def _psi(U: np.ndarray, e: EllipsoidConstraint) -> np.ndarray:
    return np.sqrt(e.b_tilde) * e.apply_power(U, -0.5) + e.b


def map_sphere_to_ellipsoid(x, e: EllipsoidConstraint) -> np.ndarray:
    """``psi(x) = sqrt(b_tilde) B^(-1/2) x + b`` for unit vectors (rows or a single vector)."""
    x = np.asarray(x, dtype=float)
    U = np.atleast_2d(x)
    if U.shape[1] != e.n:
        raise DimensionMismatchError(f"expected vectors of length {e.n}, got {U.shape[1]}")
    if np.abs(np.linalg.norm(U, axis=1) - 1.0).max() > 1e-9:
        raise ValueError("input must be unit vectors")
    out = _psi(U, e)
    return out if x.ndim == 2 else out[0]


def boundary_points(cube: CubePointSet, e: EllipsoidConstraint) -> BoundaryPointSet:
    """Map a cube point set of dimension ``n - 1`` onto the boundary of ``e``."""
    if cube.dim != e.n - 1:
        raise DimensionMismatchError(f"cube dimension {cube.dim} does not match n - 1 = {e.n - 1}")
    return BoundaryPointSet(_psi(cube_to_sphere(cube.points), e), e)


def sample_uniform_sphere(n_points: int, n: int, seed: int) -> SpherePointSet:
    """Normalized standard Gaussian vectors from a Philox stream."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if n_points < 1:
        raise ValueError(f"n_points must be >= 1, got {n_points}")
    Z = _philox(seed, 1).standard_normal((n_points, n))
    norms = np.linalg.norm(Z, axis=1)
    # a zero draw has probability zero; redraw defensively
    while np.any(norms == 0):
        bad = norms == 0
        Z[bad] = _philox(seed, 2).standard_normal((bad.sum(), n))
        norms = np.linalg.norm(Z, axis=1)
    return SpherePointSet(Z / norms[:, None])


def riesz_energy(points, s_param: float) -> float:
    """Riesz s-energy summed over ordered pairs ``i != j``."""
    if not s_param > 0:
        raise ValueError("s_param must be positive")
    P = np.asarray(getattr(points, "points", points), dtype=float)
    if len(P) < 2:
        return 0.0
    dist = pdist(P)
    if np.any(dist == 0):
        raise InfiniteEnergyError("point set has coincident points")
    return float(2.0 * np.sum(dist ** (-s_param)))


def _tangent_polygon(pts: BoundaryPointSet):
    """Angularly sorted pulled-back points and the vertices of their tangent polygon."""
    e = pts.ellipsoid
    if e.n != 2:
        raise ValueError("cover distance is only available for n = 2")
    U = e.pullback(pts.points)
    angles = np.mod(np.arctan2(U[:, 1], U[:, 0]), 2.0 * np.pi)
    order = np.argsort(angles, kind="stable")
    angles = angles[order]
    if len(angles) < 3:
        raise UnboundedCoverError("fewer than three tangent lines cannot bound a planar cover")
    gaps = np.diff(np.append(angles, angles[0] + 2.0 * np.pi))
    if gaps.max() >= np.pi:
        raise UnboundedCoverError(f"angular gap {gaps.max():.6g} >= pi leaves the cover unbounded")
    U = U[order]
    X = pts.points[order]
    U_next = np.roll(U, -1, axis=0)
    X_next = np.roll(X, -1, axis=0)
    # tangent lines w.u_i = 1 and w.u_j = 1 meet at (u_i + u_j) / (1 + u_i.u_j)
    cos_gap = np.einsum("ij,ij->i", U, U_next)
    W = (U + U_next) / (1.0 + cos_gap)[:, None]
    V = _psi(W, e)
    return X, X_next, V


def cover_distance_2d(pts: BoundaryPointSet) -> float:
    """Largest distance from a tangent-polygon vertex to the two tangency points that span it.

    This is the length of the longest tangent segment of the cover, the
    conic-cap width that governs the approximation error.  For the ``N``-th
    roots of unity on the unit circle it equals ``tan(pi / N)``.

    Raises
    ------
    UnboundedCoverError
        If some angular gap between neighbouring points is at least ``pi``.
    """
    X, X_next, V = _tangent_polygon(pts)
    return float(max(np.linalg.norm(V - X, axis=1).max(), np.linalg.norm(V - X_next, axis=1).max()))


def _distance_to_ellipsoid(v: np.ndarray, e: EllipsoidConstraint) -> float:
    if e.value(v) <= e.b_tilde:
        return 0.0
    eigvals, Q = e.spectrum
    w = Q.T @ (v - e.b)

    def excess(lam):
        z = w / (1.0 + lam * eigvals)
        return np.sum(eigvals * z * z) - e.b_tilde

    hi = 1.0
    while excess(hi) > 0:
        hi *= 2.0
    lam = optimize.brentq(excess, 0.0, hi, xtol=1e-15, rtol=1e-15)
    x = e.b + Q @ (w / (1.0 + lam * eigvals))
    return float(np.linalg.norm(v - x))


def cover_excess_2d(pts: BoundaryPointSet) -> float:
    """``sup_{t in T} dist(t, S)``: the Hausdorff excess of the tangent polygon over the ellipse.

    Attained at a vertex because distance to a convex set is convex.  For the
    ``N``-th roots of unity this is ``sec(pi / N) - 1``.
    """
    _, _, V = _tangent_polygon(pts)
    return max(_distance_to_ellipsoid(v, pts.ellipsoid) for v in V)


def cap_threshold(n: int, measure: float) -> float:
    """Height ``tau`` such that the cap ``{u : u.c >= tau}`` of ``S^(n-1)`` has normalized measure ``measure``."""
    if not 0 < measure < 1:
        raise ValueError("cap measure must lie in (0, 1)")
    if n < 2:
        raise ValueError("need n >= 2")
    if measure <= 0.5:
        z = special.betaincinv(0.5 * (n - 1), 0.5, 2.0 * measure)
        return float(np.sqrt(max(1.0 - z, 0.0)))
    return -cap_threshold(n, 1.0 - measure)


def equidistribution_test(pts, n_caps: int = 64, seed: int = 0, measure: float = 0.125) -> float:
    """Largest deviation ``|count / N - measure|`` over random spherical caps.

    Boundary point sets are first pulled back to the unit sphere through
    ``psi^(-1)``.  Cap centers are uniform on the sphere (seeded Philox);
    all caps share the normalized measure ``measure``.
    """
    if isinstance(pts, BoundaryPointSet):
        U = pts.ellipsoid.pullback(pts.points)
    else:
        U = np.asarray(getattr(pts, "points", pts), dtype=float)
    N, n = U.shape
    if N < n_caps:
        raise ValueError(f"need at least n_caps={n_caps} points, got {N}")
    tau = cap_threshold(n, measure)
    centers = sample_uniform_sphere(n_caps, n, seed).points
    counts = (U @ centers.T >= tau).sum(axis=0)
    return float(np.abs(counts / N - measure).max())
