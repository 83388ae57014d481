"""Replace each ellipsoidal constraint by tangent half-spaces at sampled boundary points."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse

from .errors import DimensionMismatchError, NotPositiveDefiniteError
from .geometry import BoundaryPointSet, EllipsoidConstraint
from .linalg import StackedRows, is_symmetric
from .nets import _philox

__all__ = [
    "QcqpProblem",
    "QpProblem",
    "RowBlock",
    "default_n_points",
    "tangent_constraints",
    "build_qp",
    "containment_check",
]

log = logging.getLogger(__name__)

MAX_DEFAULT_POINTS = 2**20


class QcqpProblem:
    """Minimize ``(x - a)^T A (x - a)`` subject to ``C x = c``, ellipsoids and an optional box.

    Parameters
    ----------
    A : (n, n) array
        Symmetric positive definite objective matrix.
    a : (n,) array
        Objective center.
    C, c : arrays, optional
        Equality system with ``p <= n`` rows of full rank.
    ellipsoids : list of EllipsoidConstraint
    l, u : (n,) arrays, optional
        Box bounds; both or neither.
    check : bool
        Verify positive definiteness of ``A`` (one Cholesky).  Generators
        that build ``A`` from a known spectrum pass ``False``.
    """

    def __init__(self, A, a, C=None, c=None, ellipsoids=(), l=None, u=None, *, check: bool = True):
        A = np.asarray(A, dtype=float)
        a = np.asarray(a, dtype=float).reshape(-1)
        n = a.shape[0]
        if A.shape != (n, n):
            raise DimensionMismatchError(f"A has shape {A.shape}, expected {(n, n)}")
        C = np.zeros((0, n)) if C is None else np.atleast_2d(np.asarray(C, dtype=float))
        if C.size == 0:
            C = np.zeros((0, n))
        c = np.zeros(0) if c is None else np.asarray(c, dtype=float).reshape(-1)
        if C.shape[1] != n or c.shape[0] != C.shape[0]:
            raise DimensionMismatchError("equality system does not match the problem dimension")
        if C.shape[0] > n:
            raise ValueError("more equality constraints than variables")
        if C.shape[0] and np.linalg.matrix_rank(C) < C.shape[0]:
            raise ValueError("equality matrix C must have full row rank")
        ellipsoids = list(ellipsoids)
        for e in ellipsoids:
            if e.n != n:
                raise DimensionMismatchError(f"ellipsoid of dimension {e.n} in a problem of dimension {n}")
        if (l is None) != (u is None):
            raise ValueError("box needs both l and u")
        if l is not None:
            l = np.asarray(l, dtype=float).reshape(-1)
            u = np.asarray(u, dtype=float).reshape(-1)
            if l.shape != (n,) or u.shape != (n,):
                raise DimensionMismatchError("box bounds must have length n")
            if np.any(l > u):
                raise ValueError("box requires l <= u")
        if not is_symmetric(A):
            raise NotPositiveDefiniteError("A is not symmetric")
        if check:
            try:
                linalg.cholesky(A, lower=True)
            except linalg.LinAlgError as exc:
                raise NotPositiveDefiniteError("A is not positive definite") from exc
        self.A, self.a, self.C, self.c = A, a, C, c
        self.ellipsoids = ellipsoids
        self.l, self.u = l, u

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def has_box(self) -> bool:
        return self.l is not None

    def objective(self, x) -> float:
        d = np.asarray(x, dtype=float) - self.a
        return float(d @ (self.A @ d))

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "a": self.a.tolist(),
            "C": self.C.tolist(),
            "c": self.c.tolist(),
            "ellipsoids": [e.to_dict() for e in self.ellipsoids],
            "l": None if self.l is None else self.l.tolist(),
            "u": None if self.u is None else self.u.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QcqpProblem":
        n = len(d["a"])
        C = d.get("C") or None
        c = d.get("c") or None
        return cls(
            d["A"],
            d["a"],
            np.zeros((0, n)) if C is None else C,
            np.zeros(0) if c is None else c,
            [EllipsoidConstraint.from_dict(e) for e in d.get("ellipsoids", [])],
            d.get("l"),
            d.get("u"),
        )

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_json(cls, path) -> "QcqpProblem":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class RowBlock:
    kind: str  # "ellipsoid", "box-upper", "box-lower" or "linear"
    index: int
    rows: slice


@dataclass
class QpProblem:
    """Minimize ``(x - a)^T A (x - a)`` subject to ``G x <= h`` and ``C x = c``."""

    A: np.ndarray
    a: np.ndarray
    G: StackedRows
    h: np.ndarray
    C: np.ndarray
    c: np.ndarray
    blocks: list[RowBlock] = field(default_factory=list)

    def __post_init__(self):
        n = self.a.shape[0]
        self.G = StackedRows.wrap(self.G, n=n)
        self.h = np.asarray(self.h, dtype=float).reshape(-1)
        self.C = np.zeros((0, n)) if self.C is None or np.size(self.C) == 0 else np.atleast_2d(np.asarray(self.C, dtype=float))
        self.c = np.zeros(0) if self.c is None else np.asarray(self.c, dtype=float).reshape(-1)
        if self.G.shape[1] != n or self.G.shape[0] != self.h.shape[0]:
            raise DimensionMismatchError("inequality system does not match the problem")
        if not np.all(np.isfinite(self.h)):
            raise ValueError("inequality right-hand side must be finite")
        if not self.blocks and self.G.shape[0]:
            self.blocks = [RowBlock("linear", 0, slice(0, self.G.shape[0]))]

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def n_ineq(self) -> int:
        return self.G.shape[0]

    def objective(self, x) -> float:
        d = np.asarray(x, dtype=float) - self.a
        return float(d @ (self.A @ d))


def default_n_points(n: int) -> int:
    """``max(1024, 2**m)`` with ``m`` the smallest integer such that ``2**m >= 10 n``."""
    m = (10 * n - 1).bit_length()
    N = max(1024, 2**m)
    if N > MAX_DEFAULT_POINTS:
        log.warning("default point count %d capped at %d", N, MAX_DEFAULT_POINTS)
        N = MAX_DEFAULT_POINTS
    return N


def tangent_constraints(pts: BoundaryPointSet) -> tuple[np.ndarray, np.ndarray]:
    """Rows ``B (x_j - b)`` and right-hand sides ``b_tilde + row_j . b`` for each boundary point.

    Row ``j`` encodes ``(x - b)^T B (x_j - b) <= b_tilde``, the tangent
    half-space of the ellipsoid at ``x_j``.  Rows are not normalized.
    """
    e = pts.ellipsoid
    rows = e.apply(pts.points - e.b)
    rhs = e.b_tilde + rows @ e.b
    return rows, rhs


def _box_rows(p: QcqpProblem):
    n = p.n
    eye = sparse.identity(n, format="csr")
    return eye, p.u.copy(), -eye, -p.l


def build_qp(p: QcqpProblem, pts_per_ellipsoid) -> QpProblem:
    """Assemble the linearized QP: tangent blocks in ellipsoid order, then ``x <= u`` and ``-x <= -l``."""
    pts_per_ellipsoid = list(pts_per_ellipsoid)
    if len(pts_per_ellipsoid) != len(p.ellipsoids):
        raise DimensionMismatchError(
            f"{len(pts_per_ellipsoid)} point sets for {len(p.ellipsoids)} ellipsoids"
        )
    blocks, rhs, meta = [], [], []
    row = 0
    for i, pts in enumerate(pts_per_ellipsoid):
        if isinstance(pts, tuple):
            Gi, hi = pts  # pre-assembled tangent block
        else:
            if pts.ellipsoid.n != p.n:
                raise DimensionMismatchError("point set dimension does not match the problem")
            if len(pts) == 0:
                raise ValueError(f"empty point set for ellipsoid {i}")
            Gi, hi = tangent_constraints(pts)
        if Gi.shape[0] == 0:
            raise ValueError(f"empty point set for ellipsoid {i}")
        if Gi.shape[1] != p.n:
            raise DimensionMismatchError("point set dimension does not match the problem")
        blocks.append(Gi)
        rhs.append(hi)
        meta.append(RowBlock("ellipsoid", i, slice(row, row + Gi.shape[0])))
        row += Gi.shape[0]
    if p.has_box:
        up, hu, lo, hl = _box_rows(p)
        blocks += [up, lo]
        rhs += [hu, hl]
        meta.append(RowBlock("box-upper", 0, slice(row, row + p.n)))
        meta.append(RowBlock("box-lower", 0, slice(row + p.n, row + 2 * p.n)))
    G = StackedRows(blocks, n=p.n)
    h = np.concatenate(rhs) if rhs else np.zeros(0)
    return QpProblem(p.A, p.a, G, h, p.C, p.c, meta)


def _uniform_ball(n_samples: int, n: int, rng: np.random.Generator) -> np.ndarray:
    Z = rng.standard_normal((n_samples, n))
    Z /= np.linalg.norm(Z, axis=1)[:, None]
    r = rng.random(n_samples) ** (1.0 / n)
    return Z * r[:, None]


def containment_check(p: QcqpProblem, qp: QpProblem, n_samples: int = 1000, seed: int = 0, rtol: float = 1e-9) -> bool:
    """Check ``S subset of T_N`` by sampling.

    Uniform points of each ellipsoid ``S_i`` (ball samples pushed through
    ``psi``) must satisfy every tangent row built from ``S_i``; uniform
    points of the box must satisfy the box rows.  Zero samples is vacuously
    true.
    """
    if n_samples <= 0:
        return True
    rng = _philox(seed, 7)
    for blk in qp.blocks:
        rows = np.arange(blk.rows.start, blk.rows.stop)
        Gb = qp.G.take(rows)
        hb = qp.h[rows]
        if blk.kind == "ellipsoid":
            e = p.ellipsoids[blk.index]
            W = _uniform_ball(n_samples, p.n, rng)
            X = np.sqrt(e.b_tilde) * e.apply_power(W, -0.5) + e.b
        elif blk.kind.startswith("box"):
            X = p.l + rng.random((n_samples, p.n)) * (p.u - p.l)
        else:
            continue
        lhs = X @ Gb.T
        tol = rtol * (np.abs(hb) + np.abs(Gb).sum(axis=1) * np.abs(X).max() + 1.0)
        if np.any(lhs > hb + tol):
            return False
    return True
