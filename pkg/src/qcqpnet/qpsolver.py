"""Operator-splitting (ADMM) solver for strongly convex QPs.

Solves ``min (x - a)^T A (x - a)`` subject to ``G x <= h`` and ``C x = c``.
Inequalities are split with a slack ``z = G x``; equalities stay inside the
linear-system step, which solves the ``(n + p)`` KKT system

    [ P + sigma I + rho G^T G   C^T ] [x ]   [ rhs ]
    [ C                         0   ] [mu] = [ c   ]

through a cached Cholesky factor of the upper-left block and of its Schur
complement.  Rows of ``G`` and ``C`` are scaled to unit Euclidean norm.
Termination follows the combined absolute/relative residual test of OSQP;
after convergence the active set is polished with one exact KKT solve.

Reductions are plain NumPy/BLAS calls in a fixed order, so a solve is
bitwise reproducible for a fixed BLAS thread count.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import linalg

from .errors import FactorizationError
from .linearizer import QpProblem

__all__ = ["SolverConfig", "SolveReport", "KktResiduals", "solve_qp", "kkt_residuals", "write_trace"]


@dataclass(frozen=True)
class SolverConfig:
    rho: float = 0.1
    sigma: float = 1e-6
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    eps_infeasible: float = 1e-5
    max_iter: int = 20000
    over_relaxation: float = 1.5
    adaptive_rho: bool = True
    adaptive_rho_interval: int = 50
    adaptive_rho_ratio: float = 10.0
    rho_min: float = 1e-6
    rho_max: float = 1e6
    check_interval: int = 5
    polish: bool = True
    # periodic polish attempts need a second n x n factor
    polish_interval: int = 25
    # periodic polish starts once both residuals are within this factor of tolerance
    polish_gap: float = 1e3
    polish_max_n: int = 4000
    # cache G^T G between rho updates when n is at most this
    cache_gram_max_n: int = 4000
    trace: bool = False

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not (self.eps_abs > 0 and self.eps_rel > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 1.0 <= self.over_relaxation <= 1.8:
            raise ValueError("over_relaxation must lie in [1, 1.8]")


@dataclass
class SolveReport:
    x: np.ndarray
    objective: float
    status: str  # "optimal", "max_iter" or "infeasible-detected"
    iterations: int
    primal_residual: float
    dual_residual: float
    wall_time: float
    y: np.ndarray = field(repr=False, default=None)
    mu: np.ndarray = field(repr=False, default=None)
    rho: float = 0.0
    factorizations: int = 0
    polished: bool = False
    trace: list | None = field(repr=False, default=None)


class KktResiduals(NamedTuple):
    stationarity: float
    primal_eq: float
    primal_ineq: float
    complementarity: float


def kkt_residuals(qp: QpProblem, x, multipliers) -> KktResiduals:
    """Infinity norms of the KKT residuals for ``f(x) = (x - a)^T A (x - a)``.

    ``multipliers`` is ``(y, mu)``: ``y >= 0`` for ``G x <= h`` and ``mu`` for
    ``C x = c``.  Stationarity is ``2 A (x - a) + G^T y + C^T mu``.
    """
    y, mu = multipliers
    x = np.asarray(x, dtype=float)
    y = np.zeros(qp.n_ineq) if y is None else np.asarray(y, dtype=float)
    mu = np.zeros(qp.C.shape[0]) if mu is None else np.asarray(mu, dtype=float)
    grad = 2.0 * (qp.A @ (x - qp.a)) + qp.G.rmatvec(y) + qp.C.T @ mu
    slack = qp.G @ x - qp.h
    eq = qp.C @ x - qp.c
    return KktResiduals(
        stationarity=_inf(grad),
        primal_eq=_inf(eq),
        primal_ineq=_inf(np.maximum(slack, 0.0)),
        complementarity=_inf(y * slack),
    )


def _inf(v) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


class _ScaledProblem:
    """Row-normalized data shared by the iteration and the residual checks."""

    def __init__(self, qp: QpProblem):
        self.qp = qp
        self.n = qp.n
        norms = qp.G.row_norms()
        if np.any(norms == 0):
            raise ValueError("inequality matrix has a zero row")
        self.d = 1.0 / norms
        self.h = qp.h * self.d
        cn = np.linalg.norm(qp.C, axis=1) if qp.C.shape[0] else np.zeros(0)
        if np.any(cn == 0):
            raise FactorizationError("equality matrix has a zero row")
        self.e = 1.0 / cn if cn.size else cn
        self.C = qp.C * self.e[:, None] if cn.size else qp.C
        self.c = qp.c * self.e
        # 0.5 x^T P x + q^T x with P = 2A
        self.q = -2.0 * (qp.A @ qp.a)

    def G(self, x):
        return self.d * (self.qp.G @ x)

    def GT(self, y):
        return self.qp.G.rmatvec(self.d * y)

    def P(self, x):
        return 2.0 * (self.qp.A @ x)


class _KktFactor:
    """Cholesky of ``P + sigma I + rho G^T G`` plus the Schur complement for ``C``."""

    def __init__(self, sp: _ScaledProblem, sigma: float, cache_gram: bool):
        self.sp = sp
        self.sigma = sigma
        self.cache_gram = cache_gram
        self._gram = None
        self.count = 0

    def factor(self, rho: float) -> None:
        sp = self.sp
        n = sp.n
        self.L = None  # release the previous factor before allocating
        if self._gram is not None:
            H = self._gram * rho
        else:
            # only the lower triangle is referenced below
            H = sp.qp.G.gram(sp.d**2, lower_only=True) if sp.qp.n_ineq else np.zeros((n, n), order="F")
            if self.cache_gram:
                self._gram = H.copy(order="F")
            H *= rho
        H += 2.0 * sp.qp.A.T
        H[np.diag_indices(n)] += self.sigma
        try:
            self.L = linalg.cho_factor(H, lower=True, overwrite_a=True, check_finite=False)
        except linalg.LinAlgError as exc:
            raise FactorizationError("KKT block is not positive definite") from exc
        del H
        p = sp.C.shape[0]
        if p:
            self.W = linalg.cho_solve(self.L, sp.C.T, check_finite=False)
            S = sp.C @ self.W
            try:
                self.S = linalg.cho_factor(S, lower=True, check_finite=False)
            except linalg.LinAlgError as exc:
                raise FactorizationError("equality constraints are rank deficient") from exc
            # a dependent row leaves a pivot near sqrt(machine eps); reject cond(S) > 1e12
            if np.min(np.abs(np.diag(self.S[0]))) < 1e-6 * np.sqrt(np.abs(np.diag(S)).max()):
                raise FactorizationError("equality constraints are rank deficient")
        self.count += 1

    def solve(self, rhs: np.ndarray):
        u = linalg.cho_solve(self.L, rhs, check_finite=False)
        sp = self.sp
        if sp.C.shape[0] == 0:
            return u, np.zeros(0)
        mu = linalg.cho_solve(self.S, sp.C @ u - sp.c, check_finite=False)
        return u - self.W @ mu, mu


def _factor_P(sp: _ScaledProblem, cache: dict):
    if "P" not in cache:
        try:
            cache["P"] = linalg.cho_factor((2.0 * sp.qp.A).T, lower=True, overwrite_a=True, check_finite=False)
        except linalg.LinAlgError:
            cache["P"] = None
    return cache["P"]


def _polish(sp: _ScaledProblem, y, cache: dict, max_steps: int | None = None, tol: float = 1e-12):
    """Exact solve by a dual active-set method seeded with the ADMM support.

    Starts from the equality-constrained minimizer and repeatedly adds the
    most violated row (rows with positive ADMM multiplier are tried first),
    taking partial steps that drop rows whose multiplier would turn
    negative.  Multipliers stay non-negative throughout, so the first
    primal-feasible iterate is optimal.  Returns ``(x, y, mu)`` in scaled
    units or ``None`` on failure or when the step budget runs out.
    """
    LP = _factor_P(sp, cache)
    if LP is None:
        return None
    n, M = sp.n, sp.qp.n_ineq
    p = sp.C.shape[0]
    if max_steps is None:
        max_steps = 4 * n + 100
    cand = np.nonzero(y > 0)[0]
    cand = cand[np.argsort(-y[cand], kind="stable")]

    rows = [sp.C[i] for i in range(p)]
    pinv = [linalg.cho_solve(LP, r, check_finite=False) for r in rows]
    work: list[int] = []
    lam = np.zeros(0)
    x = -linalg.cho_solve(LP, sp.q, check_finite=False)
    mu = np.zeros(p)
    if p:
        Nm = np.array(rows)
        PN = np.array(pinv).T
        mu = -linalg.solve(Nm @ PN, sp.c + Nm @ (-x), assume_a="sym")
        x = x - PN @ mu

    def row_of(i):
        return sp.qp.G.take(np.array([i]))[0] * sp.d[i]

    hscale = max(1.0, _inf(sp.h))
    for _ in range(max_steps):
        viol = sp.G(x) - sp.h if M else np.zeros(0)
        j = -1
        if cand.size:
            k = int(np.argmax(viol[cand]))
            if viol[cand[k]] > tol * hscale:
                j = int(cand[k])
        if j < 0 and M:
            k = int(np.argmax(viol))
            if viol[k] > tol * hscale:
                j = k
        if j < 0:
            y_out = np.zeros(M)
            y_out[work] = lam
            return x, y_out, mu
        nj = row_of(j)
        pj = linalg.cho_solve(LP, nj, check_finite=False)
        t_acc = 0.0
        while True:
            k_all = len(rows)
            if k_all:
                Nm = np.array(rows)
                PN = np.array(pinv).T
                r = linalg.lstsq(Nm @ PN, Nm @ pj, check_finite=False)[0]
                z = -(pj - PN @ r)
            else:
                r = np.zeros(0)
                z = -pj
            slope = -(nj @ z)
            s_j = nj @ x - sp.h[j]
            t2 = s_j / slope if slope > 1e-14 * (nj @ pj) else np.inf
            r_ineq = r[p:]
            pos = np.nonzero(r_ineq > 1e-14)[0]
            t1, kb = np.inf, -1
            if pos.size:
                ratios = lam[pos] / r_ineq[pos]
                kb = int(pos[np.argmin(ratios)])
                t1 = float(ratios.min())
            if not np.isfinite(t1) and not np.isfinite(t2):
                return None  # the rows in play admit no feasible point
            t = min(t1, t2)
            x = x + t * z
            mu = mu - t * r[:p]
            lam = lam - t * r_ineq
            t_acc += t
            if t2 <= t1:
                work.append(j)
                rows.append(nj)
                pinv.append(pj)
                lam = np.append(np.maximum(lam, 0.0), t_acc)
                break
            # drop the blocking row and keep pushing on row j
            del work[kb], rows[p + kb], pinv[p + kb]
            lam = np.maximum(np.delete(lam, kb), 0.0)
    return None


def _residuals(sp: _ScaledProblem, x, Gx, z, y, mu, Px):
    """Unscaled primal/dual residuals and their tolerances scales."""
    d = sp.d
    GTy = sp.GT(y)
    CTmu = sp.C.T @ mu if mu.size else np.zeros(sp.n)
    prim_ineq = (Gx - z) / d if Gx.size else np.zeros(0)
    prim_eq = (sp.C @ x - sp.c) / sp.e if mu.size else np.zeros(0)
    prim = max(_inf(prim_ineq), _inf(prim_eq))
    dual = _inf(Px + sp.q + GTy + CTmu)
    prim_scale = max(_inf(Gx / d) if Gx.size else 0.0, _inf(z / d) if z.size else 0.0, _inf(sp.qp.c))
    dual_scale = max(_inf(Px), _inf(sp.q), _inf(GTy), _inf(CTmu))
    return prim, dual, prim_scale, dual_scale


def solve_qp(qp: QpProblem, cfg: SolverConfig | None = None) -> SolveReport:
    """Solve a strongly convex QP with ADMM.

    Returns a :class:`SolveReport`; on ``status == "max_iter"`` it carries the
    last iterate.  Multipliers in the report are for the unscaled problem and
    the objective ``(x - a)^T A (x - a)``.

    Raises
    ------
    FactorizationError
        If the KKT system cannot be factorized (e.g. rank-deficient ``C``).
    """
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    sp = _ScaledProblem(qp)
    n, M = sp.n, qp.n_ineq
    alpha, sigma = cfg.over_relaxation, cfg.sigma
    rho = float(np.clip(cfg.rho, cfg.rho_min, cfg.rho_max))

    kkt = _KktFactor(sp, sigma, cache_gram=n <= cfg.cache_gram_max_n)
    kkt.factor(rho)
    last_factor = 0

    x = np.zeros(n)
    z = np.zeros(M)
    y = np.zeros(M)
    mu = np.zeros(sp.C.shape[0])
    Gx = np.zeros(M)
    trace = [] if cfg.trace else None
    status = "max_iter"
    polished = False
    polish_cache: dict = {}
    prim = dual = np.inf
    it = 0

    for it in range(1, cfg.max_iter + 1):
        x_prev, y_prev, mu_prev = x, y, mu
        rhs = sigma * x - sp.q
        if M:
            rhs = rhs + sp.GT(rho * z - y)
        x_tilde, mu = kkt.solve(rhs)
        z_tilde = sp.G(x_tilde) if M else z
        x = alpha * x_tilde + (1.0 - alpha) * x_prev
        Gx = alpha * z_tilde + (1.0 - alpha) * Gx
        z_hat = alpha * z_tilde + (1.0 - alpha) * z
        z_new = np.minimum(z_hat + y / rho, sp.h)
        y = y + rho * (z_hat - z_new)
        dz = z_hat - z  # change of v = z + y / rho
        z = z_new

        if trace is not None:
            merit = np.sqrt(sigma * np.dot(x - x_prev, x - x_prev) + rho * np.dot(dz, dz))
            trace.append({"iteration": it, "rho": rho, "merit": float(merit)})

        if it % cfg.check_interval and it != cfg.max_iter:
            continue

        Px = sp.P(x)
        prim, dual, prim_scale, dual_scale = _residuals(sp, x, Gx, z, y, mu, Px)
        eps_prim = cfg.eps_abs + cfg.eps_rel * prim_scale
        eps_dual = cfg.eps_abs + cfg.eps_rel * dual_scale
        if trace is not None:
            trace[-1].update(primal_residual=prim, dual_residual=dual, objective=qp.objective(x))

        if prim <= eps_prim and dual <= eps_dual:
            status = "optimal"
            break

        if M and _primal_infeasible(sp, y - y_prev, mu - mu_prev, cfg.eps_infeasible):
            status = "infeasible-detected"
            break

        if (
            cfg.polish
            and n <= cfg.polish_max_n
            and it % cfg.polish_interval == 0
            and prim <= cfg.polish_gap * eps_prim
            and dual <= cfg.polish_gap * eps_dual
        ):
            res = _polish(sp, y, polish_cache)
            if res is not None and _accept(sp, res, cfg):
                x, y, mu = res
                Gx = sp.G(x)
                z = np.minimum(Gx, sp.h)
                status, polished = "optimal", True
                break

        if cfg.adaptive_rho and it - last_factor >= cfg.adaptive_rho_interval and M:
            ratio = (prim / max(prim_scale, 1e-30)) / max(dual / max(dual_scale, 1e-30), 1e-30)
            new_rho = rho
            if ratio > cfg.adaptive_rho_ratio:
                new_rho = rho * 2.0
            elif ratio < 1.0 / cfg.adaptive_rho_ratio:
                new_rho = rho / 2.0
            new_rho = float(np.clip(new_rho, cfg.rho_min, cfg.rho_max))
            if new_rho != rho:
                rho = new_rho
                kkt.factor(rho)
                last_factor = it

    if cfg.polish and status == "optimal" and not polished:
        kkt.L = kkt.W = None  # free the ADMM factor before factoring P
        res = _polish(sp, y, polish_cache)
        if res is not None and _accept(sp, res, cfg, baseline=(prim, dual)):
            x, y, mu = res
            Gx = sp.G(x) if M else Gx
            z = np.minimum(Gx, sp.h)
            polished = True

    Px = sp.P(x)
    prim, dual, _, _ = _residuals(sp, x, Gx if not polished else sp.G(x), z, y, mu, Px)
    if polished:
        prim = max(prim, _inf(np.maximum(sp.G(x) - sp.h, 0.0) / sp.d) if M else 0.0)
    return SolveReport(
        x=x,
        objective=qp.objective(x),
        status=status,
        iterations=it,
        primal_residual=prim,
        dual_residual=dual,
        wall_time=time.perf_counter() - t0,
        y=y * sp.d,
        mu=mu * sp.e if mu.size else mu,
        rho=rho,
        factorizations=kkt.count,
        polished=polished,
        trace=trace,
    )


def _accept(sp: _ScaledProblem, res, cfg: SolverConfig, baseline=None) -> bool:
    x, y, mu = res
    Px = sp.P(x)
    Gx = sp.G(x) if sp.qp.n_ineq else np.zeros(0)
    z = np.minimum(Gx, sp.h)
    prim, dual, ps, ds = _residuals(sp, x, Gx, z, y, mu, Px)
    viol = _inf(np.maximum(Gx - sp.h, 0.0) / sp.d) if Gx.size else 0.0
    prim = max(prim, viol)
    if baseline is not None:
        return prim <= max(baseline[0], cfg.eps_abs) and dual <= max(baseline[1], cfg.eps_abs)
    return prim <= cfg.eps_abs + cfg.eps_rel * ps and dual <= cfg.eps_abs + cfg.eps_rel * ds


def _primal_infeasible(sp: _ScaledProblem, dy, dmu, eps) -> bool:
    norm = max(_inf(dy), _inf(dmu))
    if norm <= 1e-12:
        return False
    # rows are one-sided (no lower bound), so a certificate needs dy >= 0
    if dy.size and dy.min() < -eps * norm:
        return False
    lhs = sp.GT(dy) + (sp.C.T @ dmu if dmu.size else 0.0)
    support = sp.h @ np.maximum(dy, 0.0) + (sp.c @ dmu if dmu.size else 0.0)
    return _inf(lhs) <= eps * norm and support < -eps * norm


def write_trace(report: SolveReport, path) -> None:
    """Per-iteration CSV: iteration, primal residual, dual residual, objective (blank when not checked)."""
    if report.trace is None:
        raise ValueError("solve was run without cfg.trace")
    cols = ["iteration", "rho", "merit", "primal_residual", "dual_residual", "objective"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        for row in report.trace:
            writer.writerow({k: row.get(k, "") for k in cols})
