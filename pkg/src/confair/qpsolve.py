"""Dense primal-dual interior-point solver for convex quadratic programs.

Solves::

    minimize    1/2 x'Px + q'x
    subject to  Gx <= h
                Ax  = b

with Mehrotra's predictor-corrector scheme. ``G`` may be a scipy sparse
matrix; rows with few nonzeros (box constraints) are then folded into the
Newton matrix without densifying them.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

PSD_TOL = 1e-8
PSD_REPAIR_LIMIT = 1e-6
PSD_RIDGE = 1e-10
STALL_ITERATIONS = 15


class NotPSDError(ValueError):
    pass


@dataclass(eq=False)
class QuadraticProgram:
    P: np.ndarray
    q: np.ndarray
    G: object = None
    h: Optional[np.ndarray] = None
    A: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.q = np.asarray(self.q, dtype=float).ravel()
        n = self.q.size
        if self.P.shape != (n, n):
            raise ValueError(f"P has shape {self.P.shape}, expected {(n, n)}")
        if not np.allclose(self.P, self.P.T, rtol=0, atol=1e-10):
            raise ValueError("P must be symmetric")
        if self.G is None:
            self.G = np.zeros((0, n))
            self.h = np.zeros(0)
        elif sp.issparse(self.G):
            self.G = sp.csr_matrix(self.G, dtype=float)
        else:
            self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
        self.h = np.asarray(self.h, dtype=float).ravel()
        if self.A is None:
            self.A = np.zeros((0, n))
            self.b = np.zeros(0)
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float)).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).ravel()
        if self.G.shape[1] != n or self.G.shape[0] != self.h.size:
            raise ValueError(f"G {self.G.shape} and h {self.h.shape} do not match n={n}")
        if self.A.shape[0] != self.b.size:
            raise ValueError(f"A {self.A.shape} and b {self.b.shape} do not match")

    @property
    def n(self):
        return self.q.size

    @property
    def m(self):
        return self.h.size

    @property
    def p(self):
        return self.b.size

    def objective(self, x) -> float:
        return float(0.5 * x @ (self.P @ x) + self.q @ x)


@dataclass
class QpSettings:
    tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iter: int = 100


@dataclass(eq=False)
class QpSolution:
    x: np.ndarray
    ineq_multipliers: np.ndarray
    eq_multipliers: np.ndarray
    objective: float
    duality_gap: float
    iterations: int
    status: str
    slacks: np.ndarray = field(default=None, repr=False)
    gap_history: list = field(default_factory=list, repr=False)


@dataclass(frozen=True)
class KktResiduals:
    stationarity: float
    primal_feasibility: float
    dual_feasibility: float
    complementarity: float

    def max(self) -> float:
        return max(self.stationarity, self.primal_feasibility,
                   self.dual_feasibility, self.complementarity)


def kkt_residuals(qp: QuadraticProgram, sol: QpSolution) -> KktResiduals:
    """Infinity-norm KKT residuals of ``sol`` measured against ``qp``."""
    x = np.asarray(sol.x, float)
    z = np.asarray(sol.ineq_multipliers, float)
    y = np.asarray(sol.eq_multipliers, float)
    if x.size != qp.n or z.size != qp.m or y.size != qp.p:
        raise ValueError("solution dimensions do not match the problem")
    grad = qp.P @ x + qp.q + qp.G.T @ z + qp.A.T @ y
    viol = qp.G @ x - qp.h
    eq = qp.A @ x - qp.b
    return KktResiduals(
        stationarity=_inf(grad),
        primal_feasibility=max(_inf(np.maximum(viol, 0.0)), _inf(eq)),
        dual_feasibility=_inf(np.maximum(-z, 0.0)),
        complementarity=_inf(z * viol),
    )


def _inf(v) -> float:
    v = np.asarray(v)
    return float(np.max(np.abs(v))) if v.size else 0.0


def check_psd(P: np.ndarray) -> np.ndarray:
    """Return P (ridged if it is PSD only up to round-off) or raise NotPSDError."""
    n = P.shape[0]
    if n == 0:
        return P
    if n <= 500:
        lam = float(np.linalg.eigvalsh(P)[0])
        ok = lam >= -PSD_TOL
        repairable = lam >= -PSD_REPAIR_LIMIT
    else:
        # a Cholesky probe of P + tol*I succeeds iff min eigenvalue > -tol
        ok = _chol_ok(P, PSD_TOL)
        repairable = ok or _chol_ok(P, PSD_REPAIR_LIMIT)
        lam = None
    if ok:
        return P
    if repairable:
        warnings.warn("P is indefinite at round-off level; adding a ridge", stacklevel=3)
        return P + PSD_RIDGE * np.eye(n)
    raise NotPSDError(f"P is not positive semidefinite (min eigenvalue {lam})")


def _chol_ok(P, shift) -> bool:
    try:
        sla.cho_factor(P + shift * np.eye(P.shape[0]), check_finite=False)
        return True
    except np.linalg.LinAlgError:
        return False


REFINE_STEPS = 3


class _NewtonSystem:
    """Factorization of the reduced KKT matrix [[P + G'WG, A'], [A, 0]]."""

    def __init__(self, P, G, A, w, dense_rows):
        n = P.shape[0]
        H = P.copy()
        if sp.issparse(G):
            sparse_rows, dense_idx = dense_rows
            Gs = G[sparse_rows]
            M = (Gs.T @ sp.diags(w[sparse_rows]) @ Gs).tocoo()
            np.add.at(H, (M.row, M.col), M.data)
            if dense_idx.size:
                Gd = G[dense_idx].toarray()
                H += Gd.T @ (w[dense_idx, None] * Gd)
        elif G.shape[0]:
            H += G.T @ (w[:, None] * G)
        self.A = A
        self.H = H
        self.n = n
        self.lu = None
        self.shifted = False
        try:
            self.chol = sla.cho_factor(H, check_finite=False)
        except np.linalg.LinAlgError:
            self.chol = None
        if self.chol is None and A.shape[0]:
            # H + A'A is positive definite whenever the full KKT matrix is nonsingular;
            # the extra term is compensated on the right-hand side in solve()
            try:
                self.chol = sla.cho_factor(H + A.T @ A, check_finite=False)
                self.shifted = True
            except np.linalg.LinAlgError:
                self.chol = None
        if self.chol is None:
            # static regularization: duplicated points leave P + G'WG singular
            # along directions the barrier barely touches; the residuals stay exact
            scale = max(1.0, float(np.max(np.abs(np.diag(H)))))
            for delta in (1e-12, 1e-10, 1e-8):
                try:
                    self.chol = sla.cho_factor(H + delta * scale * np.eye(n), check_finite=False)
                    break
                except np.linalg.LinAlgError:
                    continue
        if self.chol is not None and A.shape[0]:
            self.HinvAt = sla.cho_solve(self.chol, A.T, check_finite=False)
            S = A @ self.HinvAt
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                self.schur = sla.lu_factor(S, check_finite=False)
            pivots = np.abs(np.diag(self.schur[0]))
            # dependent equality rows: fall back to a least-squares multiplier
            self.schur_pinv = None
            if pivots.min() <= 1e-13 * max(pivots.max(), 1.0):
                self.schur_pinv = np.linalg.pinv(S, rcond=1e-12, hermitian=True)
        if self.chol is None:
            p = A.shape[0]
            K = np.zeros((n + p, n + p))
            K[:n, :n] = H
            K[:n, n:] = A.T
            K[n:, :n] = A
            self.K = K
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                self.lu = sla.lu_factor(K, check_finite=False)

    def solve(self, r1, r2):
        """Solve H dx + A'dy = r1, A dx = r2."""
        dx, dy = self._solve_once(r1, r2)
        if self.chol is None:
            return dx, dy
        # iterative refinement against the exact matrix: late iterations make H
        # badly conditioned, and the regularized factor is only approximate
        scale = 1.0 + max(_inf(r1), _inf(r2))
        for _ in range(REFINE_STEPS):
            e1 = r1 - self.H @ dx - self.A.T @ dy
            e2 = r2 - self.A @ dx
            if max(_inf(e1), _inf(e2)) <= 1e-14 * scale:
                break
            cx, cy = self._solve_once(e1, e2)
            dx, dy = dx + cx, dy + cy
        return dx, dy

    def _solve_once(self, r1, r2):
        n = self.n
        if self.chol is None:
            sol = sla.lu_solve(self.lu, np.concatenate([r1, r2]), check_finite=False)
            if not np.all(np.isfinite(sol)):
                sol = np.linalg.lstsq(self.K, np.concatenate([r1, r2]), rcond=None)[0]
            return sol[:n], sol[n:]
        if self.shifted:
            r1 = r1 + self.A.T @ r2
        if self.A.shape[0] == 0:
            return sla.cho_solve(self.chol, r1, check_finite=False), np.zeros(0)
        u = sla.cho_solve(self.chol, r1, check_finite=False)
        if self.schur_pinv is not None:
            dy = self.schur_pinv @ (self.A @ u - r2)
        else:
            dy = sla.lu_solve(self.schur, self.A @ u - r2, check_finite=False)
        dx = u - self.HinvAt @ dy
        return dx, dy


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


def solve(qp: QuadraticProgram, settings: Optional[QpSettings] = None) -> QpSolution:
    """Solve ``qp``; see :class:`QpSolution` for the returned fields.

    Status is ``"optimal"`` when primal and dual residuals are below ``tol``
    and the gap s'z is below ``gap_tol`` (absolute, or relative to the
    objective magnitude), ``"infeasible"`` when the primal residual stops
    improving for 15 iterations, and ``"max_iter"`` otherwise.
    """
    settings = settings or QpSettings()
    P = check_psd(qp.P)
    q, G, h, A, b = qp.q, qp.G, qp.h, qp.A, qp.b
    n, m, p = qp.n, qp.m, qp.p
    if m == 0:
        return _solve_equality_only(qp, P)

    dense_rows = None
    if sp.issparse(G):
        nnz = np.diff(G.indptr)
        heavy = nnz > max(8, n // 4)
        dense_rows = (np.flatnonzero(~heavy), np.flatnonzero(heavy))

    # initial point: the W = I Newton system gives x, then s and z are shifted
    # into the positive orthant
    newton = _NewtonSystem(P, G, A, np.ones(m), dense_rows)
    x, y = newton.solve(-q + G.T @ h, b)
    s = h - G @ x
    z = -s.copy()
    for v in (s, z):
        shift = -float(v.min())
        if shift >= -1e-8 * max(np.linalg.norm(v), 1.0):
            v += 1.0 + shift

    h_scale = 1.0 + max(_inf(h), _inf(b))
    gap_history = []
    best_pres = np.inf
    stall = 0
    status = "max_iter"
    it = 0
    for it in range(settings.max_iter + 1):
        Px = P @ x
        r_d = Px + q + G.T @ z + A.T @ y
        r_p = A @ x - b
        r_g = G @ x + s - h
        gap = float(s @ z)
        gap_history.append(gap)
        pobj = 0.5 * float(x @ Px) + float(q @ x)
        pres = max(_inf(r_g), _inf(r_p))
        dres = _inf(r_d) / (1.0 + max(_inf(q), _inf(Px)))
        if (pres <= settings.tol and dres <= settings.tol
                and (gap <= settings.gap_tol or gap <= settings.gap_tol * abs(pobj))):
            status = "optimal"
            break
        if it == settings.max_iter:
            break
        if pres < 0.99 * best_pres:
            best_pres = pres
            stall = 0
        elif pres > settings.tol * h_scale:
            stall += 1
            if stall >= STALL_ITERATIONS:
                status = "infeasible"
                break
        if not (np.all(np.isfinite(x)) and np.isfinite(gap)):
            status = "infeasible"
            break

        w = z / s
        try:
            newton = _NewtonSystem(P, G, A, w, dense_rows)
        except (np.linalg.LinAlgError, ValueError):
            status = "infeasible"
            break

        def direction(r_c):
            # eliminate ds = -r_g - G dx and dz = W G dx + (z*r_g - r_c)/s
            t = (z * r_g - r_c) / s
            dx, dy = newton.solve(-r_d - G.T @ t, -r_p)
            dz = w * (G @ dx) + t
            ds = -r_g - G @ dx
            return dx, dy, dz, ds

        mu = gap / m
        # predictor
        dx, dy, dz, ds = direction(s * z)
        a_aff = min(1.0, _max_step(s, ds), _max_step(z, dz))
        mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        # corrector
        dx, dy, dz, ds = direction(s * z + ds * dz - sigma * mu)
        alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(z, dz)))
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds

    return QpSolution(
        x=x, ineq_multipliers=z, eq_multipliers=y, objective=qp.objective(x),
        duality_gap=float(s @ z), iterations=it, status=status, slacks=s,
        gap_history=gap_history,
    )


def _solve_equality_only(qp: QuadraticProgram, P) -> QpSolution:
    n, p = qp.n, qp.p
    K = np.zeros((n + p, n + p))
    K[:n, :n] = P
    K[:n, n:] = qp.A.T
    K[n:, :n] = qp.A
    rhs = np.concatenate([-qp.q, qp.b])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    x, y = sol[:n], sol[n:]
    status = "optimal"
    if _inf(qp.A @ x - qp.b) > 1e-8 * (1 + _inf(qp.b)):
        status = "infeasible"
    elif _inf(P @ x + qp.q + qp.A.T @ y) > 1e-8 * (1 + _inf(qp.q)):
        raise ValueError("quadratic program is unbounded below")
    return QpSolution(
        x=x, ineq_multipliers=np.zeros(0), eq_multipliers=y,
        objective=qp.objective(x), duality_gap=0.0, iterations=0, status=status,
        slacks=np.zeros(0), gap_history=[0.0],
    )
