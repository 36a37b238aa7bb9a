"""Convex QCQP solver used by every precoding/matching subproblem.

Problem form::

    minimize    sum_c  x_c^H P x_c - 2 Re(q_c^H x_c)
    subject to  sum_c  x_c^H A_j x_c <= c_j      j = 1..m
                x >= 0                            (optional, real problems)

``x`` is an n-vector, or an n x r matrix whose r columns share ``P`` and the
constraint matrices (a Kronecker-structured problem, e.g. all user precoders
at once).  Constraint matrices may be given as dense n x n arrays or as 1-D
arrays holding a diagonal.

The method is dual ascent: the Lagrangian minimizer has the closed form
``x(lam) = (P + sum lam_j A_j)^-1 q`` (a non-negative least-squares solve
when ``x >= 0`` is imposed) and the concave dual is maximized over
``lam >= 0`` by a projected Newton method with an Armijo search along the
projection arc.  Single-constraint problems that stall fall back to
bisection on the multiplier.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import nnls

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 5000
_RIDGE = 1e-13
_STALL_ITERS = 50
_NEG_INF = -np.inf


class QcqpStatus(enum.Enum):
    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    INFEASIBLE = "Infeasible"
    INDEFINITE_OBJECTIVE = "IndefiniteObjective"


@dataclass
class QcqpProblem:
    P: np.ndarray
    q: np.ndarray
    constraints: list = field(default_factory=list)  # [(A_j, c_j), ...]
    real: bool = False
    nonneg: bool = False

    def __post_init__(self):
        self.P = np.asarray(self.P)
        self.q = np.asarray(self.q)
        n = self.P.shape[0]
        if self.P.shape != (n, n) or self.q.shape[0] != n:
            raise ValueError("dimension mismatch between P and q")
        if self.nonneg and (not self.real or self.q.ndim != 1):
            raise ValueError("non-negativity is supported for real vector problems only")
        for A, _ in self.constraints:
            if np.shape(A) not in ((n,), (n, n)):
                raise ValueError(f"constraint matrix of shape {np.shape(A)} does not match n={n}")

    @property
    def dim(self) -> int:
        return self.P.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x)
        return float(np.real(np.vdot(x, self.P @ x)) - 2.0 * np.real(np.vdot(self.q, x)))

    def constraint_values(self, x) -> np.ndarray:
        return np.array([_quad(A, x) for A, _ in self.constraints])

    def bounds(self) -> np.ndarray:
        return np.array([float(c) for _, c in self.constraints])


@dataclass
class QcqpSolution:
    x: np.ndarray
    objective_value: float
    dual_multipliers: np.ndarray
    status: QcqpStatus
    kkt_residual: float
    iterations: int = 0
    bound_multipliers: np.ndarray | None = None


def _quad(A, x) -> float:
    """sum over columns of x_c^H A x_c."""
    if np.ndim(A) == 1:
        Ax = A[:, None] * x if x.ndim == 2 else A * x
    else:
        Ax = A @ x
    return float(np.real(np.vdot(x, Ax)))


def _apply(A, x):
    if np.ndim(A) == 1:
        return A[:, None] * x if x.ndim == 2 else A * x
    return A @ x


def _max_eig(A) -> float:
    if np.ndim(A) == 1:
        return float(np.max(np.abs(A))) if A.size else 0.0
    return float(np.max(np.abs(np.linalg.eigvalsh(A))))


def psd_floor(M, return_clamp: bool = False):
    """Project a Hermitian matrix onto the PSD cone by zeroing negative eigenvalues.

    PSD input is returned unchanged.  The Frobenius size of the removed
    negative spectrum is logged (and returned with ``return_clamp``).
    """
    M = np.asarray(M)
    Mh = 0.5 * (M + M.conj().T)
    w, V = np.linalg.eigh(Mh)
    if w.min() >= 0:
        return (M, 0.0) if return_clamp else M
    clamp = float(np.sqrt(np.sum(w[w < 0] ** 2)))
    log.debug("psd_floor clamped negative spectrum of size %.3e", clamp)
    out = (V * np.maximum(w, 0.0)) @ V.conj().T
    if np.isrealobj(M):
        out = out.real
    out = 0.5 * (out + out.conj().T)
    return (out, clamp) if return_clamp else out


class _Normalized:
    """Problem rescaled so that constraint bounds are 1 and data is O(1)."""

    def __init__(self, prob: QcqpProblem):
        cs = prob.bounds()
        self.m = len(cs)
        self.c = cs
        mats = [A / c for (A, _), c in zip(prob.constraints, cs)]
        amax = max((_max_eig(A) for A in mats), default=0.0)
        self.sx = 1.0 / np.sqrt(amax) if amax > 0 else 1.0
        P = prob.P * self.sx**2
        q = prob.q * self.sx
        pnorm = _max_eig(P) if P.size else 0.0
        self.so = max(pnorm, float(np.linalg.norm(q)), 1e-300)
        self.P = P / self.so
        self.q = q / self.so
        self.A = [A * self.sx**2 for A in mats]
        self.real = prob.real
        self.nonneg = prob.nonneg
        self.n = prob.dim
        self.all_diag = all(np.ndim(A) == 1 for A in self.A)
        self.diag_stack = np.stack(self.A, axis=1) if (self.all_diag and self.m) else None

    def to_original(self, y, lam, mu):
        x = y * self.sx
        lam_orig = lam * self.so / self.c if self.m else lam
        mu_orig = None if mu is None else mu * self.so / self.sx
        return x, lam_orig, mu_orig

    def to_scaled_duals(self, lam):
        return np.asarray(lam, dtype=float) * self.c / self.so


class _Dual:
    """Dual function evaluations for a normalized problem.

    Only the constraint multipliers are dual variables.  For problems with
    ``x >= 0`` the Lagrangian minimizer is a non-negative least-squares
    solution, computed exactly for each multiplier vector, and the Hessian
    is taken on its free (strictly positive) coordinates.
    """

    def __init__(self, nz: _Normalized):
        self.nz = nz
        self.ridge = _RIDGE * max(1.0, _max_eig(nz.P) if nz.P.size else 1.0)
        self.m = nz.m
        self.last_free = None

    def matrix(self, lam):
        M = self.nz.P.astype(complex if not self.nz.real else float, copy=True)
        idx = np.diag_indices_from(M)
        if self.nz.diag_stack is not None:
            M[idx] += self.nz.diag_stack @ lam + self.ridge
            return M
        for l, A in zip(lam, self.nz.A):
            if l != 0.0:
                if np.ndim(A) == 1:
                    M[idx] += l * A
                else:
                    M += l * A
        M[idx] += self.ridge
        return M

    def _minimizer(self, M):
        try:
            cf = sla.cho_factor(M, lower=False, check_finite=False)
        except np.linalg.LinAlgError:
            return None
        q = self.nz.q
        if not self.nz.nonneg:
            return sla.cho_solve(cf, q, check_finite=False), cf, None
        y = _nonneg_quadratic(M, q, self.last_free)
        if y is None:
            R = np.triu(cf[0])
            d = sla.solve_triangular(R, q, trans="T", check_finite=False)
            y, _ = nnls(R, d, maxiter=50 * max(len(q), 1))
        free = y > 0
        self.last_free = free
        sub = None
        if np.any(free) and not np.all(free):
            sub = sla.cho_factor(M[np.ix_(free, free)], lower=False, check_finite=False)
            y = np.zeros_like(y)
            y[free] = sla.cho_solve(sub, q[free], check_finite=False)
            y = np.maximum(y, 0.0)
        return y, cf, (free, sub)

    def evaluate(self, lam, need_hessian=False):
        M = self.matrix(lam)
        out = self._minimizer(M)
        if out is None:
            return None
        y, cf, active_info = out
        q = self.nz.q
        g = -float(np.real(np.vdot(q, y))) - float(np.sum(lam))
        # Z[:, j] = vec(A_j y)
        if self.nz.diag_stack is not None and y.ndim == 1:
            Z = self.nz.diag_stack * y[:, None]
        else:
            Z = np.stack([_apply(A, y).reshape(-1) for A in self.nz.A], axis=1) if self.m else None
        grad = np.real(y.reshape(-1).conj() @ Z) - 1.0 if self.m else np.zeros(0)
        ev = {"g": g, "grad": grad, "y": y, "M": M, "free": None if active_info is None else active_info[0]}
        if need_hessian and self.m:
            if active_info is None:
                shape = y.shape
                cols = Z.reshape(shape + (self.m,)) if y.ndim == 1 else Z.reshape(shape[0], shape[1] * self.m)
                V = sla.cho_solve(cf, cols, check_finite=False).reshape(Z.shape)
                ev["H"] = -2.0 * np.real(Z.conj().T @ V)
            else:
                free, sub = active_info
                if not np.any(free):
                    ev["H"] = np.zeros((self.m, self.m))
                else:
                    fac = cf if sub is None else sub
                    ZF = Z[free]
                    ev["H"] = -2.0 * (ZF.T @ sla.cho_solve(fac, ZF, check_finite=False))
        return ev

    def bound_multipliers(self, ev):
        """2 (M y - q) on the coordinates held at zero (non-negative problems)."""
        if not self.nz.nonneg:
            return None
        r = 2.0 * (ev["M"] @ ev["y"] - self.nz.q)
        return np.where(ev["y"] > 0, 0.0, r)

    def kkt(self, lam, ev) -> float:
        y = ev["y"]
        q = self.nz.q
        r = ev["M"] @ y - q
        scale = max(1.0, float(np.linalg.norm(q)))
        if self.nz.nonneg:
            at_zero = y <= 0
            stat = float(np.linalg.norm(np.where(at_zero, np.minimum(r, 0.0), r))) / scale
        else:
            stat = float(np.linalg.norm(r)) / scale
        viol = ev["grad"]
        res = [stat]
        if self.m:
            res.append(float(np.max(np.maximum(viol, 0.0))))
            res.append(float(np.max(np.abs(lam * viol))))
        return max(res)


def _nonneg_quadratic(M, q, free0=None, max_pivots=None):
    """min y^T M y - 2 q^T y over y >= 0 (M positive definite) by block pivoting.

    Starts from the guessed free set ``free0`` and swaps every
    complementarity violator at once; returns None if the pivoting does not
    settle, so the caller can fall back to a slower exact method.
    """
    n = len(q)
    free = (q > 0) if free0 is None else free0.copy()
    tol = 1e-13 * max(1.0, float(np.max(np.abs(q))))
    best_bad, stuck = n + 1, 0
    for _ in range(max_pivots or 4 * n + 10):
        y = np.zeros(n)
        if np.any(free):
            MF = M[np.ix_(free, free)]
            try:
                y[free] = sla.cho_solve(sla.cho_factor(MF, check_finite=False), q[free], check_finite=False)
            except np.linalg.LinAlgError:
                return None
        r = M @ y - q
        neg = free & (y < 0)
        grow = ~free & (r < -tol)
        bad = int(np.count_nonzero(neg) + np.count_nonzero(grow))
        if bad == 0:
            return y
        if bad < best_bad:
            best_bad, stuck = bad, 0
        else:
            stuck += 1
            if stuck > 5:
                return None
        free = (free & ~neg) | grow
    return None


def _uniform_start(dual: _Dual):
    """Common multiplier level at which the Lagrangian minimizer turns feasible."""

    def worst(level):
        ev = dual.evaluate(np.full(dual.m, level))
        return np.inf if ev is None else float(np.max(ev["grad"]))

    lo, hi = 0.0, 1.0
    if worst(hi) > 0:
        while worst(hi) > 0 and hi < 1e15:
            lo, hi = hi, hi * 10.0
    else:
        while worst(hi / 10.0) <= 0 and hi > 1e-15:
            hi /= 10.0
        lo = hi / 10.0
    for _ in range(8):
        mid = np.sqrt(lo * hi) if lo > 0 else hi / 2.0
        if worst(mid) > 0:
            lo = mid
        else:
            hi = mid
    return np.full(dual.m, hi)


def _projected_newton(dual: _Dual, z0, tol, max_iter, cold=True):
    z = np.maximum(np.asarray(z0, dtype=float), 0.0)
    ev = dual.evaluate(z, need_hessian=True)
    if dual.m and (ev is None or (cold and np.max(ev["grad"]) > 0)):
        alt = _uniform_start(dual)
        ev_alt = dual.evaluate(alt, need_hessian=True)
        if ev_alt is not None and (ev is None or ev_alt["g"] > ev["g"]):
            z, ev = alt, ev_alt
    if ev is None:
        raise np.linalg.LinAlgError("dual matrix not positive definite at the starting point")
    it = 0
    best_kkt, best_it = np.inf, 0
    for it in range(1, max_iter + 1):
        kkt = dual.kkt(z, ev)
        if kkt <= tol:
            return z, ev, kkt, it - 1, True
        if kkt < 0.5 * best_kkt:
            best_kkt, best_it = kkt, it
        elif it - best_it > _STALL_ITERS:
            return z, ev, kkt, it, False
        grad, H = ev["grad"], ev["H"]
        eps_act = min(1e-3, float(np.linalg.norm(z - np.maximum(z + grad, 0.0))))
        bound = (z <= eps_act) & (grad < 0)
        free = ~bound
        d = np.zeros_like(z)
        d[bound] = grad[bound]
        if np.any(free):
            Hf = H[np.ix_(free, free)]
            shift = 1e-14 * max(1.0, float(np.max(np.abs(np.diag(Hf)))))
            try:
                d[free] = -np.linalg.solve(Hf - shift * np.eye(Hf.shape[0]), grad[free])
            except np.linalg.LinAlgError:
                d[free] = grad[free]
            if float(grad[free] @ d[free]) <= 0:
                d[free] = grad[free]
        step, accepted = 1.0, False
        for _ls in range(60):
            zn = np.maximum(z + step * d, 0.0)
            evn = dual.evaluate(zn, need_hessian=False)
            if evn is not None and evn["g"] >= ev["g"] + 1e-4 * float(grad @ (zn - z)) - 1e-15 * abs(ev["g"]):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            return z, ev, kkt, it, False
        log.debug("iter %d step %.3g backtracks %d kkt %.3e", it, step, _ls, kkt)
        z = zn
        ev = dual.evaluate(z, need_hessian=True)
    return z, ev, dual.kkt(z, ev), max_iter, False


def _bisection_single(dual: _Dual, tol, max_iter):
    """Root of y(lam)^H A y(lam) = 1 for a lone constraint."""

    def viol(l):
        ev = dual.evaluate(np.array([l]), need_hessian=True)
        return (np.inf, None) if ev is None else (ev["grad"][0], ev)

    g0, ev0 = viol(0.0)
    if g0 <= 0:
        return np.array([0.0]), ev0
    lo, hi = 0.0, 1.0
    while viol(hi)[0] > 0:
        lo, hi = hi, hi * 2.0
        if hi > 1e30:
            break
    ev = ev0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        gm, ev = viol(mid)
        if gm > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * max(1.0, hi) or abs(gm) <= 0.1 * tol:
            break
    ev = viol(hi)[1]
    return np.array([hi]), ev


def solve(
    problem: QcqpProblem,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    dual_start=None,
) -> QcqpSolution:
    """Solve a convex QCQP; see the module docstring for the problem form.

    ``dual_start`` optionally warm-starts the constraint multipliers (in the
    caller's units, as returned in ``dual_multipliers``).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = problem.dim
    m = len(problem.constraints)
    zero_x = np.zeros_like(problem.q, dtype=float if problem.real else complex)
    bounds = problem.bounds()
    if np.any(bounds < 0):
        return QcqpSolution(zero_x, 0.0, np.zeros(m), QcqpStatus.INFEASIBLE, np.inf)
    if np.any(bounds == 0):
        raise ValueError("constraint bounds must be strictly positive")

    Ph = 0.5 * (problem.P + problem.P.conj().T)
    if n:
        eig = np.linalg.eigvalsh(Ph)
        if eig.min() < -1e-8 * max(np.max(np.abs(eig)), 1e-300):
            return QcqpSolution(zero_x, 0.0, np.zeros(m), QcqpStatus.INDEFINITE_OBJECTIVE, np.inf)
    if not np.any(problem.q):
        return QcqpSolution(zero_x, 0.0, np.zeros(m), QcqpStatus.OPTIMAL, 0.0)

    if m == 0 and not problem.nonneg:
        x, *_ = np.linalg.lstsq(Ph, problem.q, rcond=None)
        x = np.real(x) if problem.real else x
        res = float(np.linalg.norm(Ph @ x - problem.q)) / max(1.0, float(np.linalg.norm(problem.q)))
        status = QcqpStatus.OPTIMAL if res <= tol else QcqpStatus.MAX_ITER  # unbounded below otherwise
        return QcqpSolution(x, problem.objective(x), np.zeros(0), status, res)

    nz = _Normalized(QcqpProblem(Ph, problem.q, problem.constraints, problem.real, problem.nonneg))
    dual = _Dual(nz)
    z0 = np.zeros(m)
    if dual_start is not None and m:
        z0 = np.maximum(nz.to_scaled_duals(dual_start), 0.0)
    try:
        z, ev, kkt, iters, ok = _projected_newton(dual, z0, tol, max_iter, cold=dual_start is None)
    except np.linalg.LinAlgError:
        # unconstrained directions with a singular objective: unbounded below
        return QcqpSolution(zero_x, 0.0, np.zeros(m), QcqpStatus.MAX_ITER, np.inf)
    if not ok and m == 1:
        z, ev = _bisection_single(dual, tol, max_iter)
        kkt = dual.kkt(z, ev)
        ok = kkt <= tol
    lam = z
    mu = dual.bound_multipliers(ev)
    y = ev["y"]
    if nz.real:
        y = np.real(y)
    if nz.nonneg:
        y = np.maximum(y, 0.0)
    x, lam_o, mu_o = nz.to_original(y, lam, mu)
    status = QcqpStatus.OPTIMAL if ok else QcqpStatus.MAX_ITER
    if not ok:
        log.debug("QCQP stopped at KKT residual %.3e after %d iterations", kkt, iters)
    return QcqpSolution(
        x=x,
        objective_value=problem.objective(x),
        dual_multipliers=lam_o,
        status=status,
        kkt_residual=kkt,
        iterations=iters,
        bound_multipliers=mu_o,
    )
