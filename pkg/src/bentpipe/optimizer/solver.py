"""Alternating inner solvers, the Dinkelbach outer loop and the baseline.

Three inner loops share one driver:

* JPFBM: WMMSE updates, precoder QCQP, reweighting refresh, full gain-matrix
  QCQP with relaxed matching constraints.
* JPAF: the same with the matching fixed to ``A`` and only the per-beam
  gains ``xi`` optimized (``B = diag(xi) A``).
* fixed gains: WMMSE updates and the precoder QCQP only (the baseline, and
  the final polish after hardening).

Gains are measured in a scenario-derived unit ``b_unit`` for everything
that is not scale-free: the all-ones initialization, the reweighting
constant and the pruning level.  ``b_unit`` is the largest common gain at
which forwarded satellite noise alone uses half of the tightest antenna
budget.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from ..metrics import (
    MetricsReport,
    PowerParams,
    active_fl_count,
    antenna_load,
    count_nonzero,
    evaluate,
    feeder_powers,
    is_hard_matching,
)
from ..metrics import ZERO_REL_THRESHOLD
from ..qcqp import QcqpProblem, QcqpStatus, solve
from ..scenario import AlgoConfig, Scenario, realize
from .matching import harden_matching, inverse_sqrt_gain, support
from .subproblems import (
    assemble_amplify_subproblem,
    assemble_matching_subproblem,
    assemble_precoding_subproblem,
    check_matching,
    coefficients,
    log_count,
    reweight,
    unvec,
    vec,
    weighted_mse_objective,
)
from .wmmse import update_receive_coeffs, wmmse_update

log = logging.getLogger(__name__)

AUDIT_RTOL = 1e-6
ETA_SLACK = 1e-8
# relative slack under which a quadratic budget counts as met
FEAS_RTOL = 1e-9


class Algorithm(str, enum.Enum):
    JPFBM = "JPFBM"
    JPAF = "JPAF"
    BASELINE = "Baseline"


class InnerSolveError(RuntimeError):
    """A subproblem could not be solved; carries the iteration context."""


# --------------------------------------------------------------------------
# Problem data
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SystemInstance:
    F: np.ndarray  # (N, N)
    H: np.ndarray  # (N, K)
    power: PowerParams
    gw_budget: np.ndarray  # (N,) W
    sat_budget: np.ndarray  # (N,) W
    algo: AlgoConfig = field(default_factory=AlgoConfig)

    @classmethod
    def from_scenario(cls, scenario: Scenario, seed_offset: int = 0) -> "SystemInstance":
        Fc, Hc = realize(scenario, seed_offset)
        return cls(
            F=Fc.assembled,
            H=Hc.matrix,
            power=scenario.power_params(),
            gw_budget=np.asarray(scenario.budgets.gw_budget_w, dtype=float),
            sat_budget=np.asarray(scenario.budgets.sat_budget_w, dtype=float),
            algo=scenario.algo,
        )

    @property
    def N(self) -> int:
        return self.F.shape[0]

    @property
    def K(self) -> int:
        return self.H.shape[1]

    @property
    def gain_unit(self) -> float:
        return float(np.sqrt(np.min(self.sat_budget) / (2.0 * np.sum(self.power.noise_cov_sat))))

    def metrics(self, W, B, active=None) -> MetricsReport:
        return evaluate(W, B, self.F, self.H, self.power, active)

    def objective(self, W, B, delta, omega, eta, link_count) -> float:
        return weighted_mse_objective(W, B, self.F, self.H, self.power, delta, omega, eta, link_count)


def constraint_violation(inst: SystemInstance, W, B) -> dict:
    """Largest relative violation of the feeder (C3) and antenna (C4) budgets."""
    c3 = feeder_powers(W) / inst.gw_budget - 1.0
    c4 = antenna_load(W, B, inst.F, inst.power.noise_cov_sat) / inst.sat_budget - 1.0
    return {"c3": float(max(c3.max(), 0.0)), "c4": float(max(c4.max(), 0.0))}


# --------------------------------------------------------------------------
# Records
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AuditEvent:
    inner_iter: int
    step: str  # "delta", "omega", "W", "B"
    before: float
    after: float

    @property
    def increase(self) -> float:
        return self.after - self.before


@dataclass(frozen=True)
class TraceRow:
    outer_iter: int
    inner_iter: int
    eta: float
    objective: float
    rate: float
    power: float
    swee: float
    phase: str = "relax"  # "relax" before hardening, "polish" after, "continuation" from a given start


@dataclass
class InnerResult:
    W: np.ndarray
    B: np.ndarray
    trace: list[float]  # smooth objective after every inner iteration
    rows: list[TraceRow]
    audit: list[AuditEvent]  # block steps that increased the objective beyond slack
    steps_checked: int
    iterations: int
    link_count: int
    xi: np.ndarray | None = None
    weights: np.ndarray | None = None  # final beta (JPFBM) or alpha (JPAF)
    reverted_steps: int = 0


@dataclass(frozen=True)
class DinkelbachEntry:
    eta: float
    rate: float
    power: float
    chi: float
    inner_iterations: int


@dataclass
class DinkelbachState:
    eta: float = 0.0
    iteration: int = 0
    history: list[DinkelbachEntry] = field(default_factory=list)
    tol_out: float = 1e-4

    def eta_sequence(self) -> list[float]:
        return [h.eta for h in self.history]


@dataclass
class SolveReport:
    algorithm: Algorithm
    W: np.ndarray
    B: np.ndarray
    metrics: MetricsReport
    soft_W: np.ndarray
    soft_B: np.ndarray
    soft_metrics: MetricsReport
    dinkelbach: DinkelbachState
    converged: bool
    outer_iterations: int
    inner_iterations: int
    trace: list[TraceRow]
    audit: list[AuditEvent]
    steps_checked: int
    eta_monotone: bool
    violations: dict
    links_match_beams: bool
    hard_matching: bool
    wall_time: float = 0.0
    notes: list[str] = field(default_factory=list)
    polish: DinkelbachState | None = None
    polish_iterations: int = 0

    @property
    def total_iterations(self) -> int:
        """Inner iterations of both phases."""
        return self.inner_iterations + self.polish_iterations

    @property
    def swee(self) -> float:
        return self.metrics.swee

    @property
    def eta_history(self) -> list[float]:
        return self.dinkelbach.eta_sequence()


# --------------------------------------------------------------------------
# Subproblem solves
# --------------------------------------------------------------------------


# share of the tightest antenna budget left to forwarded noise after a baseline back-off
BASELINE_NOISE_SHARE = 0.5


def _fit_to_constraints(problem: QcqpProblem, x):
    """Scale x down onto the feasible set if round-off left it marginally outside."""
    vals = problem.constraint_values(x)
    bounds = problem.bounds()
    if len(vals) == 0:
        return x
    ratio = float(np.max(vals / bounds))
    return x / np.sqrt(ratio) if ratio > 1.0 else x


def _segment_quadratic(f0, fh, f1):
    """Coefficients (c0, c1, c2) of a quadratic through its values at t = 0, 1/2, 1."""
    c2 = 2.0 * (f1 - 2.0 * fh + f0)
    c1 = f1 - f0 - c2
    return f0, c1, c2


def _safeguarded_step(problem: QcqpProblem, x, x0):
    """Fitted candidate, or the best point between it and the incumbent x0 if it does worse.

    Both end points are feasible and the constraints are convex, so the
    whole segment is feasible; the objective is a convex quadratic along
    it, so the exact line search never does worse than the incumbent.
    """
    x = _fit_to_constraints(problem, x)
    bounds = problem.bounds()
    if len(bounds) and np.any(problem.constraint_values(x0) > bounds * (1.0 + FEAS_RTOL)):
        return x
    f0, f1 = problem.objective(x0), problem.objective(x)
    if f1 <= f0:
        return x
    d = x - x0
    _, c1, c2 = _segment_quadratic(f0, problem.objective(x0 + 0.5 * d), f1)
    t = float(np.clip(-c1 / (2.0 * c2), 0.0, 1.0)) if c2 > 0 else 0.0
    xt = x0 + t * d
    return xt if problem.objective(xt) <= f0 else x0


def _solve_sub(problem: QcqpProblem, algo: AlgoConfig, what: str, context: str, duals: dict, incumbent=None):
    """Solve one block subproblem, safeguarded by the incumbent when the solver stops early."""
    start = duals.get(what)
    if start is not None and len(start) != len(problem.constraints):
        start = None
    sol = solve(problem, tol=algo.qcqp_tol, max_iter=algo.qcqp_max_iter, dual_start=start)
    if sol.status is QcqpStatus.MAX_ITER and start is not None:
        sol = solve(problem, tol=algo.qcqp_tol, max_iter=algo.qcqp_max_iter)
    if sol.status in (QcqpStatus.INFEASIBLE, QcqpStatus.INDEFINITE_OBJECTIVE):
        raise InnerSolveError(f"{what} subproblem {sol.status.value} ({context})")
    if sol.status is QcqpStatus.MAX_ITER:
        log.debug("%s subproblem stopped at KKT %.2e (%s)", what, sol.kkt_residual, context)
    duals[what] = sol.dual_multipliers
    if incumbent is None:
        return _fit_to_constraints(problem, sol.x)
    return _safeguarded_step(problem, sol.x, np.asarray(incumbent, dtype=sol.x.dtype))


def initial_precoder(inst: SystemInstance, B, rows=None) -> np.ndarray:
    """Matched-filter precoder F B^T h_u (unit columns) at 50% of every budget."""
    N, K = inst.N, inst.K
    W = inst.F @ B.T @ inst.H
    if rows is not None:
        mask = np.zeros(N, dtype=bool)
        mask[rows] = True
        W[~mask] = 0.0
    norms = np.linalg.norm(W, axis=0)
    norms[norms == 0] = 1.0
    W = W / norms
    return scale_to_margin(inst, W, B, 0.5)


def scale_to_margin(inst: SystemInstance, W, B, margin: float) -> np.ndarray:
    """Scale W so that every C3/C4 constraint uses at most ``margin`` of its budget."""
    rowpow = feeder_powers(W)
    noise = (B**2) @ inst.power.noise_cov_sat
    sig = antenna_load(W, B, inst.F, inst.power.noise_cov_sat) - noise
    room = inst.sat_budget - noise
    if np.any(room <= 0):
        raise InnerSolveError("forwarded noise alone exceeds a satellite antenna budget")
    ratios = [rowpow[rowpow > 0] / inst.gw_budget[rowpow > 0], sig[sig > 0] / room[sig > 0]]
    worst = max((float(r.max()) for r in ratios if r.size), default=0.0)
    if worst == 0.0:
        return W
    return W * np.sqrt(margin / worst)


# --------------------------------------------------------------------------
# Gain blocks
# --------------------------------------------------------------------------


class _FixedGains:
    adaptive = False

    def __init__(self, count: float):
        self.count = count

    def surrogate_count(self, B) -> float:
        return self.count

    def smooth_count(self, B) -> float:
        return self.count

    def link_count(self, B) -> int:
        return int(self.count)


class _MatchingGains:
    """Full non-negative gain matrix with reweighted matching constraints."""

    adaptive = True

    def __init__(self, inst: SystemInstance):
        self.inst = inst
        self.unit = inst.gain_unit
        self.eps = inst.algo.epsilon
        self.beta = None

    def refresh(self, B):
        self.beta = reweight(B, self.eps, self.unit)

    def surrogate_count(self, B) -> float:
        return float(np.sum(self.beta**2 * B**2))

    def smooth_count(self, B) -> float:
        return log_count(B, self.eps, self.unit)

    def alive(self, B) -> np.ndarray:
        return (B / self.unit) ** 2 > self.eps

    def link_count(self, B) -> int:
        return int(np.count_nonzero(self.alive(B).any(axis=0)))

    def prune(self, B):
        return np.where(self.alive(B), B, 0.0)

    def step(self, W, B, wm, coeffs, duals, context):
        inst = self.inst
        prob = assemble_matching_subproblem(
            W, inst.F, inst.H, inst.power, wm.delta, wm.omega, self.beta, coeffs, inst.sat_budget, incumbent=B
        )
        b = _solve_sub(prob, inst.algo, "B", context, duals, incumbent=vec(B))
        return unvec(np.maximum(b, 0.0), inst.N), prob.objective(vec(B)) - 0.0, prob


class _AmplifyGains:
    """Per-beam gains on a fixed matching A: B = diag(xi) A."""

    adaptive = True

    def __init__(self, inst: SystemInstance, A, fixed_count: int | None = None):
        self.inst = inst
        self.A = check_matching(np.asarray(A, dtype=float))
        self.unit = inst.gain_unit
        self.eps = inst.algo.epsilon
        self.alpha = None
        # with a fixed count the link set is frozen and the gains carry no sparsity penalty
        self.fixed_count = fixed_count

    def xi(self, B):
        return np.max(B * self.A, axis=1)

    def gains(self, xi):
        return np.asarray(xi)[:, None] * self.A

    def refresh(self, B):
        if self.fixed_count is None:
            self.alpha = reweight(self.xi(B), self.eps, self.unit)
        else:
            self.alpha = np.zeros(self.inst.N)

    def surrogate_count(self, B) -> float:
        if self.fixed_count is not None:
            return float(self.fixed_count)
        return float(np.sum(self.alpha**2 * self.xi(B) ** 2))

    def smooth_count(self, B) -> float:
        if self.fixed_count is not None:
            return float(self.fixed_count)
        return log_count(self.xi(B), self.eps, self.unit)

    def alive(self, B) -> np.ndarray:
        if self.fixed_count is not None:
            return self.A.sum(axis=1) > 0
        return (self.xi(B) / self.unit) ** 2 > self.eps

    def link_count(self, B) -> int:
        return int(np.count_nonzero(self.alive(B)))

    def prune(self, B):
        return self.gains(np.where(self.alive(B), self.xi(B), 0.0))

    def step(self, W, B, wm, coeffs, duals, context):
        inst = self.inst
        sub = assemble_amplify_subproblem(
            self.A, W, inst.F, inst.H, inst.power, wm.delta, wm.omega, self.alpha, coeffs, inst.sat_budget
        )
        x = _solve_sub(sub.problem, inst.algo, "xi", context, duals, incumbent=self.xi(B)[sub.beams])
        xi = np.zeros(inst.N)
        xi[sub.beams] = np.maximum(x, 0.0)
        return self.gains(xi), None, sub.problem


# --------------------------------------------------------------------------
# Inner driver
# --------------------------------------------------------------------------


def _alternate(
    inst: SystemInstance, eta: float, W, B, block, rows=None, outer_iter: int = 0, duals=None, phase: str = "relax"
) -> InnerResult:
    algo = inst.algo
    power = inst.power
    coeffs = coefficients(eta, power)
    duals = {} if duals is None else duals
    trace, rows_out, audit = [], [], []
    checked = 0
    reverted = 0
    wm = None
    prev_obj = None

    def J(W_, B_, delta, omega, count):
        return inst.objective(W_, B_, delta, omega, eta, count)

    def check(k, step, before, after):
        nonlocal checked
        checked += 1
        if after > before + AUDIT_RTOL * max(abs(before), 1.0):
            audit.append(AuditEvent(k, step, before, after))

    k = 0
    for k in range(1, algo.inner_max_iter + 1):
        context = f"outer {outer_iter}, inner {k}, eta={eta:.6g}"
        if block.adaptive and k == 1:
            block.refresh(B)
        count = block.surrogate_count(B)
        # receive coefficients, then MSE weights
        if wm is not None:
            j0 = J(W, B, wm.delta, wm.omega, count)
            delta = update_receive_coeffs(W, B, inst.F, inst.H, power.noise_cov_sat, power.noise_user)
            j1 = J(W, B, delta, wm.omega, count)
            check(k, "delta", j0, j1)
        wm = wmmse_update(W, B, inst.F, inst.H, power.noise_cov_sat, power.noise_user)
        j2 = J(W, B, wm.delta, wm.omega, count)
        if k > 1:
            check(k, "omega", j1, j2)
        # precoder
        sub = assemble_precoding_subproblem(
            W, B, inst.F, inst.H, power, wm.delta, wm.omega, coeffs, inst.gw_budget, inst.sat_budget, rows=rows
        )
        W_new = np.zeros_like(W)
        W_new[sub.rows] = _solve_sub(sub.problem, algo, "W", context, duals, incumbent=W[sub.rows])
        j3 = J(W_new, B, wm.delta, wm.omega, count)
        # audit the raw step; a revert only absorbs increases below the audit slack
        check(k, "W", j2, j3)
        if j3 > j2 + AUDIT_RTOL * max(abs(j2), 1.0) * 1e-3:
            # solver round-off made things worse: keep the feasible incumbent
            W_new, j3 = W, j2
            reverted += 1
        W = W_new
        # gains
        if block.adaptive:
            block.refresh(B)
            j3b = J(W, B, wm.delta, wm.omega, block.surrogate_count(B))
            B_new, _, prob = block.step(W, B, wm, coeffs, duals, context)
            j4 = J(W, B_new, wm.delta, wm.omega, block.surrogate_count(B_new))
            incumbent_ok = _feasible(prob, B, block)
            check(k, "B", j3b, j4)
            if j4 > j3b + AUDIT_RTOL * max(abs(j3b), 1.0) * 1e-3 and incumbent_ok:
                B_new, j4 = B, j3b
                reverted += 1
            B = B_new
        obj = J(W, B, wm.delta, wm.omega, block.smooth_count(B))
        link = block.link_count(B)
        m = inst.metrics(W, B, active=link)
        trace.append(obj)
        rows_out.append(TraceRow(outer_iter, k, eta, obj, m.rate_total, m.p_total_weighted, m.swee, phase))
        if prev_obj is not None and abs(obj - prev_obj) < algo.inner_tol * max(abs(obj), 1.0):
            break
        prev_obj = obj

    if block.adaptive:
        B = block.prune(B)
    return InnerResult(
        W=W,
        B=B,
        trace=trace,
        rows=rows_out,
        audit=audit,
        steps_checked=checked,
        iterations=k,
        link_count=block.link_count(B),
        weights=getattr(block, "beta", None) if isinstance(block, _MatchingGains) else getattr(block, "alpha", None),
        reverted_steps=reverted,
    )


def _feasible(prob: QcqpProblem, B, block) -> bool:
    x = vec(B) if isinstance(block, _MatchingGains) else block.xi(B)
    if isinstance(block, _AmplifyGains):
        x = x[np.asarray(block.A).sum(axis=1) > 0]
    vals = prob.constraint_values(x)
    return bool(np.all(vals <= prob.bounds() * (1.0 + FEAS_RTOL)))


# --------------------------------------------------------------------------
# Public inner solvers
# --------------------------------------------------------------------------


@dataclass
class WarmStart:
    W: np.ndarray
    B: np.ndarray
    duals: dict = field(default_factory=dict)


def jpfbm_inner(inst: SystemInstance, eta: float, warm_start: WarmStart | None = None, outer_iter: int = 0) -> InnerResult:
    """Joint precoding and feeder-link/beam matching at fixed eta."""
    if warm_start is None:
        B = inst.gain_unit * np.ones((inst.N, inst.N))
        W = initial_precoder(inst, B)
        duals = {}
    else:
        W, B, duals = warm_start.W.copy(), warm_start.B.copy(), warm_start.duals
    return _alternate(inst, eta, W, B, _MatchingGains(inst), outer_iter=outer_iter, duals=duals)


def jpaf_inner(
    inst: SystemInstance, eta: float, A=None, warm_start: WarmStart | None = None, outer_iter: int = 0
) -> InnerResult:
    """Joint precoding and amplify-and-forward gains for a fixed matching A."""
    A = np.eye(inst.N) if A is None else np.asarray(A, dtype=float)
    block = _AmplifyGains(inst, A)
    if warm_start is None:
        B = block.gains(inst.gain_unit * np.ones(inst.N))
        W = initial_precoder(inst, B)
        duals = {}
    else:
        W, B, duals = warm_start.W.copy(), warm_start.B.copy(), warm_start.duals
    res = _alternate(inst, eta, W, B, block, outer_iter=outer_iter, duals=duals)
    res.xi = block.xi(res.B)
    return res


def fixed_gain_inner(
    inst: SystemInstance, eta: float, B, W0=None, rows=None, count=None, outer_iter: int = 0, duals=None
) -> InnerResult:
    """Precoder-only alternation for a fixed gain matrix B."""
    count = active_fl_count(B.T) if count is None else count
    W = initial_precoder(inst, B, rows) if W0 is None else W0.copy()
    return _alternate(inst, eta, W, B, _FixedGains(count), rows=rows, outer_iter=outer_iter, duals=duals)


# --------------------------------------------------------------------------
# Dinkelbach
# --------------------------------------------------------------------------


def _dinkelbach_loop(inst: SystemInstance, run_inner, eta0: float = 0.0, outer_offset: int = 0):
    """Generic outer loop. ``run_inner(eta, warm, outer_iter)`` returns an InnerResult."""
    algo = inst.algo
    state = DinkelbachState(eta=eta0, tol_out=algo.outer_tol)
    best = None
    warm = None
    rows, audit = [], []
    checked = 0
    raw_etas = []
    converged = False
    total_inner = 0
    for ell in range(1, algo.outer_max_iter + 1):
        res = run_inner(state.eta, warm, outer_offset + ell)
        total_inner += res.iterations
        rows.extend(res.rows)
        audit.extend(res.audit)
        checked += res.steps_checked
        m = inst.metrics(res.W, res.B, active=res.link_count)
        rate, p = m.rate_total, m.p_total_weighted
        chi = rate - state.eta * p
        state.history.append(DinkelbachEntry(state.eta, rate, p, chi, res.iterations))
        new_eta = rate / p if p > 0 else 0.0
        raw_etas.append(new_eta)
        state.iteration = ell
        if best is None or new_eta >= best[0]:
            best = (new_eta, res)
        warm = WarmStart(best[1].W, best[1].B, {})
        # A result with chi < 0 is worse than the incumbent (whose chi is 0):
        # keep the incumbent, which leaves eta unchanged and ends the loop.
        step = max(new_eta, state.eta) - state.eta
        if step <= algo.outer_tol * max(state.eta, 1.0):
            converged = True
            state.eta += step
            break
        state.eta = new_eta
    return best[1], state, rows, audit, checked, raw_etas, converged, total_inner


def _eta_monotone(state: DinkelbachState) -> bool:
    etas = state.eta_sequence()
    return all(b >= a - ETA_SLACK * max(abs(a), 1.0) for a, b in zip(etas, etas[1:]))


def _polish(inst: SystemInstance, W, B, eta: float, outer_offset: int):
    """Hard matching, then a Dinkelbach run over W and the kept gains with idle feeder links switched off.

    The link set is frozen, so the hardware count is exact and the gains are
    re-fitted without the sparsity penalty that shrank them while the support
    was being chosen.  A link whose gain collapses to zero is removed
    (together with its precoder row) and the run is repeated on the smaller
    support, so a returned feeder link transmits exactly when it is
    forwarded.
    """
    B_cur = harden_matching(B)
    W_cur = W
    rows, audit, checked, total_inner = [], [], 0, 0
    offset = outer_offset
    while True:
        active = np.flatnonzero(np.any(B_cur > 0, axis=0))
        W0 = np.zeros_like(W_cur)
        W0[active] = W_cur[active]
        W0 = scale_into_budgets(inst, W0, B_cur)
        count = len(active)
        if count == 0:
            raise InnerSolveError("every feeder link was switched off")
        m0 = inst.metrics(W0, B_cur, active=count)
        eta0 = m0.swee if np.isfinite(m0.swee) else 0.0
        A = support(B_cur)

        def run(e, warm, it, A=A, count=count, active=active, W0=W0, B0=B_cur):
            Wi, Bi = (warm.W, warm.B) if warm else (W0, B0)
            block = _AmplifyGains(inst, A, fixed_count=count)
            return _alternate(inst, e, Wi.copy(), Bi.copy(), block, rows=active, outer_iter=it, phase="polish")

        # start from the polished incumbent; the first outer step cannot lose ground
        res, state, r_rows, r_audit, r_checked, raw, conv, r_inner = _dinkelbach_loop(
            inst, run, eta0=eta0, outer_offset=offset
        )
        rows += r_rows
        audit += r_audit
        checked += r_checked
        total_inner += r_inner
        offset += state.iteration
        gains = res.B.max(axis=0)[active]
        dead = active[gains <= ZERO_REL_THRESHOLD * max(gains.max(), 0.0)]
        if dead.size == 0:
            return res.B, active, (res, state, rows, audit, checked, raw, conv, total_inner)
        log.debug("polish dropped feeder links %s whose gains vanished", dead.tolist())
        B_cur = res.B.copy()
        B_cur[:, dead] = 0.0
        W_cur = res.W


def scale_into_budgets(inst: SystemInstance, W, B) -> np.ndarray:
    """Shrink W just enough to satisfy every C3/C4 constraint."""
    rowpow = feeder_powers(W)
    noise = (B**2) @ inst.power.noise_cov_sat
    sig = antenna_load(W, B, inst.F, inst.power.noise_cov_sat) - noise
    room = inst.sat_budget - noise
    ratio = max(float(np.max(rowpow / inst.gw_budget)), float(np.max(np.where(sig > 0, sig / room, 0.0))))
    return W / np.sqrt(ratio) if ratio > 1.0 else W


@dataclass(frozen=True)
class Design:
    """A precoder and gain matrix pair, e.g. the answer to a neighbouring problem."""

    W: np.ndarray
    B: np.ndarray


@dataclass
class _Continuation:
    W: np.ndarray
    B: np.ndarray
    metrics: MetricsReport
    rows: list
    audit: list
    checked: int
    inner: int
    monotone: bool


def _continue_from(inst: SystemInstance, start: Design, rerun, outer_offset: int, harden: bool = True) -> _Continuation:
    """Re-optimize from ``start`` on its own link set; keep the start if the run does not beat it."""
    B0 = np.asarray(start.B, dtype=float)
    B0 = harden_matching(B0) if harden else B0
    active = np.flatnonzero(np.any(B0 > 0, axis=0))
    W0 = np.zeros_like(np.asarray(start.W, dtype=complex))
    W0[active] = np.asarray(start.W)[active]
    W0 = scale_into_budgets(inst, W0, B0)
    base = inst.metrics(W0, B0)
    res, state, rows, audit, checked, _, _, inner = rerun(W0, B0, outer_offset)
    rows = [replace(row, phase="continuation") for row in rows]
    m = inst.metrics(res.W, res.B)
    W, B = res.W, res.B
    if not np.isfinite(m.swee) or (np.isfinite(base.swee) and base.swee > m.swee):
        W, B, m = W0, B0, base
    return _Continuation(W, B, m, rows, audit, checked, inner, _eta_monotone(state))


def dinkelbach(
    inst: SystemInstance, algorithm: Algorithm | str = Algorithm.JPFBM, A=None, start: Design | None = None
) -> SolveReport:
    """Maximize the weighted energy efficiency with the chosen inner solver.

    ``start`` is an optional second starting design, typically the answer to
    a neighbouring problem in a parameter sweep; see :func:`refine`.
    """
    algorithm = Algorithm(algorithm)
    if algorithm is Algorithm.BASELINE:
        report = fixed_matching_baseline(inst)
    else:
        report = _joint(inst, algorithm, A)
    return report if start is None else refine(inst, report, start)


def _joint(inst: SystemInstance, algorithm: Algorithm, A=None) -> SolveReport:
    t0 = time.perf_counter()
    if algorithm is Algorithm.JPFBM:
        run = lambda e, warm, it: jpfbm_inner(inst, e, warm, outer_iter=it)
    else:
        run = lambda e, warm, it: jpaf_inner(inst, e, A, warm, outer_iter=it)
    res, state, rows, audit, checked, raw, converged, total_inner = _dinkelbach_loop(inst, run)
    soft_metrics = inst.metrics(res.W, res.B, active=res.link_count)
    B_hard, active, polish = _polish(inst, res.W, res.B, state.eta, state.iteration)
    pres, pstate, prows, paudit, pchecked, _, pconv, pinner = polish
    W = pres.W
    metrics = inst.metrics(W, B_hard)
    notes = [f"polish moved eta from {state.eta:.9g} to {pstate.eta:.9g}"]
    links_match = active_fl_count(W) == count_nonzero(B_hard.sum(axis=0))
    return SolveReport(
        algorithm=algorithm,
        W=W,
        B=B_hard,
        metrics=metrics,
        soft_W=res.W,
        soft_B=res.B,
        soft_metrics=soft_metrics,
        dinkelbach=state,
        converged=converged and pconv,
        outer_iterations=state.iteration,
        inner_iterations=total_inner,
        trace=rows + prows,
        audit=audit + paudit,
        steps_checked=checked + pchecked,
        eta_monotone=_eta_monotone(state) and _eta_monotone(pstate),
        violations=constraint_violation(inst, W, B_hard),
        links_match_beams=bool(links_match),
        hard_matching=is_hard_matching(B_hard),
        wall_time=time.perf_counter() - t0,
        notes=notes,
        polish=pstate,
        polish_iterations=pinner,
    )


def baseline_gains(inst: SystemInstance) -> np.ndarray:
    """|(F^H F)^{-1/2}|, scaled down only if its forwarded noise breaks a satellite budget."""
    B = inverse_sqrt_gain(inst.F)
    noise = (B**2) @ inst.power.noise_cov_sat
    worst = float(np.max(noise / inst.sat_budget))
    if worst >= 1.0:
        log.warning("baseline gains forward %.2fx an antenna budget in noise; backing off", worst)
        B = B * np.sqrt(BASELINE_NOISE_SHARE / worst)
    return B


def fixed_matching_baseline(inst: SystemInstance) -> SolveReport:
    """Precoder-only optimization with B fixed to |(F^H F)^{-1/2}|.

    When the forwarded noise alone would exceed an antenna budget the gain
    matrix is backed off uniformly so that noise fills at most half of the
    tightest budget; otherwise no precoder would be feasible.
    """
    t0 = time.perf_counter()
    B = baseline_gains(inst)
    count = inst.N
    run = lambda e, warm, it: fixed_gain_inner(inst, e, B, W0=(warm.W if warm else None), count=count, outer_iter=it)
    res, state, rows, audit, checked, raw, converged, total_inner = _dinkelbach_loop(inst, run)
    metrics = inst.metrics(res.W, B)
    return SolveReport(
        algorithm=Algorithm.BASELINE,
        W=res.W,
        B=B,
        metrics=metrics,
        soft_W=res.W,
        soft_B=B,
        soft_metrics=metrics,
        dinkelbach=state,
        converged=converged,
        outer_iterations=state.iteration,
        inner_iterations=total_inner,
        trace=rows,
        audit=audit,
        steps_checked=checked,
        eta_monotone=_eta_monotone(state),
        violations=constraint_violation(inst, res.W, B),
        links_match_beams=active_fl_count(res.W) == count,
        hard_matching=is_hard_matching(B),
        wall_time=time.perf_counter() - t0,
    )


def refine(inst: SystemInstance, report: SolveReport, start: Design) -> SolveReport:
    """Re-optimize from a second starting design and keep the better answer.

    ``start`` keeps its link set (for the baseline only its precoder is
    used, the gains stay fixed).  It is scaled into the budgets of ``inst``,
    improved by a Dinkelbach run on that support, and replaces the design in
    ``report`` when its SWEE is higher.  The result is never worse than
    either ``report`` or the scaled start.  Trace rows of this run carry the
    phase "continuation".
    """
    t0 = time.perf_counter()
    offset = report.outer_iterations + (report.polish.iteration if report.polish else 0)
    if report.algorithm is Algorithm.BASELINE:
        B = report.B
        count = inst.N

        def rerun(W0, B0, off):
            eta0 = inst.metrics(W0, B).swee
            go = lambda e, warm, it: fixed_gain_inner(inst, e, B, W0=(warm.W if warm else W0), count=count, outer_iter=it)
            return _dinkelbach_loop(inst, go, eta0=eta0 if np.isfinite(eta0) else 0.0, outer_offset=off)

        cont = _continue_from(inst, Design(start.W, B), rerun, offset, harden=False)
    else:
        rerun = lambda W0, B0, off: _polish(inst, W0, B0, 0.0, off)[2]
        cont = _continue_from(inst, start, rerun, offset)
    out = replace(
        report,
        trace=report.trace + cont.rows,
        audit=report.audit + cont.audit,
        steps_checked=report.steps_checked + cont.checked,
        polish_iterations=report.polish_iterations + cont.inner,
        eta_monotone=report.eta_monotone and cont.monotone,
        wall_time=report.wall_time + time.perf_counter() - t0,
        notes=list(report.notes),
    )
    if cont.metrics.swee > report.metrics.swee:
        out.notes.append(f"continuation start kept: swee {cont.metrics.swee:.9g} > {report.metrics.swee:.9g}")
        links_match = active_fl_count(cont.W) == count_nonzero(cont.B.sum(axis=0))
        out = replace(
            out,
            W=cont.W,
            B=cont.B,
            metrics=cont.metrics,
            violations=constraint_violation(inst, cont.W, cont.B),
            links_match_beams=bool(links_match),
            hard_matching=is_hard_matching(cont.B),
        )
    return out
