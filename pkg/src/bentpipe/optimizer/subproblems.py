"""Assembly of the convex subproblems solved inside the alternating loops.

For fixed Dinkelbach parameter ``eta`` and WMMSE variables (delta, omega),
the parameterized objective, divided by ``R_s / ln 2``, reads::

    J = sum_u (omega_u e_u - ln omega_u) + (eta ln2 / R_s) * P_surrogate

where ``P_surrogate`` is the weighted power with the active-link count
replaced by a smooth surrogate.  Every subproblem below is J restricted to
one block of variables, written as a :class:`~bentpipe.qcqp.QcqpProblem`.
The feeder-link index ``t`` always labels columns of ``B``; the vectorized
gain matrix is ``b = vec(B)`` in column-major order, so ``b[t*N + n] =
B[n, t]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..metrics import PowerParams, gw_power, satellite_power_raw
from ..qcqp import QcqpProblem
from .wmmse import mse

# --------------------------------------------------------------------------
# Scalar coefficients
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Coefficients:
    nu_hw: float  # per active link (hardware power)
    nu1: float  # ||W||^2
    nu2: float  # ||F^H W||^2 (satellite input power, enters negatively)
    nu3: float  # ||B F^H W||^2 and forwarded noise (satellite output power)


def rate_scale(power: PowerParams) -> float:
    """R_s / ln 2: converts natural-log rate terms into bits/s."""
    return power.baud_rate / math.log(2.0)


def coefficients(eta: float, power: PowerParams) -> Coefficients:
    if eta < 0:
        raise ValueError("eta must be non-negative")
    c = eta / rate_scale(power)
    nu2 = c * power.delta_sa / power.rho_sa
    return Coefficients(
        nu_hw=c * (power.delta_gw * power.gw_hw_power + power.delta_sa * power.sat_hw_power),
        nu1=c * power.delta_gw * (power.rho_gw + 1.0) / power.rho_gw,
        nu2=nu2,
        nu3=(power.rho_sa + 1.0) * nu2,
    )


def lambda_matrix(H, delta, omega) -> np.ndarray:
    """Lambda = sum_u omega_u |delta_u|^2 h_u h_u^H."""
    wgt = np.asarray(omega) * np.abs(delta) ** 2
    return (H * wgt[None, :]) @ H.conj().T


# --------------------------------------------------------------------------
# Objective
# --------------------------------------------------------------------------


def weighted_mse_objective(W, B, F, H, power: PowerParams, delta, omega, eta: float, link_count: float) -> float:
    """J for arbitrary (W, B, delta, omega); ``link_count`` is the hardware-term count."""
    e = mse(delta, W, B, F, H, power.noise_cov_sat, power.noise_user)
    omega = np.asarray(omega)
    mse_part = float(np.sum(omega * e - np.log(omega)))
    if eta == 0:
        return mse_part
    p = power.delta_gw * gw_power(W, power, link_count) + power.delta_sa * satellite_power_raw(W, B, F, power, link_count)
    return mse_part + eta / rate_scale(power) * p


def reweight(values, epsilon: float, unit: float = 1.0) -> np.ndarray:
    """Reweighting factors 1/sqrt(x^2 + eps), with x measured in ``unit``.

    Returned in the caller's units: ``beta * x`` is dimensionless.
    """
    x = np.asarray(values, dtype=float) / unit
    return 1.0 / np.sqrt(x**2 + epsilon) / unit


def log_count(values, epsilon: float, unit: float = 1.0) -> float:
    """Smooth active-entry count whose tangent majorizer is sum(beta^2 x^2).

    ``sum log(1 + x^2/eps)`` is concave in ``x^2``; linearizing at the
    current point gives the reweighted quadratic up to a constant, so this
    count is non-increasing along the reweighted iterations.
    """
    x = np.asarray(values, dtype=float) / unit
    return float(np.sum(np.log1p(x**2 / epsilon)))


# --------------------------------------------------------------------------
# Precoding block (W)
# --------------------------------------------------------------------------


@dataclass
class PrecodingSubproblem:
    problem: QcqpProblem
    rows: np.ndarray  # indices of the feeder links being optimized
    pi_clamp: float  # size of the negative spectrum removed from Pi


def precoding_matrices(B, F, H, delta, omega, coeffs: Coefficients):
    """Pi (N x N Hermitian) and the linear terms k_u stacked as columns."""
    lam = lambda_matrix(H, delta, omega)
    FB = F @ B.T
    N = F.shape[0]
    Pi = coeffs.nu1 * np.eye(N) - coeffs.nu2 * (F @ F.conj().T) + FB @ (coeffs.nu3 * np.eye(N) + lam) @ FB.conj().T
    Pi = 0.5 * (Pi + Pi.conj().T)
    k = (FB @ H) * (np.asarray(omega) * np.conj(delta))[None, :]
    return Pi, k


def assemble_precoding_subproblem(
    W, B, F, H, power: PowerParams, delta, omega, coeffs: Coefficients, gw_budget, sat_budget, rows=None
) -> PrecodingSubproblem:
    """QCQP over W for fixed (B, delta, omega).

    Constraints: per feeder-link transmit power ``||W[t]||^2 <= gw_budget[t]``
    and per satellite antenna ``sum_u w_u^H M_n w_u <= sat_budget[n] -
    sum_t B[n, t]^2 sigma_t`` with ``M_n = F diag(B[n]^2) F^H``.

    ``rows`` restricts the optimization to a subset of feeder links (the
    others are held at zero).  A negative part of Pi is removed by tangent
    linearization at the current W, which keeps the step a descent step.
    """
    N, K = W.shape
    if B.shape != (N, N) or F.shape != (N, N) or H.shape[0] != N:
        raise ValueError("dimension mismatch between W, B, F and H")
    rows = np.arange(N) if rows is None else np.asarray(rows, dtype=int)
    Pi, k = precoding_matrices(B, F, H, delta, omega, coeffs)
    w_eig, V = np.linalg.eigh(Pi)
    clamp = 0.0
    if w_eig.min() < 0:
        neg = np.minimum(w_eig, 0.0)
        clamp = float(np.sqrt(np.sum(neg**2)))
        Pi = (V * np.maximum(w_eig, 0.0)) @ V.conj().T
        # -w^H N w <= const - 2 Re(w^H N w0): absorb the tangent into q.
        k = k - (V * neg) @ V.conj().T @ W
    Pi_r = Pi[np.ix_(rows, rows)]
    k_r = k[rows]
    sigma = np.asarray(power.noise_cov_sat)
    Fr = F[rows]
    constraints = []
    for i, t in enumerate(rows):
        e = np.zeros(len(rows))
        e[i] = 1.0
        constraints.append((e, float(gw_budget[t])))
    for n in range(N):
        g2 = B[n] ** 2
        if not np.any(g2):
            continue
        M = (Fr * g2[None, :]) @ Fr.conj().T
        constraints.append((0.5 * (M + M.conj().T), float(sat_budget[n] - g2 @ sigma)))
    return PrecodingSubproblem(QcqpProblem(P=Pi_r, q=k_r, constraints=constraints), rows, clamp)


# --------------------------------------------------------------------------
# Matching block (b = vec(B))
# --------------------------------------------------------------------------


def vec(B) -> np.ndarray:
    return np.asarray(B).reshape(-1, order="F")


def unvec(b, N: int) -> np.ndarray:
    return np.asarray(b).reshape((N, N), order="F")


def matching_quadratic(W, F, H, power: PowerParams, delta, omega, coeffs: Coefficients):
    """Quadratic form Q (N^2 x N^2, excluding the hardware term) and linear term f_tilde.

    ``J(b) = b^T (Q + nu_hw D) b - f_tilde^T b + const``.  Q holds the
    rate-coupling blocks ``Re(C[n, t] (nu3 I + Lambda))`` with
    ``C[n, t] = sum_i w_i^H f_n f_t^H w_i``, plus the forwarded-noise blocks
    ``sigma_t Re(nu3 I + Lambda)`` on the diagonal.
    """
    N = F.shape[0]
    lam = lambda_matrix(H, delta, omega)
    inner = coeffs.nu3 * np.eye(N) + lam
    G = F.conj().T @ W  # G[t, i] = f_t^H w_i
    C = np.conj(G) @ G.T
    Q = np.real(np.kron(C, inner))
    sigma = np.asarray(power.noise_cov_sat)
    Q += np.kron(np.diag(sigma), np.real(inner))
    Q = 0.5 * (Q + Q.T)
    # f_tilde block t, entry n: 2 Re(sum_u omega_u delta_u conj(h_u[n]) (f_t^H w_u))
    weights = np.asarray(omega) * np.asarray(delta)
    M = (np.conj(H) * weights[None, :]) @ G.T  # M[n, t]
    f_tilde = 2.0 * np.real(vec(M))
    return Q, f_tilde


def feeder_stream_power(W, F, power: PowerParams) -> np.ndarray:
    """gamma_t = sum_u |f_t^H w_u|^2 + sigma_t, the power entering each satellite chain."""
    G = F.conj().T @ W
    return np.sum(np.abs(G) ** 2, axis=1) + np.asarray(power.noise_cov_sat)


def assemble_matching_subproblem(
    W, F, H, power: PowerParams, delta, omega, beta, coeffs: Coefficients, sat_budget, incumbent=None
) -> QcqpProblem:
    """Non-negative QCQP over ``b = vec(B)`` with reweighted matching constraints.

    Constraints: ``sum_n beta[n,t]^2 B[n,t]^2 <= 1`` per feeder link,
    ``sum_t beta[n,t]^2 B[n,t]^2 <= 1`` per beam and
    ``sum_t gamma_t B[n,t]^2 <= sat_budget[n]`` per satellite antenna.

    When ``incumbent`` is given, a matching bound that the incumbent exceeds
    is raised to the incumbent's own value, so the current point stays
    feasible and the step cannot increase the objective.
    """
    N = F.shape[0]
    if W.shape[0] != N or beta.shape != (N, N):
        raise ValueError("dimension mismatch in matching subproblem")
    Q, f_tilde = matching_quadratic(W, F, H, power, delta, omega, coeffs)
    d = vec(beta**2)
    P = Q + coeffs.nu_hw * np.diag(d)
    gamma = feeder_stream_power(W, F, power)
    w = beta**2
    col_bound = np.ones(N)
    row_bound = np.ones(N)
    if incumbent is not None:
        load = w * np.asarray(incumbent, dtype=float) ** 2
        col_bound = np.maximum(col_bound, load.sum(axis=0))
        row_bound = np.maximum(row_bound, load.sum(axis=1))
    constraints = []
    for t in range(N):
        a = np.zeros((N, N))
        a[:, t] = w[:, t]
        constraints.append((vec(a), float(col_bound[t])))
    for n in range(N):
        a = np.zeros((N, N))
        a[n, :] = w[n, :]
        constraints.append((vec(a), float(row_bound[n])))
    for n in range(N):
        a = np.zeros((N, N))
        a[n, :] = gamma
        constraints.append((vec(a), float(sat_budget[n])))
    return QcqpProblem(P=P, q=0.5 * f_tilde, constraints=constraints, real=True, nonneg=True)


# --------------------------------------------------------------------------
# Amplify block (B = diag(xi) A)
# --------------------------------------------------------------------------


def check_matching(A) -> np.ndarray:
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matching matrix must be square")
    if not np.all((A == 0) | (A == 1)):
        raise ValueError("matching matrix must be binary")
    if np.any(A.sum(axis=0) > 1) or np.any(A.sum(axis=1) > 1):
        raise ValueError("matching matrix must have at most one entry per row and column")
    return A


def selection_matrix(A) -> np.ndarray:
    """S with vec(diag(xi) A) = S xi."""
    A = check_matching(A)
    N = A.shape[0]
    S = np.zeros((N * N, N))
    for n in range(N):
        for t in range(N):
            if A[n, t]:
                S[t * N + n, n] = 1.0
    return S


@dataclass
class AmplifySubproblem:
    problem: QcqpProblem
    beams: np.ndarray  # beams carrying a feeder link; xi is zero elsewhere


def assemble_amplify_subproblem(
    A, W, F, H, power: PowerParams, delta, omega, alpha, coeffs: Coefficients, sat_budget
) -> AmplifySubproblem:
    """Non-negative QCQP over the beam gains ``xi`` for a fixed matching ``A``.

    Objective ``xi^T (Phi + nu_hw diag(alpha^2)) xi - c^T xi`` with
    ``Phi = S^T Q S`` and ``c = S^T f_tilde``; one budget per satellite
    antenna, ``xi_n^2 sum_t A[n,t] gamma_t <= sat_budget[n]``.  Beams
    without a link do not enter the problem.
    """
    S = selection_matrix(A)
    beams = np.flatnonzero(np.asarray(A).sum(axis=1))
    S = S[:, beams]
    Q, f_tilde = matching_quadratic(W, F, H, power, delta, omega, coeffs)
    Phi = S.T @ Q @ S
    c = S.T @ f_tilde
    P = Phi + coeffs.nu_hw * np.diag(np.asarray(alpha)[beams] ** 2)
    load = (np.asarray(A) @ feeder_stream_power(W, F, power))[beams]
    constraints = []
    for i, n in enumerate(beams):
        a = np.zeros(len(beams))
        a[i] = load[i]
        constraints.append((a, float(sat_budget[n])))
    return AmplifySubproblem(QcqpProblem(P=P, q=0.5 * c, constraints=constraints, real=True, nonneg=True), beams)
