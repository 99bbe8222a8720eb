"""Beamforming for joint maximum-likelihood decoding.

The power-min problem with MLD rate constraints is a nonconvex QCQP in the
stacked beam vector.  It is relaxed to an SDP, a rank-1 direction set is read
off the dominant eigenvector and the per-user powers are refit by an LP.
A bisection on the common rate scale turns this into a rate optimizer.
"""

import warnings
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np
from scipy.optimize import linprog

from .errors import CapExceeded, ZeroMatrix
from .complex_linalg import dominant_eigenvector, subset_sums
from .network import (
    channel_matching_beams,
    effective_noise_all,
    matched_directions,
    primary_interference_all,
    received_gains,
    weighted_sum_power,
)
from .mmse import genie_rate_upper

MAX_MS = 12

# tighter than the 1e-6 feasibility / 1e-5 objective contract, but loose
# enough for the interior-point method to certify on these small problems
SOLVER_SETTINGS = {"CLARABEL": {"tol_gap_abs": 1e-7, "tol_gap_rel": 1e-7, "tol_feas": 1e-7}}

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
MAXITER = "MaxIter"


def _check_ms(Ms):
    if Ms > MAX_MS:
        raise CapExceeded(f"MLD enumeration is capped at Ms = {MAX_MS}, got {Ms}")


def enumerate_decoding_sets(i, Ms):
    """All subsets of ``range(Ms)`` containing ``i``, as sorted tuples in bitmask order."""
    _check_ms(Ms)
    if not 0 <= i < Ms:
        raise IndexError(f"user {i} out of range for Ms = {Ms}")
    out = []
    for mask in range(1, 1 << Ms):
        if mask >> i & 1:
            out.append(tuple(j for j in range(Ms) if mask >> j & 1))
    return out


def _rate_slack_table(gains_row, a_i, R):
    """For every bitmask, ``log2(1 + sum gains / a) - sum R`` over that mask."""
    return np.log2(1.0 + subset_sums(gains_row) / a_i) - subset_sums(R)


def mld_decodable_gains(G, a, R, slack=1e-9):
    """Decodability from received gains ``G[i, j]`` and noises ``a``."""
    Ms = len(R)
    _check_ms(Ms)
    R = np.asarray(R, dtype=float)
    for i in range(Ms):
        tab = _rate_slack_table(G[i], a[i], R)
        masks = [m for m in range(1, 1 << Ms) if m >> i & 1]
        if np.min(tab[masks]) < -slack:
            return False
    return True


def mld_decodable(cfg, channels, beams, R, slack=1e-9):
    """Every user i decodable at receiver i for all joint-decoding sets containing i."""
    return mld_decodable_gains(received_gains(channels, beams), effective_noise_all(cfg, channels), R, slack)


def mld_full_region_decodable(cfg, channels, beams, R, slack=1e-9):
    """Stronger test: every nonempty subset at every receiver."""
    G = received_gains(channels, beams)
    a = effective_noise_all(cfg, channels)
    R = np.asarray(R, dtype=float)
    _check_ms(cfg.Ms)
    return all(np.min(_rate_slack_table(G[i], a[i], R)[1:]) >= -slack for i in range(cfg.Ms))


def mld_common_rate(G, a, rho):
    """Largest ``x`` such that ``x * rho`` passes the MLD decodability test."""
    Ms = len(rho)
    _check_ms(Ms)
    best = np.inf
    for i in range(Ms):
        cap = np.log2(1.0 + subset_sums(G[i]) / a[i])
        wts = subset_sums(rho)
        for mask in range(1, 1 << Ms):
            if mask >> i & 1:
                best = min(best, cap[mask] / wts[mask])
    return float(best)


# ---------------------------------------------------------------------------
# QCQP / SDP


@dataclass
class QcqpProblem:
    A: np.ndarray
    constraints_rate: list
    constraints_margin: list
    sets: list = field(default_factory=list)


@dataclass
class SdpSolution:
    X: np.ndarray
    objective: float
    status: str


def _block(Ms, Ns, blocks):
    M = np.zeros((Ms * Ns, Ms * Ns), dtype=complex)
    for j, B in blocks.items():
        M[j * Ns:(j + 1) * Ns, j * Ns:(j + 1) * Ns] = B
    return M


def build_qcqp(cfg, channels, rho_rates):
    """Quadratic forms of the MLD rate and margin constraints.

    Rate constraint ``(i, V)`` reads ``w^H B w - c <= 0`` with
    ``B = blockdiag(-h_ij^H h_ij for j in V)`` and ``c = (1 - 2^{sum_V R}) a_i``.
    """
    R = np.asarray(rho_rates, dtype=float)
    if np.any(R < 0):
        raise ValueError("target rates must be nonnegative")
    Ms, Ns = cfg.Ms, cfg.Ns
    a = effective_noise_all(cfg, channels)
    A = np.kron(np.diag(cfg.alpha), np.eye(Ns)).astype(complex)
    rate, sets = [], []
    for i in range(Ms):
        for V in enumerate_decoding_sets(i, Ms):
            h = channels.Hss[i]
            B = _block(Ms, Ns, {j: -np.outer(h[j].conj(), h[j]) for j in V})
            c = (1.0 - 2.0 ** float(np.sum(R[list(V)]))) * a[i]
            rate.append((B, c))
            sets.append((i, V))
    margin = []
    for i in range(cfg.Mp):
        h = channels.Hps[i]
        margin.append((_block(Ms, Ns, {j: np.outer(h[j].conj(), h[j]) for j in range(Ms)}), float(cfg.beta[i])))
    return QcqpProblem(A, rate, margin, sets)


def quadratic_value(M, w):
    return float(np.real(w.conj() @ M @ w))


def sdp_relax_solve(problem, solver="CLARABEL", feas_tol=1e-6):
    """Solve the SDP relaxation ``min tr(AX)`` over ``X >= 0`` and the linearized constraints."""
    n = problem.A.shape[0]
    if n > 64:
        raise CapExceeded(f"SDP side {n} exceeds 64")
    X = cp.Variable((n, n), hermitian=True)
    cons = [X >> 0]
    cons += [cp.real(cp.trace(B @ X)) <= c for B, c in problem.constraints_rate]
    cons += [cp.real(cp.trace(B @ X)) <= b for B, b in problem.constraints_margin]
    prob = cp.Problem(cp.Minimize(cp.real(cp.trace(problem.A @ X))), cons)
    try:
        with warnings.catch_warnings():
            # inaccurate solves are reported through the returned status
            warnings.simplefilter("ignore", UserWarning)
            prob.solve(solver=solver, **SOLVER_SETTINGS.get(solver, {}))
    except cp.error.SolverError:
        return SdpSolution(np.zeros((n, n), dtype=complex), np.inf, MAXITER)
    if prob.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return SdpSolution(np.zeros((n, n), dtype=complex), np.inf, INFEASIBLE)
    if prob.status != cp.OPTIMAL or X.value is None:
        return SdpSolution(np.zeros((n, n), dtype=complex), np.inf, MAXITER)
    Xv = 0.5 * (X.value + X.value.conj().T)
    viol = max([np.real(np.trace(B @ Xv)) - c for B, c in problem.constraints_rate]
               + [np.real(np.trace(B @ Xv)) - b for B, b in problem.constraints_margin] + [0.0])
    tr = float(np.real(np.trace(Xv)))
    if viol > feas_tol or np.linalg.eigvalsh(Xv)[0] < -1e-7 * max(tr, 1.0):
        return SdpSolution(Xv, float(prob.value), MAXITER)
    return SdpSolution(Xv, float(np.real(np.trace(problem.A @ Xv))), OPTIMAL)


# ---------------------------------------------------------------------------
# rank-1 recovery


@dataclass
class MldPowerResult:
    status: str
    beams: np.ndarray
    objective: float
    sdp_objective: float = np.nan
    reason: str = ""

    @property
    def optimal(self):
        return self.status == OPTIMAL


def _directions_from(X, cfg, channels):
    Ms, Ns = cfg.Ms, cfg.Ns
    fallback = matched_directions(cfg, channels)
    try:
        v, _ = dominant_eigenvector(X)
    except ZeroMatrix:
        return fallback
    D = v.reshape(Ms, Ns)
    norms = np.linalg.norm(D, axis=1)
    out = fallback.copy()
    ok = norms > 1e-9 * max(np.max(norms), 1e-300)
    out[ok] = D[ok] / norms[ok, None]
    return out


def power_fit_lp(cfg, channels, directions, rho_rates):
    """Per-user powers along fixed directions minimizing the weighted power.

    Returns the power vector or None when the LP is infeasible.
    """
    R = np.asarray(rho_rates, dtype=float)
    Ms = cfg.Ms
    G = received_gains(channels, directions)
    a = effective_noise_all(cfg, channels)
    rows, rhs = [], []
    for i in range(Ms):
        for V in enumerate_decoding_sets(i, Ms):
            row = np.zeros(Ms)
            row[list(V)] = -G[i, list(V)]
            rows.append(row)
            rhs.append(-(2.0 ** float(np.sum(R[list(V)])) - 1.0) * a[i])
    if cfg.Mp:
        M = np.abs(np.einsum("ijk,jk->ij", channels.Hps, directions)) ** 2
        rows.extend(M)
        rhs.extend(cfg.beta)
    res = linprog(cfg.alpha, A_ub=np.array(rows), b_ub=np.array(rhs), bounds=[(0, None)] * Ms,
                  method="highs", options={"primal_feasibility_tolerance": 1e-10,
                                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        return None
    p = np.maximum(res.x, 0.0)
    # lift the rate rows onto exact feasibility; roundoff-sized only
    n_rate = len(rhs) - cfg.Mp
    lhs = -np.array(rows[:n_rate]) @ p
    need = -np.array(rhs[:n_rate])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(need > 0, need / lhs, 0.0)
    t = float(np.max(ratio, initial=1.0))
    if not np.isfinite(t) or t > 1.0 + 1e-6:
        return None
    return p * max(t, 1.0)


def rank1_recover(sdp, problem, cfg, channels, rho_rates, slack=1e-6):
    if sdp.status != OPTIMAL:
        raise ValueError("rank-1 recovery needs an Optimal SDP solution")
    D = _directions_from(sdp.X, cfg, channels)
    p = power_fit_lp(cfg, channels, D, rho_rates)
    if p is None:
        return MldPowerResult(INFEASIBLE, np.zeros_like(D), np.inf, sdp.objective, "lp")
    beams = np.sqrt(p)[:, None] * D
    if not (mld_decodable(cfg, channels, beams, rho_rates, slack)
            and np.all(primary_interference_all(cfg, channels, beams) <= cfg.beta + slack)):
        return MldPowerResult(INFEASIBLE, beams, np.inf, sdp.objective, "verify")
    return MldPowerResult(OPTIMAL, beams, weighted_sum_power(cfg, beams), sdp.objective)


def mld_power_min(cfg, channels, rho_rates):
    """Relax, recover and refit: the full MLD power-min pipeline."""
    problem = build_qcqp(cfg, channels, rho_rates)
    sdp = sdp_relax_solve(problem)
    if sdp.status != OPTIMAL:
        return MldPowerResult(INFEASIBLE, np.zeros((cfg.Ms, cfg.Ns), dtype=complex), np.inf,
                              sdp.objective, "sdp-" + sdp.status.lower())
    return rank1_recover(sdp, problem, cfg, channels, rho_rates)


# ---------------------------------------------------------------------------
# rate optimization


def matching_mld_rate(cfg, channels):
    beams = channel_matching_beams(cfg, channels, "lower")
    G = received_gains(channels, beams)
    return mld_common_rate(G, effective_noise_all(cfg, channels), cfg.rho), beams


def mld_rate_search(cfg, channels, P0=None, delta=1e-3):
    """Bisection on the common rate scale with the MLD power-min pipeline as oracle.

    Returns ``(rho_star, beams, steps)``.
    """
    if P0 is not None:
        cfg = cfg.with_P0(P0)
    rho_min, beams = matching_mld_rate(cfg, channels)
    rho_max = max(genie_rate_upper(cfg, channels), rho_min)
    steps = 0
    while rho_max - rho_min > delta:
        rho0 = 0.5 * (rho_min + rho_max)
        res = mld_power_min(cfg, channels, rho0 * cfg.rho)
        steps += 1
        if res.optimal and res.objective <= cfg.P0:
            rho_min, beams = rho0, res.beams
        else:
            rho_max = rho0
    return rho_min, beams, steps


def mld_rate_opt(cfg, channels, P0=None, delta=1e-3):
    rho_star, beams, _ = mld_rate_search(cfg, channels, P0, delta)
    return rho_star, beams
