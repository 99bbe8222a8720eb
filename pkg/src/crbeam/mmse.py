"""Power minimization and rate optimization for single-user (MMSE) decoding.

The power-min problem is solved in its scaled form (targets 1 after scaling)
by projected subgradient ascent on the Lagrange dual of the primary margin
constraints.  Each dual evaluation whitens the channels with the margin
multipliers and solves a classic downlink power-min problem through its
virtual uplink.  The per-transmitter kernels below are shared with the
distributed simulator so both paths produce the same numbers.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.linalg import solve_triangular

from .errors import InnerInfeasible, NotPositiveDefinite
from .complex_linalg import cholesky_upper
from .network import (
    channel_matching_beams,
    effective_noise_all,
    feasibility_necessary,
    mmse_rates,
    primary_interference_all,
    received_sinr_all,
    scaled_problem,
    weighted_sum_power,
)

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"

NU_CAP = 1e12


@dataclass
class DualState:
    lam: np.ndarray
    iteration: int = 0
    best_value: float = -np.inf
    best_lambda: np.ndarray = None
    history: list = field(default_factory=list)


@dataclass
class PowerMinResult:
    status: str
    beams: np.ndarray
    objective: float
    dual_value: float
    dual: DualState
    reason: str = ""
    evaluations: int = 0

    @property
    def optimal(self):
        return self.status == OPTIMAL


@dataclass(frozen=True)
class Algorithm1Options:
    max_outer: int = 2000
    tol: float = 1e-6
    max_inner: int = 5000
    inner_tol: float = 1e-12
    upper_cutoff: float = np.inf
    polish: bool = True
    kkt_tol: float = 1e-9
    polish_steps: int = 40
    verify_slack: float = 1e-6
    record_history: bool = False


class DualEval(NamedTuple):
    lam: np.ndarray
    g: float
    wtilde: np.ndarray
    s: np.ndarray
    nu: np.ndarray


# ---------------------------------------------------------------------------
# per-transmitter kernels


def whitening_factor(hps_col, lam):
    """Upper Cholesky factor of ``I + sum_j lam_j hps_col[j]^H hps_col[j]``."""
    ns = hps_col.shape[-1]
    A = np.eye(ns, dtype=complex)
    for j in range(len(lam)):
        if lam[j] != 0.0:
            h = hps_col[j]
            A = A + lam[j] * np.outer(h.conj(), h)
    return cholesky_upper(A)


def whiten_column(hss_col, U):
    """Rows ``h U^{-1}`` for every receiver row ``h`` in ``hss_col``."""
    return solve_triangular(U, hss_col.T, trans="T", lower=False).T


def uplink_statistic(hhat_col, nu, i):
    """``x = h_ii Sigma^{-1} h_ii^H`` and ``Sigma^{-1} h_ii^H`` for transmitter i."""
    ns = hhat_col.shape[-1]
    Sigma = np.eye(ns, dtype=complex) + (hhat_col.conj().T * nu) @ hhat_col
    v = np.linalg.solve(Sigma, hhat_col[i].conj())
    return float(np.real(hhat_col[i] @ v)), v


def gain_column(hhat_col, u):
    """``|hhat[j, i] u|^2`` for every receiver j, for one transmitter's beam ``u``."""
    return np.abs(hhat_col @ u) ** 2


def normalized_interference(hps_row, wtilde):
    """``sum_i |hps_row[i] wtilde_i|^2`` seen at one primary receiver."""
    return float(np.sum(np.abs(np.sum(hps_row * wtilde, axis=1)) ** 2))


def downlink_powers(G, a, gamma_targets):
    """Powers meeting every downlink SINR target with equality.

    Solves ``(G_ii / gamma_i) p_i - sum_{j != i} G_ij p_j = a_i``; raises
    InnerInfeasible when the system is singular or yields a negative power.
    """
    M = -np.array(G, dtype=float)
    d = np.diag(G) / gamma_targets
    np.fill_diagonal(M, d)
    try:
        p = np.linalg.solve(M, a)
    except np.linalg.LinAlgError as exc:
        raise InnerInfeasible("downlink power system is singular") from exc
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise InnerInfeasible("downlink power system has no nonnegative solution")
    return p


# ---------------------------------------------------------------------------
# inner solver


def _whitened(lam, scaled):
    Ms = scaled.hss_t.shape[0]
    Us, cols = [], []
    for i in range(Ms):
        U = whitening_factor(scaled.hps_t[:, i], lam)
        Us.append(U)
        cols.append(whiten_column(scaled.hss_t[:, i], U))
    # hhat[j, i] = hss_t[j, i] U_i^{-1}
    return Us, np.stack(cols, axis=1)


def uplink_statistics_all(hhat, nu):
    """Vectorized :func:`uplink_statistic` over all transmitters."""
    Ms, _, ns = hhat.shape
    diag = hhat[np.arange(Ms), np.arange(Ms)]
    Sigma = np.eye(ns) + np.einsum("jik,j,jil->ikl", hhat.conj(), nu, hhat)
    v = np.linalg.solve(Sigma, diag.conj()[..., None])[..., 0]
    return np.real(np.einsum("ik,ik->i", diag, v)), v


def uplink_update_all(x, gamma_targets):
    with np.errstate(divide="ignore"):
        return np.where(x > 0, 1.0 / ((1.0 + 1.0 / gamma_targets) * x), np.inf)


def iterate_fixed_point(step, Ms, nu0=None, tol=1e-12, max_iter=5000):
    """Drive ``nu <- step(nu)`` to a relative tolerance; shared by both solvers."""
    nu = np.zeros(Ms) if nu0 is None else np.array(nu0, dtype=float)
    for _ in range(max_iter):
        new = step(nu)
        if not np.all(np.isfinite(new)) or np.any(new > NU_CAP):
            return new, False
        done = np.max(np.abs(new - nu) / new) <= tol
        nu = new
        if done:
            return nu, True
    return nu, False


def virtual_uplink_fixed_point(hhat, gamma_targets, nu0=None, tol=1e-12, max_iter=5000):
    """Jacobi iteration for the virtual uplink powers.

    Returns ``(nu, converged)``.  From ``nu = 0`` the iterates are
    componentwise nondecreasing; divergence past ``NU_CAP`` means the SINR
    targets cannot be met.
    """
    Ms = hhat.shape[0]
    gamma_targets = np.broadcast_to(np.asarray(gamma_targets, dtype=float), (Ms,))
    return iterate_fixed_point(lambda nu: uplink_update_all(uplink_statistics_all(hhat, nu)[0], gamma_targets),
                               Ms, nu0, tol, max_iter)


def downlink_directions(hhat, nu):
    _, v = uplink_statistics_all(hhat, nu)
    with np.errstate(divide="ignore", invalid="ignore"):
        return v / np.linalg.norm(v, axis=1, keepdims=True)


def beam_power(row):
    return float(np.sum(np.abs(row) ** 2))


def downlink_power_scaling(nu, hhat, a, gamma_targets):
    """Beams ``what`` (rows) in whitened coordinates, plus the unit directions."""
    Ms = hhat.shape[0]
    gamma_targets = np.broadcast_to(np.asarray(gamma_targets, dtype=float), (Ms,))
    dirs = downlink_directions(hhat, nu)
    G = np.empty((Ms, Ms))
    for i in range(Ms):
        G[:, i] = gain_column(hhat[:, i], dirs[i])
    p = downlink_powers(G, np.asarray(a, dtype=float), gamma_targets)
    return np.sqrt(p)[:, None] * dirs, dirs


def _evaluate(lam, scaled, nu0=None, opts=Algorithm1Options()):
    lam = np.asarray(lam, dtype=float)
    Ms = scaled.hss_t.shape[0]
    Us, hhat = _whitened(lam, scaled)
    nu, ok = virtual_uplink_fixed_point(hhat, np.ones(Ms), nu0, opts.inner_tol, opts.max_inner)
    if not ok and (not np.all(np.isfinite(nu)) or np.any(nu > NU_CAP)):
        raise InnerInfeasible("virtual uplink powers diverge")
    what, _ = downlink_power_scaling(nu, hhat, scaled.noise, np.ones(Ms))
    wtilde = np.stack([solve_triangular(Us[i], what[i], lower=False) for i in range(Ms)])
    g = dual_value(what, lam)
    return DualEval(lam, g, wtilde, subgradient_vector(scaled.hps_t, wtilde), nu)


def dual_value(what, lam):
    """``sum_i |what_i|^2 - sum_j lam_j`` accumulated row by row."""
    return float(np.sum([beam_power(row) for row in what]) - np.sum(lam))


def subgradient_vector(hps_t, wtilde):
    return 1.0 - np.array([normalized_interference(hps_t[j], wtilde) for j in range(hps_t.shape[0])])


def dual_function(lam, scaled, cfg=None, opts=Algorithm1Options()):
    """Dual value ``g(lam)`` and the inner minimizer in scaled-beam coordinates."""
    ev = _evaluate(lam, scaled, opts=opts)
    return ev.g, ev.wtilde


def subgradient(lam, wtilde, scaled):
    """``s_j = 1 - sum_i |hps_t[j, i] wtilde_i|^2``; ascent direction is ``-s``."""
    return subgradient_vector(scaled.hps_t, wtilde)


# ---------------------------------------------------------------------------
# dual ascent driver


def kkt_residual(lam, s, p_ref):
    return np.minimum(lam / p_ref, s)


def _polish(evaluate, ev, p_ref, opts):
    """Semismooth Newton on ``min(lam / p_ref, s(lam)) = 0``.

    Returns the evaluation at a KKT point, or None when the local model
    fails to make progress.
    """
    Mp = len(ev.lam)
    phi = kkt_residual(ev.lam, ev.s, p_ref)
    for _ in range(opts.polish_steps):
        if np.max(np.abs(phi)) <= opts.kkt_tol:
            return ev
        Js = np.empty((Mp, Mp))
        for j in range(Mp):
            h = 1e-6 * max(p_ref, ev.lam[j])
            lam_h = ev.lam.copy()
            lam_h[j] += h
            Js[:, j] = (evaluate(lam_h, ev.nu).s - ev.s) / h
        J = Js.copy()
        on_lam = ev.lam / p_ref < ev.s
        J[on_lam] = 0.0
        J[on_lam, np.flatnonzero(on_lam)] = 1.0 / p_ref
        try:
            d = np.linalg.solve(J, -phi)
        except np.linalg.LinAlgError:
            d = np.linalg.lstsq(J, -phi, rcond=None)[0]
        norm0 = np.linalg.norm(phi)
        t = 1.0
        for _ in range(12):
            trial = evaluate(np.maximum(ev.lam + t * d, 0.0), ev.nu)
            phi_t = kkt_residual(trial.lam, trial.s, p_ref)
            if np.linalg.norm(phi_t) <= (1.0 - 1e-4 * t) * norm0:
                break
            t *= 0.5
        else:
            return None
        ev, phi = trial, phi_t
    return ev if np.max(np.abs(phi)) <= opts.kkt_tol else None


def _polish_schedule(max_outer):
    k, out = 25, {1}
    while k <= max_outer:
        out.add(k)
        k *= 2
    return out


def _ray_probe(evaluate, ev, p_ref, cutoff, max_doublings=40):
    """Doubling search along the projected ascent direction.

    Any dual value is a lower bound on the primal optimum, so a probe value
    above ``cutoff`` certifies that the optimum exceeds it.
    """
    d = np.maximum(ev.lam - ev.s, 0.0) - ev.lam
    if not np.any(d):
        return
    prev = ev.g
    t = p_ref
    for _ in range(max_doublings):
        trial = evaluate(np.maximum(ev.lam + t * d, 0.0), ev.nu)
        if trial.g > cutoff or trial.g <= prev:
            return
        prev = trial.g
        t *= 2.0


def dual_ascent(evaluate: Callable, Mp: int, opts: Algorithm1Options,
                on_iterate: Optional[Callable] = None):
    """Projected subgradient ascent with step ``p_ref / k``.

    ``evaluate(lam, nu0)`` must return a DualEval.  ``p_ref`` is the margin-free
    minimum power ``g(0)``; it sets the dual scale.  Every evaluated dual
    value is a valid lower bound, so the running best covers polish and
    probe evaluations too.  Returns ``(state, final_eval, reason)`` with the
    reason one of ``"kkt"``, ``"step"``, ``"cutoff"`` or ``"max_outer"``.
    """
    state = DualState(lam=np.zeros(Mp), best_lambda=np.zeros(Mp))

    def tracked(lam, nu0):
        ev = evaluate(lam, nu0)
        if ev.g > state.best_value:
            state.best_value, state.best_lambda = ev.g, ev.lam.copy()
        return ev

    ev = tracked(np.zeros(Mp), None)
    if opts.record_history:
        state.history.append(state.best_value)
    if Mp == 0:
        return state, ev, "kkt"
    p_ref = max(ev.g, 1e-300)
    schedule = _polish_schedule(opts.max_outer) if opts.polish else set()

    def try_polish(ev):
        pol = _polish(tracked, ev, p_ref, opts)
        if pol is not None:
            state.lam = pol.lam.copy()
        return pol

    for k in range(1, opts.max_outer + 1):
        state.iteration = k
        if k in schedule:
            pol = try_polish(ev)
            if pol is not None:
                return state, pol, "kkt"
            if np.isfinite(opts.upper_cutoff):
                _ray_probe(tracked, ev, p_ref, opts.upper_cutoff)
        if state.best_value > opts.upper_cutoff:
            return state, ev, "cutoff"
        lam_new = np.maximum(ev.lam - (p_ref / k) * ev.s, 0.0)
        step = np.max(np.abs(lam_new - ev.lam))
        ev = tracked(lam_new, ev.nu)
        state.lam = ev.lam.copy()
        if opts.record_history:
            state.history.append(state.best_value)
        if on_iterate is not None:
            on_iterate(k, ev)
        if step < opts.tol * p_ref:
            if opts.polish:
                pol = try_polish(ev)
                if pol is not None:
                    return state, pol, "kkt"
            return state, ev, "step"
    return state, ev, "max_outer"


def _infeasible(cfg, state, reason, evaluations=0):
    if state is None:
        state = DualState(lam=np.zeros(cfg.Mp), best_lambda=np.zeros(cfg.Mp))
    return PowerMinResult(INFEASIBLE, np.zeros((cfg.Ms, cfg.Ns), dtype=complex), np.inf,
                          state.best_value, state, reason, evaluations)


def beams_meet_targets(cfg, channels, beams, gamma, slack):
    sinr = received_sinr_all(cfg, channels, beams)
    J = primary_interference_all(cfg, channels, beams)
    return bool(np.all(sinr >= gamma - slack) and np.all(J <= cfg.beta + slack))


def finish_power_min(cfg, channels, gamma, state, ev, reason, opts, evaluations):
    """Turn a finished dual run into a PowerMinResult (shared with the simulator)."""
    if reason in ("cutoff", "max_outer"):
        return _infeasible(cfg, state, reason, evaluations)
    beams = ev.wtilde / np.sqrt(cfg.alpha)[:, None]
    if not beams_meet_targets(cfg, channels, beams, gamma, opts.verify_slack):
        return _infeasible(cfg, state, "recovery", evaluations)
    objective = weighted_sum_power(cfg, beams)
    dual_value = objective if cfg.Mp == 0 else max(state.best_value, ev.g)
    return PowerMinResult(OPTIMAL, beams, objective, dual_value, state, reason, evaluations)


def algorithm1_power_min(cfg, channels, gamma, opts=Algorithm1Options()):
    """Minimum weighted sum power meeting SINR targets ``gamma`` and all margins."""
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (cfg.Ms,))
    scaled = scaled_problem(cfg, channels, gamma)
    if not feasibility_necessary(scaled, cfg):
        return _infeasible(cfg, None, "rank")
    count = [0]

    def evaluate(lam, nu0):
        count[0] += 1
        return _evaluate(lam, scaled, nu0, opts)

    try:
        state, ev, reason = dual_ascent(evaluate, cfg.Mp, opts)
    except (InnerInfeasible, NotPositiveDefinite):
        return _infeasible(cfg, None, "inner", count[0])
    return finish_power_min(cfg, channels, gamma, state, ev, reason, opts, count[0])


def duality_gap(result):
    if result.status != OPTIMAL:
        raise ValueError("duality gap is defined only for Optimal results")
    return (result.objective - result.dual_value) / max(result.objective, 1e-12)


# ---------------------------------------------------------------------------
# rate optimization


@dataclass(frozen=True)
class RateOptOptions:
    delta: float = 1e-3
    power_min: Algorithm1Options = Algorithm1Options()


def matching_rate_lower(cfg, channels):
    """Common rate scale reached by the lower-mode matching beams."""
    beams = channel_matching_beams(cfg, channels, "lower")
    return float(np.min(mmse_rates(cfg, channels, beams) / cfg.rho)), beams


def genie_rate_upper(cfg, channels):
    a = effective_noise_all(cfg, channels)
    gain = np.sum(np.abs(channels.Hss[np.arange(cfg.Ms), np.arange(cfg.Ms)]) ** 2, axis=1)
    return float(np.min(np.log2(1.0 + cfg.P0 * gain / (cfg.alpha * a)) / cfg.rho))


@dataclass
class RateOptResult:
    rho_star: float
    beams: np.ndarray
    steps: int
    rho_upper: float


def rate_opt(cfg, channels, opts=RateOptOptions()):
    """Bisection on the common rate scale with Algorithm 1 as feasibility oracle."""
    rho_min, beams = matching_rate_lower(cfg, channels)
    rho_max = max(genie_rate_upper(cfg, channels), rho_min)
    pm_opts = replace(opts.power_min, upper_cutoff=cfg.P0)
    steps = 0
    while rho_max - rho_min > opts.delta:
        rho0 = 0.5 * (rho_min + rho_max)
        gamma = 2.0 ** (rho0 * cfg.rho) - 1.0
        res = algorithm1_power_min(cfg, channels, gamma, pm_opts)
        steps += 1
        if res.status == OPTIMAL and res.objective <= cfg.P0:
            rho_min, beams = rho0, res.beams
        else:
            rho_max = rho0
    return RateOptResult(rho_min, beams, steps, rho_max)


def algorithm2_rate_opt(cfg, channels, opts=RateOptOptions()):
    """Returns ``(rho_star, beams)``; see :func:`rate_opt`."""
    res = rate_opt(cfg, channels, opts)
    return res.rho_star, res.beams


def matching_power_min(cfg, channels, gamma):
    """Least power meeting the SINR targets with beams fixed along ``h_ii^H``.

    Returns ``(feasible, beams, power)``; infeasible when the equality power
    system has no nonnegative solution or the result breaks a margin.
    """
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (cfg.Ms,))
    D = channel_matching_beams(cfg, channels, "fixed", power=1.0)
    G = np.abs(np.einsum("ijk,jk->ij", channels.Hss, D)) ** 2
    try:
        p = downlink_powers(G, effective_noise_all(cfg, channels), gamma)
    except InnerInfeasible:
        return False, np.zeros_like(D), np.inf
    beams = np.sqrt(p)[:, None] * D
    if not np.all(primary_interference_all(cfg, channels, beams) <= cfg.beta):
        return False, beams, np.inf
    return True, beams, weighted_sum_power(cfg, beams)
