"""Per-seed experiment pipelines producing one result row per method."""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .distsim import run_algorithm1_distributed, run_algorithm4_distributed
from .errors import CRBeamError
from .mld import matching_mld_rate, mld_decodable_gains, mld_rate_search
from .mmse import Algorithm1Options, RateOptOptions, algorithm1_power_min, matching_power_min, rate_opt
from .network import (
    NetworkConfig,
    channel_matching_beams,
    effective_noise_all,
    margin_satisfied,
    mmse_rates,
    received_gains,
    received_sinr_all,
    sample_channels,
    weighted_sum_power,
)
from .ugd import algorithm4, algorithm4mld, effective_network, strict_fair_rate, ugd_decodable

log = logging.getLogger(__name__)

EXPERIMENTS = ("powermin", "rateopt", "mld", "ugd_alloc",
               "fig1", "fig2", "fig3", "fig4", "fig5", "fig6")
COLUMNS = ("seed", "experiment", "method", "min_rate", "sum_rate", "sum_power",
           "feasible", "iterations", "wall_time_ms")
FEAS_SLACK = 1e-6


@dataclass(frozen=True)
class Tolerances:
    bisection_delta: float = 1e-3
    conv_eps: float = 1e-6
    max_outer: int = 2000
    max_inner: int = 5000
    max_rounds: int = 4

    def power_min(self):
        return Algorithm1Options(max_outer=self.max_outer, tol=self.conv_eps,
                                 max_inner=self.max_inner)

    def rate_opt(self):
        return RateOptOptions(delta=self.bisection_delta, power_min=self.power_min())


@dataclass(frozen=True)
class Scenario:
    experiment: str
    network: NetworkConfig
    seeds: tuple = tuple(range(20))
    gamma_override: Optional[np.ndarray] = None
    tolerances: Tolerances = field(default_factory=Tolerances)

    def gamma(self):
        if self.gamma_override is not None:
            return np.broadcast_to(self.gamma_override, (self.network.Ms,))
        if self.experiment == "fig3":
            return np.full(self.network.Ms, 2.0)
        return self.network.default_gamma()


@dataclass
class ResultRow:
    seed: int
    experiment: str
    method: str
    min_rate: float = float("nan")
    sum_rate: float = float("nan")
    sum_power: float = float("nan")
    feasible: bool = False
    iterations: int = 0
    wall_time_ms: Optional[float] = None

    def values(self):
        return tuple(getattr(self, c) for c in COLUMNS)


def preset(experiment):
    """Default scenario for each experiment at desk scale."""
    if experiment in ("fig3", "fig4"):
        P0 = 10.0 if experiment == "fig4" else 100.0
        cfg = NetworkConfig(Ms=3, Mp=4, Ns=4, Np=4, P0=P0)
    else:
        cfg = NetworkConfig(Ms=3, Mp=2, Ns=3, Np=3, P0=100.0)
    return Scenario(experiment, cfg)


class _Clock:
    def __init__(self):
        self.t0 = time.perf_counter()

    def ms(self):
        return 1e3 * (time.perf_counter() - self.t0)


def _row(seed, exp, method, rates, power, feasible, iterations, clock):
    rates = np.asarray(rates, dtype=float)
    return ResultRow(seed, exp, method, float(np.min(rates)), float(np.sum(rates)),
                     float(power), bool(feasible), int(iterations), clock.ms())


def _budget_ok(cfg, channels, beams):
    power = weighted_sum_power(cfg, beams)
    return power <= cfg.P0 * (1 + FEAS_SLACK) and margin_satisfied(cfg, channels, beams, FEAS_SLACK)


def _mmse_row(seed, exp, cfg, ch, beams, iterations, clock, method="MMSE"):
    return _row(seed, exp, method, mmse_rates(cfg, ch, beams), weighted_sum_power(cfg, beams),
                _budget_ok(cfg, ch, beams), iterations, clock)


def _ugd_row(seed, exp, cfg, ch, beams, net, res, clock, method):
    ok = _budget_ok(cfg, ch, beams) and ugd_decodable(net, res.R_star)
    return _row(seed, exp, method, res.R_star, weighted_sum_power(cfg, beams), ok,
                res.iterations, clock)


def _optimized_beams(sc, ch):
    res = rate_opt(sc.network, ch, sc.tolerances.rate_opt())
    return res.beams, res.steps


# ---------------------------------------------------------------------------
# per-experiment pipelines; each returns a list of rows


def _powermin(sc, seed, ch, sink):
    cfg, gamma, clock = sc.network, sc.gamma(), _Clock()
    if sink is not None:
        res, runlog = run_algorithm1_distributed(cfg, ch, gamma, sc.tolerances.power_min())
        sink.append((seed, runlog))
    else:
        res = algorithm1_power_min(cfg, ch, gamma, sc.tolerances.power_min())
    iters = res.dual.iteration if res.dual is not None else 0
    if not res.optimal:
        return [ResultRow(seed, sc.experiment, "MMSE", iterations=iters, wall_time_ms=clock.ms())]
    ok = (bool(np.all(received_sinr_all(cfg, ch, res.beams) >= gamma * (1 - FEAS_SLACK)))
          and margin_satisfied(cfg, ch, res.beams, FEAS_SLACK))
    return [_row(seed, sc.experiment, "MMSE", mmse_rates(cfg, ch, res.beams),
                 res.objective, ok, iters, clock)]


def _rateopt(sc, seed, ch, sink):
    clock = _Clock()
    beams, steps = _optimized_beams(sc, ch)
    return [_mmse_row(seed, sc.experiment, sc.network, ch, beams, steps, clock)]


def _mld(sc, seed, ch, sink):
    cfg, clock = sc.network, _Clock()
    x, beams, steps = mld_rate_search(cfg, ch, delta=sc.tolerances.bisection_delta)
    return [_mld_row(seed, sc.experiment, cfg, ch, beams, x, steps, clock, "MLD")]


def _mld_row(seed, exp, cfg, ch, beams, x, iterations, clock, method):
    R = x * cfg.rho
    G = received_gains(ch, beams)
    ok = _budget_ok(cfg, ch, beams) and mld_decodable_gains(G, effective_noise_all(cfg, ch), R)
    return _row(seed, exp, method, R, weighted_sum_power(cfg, beams), ok, iterations, clock)


def _ugd_alloc(sc, seed, ch, sink):
    cfg, tol, exp = sc.network, sc.tolerances, sc.experiment
    clock = _Clock()
    beams, steps = _optimized_beams(sc, ch)
    rows = [_mmse_row(seed, exp, cfg, ch, beams, steps, clock)]
    clock = _Clock()
    net = effective_network(cfg, ch, beams)
    Rmin = mmse_rates(cfg, ch, beams)
    if sink is not None:
        res, runlog = run_algorithm4_distributed(cfg, ch, beams, Rmin, cfg.rho, tol.max_rounds)
        sink.append((seed, runlog))
    else:
        res = algorithm4(net, Rmin, cfg.rho, tol.max_rounds)
    rows.append(_ugd_row(seed, exp, cfg, ch, beams, net, res, clock, "UGD"))
    return rows


def _fig12(sc, seed, ch, sink):
    rows = _ugd_alloc(sc, seed, ch, None)
    cfg, clock = sc.network, _Clock()
    beams = channel_matching_beams(cfg, ch, "lower")
    rows.append(_mmse_row(seed, sc.experiment, cfg, ch, beams, 0, clock, "matching"))
    return rows


def _fig3(sc, seed, ch, sink):
    rows = _powermin(sc, seed, ch, None)
    cfg, clock = sc.network, _Clock()
    ok, beams, power = matching_power_min(cfg, ch, sc.gamma())
    if ok:
        rows.append(_row(seed, sc.experiment, "matching", mmse_rates(cfg, ch, beams),
                         power, True, 0, clock))
    else:
        rows.append(ResultRow(seed, sc.experiment, "matching", wall_time_ms=clock.ms()))
    return rows


def _fig4(sc, seed, ch, sink):
    rows = _mld(sc, seed, ch, None)
    cfg, clock = sc.network, _Clock()
    x, beams = matching_mld_rate(cfg, ch)
    rows.append(_mld_row(seed, sc.experiment, cfg, ch, beams, x, 0, clock, "matching"))
    return rows


def _fig56(sc, seed, ch, sink):
    cfg, exp, rounds = sc.network, sc.experiment, sc.tolerances.max_rounds
    clock = _Clock()
    beams = channel_matching_beams(cfg, ch, "lower")
    power = weighted_sum_power(cfg, beams)
    budget = _budget_ok(cfg, ch, beams)
    R_mmse = mmse_rates(cfg, ch, beams)
    rows = [_row(seed, exp, "MMSE", R_mmse, power, budget, 0, clock)]
    net = effective_network(cfg, ch, beams)
    zero = np.zeros(cfg.Ms)

    clock = _Clock()
    res = algorithm4mld(net, zero, cfg.rho, rounds)
    G = received_gains(ch, beams)
    ok = budget and mld_decodable_gains(G, effective_noise_all(cfg, ch), res.R_star)
    rows.append(_row(seed, exp, "MLD", res.R_star, power, ok, res.iterations, clock))

    clock = _Clock()
    ugd = algorithm4(net, zero, cfg.rho, rounds)
    rows.append(_ugd_row(seed, exp, cfg, ch, beams, net, ugd, clock, "UGD"))

    clock = _Clock()
    res = algorithm4(net, R_mmse, cfg.rho, rounds)
    rows.append(_ugd_row(seed, exp, cfg, ch, beams, net, res, clock, "UGD-MMSE"))

    clock = _Clock()
    R_sym = strict_fair_rate(ugd.trace[1], zero, cfg.rho)
    ok = budget and ugd_decodable(net, R_sym)
    rows.append(_row(seed, exp, "UGD-sym", R_sym, power, ok, 1, clock))
    return rows


PIPELINES = {
    "powermin": _powermin,
    "rateopt": _rateopt,
    "mld": _mld,
    "ugd_alloc": _ugd_alloc,
    "fig1": _fig12,
    "fig2": _fig12,
    "fig3": _fig3,
    "fig4": _fig4,
    "fig5": _fig56,
    "fig6": _fig56,
}
METHODS = {
    "powermin": ("MMSE",),
    "rateopt": ("MMSE",),
    "mld": ("MLD",),
    "ugd_alloc": ("MMSE", "UGD"),
    "fig1": ("MMSE", "UGD", "matching"),
    "fig2": ("MMSE", "UGD", "matching"),
    "fig3": ("MMSE", "matching"),
    "fig4": ("MLD", "matching"),
    "fig5": ("MMSE", "MLD", "UGD", "UGD-MMSE", "UGD-sym"),
    "fig6": ("MMSE", "MLD", "UGD", "UGD-MMSE", "UGD-sym"),
}


def run_seed(sc, seed, message_sink=None):
    """Rows for one channel realization; solver errors become infeasible rows."""
    try:
        ch = sample_channels(sc.network, seed)
        return PIPELINES[sc.experiment](sc, seed, ch, message_sink)
    except (CRBeamError, ValueError, np.linalg.LinAlgError) as exc:
        log.warning("seed %d (%s) failed: %s", seed, sc.experiment, exc)
        return [ResultRow(seed, sc.experiment, m) for m in METHODS[sc.experiment]]


def _run_seed_plain(args):
    sc, seed = args
    return run_seed(sc, seed)


def run_experiment(scenario, workers=1, message_sink=None, timing=False):
    """All rows of a scenario in seed order.

    Seeds run in a process pool when ``workers > 1``; message logs are only
    collected on the serial path.  Wall times are blanked unless ``timing``.
    """
    seeds = list(scenario.seeds)
    if workers > 1 and message_sink is None and len(seeds) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_seed = list(pool.map(_run_seed_plain, [(scenario, s) for s in seeds]))
    else:
        per_seed = [run_seed(scenario, s, message_sink) for s in seeds]
    rows = [r for chunk in per_seed for r in chunk]
    if not timing:
        rows = [replace(r, wall_time_ms=None) for r in rows]
    return rows
