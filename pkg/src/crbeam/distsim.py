"""Synchronous message-passing simulation of the distributed algorithms.

Agents are ``stx{i}``/``srx{i}`` (secondary transmitter/receiver pair i) and
``prx{j}`` (primary receiver j).  Every channel quantity an agent uses is
fetched through :class:`Environment.read`, which records the access, so the
knowledge assumptions can be audited after the run.  The numerical kernels
are the ones used by the centralized solvers, applied to each agent's local
slice, so the two paths agree to the last bit.
"""

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.linalg import solve_triangular

from .mmse import (
    Algorithm1Options,
    DualEval,
    InnerInfeasible,
    NU_CAP,
    _infeasible,
    dual_ascent,
    dual_value,
    downlink_directions,
    downlink_powers,
    finish_power_min,
    gain_column,
    iterate_fixed_point,
    normalized_interference,
    uplink_statistics_all,
    uplink_update_all,
    whiten_column,
    whitening_factor,
)
from .errors import NotPositiveDefinite
from .network import effective_noise_all, feasibility_necessary, scaled_problem
from .ugd import (
    AllocationResult,
    EffectiveNetwork,
    algorithm3,
    check_recommendations,
    effective_network,
)

BROADCAST = "*"


def stx(i):
    return f"stx{i}"


def srx(i):
    return f"srx{i}"


def prx(j):
    return f"prx{j}"


def agent_key(name):
    """Deterministic schedule order: primaries, then receivers, then transmitters."""
    for rank, prefix in enumerate(("prx", "srx", "stx")):
        if name.startswith(prefix):
            return rank, int(name[len(prefix):])
    return 99, name


@dataclass(frozen=True)
class KnowledgeView:
    agent: str
    readable: frozenset


def default_views(cfg):
    """Local channel knowledge of every agent.

    A secondary pair knows the outgoing rows of its transmitter, the incoming
    rows at its receiver, its effective noise and the effective channels its
    receiver measures.  A primary receiver knows its own measured
    interference and margin.
    """
    views = {}
    for i in range(cfg.Ms):
        keys = {("a", i)}
        for j in range(cfg.Ms):
            keys |= {("Hss", j, i), ("Hss", i, j), ("heff", i, j)}
        for j in range(cfg.Mp):
            keys.add(("Hps", j, i))
        for name in (stx(i), srx(i)):
            views[name] = KnowledgeView(name, frozenset(keys))
    for j in range(cfg.Mp):
        views[prx(j)] = KnowledgeView(prx(j), frozenset({("J", j), ("beta", j)}))
    return views


@dataclass
class Message:
    round: int
    sender: str
    to: str
    kind: str
    values: Any

    def record(self):
        vals = self.values
        if isinstance(vals, np.ndarray):
            vals = [None if not np.isfinite(v) else float(v) for v in vals.ravel()] \
                if vals.dtype.kind == "f" else [float(v) for v in vals.ravel()]
        elif isinstance(vals, float) and not np.isfinite(vals):
            vals = None
        return {"round": self.round, "from": self.sender, "to": self.to,
                "type": self.kind, "values": vals}


@dataclass
class RunLog:
    messages: list = field(default_factory=list)
    reads: list = field(default_factory=list)
    round: int = 0

    def next_round(self):
        self.round += 1

    def send(self, sender, kind, values, to=BROADCAST):
        self.messages.append(Message(self.round, sender, to, kind, values))

    def ordered(self):
        return sorted(self.messages, key=lambda m: (m.round, agent_key(m.sender)))

    def to_jsonl(self, path):
        with open(path, "w") as fh:
            for m in self.ordered():
                fh.write(json.dumps(m.record()) + "\n")

    def of_kind(self, kind):
        return [m for m in self.messages if m.kind == kind]


class Environment:
    """Physical quantities, served one read at a time with access tracking."""

    def __init__(self, cfg, channels, log):
        self.cfg = cfg
        self.channels = channels
        self.log = log
        self.a = effective_noise_all(cfg, channels)
        self._interference = None
        self._heff = None

    def read(self, agent, key):
        self.log.reads.append((self.log.round, agent, key))
        kind = key[0]
        if kind == "Hss":
            return self.channels.Hss[key[1], key[2]]
        if kind == "Hps":
            return self.channels.Hps[key[1], key[2]]
        if kind == "a":
            return self.a[key[1]]
        if kind == "beta":
            return self.cfg.beta[key[1]]
        if kind == "J":
            return self._interference(key[1])
        if kind == "heff":
            return self._heff[key[1], key[2]]
        raise KeyError(key)

    def transmit_scaled(self, hps_t, wtilde):
        """Secondary transmitters emit ``wtilde``; primaries can now measure it."""
        self._interference = lambda j: normalized_interference(hps_t[j], wtilde)

    def transmit(self, beams):
        self._heff = effective_network(self.cfg, self.channels, beams).h


def locality_audit(log, views):
    """True iff every recorded read lies inside the reader's view."""
    for _, agent, key in log.reads:
        view = views.get(agent)
        if view is None or key not in view.readable:
            return False
    return True


# ---------------------------------------------------------------------------
# Algorithm 1


class _SecondaryPair:
    """Local state of secondary pair i during the power-min run."""

    def __init__(self, env, cfg, i, gamma_i):
        self.i, self.Ms = i, cfg.Ms
        name = stx(i)
        alpha_i = cfg.alpha[i]
        # scaled outgoing rows, same arithmetic as the centralized scaling
        col = np.array([env.read(name, ("Hss", j, i)) for j in range(cfg.Ms)], dtype=complex)
        col = col / np.sqrt(alpha_i)
        col[i] = env.read(name, ("Hss", i, i)) / np.sqrt(alpha_i * gamma_i)
        self.hss_col = col
        self.hps_raw = np.array([env.read(name, ("Hps", j, i)) for j in range(cfg.Mp)],
                                dtype=complex).reshape(cfg.Mp, cfg.Ns)
        self.alpha = alpha_i
        self.hps_col = None

    def learn_margins(self, betas):
        self.hps_col = self.hps_raw / np.sqrt(np.asarray(betas)[:, None] * self.alpha)

    def whiten(self, lam):
        self.U = whitening_factor(self.hps_col, lam)
        self.hhat_col = whiten_column(self.hss_col, self.U)

    def _padded(self):
        pad = np.zeros((self.Ms, self.Ms, self.hhat_col.shape[1]), dtype=complex)
        pad[:, self.i] = self.hhat_col
        return pad

    def uplink_statistic(self, nu):
        return uplink_statistics_all(self._padded(), nu)[0][self.i]

    def direction(self, nu):
        self.u = downlink_directions(self._padded(), nu)[self.i]
        return gain_column(self.hhat_col, self.u)

    def transmit(self, p):
        self.what = np.sqrt(p)[self.i] * self.u
        self.wtilde = solve_triangular(self.U, self.what, lower=False)


def run_algorithm1_distributed(cfg, channels, gamma, opts=Algorithm1Options()):
    """Message-passing run of the power-min dual ascent.

    Returns ``(PowerMinResult, RunLog)``.  Primary receiver j owns ``lam_j``:
    it measures its normalized interference, reports ``s_j`` and broadcasts
    its multiplier; every primary runs the same deterministic step rule on
    the same broadcast data.  Secondary pairs run the virtual-uplink fixed
    point by broadcasting their uplink powers.
    """
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (cfg.Ms,))
    log = RunLog()
    env = Environment(cfg, channels, log)
    if not feasibility_necessary(scaled_problem(cfg, channels, gamma), cfg):
        return _infeasible(cfg, None, "rank"), log
    Ms, Mp = cfg.Ms, cfg.Mp
    pairs = [_SecondaryPair(env, cfg, i, gamma[i]) for i in range(Ms)]
    hps_env = scaled_problem(cfg, channels, gamma).hps_t  # physics of the primary links

    # setup round: margins and effective noises are announced once
    betas = np.empty(Mp)
    for j in range(Mp):
        betas[j] = env.read(prx(j), ("beta", j))
        log.send(prx(j), "Margin", float(betas[j]))
    a = np.empty(Ms)
    for i in range(Ms):
        a[i] = env.read(srx(i), ("a", i))
        log.send(srx(i), "NoiseLevel", float(a[i]))
    for pair in pairs:
        pair.learn_margins(betas)
    log.next_round()
    ones = np.ones(Ms)
    count = [0]

    def evaluate(lam, nu0):
        count[0] += 1
        lam = np.asarray(lam, dtype=float)
        for j in range(Mp):
            log.send(prx(j), "DualUpdate", float(lam[j]))
        log.next_round()
        for pair in pairs:
            pair.whiten(lam)

        def step(nu):
            new = np.empty(Ms)
            for pair in pairs:
                x = pair.uplink_statistic(nu)
                new[pair.i] = uplink_update_all(np.array([x]), ones[pair.i:pair.i + 1])[0]
                log.send(stx(pair.i), "UplinkPower", float(new[pair.i]))
            log.next_round()
            return new

        nu, ok = iterate_fixed_point(step, Ms, nu0, opts.inner_tol, opts.max_inner)
        if not ok and (not np.all(np.isfinite(nu)) or np.any(nu > NU_CAP)):
            raise InnerInfeasible("virtual uplink powers diverge")
        G = np.empty((Ms, Ms))
        for pair in pairs:
            G[:, pair.i] = pair.direction(nu)
            log.send(stx(pair.i), "GainColumn", G[:, pair.i].copy())
        log.next_round()
        p = downlink_powers(G, a, ones)
        for pair in pairs:
            pair.transmit(p)
            log.send(stx(pair.i), "PowerReport", float(np.sum(np.abs(pair.what) ** 2)))
        wtilde = np.stack([pair.wtilde for pair in pairs])
        env.transmit_scaled(hps_env, wtilde)
        log.next_round()
        s = np.empty(Mp)
        for j in range(Mp):
            s[j] = 1.0 - env.read(prx(j), ("J", j))
            log.send(prx(j), "SubgradientReport", float(s[j]))
        log.next_round()
        what = np.stack([pair.what for pair in pairs])
        return DualEval(lam, dual_value(what, lam), wtilde, s, nu)

    try:
        state, ev, reason = dual_ascent(evaluate, Mp, opts)
    except (InnerInfeasible, NotPositiveDefinite):
        return _infeasible(cfg, None, "inner", count[0]), log
    if Mp:
        for j in range(Mp):
            log.send(prx(j), "DualUpdate", float(ev.lam[j]))
        log.next_round()
    return finish_power_min(cfg, channels, gamma, state, ev, reason, opts, count[0]), log


# ---------------------------------------------------------------------------
# Algorithm 4


def run_algorithm4_distributed(cfg, channels, beams, Rmin, rho, max_rounds=50, tol=1e-9):
    """Message-passing run of the min-aggregation rate allocation.

    Each receiver reads only its own measured effective channels, runs
    Algorithm 3 locally and broadcasts its recommendation; each user keeps
    the smallest increment offered to it and broadcasts its new rate.
    """
    log = RunLog()
    env = Environment(cfg, channels, log)
    env.transmit(beams)
    Ms = cfg.Ms
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (Ms,))
    local = []
    for i in range(Ms):
        row = np.array([env.read(srx(i), ("heff", i, j)) for j in range(Ms)])
        h = np.full((Ms, Ms), np.nan, dtype=complex)
        h[i] = row
        local.append(EffectiveNetwork(h))
    R = np.array(Rmin, dtype=float)
    trace = [R.copy()]
    recs = []
    q = 0
    while q < max_rounds:
        recs = []
        for i in range(Ms):
            rec = algorithm3(local[i], i, R, rho)
            recs.append(rec)
            log.send(srx(i), "Recommendation", rec.increments.copy())
        log.next_round()
        if q == 0:
            check_recommendations(recs, rho)
        R_new = np.empty(Ms)
        inc = np.empty(Ms)
        for k in range(Ms):
            offers = np.array([rec.increments[k] for rec in recs])
            inc[k] = np.min(offers)
            R_new[k] = R[k] + max(inc[k], 0.0)
            log.send(stx(k), "RateUpdate", float(R_new[k]))
        log.next_round()
        q += 1
        trace.append(R_new.copy())
        R = R_new
        if np.max(inc) < tol:
            break
    return AllocationResult(R, [rec.decoding_set for rec in recs], q, trace, recs), log


def replay_rates(log, Ms):
    """Final rate vector reconstructed from the logged rate broadcasts."""
    R = np.full(Ms, np.nan)
    for m in log.ordered():
        if m.kind == "RateUpdate":
            R[int(m.sender[3:])] = m.values
    return R


def replay_multipliers(log, Mp):
    lam = np.zeros(Mp)
    for m in log.ordered():
        if m.kind == "DualUpdate":
            lam[int(m.sender[3:])] = m.values
    return lam
