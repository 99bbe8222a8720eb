"""Group-decoder rate allocation on the effective scalar network.

Users are indexed ``0..Ms-1``; sets are passed either as iterables of user
indices or as integer bitmasks.  With fixed beams, receiver i sees
``y_i = sum_j h[i, j] x_j + z_i`` with unit noise.  The rate region for a
jointly decoded group with another group treated as noise is a polymatroid
whose rank is ``f(S | B) = log2(1 + |h_S|^2 / (1 + |h_B|^2))``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import CapExceeded, NotDecodable
from .complex_linalg import logdet_capacity, subset_sums
from .network import effective_noise_all

MAX_ALG3 = 16
MAX_REGION = 20
MAX_BRUTE = 8
DECODE_SLACK = 1e-9
TIE_RTOL = 1e-10


@dataclass(frozen=True)
class EffectiveNetwork:
    h: np.ndarray

    def __post_init__(self):
        h = np.array(self.h, dtype=complex)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValueError("effective network must be a square matrix")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @property
    def Ms(self):
        return self.h.shape[0]

    @property
    def gains(self):
        return np.abs(self.h) ** 2


def effective_network(cfg, channels, beams):
    """``h[i, j] = Hss[i, j] w_j / sqrt(a_i)`` so every receiver has unit noise."""
    a = effective_noise_all(cfg, channels)
    return EffectiveNetwork(np.einsum("ijk,jk->ij", channels.Hss, beams) / np.sqrt(a)[:, None])


def as_mask(S):
    if isinstance(S, (int, np.integer)):
        return int(S)
    m = 0
    for j in S:
        m |= 1 << int(j)
    return m


def members(mask):
    out, j = [], 0
    while mask:
        if mask & 1:
            out.append(j)
        mask >>= 1
        j += 1
    return tuple(out)


def _popcounts(n):
    pc = np.zeros(1 << n, dtype=np.int64)
    for j in range(n):
        pc[1 << j:2 << j] = pc[:1 << j] + 1
    return pc


# ---------------------------------------------------------------------------
# rank function and its derived quantities


def group_rank(net, i, S, B):
    """Joint-decoding sum capacity of ``S`` at receiver ``i`` with ``B`` as noise."""
    S, B = members(as_mask(S)), members(as_mask(B))
    row = net.h[i]
    return logdet_capacity(row[list(S)], row[list(B)], 1.0)


def delta(net, i, S, B, Rmin):
    S = members(as_mask(S))
    return group_rank(net, i, S, B) - float(np.sum(np.asarray(Rmin, dtype=float)[list(S)]))


def region_member(net, i, A, B, r, slack=0.0):
    """Whether the rates ``r`` (indexed by user) on ``A`` lie in the group region."""
    A = members(as_mask(A))
    if len(A) > MAX_REGION:
        raise CapExceeded(f"region test capped at |A| = {MAX_REGION}")
    r = np.asarray(r, dtype=float)
    for sub in range(1, 1 << len(A)):
        D = [A[k] for k in range(len(A)) if sub >> k & 1]
        if np.sum(r[D]) > group_rank(net, i, D, B) + slack:
            return False
    return True


def theta(net, i, A, B, Rmin, rho):
    """Weighted max-min increment factor for group ``A`` with ``B`` as noise."""
    A = members(as_mask(A))
    if not A:
        raise ValueError("theta needs a nonempty group")
    if len(A) > MAX_REGION:
        raise CapExceeded(f"theta capped at |A| = {MAX_REGION}")
    rho = np.asarray(rho, dtype=float)
    best = np.inf
    for sub in range(1, 1 << len(A)):
        S = [A[k] for k in range(len(A)) if sub >> k & 1]
        best = min(best, delta(net, i, S, B, Rmin) / float(np.sum(rho[S])))
    return best


def theta_star_bruteforce(net, i, Rmin, rho):
    """Best ``theta`` over every decoding group containing ``i`` (exhaustive)."""
    Ms = net.Ms
    if Ms > MAX_BRUTE:
        raise CapExceeded(f"exhaustive partition search capped at Ms = {MAX_BRUTE}")
    full = (1 << Ms) - 1
    best = -np.inf
    for G in range(1, 1 << Ms):
        if G >> i & 1:
            best = max(best, theta(net, i, G, full ^ G, Rmin, rho))
    return best


# ---------------------------------------------------------------------------
# symmetric-rate view


def ugd_permutation(net, i):
    """Users sorted by received amplitude at receiver ``i``, ties by index."""
    amp = np.abs(net.h[i])
    return tuple(sorted(range(net.Ms), key=lambda j: (-amp[j], j)))


def symmetric_rate_f(net, i, p):
    """Common rate supported when the top ``p`` users at receiver ``i`` are decoded.

    ``p`` counts users (1-based group size) and must cover user i's position.
    """
    pi = ugd_permutation(net, i)
    if p < pi.index(i) + 1 or p > net.Ms:
        raise IndexError(f"group size {p} does not reach user {i} at receiver {i}")
    g = net.gains[i][list(pi)]
    noise = 1.0 + float(np.sum(g[p:]))
    best = np.inf
    for q in range(p):
        best = min(best, np.log2(1.0 + float(np.sum(g[q:p])) / noise) / (p - q))
    return best


def best_decoding_set(net, i):
    """``(p_star, rate, users)`` maximizing :func:`symmetric_rate_f`; ties to smallest p."""
    pi = ugd_permutation(net, i)
    p_star, best = None, -np.inf
    for p in range(pi.index(i) + 1, net.Ms + 1):
        val = symmetric_rate_f(net, i, p)
        if val > best:
            p_star, best = p, val
    return p_star, best, tuple(sorted(pi[:p_star]))


# ---------------------------------------------------------------------------
# decodability


class _Tables:
    """Per-receiver subset tables shared by the exhaustive routines."""

    def __init__(self, gains_row, Rmin, rho):
        self.n = len(gains_row)
        self.P = subset_sums(gains_row)
        self.Rs = subset_sums(Rmin)
        self.rho = subset_sums(rho)
        self.full = (1 << self.n) - 1
        self.masks = np.arange(1 << self.n)

    def delta(self, S, noise):
        return np.log2(1.0 + self.P[S] / (1.0 + self.P[noise])) - self.Rs[S]


def _group_ok(tab, G, i=None, slack=DECODE_SLACK):
    subs = tab.masks[(tab.masks & ~G) == 0][1:]
    if i is not None:
        subs = subs[(subs >> i) & 1 == 1]
    return bool(np.all(tab.delta(subs, tab.full ^ G) >= -slack))


def ugd_decodable_at(net, i, R, slack=DECODE_SLACK, restricted=False):
    """Some group containing ``i`` is jointly decodable at receiver ``i``.

    ``restricted=True`` only checks subsets that contain ``i`` (the equivalent
    relaxed form of the condition).
    """
    if net.Ms > MAX_REGION:
        raise CapExceeded(f"decodability search capped at Ms = {MAX_REGION}")
    tab = _Tables(net.gains[i], R, np.ones(net.Ms))
    for G in range(1, 1 << net.Ms):
        if G >> i & 1 and _group_ok(tab, G, i if restricted else None, slack):
            return True
    return False


def ugd_decodable(net, R, slack=DECODE_SLACK, restricted=False):
    return all(ugd_decodable_at(net, i, R, slack, restricted) for i in range(net.Ms))


def mld_decodable_net(net, R, slack=DECODE_SLACK):
    """MLD test on the effective network: every set containing i at receiver i."""
    R = np.asarray(R, dtype=float)
    for i in range(net.Ms):
        tab = _Tables(net.gains[i], R, np.ones(net.Ms))
        subs = tab.masks[(tab.masks >> i) & 1 == 1]
        if np.any(np.log2(1.0 + tab.P[subs]) - tab.Rs[subs] < -slack):
            return False
    return True


# ---------------------------------------------------------------------------
# Algorithm 3: per-receiver increment recommendations


@dataclass
class Recommendation:
    from_receiver: int
    increments: np.ndarray
    decoding_set: tuple
    partition_trace: list = field(default_factory=list)

    def min_ratio(self, rho):
        fin = np.isfinite(self.increments)
        return float(np.min(self.increments[fin] / np.asarray(rho, dtype=float)[fin]))


def _pick(values, candidates, i, pc, prefer_without_i=True):
    """Argmin over ``candidates`` with the deterministic tie rule."""
    vals = values[candidates]
    m = float(np.min(vals))
    tied = candidates[vals <= m + TIE_RTOL * (1.0 + abs(m))]
    if prefer_without_i:
        without = tied[(tied >> i) & 1 == 0]
        if len(without):
            tied = without
    small = tied[pc[tied] == np.min(pc[tied])]
    return int(np.min(small)), m


def algorithm3(net, i, Rmin, rho):
    """Rate increments recommended by receiver ``i``.

    Repeatedly extracts the set with the smallest normalized slack among the
    remaining users, treating previously extracted users as noise.  Users
    extracted before i's group get ``+inf``; i's group and all later groups
    get ``delta_k * rho_j`` and form the decoding set.
    """
    Ms = net.Ms
    if Ms > MAX_ALG3:
        raise CapExceeded(f"Algorithm 3 enumeration capped at Ms = {MAX_ALG3}")
    rho = np.asarray(rho, dtype=float)
    tab = _Tables(net.gains[i], Rmin, rho)
    pc = _popcounts(Ms)
    S, G, Gi = tab.full, 0, 0
    r = np.full(Ms, np.inf)
    trace = []
    while S:
        cand = tab.masks[(tab.masks & ~S) == 0][1:]
        values = np.full(len(tab.masks), np.inf)
        values[cand] = tab.delta(cand, G) / tab.rho[cand]
        B, d = _pick(values, cand, i, pc)
        users = list(members(B))
        if B >> i & 1 or G >> i & 1:
            r[users] = d * rho[users]
            Gi |= B
        S &= ~B
        G |= B
        trace.append((tuple(users), d))
    return Recommendation(i, r, members(Gi), trace)


@dataclass
class AllocationResult:
    R_star: np.ndarray
    partitions: list
    iterations: int
    trace: list
    recommendations: list = field(default_factory=list)


def aggregate(Rmin, recommendations):
    """Each user takes the smallest increment recommended for it."""
    inc = np.min(np.stack([rec.increments for rec in recommendations]), axis=0)
    return Rmin + np.maximum(inc, 0.0), inc


def check_recommendations(recommendations, rho, slack=DECODE_SLACK):
    for rec in recommendations:
        m = rec.min_ratio(rho)
        if m < -slack:
            raise NotDecodable(rec.from_receiver, m)


def _iterate(net, Rmin, rho, recommend, max_rounds, tol):
    R = np.array(Rmin, dtype=float)
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (net.Ms,))
    trace = [R.copy()]
    recs = []
    q = 0
    while q < max_rounds:
        recs = [recommend(net, i, R, rho) for i in range(net.Ms)]
        if q == 0:
            check_recommendations(recs, rho)
        R_new, inc = aggregate(R, recs)
        q += 1
        trace.append(R_new.copy())
        R = R_new
        if np.max(inc) < tol:
            break
    return R, recs, q, trace


def algorithm4(net, Rmin, rho, max_rounds=50, tol=1e-9):
    """Iterated min-aggregation of Algorithm 3 recommendations.

    ``trace[0]`` is the starting vector and ``trace[q]`` is ``R^(q)``.
    """
    R, recs, q, trace = _iterate(net, Rmin, rho, algorithm3, max_rounds, tol)
    return AllocationResult(R, [rec.decoding_set for rec in recs], q, trace, recs)


def strict_fair_rate(R1, Rmin, rho):
    """``Rmin + x * rho`` with ``x`` the smallest normalized gain of ``R1``."""
    R1, Rmin, rho = (np.asarray(v, dtype=float) for v in (R1, Rmin, rho))
    return Rmin + float(np.min((R1 - Rmin) / rho)) * rho


# ---------------------------------------------------------------------------
# MLD variant


def mld_recommendation(net, i, Rmin, rho):
    """Increments keeping user ``i`` MLD-decodable at receiver ``i``.

    The first group is the minimizing set containing ``i``.  Once a group
    ``G`` is fixed its constraint is tight, so later groups ``C`` are chosen
    by the contracted slack ``Delta(G + C) - r(G)`` normalized by ``rho(C)``.
    """
    Ms = net.Ms
    if Ms > MAX_ALG3:
        raise CapExceeded(f"MLD recommendation enumeration capped at Ms = {MAX_ALG3}")
    rho = np.asarray(rho, dtype=float)
    tab = _Tables(net.gains[i], Rmin, rho)
    pc = _popcounts(Ms)
    r = np.empty(Ms)
    cand = tab.masks[(tab.masks >> i) & 1 == 1]
    values = np.full(len(tab.masks), np.inf)
    values[cand] = tab.delta(cand, 0) / tab.rho[cand]
    B, d = _pick(values, cand, i, pc, prefer_without_i=False)
    users = list(members(B))
    r[users] = d * rho[users]
    G, rG = B, d * tab.rho[B]
    trace = [(tuple(users), d)]
    S = tab.full ^ G
    while S:
        cand = tab.masks[(tab.masks & ~S) == 0][1:]
        values = np.full(len(tab.masks), np.inf)
        values[cand] = (tab.delta(G | cand, 0) - rG) / tab.rho[cand]
        C, d = _pick(values, cand, i, pc, prefer_without_i=False)
        users = list(members(C))
        r[users] = d * rho[users]
        rG += d * tab.rho[C]
        G |= C
        S &= ~C
        trace.append((tuple(users), d))
    return Recommendation(i, r, members(tab.full), trace)


def algorithm4mld(net, Rmin, rho, max_rounds=50, tol=1e-9):
    """Min-aggregation of MLD recommendations; returns an AllocationResult."""
    R, recs, q, trace = _iterate(net, Rmin, rho, mld_recommendation, max_rounds, tol)
    return AllocationResult(R, [rec.decoding_set for rec in recs], q, trace, recs)
