import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crbeam.errors import CapExceeded, NotDecodable
from crbeam.network import channel_matching_beams, mmse_rates
from crbeam.ugd import (
    EffectiveNetwork,
    algorithm3,
    algorithm4,
    algorithm4mld,
    best_decoding_set,
    delta,
    effective_network,
    group_rank,
    mld_decodable_net,
    region_member,
    strict_fair_rate,
    symmetric_rate_f,
    theta,
    theta_star_bruteforce,
    ugd_decodable,
    ugd_permutation,
)
from oracles import (
    polymatroid_maxmin,
    random_instance,
    rank_fn,
    set_partitions,
    subsets,
    ugd_decodable_bruteforce,
)


def random_net(seed, Ms, scale=2.0):
    rng = np.random.default_rng(seed)
    h = scale * (rng.standard_normal((Ms, Ms)) + 1j * rng.standard_normal((Ms, Ms)))
    return EffectiveNetwork(h), rng


def test_effective_network_products_and_zero_beam():
    cfg, ch = random_instance(0, Ms=3, Mp=0)
    beams = np.ones((3, 3), dtype=complex)
    beams[2] = 0
    net = effective_network(cfg, ch, beams)
    assert np.allclose(net.h[:, :2], np.einsum("ijk,jk->ij", ch.Hss, beams)[:, :2])
    assert np.all(net.h[:, 2] == 0)


def test_effective_network_rates_match_raw():
    cfg, ch = random_instance(1, Ms=3, Mp=2)
    beams = channel_matching_beams(cfg, ch, "lower")
    g = effective_network(cfg, ch, beams).gains
    sig = np.diag(g)
    rates = np.log2(1 + sig / (1 + g.sum(axis=1) - sig))
    assert np.allclose(rates, mmse_rates(cfg, ch, beams), rtol=1e-12)


def test_group_rank_examples():
    net = EffectiveNetwork(np.ones((3, 3)))
    assert group_rank(net, 0, [], [1]) == 0.0
    assert group_rank(net, 0, [0], [1]) == pytest.approx(np.log2(1.5))
    assert group_rank(net, 0, 0b011, 0b100) == pytest.approx(np.log2(1 + 2 / 2))


def test_delta_examples():
    net = EffectiveNetwork(np.array([[1.0]]))
    assert delta(net, 0, [0], [], [0.5]) == pytest.approx(0.5)
    net, _ = random_net(0, 3)
    assert delta(net, 1, [0, 2], [1], np.zeros(3)) == pytest.approx(group_rank(net, 1, [0, 2], [1]))


def test_region_member_examples():
    net, _ = random_net(2, 3)
    assert region_member(net, 0, [0, 1, 2], [], np.zeros(3))
    cap = np.log2(1 + net.gains[0, 1] / (1 + net.gains[0, 2]))
    r = np.zeros(3)
    r[1] = cap - 1e-9
    assert region_member(net, 0, [1], [2], r)
    r[1] = cap + 1e-9
    assert not region_member(net, 0, [1], [2], r)
    with pytest.raises(CapExceeded):
        region_member(EffectiveNetwork(np.ones((21, 21))), 0, range(21), [], np.zeros(21))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_region_member_matches_subset_loop(seed):
    net, rng = random_net(seed, 4)
    A = [j for j in range(4) if rng.random() < 0.7] or [0]
    B = [j for j in range(4) if j not in A and rng.random() < 0.5]
    r = np.zeros(4)
    r[A] = rng.uniform(0, 1.5, len(A))
    expected = all(r[list(D)].sum() <= rank_fn(net.gains[1], D, B) for D in subsets(A))
    assert region_member(net, 1, A, B, r) == expected


def test_theta_examples():
    net, _ = random_net(3, 3)
    rho = np.array([1.0, 2.0, 0.5])
    assert theta(net, 0, [2], [], np.zeros(3), rho) == pytest.approx(group_rank(net, 0, [2], []) / 0.5)
    assert theta(net, 0, [0, 1], [2], np.full(3, 100.0), rho) < 0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), Ms=st.integers(1, 4))
def test_theta_matches_polymatroid_vertex_lp(seed, Ms):
    net, rng = random_net(seed, Ms)
    A = list(range(Ms))
    B = []
    if Ms > 1 and rng.random() < 0.5:
        B = [A.pop()]
    rho = rng.uniform(0.5, 2.0, Ms)
    Rmin = 0.05 * rng.uniform(0, 1, Ms)
    expected = polymatroid_maxmin(net.gains[0], A, B, Rmin, rho)
    assert theta(net, 0, A, B, Rmin, rho) == pytest.approx(expected, abs=1e-7)


def test_ugd_permutation():
    net = EffectiveNetwork(np.array([[3, 1, 2], [1, 1, 1], [0, 0, 1]], dtype=complex))
    assert ugd_permutation(net, 0) == (0, 2, 1)
    assert ugd_permutation(net, 1) == (0, 1, 2)
    net, _ = random_net(4, 5)
    pi = ugd_permutation(net, 2)
    assert np.all(np.diff(np.abs(net.h[2, list(pi)])) <= 0)


def test_symmetric_rate_examples():
    net = EffectiveNetwork(np.array([[1.5 - 0.5j]]))
    assert symmetric_rate_f(net, 0, 1) == pytest.approx(np.log2(1 + 2.5))
    g = 1.7
    net = EffectiveNetwork(np.sqrt(g) * np.ones((2, 2)))
    assert symmetric_rate_f(net, 0, 2) == pytest.approx(min(np.log2(1 + 2 * g) / 2, np.log2(1 + g)))
    net = EffectiveNetwork(np.array([[1.0, 3.0], [0.0, 1.0]]))
    with pytest.raises(IndexError):
        symmetric_rate_f(net, 0, 1)


@pytest.mark.parametrize("seed", range(10))
def test_symmetric_rate_full_group_matches_theta(seed):
    net, _ = random_net(seed, 4)
    full = symmetric_rate_f(net, 1, 4)
    assert full == pytest.approx(theta(net, 1, range(4), [], np.zeros(4), np.ones(4)), abs=1e-12)


def test_best_decoding_set():
    net = EffectiveNetwork(np.array([[2.0]]))
    assert best_decoding_set(net, 0)[0] == 1
    # a strong interferer is better decoded than treated as noise
    net = EffectiveNetwork(np.array([[1.0, 10.0], [0.0, 1.0]]))
    p, rate, users = best_decoding_set(net, 0)
    assert p == 2 and users == (0, 1)
    for seed in range(10):
        net, _ = random_net(seed, 4)
        for i in range(4):
            p, rate, _ = best_decoding_set(net, i)
            assert rate >= symmetric_rate_f(net, i, ugd_permutation(net, i).index(i) + 1)


def test_algorithm3_single_user():
    net = EffectiveNetwork(np.array([[1.0 + 1.0j]]))
    rec = algorithm3(net, 0, np.zeros(1), np.ones(1))
    assert rec.increments[0] == pytest.approx(np.log2(3.0))
    assert rec.decoding_set == (0,)


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 100_000), Ms=st.integers(1, 4))
def test_algorithm3_matches_bruteforce(seed, Ms):
    net, rng = random_net(seed, Ms)
    rho = rng.uniform(0.5, 2.0, Ms)
    Rmin = 0.1 * rng.uniform(0, 1, Ms)
    for i in range(Ms):
        rec = algorithm3(net, i, Rmin, rho)
        assert rec.min_ratio(rho) == pytest.approx(theta_star_bruteforce(net, i, Rmin, rho), abs=1e-9)
        deltas = [d for _, d in rec.partition_trace]
        assert np.all(np.diff(deltas) >= -1e-9)
        assert i in rec.decoding_set


def test_theta_star_monotone_in_rmin():
    net, rng = random_net(8, 4)
    Rmin = 0.1 * rng.uniform(0, 1, 4)
    base = theta_star_bruteforce(net, 2, Rmin, np.ones(4))
    assert theta_star_bruteforce(net, 2, Rmin + 0.05, np.ones(4)) <= base
    with pytest.raises(CapExceeded):
        theta_star_bruteforce(EffectiveNetwork(np.ones((9, 9))), 0, np.zeros(9), np.ones(9))


def test_algorithm4_single_user_and_symmetric_pair():
    net = EffectiveNetwork(np.array([[2.0]]))
    res = algorithm4(net, np.zeros(1), np.ones(1))
    assert res.R_star[0] == pytest.approx(np.log2(5.0))
    net = EffectiveNetwork(np.ones((2, 2)))
    res = algorithm4(net, np.zeros(2), np.ones(2))
    assert np.allclose(res.trace[1], np.log2(3) / 2)
    assert np.all(res.R_star >= res.trace[1] - 1e-12)
    assert ugd_decodable(net, res.R_star)


def test_algorithm4_rejects_undecodable_start():
    net, _ = random_net(1, 3)
    with pytest.raises(NotDecodable):
        algorithm4(net, np.full(3, 50.0), np.ones(3))


@pytest.mark.parametrize("seed", range(20))
def test_algorithm4_trace_and_optimality(seed):
    net, rng = random_net(seed, 3)
    rho = rng.uniform(0.5, 2.0, 3)
    res = algorithm4(net, np.zeros(3), rho, max_rounds=200, tol=1e-12)
    trace = np.array(res.trace)
    assert np.all(np.diff(trace, axis=0) >= -1e-12)
    assert ugd_decodable(net, res.R_star)
    best = np.min(res.R_star / rho)
    for _ in range(200):
        R = rng.uniform(0, 1, 3) * res.R_star.max() * 2
        if ugd_decodable(net, R):
            assert np.min(R / rho) <= best + 1e-9


def test_strict_fair_rate_examples():
    assert np.allclose(strict_fair_rate([1.0, 2.0], [0.0, 0.0], [1.0, 1.0]), [1.0, 1.0])
    assert np.allclose(strict_fair_rate([0.3, 0.4], [0.3, 0.4], [1.0, 2.0]), [0.3, 0.4])
    for seed in range(10):
        net, rng = random_net(seed, 3)
        rho = rng.uniform(0.5, 2, 3)
        res = algorithm4(net, np.zeros(3), rho, max_rounds=1)
        R_hat = strict_fair_rate(res.trace[1], np.zeros(3), rho)
        assert np.all(R_hat <= res.trace[1] + 1e-15)
        assert ugd_decodable(net, R_hat)


def test_algorithm4mld_examples():
    net = EffectiveNetwork(np.array([[1.0 - 2.0j]]))
    res = algorithm4mld(net, np.zeros(1), np.ones(1))
    assert res.R_star[0] == pytest.approx(np.log2(6.0))
    for seed in range(15):
        net, rng = random_net(seed, 3)
        rho = rng.uniform(0.5, 2, 3)
        mld = algorithm4mld(net, np.zeros(3), rho, max_rounds=200, tol=1e-12)
        ugd = algorithm4(net, np.zeros(3), rho, max_rounds=200, tol=1e-12)
        assert np.min(mld.R_star / rho) <= np.min(ugd.R_star / rho) + 1e-9
        assert np.all(np.diff(np.array(mld.trace), axis=0) >= -1e-12)
        assert mld_decodable_net(net, mld.R_star)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 100_000), Ms=st.integers(1, 4))
def test_decodability_forms_agree_with_bruteforce(seed, Ms):
    net, rng = random_net(seed, Ms, scale=1.0)
    R = rng.uniform(0, 1.2, Ms)
    full = ugd_decodable(net, R)
    assert full == ugd_decodable(net, R, restricted=True)
    assert full == ugd_decodable_bruteforce(net.gains, R)
    # MMSE and MLD decodable vectors are UGD decodable
    if mld_decodable_net(net, R):
        assert full


@pytest.mark.parametrize("seed", range(10))
def test_sequential_decoding_consistency(seed):
    net, rng = random_net(seed, 4)
    i = int(rng.integers(4))
    for _ in range(30):
        used = [j for j in range(4) if rng.random() < 0.8] or [i]
        order = list(set_partitions(used))
        blocks = order[int(rng.integers(len(order)))]
        r = np.zeros(4)
        r[used] = rng.uniform(0, 0.8, len(used))
        rest = [j for j in range(4) if j not in used]
        ok = True
        for k, D in enumerate(blocks):
            later = [j for blk in blocks[k + 1:] for j in blk] + rest
            if not region_member(net, i, D, later, r):
                ok = False
                break
        if ok:
            assert region_member(net, i, used, rest, r, slack=1e-12)
