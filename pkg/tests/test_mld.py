import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crbeam.errors import CapExceeded
from crbeam.mld import (
    OPTIMAL,
    SdpSolution,
    build_qcqp,
    enumerate_decoding_sets,
    matching_mld_rate,
    mld_common_rate,
    mld_decodable,
    mld_full_region_decodable,
    mld_power_min,
    mld_rate_opt,
    power_fit_lp,
    quadratic_value,
    rank1_recover,
    sdp_relax_solve,
)
from crbeam.mmse import algorithm2_rate_opt
from crbeam.network import (
    NetworkConfig,
    channel_matching_beams,
    effective_noise_all,
    margin_satisfied,
    primary_interference_all,
    received_gains,
    received_sinr_all,
    sample_channels,
    weighted_sum_power,
)
from oracles import random_instance


def mld_bruteforce(cfg, ch, beams, R, slack=1e-9):
    a = effective_noise_all(cfg, ch)
    for i in range(cfg.Ms):
        for r in range(1, cfg.Ms + 1):
            for V in itertools.combinations(range(cfg.Ms), r):
                if i not in V:
                    continue
                power = sum(abs(ch.Hss[i, j] @ beams[j]) ** 2 for j in V)
                if np.log2(1 + power / a[i]) < sum(R[j] for j in V) - slack:
                    return False
    return True


def test_enumerate_decoding_sets():
    assert enumerate_decoding_sets(0, 1) == [(0,)]
    assert enumerate_decoding_sets(0, 2) == [(0,), (0, 1)]
    sets = enumerate_decoding_sets(1, 3)
    assert len(sets) == 4 and all(1 in V for V in sets)
    assert len(enumerate_decoding_sets(2, 6)) == 2 ** 5
    with pytest.raises(CapExceeded):
        enumerate_decoding_sets(0, 13)


def test_mld_decodable_single_user_and_zero_rate():
    cfg = NetworkConfig(Ms=1, Mp=1, Ns=2, Np=2, P0=1.0)
    ch = sample_channels(cfg, 0)
    w = np.array([[1.0, 0.5j]])
    cap = np.log2(1 + received_sinr_all(cfg, ch, w)[0])
    assert mld_decodable(cfg, ch, w, [cap - 1e-6])
    assert not mld_decodable(cfg, ch, w, [cap + 1e-6])
    assert mld_full_region_decodable(cfg, ch, w, [cap - 1e-6])
    cfg, ch = random_instance(1, Ms=3, Mp=2)
    assert mld_decodable(cfg, ch, np.zeros((3, 3)), np.zeros(3))
    assert mld_full_region_decodable(cfg, ch, np.zeros((3, 3)), np.zeros(3))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_mld_decodable_matches_bruteforce_and_region_implication(seed):
    rng = np.random.default_rng(seed)
    cfg, ch = random_instance(seed, Ms=3, Mp=1)
    w = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    R = rng.uniform(0, 1.5, 3)
    dec = mld_decodable(cfg, ch, w, R)
    assert dec == mld_bruteforce(cfg, ch, w, R)
    if mld_full_region_decodable(cfg, ch, w, R):
        assert dec
    if dec:
        # shrinking any coordinate keeps decodability
        assert mld_decodable(cfg, ch, w, R * rng.uniform(0, 1, 3))


def test_full_region_strictly_stronger_instance():
    found = False
    for seed in range(200):
        rng = np.random.default_rng(seed)
        cfg, ch = random_instance(seed, Ms=3, Mp=0)
        w = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        R = rng.uniform(0, 2, 3)
        if mld_decodable(cfg, ch, w, R) and not mld_full_region_decodable(cfg, ch, w, R):
            found = True
            break
    assert found


def test_common_rate_is_the_boundary():
    cfg, ch = random_instance(2, Ms=3, Mp=2, rho=[1.0, 0.5, 2.0])
    beams = channel_matching_beams(cfg, ch, "lower")
    G = received_gains(ch, beams)
    a = effective_noise_all(cfg, ch)
    x = mld_common_rate(G, a, cfg.rho)
    assert mld_decodable(cfg, ch, beams, x * cfg.rho)
    assert not mld_decodable(cfg, ch, beams, (x + 1e-6) * cfg.rho)


def test_qcqp_counts_and_zero_rate_constants():
    cfg, ch = random_instance(0, Ms=2, Mp=3)
    prob = build_qcqp(cfg, ch, np.zeros(2))
    assert len(prob.constraints_rate) == 4 and len(prob.constraints_margin) == 3
    assert all(c == 0 for _, c in prob.constraints_rate)
    assert np.allclose(prob.A, np.eye(2 * cfg.Ns))


@pytest.mark.parametrize("seed", range(5))
def test_qcqp_encodings_agree(seed):
    rng = np.random.default_rng(seed)
    cfg, ch = random_instance(seed, Ms=3, Mp=2, alpha=[1.0, 2.0, 0.5])
    R = rng.uniform(0, 1, 3)
    prob = build_qcqp(cfg, ch, R)
    a = effective_noise_all(cfg, ch)
    for _ in range(20):
        W = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        w = W.ravel()
        assert quadratic_value(prob.A, w) == pytest.approx(weighted_sum_power(cfg, W))
        norms = np.linalg.norm(W, axis=1)
        G_dir = received_gains(ch, W / norms[:, None])
        for (B, c), (i, V) in zip(prob.constraints_rate, prob.sets):
            V = list(V)
            raw = sum(abs(ch.Hss[i, j] @ W[j]) ** 2 for j in V)
            need = (2.0 ** R[V].sum() - 1.0) * a[i]
            quad = quadratic_value(B, w) - c
            lp_row = float(np.sum(G_dir[i, V] * norms[V] ** 2))
            assert quad == pytest.approx(need - raw, abs=1e-9 * max(1.0, raw))
            assert lp_row == pytest.approx(raw, rel=1e-9)
            assert (quad <= 0) == (np.log2(1 + raw / a[i]) >= R[V].sum())
        J = primary_interference_all(cfg, ch, W)
        for (B, beta), j in zip(prob.constraints_margin, range(cfg.Mp)):
            assert quadratic_value(B, w) == pytest.approx(J[j])
            assert beta == cfg.beta[j]


def test_sdp_zero_rate_no_primaries():
    cfg, ch = random_instance(3, Ms=2, Mp=0)
    sol = sdp_relax_solve(build_qcqp(cfg, ch, np.zeros(2)))
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(0.0, abs=1e-6)
    assert np.max(np.abs(sol.X)) < 1e-6


def test_single_user_closed_form_and_exact_recovery():
    cfg = NetworkConfig(Ms=1, Mp=1, Ns=3, Np=2, P0=10.0, alpha=2.0)
    ch = sample_channels(cfg, 4)
    R = np.array([0.8])
    prob = build_qcqp(cfg, ch, R)
    sol = sdp_relax_solve(prob)
    a = effective_noise_all(cfg, ch)[0]
    gamma = 2 ** R[0] - 1
    closed = cfg.alpha[0] * gamma * a / np.linalg.norm(ch.Hss[0, 0]) ** 2
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(closed, rel=1e-5)
    eig = np.linalg.eigvalsh(sol.X)
    assert eig[-2] <= 1e-6 * eig[-1]
    res = rank1_recover(sol, prob, cfg, ch, R)
    assert res.optimal
    assert np.sum(np.abs(res.beams) ** 2) == pytest.approx(sol.objective / cfg.alpha[0], rel=1e-4)


def test_zero_rate_recovery_gives_zero_beams():
    cfg, ch = random_instance(5, Ms=3, Mp=2)
    prob = build_qcqp(cfg, ch, np.zeros(3))
    zero = SdpSolution(np.zeros((9, 9), dtype=complex), 0.0, OPTIMAL)
    res = rank1_recover(zero, prob, cfg, ch, np.zeros(3))
    assert res.optimal and np.allclose(res.beams, 0)


@pytest.mark.parametrize("seed", range(4))
def test_power_min_feasible_and_above_relaxation(seed):
    rng = np.random.default_rng(seed)
    cfg, ch = random_instance(seed, Ms=3, Mp=2)
    R = np.full(3, 0.3)
    res = mld_power_min(cfg, ch, R)
    assert res.optimal
    assert mld_decodable(cfg, ch, res.beams, R, 1e-6)
    assert margin_satisfied(cfg, ch, res.beams, 1e-6)
    assert res.sdp_objective <= res.objective * (1 + 1e-6)
    # any feasible rank-one point costs at least the relaxation value
    checked = 0
    for _ in range(100):
        D = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        D /= np.linalg.norm(D, axis=1, keepdims=True)
        p = power_fit_lp(cfg, ch, D, R)
        if p is None:
            continue
        checked += 1
        assert res.sdp_objective <= float(cfg.alpha @ p) * (1 + 1e-6)
    assert checked > 0


def test_rate_opt_single_user_matches_mmse():
    cfg = NetworkConfig(Ms=1, Mp=0, Ns=3, Np=1, P0=10.0)
    ch = sample_channels(cfg, 1)
    x_mld, beams = mld_rate_opt(cfg, ch, delta=1e-3)
    x_mmse, _ = algorithm2_rate_opt(cfg, ch)
    assert x_mld == pytest.approx(x_mmse, abs=2e-3)
    assert weighted_sum_power(cfg, beams) <= cfg.P0 + 1e-6


@pytest.mark.parametrize("seed", range(3))
def test_rate_opt_beats_matching(seed):
    cfg = NetworkConfig(Ms=3, Mp=4, Ns=4, Np=4, P0=10.0)
    ch = sample_channels(cfg, seed)
    x, beams = mld_rate_opt(cfg, ch)
    x_match, _ = matching_mld_rate(cfg, ch)
    assert x >= x_match
    assert weighted_sum_power(cfg, beams) <= cfg.P0 + 1e-6
    assert margin_satisfied(cfg, ch, beams, 1e-6)
    assert mld_decodable(cfg, ch, beams, x * cfg.rho, 1e-6)
