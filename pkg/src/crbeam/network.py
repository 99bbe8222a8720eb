"""Network and channel model, SINR/interference accounting and feasibility screens.

Array conventions (0-based indices throughout):

* ``Hss[i, j]`` : row of length Ns, secondary rx i <- secondary tx j
* ``Hsp[i, j]`` : row of length Np, secondary rx i <- primary tx j
* ``Hps[i, j]`` : row of length Ns, primary rx i <- secondary tx j
* ``Hpp[i, j]`` : row of length Np, primary rx i <- primary tx j
* ``Wp[j]``     : primary beamformer of length Np
* beams         : ``(Ms, Ns)`` array, row i is the secondary beam w_i
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionMismatch, ZeroChannel
from .complex_linalg import matrix_rank


def _vec(x, n, name):
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise DimensionMismatch(f"{name} must have length {n}, got shape {arr.shape}")
    return arr


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


@dataclass(frozen=True)
class NetworkConfig:
    Ms: int
    Mp: int
    Ns: int
    Np: int
    P0: float
    alpha: np.ndarray = None
    rho: np.ndarray = None
    beta: np.ndarray = None
    sigma_s: np.ndarray = None
    primary_power: float = 1.0

    def __post_init__(self):
        if self.Ms < 1 or self.Mp < 0 or self.Ns < 1 or self.Np < 1:
            raise ValueError("need Ms >= 1, Mp >= 0, Ns >= 1, Np >= 1")
        set_ = object.__setattr__
        set_(self, "alpha", _vec(1.0 if self.alpha is None else self.alpha, self.Ms, "alpha"))
        set_(self, "rho", _vec(1.0 if self.rho is None else self.rho, self.Ms, "rho"))
        set_(self, "beta", _vec(5.0 if self.beta is None else self.beta, self.Mp, "beta"))
        set_(self, "sigma_s", _vec(1.0 if self.sigma_s is None else self.sigma_s, self.Ms, "sigma_s"))
        for name in ("alpha", "rho", "beta", "sigma_s"):
            arr = getattr(self, name)
            if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be strictly positive and finite")
            arr.setflags(write=False)
        if not self.P0 > 0:
            raise ValueError("P0 must be positive")
        if self.primary_power < 0:
            raise ValueError("primary_power must be nonnegative")

    def with_P0(self, P0):
        return replace(self, P0=float(P0))

    def default_gamma(self):
        """SINR targets ``2^rho - 1`` for the configured rate weights."""
        return 2.0 ** self.rho - 1.0


@dataclass(frozen=True)
class ChannelSet:
    Hss: np.ndarray
    Hsp: np.ndarray
    Hps: np.ndarray
    Hpp: np.ndarray
    Wp: np.ndarray

    def __post_init__(self):
        for name in ("Hss", "Hsp", "Hps", "Hpp", "Wp"):
            arr = np.array(getattr(self, name), dtype=complex)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def check(self, cfg):
        Ms, Mp, Ns, Np = cfg.Ms, cfg.Mp, cfg.Ns, cfg.Np
        expected = {
            "Hss": (Ms, Ms, Ns),
            "Hsp": (Ms, Mp, Np),
            "Hps": (Mp, Ms, Ns),
            "Hpp": (Mp, Mp, Np),
            "Wp": (Mp, Np),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionMismatch(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        return self


# A beam set is just an (Ms, Ns) complex array; the alias documents intent.
BeamformerSet = np.ndarray


@dataclass(frozen=True)
class ScaledChannels:
    """Channels rescaled so that the power-min constraints read ``>= 1``.

    ``hss_t[i, i] = Hss[i, i] / sqrt(alpha_i gamma_i)``,
    ``hss_t[i, j] = Hss[i, j] / sqrt(alpha_j)`` for ``i != j``,
    ``hps_t[i, j] = Hps[i, j] / sqrt(beta_i alpha_j)``,
    ``wp_t[i] = conj(Wp[i]) / |Wp[i]|^2``.

    ``noise`` holds the effective noises ``a_i``; ``hsp`` and ``wp`` keep the
    unscaled primary-to-secondary channels and primary beams so the stacked
    constraint matrix can be assembled from this object alone.
    """

    hss_t: np.ndarray
    hps_t: np.ndarray
    wp_t: np.ndarray
    gamma: np.ndarray
    noise: np.ndarray
    hsp: np.ndarray
    wp: np.ndarray


def circular_gaussian(rng, shape):
    """i.i.d. CN(0, 1) samples (real and imaginary parts each N(0, 1/2))."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def sample_channels(cfg, seed):
    rng = np.random.default_rng(seed)
    Hss = circular_gaussian(rng, (cfg.Ms, cfg.Ms, cfg.Ns))
    Hsp = circular_gaussian(rng, (cfg.Ms, cfg.Mp, cfg.Np))
    Hps = circular_gaussian(rng, (cfg.Mp, cfg.Ms, cfg.Ns))
    Hpp = circular_gaussian(rng, (cfg.Mp, cfg.Mp, cfg.Np))
    Wp = np.zeros((cfg.Mp, cfg.Np), dtype=complex)
    channels = ChannelSet(Hss, Hsp, Hps, Hpp, Wp)
    if cfg.Mp:
        channels = replace(channels, Wp=primary_beams_default(cfg, channels))
    return channels


def primary_beams_default(cfg, channels):
    """Primary beams matched to their own direct channel at ``primary_power``."""
    Wp = np.zeros((cfg.Mp, cfg.Np), dtype=complex)
    for i in range(cfg.Mp):
        h = channels.Hpp[i, i]
        nrm = np.linalg.norm(h)
        if nrm == 0:
            raise ZeroChannel(f"primary direct channel {i} is zero")
        Wp[i] = np.sqrt(cfg.primary_power) * h.conj() / nrm
    return Wp


def effective_noise_all(cfg, channels):
    """Vector of ``a_i = sum_j |Hsp[i,j] Wp[j]|^2 + sigma_i``."""
    a = np.array(cfg.sigma_s, dtype=float)
    if cfg.Mp:
        leak = np.einsum("ijk,jk->ij", channels.Hsp, channels.Wp)
        a = a + np.sum(np.abs(leak) ** 2, axis=1)
    return a


def effective_noise(cfg, channels, i):
    return float(effective_noise_all(cfg, channels)[i])


def received_gains(channels, beams):
    """``G[i, j] = |Hss[i, j] w_j|^2``."""
    return np.abs(np.einsum("ijk,jk->ij", channels.Hss, beams)) ** 2


def received_sinr_all(cfg, channels, beams):
    G = received_gains(channels, beams)
    a = effective_noise_all(cfg, channels)
    sig = np.diag(G)
    return sig / (G.sum(axis=1) - sig + a)


def received_sinr(cfg, channels, beams, i):
    return float(received_sinr_all(cfg, channels, beams)[i])


def mmse_rates(cfg, channels, beams):
    """Single-user decoding rates ``log2(1 + SINR_i)``."""
    return np.log2(1.0 + received_sinr_all(cfg, channels, beams))


def primary_interference_all(cfg, channels, beams):
    if cfg.Mp == 0:
        return np.zeros(0)
    return np.sum(np.abs(np.einsum("ijk,jk->ij", channels.Hps, beams)) ** 2, axis=1)


def primary_interference(cfg, channels, beams, i):
    return float(primary_interference_all(cfg, channels, beams)[i])


def weighted_sum_power(cfg, beams):
    return float(np.sum(cfg.alpha * np.sum(np.abs(beams) ** 2, axis=1)))


def margin_satisfied(cfg, channels, beams, slack=0.0):
    J = primary_interference_all(cfg, channels, beams)
    return bool(np.all(J <= cfg.beta + slack))


def scaled_problem(cfg, channels, gamma):
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (cfg.Ms,) or np.any(gamma <= 0):
        raise ValueError("gamma must be a positive vector of length Ms")
    hss_t = channels.Hss / np.sqrt(cfg.alpha)[None, :, None]
    for i in range(cfg.Ms):
        hss_t[i, i] = channels.Hss[i, i] / np.sqrt(cfg.alpha[i] * gamma[i])
    hps_t = channels.Hps / np.sqrt(cfg.beta[:, None, None] * cfg.alpha[None, :, None])
    wp_t = np.zeros_like(channels.Wp)
    for i in range(cfg.Mp):
        nrm2 = np.sum(np.abs(channels.Wp[i]) ** 2)
        if nrm2 > 0:
            wp_t[i] = channels.Wp[i].conj() / nrm2
    return ScaledChannels(hss_t, hps_t, wp_t, gamma.copy(), effective_noise_all(cfg, channels),
                          channels.Hsp, channels.Wp)


def to_scaled_beams(cfg, beams):
    return np.sqrt(cfg.alpha)[:, None] * beams


def from_scaled_beams(cfg, wtilde):
    return wtilde / np.sqrt(cfg.alpha)[:, None]


def build_Q(scaled, cfg):
    Ms, Mp, Ns, Np = cfg.Ms, cfg.Mp, cfg.Ns, cfg.Np
    Q = np.zeros((Ms + Mp, Ns * Ms + Np * Mp), dtype=complex)
    for i in range(Ms):
        for j in range(Ms):
            Q[i, j * Ns:(j + 1) * Ns] = scaled.hss_t[i, j]
        for j in range(Mp):
            Q[i, Ns * Ms + j * Np:Ns * Ms + (j + 1) * Np] = scaled.hsp[i, j]
    for i in range(Mp):
        for j in range(Ms):
            Q[Ms + i, j * Ns:(j + 1) * Ns] = scaled.hps_t[i, j]
        Q[Ms + i, Ns * Ms + i * Np:Ns * Ms + (i + 1) * Np] = scaled.wp_t[i]
    return Q


def build_QT(scaled, cfg, wtilde):
    """Stacked constraint matrix ``Q`` and block-diagonal beam matrix ``T``."""
    wtilde = np.asarray(wtilde, dtype=complex)
    if wtilde.shape != (cfg.Ms, cfg.Ns):
        raise DimensionMismatch(f"wtilde has shape {wtilde.shape}, expected {(cfg.Ms, cfg.Ns)}")
    Ms, Mp, Ns, Np = cfg.Ms, cfg.Mp, cfg.Ns, cfg.Np
    Q = build_Q(scaled, cfg)
    T = np.zeros((Ns * Ms + Np * Mp, Ms + Mp), dtype=complex)
    for i in range(Ms):
        T[i * Ns:(i + 1) * Ns, i] = wtilde[i]
    for i in range(Mp):
        T[Ns * Ms + i * Np:Ns * Ms + (i + 1) * Np, Ms + i] = scaled.wp[i]
    return Q, T


def qt_constraint_ratios(Q, T, cfg):
    """Per-row ratios ``|[QT]_ii|^2 / (sum_{j!=i} |[QT]_ij|^2 + sigma(i))``."""
    P = np.abs(Q @ T) ** 2
    d = np.diag(P)
    sigma = np.concatenate([cfg.sigma_s, np.zeros(cfg.Mp)])
    with np.errstate(divide="ignore"):
        return d / (P.sum(axis=1) - d + sigma)


def feasibility_necessary(scaled, cfg):
    """Rank screen: False proves the scaled power-min problem infeasible."""
    rank = matrix_rank(build_Q(scaled, cfg))
    return 2 * rank >= cfg.Ms + cfg.Mp


def unintended_rows(cfg, channels, i):
    """Outgoing channel rows of secondary tx i to every receiver except its own."""
    rows = [channels.Hss[j, i] for j in range(cfg.Ms) if j != i]
    rows += [channels.Hps[j, i] for j in range(cfg.Mp)]
    return np.array(rows, dtype=complex).reshape(len(rows), cfg.Ns)


def zero_forcing_residual(cfg, channels, i):
    """Norm of the part of ``h_ii^H`` orthogonal to the unintended-channel span."""
    h = channels.Hss[i, i].conj()
    H = unintended_rows(cfg, channels, i)
    if H.shape[0] == 0:
        return float(np.linalg.norm(h))
    # orthonormal basis for Range(H^H)
    u, sv, _ = np.linalg.svd(H.conj().T, full_matrices=False)
    r = int(np.sum(sv > 1e-12 * max(sv[0], 1e-300)))
    basis = u[:, :r]
    return float(np.linalg.norm(h - basis @ (basis.conj().T @ h)))


def feasibility_sufficient_zf(cfg, channels):
    """True when every secondary tx can zero-force all unintended receivers."""
    for i in range(cfg.Ms):
        nrm = np.linalg.norm(channels.Hss[i, i])
        if nrm == 0 or zero_forcing_residual(cfg, channels, i) <= 1e-9 * nrm:
            return False
    return True


def matched_directions(cfg, channels):
    D = np.zeros((cfg.Ms, cfg.Ns), dtype=complex)
    for i in range(cfg.Ms):
        h = channels.Hss[i, i]
        nrm = np.linalg.norm(h)
        if nrm == 0:
            raise ZeroChannel(f"secondary direct channel {i} is zero")
        D[i] = h.conj() / nrm
    return D


def matching_scale(cfg, channels):
    """Largest common power ``alpha_hat`` meeting the budget and every margin."""
    D = matched_directions(cfg, channels)
    scale = cfg.P0 / float(np.sum(cfg.alpha))
    if cfg.Mp:
        leak = primary_interference_all(cfg, channels, D)
        with np.errstate(divide="ignore"):
            scale = min(scale, float(np.min(np.where(leak > 0, cfg.beta / leak, np.inf))))
    return scale


def channel_matching_beams(cfg, channels, mode="lower", power=None):
    """Beams along ``h_ii^H / |h_ii|``.

    ``mode`` is ``"lower"`` (common power scaled to meet budget and margins),
    ``"genie"`` (each user spends the whole budget ``P0 / alpha_i``) or
    ``"fixed"`` (per-user power ``power``).
    """
    D = matched_directions(cfg, channels)
    if mode == "lower":
        p = np.full(cfg.Ms, matching_scale(cfg, channels))
    elif mode == "genie":
        p = cfg.P0 / cfg.alpha
    elif mode == "fixed":
        if power is None:
            raise ValueError("fixed mode needs a power")
        p = np.broadcast_to(np.asarray(power, dtype=float), (cfg.Ms,))
    else:
        raise ValueError(f"unknown matching mode {mode!r}")
    return np.sqrt(p)[:, None] * D
