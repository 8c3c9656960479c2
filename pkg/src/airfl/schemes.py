"""Over-the-air aggregation schemes.

Every aggregator takes the devices' real model vectors, the true channel (for
the physics), a :class:`~airfl.channel.CsiView` (for what the scheme is
allowed to know) and one round of receiver noise, and returns an
:class:`AggregationOutcome`. Model entries ride the real part of each complex
channel symbol.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .channel import ChannelRealization, CsiKind, CsiView, RoundNoise
from .numerics import RngStream, exp_integral_upper
from .optim import SelectionResult, validate_weights

SIGMA_FLOOR = 1e-12


class UnsupportedConfigurationError(ValueError):
    pass


class DegenerateEqualizerError(ArithmeticError):
    pass


# --- scheme configurations ------------------------------------------------------


@dataclass(frozen=True)
class IdealConfig:
    """Error-free orthogonal uploads; the learning-side upper baseline."""

    kind = "ideal"
    csi = None
    M: int = 1


@dataclass(frozen=True)
class LocalCsitConfig:
    """Truncated channel inversion (BAA-style); ``theta`` is the gain threshold."""

    kind = "local_csit"
    csi = CsiKind.LOCAL_CSIT
    theta: float = 1.0
    M: int = 1

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError(f"local_csit.theta must be > 0, got {self.theta}")
        if self.M != 1:
            raise UnsupportedConfigurationError("local_csit supports single-antenna servers only")


@dataclass(frozen=True)
class GlobalCsitConfig:
    """Normalized uploads with greedy selection; ``theta`` bounds max ||b||^2/|b^H h_k|^2."""

    kind = "global_csit"
    csi = CsiKind.GLOBAL_CSIT
    theta: float = 4.0
    M: int = 2

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError(f"global_csit.theta must be > 0, got {self.theta}")
        if self.M < 1:
            raise ValueError(f"global_csit.M must be >= 1, got {self.M}")


@dataclass(frozen=True)
class FullyBlindConfig:
    kind = "fully_blind"
    csi = CsiKind.CSIR_ONLY
    M: int = 64

    def __post_init__(self):
        if self.M < 1:
            raise ValueError(f"fully_blind.M must be >= 1, got {self.M}")


@dataclass(frozen=True)
class PartialPhaseConfig:
    """Quadrant phase compensation with the channel's imposed weights (GBMA-style)."""

    kind = "partial_phase"
    csi = CsiKind.PARTIAL_PHASE
    phase_error_bound: float = math.pi / 4
    interference: tuple[float, float] | None = None  # (alpha, delta)
    M: int = 1

    def __post_init__(self):
        if not 0 <= self.phase_error_bound < math.pi / 2:
            raise ValueError("partial_phase.phase_error_bound must lie in [0, pi/2)")
        if self.M != 1:
            raise UnsupportedConfigurationError("partial_phase supports single-antenna servers only")


@dataclass(frozen=True)
class WafelConfig:
    """Weighted aggregation with optimized weights.

    ``theta`` is the per-entry MSE budget relative to the mean per-device
    model variance, i.e. the weight QP uses ``theta * mean(sigma_k^2)``.
    ``weights="optimized"`` solves the weight QP each round; ``"uniform"``
    fixes equal weights (or the batch-share weights when heterogeneous).
    """

    kind = "wafel"
    csi = CsiKind.PARTIAL_PHASE
    theta: float = 2e-4
    phase_error_bound: float = math.pi / 4
    heterogeneous: bool = False
    weights: str = "optimized"
    M: int = 1

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError(f"wafel.theta must be > 0, got {self.theta}")
        if not 0 <= self.phase_error_bound < math.pi / 2:
            raise ValueError("wafel.phase_error_bound must lie in [0, pi/2)")
        if self.weights not in ("optimized", "uniform"):
            raise ValueError(f"wafel.weights must be 'optimized' or 'uniform', got {self.weights!r}")
        if self.M != 1:
            raise UnsupportedConfigurationError("wafel is implemented for single-antenna servers")


SchemeConfig = Union[IdealConfig, LocalCsitConfig, GlobalCsitConfig, FullyBlindConfig,
                     PartialPhaseConfig, WafelConfig]

SCHEME_TYPES = {cls.kind: cls for cls in (IdealConfig, LocalCsitConfig, GlobalCsitConfig,
                                          FullyBlindConfig, PartialPhaseConfig, WafelConfig)}


# --- shared types --------------------------------------------------------------------


@dataclass
class AggregationInput:
    local_models: np.ndarray  # K x s
    channel: ChannelRealization
    csi: CsiView
    noise: RoundNoise
    power_budget: float
    sigma_z2: float = 1.0
    rng: RngStream | None = None

    def __post_init__(self):
        W = np.asarray(self.local_models, dtype=float)
        if W.ndim != 2:
            raise ValueError(f"local models must be a K x s array, got shape {W.shape}")
        if W.shape[0] != self.channel.K:
            raise ValueError(f"{W.shape[0]} models for {self.channel.K} channels")
        if not self.power_budget > 0:
            raise ValueError(f"power budget must be > 0, got {self.power_budget}")
        self.local_models = W

    @property
    def K(self) -> int:
        return self.local_models.shape[0]

    @property
    def s(self) -> int:
        return self.local_models.shape[1]


@dataclass
class AggregationOutcome:
    global_model: np.ndarray
    active_set: tuple[int, ...]
    weights: np.ndarray  # length K, zero outside the active set
    target: np.ndarray  # the aggregate the scheme intends to compute
    predicted_mse: float | None = None
    flags: frozenset = frozenset()


@dataclass
class NormalizationStats:
    eta: np.ndarray
    sigma: np.ndarray


def normalize_models(W: np.ndarray) -> tuple[np.ndarray, NormalizationStats]:
    """Per-device zero-mean, unit-variance scaling of the model vectors.

    Devices whose standard deviation falls below ``SIGMA_FLOOR`` send zeros
    and are reconstructed from their mean alone.
    """
    eta = W.mean(axis=1)
    sigma = W.std(axis=1)
    centered = W - eta[:, None]
    flat = sigma < SIGMA_FLOOR
    sigma = np.where(flat, 0.0, sigma)
    W_bar = np.where(flat[:, None], 0.0, centered / np.where(flat, 1.0, sigma)[:, None])
    return W_bar, NormalizationStats(eta, sigma)


def _uniform_over(active, K):
    w = np.zeros(K)
    w[list(active)] = 1.0 / len(active)
    return w


def _carry_forward(prev_global, K, flag="empty_active_set"):
    prev = np.asarray(prev_global, dtype=float).copy()
    return AggregationOutcome(prev, (), np.zeros(K), prev.copy(), None, frozenset({flag}))


def _require_kind(inp: AggregationInput, kind: CsiKind):
    if inp.csi.kind is not kind:
        raise UnsupportedConfigurationError(
            f"scheme needs a {kind.value} view, got {inp.csi.kind.value}")


# --- local CSIT -----------------------------------------------------------------------


def truncation_rho(theta: float, P: float, sigma_h2: float = 1.0) -> float:
    """Denormalizing factor meeting E|p_k|^2 = P under Rayleigh fading.

    With gain g ~ Exp(mean sigma_h2), E[1/g; g >= theta] = E1(theta/sigma_h2)/sigma_h2.
    """
    return P * sigma_h2 / exp_integral_upper(theta / sigma_h2)


def truncated_power(h_k: complex, theta: float, rho: float) -> complex:
    """Device-side power control from the device's own channel only."""
    gain = abs(h_k) ** 2
    if gain < theta:
        return 0j
    return math.sqrt(rho) / abs(h_k) * np.exp(-1j * np.angle(h_k))


def local_csit_aggregate(inp: AggregationInput, theta: float, prev_global) -> AggregationOutcome:
    _require_kind(inp, CsiKind.LOCAL_CSIT)
    if inp.channel.M != 1:
        raise UnsupportedConfigurationError("local CSIT is limited to single-antenna servers")
    K = inp.K
    rho = truncation_rho(theta, inp.power_budget, inp.csi.sigma_h2)
    p = np.array([truncated_power(inp.csi.device_channel(k)[0], theta, rho) for k in range(K)])
    active = tuple(int(k) for k in np.nonzero(p != 0)[0])
    if not active:
        return _carry_forward(prev_global, K)
    h = inp.channel.coefficients[:, 0]
    y = (h * p) @ inp.local_models + inp.noise.awgn[0]
    w_G = y.real / (math.sqrt(rho) * len(active))
    weights = _uniform_over(active, K)
    target = weights @ inp.local_models
    pred = inp.s * inp.sigma_z2 / 2.0 / (rho * len(active) ** 2)
    return AggregationOutcome(w_G, active, weights, target, pred)


def expected_power_check(theta: float, P: float, trials: int, rng: RngStream,
                         sigma_h2: float = 1.0) -> float:
    """Monte-Carlo average transmit power E|p_k|^2 under truncated inversion.

    Devices below the threshold are silent and contribute zero power.
    """
    if not theta > 0:
        raise ValueError(f"theta must be > 0, got {theta}")
    rho = truncation_rho(theta, P, sigma_h2)
    gain = rng.generator().exponential(sigma_h2, size=trials)
    power = np.where(gain >= theta, rho / np.maximum(gain, 1e-300), 0.0)
    return float(power.mean())


# --- global CSIT ------------------------------------------------------------------------


def predicted_mse_global(b, S, channel, P: float, sigma_z2: float) -> float:
    """(sigma_z^2 / P) max_{k in S} ||b||^2 / |b^H h_k|^2, per normalized symbol.

    Returns ``inf`` when the equalizer is orthogonal to a selected channel.
    """
    H = np.asarray(getattr(channel, "coefficients", channel), dtype=complex)
    if H.ndim == 1:
        H = H[:, None]
    S = list(S)
    if not S:
        raise ValueError("active set must be non-empty")
    b = np.asarray(b, dtype=complex).ravel()
    gains = np.abs(H[S] @ b.conj()) ** 2
    if np.any(gains == 0):
        return math.inf
    return float(sigma_z2 / P * np.max(np.vdot(b, b).real / gains))


def global_csit_aggregate(inp: AggregationInput, selection: SelectionResult | tuple,
                          prev_global) -> AggregationOutcome:
    """Normalized uploads, equalizer-aware power control and denormalization.

    Device k in S sends p_k * w_bar_k with
    p_k = sqrt(rho) (sigma_k / sigma_bar) (b^H h_k)^* / |b^H h_k|^2, so that
    the equalized superposition is sqrt(rho) sum_k (sigma_k/sigma_bar) w_bar_k
    and the estimate sigma_bar Re{b^H Y}/(sqrt(rho)|S|) + eta_bar is unbiased
    for the mean over S. ``rho`` is the largest value keeping every
    |p_k|^2 <= P.
    """
    _require_kind(inp, CsiKind.GLOBAL_CSIT)
    if isinstance(selection, SelectionResult):
        S, b = selection.active, selection.equalizer
    else:
        S, b = selection
    S = tuple(int(k) for k in S)
    K = inp.K
    if not S:
        return _carry_forward(prev_global, K)
    b = np.asarray(b, dtype=complex).ravel()
    if not np.all(np.isfinite(b)):
        raise DegenerateEqualizerError("equalizer has non-finite entries")
    H = inp.csi.full_matrix()
    g = H[list(S)] @ b.conj()  # b^H h_k
    if np.any(np.abs(g) == 0):
        raise DegenerateEqualizerError("equalizer is orthogonal to an active channel")

    W_bar, stats = normalize_models(inp.local_models[list(S)])
    sigma_bar = stats.sigma.mean()
    eta_bar = stats.eta.mean()
    weights = _uniform_over(S, K)
    target = weights @ inp.local_models
    pred = predicted_mse_global(b, S, H, inp.power_budget, inp.sigma_z2)
    if sigma_bar < SIGMA_FLOOR:
        w_G = np.full(inp.s, eta_bar)
        return AggregationOutcome(w_G, S, weights, target, pred)

    amp = stats.sigma / sigma_bar
    sending = amp > 0
    rho = float(np.min(inp.power_budget * np.abs(g[sending]) ** 2 / amp[sending] ** 2))
    p = math.sqrt(rho) * amp * g.conj() / np.abs(g) ** 2
    h_act = inp.channel.coefficients[list(S)]  # |S| x M
    Y = h_act.T @ (p[:, None] * W_bar) + inp.noise.awgn  # M x s
    w_G = sigma_bar * (b.conj() @ Y).real / (math.sqrt(rho) * len(S)) + eta_bar
    return AggregationOutcome(w_G, S, weights, target, pred)


# --- fully blind ------------------------------------------------------------------------


def fully_blind_aggregate(inp: AggregationInput, prev_global=None) -> AggregationOutcome:
    """Constant-power uploads combined with b_m = (sum_k h_{k,m})^*."""
    _require_kind(inp, CsiKind.CSIR_ONLY)
    P, K, M = inp.power_budget, inp.K, inp.channel.M
    Y = math.sqrt(P) * inp.channel.coefficients.T @ inp.local_models + inp.noise.awgn
    combiner = inp.csi.server_matrix().sum(axis=0)
    w_G = (combiner.conj() @ Y).real / (math.sqrt(P) * K * M * inp.csi.sigma_h2)
    weights = np.full(K, 1.0 / K)
    return AggregationOutcome(w_G, tuple(range(K)), weights, weights @ inp.local_models)


def min_antennas_bound(epsilon: float, prob_delta: float, K: int, gamma_n: float,
                       sigma_h: float, sigma_z: float) -> int:
    """Antennas needed for ||w_G - mean|| <= epsilon/K with probability 1 - delta."""
    if min(epsilon, gamma_n, sigma_h, sigma_z) <= 0 or K < 1:
        raise ValueError("epsilon, gamma_n, sigma_h, sigma_z must be > 0 and K >= 1")
    if not 0 < prob_delta < 1:
        raise ValueError(f"prob_delta must lie in (0, 1), got {prob_delta}")
    c_n = 1.0 / gamma_n + sigma_h / sigma_z
    value = 8.0 * gamma_n ** 2 * K ** 2 / (epsilon ** 2 * c_n ** 2) * math.log(6.0 * K / prob_delta)
    # guard against 1279.9999999 style round-off pushing ceil up by one
    return int(math.ceil(value - 1e-9 * value))


# --- partial-phase blind ------------------------------------------------------------


def partial_phase_blind_aggregate(inp: AggregationInput, prev_global=None) -> AggregationOutcome:
    """Imposed aggregation w_G = y_r / (sqrt(P) K).

    The real interference block replaces the AWGN when present; otherwise the
    real part of the AWGN is used.
    """
    _require_kind(inp, CsiKind.PARTIAL_PHASE)
    if inp.channel.M != 1:
        raise UnsupportedConfigurationError("partial-phase blind needs a single-antenna server")
    P, K = inp.power_budget, inp.K
    phase = inp.csi.phase_estimates()
    x_gain = math.sqrt(P) * np.exp(-1j * phase)
    h = inp.channel.coefficients[:, 0]
    y_r = ((h * x_gain) @ inp.local_models).real
    if inp.noise.interference is not None:
        y_r = y_r + inp.noise.interference
    else:
        y_r = y_r + inp.noise.awgn[0].real
    w_G = y_r / (math.sqrt(P) * K)
    weights = np.full(K, 1.0 / K)
    return AggregationOutcome(w_G, tuple(range(K)), weights, weights @ inp.local_models)


# --- WAFeL ------------------------------------------------------------------------------------


def stacked_channel(h_eff) -> np.ndarray:
    """2 x K real matrix [Re h; Im h]."""
    h_eff = np.asarray(h_eff, dtype=complex).ravel()
    return np.vstack([h_eff.real, h_eff.imag])


def _noise_per_dim(sigma_z2: float) -> float:
    # CN(0, sigma_z2) puts sigma_z2/2 on each of the stacked real rows
    return sigma_z2 / 2.0


def wafel_equalizer(alpha, sigma, H, P: float, sigma_z2: float) -> np.ndarray:
    """b = ((noise/P) I_2 + H H^T)^{-1} H (alpha * sigma) (pseudo-inverse when noiseless)."""
    a = np.asarray(alpha) * np.asarray(sigma)
    G = _noise_per_dim(sigma_z2) / P * np.eye(2) + H @ H.T
    return np.linalg.pinv(G) @ (H @ a)


def wafel_mse_matrix(sigma, H, P: float, sigma_z2: float) -> np.ndarray:
    """diag(sigma) (I_K + (P/noise) H^T H)^{-1} diag(sigma), the per-entry MSE form."""
    sigma = np.asarray(sigma, dtype=float)
    K = sigma.size
    nd = _noise_per_dim(sigma_z2)
    if nd == 0:
        inner = np.eye(K) - np.linalg.pinv(H) @ H
    else:
        # Woodbury: (I + c H^T H)^{-1} = I - H^T (I_2/c + H H^T)^{-1} H
        inner = np.eye(K) - H.T @ np.linalg.solve(nd / P * np.eye(2) + H @ H.T, H)
    Q = sigma[:, None] * inner * sigma[None, :]
    return 0.5 * (Q + Q.T)


def wafel_predicted_mse(alpha, sigma, H, P: float, sigma_z2: float, s: int) -> float:
    alpha = validate_weights(alpha)
    return float(s * alpha @ wafel_mse_matrix(sigma, H, P, sigma_z2) @ alpha)


def wafel_aggregate(inp: AggregationInput, alpha, prev_global=None) -> AggregationOutcome:
    _require_kind(inp, CsiKind.PARTIAL_PHASE)
    if inp.channel.M != 1:
        raise UnsupportedConfigurationError("WAFeL is implemented for single-antenna servers")
    alpha = validate_weights(alpha)
    if alpha.size != inp.K:
        raise ValueError(f"need {inp.K} weights, got {alpha.size}")
    P = inp.power_budget
    W_bar, stats = normalize_models(inp.local_models)
    phase = inp.csi.phase_estimates()
    h = inp.channel.coefficients[:, 0]
    y = math.sqrt(P) * (h * np.exp(-1j * phase)) @ W_bar + inp.noise.awgn[0]
    Y = np.vstack([y.real, y.imag])
    H = stacked_channel(inp.csi.server_effective_channels())
    b = wafel_equalizer(alpha, stats.sigma, H, P, inp.sigma_z2)
    w_G = b @ Y / math.sqrt(P) + alpha @ stats.eta
    active = tuple(int(k) for k in np.nonzero(alpha > 0)[0])
    pred = float(inp.s * alpha @ wafel_mse_matrix(stats.sigma, H, P, inp.sigma_z2) @ alpha)
    return AggregationOutcome(w_G, active, alpha, alpha @ inp.local_models, pred)
