"""Block-fading channels, receiver noise and the CSI each scheme may use."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .numerics import RngStream, sample_alpha_stable, sample_complex_gaussian


class CsiAccessError(PermissionError):
    """A scheme tried to read channel knowledge outside its CSI view."""


class CsiKind(str, enum.Enum):
    CSIR_ONLY = "csir-only"
    LOCAL_CSIT = "local-csit"
    GLOBAL_CSIT = "global-csit"
    PARTIAL_PHASE = "partial-phase"


@dataclass(frozen=True)
class ChannelRealization:
    """K x M complex gains for one communication round."""

    coefficients: np.ndarray
    sigma_h2: float = 1.0

    def __post_init__(self):
        h = np.asarray(self.coefficients, dtype=complex)
        if h.ndim == 1:
            h = h[:, None]
        if h.ndim != 2:
            raise ValueError(f"channel matrix must be 2-D, got shape {h.shape}")
        if not np.all(np.isfinite(h)):
            raise ValueError("channel coefficients must be finite")
        h.setflags(write=False)
        object.__setattr__(self, "coefficients", h)

    @property
    def K(self) -> int:
        return self.coefficients.shape[0]

    @property
    def M(self) -> int:
        return self.coefficients.shape[1]


@dataclass(frozen=True)
class NoiseConfig:
    sigma_z2: float = 1.0
    interference: tuple[float, float] | None = None  # (alpha, delta)

    def __post_init__(self):
        if self.sigma_z2 < 0:
            raise ValueError(f"sigma_z2 must be >= 0, got {self.sigma_z2}")
        if self.interference is not None:
            alpha, delta = self.interference
            if not 0 < alpha <= 2 or delta <= 0:
                raise ValueError(
                    f"interference needs alpha in (0, 2] and delta > 0, got {self.interference}"
                )


@dataclass(frozen=True)
class RoundNoise:
    """Receiver noise for one round: M x s AWGN and optional real interference."""

    awgn: np.ndarray
    interference: np.ndarray | None = None


class CsiView:
    """Read-only window onto a channel realization.

    Which accessors work depends on ``kind``:

    * ``local-csit``: :meth:`device_channel` (device k sees only row k).
    * ``global-csit``: :meth:`device_channel` and :meth:`full_matrix`.
    * ``csir-only``: :meth:`server_matrix` only; devices know nothing.
    * ``partial-phase``: :meth:`phase_estimate` for devices and
      :meth:`server_effective_channels` for the server.

    Every other access raises :class:`CsiAccessError`.
    """

    def __init__(self, kind, channel: ChannelRealization, phase_estimates=None,
                 phase_error_bound: float = 0.0):
        self.kind = CsiKind(kind)
        self._channel = channel
        if self.kind is CsiKind.PARTIAL_PHASE:
            if phase_estimates is None:
                raise ValueError("partial-phase view needs phase estimates")
            phase_estimates = np.asarray(phase_estimates, dtype=float)
            phase_estimates.setflags(write=False)
        self._phase = phase_estimates
        self.phase_error_bound = float(phase_error_bound)

    @property
    def K(self) -> int:
        return self._channel.K

    @property
    def M(self) -> int:
        return self._channel.M

    @property
    def sigma_h2(self) -> float:
        return self._channel.sigma_h2

    def _require(self, *kinds):
        if self.kind not in kinds:
            raise CsiAccessError(f"{self.kind.value} view does not expose this information")

    def device_channel(self, k: int) -> np.ndarray:
        self._require(CsiKind.LOCAL_CSIT, CsiKind.GLOBAL_CSIT)
        return self._channel.coefficients[k]

    def full_matrix(self) -> np.ndarray:
        self._require(CsiKind.GLOBAL_CSIT)
        return self._channel.coefficients

    def server_matrix(self) -> np.ndarray:
        self._require(CsiKind.CSIR_ONLY, CsiKind.GLOBAL_CSIT)
        return self._channel.coefficients

    def phase_estimate(self, k: int) -> float:
        self._require(CsiKind.PARTIAL_PHASE)
        return float(self._phase[k])

    def phase_estimates(self) -> np.ndarray:
        self._require(CsiKind.PARTIAL_PHASE)
        return self._phase

    def server_effective_channels(self) -> np.ndarray:
        """Compensated channels h_k exp(-j phase_estimate_k), as seen by the server."""
        self._require(CsiKind.PARTIAL_PHASE)
        return self._channel.coefficients[:, 0] * np.exp(-1j * self._phase)


def make_view(kind, channel: ChannelRealization) -> CsiView:
    """Full-knowledge view of the given kind (not for partial-phase)."""
    kind = CsiKind(kind)
    if kind is CsiKind.PARTIAL_PHASE:
        raise ValueError("use make_partial_phase_view for partial-phase CSI")
    return CsiView(kind, channel)


def draw_rayleigh(rng: RngStream, K: int, M: int, sigma_h2: float = 1.0) -> ChannelRealization:
    """I.i.d. CN(0, sigma_h2) gains; antenna column m comes from substream m.

    Drawing per antenna keeps the first columns identical when only M
    changes, so schemes with different array sizes can share a round.
    """
    if K < 1 or M < 1:
        raise ValueError(f"need K, M >= 1, got K={K}, M={M}")
    if sigma_h2 <= 0:
        raise ValueError(f"sigma_h2 must be > 0, got {sigma_h2}")
    h = np.column_stack([sample_complex_gaussian(rng.substream(m), K, sigma_h2)
                         for m in range(M)])
    return ChannelRealization(h, sigma_h2)


def make_partial_phase_view(rng: RngStream, channel: ChannelRealization,
                            bound: float = np.pi / 4) -> CsiView:
    """Phase estimates off by independent Uniform(-bound, bound) errors."""
    if not 0 <= bound < np.pi / 2:
        raise ValueError(f"phase error bound must lie in [0, pi/2), got {bound}")
    if channel.M != 1:
        raise ValueError("partial-phase CSI is defined for single-antenna servers")
    true_phase = np.angle(channel.coefficients[:, 0])
    if bound == 0:
        err = np.zeros(channel.K)
    else:
        err = rng.generator().uniform(-bound, bound, size=channel.K)
    return CsiView(CsiKind.PARTIAL_PHASE, channel, true_phase + err, bound)


def draw_round_noise(rng: RngStream, s: int, M: int, cfg: NoiseConfig) -> RoundNoise:
    awgn = np.vstack([sample_complex_gaussian(rng.substream(0, m), s, cfg.sigma_z2)
                      for m in range(M)]).reshape(M, s)
    interference = None
    if cfg.interference is not None:
        alpha, delta = cfg.interference
        interference = sample_alpha_stable(rng.substream(1), s, alpha, delta)
    return RoundNoise(awgn, interference)
