"""FedAvg with a pluggable over-the-air aggregation step."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import schemes as sch
from ..channel import (ChannelRealization, CsiKind, NoiseConfig, draw_rayleigh,
                       draw_round_noise, make_partial_phase_view, make_view)
from ..numerics import RngStream
from ..optim import WeightProblem, mp_greedy_selection, solve_weight_selection, validate_weights
from .tasks import FederatedTask

# substream layout inside one training run
_CHANNEL, _NOISE, _PHASE, _SGD, _INIT = 0, 1, 2, 3, 4


class TrainingAborted(RuntimeError):
    def __init__(self, round_index: int, scheme: str, cause: BaseException):
        super().__init__(f"round {round_index}, scheme {scheme}: {cause}")
        self.round_index = round_index
        self.scheme = scheme
        self.cause = cause


@dataclass(frozen=True)
class TrainingConfig:
    mu: float = 0.1
    tau: int = 3
    T: int = 100
    B: int = 16
    lr_schedule: str = "constant"  # or "diminishing": mu_t = theta_lr / t
    theta_lr: float = 1.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be > 0, got {self.mu}")
        for name in ("tau", "T", "B"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr_schedule not in ("constant", "diminishing"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.lr_schedule == "diminishing" and not self.theta_lr > 0:
            raise ValueError("theta_lr must be > 0")

    def learning_rate(self, t: int) -> float:
        """Step size for round t (0-based); the diminishing schedule uses theta_lr/(t+1)."""
        if self.lr_schedule == "constant":
            return self.mu
        return self.theta_lr / (t + 1)


@dataclass(frozen=True)
class LinkConfig:
    """Uplink parameters shared by all schemes: P, sigma_z^2 and sigma_h^2."""

    P: float = 10.0
    sigma_z2: float = 1.0
    sigma_h2: float = 1.0

    def __post_init__(self):
        if not self.P > 0 or self.sigma_z2 < 0 or not self.sigma_h2 > 0:
            raise ValueError("need P > 0, sigma_z2 >= 0, sigma_h2 > 0")

    @classmethod
    def from_snr(cls, snr: float, sigma_h2: float = 1.0) -> "LinkConfig":
        return cls(P=float(snr), sigma_z2=1.0, sigma_h2=sigma_h2)


@dataclass(frozen=True)
class HeterogeneityProfile:
    speeds: np.ndarray
    batch_sizes: np.ndarray
    weight_target: np.ndarray  # B_k / B_tot
    noise_scale: np.ndarray  # 1 / B_k


def assign_heterogeneous_batches(speeds, B_ref: int) -> HeterogeneityProfile:
    """Batch sizes proportional to 1/f_k, the slowest device getting ``B_ref``."""
    speeds = np.asarray(speeds, dtype=float)
    if np.any(speeds <= 0):
        raise ValueError("computing speeds must be positive")
    batches = np.maximum(1, np.round(B_ref * speeds.min() / speeds)).astype(int)
    return HeterogeneityProfile(speeds, batches, batches / batches.sum(), 1.0 / batches)


@dataclass
class RoundRecord:
    repetition: int
    round: int
    scheme: str
    loss: float
    accuracy: float
    agg_error: float
    pred_mse: float | None
    active_set: int
    weight_norm: float
    flags: tuple[str, ...] = ()


@dataclass
class TrainingRun:
    records: list[RoundRecord]
    models: list[np.ndarray]  # w_G^0 .. w_G^T
    weights: list[np.ndarray] = field(default_factory=list)
    aborted: TrainingAborted | None = None


def ideal_orthogonal_aggregate(local_models, weights) -> np.ndarray:
    weights = validate_weights(weights)
    return weights @ np.asarray(local_models, dtype=float)


def local_sgd(w, X, y, model, mu: float, tau: int, batch: int, rng: RngStream) -> np.ndarray:
    """``tau`` mini-batch SGD steps, batches drawn without replacement.

    The device walks through a random permutation of its data and reshuffles
    when fewer than ``batch`` unused samples remain.
    """
    w = np.array(w, dtype=float)
    if mu == 0:
        return w
    n = len(y)
    batch = min(batch, n)
    gen = rng.generator()
    order = gen.permutation(n)
    pos = 0
    for _ in range(tau):
        if pos + batch > n:
            order = gen.permutation(n)
            pos = 0
        idx = order[pos:pos + batch]
        pos += batch
        w -= mu * model.grad(w, X[idx], y[idx])
    return w


# --- one aggregation round -----------------------------------------------------------


def round_channel(rng: RngStream, t: int, K: int, M: int, link: LinkConfig) -> ChannelRealization:
    return draw_rayleigh(rng.substream(_CHANNEL, t), K, M, link.sigma_h2)


def wafel_weights(cfg: sch.WafelConfig, sigma, H, link: LinkConfig,
                  profile: HeterogeneityProfile | None = None):
    """Weight vector for one WAFeL round and whether the solver fell back."""
    K = len(sigma)
    d = profile.noise_scale if (cfg.heterogeneous and profile is not None) else np.ones(K)
    if cfg.weights == "uniform":
        alpha = (profile.weight_target if (cfg.heterogeneous and profile is not None)
                 else np.full(K, 1.0 / K))
        return alpha, False
    Q = sch.wafel_mse_matrix(sigma, H, link.P, link.sigma_z2)
    scale = float(np.mean(np.asarray(sigma) ** 2))
    theta = cfg.theta * scale if scale > 0 else 1.0
    sol = solve_weight_selection(WeightProblem(Q, d, theta))
    return sol.alpha, sol.infeasible


def aggregate_round(cfg, local_models: np.ndarray, t: int, rng: RngStream, link: LinkConfig,
                    prev_global: np.ndarray,
                    profile: HeterogeneityProfile | None = None,
                    channel: ChannelRealization | None = None) -> sch.AggregationOutcome:
    """Run scheme ``cfg`` for round t with the round's shared channel and noise draws.

    ``channel`` overrides the Rayleigh draw (used for controlled experiments).
    """
    K, s = local_models.shape
    if cfg.kind == "ideal":
        weights = profile.weight_target if profile is not None else np.full(K, 1.0 / K)
        agg = ideal_orthogonal_aggregate(local_models, weights)
        return sch.AggregationOutcome(agg, tuple(range(K)), weights, agg.copy(), 0.0)

    if channel is None:
        channel = round_channel(rng, t, K, cfg.M, link)
    interference = getattr(cfg, "interference", None)
    noise = draw_round_noise(rng.substream(_NOISE, t), s, channel.M,
                             NoiseConfig(link.sigma_z2, interference))
    if cfg.csi is CsiKind.PARTIAL_PHASE:
        view = make_partial_phase_view(rng.substream(_PHASE, t), channel, cfg.phase_error_bound)
    else:
        view = make_view(cfg.csi, channel)
    inp = sch.AggregationInput(local_models, channel, view, noise, link.P, link.sigma_z2)

    if cfg.kind == "local_csit":
        return sch.local_csit_aggregate(inp, cfg.theta, prev_global)
    if cfg.kind == "global_csit":
        selection = mp_greedy_selection(view.full_matrix(), link.P, link.sigma_z2, cfg.theta)
        return sch.global_csit_aggregate(inp, selection, prev_global)
    if cfg.kind == "fully_blind":
        return sch.fully_blind_aggregate(inp, prev_global)
    if cfg.kind == "partial_phase":
        return sch.partial_phase_blind_aggregate(inp, prev_global)
    if cfg.kind == "wafel":
        _, stats = sch.normalize_models(local_models)
        H = sch.stacked_channel(view.server_effective_channels())
        alpha, fallback = wafel_weights(cfg, stats.sigma, H, link, profile)
        out = sch.wafel_aggregate(inp, alpha, prev_global)
        if fallback:
            out.flags = out.flags | {"solver_fallback"}
        return out
    raise ValueError(f"unknown scheme kind {cfg.kind!r}")


# --- training loop ---------------------------------------------------------------------


def run_federated_training(task: FederatedTask, scheme_cfg, training_cfg: TrainingConfig,
                           rng: RngStream, link: LinkConfig | None = None, *,
                           profile: HeterogeneityProfile | None = None,
                           repetition: int = 0, scheme_name: str | None = None,
                           initial_model: np.ndarray | None = None,
                           channel_fn=None) -> TrainingRun:
    """FedAvg rounds: local SGD on every device, over-the-air aggregation, broadcast.

    All randomness is keyed by ``(round, device)`` substreams of ``rng`` so
    that different schemes run with the same seed see the same channels,
    noise, phase errors and mini-batches. A failure inside a round stops the
    run; the records so far are kept and ``aborted`` holds the error.
    ``channel_fn(t, K, M)``, when given, replaces the Rayleigh channel draw.
    """
    link = link or LinkConfig()
    name = scheme_name or scheme_cfg.kind
    model = task.model
    w_G = model.initial(rng.substream(_INIT)) if initial_model is None else np.array(initial_model, float)
    K = task.K
    batches = profile.batch_sizes if profile is not None else np.full(K, training_cfg.B)
    run = TrainingRun([], [w_G.copy()])
    for t in range(training_cfg.T):
        mu_t = training_cfg.learning_rate(t)
        try:
            W = np.stack([
                local_sgd(w_G, task.device_X[k], task.device_y[k], model, mu_t,
                          training_cfg.tau, int(batches[k]), rng.substream(_SGD, t, k))
                for k in range(K)
            ])
            channel = channel_fn(t, K, scheme_cfg.M) if channel_fn is not None else None
            out = aggregate_round(scheme_cfg, W, t, rng, link, w_G, profile, channel)
            if not np.all(np.isfinite(out.global_model)):
                raise FloatingPointError("aggregated model has non-finite entries")
        except Exception as exc:  # noqa: BLE001 - surfaced with round context
            run.aborted = TrainingAborted(t, name, exc)
            run.records.append(RoundRecord(repetition, t, name, math.nan, math.nan, math.nan,
                                           None, 0, math.nan, ("aborted",)))
            break
        w_G = out.global_model
        run.models.append(w_G.copy())
        run.weights.append(out.weights)
        run.records.append(RoundRecord(
            repetition=repetition,
            round=t,
            scheme=name,
            loss=task.global_loss(w_G),
            accuracy=task.accuracy(w_G),
            agg_error=float(np.linalg.norm(w_G - out.target)),
            pred_mse=out.predicted_mse,
            active_set=len(out.active_set),
            weight_norm=float(np.linalg.norm(out.weights)),
            flags=tuple(sorted(out.flags)),
        ))
    return run
