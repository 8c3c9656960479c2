"""Convergence-bound evaluators and measurement of the constants they need."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tasks import FederatedTask
from .training import TrainingConfig

BOUND_KINDS = ("global-csit", "wafel", "wafel-het", "partial-phase")


class BoundPreconditionError(ValueError):
    """The step size or another hypothesis of the requested bound does not hold."""


@dataclass(frozen=True)
class BoundConstants:
    """Problem constants; fields left as None must not be needed by the bound.

    ``f_gap`` is F(w_G^0) - F(w*).
    """

    L: float | None = None
    sigma_g2: float | None = None
    f_gap: float | None = None
    gamma: float | None = None
    G: float | None = None
    C: float | None = None
    omega: float | None = None
    sigma2_h_comp: float | None = None
    gamma_n: float | None = None

    def require(self, *names: str) -> list[float]:
        values = []
        for name in names:
            v = getattr(self, name)
            if v is None:
                raise BoundPreconditionError(f"constant {name} is required for this bound")
            if not (v >= 0 if name == "f_gap" else v > 0):
                raise BoundPreconditionError(f"constant {name} must be positive, got {v}")
            values.append(float(v))
        return values


def step_size_margin(L: float, mu: float, tau: int) -> float:
    """1 - (L mu)^2 tau (tau - 1) / 2 - L mu tau; the FedAvg bounds need it >= 0."""
    Lm = L * mu
    return 1.0 - 0.5 * Lm ** 2 * tau * (tau - 1) - Lm * tau


def _fedavg_prefix(constants: BoundConstants, cfg: TrainingConfig):
    if cfg.lr_schedule != "constant":
        raise BoundPreconditionError("this bound assumes a constant learning rate")
    L, sigma_g2, f_gap = constants.require("L", "sigma_g2", "f_gap")
    margin = step_size_margin(L, cfg.mu, cfg.tau)
    if margin < 0:
        raise BoundPreconditionError(
            f"step-size condition violated: margin {margin:.4g} < 0 (L={L:.4g}, mu={cfg.mu}, tau={cfg.tau})"
        )
    return L, sigma_g2, f_gap


def eval_convergence_bound(kind: str, constants: BoundConstants, cfg: TrainingConfig,
                           per_round: Sequence[tuple], *, b_s=None, alpha_tail: float | None = None,
                           s: int | None = None, K: int | None = None):
    """Evaluate a convergence bound.

    ``per_round`` holds one ``(MSE_t, x_t)`` pair per round, where ``x_t`` is
    the active-set size |S_t| for ``global-csit`` and the weight vector
    alpha_t for the WAFeL kinds (a scalar there is read as ||alpha_t||^2).

    The FedAvg-style kinds return a bound on (1/T) sum_t E||grad F(w_G^t)||^2.
    ``wafel-het`` needs ``b_s`` (the inverse batch sizes). ``partial-phase``
    ignores ``per_round`` and returns the envelope on E||w_G^t - w*||_a^a for
    t = 1..cfg.T; it needs the interference tail index, ``s`` and ``K``.
    """
    if kind not in BOUND_KINDS:
        raise ValueError(f"unknown bound kind {kind!r}; choose from {BOUND_KINDS}")
    if kind == "partial-phase":
        return _partial_phase_envelope(constants, cfg, alpha_tail, s, K)

    L, sigma_g2, f_gap = _fedavg_prefix(constants, cfg)
    mu, tau = cfg.mu, cfg.tau
    T = len(per_round)
    if T == 0:
        raise ValueError("per_round is empty")
    B = cfg.B

    total = 0.0
    for mse, x in per_round:
        if mse is None or not math.isfinite(mse) or mse < 0:
            raise ValueError(f"MSE_t must be finite and >= 0, got {mse}")
        if kind == "global-csit":
            size = float(x)
            if size <= 0:
                raise ValueError("active-set size must be positive")
            total += mu ** 2 * sigma_g2 / B * tau / size + mse
        elif kind == "wafel":
            norm2 = float(x) if np.ndim(x) == 0 else float(np.sum(np.asarray(x) ** 2))
            total += mu ** 2 * sigma_g2 / B * tau * norm2 + mse
        else:
            if b_s is None:
                raise BoundPreconditionError("wafel-het bound needs b_s")
            a = np.asarray(x, dtype=float)
            bs = np.asarray(b_s, dtype=float)
            total += (L * mu ** 3 * tau * (tau - 1) / 2 * sigma_g2 * float(a @ bs)
                      + mu ** 2 * sigma_g2 * tau * float(a @ (bs * a)) + mse)

    first = 2.0 * f_gap / (mu * tau * T)
    last = L / (mu * tau * T) * total
    if kind == "wafel-het":
        return first + last
    return first + L ** 2 * mu ** 2 * (tau - 1) / 2 * sigma_g2 / B + last


def _partial_phase_envelope(constants, cfg, alpha_tail, s, K) -> np.ndarray:
    if alpha_tail is None or not 1 < alpha_tail <= 2:
        raise BoundPreconditionError("partial-phase bound needs a tail index in (1, 2]")
    if s is None or K is None:
        raise ValueError("partial-phase bound needs s and K")
    if cfg.lr_schedule != "diminishing":
        raise BoundPreconditionError("partial-phase bound assumes mu_t = theta_lr / t")
    L, C, G, omega, sigma2 = constants.require("L", "C", "G", "omega", "sigma2_h_comp")
    a, th = alpha_tail, cfg.theta_lr
    if not th > (a - 1) / (omega * L):
        raise BoundPreconditionError(
            f"need theta_lr > (alpha - 1)/(omega L) = {(a - 1) / (omega * L):.4g}, got {th}"
        )
    sigma = math.sqrt(sigma2)
    const = 4 * th ** a * (C + sigma ** a * G ** a * s ** (1 - 1 / a) / K ** (a / 2))
    const /= omega * th * L - a + 1
    t = np.arange(1, cfg.T + 1, dtype=float)
    return const / t ** (a - 1)


# --- measured constants ----------------------------------------------------------------


def _require_least_squares(task: FederatedTask):
    if task.model.kind != "least_squares":
        raise ValueError("closed-form constants are only available for the least-squares task")


def _augmented(X):
    return np.hstack([X, np.ones((len(X), 1))])


def smoothness_constant(task: FederatedTask, iters: int = 500, tol: float = 1e-12) -> float:
    """Largest Hessian eigenvalue of the pooled least-squares loss, by power iteration.

    The Hessian is (A^T A / n) kron I_C with A the bias-augmented features,
    so iterating on the small (dim+1) x (dim+1) block is enough.
    """
    _require_least_squares(task)
    X, _ = task.pooled()
    A = _augmented(X)
    Hb = A.T @ A / len(A)
    v = np.ones(Hb.shape[0]) / math.sqrt(Hb.shape[0])
    lam = 0.0
    for _ in range(iters):
        u = Hb @ v
        new = float(np.linalg.norm(u))
        v = u / new
        if abs(new - lam) <= tol * new:
            lam = new
            break
        lam = new
    return lam


def optimal_weights(task: FederatedTask) -> np.ndarray:
    """Minimizer of the pooled least-squares loss, packed like the model vector."""
    _require_least_squares(task)
    X, y = task.pooled()
    Y = np.eye(task.model.classes)[y]
    sol, *_ = np.linalg.lstsq(_augmented(X), Y, rcond=None)
    return np.concatenate([sol[:-1].ravel(), sol[-1]])


def optimal_loss(task: FederatedTask) -> float:
    return task.global_loss(optimal_weights(task))


def gradient_variance_bound(task: FederatedTask, points: Sequence[np.ndarray], B: int) -> float:
    """Smallest sigma_g^2 with E||grad F_k(w, xi) - grad F(w)||^2 <= sigma_g^2 / B at ``points``.

    For a batch of B samples drawn without replacement from device k,
    B E||g_k(xi) - grad F||^2 = B ||grad F_k - grad F||^2 + S_k^2 (n_k - B)/(n_k - 1)
    with S_k^2 the per-sample gradient spread. The maximum over devices and
    points is returned.
    """
    model = task.model
    worst = 0.0
    for w in points:
        g = task.global_grad(w)
        for X, y in zip(task.device_X, task.device_y):
            n = len(y)
            b = min(B, n)
            per = model.per_sample_grads(w, X, y)
            gk = per.mean(axis=0)
            spread = float(np.mean(np.sum((per - gk) ** 2, axis=1)))
            fpc = (n - b) / (n - 1) if n > 1 else 0.0
            worst = max(worst, b * float(np.sum((gk - g) ** 2)) + spread * fpc)
    return worst


def compensated_channel_moments(phase_error_bound: float, sigma_h2: float = 1.0):
    """Mean and variance of Re{h exp(-j phi_hat)} for Rayleigh h and uniform phase error.

    Returns (omega, sigma^2) with omega = E|h| E[cos e] and
    sigma^2 = E|h|^2 E[cos^2 e] - omega^2.
    """
    b = float(phase_error_bound)
    mean_abs = math.sqrt(math.pi * sigma_h2) / 2
    if b == 0:
        ecos, ecos2 = 1.0, 1.0
    else:
        ecos = math.sin(b) / b
        ecos2 = 0.5 + math.sin(2 * b) / (4 * b)
    omega = mean_abs * ecos
    return omega, sigma_h2 * ecos2 - omega ** 2


def empirical_gradient_average(task: FederatedTask, models: Sequence[np.ndarray]) -> float:
    """(1/T) sum_{t<T} ||grad F(w_G^t)||^2 over w_G^0 .. w_G^{T-1}."""
    return float(np.mean([np.sum(task.global_grad(w) ** 2) for w in models]))


def measure_constants(task: FederatedTask, models: Sequence[np.ndarray], B: int) -> BoundConstants:
    """L, sigma_g^2 and the optimality gap for a least-squares run with global models ``models``."""
    L = smoothness_constant(task)
    sigma_g2 = gradient_variance_bound(task, models, B)
    f_gap = max(0.0, task.global_loss(models[0]) - optimal_loss(task))
    return BoundConstants(L=L, sigma_g2=sigma_g2, f_gap=f_gap)
