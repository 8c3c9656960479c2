"""Random streams, samplers and special functions shared by the simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EULER_GAMMA = 0.57721566490153286061


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream addressed by ``(seed, stream_id)``.

    The stream id is a tuple of non-negative integers so that substreams can
    be derived hierarchically, e.g. ``rng.substream(rep, round, device)``.
    Every call to :meth:`generator` returns a fresh Philox generator at the
    start of the stream, so two calls with equal streams give equal draws
    regardless of what else was sampled in between.
    """

    seed: int
    stream_id: tuple[int, ...] = ()

    def __post_init__(self):
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        if any(i < 0 for i in self.stream_id):
            raise ValueError(f"stream ids must be non-negative, got {self.stream_id}")

    def substream(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream_id)
        return np.random.Generator(np.random.Philox(seq))


def _as_generator(rng: RngStream | np.random.Generator) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    return rng


def sample_complex_gaussian(rng, n, variance: float) -> np.ndarray:
    """Draw circularly symmetric complex Gaussian samples.

    ``n`` may be an int or a shape tuple. Each entry has E|z|^2 = variance,
    split equally between the real and imaginary parts.
    """
    if variance < 0:
        raise ValueError(f"variance must be >= 0, got {variance}")
    shape = (n,) if np.isscalar(n) else tuple(n)
    if any(d < 0 for d in shape):
        raise ValueError(f"negative sample count in {shape}")
    if variance == 0:
        return np.zeros(shape, dtype=complex)
    gen = _as_generator(rng)
    scale = math.sqrt(variance / 2.0)
    return scale * (gen.standard_normal(shape) + 1j * gen.standard_normal(shape))


def sample_alpha_stable(rng, n, alpha: float, delta: float) -> np.ndarray:
    """Symmetric alpha-stable samples with CF exp(-delta^alpha |w|^alpha).

    Chambers-Mallows-Stuck transform of a uniform angle and a unit
    exponential variate.
    """
    if not 0 < alpha <= 2:
        raise ValueError(f"alpha must lie in (0, 2], got {alpha}")
    if delta <= 0:
        raise ValueError(f"delta must be > 0, got {delta}")
    shape = (n,) if np.isscalar(n) else tuple(n)
    gen = _as_generator(rng)
    v = gen.uniform(-np.pi / 2, np.pi / 2, size=shape)
    w = gen.standard_exponential(size=shape)
    if alpha == 1.0:
        x = np.tan(v)
    else:
        x = (
            np.sin(alpha * v)
            / np.cos(v) ** (1.0 / alpha)
            * (np.cos((1.0 - alpha) * v) / w) ** ((1.0 - alpha) / alpha)
        )
    return delta * x


def exp_integral_upper(x: float) -> float:
    """Upper exponential integral E1(x) = int_x^inf exp(-t)/t dt for x > 0.

    Power series for x <= 1, modified Lentz continued fraction above.
    """
    x = float(x)
    if not x > 0:
        raise ValueError(f"exp_integral_upper needs x > 0, got {x}")
    if math.isinf(x):
        return 0.0
    if x <= 1.0:
        # E1(x) = -gamma - ln x - sum_{n>=1} (-x)^n / (n n!)
        total = 0.0
        term = 1.0
        for n in range(1, 60):
            term *= -x / n
            contrib = term / n
            total += contrib
            if abs(contrib) < 1e-17 * abs(total):
                break
        return -EULER_GAMMA - math.log(x) - total
    # E1(x) = exp(-x) / (x + 1 - 1/(x + 3 - 4/(x + 5 - ...)))
    tiny = 1e-300
    b = x + 1.0
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 500):
        a = -float(i * i)
        b += 2.0
        d = 1.0 / (a * d + b)
        c = b + a / c
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h * math.exp(-x)


def empirical_mean_and_mse(samples, target) -> tuple[float, float]:
    """Return ``(||mean(samples) - target||, mean ||sample - target||^2)``."""
    samples = np.asarray(samples, dtype=float)
    target = np.asarray(target, dtype=float)
    if samples.ndim == 1:
        samples = samples[None, :]
    if samples.shape[0] == 0:
        raise ValueError("need at least one sample")
    if samples.shape[1:] != target.shape:
        raise ValueError(
            f"dimension mismatch: samples {samples.shape[1:]} vs target {target.shape}"
        )
    diff = samples - target
    bias = float(np.linalg.norm(diff.mean(axis=0)))
    mse = float(np.mean(np.sum(diff.reshape(len(diff), -1) ** 2, axis=1)))
    return bias, mse
