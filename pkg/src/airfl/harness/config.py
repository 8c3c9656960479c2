"""Experiment configuration: a strict JSON document.

Schema (every section optional except ``seed`` and ``schemes``)::

    {
      "seed": 0,
      "repetitions": 20,
      "output_dir": "results",
      "task": {"K": 30, "classes": 10, "dim": 20, "samples_per_device": 100,
               "skew": 2, "loss": "logistic", "hidden": 16, "separation": 0.5,
               "test_samples": 2000, "size_range": 4.0},
      "training": {"mu": 0.1, "tau": 3, "T": 100, "B": 16,
                   "lr_schedule": "constant", "theta_lr": 1.0},
      "link": {"snr": 10, "sigma_h2": 1.0},          # or {"P": .., "sigma_z2": ..}
      "heterogeneity": {"speeds": [f_1, ..., f_K]},  # optional
      "schemes": [{"kind": "wafel", "name": "wafel", "theta": 2e-4}, ...],
      "bound": {"L": .., "sigma_g2": .., "C": .., "G": ..}  # optional overrides
    }

Scheme entries take ``kind`` (ideal, local_csit, global_csit, fully_blind,
partial_phase, wafel), an optional display ``name`` and the fields of the
matching scheme config. Unknown keys anywhere are errors.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..channel import NoiseConfig
from ..learning.bounds import BoundConstants
from ..learning.tasks import LOSS_KINDS
from ..learning.training import (HeterogeneityProfile, LinkConfig, TrainingConfig,
                                 assign_heterogeneous_batches)
from ..schemes import SCHEME_TYPES

DEFAULT_SNR = 10.0


class ConfigError(ValueError):
    """All validation problems found in one configuration."""

    def __init__(self, errors: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(errors))
        self.errors = errors


@dataclass(frozen=True)
class TaskConfig:
    K: int = 30
    classes: int = 10
    dim: int = 20
    samples_per_device: int = 100
    skew: int = 2
    loss: str = "logistic"
    hidden: int = 16
    separation: float = 0.5
    test_samples: int = 2000
    size_range: float = 4.0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"task.K must be >= 1, got {self.K}")
        if self.classes < 2:
            raise ValueError(f"task.classes must be >= 2, got {self.classes}")
        if self.dim < 1:
            raise ValueError(f"task.dim must be >= 1, got {self.dim}")
        if not 1 <= self.skew <= self.classes:
            raise ValueError(f"task.skew must lie in [1, classes], got {self.skew}")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"task.loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.samples_per_device < 1 or self.test_samples < 1 or self.hidden < 1:
            raise ValueError("task sizes must be >= 1")
        if not self.separation > 0 or not self.size_range >= 1:
            raise ValueError("task.separation must be > 0 and task.size_range >= 1")


@dataclass(frozen=True)
class SchemeEntry:
    name: str
    config: object


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    schemes: tuple[SchemeEntry, ...]
    task: TaskConfig = TaskConfig()
    training: TrainingConfig = TrainingConfig()
    link: LinkConfig = LinkConfig()
    repetitions: int = 20
    output_dir: str = "results"
    speeds: tuple[float, ...] | None = None
    bound_overrides: dict = field(default_factory=dict)

    def profile(self) -> HeterogeneityProfile | None:
        if self.speeds is None:
            return None
        return assign_heterogeneous_batches(self.speeds, self.training.B)

    def resolved(self) -> dict:
        """Plain-data echo of the configuration with all defaults filled in."""
        schemes = []
        for e in self.schemes:
            d = {"kind": e.config.kind, "name": e.name}
            d.update(dataclasses.asdict(e.config))
            schemes.append(d)
        return {
            "seed": self.seed,
            "repetitions": self.repetitions,
            "output_dir": self.output_dir,
            "task": dataclasses.asdict(self.task),
            "training": dataclasses.asdict(self.training),
            "link": dataclasses.asdict(self.link),
            "heterogeneity": None if self.speeds is None else {"speeds": list(self.speeds)},
            "schemes": schemes,
            "bound": dict(self.bound_overrides),
        }


_TOP_KEYS = {"seed", "repetitions", "output_dir", "task", "training", "link",
             "heterogeneity", "schemes", "bound"}
_REQUIRED = ("seed", "schemes")


def _section(raw: dict, name: str, cls, errors: list[str]):
    data = raw.get(name, {})
    if not isinstance(data, dict):
        errors.append(f"{name}: expected an object")
        return None
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - allowed)
    for key in unknown:
        errors.append(f"{name}.{key}: unknown key")
    kwargs = {k: v for k, v in data.items() if k in allowed}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        errors.append(f"{name}: {exc}")
        return None


def _resolve_link(raw: dict, errors: list[str]) -> LinkConfig | None:
    data = raw.get("link", {})
    if not isinstance(data, dict):
        errors.append("link: expected an object")
        return None
    unknown = sorted(set(data) - {"snr", "P", "sigma_z2", "sigma_h2"})
    for key in unknown:
        errors.append(f"link.{key}: unknown key")
    sigma_h2 = data.get("sigma_h2", 1.0)
    has_p, has_z = "P" in data, "sigma_z2" in data
    try:
        if has_p and has_z:
            link = LinkConfig(P=float(data["P"]), sigma_z2=float(data["sigma_z2"]),
                              sigma_h2=float(sigma_h2))
            if "snr" in data and abs(link.P / link.sigma_z2 - float(data["snr"])) > 1e-9 * link.P:
                errors.append("link.snr: inconsistent with explicit P / sigma_z2")
            return link
        if has_p or has_z:
            errors.append("link: give both P and sigma_z2, or only snr")
            return None
        snr = data.get("snr", DEFAULT_SNR)
        if not isinstance(snr, (int, float)) or not snr > 0:
            errors.append(f"link.snr: must be a positive number, got {snr!r}")
            return None
        return LinkConfig.from_snr(float(snr), float(sigma_h2))
    except (TypeError, ValueError) as exc:
        errors.append(f"link: {exc}")
        return None


def _scheme_entries(raw: dict, errors: list[str]) -> tuple[SchemeEntry, ...]:
    items = raw.get("schemes")
    if not isinstance(items, list) or not items:
        errors.append("schemes: expected a non-empty list")
        return ()
    entries, names = [], set()
    for i, item in enumerate(items):
        where = f"schemes[{i}]"
        if not isinstance(item, dict) or "kind" not in item:
            errors.append(f"{where}: needs a 'kind'")
            continue
        kind = item["kind"]
        cls = SCHEME_TYPES.get(kind)
        if cls is None:
            errors.append(f"{where}.kind: unknown scheme {kind!r}; choose from {sorted(SCHEME_TYPES)}")
            continue
        allowed = {f.name for f in dataclasses.fields(cls)}
        params = {k: v for k, v in item.items() if k not in ("kind", "name")}
        bad = sorted(set(params) - allowed)
        for key in bad:
            errors.append(f"{where}.{key}: unknown key for {kind}")
        params = {k: v for k, v in params.items() if k in allowed}
        if params.get("interference") is not None:
            try:
                params["interference"] = tuple(float(v) for v in params["interference"])
                NoiseConfig(1.0, params["interference"])
            except (TypeError, ValueError) as exc:
                errors.append(f"{where}.interference: {exc}")
                continue
        try:
            cfg = cls(**params)
        except (TypeError, ValueError) as exc:
            errors.append(f"{where}: {exc}")
            continue
        name = str(item.get("name", kind))
        if name in names:
            errors.append(f"{where}.name: duplicate scheme name {name!r}")
            continue
        names.add(name)
        entries.append(SchemeEntry(name, cfg))
    return tuple(entries)


def parse_config(raw) -> ExperimentConfig:
    """Validate a decoded configuration; raises :class:`ConfigError` listing every problem."""
    if not isinstance(raw, dict):
        raise ConfigError(["top level: expected an object"])
    errors: list[str] = []
    for key in sorted(set(raw) - _TOP_KEYS):
        errors.append(f"{key}: unknown key")
    for key in _REQUIRED:
        if key not in raw:
            errors.append(f"{key}: missing required key")

    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        errors.append(f"seed: must be a non-negative integer, got {seed!r}")
    reps = raw.get("repetitions", 20)
    if not isinstance(reps, int) or isinstance(reps, bool) or reps < 1:
        errors.append(f"repetitions: must be a positive integer, got {reps!r}")
    out = raw.get("output_dir", "results")
    if not isinstance(out, str) or not out:
        errors.append("output_dir: must be a non-empty string")

    task = _section(raw, "task", TaskConfig, errors)
    training = _section(raw, "training", TrainingConfig, errors)
    link = _resolve_link(raw, errors)
    schemes = _scheme_entries(raw, errors) if "schemes" in raw else ()

    speeds = None
    het = raw.get("heterogeneity")
    if het is not None:
        if not isinstance(het, dict) or set(het) != {"speeds"}:
            errors.append("heterogeneity: expected exactly {'speeds': [...]}")
        else:
            try:
                speeds = tuple(float(v) for v in het["speeds"])
                if task is not None and len(speeds) != task.K:
                    errors.append(f"heterogeneity.speeds: need {task.K} entries, got {len(speeds)}")
                if any(v <= 0 for v in speeds):
                    errors.append("heterogeneity.speeds: all speeds must be > 0")
            except (TypeError, ValueError):
                errors.append("heterogeneity.speeds: expected a list of numbers")

    overrides = raw.get("bound", {})
    if not isinstance(overrides, dict):
        errors.append("bound: expected an object")
        overrides = {}
    allowed = {f.name for f in dataclasses.fields(BoundConstants)}
    for key in sorted(set(overrides) - allowed):
        errors.append(f"bound.{key}: unknown key")
    for key, v in overrides.items():
        if key in allowed and (not isinstance(v, (int, float)) or v < 0):
            errors.append(f"bound.{key}: must be a non-negative number")

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(seed=seed, schemes=schemes, task=task, training=training,
                            link=link, repetitions=reps, output_dir=out, speeds=speeds,
                            bound_overrides=dict(overrides))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read ({exc.strerror or exc})"]) from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: not valid JSON ({exc})"]) from exc
    return parse_config(raw)
