"""Paired multi-scheme experiments and post-hoc bound evaluation."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from ..learning import bounds as bd
from ..learning.tasks import FederatedTask, generate_synthetic_task
from ..learning.training import run_federated_training
from ..numerics import RngStream
from .config import ExperimentConfig
from .records import RECORDS_FILE, emit_records, read_records

log = logging.getLogger(__name__)

RESOLVED_FILE = "resolved_config.json"
TRAJECTORY_FILE = "trajectories.npz"
BOUNDS_FILE = "bounds.json"

EXIT_OK, EXIT_INVALID, EXIT_ABORT = 0, 1, 2


def repetition_streams(seed: int, rep: int) -> tuple[RngStream, RngStream]:
    """(task stream, training stream) for repetition ``rep``; shared by every scheme."""
    base = RngStream(seed).substream(rep)
    return base.substream(0), base.substream(1)


def build_task(cfg: ExperimentConfig, rep: int) -> FederatedTask:
    t = cfg.task
    task_rng, _ = repetition_streams(cfg.seed, rep)
    return generate_synthetic_task(task_rng, t.K, t.classes, t.dim, t.samples_per_device, t.skew,
                                   t.loss, t.hidden, t.separation, t.test_samples, t.size_range)


def _key(rep: int, name: str, what: str) -> str:
    return f"rep{rep}__{name}__{what}"


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> int:
    """Run all schemes on paired draws for repetitions 1..R and write the outputs.

    Returns 0 when every run finished and 2 when any scheme aborted; aborted
    runs keep their partial series, flagged ``aborted``.
    """
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / RESOLVED_FILE).write_text(json.dumps(cfg.resolved(), indent=2) + "\n")
    profile = cfg.profile()
    records, arrays = [], {}
    status = EXIT_OK
    for rep in range(1, cfg.repetitions + 1):
        task = build_task(cfg, rep)
        _, train_rng = repetition_streams(cfg.seed, rep)
        for entry in cfg.schemes:
            run = run_federated_training(task, entry.config, cfg.training, train_rng, cfg.link,
                                         profile=profile, repetition=rep, scheme_name=entry.name)
            records.extend(run.records)
            arrays[_key(rep, entry.name, "models")] = np.stack(run.models)
            if run.weights:
                arrays[_key(rep, entry.name, "weights")] = np.stack(run.weights)
            if run.aborted is not None:
                log.error("repetition %d: %s", rep, run.aborted)
                status = EXIT_ABORT
            else:
                log.info("repetition %d, %s: final accuracy %.4f", rep, entry.name,
                         run.records[-1].accuracy)
    emit_records(records, out)
    np.savez_compressed(out / TRAJECTORY_FILE, **arrays)
    return status


# --- bounds from a finished run ------------------------------------------------------

_BOUND_KIND = {"global_csit": "global-csit", "wafel": "wafel", "partial_phase": "partial-phase"}


def _constants(cfg: ExperimentConfig, task, models) -> bd.BoundConstants:
    """Measured L, sigma_g^2 and gap (least squares only), then user overrides."""
    fields = {}
    if task.model.kind == "least_squares":
        measured = bd.measure_constants(task, models, cfg.training.B)
        fields = {"L": measured.L, "sigma_g2": measured.sigma_g2, "f_gap": measured.f_gap}
    fields.update(cfg.bound_overrides)
    return bd.BoundConstants(**fields)


def _fedavg_entry(cfg, kind, task, models, weights, recs, profile):
    constants = _constants(cfg, task, models[:-1])
    per_round = []
    for i, r in enumerate(recs):
        mse = r.agg_error ** 2
        if kind == "global-csit":
            per_round.append((mse, r.active_set))
        elif kind == "wafel":
            per_round.append((mse, r.weight_norm ** 2))
        else:
            per_round.append((mse, weights[i]))
    b_s = profile.noise_scale if profile is not None else None
    value = bd.eval_convergence_bound(kind, constants, cfg.training, per_round, b_s=b_s)
    empirical = bd.empirical_gradient_average(task, models[:-1])
    return {"bound": value, "empirical": empirical, "holds": bool(empirical <= value),
            "L": constants.L, "sigma_g2": constants.sigma_g2, "f_gap": constants.f_gap}


def _partial_phase_entry(cfg, entry, task, models):
    sc = entry.config
    if sc.interference is None:
        raise bd.BoundPreconditionError("partial-phase bound needs interference (alpha, delta)")
    omega, sigma2 = bd.compensated_channel_moments(sc.phase_error_bound, cfg.link.sigma_h2)
    fields = {"omega": omega, "sigma2_h_comp": sigma2}
    if task.model.kind == "least_squares":
        fields["L"] = bd.smoothness_constant(task)
    fields["G"] = max(float(np.linalg.norm(task.model.grad(w, X, y)))
                      for w in models for X, y in zip(task.device_X, task.device_y))
    fields.update(cfg.bound_overrides)
    constants = bd.BoundConstants(**fields)
    env = bd.eval_convergence_bound("partial-phase", constants, cfg.training, [],
                                    alpha_tail=sc.interference[0], s=task.model.size, K=task.K)
    return {"envelope": env.tolist(), "final": float(env[-1])}


def bound_report(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Evaluate the applicable convergence bounds for every (scheme, repetition)."""
    out = Path(out_dir or cfg.output_dir)
    records = read_records(out / RECORDS_FILE)
    with np.load(out / TRAJECTORY_FILE) as data:
        arrays = {k: data[k] for k in data.files}
    profile = cfg.profile()
    report = {}
    for entry in cfg.schemes:
        kind = _BOUND_KIND.get(entry.config.kind)
        if kind == "wafel" and entry.config.heterogeneous:
            kind = "wafel-het"
        rows = {}
        for rep in range(1, cfg.repetitions + 1):
            recs = [r for r in records if r.scheme == entry.name and r.repetition == rep]
            if kind is None:
                rows[rep] = {"unavailable": f"no bound for scheme kind {entry.config.kind}"}
                continue
            if any("aborted" in r.flags for r in recs) or not recs:
                rows[rep] = {"unavailable": "run aborted or missing"}
                continue
            task = build_task(cfg, rep)
            models = arrays[_key(rep, entry.name, "models")]
            try:
                if kind == "partial-phase":
                    rows[rep] = _partial_phase_entry(cfg, entry, task, models)
                else:
                    weights = arrays.get(_key(rep, entry.name, "weights"))
                    rows[rep] = _fedavg_entry(cfg, kind, task, models, weights, recs, profile)
            except (bd.BoundPreconditionError, ValueError) as exc:
                rows[rep] = {"unavailable": str(exc)}
        report[entry.name] = {"kind": kind, "repetitions": rows}
    (out / BOUNDS_FILE).write_text(json.dumps(report, indent=2) + "\n")
    return report

