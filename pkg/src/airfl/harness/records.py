"""Record table and summary document."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from pathlib import Path
from typing import Iterable

from ..learning.training import RoundRecord

HEADER = ("repetition", "round", "scheme", "loss", "accuracy", "agg_error", "pred_mse",
          "active_set", "weight_norm", "flags")
RECORDS_FILE = "records.csv"
SUMMARY_FILE = "summary.json"


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def _row(r: RoundRecord) -> list[str]:
    return [str(r.repetition), str(r.round), r.scheme, _fmt(r.loss), _fmt(r.accuracy),
            _fmt(r.agg_error), _fmt(r.pred_mse), str(r.active_set), _fmt(r.weight_norm),
            ";".join(r.flags)]


def write_records(records: Iterable[RoundRecord], path) -> Path:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HEADER)
            for r in records:
                w.writerow(_row(r))
    except OSError as exc:
        raise OSError(f"cannot write records to {path}: {exc}") from exc
    return path


def read_records(path) -> list[RoundRecord]:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OSError(f"cannot read records from {path}: {exc}") from exc
    if not rows or tuple(rows[0]) != HEADER:
        raise ValueError(f"{path}: unexpected header {rows[0] if rows else None}")
    out = []
    for row in rows[1:]:
        rep, t, scheme, loss, acc, err, pred, size, wn, flags = row
        out.append(RoundRecord(int(rep), int(t), scheme, float(loss), float(acc), float(err),
                               float(pred) if pred else None, int(size), float(wn),
                               tuple(flags.split(";")) if flags else ()))
    return out


def summarize(records: Iterable[RoundRecord]) -> dict:
    """Per-scheme series averaged over repetitions, skipping non-finite entries."""
    acc = defaultdict(lambda: defaultdict(list))
    loss = defaultdict(lambda: defaultdict(list))
    aborted = defaultdict(set)
    order: list[str] = []
    for r in records:
        if r.scheme not in order:
            order.append(r.scheme)
        if "aborted" in r.flags:
            aborted[r.scheme].add(r.repetition)
        if math.isfinite(r.accuracy):
            acc[r.scheme][r.round].append(r.accuracy)
        if math.isfinite(r.loss):
            loss[r.scheme][r.round].append(r.loss)
    schemes = {}
    for name in order:
        rounds = sorted(set(acc[name]) | set(loss[name]))
        schemes[name] = {
            "rounds": rounds,
            "mean_accuracy": [_mean(acc[name].get(t, [])) for t in rounds],
            "mean_loss": [_mean(loss[name].get(t, [])) for t in rounds],
            "repetitions": [len(acc[name].get(t, [])) for t in rounds],
            "aborted_repetitions": sorted(aborted[name]),
        }
    return {"schemes": schemes}


def _mean(xs):
    return sum(xs) / len(xs) if xs else None


def emit_records(records, out_dir) -> tuple[Path, Path]:
    """Write ``records.csv`` and ``summary.json`` into ``out_dir``."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    records = list(records)
    table = write_records(records, out_dir / RECORDS_FILE)
    summary = out_dir / SUMMARY_FILE
    try:
        summary.write_text(json.dumps(summarize(records), indent=2) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write summary to {summary}: {exc}") from exc
    return table, summary
