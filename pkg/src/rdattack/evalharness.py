"""Attack evaluation: sample filtering, the suite runner and report aggregation.

A suite runs every (mode, method, epsilon) cell on every sample of a dataset
that the target already classifies correctly.  ``white`` mode crafts and
scores on the target.  ``black`` mode crafts baselines on the substitute and
scores them on the target (transfer); RDA takes its starting gradient from the
substitute and queries the target's probabilities during the search.

Each cell of sample ``i`` gets a fresh generator seeded with ``seed ^ i``, so
reports do not depend on the number of worker processes.
"""

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, rda, run_method
from .datasets import DataFormatError, Dataset, load_csv, load_idx, save_csv
from .netcore import ShapeError, predict

log = logging.getLogger(__name__)

METHODS = ("fgsm", "bim", "llclass", "mifgsm", "rda")
MODES = ("white", "black")
ANGLE_FILTERS = ("only_rda_success_where_fgsm_fails", "all")
DEFAULT_ANGLE_FILTER = ANGLE_FILTERS[0]
REPORT_FORMAT = "rda-report-1"

CSV_COLUMNS = (
    "mode",
    "method",
    "epsilon",
    "sample_count",
    "successes",
    "success_rate",
    "query_total",
    "mean_iterations_AS",
    "mean_iterations_onlyRDAS",
    "angle_min",
    "angle_max",
    "angle_mean",
    "angle_count",
)


@dataclass(frozen=True)
class SampleRecord:
    """Outcome of one attack on one sample, without the adversarial image."""

    index: int
    label: int
    success: bool
    initial_success: bool
    search_iterations: int
    queries: int
    angle_deg: float
    final_true_confidence: float
    stop_reason: str
    trace: tuple = field(default=(), compare=False)


@dataclass
class CellResult:
    mode: str
    method: str
    epsilon: float
    records: list

    @property
    def sample_count(self):
        return len(self.records)

    @property
    def successes(self):
        return sum(r.success for r in self.records)

    @property
    def success_rate(self):
        return self.successes / self.sample_count if self.records else float("nan")

    @property
    def query_total(self):
        return sum(r.queries for r in self.records)

    def success_set(self):
        return {r.index for r in self.records if r.success}


@dataclass
class AttackReport:
    seed: int
    config: dict
    sample_count: int
    bin_width: int
    cells: dict  # (mode, method, epsilon) -> CellResult

    def cell(self, method, epsilon, mode="white"):
        return self.cells[(mode, method, float(epsilon))]

    def summary(self, mode, method, epsilon):
        return _cell_summary(self.cell(method, epsilon, mode), self.bin_width)


def select_correctly_classified(net, ds):
    """The samples ``net`` labels correctly, in their original order."""
    if ds.m != net.input_dim:
        raise ShapeError(f"dataset has {ds.m} features, network expects {net.input_dim}")
    if len(ds) == 0:
        return ds
    return ds.subset(np.flatnonzero(predict(net, ds.samples) == ds.labels))


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def _only_rda(records):
    return [r for r in records if r.success and not r.initial_success]


def angle_statistics(records, filter=DEFAULT_ANGLE_FILTER):
    """min / max / mean of RDA angles; None when the filtered population is empty.

    ``only_rda_success_where_fgsm_fails`` keeps successful searches that did not
    start from an already successful gradient step.  The initial step is the
    FGSM sample under the same networks, so this is exactly the set where FGSM
    fails and RDA succeeds.
    """
    if filter not in ANGLE_FILTERS:
        raise ValueError(f"unknown angle filter {filter!r}")
    pop = list(records) if filter == "all" else _only_rda(records)
    if not pop:
        return None
    angles = [r.angle_deg for r in pop]
    return {"min": min(angles), "max": max(angles), "mean": math.fsum(angles) / len(angles), "count": len(angles)}


def iteration_statistics(records):
    """(mean over all successes, mean over successes where FGSM failed); None if empty."""
    ok = [r.search_iterations for r in records if r.success]
    only = [r.search_iterations for r in _only_rda(records)]
    mean_as = sum(ok) / len(ok) if ok else None
    mean_only = sum(only) / len(only) if only else None
    return mean_as, mean_only


def angle_histogram(angles, bin_width_deg=10):
    """Counts per ``[k w, (k+1) w)`` bin over [0, 180]; 180 lands in the last bin."""
    w = int(bin_width_deg)
    if w != bin_width_deg or w <= 0 or 180 % w:
        raise ValueError(f"bin width must be a positive divisor of 180, got {bin_width_deg}")
    counts = [0] * (180 // w)
    for a in angles:
        if not 0.0 <= a <= 180.0:
            raise ValueError(f"angle {a} outside [0, 180]")
        counts[min(int(a // w), len(counts) - 1)] += 1
    return counts


def _cell_summary(cell, bin_width):
    out = {
        "mode": cell.mode,
        "method": cell.method,
        "epsilon": cell.epsilon,
        "sample_count": cell.sample_count,
        "successes": cell.successes,
        "success_rate": cell.success_rate,
        "query_total": cell.query_total,
    }
    if cell.method == "rda":
        mean_as, mean_only = iteration_statistics(cell.records)
        out["mean_iterations_AS"] = mean_as
        out["mean_iterations_onlyRDAS"] = mean_only
        out["angles"] = {f: angle_statistics(cell.records, f) for f in ANGLE_FILTERS}
        pop = _only_rda(cell.records)
        out["angle_histogram"] = angle_histogram([r.angle_deg for r in pop], bin_width)
    return out


# ---------------------------------------------------------------------------
# suite runner
# ---------------------------------------------------------------------------

_WORKER = {}


def _init_worker(state):
    _WORKER.update(state)


def _attack_sample(i, x, y, jobs, target, substitute, base_cfg):
    """All cells for one sample, as (key, SampleRecord) pairs."""
    out = []
    for mode, method, eps in jobs:
        cfg = replace(base_cfg, epsilon=eps)
        rng = np.random.default_rng(base_cfg.seed ^ i)
        if mode == "white":
            res = run_method(method, target, x, y, cfg, rng=rng)
        elif method == "rda" and substitute is None:
            direction = rng.standard_normal(x.shape[0]).astype(np.float32)
            res = rda(None, target, x, y, cfg, rng, initial_direction=direction)
        else:
            res = run_method(method, substitute, x, y, cfg, target=target, rng=rng)
        out.append(
            (
                (mode, method, eps),
                SampleRecord(
                    index=i,
                    label=int(y),
                    success=bool(res.success),
                    initial_success=bool(res.initial_success),
                    search_iterations=int(res.search_iterations),
                    queries=int(res.queries),
                    angle_deg=float(res.angle_to_gradient_deg),
                    final_true_confidence=float(res.final_true_confidence),
                    stop_reason=res.stop_reason,
                    trace=tuple(res.trace),
                ),
            )
        )
    return out


def _run_indices(indices):
    s = _WORKER
    return [
        _attack_sample(int(i), s["X"][i], s["Y"][i], s["jobs"], s["target"], s["substitute"], s["cfg"])
        for i in indices
    ]


def run_attack_suite(
    target,
    substitute,
    ds,
    methods,
    eps_list,
    cfg,
    *,
    modes=None,
    workers=1,
    bin_width=10,
    random_init_blackbox=False,
):
    """Run every (mode, method, epsilon) cell over ``ds`` and collect a report.

    ``ds`` must already be filtered with :func:`select_correctly_classified`
    against ``target``.  ``modes`` defaults to ``white`` plus ``black`` when a
    substitute is given.  Black-box RDA without a substitute starts from a
    random direction, and only when ``random_init_blackbox`` is set.
    """
    methods = list(dict.fromkeys(methods))
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    eps_values = [float(e) for e in dict.fromkeys(eps_list)]
    if not methods or not eps_values:
        raise ValueError("need at least one method and one epsilon")
    for e in eps_values:
        replace(cfg, epsilon=e)  # validates
    if modes is None:
        modes = ["white"] + (["black"] if substitute is not None else [])
    for mode in modes:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
    if "black" in modes and substitute is None:
        baselines = [m for m in methods if m != "rda"]
        if baselines:
            raise ValueError(f"black-box {', '.join(baselines)} need a substitute network")
        if not random_init_blackbox:
            raise ValueError("black-box RDA without a substitute needs random_init_blackbox=True")
    for net, what in ((target, "target"), (substitute, "substitute")):
        if net is None:
            continue
        if net.input_dim != ds.m:
            raise ShapeError(f"{what} network expects {net.input_dim} features, dataset has {ds.m}")
        if net.class_count != target.class_count:
            raise ShapeError(f"{what} network has {net.class_count} classes, target has {target.class_count}")
    if "rda" in methods and cfg.l > ds.m:
        raise ValueError(f"l={cfg.l} exceeds the input dimension {ds.m}")
    if len(ds) and ds.labels.max() >= target.class_count:
        raise ShapeError("dataset labels exceed the target's class count")
    if len(ds) and not np.array_equal(predict(target, ds.samples), ds.labels):
        raise ValueError("dataset contains samples the target misclassifies; filter it first")

    jobs = [(mode, method, eps) for mode in modes for method in methods for eps in eps_values]
    state = {
        "X": ds.samples,
        "Y": ds.labels,
        "jobs": jobs,
        "target": target,
        "substitute": substitute,
        "cfg": cfg,
    }
    n = len(ds)
    if workers <= 1 or n <= 1:
        _init_worker(state)
        try:
            per_sample = _run_indices(range(n))
        finally:
            _WORKER.clear()
    else:
        batches = [list(range(k, n, workers * 4)) for k in range(min(n, workers * 4))]
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(state,)) as pool:
            done = {}
            for batch, result in zip(batches, pool.map(_run_indices, batches)):
                done.update(zip(batch, result))
        per_sample = [done[i] for i in range(n)]

    cells = {key: CellResult(*key, []) for key in jobs}
    for sample in per_sample:
        for key, rec in sample:
            cells[key].records.append(rec)
    return AttackReport(cfg.seed, asdict(cfg), n, bin_width, cells)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def report_to_dict(report):
    cells = []
    for key in sorted(report.cells):
        cell = report.cells[key]
        entry = _cell_summary(cell, report.bin_width)
        entry["samples"] = [
            {k: _jsonable(v) for k, v in asdict(r).items() if k != "trace"} for r in cell.records
        ]
        cells.append(entry)
    config = {k: _jsonable(v) for k, v in report.config.items()}
    return {
        "format": REPORT_FORMAT,
        "seed": report.seed,
        "config": config,
        "sample_count": report.sample_count,
        "bin_width": report.bin_width,
        "cells": cells,
    }


def report_from_dict(data):
    if data.get("format") != REPORT_FORMAT:
        raise ValueError(f"not a {REPORT_FORMAT} report")
    cells = {}
    for entry in data["cells"]:
        records = [SampleRecord(**s) for s in entry.get("samples", [])]
        key = (entry["mode"], entry["method"], float(entry["epsilon"]))
        cells[key] = CellResult(*key, records)
    return AttackReport(data["seed"], data["config"], data["sample_count"], data["bin_width"], cells)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_to_csv(report):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for key in sorted(report.cells):
        s = _cell_summary(report.cells[key], report.bin_width)
        ang = (s.get("angles") or {}).get(DEFAULT_ANGLE_FILTER) or {}
        row = dict(s, angle_min=ang.get("min"), angle_max=ang.get("max"), angle_mean=ang.get("mean"),
                   angle_count=ang.get("count", 0 if s["method"] == "rda" else None))
        writer.writerow([_fmt(_jsonable(row.get(c))) for c in CSV_COLUMNS])
    return buf.getvalue()


def export_report(report, path, format=None):
    """Write ``report`` as JSON (with per-sample records) or as a CSV summary.

    The format defaults to the file suffix.  Output is byte-stable.
    """
    path = Path(path)
    fmt = format or ("csv" if path.suffix.lower() == ".csv" else "json")
    if fmt == "json":
        text = json.dumps(report_to_dict(report), sort_keys=True, indent=1) + "\n"
    elif fmt == "csv":
        text = report_to_csv(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def load_report(path):
    with open(path, encoding="utf-8") as fh:
        return report_from_dict(json.load(fh))


__all__ = [
    "ANGLE_FILTERS",
    "AttackConfig",
    "AttackReport",
    "CSV_COLUMNS",
    "CellResult",
    "DataFormatError",
    "Dataset",
    "METHODS",
    "SampleRecord",
    "angle_histogram",
    "angle_statistics",
    "export_report",
    "iteration_statistics",
    "load_csv",
    "load_idx",
    "load_report",
    "report_from_dict",
    "report_to_csv",
    "report_to_dict",
    "run_attack_suite",
    "save_csv",
    "select_correctly_classified",
]
