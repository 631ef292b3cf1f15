"""Throughput arithmetic and report emission."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ParameterError

SECONDS_PER_HOUR = 3600.0

# Manual-fixture study: (A) align minutes, (B) extraction minutes for 20
# mosquitoes, and the published per-operator rate.
TABLE_I = (
    (1, 2.4, 0.7, 393),
    (2, 2.5, 0.8, 364),
    (3, 2.3, 0.5, 429),
    (4, 2.5, 1.1, 338),
    (5, 1.5, 1.2, 444),
    (6, 1.3, 0.7, 600),
    (7, 1.1, 1.1, 545),
    (8, 1.2, 0.7, 649),
)
TABLE_I_BATCH = 20

# Traditional manual dissection by trained operators, transcribed as a box
# summary only (range and median); not simulated, quartiles not published.
MANUAL_REFERENCE = {"method": "traditional_manual", "min": 260.0, "median": 290.0, "max": 430.0,
                    "source": "transcribed context, not simulated"}


@dataclass(frozen=True)
class ThroughputSummary:
    n: int
    mean_cycle: float
    std_cycle: float
    movement_mean: float | None
    vision_mean: float | None
    mdph: float
    mdph_std: float

    def to_dict(self) -> dict:
        return asdict(self)


def manual_rate(align_min: float, extract_min: float, batch: int = TABLE_I_BATCH) -> float:
    """Mosquitoes per hour for a batch aligned and extracted in the given minutes."""
    if not (align_min > 0 and extract_min > 0):
        raise ParameterError("times must be positive")
    if batch <= 0:
        raise ParameterError("batch must be positive")
    return batch / (align_min + extract_min) * 60.0


def table1_rows() -> list[dict]:
    rows = []
    for op, a, b, published in TABLE_I:
        rate = manual_rate(a, b)
        rows.append({"operator": op, "align_min": a, "extract_min": b, "total_min": round(a + b, 10),
                     "published_rate": published, "recomputed_rate": rate,
                     "relative_difference": (rate - published) / published})
    return rows


def table1_mean_published() -> float:
    return sum(r[3] for r in TABLE_I) / len(TABLE_I)


def throughput_from_cycles(cycle_times_s, movement=None, vision=None) -> ThroughputSummary:
    """Mdph from the mean cycle; its spread by the delta method, 3600 * sd / mean**2."""
    c = np.asarray(cycle_times_s, float)
    if c.size == 0:
        raise ParameterError("no cycle times")
    if np.any(c <= 0):
        raise ParameterError("cycle times must be positive")
    # a constant sample keeps its exact value so that Mdph is exactly 3600 / c
    constant = bool(c.min() == c.max())
    mean = float(c[0]) if constant else math.fsum(c) / c.size
    sd = float(c.std(ddof=1)) if c.size > 1 and not constant else 0.0
    return ThroughputSummary(
        n=int(c.size),
        mean_cycle=mean,
        std_cycle=sd,
        movement_mean=None if movement is None else float(np.mean(movement)),
        vision_mean=None if vision is None else float(np.mean(vision)),
        mdph=SECONDS_PER_HOUR / mean,
        mdph_std=SECONDS_PER_HOUR * sd / mean**2,
    )


def project_optimized(summary: ThroughputSummary, savings_s: float = 2.5) -> ThroughputSummary:
    """Throughput after removing ``savings_s`` from every cycle."""
    if savings_s < 0:
        raise ParameterError("savings must be non-negative")
    if savings_s >= summary.mean_cycle:
        raise ParameterError("savings must be smaller than the mean cycle")
    mean = summary.mean_cycle - savings_s
    return ThroughputSummary(
        n=summary.n,
        mean_cycle=mean,
        std_cycle=summary.std_cycle,
        movement_mean=None if summary.movement_mean is None else summary.movement_mean - savings_s,
        vision_mean=summary.vision_mean,
        mdph=SECONDS_PER_HOUR / mean,
        mdph_std=SECONDS_PER_HOUR * summary.std_cycle / mean**2,
    )


def box_stats(values) -> dict:
    """Median and 25th/75th percentiles (linear interpolation) plus range."""
    v = np.asarray(values, float)
    if v.size == 0:
        raise ParameterError("no values")
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {"n": int(v.size), "min": float(v.min()), "q1": float(q1), "median": float(med), "q3": float(q3),
            "max": float(v.max())}


def _csv(rows: Sequence[Mapping], header: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(header), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _cell(r.get(k)) for k in header})
    return buf.getvalue()


def _cell(v):
    if isinstance(v, float):
        return "nan" if v != v else f"{v:.6f}"
    return "" if v is None else v


def table1_csv() -> str:
    rows = table1_rows()
    rows.append({"operator": "mean", "published_rate": table1_mean_published(),
                 "recomputed_rate": float(np.mean([r["recomputed_rate"] for r in rows]))})
    return _csv(rows, ["operator", "align_min", "extract_min", "total_min", "published_rate", "recomputed_rate",
                       "relative_difference"])


def render_report(records: Mapping[str, Sequence[float]], out_dir, *, savings_s: float = 2.5,
                  gallery: Mapping[str, np.ndarray] | None = None) -> dict:
    """Write comparison tables for named Mdph samples and optional annotated frames.

    ``records`` maps a method name to per-item throughput values (Mdph).
    Files: ``methods.csv`` (box statistics per method), ``table1.csv``,
    ``summary.json``, and ``gallery/<name>.png`` for each gallery frame.
    """
    if not records:
        raise ParameterError("at least one record set is required")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, values in records.items():
        rows.append({"method": name, **box_stats(values)})
    rows.append({"method": MANUAL_REFERENCE["method"] + " (reference)", "min": MANUAL_REFERENCE["min"],
                 "median": MANUAL_REFERENCE["median"], "max": MANUAL_REFERENCE["max"]})
    header = ["method", "n", "min", "q1", "median", "q3", "max"]
    (out / "methods.csv").write_text(_csv(rows, header))
    (out / "table1.csv").write_text(table1_csv())
    summary = {"methods": rows, "manual_reference": MANUAL_REFERENCE, "savings_s": savings_s}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if gallery:
        from .render import save_png

        gdir = out / "gallery"
        gdir.mkdir(exist_ok=True)
        for name, img in sorted(gallery.items()):
            save_png(gdir / f"{name}.png", img)
    return summary


def mdph_samples(cycle_times_s) -> np.ndarray:
    """Per-cycle instantaneous throughput 3600 / cycle."""
    c = np.asarray(cycle_times_s, float)
    return SECONDS_PER_HOUR / c
