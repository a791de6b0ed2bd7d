"""File exports: region tables, selection report, covariates, model, figures' data.

Every writer goes through ``atomic_write`` so an output either exists in full
or not at all.  Floats are written with their shortest round-trip repr.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
import warnings
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .covariates import COVARIATE_COLUMNS
from .errors import BoundaryKeyMismatch
from .resilience import ResilienceResult, Screening

REGION_COLUMNS = ("polygon_id", "name", "county", "trl", "resilience", "pct_loss",
                  "trl_2dp", "resilience_2dp", "pct_loss_2dp")


def atomic_write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return atomic_write(path, buf.getvalue())


def write_json(path, payload) -> Path:
    return atomic_write(path, json.dumps(payload, indent=2, sort_keys=True,
                                         allow_nan=False) + "\n")


def _round2(x: float) -> str:
    return f"{x:.2f}"


def region_rows(results: Iterable[ResilienceResult]) -> list[list]:
    """Rows sorted by loss, largest first (ties by polygon_id)."""
    ordered = sorted(results, key=lambda r: (-r.trl, r.region.polygon_id))
    return [[r.region.polygon_id, r.region.name, r.region.county, r.trl, r.resilience,
             r.pct_loss, _round2(r.trl), _round2(r.resilience), _round2(r.pct_loss)]
            for r in ordered]


def write_regions(path, results: Iterable[ResilienceResult]) -> Path:
    return write_csv(path, REGION_COLUMNS, region_rows(results))


def read_regions(path) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"polygon_id": str, "name": str, "county": str},
                       keep_default_na=False)


def selection_payload(screens: Sequence[Screening], thresholds, load_report) -> dict:
    def entry(s: Screening):
        return {"polygon_id": s.region.polygon_id, "county": s.region.county,
                "min_rate_in_window": s.min_rate, "z_days_below_floor": s.z_days,
                "failed": list(s.failed)}

    lo, hi = thresholds.drop_window
    return {
        "thresholds": {"rate_floor": thresholds.rate_floor, "z_floor": thresholds.z_floor,
                       "z_days_min": thresholds.z_days_min,
                       "drop_window": [lo.isoformat(), hi.isoformat()]},
        "included": [entry(s) for s in screens if s.included],
        "excluded": [entry(s) for s in screens if not s.included],
        "rejected_at_load": dict(sorted(load_report.rejected.items())),
        "gap_filled_days": {k: v for k, v in sorted(load_report.gap_counts.items()) if v},
        "dropped_outside_horizon": load_report.dropped_outside_horizon,
    }


def write_covariates(path, rows: pd.DataFrame) -> Path:
    cols = list(COVARIATE_COLUMNS)
    return write_csv(path, cols, rows[cols].itertuples(index=False, name=None))


def histogram(trl: Sequence[float], upper: int) -> list[tuple[int, int, int]]:
    """Counts of losses in unit-width bins [k, k+1) for k = 0 .. upper-1.

    A loss exactly equal to ``upper`` lands in the last bin.
    """
    counts = [0] * upper
    for v in trl:
        k = min(int(math.floor(v)), upper - 1)
        counts[k] += 1
    return [(k, k + 1, c) for k, c in enumerate(counts)]


def write_histogram(path, trl: Sequence[float], upper: int) -> Path:
    return write_csv(path, ("bin_left", "bin_right", "count"), histogram(trl, upper))


def write_curves(path, series_by_region, selected: set) -> Path:
    rows = []
    for s in series_by_region:
        flag = int(s.region.polygon_id in selected)
        for d, q in zip(s.dates, s.rates):
            rows.append((s.region.polygon_id, d.isoformat(), float(q), flag))
    return write_csv(path, ("polygon_id", "date", "rate", "selected"), rows)


def choropleth(boundaries, regions: pd.DataFrame, key: str = "polygon_id"):
    """Copy of ``boundaries`` with loss metrics attached to matching features.

    Returns the collection and the ids of regions with no boundary feature.
    """
    if isinstance(boundaries, (str, os.PathLike)):
        boundaries = json.loads(Path(boundaries).read_text(encoding="utf-8"))
    metrics = {str(r.polygon_id): r for r in regions.itertuples(index=False)}
    seen = set()
    features = []
    for feat in boundaries.get("features", []):
        props = dict(feat.get("properties") or {})
        pid = str(props.get(key, ""))
        r = metrics.get(pid)
        if r is not None:
            seen.add(pid)
            props.update(trl=float(r.trl), resilience=float(r.resilience),
                         pct_loss=float(r.pct_loss))
        else:
            props.update(trl=None, resilience=None, pct_loss=None)
        features.append({**feat, "properties": props})
    missing = sorted(set(metrics) - seen)
    for pid in missing:
        warnings.warn(f"no boundary feature for region {pid}", BoundaryKeyMismatch,
                      stacklevel=2)
    return {"type": "FeatureCollection", "features": features}, missing
