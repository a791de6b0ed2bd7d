"""Input schemas, CSV parsing and validation, and the immutable ``Dataset``.

Five comma-delimited UTF-8 files feed the toolkit::

    activity.csv     polygon_id,name,county,date,baseline_users,crisis_users,z_score
    outages.csv      county,timestamp,customers_total,customers_out
    road_events.csv  event_id,lat,lon,start,end,category
    hazard_path.csv  timestamp,lat,lon
    attributes.csv   polygon_id,center_lat,center_lon,median_income,pct_black,
                     pct_hispanic,pct_pre2000_houses,property_damage

A JSON manifest maps each role to a path (relative paths resolve against the
manifest's directory) and carries ``horizon`` (``start``/``end`` ISO days) and
``timezone``.  All dataset invariants are checked here; downstream modules
trust a loaded ``Dataset``.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

import numpy as np
import pandas as pd

from .errors import (
    DuplicateKey,
    EmptyHorizon,
    IncompleteSeries,
    MissingFile,
    ReferentialError,
    SchemaError,
    UnknownRegion,
)

logger = logging.getLogger(__name__)

ROLES = ("activity", "outages", "road_events", "hazard_path", "attributes")

COLUMNS = {
    "activity": ["polygon_id", "name", "county", "date", "baseline_users",
                 "crisis_users", "z_score"],
    "outages": ["county", "timestamp", "customers_total", "customers_out"],
    "road_events": ["event_id", "lat", "lon", "start", "end", "category"],
    "hazard_path": ["timestamp", "lat", "lon"],
    "attributes": ["polygon_id", "center_lat", "center_lon", "median_income",
                   "pct_black", "pct_hispanic", "pct_pre2000_houses",
                   "property_damage"],
}

ROAD_CATEGORIES = ("weather_hazard", "weather_closure", "road_closed",
                   "closure", "obstruction", "other")

# Spellings seen in traffic-event feeds, folded onto the enumerated categories.
_CATEGORY_ALIASES = {
    "weather_hazards": "weather_hazard",
    "weather_closures": "weather_closure",
    "road_closure": "road_closed",
    "closures": "closure",
    "obstructions": "obstruction",
}

MAX_GAP_FRACTION = 0.20

_OFFSET_RE = re.compile(r"(?:Z|[+-]\d{2}:?\d{2})$")


@dataclass(frozen=True)
class RegionId:
    polygon_id: str
    name: str
    county: str


@dataclass(frozen=True)
class Horizon:
    """Inclusive range of calendar days."""

    start: dt.date
    end: dt.date

    def __post_init__(self):
        if self.end < self.start:
            raise EmptyHorizon(f"horizon end {self.end} precedes start {self.start}")

    @property
    def days(self) -> int:
        return (self.end - self.start).days + 1

    def dates(self) -> pd.DatetimeIndex:
        return pd.date_range(self.start, self.end, freq="D")

    def contains(self, day: dt.date) -> bool:
        return self.start <= day <= self.end

    def window(self, tz: str = "UTC") -> tuple[pd.Timestamp, pd.Timestamp]:
        """Half-open instant range [start 00:00, end+1 00:00) in ``tz``, as UTC."""
        zone = ZoneInfo(tz)
        lo = pd.Timestamp(dt.datetime.combine(self.start, dt.time(), zone))
        hi = pd.Timestamp(dt.datetime.combine(self.end + dt.timedelta(days=1), dt.time(), zone))
        return lo.tz_convert("UTC"), hi.tz_convert("UTC")


@dataclass(frozen=True)
class LoadReport:
    dropped_outside_horizon: int = 0
    gap_counts: Mapping[str, int] = field(default_factory=dict)
    rejected: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Dataset:
    """Validated inputs.  Treat the frames as read-only.

    ``activity`` holds one row per (region, horizon day) for every accepted
    region, sorted by ``polygon_id`` then ``date``; rows synthesized by gap
    filling have ``filled == True``.  ``attributes`` is indexed by
    ``polygon_id``.  Instants are tz-aware UTC.
    """

    regions: tuple[RegionId, ...]
    activity: pd.DataFrame
    outages: pd.DataFrame
    road_events: pd.DataFrame
    hazard_path: pd.DataFrame
    attributes: pd.DataFrame
    horizon: Horizon
    timezone: str = "UTC"
    report: LoadReport = field(default_factory=LoadReport, compare=False)

    def region(self, polygon_id: str) -> RegionId:
        for r in self.regions:
            if r.polygon_id == polygon_id:
                return r
        if polygon_id in self.report.rejected:
            raise IncompleteSeries(
                f"region {polygon_id!r} was rejected at load: "
                f"{self.report.rejected[polygon_id]}")
        raise UnknownRegion(f"unknown region {polygon_id!r}")

    def region_activity(self, polygon_id: str) -> pd.DataFrame:
        self.region(polygon_id)
        return self.activity[self.activity["polygon_id"] == polygon_id]

    def equals(self, other: "Dataset") -> bool:
        """Content equality (the load report is ignored)."""
        if not isinstance(other, Dataset):
            return False
        if (self.regions, self.horizon, self.timezone) != (
                other.regions, other.horizon, other.timezone):
            return False
        pairs = [(self.activity, other.activity), (self.outages, other.outages),
                 (self.road_events, other.road_events),
                 (self.hazard_path, other.hazard_path),
                 (self.attributes, other.attributes)]
        return all(a.equals(b) for a, b in pairs)

    def __eq__(self, other):
        return self.equals(other)

    __hash__ = None


# ----------------------------------------------------------------------------
# column converters


def _bad_row(mask: pd.Series) -> int:
    """1-based data row number of the first True in ``mask``."""
    return int(np.flatnonzero(mask.to_numpy())[0]) + 1


def _strings(df, col, file, *, required=True):
    s = df[col].astype(str).str.strip()
    if required and (s == "").any():
        raise SchemaError("empty value", file=file, row=_bad_row(s == ""), column=col)
    return s


def _floats(df, col, file, *, lo=None, hi=None, default=None):
    raw = df[col].astype(str).str.strip()
    if default is not None:
        raw = raw.mask(raw == "", str(default))
    vals = pd.to_numeric(raw, errors="coerce")
    bad = vals.isna() | ~np.isfinite(vals.fillna(0.0))
    if bad.any():
        row = _bad_row(bad)
        raise SchemaError(f"cannot parse {raw.iloc[row - 1]!r} as a number",
                          file=file, row=row, column=col)
    vals = vals.astype(float)
    if lo is not None and (vals < lo).any():
        row = _bad_row(vals < lo)
        raise SchemaError(f"value {vals.iloc[row - 1]} below {lo}", file=file,
                          row=row, column=col)
    if hi is not None and (vals > hi).any():
        row = _bad_row(vals > hi)
        raise SchemaError(f"value {vals.iloc[row - 1]} above {hi}", file=file,
                          row=row, column=col)
    return vals


def _ints(df, col, file, *, lo=None):
    vals = _floats(df, col, file, lo=lo)
    frac = vals != np.round(vals)
    if frac.any():
        row = _bad_row(frac)
        raise SchemaError(f"value {vals.iloc[row - 1]} is not an integer",
                          file=file, row=row, column=col)
    return vals.astype(np.int64)


def _days(df, col, file):
    raw = df[col].astype(str).str.strip()
    vals = pd.to_datetime(raw, format="%Y-%m-%d", errors="coerce")
    if vals.isna().any():
        row = _bad_row(vals.isna())
        raise SchemaError(f"cannot parse {raw.iloc[row - 1]!r} as YYYY-MM-DD",
                          file=file, row=row, column=col)
    return vals


def _instants(df, col, file, *, optional=False):
    raw = df[col].astype(str).str.strip()
    empty = raw == ""
    if not optional and empty.any():
        raise SchemaError("empty timestamp", file=file, row=_bad_row(empty), column=col)
    no_offset = ~empty & ~raw.str.contains(_OFFSET_RE)
    if no_offset.any():
        row = _bad_row(no_offset)
        raise SchemaError(f"timestamp {raw.iloc[row - 1]!r} lacks a UTC offset",
                          file=file, row=row, column=col)
    vals = pd.to_datetime(raw.mask(empty, None), format="ISO8601", utc=True,
                          errors="coerce")
    bad = vals.isna() & ~empty
    if bad.any():
        row = _bad_row(bad)
        raise SchemaError(f"cannot parse {raw.iloc[row - 1]!r} as ISO-8601",
                          file=file, row=row, column=col)
    return vals


def _read_csv(path: Path, role: str) -> pd.DataFrame:
    if not path.is_file():
        raise MissingFile(f"{role} file not found: {path}")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (UnicodeDecodeError, pd.errors.ParserError) as exc:
        raise SchemaError(f"unreadable CSV ({exc})", file=path.name) from exc
    except pd.errors.EmptyDataError as exc:
        raise SchemaError("file is empty (header row is mandatory)", file=path.name) from exc
    df.columns = [c.strip() for c in df.columns]
    for col in COLUMNS[role]:
        if col not in df.columns:
            raise SchemaError("required column absent", file=path.name, column=col)
    return df[COLUMNS[role]].reset_index(drop=True)


# ----------------------------------------------------------------------------
# per-file parsers


def parse_activity(path) -> pd.DataFrame:
    path = Path(path)
    df = _read_csv(path, "activity")
    f = path.name
    out = pd.DataFrame({
        "polygon_id": _strings(df, "polygon_id", f),
        "name": _strings(df, "name", f, required=False),
        "county": _strings(df, "county", f),
        "date": _days(df, "date", f),
        "baseline_users": _floats(df, "baseline_users", f, lo=0.0),
        "crisis_users": _ints(df, "crisis_users", f, lo=0),
        "z_score": _floats(df, "z_score", f, lo=-4.0, hi=4.0),
    })
    dup = out.duplicated(["polygon_id", "date"], keep=False)
    if dup.any():
        rows = np.flatnonzero(dup.to_numpy())
        first = out.iloc[rows[0]]
        same = rows[(out["polygon_id"].iloc[rows] == first["polygon_id"]).to_numpy()
                    & (out["date"].iloc[rows] == first["date"]).to_numpy()]
        raise DuplicateKey(
            f"{f}: (polygon_id={first['polygon_id']!r}, "
            f"date={first['date'].date()}) repeated in rows "
            + ", ".join(str(r + 1) for r in same),
            rows=[int(r) + 1 for r in same])
    ident = out.drop_duplicates(["polygon_id", "name", "county"])
    clash = ident.duplicated("polygon_id", keep=False)
    if clash.any():
        pid = ident.loc[clash, "polygon_id"].iloc[0]
        raise SchemaError(f"polygon_id {pid!r} appears with more than one name/county",
                          file=f, column="polygon_id")
    return out


def parse_outages(path) -> pd.DataFrame:
    path = Path(path)
    df = _read_csv(path, "outages")
    f = path.name
    out = pd.DataFrame({
        "county": _strings(df, "county", f),
        "timestamp": _instants(df, "timestamp", f),
        "customers_total": _ints(df, "customers_total", f, lo=1),
        "customers_out": _ints(df, "customers_out", f, lo=0),
    })
    over = out["customers_out"] > out["customers_total"]
    if over.any():
        raise SchemaError("customers_out exceeds customers_total", file=f,
                          row=_bad_row(over), column="customers_out")
    dup = out.duplicated(["county", "timestamp"], keep=False)
    if dup.any():
        rows = [int(r) + 1 for r in np.flatnonzero(dup.to_numpy())[:2]]
        raise DuplicateKey(f"{f}: repeated (county, timestamp) in rows {rows[0]}, {rows[1]}",
                           rows=rows)
    return out.sort_values(["county", "timestamp"], kind="mergesort").reset_index(drop=True)


def normalize_category(raw: str) -> str:
    key = re.sub(r"[\s\-]+", "_", raw.strip().lower())
    key = _CATEGORY_ALIASES.get(key, key)
    return key if key in ROAD_CATEGORIES else "other"


def parse_road_events(path) -> pd.DataFrame:
    path = Path(path)
    df = _read_csv(path, "road_events")
    f = path.name
    out = pd.DataFrame({
        "event_id": _strings(df, "event_id", f),
        "lat": _floats(df, "lat", f, lo=-90.0, hi=90.0),
        "lon": _floats(df, "lon", f, lo=-180.0, hi=180.0),
        "start": _instants(df, "start", f),
        "end": _instants(df, "end", f, optional=True),
        "category": df["category"].astype(str).map(normalize_category),
    })
    backwards = out["end"].notna() & (out["end"] < out["start"])
    if backwards.any():
        raise SchemaError("end precedes start", file=f, row=_bad_row(backwards),
                          column="end")
    return out


def parse_hazard_path(path) -> pd.DataFrame:
    path = Path(path)
    df = _read_csv(path, "hazard_path")
    f = path.name
    out = pd.DataFrame({
        "timestamp": _instants(df, "timestamp", f),
        "lat": _floats(df, "lat", f, lo=-90.0, hi=90.0),
        "lon": _floats(df, "lon", f, lo=-180.0, hi=180.0),
    })
    return out.sort_values("timestamp", kind="mergesort").reset_index(drop=True)


def parse_attributes(path) -> pd.DataFrame:
    path = Path(path)
    df = _read_csv(path, "attributes")
    f = path.name
    out = pd.DataFrame({
        "polygon_id": _strings(df, "polygon_id", f),
        "center_lat": _floats(df, "center_lat", f, lo=-90.0, hi=90.0),
        "center_lon": _floats(df, "center_lon", f, lo=-180.0, hi=180.0),
        "median_income": _floats(df, "median_income", f),
        "pct_black": _floats(df, "pct_black", f, lo=0.0, hi=100.0),
        "pct_hispanic": _floats(df, "pct_hispanic", f, lo=0.0, hi=100.0),
        "pct_pre2000_houses": _floats(df, "pct_pre2000_houses", f, lo=0.0, hi=100.0),
        # a region without inspected damage records has no damage
        "property_damage": _floats(df, "property_damage", f, lo=0.0, default=0.0),
    })
    dup = out["polygon_id"].duplicated(keep=False)
    if dup.any():
        rows = [int(r) + 1 for r in np.flatnonzero(dup.to_numpy())[:2]]
        raise DuplicateKey(f"{f}: polygon_id repeated in rows {rows[0]}, {rows[1]}",
                           rows=rows)
    return out.set_index("polygon_id").sort_index()


# ----------------------------------------------------------------------------
# assembly


def _complete_activity(activity: pd.DataFrame, horizon: Horizon):
    """Drop out-of-horizon rows and gap-fill each region onto the full day grid.

    Missing days take the previous observed day's values (observations before
    the horizon count as "previous"); leading gaps with nothing earlier take
    the first observed value.  Regions missing more than ``MAX_GAP_FRACTION``
    of the horizon are rejected.
    """
    days = horizon.dates()
    lo, hi = days[0], days[-1]
    inside = (activity["date"] >= lo) & (activity["date"] <= hi)
    dropped = int((~inside).sum())

    frames, gaps, rejected = [], {}, {}
    value_cols = ["baseline_users", "crisis_users", "z_score"]
    for pid, grp in activity.groupby("polygon_id", sort=True):
        grp = grp.sort_values("date")
        in_h = grp[(grp["date"] >= lo) & (grp["date"] <= hi)]
        n_missing = len(days) - len(in_h)
        gaps[pid] = n_missing
        if n_missing > MAX_GAP_FRACTION * len(days):
            rejected[pid] = (f"missing {n_missing} of {len(days)} horizon days "
                             f"(limit {MAX_GAP_FRACTION:.0%})")
            continue
        before = grp[grp["date"] < lo].tail(1)
        vals = pd.concat([before, in_h]).set_index("date")[value_cols]
        grid = vals.reindex(vals.index.union(days)).ffill().bfill().loc[days]
        filled = ~days.isin(in_h["date"])
        frames.append(pd.DataFrame({
            "polygon_id": pid,
            "date": days,
            "baseline_users": grid["baseline_users"].to_numpy(dtype=float),
            "crisis_users": grid["crisis_users"].to_numpy().astype(np.int64),
            "z_score": grid["z_score"].to_numpy(dtype=float),
            "filled": filled,
        }))
    if frames:
        table = pd.concat(frames, ignore_index=True)
    else:
        table = pd.DataFrame({"polygon_id": pd.Series(dtype=str),
                              "date": pd.Series(dtype="datetime64[ns]"),
                              "baseline_users": pd.Series(dtype=float),
                              "crisis_users": pd.Series(dtype=np.int64),
                              "z_score": pd.Series(dtype=float),
                              "filled": pd.Series(dtype=bool)})
    return table, dropped, gaps, rejected


def assemble(activity, outages, road_events, hazard_path, attributes,
             horizon: Horizon, timezone: str = "UTC") -> Dataset:
    """Cross-validate parsed tables and build a ``Dataset``."""
    try:
        ZoneInfo(timezone)
    except (ZoneInfoNotFoundError, ValueError) as exc:
        raise SchemaError(f"unknown timezone {timezone!r}") from exc

    missing = sorted(set(activity["polygon_id"]) - set(attributes.index))
    if missing:
        raise ReferentialError(
            f"{len(missing)} activity region(s) absent from attributes: "
            + ", ".join(repr(m) for m in missing[:5]))

    table, dropped, gaps, rejected = _complete_activity(activity, horizon)
    if dropped:
        logger.info("dropped %d activity rows outside the horizon", dropped)
    if rejected:
        logger.warning("rejected %d region(s) for excessive gaps", len(rejected))
    if table.empty:
        raise EmptyHorizon(f"no activity observations inside {horizon.start}..{horizon.end}")

    ident = (activity.drop_duplicates("polygon_id")
             .set_index("polygon_id")[["name", "county"]])
    kept = sorted(table["polygon_id"].unique())
    regions = tuple(RegionId(pid, ident.at[pid, "name"], ident.at[pid, "county"])
                    for pid in kept)
    report = LoadReport(dropped_outside_horizon=dropped,
                        gap_counts={k: gaps[k] for k in kept},
                        rejected=rejected)
    return Dataset(regions=regions, activity=table, outages=outages,
                   road_events=road_events, hazard_path=hazard_path,
                   attributes=attributes, horizon=horizon, timezone=timezone,
                   report=report)


def read_manifest(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"manifest is not valid JSON ({exc})", file=path.name) from exc
    manifest.setdefault("base_dir", str(path.parent))
    return manifest


def horizon_from(manifest: Mapping) -> Horizon:
    h = manifest.get("horizon")
    if not isinstance(h, Mapping) or "start" not in h or "end" not in h:
        raise SchemaError('manifest needs "horizon": {"start": ..., "end": ...}')
    try:
        return Horizon(dt.date.fromisoformat(h["start"]), dt.date.fromisoformat(h["end"]))
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"bad horizon dates ({exc})") from exc


def load_inputs(config) -> Dataset:
    """Load and validate the five input files named by a manifest.

    Parameters
    ----------
    config : path or mapping
        Manifest JSON path, or an already-parsed mapping.  Relative file
        paths resolve against ``base_dir`` (the manifest's directory when a
        path is given, the working directory otherwise).

    Raises
    ------
    MissingFile, SchemaError, DuplicateKey, ReferentialError, EmptyHorizon
    """
    manifest = read_manifest(config) if isinstance(config, (str, os.PathLike)) else dict(config)
    base = Path(manifest.get("base_dir", "."))
    paths = {}
    for role in ROLES:
        if role not in manifest:
            raise MissingFile(f"manifest does not name a {role} file")
        p = Path(manifest[role])
        paths[role] = p if p.is_absolute() else base / p
    horizon = horizon_from(manifest)
    return assemble(
        parse_activity(paths["activity"]),
        parse_outages(paths["outages"]),
        parse_road_events(paths["road_events"]),
        parse_hazard_path(paths["hazard_path"]),
        parse_attributes(paths["attributes"]),
        horizon,
        manifest.get("timezone", "UTC"),
    )


# ----------------------------------------------------------------------------
# serialization


def _iso_instant(ts) -> str:
    return "" if pd.isna(ts) else ts.isoformat()


def _frame_to_csv(df: pd.DataFrame, path: Path) -> None:
    """Write with shortest round-trip float repr and ISO instants."""
    out = df.copy()
    for col in out.columns:
        s = out[col]
        if isinstance(s.dtype, pd.DatetimeTZDtype):
            out[col] = s.map(_iso_instant)
        elif pd.api.types.is_datetime64_any_dtype(s.dtype):
            out[col] = s.dt.strftime("%Y-%m-%d")
        elif pd.api.types.is_float_dtype(s.dtype):
            out[col] = s.map(repr)
    tmp = path.with_name(path.name + ".tmp")
    out.to_csv(tmp, index=False, lineterminator="\n", encoding="utf-8")
    os.replace(tmp, path)


def write_inputs(directory, *, activity, outages, road_events, hazard_path,
                 attributes, horizon: Horizon, timezone: str = "UTC",
                 extra: Mapping | None = None) -> Path:
    """Write the five input CSVs plus ``manifest.json``; returns the manifest path.

    ``activity`` needs the schema columns (``name`` and ``county`` included);
    ``attributes`` may carry ``polygon_id`` as index or column.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    attrs = attributes.reset_index() if "polygon_id" not in attributes.columns else attributes
    tables = {"activity": activity, "outages": outages, "road_events": road_events,
              "hazard_path": hazard_path, "attributes": attrs}
    manifest = {}
    for role, df in tables.items():
        name = f"{role}.csv"
        _frame_to_csv(df[COLUMNS[role]], directory / name)
        manifest[role] = name
    manifest["horizon"] = {"start": horizon.start.isoformat(), "end": horizon.end.isoformat()}
    manifest["timezone"] = timezone
    if extra:
        manifest.update(extra)
    mpath = directory / "manifest.json"
    tmp = mpath.with_name(mpath.name + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, mpath)
    return mpath


def dump_dataset(dataset: Dataset, directory, extra: Mapping | None = None) -> Path:
    """Re-serialize a dataset's observed rows (gap-filled rows are omitted)."""
    ident = pd.DataFrame([(r.polygon_id, r.name, r.county) for r in dataset.regions],
                         columns=["polygon_id", "name", "county"])
    observed = dataset.activity[~dataset.activity["filled"]]
    activity = observed.merge(ident, on="polygon_id", how="left")
    return write_inputs(directory, activity=activity, outages=dataset.outages,
                        road_events=dataset.road_events,
                        hazard_path=dataset.hazard_path,
                        attributes=dataset.attributes, horizon=dataset.horizon,
                        timezone=dataset.timezone, extra=extra)
