"""Model predictors per region and their collinearity diagnostics.

Eight predictors describe each affected region: road-disruption hours,
power-restoration days, property damage, share of pre-2000 housing, distance
to the hazard track, median income, and the Black and Hispanic population
shares.  Only predictors are ever standardized; the Gamma response stays on
its raw positive scale.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .data_model import Dataset
from .errors import (
    ConstantColumn,
    EmptyPath,
    EmptySeries,
    InvalidCoordinate,
    MissingCounty,
    RankDeficient,
)
from .resilience import ResilienceResult

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0

PREDICTORS = ("road_hours", "restore_days", "damage", "pct_pre2000", "dist_km",
              "income", "pct_black", "pct_hispanic")
COVARIATE_COLUMNS = ("polygon_id", "county", "trl") + PREDICTORS

PREDICTOR_LABELS = {
    "road_hours": "Duration of disruption on roads (hr)",
    "restore_days": "Restoration time for power outage (day)",
    "damage": "Property damage (USD)",
    "pct_pre2000": "% of households built before 2000",
    "dist_km": "Distance to hurricane path (km)",
    "income": "Median household income (USD)",
    "pct_black": "% of Black population",
    "pct_hispanic": "% of Hispanic population",
}

# ----------------------------------------------------------------------------
# geometry


def _check_coords(lat, lon):
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    if not (np.all(np.isfinite(lat)) and np.all(np.isfinite(lon))):
        raise InvalidCoordinate("coordinates must be finite")
    if np.any(np.abs(lat) > 90.0) or np.any(np.abs(lon) > 180.0):
        raise InvalidCoordinate("latitude must lie in [-90, 90] and longitude in [-180, 180]")
    return lat, lon


def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance in kilometres between points given in degrees.

    Broadcasts over array arguments; returns a float for scalar input.

    >>> round(haversine_km(0, 0, 0, 1), 4)
    111.1949
    """
    lat1, lon1 = _check_coords(lat1, lon1)
    lat2, lon2 = _check_coords(lat2, lon2)
    phi1, phi2 = np.radians(lat1), np.radians(lat2)
    dphi = phi2 - phi1
    dlam = np.radians(lon2 - lon1)
    a = np.sin(dphi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2) ** 2
    d = 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    return float(d) if d.ndim == 0 else d


def _center(region) -> tuple[float, float]:
    if isinstance(region, Mapping) or isinstance(region, pd.Series):
        return float(region["center_lat"]), float(region["center_lon"])
    lat, lon = region
    return float(lat), float(lon)


def distance_to_path(region, path) -> float:
    """Minimum distance (km) from a region center to any hazard-track point.

    ``region`` is an attributes row (anything with ``center_lat`` and
    ``center_lon``) or a ``(lat, lon)`` pair; ``path`` is a frame with
    ``lat``/``lon`` columns or a sequence of ``(lat, lon)`` pairs.
    """
    if isinstance(path, pd.DataFrame):
        lats, lons = path["lat"].to_numpy(float), path["lon"].to_numpy(float)
    else:
        pts = np.asarray(list(path), dtype=float).reshape(-1, 2)
        lats, lons = pts[:, 0], pts[:, 1]
    if len(lats) == 0:
        raise EmptyPath("hazard path has no points")
    lat, lon = _center(region)
    return float(np.min(haversine_km(lat, lon, lats, lons)))


# ----------------------------------------------------------------------------
# power restoration


def restoration_days(series: pd.DataFrame, threshold: float = 0.10) -> float:
    """Days from the outage fraction first reaching ``threshold`` to the last
    sample still above it.

    ``series`` holds one county's rows with ``timestamp``, ``customers_total``
    and ``customers_out``.  Returns 0 when the fraction never reaches the
    threshold.
    """
    if len(series) == 0:
        raise EmptySeries("outage series is empty")
    s = series.sort_values("timestamp", kind="mergesort")
    frac = s["customers_out"].to_numpy(float) / s["customers_total"].to_numpy(float)
    times = s["timestamp"]
    reached = np.flatnonzero(frac >= threshold)
    if len(reached) == 0:
        return 0.0
    above = np.flatnonzero(frac > threshold)
    if len(above) == 0 or above[-1] < reached[0]:
        return 0.0
    span = times.iloc[above[-1]] - times.iloc[reached[0]]
    return span / pd.Timedelta(days=1)


# ----------------------------------------------------------------------------
# road disruption


class NearestCenterLookup:
    """Map a point to the region with the nearest center, optionally within
    ``max_km``."""

    def __init__(self, attributes: pd.DataFrame, max_km: float | None = None):
        self.ids = np.asarray(attributes.index if attributes.index.name == "polygon_id"
                              else attributes["polygon_id"])
        self.lats = attributes["center_lat"].to_numpy(float)
        self.lons = attributes["center_lon"].to_numpy(float)
        self.max_km = max_km

    def __call__(self, lat: float, lon: float):
        if len(self.ids) == 0:
            return None
        d = haversine_km(lat, lon, self.lats, self.lons)
        i = int(np.argmin(d))
        if self.max_km is not None and d[i] > self.max_km:
            return None
        return str(self.ids[i])


class PolygonLookup:
    """Point-in-polygon lookup against GeoJSON features keyed by ``polygon_id``."""

    def __init__(self, geojson, key: str = "polygon_id"):
        from shapely.geometry import Point, shape
        from shapely.strtree import STRtree

        if isinstance(geojson, (str, Path)):
            geojson = json.loads(Path(geojson).read_text(encoding="utf-8"))
        self._point = Point
        feats = [f for f in geojson.get("features", [])
                 if f.get("geometry") and key in (f.get("properties") or {})]
        self.keys = [str(f["properties"][key]) for f in feats]
        self.shapes = [shape(f["geometry"]) for f in feats]
        self.tree = STRtree(self.shapes)

    def __call__(self, lat: float, lon: float):
        pt = self._point(lon, lat)
        for i in sorted(self.tree.query(pt)):
            if self.shapes[i].covers(pt):
                return self.keys[i]
        return None


def _clip_durations(events: pd.DataFrame, window) -> np.ndarray:
    """Hours of each event inside ``window``; open-ended events run to its end."""
    lo, hi = (pd.Timestamp(w) for w in window)
    start = events["start"].clip(lower=lo, upper=hi)
    end = events["end"].fillna(hi).clip(lower=lo, upper=hi)
    return ((end - start) / pd.Timedelta(hours=1)).to_numpy(float)


def road_hours_by_region(events: pd.DataFrame, window,
                         point_to_region: Callable[[float, float], object]):
    """Disruption hours per region and the number of events no region claimed.

    Events in the ``other`` category never count.
    """
    ev = events[events["category"] != "other"]
    if ev.empty:
        return {}, 0
    hours = _clip_durations(ev, window)
    owners = [point_to_region(lat, lon) for lat, lon in
              zip(ev["lat"].to_numpy(float), ev["lon"].to_numpy(float))]
    totals: dict[str, float] = {}
    unmapped = 0
    for owner, h in zip(owners, hours):
        if owner is None:
            unmapped += 1
            continue
        key = getattr(owner, "polygon_id", owner)
        totals[key] = totals.get(key, 0.0) + h
    return totals, unmapped


def road_hours(events: pd.DataFrame, region, window,
               point_to_region: Callable[[float, float], object]) -> float:
    """Total in-window disruption hours of the events mapped to ``region``."""
    key = getattr(region, "polygon_id", region)
    totals, unmapped = road_hours_by_region(events, window, point_to_region)
    if unmapped:
        logger.info("%d road event(s) fell outside every region", unmapped)
    return float(totals.get(key, 0.0))


# ----------------------------------------------------------------------------
# assembly


@dataclass(frozen=True)
class CovariateOptions:
    restore_threshold: float = 0.10
    lookup: Callable[[float, float], object] | None = None
    max_event_km: float | None = None


def assemble_rows(dataset: Dataset, resilience_results: Iterable[ResilienceResult],
                  options: CovariateOptions = CovariateOptions()) -> pd.DataFrame:
    """One covariate row per region in ``resilience_results`` (raw units).

    Every region of a county shares that county's restoration time.  Raises
    ``MissingCounty`` when a region's county has no outage series.
    """
    results = list(resilience_results)
    lookup = options.lookup or NearestCenterLookup(dataset.attributes, options.max_event_km)
    window = dataset.horizon.window(dataset.timezone)
    hours, unmapped = road_hours_by_region(dataset.road_events, window, lookup)
    if unmapped:
        logger.info("%d road event(s) not mapped to any region", unmapped)

    outages = {c: g for c, g in dataset.outages.groupby("county", sort=True)}
    restore: dict[str, float] = {}
    rows = []
    for res in results:
        rid = res.region
        if rid.county not in outages:
            raise MissingCounty(f"no outage series for county {rid.county!r} "
                                f"(region {rid.polygon_id!r})")
        if rid.county not in restore:
            restore[rid.county] = restoration_days(outages[rid.county],
                                                   options.restore_threshold)
        attr = dataset.attributes.loc[rid.polygon_id]
        rows.append({
            "polygon_id": rid.polygon_id,
            "county": rid.county,
            "trl": res.trl,
            "road_hours": hours.get(rid.polygon_id, 0.0),
            "restore_days": restore[rid.county],
            "damage": float(attr["property_damage"]),
            "pct_pre2000": float(attr["pct_pre2000_houses"]),
            "dist_km": distance_to_path(attr, dataset.hazard_path),
            "income": float(attr["median_income"]),
            "pct_black": float(attr["pct_black"]),
            "pct_hispanic": float(attr["pct_hispanic"]),
        })
    return pd.DataFrame(rows, columns=list(COVARIATE_COLUMNS))


# ----------------------------------------------------------------------------
# standardization and diagnostics


@dataclass(frozen=True)
class StandardizedMatrix:
    values: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    names: tuple[str, ...] = ()

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def transform(self, columns) -> np.ndarray:
        return (np.asarray(columns, dtype=float) - self.means) / self.stds


def standardize(columns, names: Sequence[str] | None = None) -> StandardizedMatrix:
    """Z-score each column with the sample (n-1) standard deviation."""
    if isinstance(columns, pd.DataFrame):
        names = tuple(columns.columns) if names is None else tuple(names)
        columns = columns.to_numpy(dtype=float)
    X = np.asarray(columns, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(X.shape[1]))
    if X.shape[0] < 2:
        raise ConstantColumn("need at least two rows to standardize", names)
    means = X.mean(axis=0)
    stds = X.std(axis=0, ddof=1)
    flat = stds <= 1e-12 * np.maximum(1.0, np.abs(means))
    if np.any(flat):
        bad = [names[j] for j in np.flatnonzero(flat)]
        raise ConstantColumn(f"constant column(s): {', '.join(bad)}", bad)
    return StandardizedMatrix((X - means) / stds, means, stds, names)


@dataclass(frozen=True)
class Diagnostics:
    pearson: np.ndarray
    vif: np.ndarray
    condition_number: float
    names: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "names": list(self.names),
            "pearson": self.pearson.tolist(),
            "vif": dict(zip(self.names, self.vif.tolist())),
            "condition_number": self.condition_number,
        }


def diagnostics(X) -> Diagnostics:
    """Pearson correlations, variance inflation factors and condition number.

    VIF of column ``j`` is ``1 / (1 - R^2_j)`` from regressing it on the other
    columns, read off the diagonal of the inverse correlation matrix.  The
    condition number is the singular-value ratio of the standardized design.
    """
    if not isinstance(X, StandardizedMatrix):
        X = standardize(X)
    Z, names = X.values, X.names
    n, p = Z.shape
    if n <= p:
        raise RankDeficient(f"need more rows than columns (n={n}, p={p})", names)
    _, s, vt = np.linalg.svd(Z, full_matrices=False)
    null = s <= 1e-10 * s[0]
    if np.any(null):
        involved = np.flatnonzero(np.any(np.abs(vt[null]) > 1e-8, axis=0))
        bad = [names[j] for j in involved]
        raise RankDeficient(f"exactly collinear columns: {', '.join(bad)}", bad)
    pearson = Z.T @ Z / (n - 1)
    pearson = (pearson + pearson.T) / 2
    np.fill_diagonal(pearson, 1.0)
    vif = np.diag(np.linalg.inv(pearson)).copy()
    return Diagnostics(pearson, vif, float(s[0] / s[-1]), names)
