"""Activity-rate curves, affected-region screening, and transient resilience loss.

The quality function of a region on day ``d`` is its activity rate
``Q_d = crisis_users / baseline_users``.  Transient resilience loss integrates
the shortfall ``max(0, 1 - Q)`` over the horizon with a left Riemann sum at one
sample per day, so a horizon of ``T`` days has maximum possible resilience
``T`` (the loss of a region with no activity at all).
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data_model import Dataset, RegionId
from .errors import IncompleteSeries, WindowOutOfRange, ZeroBaseline

DEFAULT_LANDFALL = dt.date(2021, 8, 29)


@dataclass(frozen=True)
class RegionSeries:
    region: RegionId
    dates: tuple[dt.date, ...]
    rates: np.ndarray

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        if rates.ndim != 1 or len(rates) != len(self.dates) or len(rates) == 0:
            raise IncompleteSeries("rates and dates must be non-empty and of equal length")
        if np.any(rates < 0) or not np.all(np.isfinite(rates)):
            raise ValueError("activity rates must be finite and non-negative")
        steps = np.diff(np.array(self.dates, dtype="datetime64[D]")).astype(int)
        if np.any(steps != 1):
            raise IncompleteSeries("dates must increase by exactly one day")
        rates.setflags(write=False)
        object.__setattr__(self, "rates", rates)

    @property
    def horizon_days(self) -> int:
        return len(self.rates)

    @classmethod
    def from_rates(cls, rates, start: dt.date = dt.date(2021, 8, 25),
                   region: RegionId | None = None) -> "RegionSeries":
        rates = np.asarray(rates, dtype=float)
        dates = tuple(start + dt.timedelta(days=i) for i in range(len(rates)))
        return cls(region or RegionId("synthetic", "synthetic", "synthetic"), dates, rates)


@dataclass(frozen=True)
class ResilienceResult:
    region: RegionId | None
    trl: float
    mpr: float
    resilience: float
    pct_loss: float


@dataclass(frozen=True)
class SelectionThresholds:
    """Screening knobs for affected regions.

    The drop window runs ``window_days`` days from ``landfall`` (both ends
    inclusive).  A region is affected when its minimum rate in that window is
    below ``rate_floor`` and its z-score is below ``z_floor`` on at least
    ``z_days_min`` horizon days.
    """

    rate_floor: float = 0.90
    landfall: dt.date = DEFAULT_LANDFALL
    window_days: int = 7
    z_floor: float = -1.82
    z_days_min: int = 2

    def __post_init__(self):
        if not 0.0 < self.rate_floor <= 1.0:
            raise ValueError(f"rate_floor must lie in (0, 1], got {self.rate_floor}")
        if not -4.0 <= self.z_floor < 0.0:
            raise ValueError(f"z_floor must lie in [-4, 0), got {self.z_floor}")
        if self.window_days < 0 or self.z_days_min < 1:
            raise ValueError("window_days must be >= 0 and z_days_min >= 1")

    @property
    def drop_window(self) -> tuple[dt.date, dt.date]:
        return self.landfall, self.landfall + dt.timedelta(days=self.window_days)


@dataclass(frozen=True)
class Screening:
    """Per-region outcome of the affected-region screen."""

    region: RegionId
    min_rate: float
    z_days: int
    included: bool
    failed: tuple[str, ...] = field(default_factory=tuple)


def activity_rate(crisis_users, baseline_users):
    """Ratio of observed users to the region's baseline users.

    Works elementwise on arrays.  Raises ``ZeroBaseline`` if any baseline is
    not strictly positive.
    """
    crisis = np.asarray(crisis_users, dtype=float)
    base = np.asarray(baseline_users, dtype=float)
    if np.any(base <= 0):
        raise ZeroBaseline("baseline_users must be > 0 to form an activity rate")
    out = crisis / base
    return float(out) if out.ndim == 0 else out


def build_series(dataset: Dataset, region) -> RegionSeries:
    """Daily activity-rate curve of one region over the dataset horizon."""
    pid = region.polygon_id if isinstance(region, RegionId) else region
    rid = dataset.region(pid)
    rows = dataset.region_activity(pid)
    if len(rows) != dataset.horizon.days:
        raise IncompleteSeries(
            f"region {pid!r} has {len(rows)} of {dataset.horizon.days} horizon days")
    rates = activity_rate(rows["crisis_users"].to_numpy(), rows["baseline_users"].to_numpy())
    dates = tuple(d.date() for d in rows["date"])
    return RegionSeries(rid, dates, np.atleast_1d(rates))


def resilience_from_trl(trl: float, mpr: float, region: RegionId | None = None) -> ResilienceResult:
    if not 0.0 <= trl <= mpr:
        raise ValueError(f"trl must lie in [0, mpr={mpr}], got {trl}")
    return ResilienceResult(region, float(trl), float(mpr), float(mpr - trl),
                            float(100.0 * trl / mpr))


def transient_loss(series: RegionSeries) -> ResilienceResult:
    """Transient resilience loss of a daily rate curve.

    Days above baseline contribute nothing; each day below contributes its
    shortfall times one day.
    """
    shortfall = np.clip(1.0 - series.rates, 0.0, None)
    trl = float(np.sum(shortfall))
    return resilience_from_trl(trl, float(series.horizon_days), series.region)


def _window_mask(dataset: Dataset, thresholds: SelectionThresholds) -> np.ndarray:
    lo, hi = thresholds.drop_window
    h = dataset.horizon
    if not (h.contains(lo) and h.contains(hi)):
        raise WindowOutOfRange(
            f"drop window {lo}..{hi} is not inside the horizon {h.start}..{h.end}")
    days = h.dates()
    return np.asarray((days >= pd.Timestamp(lo)) & (days <= pd.Timestamp(hi)))


def screen_regions(dataset: Dataset,
                   thresholds: SelectionThresholds = SelectionThresholds()) -> list[Screening]:
    """Apply both screening criteria to every region, keeping the reasons."""
    in_window = _window_mask(dataset, thresholds)
    out = []
    for rid in dataset.regions:
        series = build_series(dataset, rid)
        z = dataset.region_activity(rid.polygon_id)["z_score"].to_numpy()
        min_rate = float(series.rates[in_window].min())
        z_days = int(np.sum(z < thresholds.z_floor))
        failed = []
        if not min_rate < thresholds.rate_floor:
            failed.append("rate_floor")
        if z_days < thresholds.z_days_min:
            failed.append("z_floor")
        out.append(Screening(rid, min_rate, z_days, not failed, tuple(failed)))
    return out


def select_affected(dataset: Dataset,
                    thresholds: SelectionThresholds = SelectionThresholds()) -> list[RegionId]:
    """Regions that dropped below the rate floor in the window and show
    sustained negative z-scores."""
    return [s.region for s in screen_regions(dataset, thresholds) if s.included]
