"""Synthetic data with known ground truth, and brute-force oracles.

All randomness goes through ``numpy.random.Generator`` with the PCG64 bit
generator (``numpy.random.default_rng(seed)``), so every generator here is a
pure function of its parameters and seed.  The oracles are deliberately coded
along different lines from the production paths they check.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from .covariates import PREDICTORS
from .data_model import Horizon, RegionId, write_inputs
from .errors import BadParams, NoConvergence, NonPositiveResponse, RankDeficientDesign
from .resilience import RegionSeries

HORIZON_START = dt.date(2021, 8, 25)
HORIZON_END = dt.date(2021, 9, 30)
LANDFALL = dt.date(2021, 8, 29)


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


# ----------------------------------------------------------------------------
# activity curves


@dataclass(frozen=True)
class CurveParams:
    """Dip-and-recover activity curve.

    ``Q`` is 1 on day 0, falls linearly to ``1 - depth`` on ``drop_day`` (a
    drop on day 0 is instantaneous), climbs back linearly over
    ``recovery_days`` and stays at 1 afterwards.
    """

    depth: float
    drop_day: int
    recovery_days: int
    noise_sd: float = 0.0
    seed: int = 0


def curve_values(params: CurveParams, T: int) -> np.ndarray:
    p = params
    if not 0.0 <= p.depth <= 1.0:
        raise BadParams(f"depth must lie in [0, 1], got {p.depth}")
    if p.drop_day < 0 or p.recovery_days < 0 or p.drop_day + p.recovery_days >= T:
        raise BadParams("drop_day and recovery_days must be >= 0 and fit in the horizon")
    if p.noise_sd < 0:
        raise BadParams("noise_sd must be >= 0")
    d = np.arange(T, dtype=float)
    q = np.ones(T)
    if p.drop_day > 0:
        fall = d <= p.drop_day
        q[fall] = 1.0 - p.depth * d[fall] / p.drop_day
    else:
        q[0] = 1.0 - p.depth
    if p.recovery_days > 0:
        rec = (d > p.drop_day) & (d <= p.drop_day + p.recovery_days)
        q[rec] = 1.0 - p.depth * (1.0 - (d[rec] - p.drop_day) / p.recovery_days)
    if p.noise_sd > 0:
        q = q + rng_for(p.seed).normal(0.0, p.noise_sd, size=T)
    return np.maximum(q, 0.0)


def gen_curve(params: CurveParams, T: int = 37, start: dt.date = HORIZON_START,
              region: RegionId | None = None) -> RegionSeries:
    return RegionSeries.from_rates(curve_values(params, T), start, region)


def gen_step_curve(seed: int, T: int = 37) -> np.ndarray:
    """Random piecewise-constant daily rates in [0, 1.4], some days above 1."""
    rng = rng_for(seed)
    n_steps = int(rng.integers(1, 8))
    cuts = np.sort(rng.choice(np.arange(1, T), size=n_steps - 1, replace=False))
    levels = rng.uniform(0.0, 1.4, size=n_steps)
    return np.repeat(levels, np.diff(np.concatenate([[0], cuts, [T]])))


def oracle_trl(curve, T: int | None = None, dt: float = 1e-3) -> float:
    """Brute-force integral of ``max(0, 1 - Q(t))`` on a fine midpoint grid.

    ``curve`` is either a callable ``Q(t)`` on ``[0, T]`` (days) or a sequence
    of daily values read as a step function (day ``d`` covers ``[d, d+1)``).
    """
    if dt > 1e-2:
        raise ValueError("dt must be at most 1/100 day")
    if callable(curve):
        if T is None:
            raise ValueError("T is required for a callable curve")
        q_of_t: Callable = curve
    else:
        daily = np.asarray(curve, dtype=float)
        T = len(daily) if T is None else T

        def q_of_t(t):
            return daily[np.minimum(np.floor(t).astype(int), len(daily) - 1)]

    n = int(round(T / dt))
    t = (np.arange(n) + 0.5) * (T / n)
    shortfall = np.maximum(0.0, 1.0 - np.asarray(q_of_t(t), dtype=float))
    return float(np.sum(shortfall) * (T / n))


# ----------------------------------------------------------------------------
# GLMM data


@dataclass(frozen=True)
class GlmmScenario:
    beta_true: tuple[float, ...]
    sigma_b_true: float
    shape_true: float
    n_groups: int
    n_per_group: int
    seed: int = 0
    predictor_names: tuple[str, ...] | None = None

    def names(self) -> tuple[str, ...]:
        p = len(self.beta_true) - 1
        if self.predictor_names is not None:
            return tuple(self.predictor_names)
        return PREDICTORS if p == len(PREDICTORS) else tuple(f"x{j}" for j in range(1, p + 1))


# Parish-scale effect sizes: 36 groups of 5, 8 standardized predictors.
IDA_BETA = (0.936, 0.141, 0.632, 0.090, -0.092, 0.322, -0.111, -0.006, -0.029)


def ida_scenario(seed: int, sigma_b: float = 0.35, shape: float = 3.0) -> GlmmScenario:
    return GlmmScenario(IDA_BETA, sigma_b, shape, n_groups=36, n_per_group=5, seed=seed)


def gen_glmm_data(s: GlmmScenario) -> pd.DataFrame:
    """Covariate rows drawn from the Gamma/log random-intercept model.

    Predictors are standard normal; the response column is ``trl`` and the
    grouping column ``county``.
    """
    if s.n_groups < 1 or s.n_per_group < 1 or s.shape_true <= 0 or s.sigma_b_true < 0:
        raise BadParams("counts must be >= 1, shape > 0 and sigma_b >= 0")
    names = s.names()
    beta = np.asarray(s.beta_true, dtype=float)
    if len(names) != len(beta) - 1:
        raise BadParams("predictor_names must match beta_true (minus intercept)")
    rng = rng_for(s.seed)
    n = s.n_groups * s.n_per_group
    X = rng.standard_normal((n, len(names)))
    b = rng.normal(0.0, s.sigma_b_true, size=s.n_groups) if s.sigma_b_true > 0 \
        else np.zeros(s.n_groups)
    g = np.repeat(np.arange(s.n_groups), s.n_per_group)
    mu = np.exp(beta[0] + X @ beta[1:] + b[g])
    y = rng.gamma(shape=s.shape_true, scale=mu / s.shape_true)
    width = len(str(s.n_groups))
    df = pd.DataFrame(X, columns=list(names))
    df.insert(0, "trl", y)
    df.insert(0, "county", [f"G{k:0{width}d}" for k in g])
    df.insert(0, "polygon_id", [f"R{i:05d}" for i in range(n)])
    return df


def oracle_r2(design: np.ndarray, beta: np.ndarray, sigma2_group: float,
              shape: float) -> tuple[float, float]:
    """Marginal and conditional R^2, spelled out term by term."""
    lin = [float(sum(row[j] * beta[j] for j in range(len(beta)))) for row in design]
    m = sum(lin) / len(lin)
    var_f = sum((v - m) ** 2 for v in lin) / (len(lin) - 1)
    var_d = float(np.log(1.0 + 1.0 / shape))
    denom = var_f + sigma2_group + var_d
    return var_f / denom, (var_f + sigma2_group) / denom


def oracle_irls(y, X, max_iter: int = 200, tol: float = 1e-12) -> np.ndarray:
    """Gamma/log GLM coefficients by Newton-Raphson on the observed information.

    Solves explicit normal equations each step, starting from least squares
    on log(y); step-halving guards the log-likelihood.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if np.any(~np.isfinite(y)) or np.any(y <= 0):
        raise NonPositiveResponse("response must be strictly positive")
    if X.shape[0] <= X.shape[1] or np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankDeficientDesign("design is rank deficient")
    beta = np.linalg.lstsq(X, np.log(y), rcond=None)[0]

    def loglik(b):
        eta = X @ b
        return -np.sum(eta + y * np.exp(-eta))

    ll = loglik(beta)
    for _ in range(max_iter):
        ratio = y * np.exp(-(X @ beta))
        grad = X.T @ (ratio - 1.0)
        hess = (X * ratio[:, None]).T @ X
        delta = np.linalg.solve(hess, grad)
        step = 1.0
        while loglik(beta + step * delta) < ll and step > 1e-12:
            step *= 0.5
        beta = beta + step * delta
        ll = loglik(beta)
        if np.max(np.abs(step * delta)) < tol * max(1.0, np.max(np.abs(beta))):
            return beta
    raise NoConvergence("oracle IRLS did not converge")


def oracle_vif(X) -> np.ndarray:
    """VIFs by regressing each column on the others (with intercept) via OLS."""
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    out = np.empty(p)
    for j in range(p):
        others = np.column_stack([np.ones(n), np.delete(X, j, axis=1)])
        target = X[:, j]
        coef = np.linalg.solve(others.T @ others, others.T @ target)
        resid = target - others @ coef
        r2 = 1.0 - resid @ resid / np.sum((target - target.mean()) ** 2)
        out[j] = 1.0 / (1.0 - r2)
    return out


# ----------------------------------------------------------------------------
# end-to-end synthetic world


@dataclass(frozen=True)
class WorldParams:
    seed: int = 0
    n_groups: int = 12
    per_group: int = 5
    unaffected_share: float = 0.25
    beta: tuple[float, ...] = (0.9, 0.15, 0.6, 0.1, -0.1, 0.3, -0.1, 0.0, 0.0)
    sigma_b: float = 0.35
    shape: float = 3.0


_CATEGORY_CHOICES = ("weather_hazard", "weather_closure", "road_closed", "closure",
                     "obstruction", "other")


def _target_curve(trl: float, drop_day: int, T: int) -> tuple[float, int]:
    """Depth and recovery length whose dip area is about ``trl``."""
    depth = float(np.clip(0.25 + trl / 20.0, 0.15, 0.92))
    # fall contributes depth*drop_day/2; recovery contributes depth*R/2
    rec = int(round(2.0 * trl / depth - drop_day))
    rec = int(np.clip(rec, 1, T - drop_day - 1))
    return depth, rec


def simulate_world(params: WorldParams = WorldParams(), directory=None) -> dict:
    """Synthetic inputs for a whole pipeline run.

    Covariates are drawn first, a target loss follows the Gamma model, and
    each region's activity curve is shaped to that loss.  A share of regions
    gets only a shallow dip so the screen has something to reject.  Returns
    the tables (and writes them with a manifest when ``directory`` is given).
    """
    rng = rng_for(params.seed)
    horizon = Horizon(HORIZON_START, HORIZON_END)
    T = horizon.days
    days = horizon.dates()
    drop_day = (LANDFALL - HORIZON_START).days + 1

    n = params.n_groups * params.per_group
    counties = [f"Parish {k + 1:02d}" for k in range(params.n_groups)]
    county_of = np.repeat(np.arange(params.n_groups), params.per_group)
    pids = [f"22{k:03d}{i:05d}" for i, k in enumerate(county_of)]
    names = [f"District {i % params.per_group + 1}" for i in range(n)]

    # geography: parishes scattered over southern Louisiana, regions near them
    c_lat = rng.uniform(29.3, 31.0, params.n_groups)
    c_lon = rng.uniform(-93.3, -89.5, params.n_groups)
    lat = c_lat[county_of] + rng.normal(0, 0.08, n)
    lon = c_lon[county_of] + rng.normal(0, 0.08, n)

    # hazard track: roughly northward through the middle of the area
    track_t = pd.date_range("2021-08-26T00:00:00Z", "2021-09-04T00:00:00Z", freq="6h")
    frac = np.linspace(0.0, 1.0, len(track_t))
    track_lat = 26.0 + 9.0 * frac
    track_lon = -90.2 - 0.8 * np.sin(np.pi * frac) + 2.5 * frac ** 2
    dist_proxy = np.array([
        np.min(np.hypot(la - track_lat, (lo - track_lon) * np.cos(np.radians(la))))
        for la, lo in zip(lat, lon)])

    restore = np.clip(30.0 * np.exp(-dist_proxy / 1.2) + rng.normal(0, 2.0, params.n_groups
                                                                    )[county_of], 0, 32)
    county_restore = np.array([restore[county_of == k].mean() for k in range(params.n_groups)])
    pct_pre2000 = np.clip(rng.normal(72.0, 15.0, n), 0, 100)
    income = np.clip(rng.lognormal(np.log(52000), 0.35, n), 15000, 150000)
    pct_black = np.clip(rng.gamma(2.0, 15.0, n), 0, 95)
    pct_hispanic = np.clip(rng.gamma(1.5, 2.5, n), 0, 30)
    damage = np.where(rng.uniform(size=n) < 0.15, 0.0,
                      rng.lognormal(np.log(2500), 1.0, n) * np.exp(-dist_proxy))
    road_h = rng.gamma(0.8, 300.0, n) * np.exp(-dist_proxy / 2.0)

    def z(v):
        return (v - v.mean()) / v.std()

    beta = np.asarray(params.beta)
    X = np.column_stack([z(road_h), z(county_restore[county_of]), z(damage), z(pct_pre2000),
                         z(dist_proxy), z(income), z(pct_black), z(pct_hispanic)])
    b = rng.normal(0, params.sigma_b, params.n_groups)
    mu = np.exp(beta[0] + X @ beta[1:] + b[county_of])
    trl = np.clip(rng.gamma(params.shape, mu / params.shape), 0.3, 14.0)
    unaffected = rng.uniform(size=n) < params.unaffected_share

    # activity
    act = []
    for i in range(n):
        if unaffected[i]:
            cp = CurveParams(depth=float(rng.uniform(0.0, 0.06)), drop_day=drop_day,
                             recovery_days=3, noise_sd=0.01, seed=params.seed * 100003 + i)
        else:
            depth, rec = _target_curve(float(trl[i]), drop_day, T)
            cp = CurveParams(depth=depth, drop_day=drop_day, recovery_days=rec,
                             noise_sd=0.015, seed=params.seed * 100003 + i)
        q = curve_values(cp, T)
        base = float(rng.uniform(200, 5000))
        crisis = np.round(q * base).astype(np.int64)
        zsc = np.clip(-(1.0 - q) * 9.0 + rng.normal(0, 0.3, T), -4.0, 4.0)
        act.append(pd.DataFrame({
            "polygon_id": pids[i], "name": names[i], "county": counties[county_of[i]],
            "date": days, "baseline_users": np.round(base, 3),
            "crisis_users": crisis, "z_score": np.round(zsc, 4)}))
    activity = pd.concat(act, ignore_index=True)

    # hourly outages per county: a plateau from landfall to the restoration time
    hours = pd.date_range("2021-08-20T00:00:00Z", "2021-09-30T23:00:00Z", freq="h")
    land_h = int((pd.Timestamp("2021-08-29T12:00:00Z") - hours[0]) / pd.Timedelta(hours=1))
    outs = []
    for k in range(params.n_groups):
        total = int(rng.integers(2000, 200000))
        dur = int(round(county_restore[k] * 24))
        peak = float(np.clip(0.15 + 0.8 * np.exp(-dist_proxy[county_of == k].mean()), 0.15, 1.0))
        if county_restore[k] < 0.5:
            peak = float(rng.uniform(0.01, 0.08))
        f = np.zeros(len(hours))
        f[land_h:land_h + max(dur, 1)] = peak
        f = np.clip(f + rng.uniform(0, 0.01, len(hours)), 0, 1)
        out = np.minimum(np.round(f * total).astype(np.int64), total)
        outs.append(pd.DataFrame({"county": counties[k], "timestamp": hours,
                                  "customers_total": total, "customers_out": out}))
    outages = pd.concat(outs, ignore_index=True)

    # road events near each region, durations adding up to road_h
    ev = []
    window_lo = pd.Timestamp("2021-08-25T05:00:00Z")
    for i in range(n):
        m = int(rng.integers(1, 4))
        shares = rng.dirichlet(np.ones(m)) * max(road_h[i], 0.5)
        for j in range(m):
            st = window_lo + pd.Timedelta(hours=float(rng.uniform(72, 200)))
            open_ended = rng.uniform() < 0.05
            ev.append({"event_id": f"E{i:05d}-{j}",
                       "lat": round(float(lat[i] + rng.normal(0, 0.005)), 6),
                       "lon": round(float(lon[i] + rng.normal(0, 0.005)), 6),
                       "start": st.floor("min"),
                       "end": pd.NaT if open_ended
                       else (st + pd.Timedelta(hours=float(shares[j]))).floor("min"),
                       "category": _CATEGORY_CHOICES[int(rng.integers(0, 6))]})
    road_events = pd.DataFrame(ev)
    road_events["end"] = pd.to_datetime(road_events["end"], utc=True)

    hazard = pd.DataFrame({"timestamp": track_t, "lat": np.round(track_lat, 4),
                           "lon": np.round(track_lon, 4)})
    attributes = pd.DataFrame({
        "polygon_id": pids, "center_lat": np.round(lat, 6), "center_lon": np.round(lon, 6),
        "median_income": np.round(income, 0), "pct_black": np.round(pct_black, 2),
        "pct_hispanic": np.round(pct_hispanic, 2),
        "pct_pre2000_houses": np.round(pct_pre2000, 2),
        "property_damage": np.round(damage, 2)})

    tables = dict(activity=activity, outages=outages, road_events=road_events,
                  hazard_path=hazard, attributes=attributes)
    if directory is not None:
        write_inputs(directory, horizon=horizon, timezone="America/Chicago",
                     extra={"landfall": LANDFALL.isoformat()}, **tables)
    return tables
