import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trlkit.covariates import (
    EARTH_RADIUS_KM,
    COVARIATE_COLUMNS,
    NearestCenterLookup,
    PolygonLookup,
    assemble_rows,
    diagnostics,
    distance_to_path,
    haversine_km,
    restoration_days,
    road_hours,
    road_hours_by_region,
    standardize,
)
from trlkit.data_model import load_inputs
from trlkit.errors import (
    ConstantColumn,
    EmptyPath,
    EmptySeries,
    InvalidCoordinate,
    MissingCounty,
    RankDeficient,
)
from trlkit.resilience import resilience_from_trl
from trlkit.synth import oracle_vif

lats = st.floats(-90, 90, allow_nan=False)
lons = st.floats(-180, 180, allow_nan=False)


class TestHaversine:
    def test_one_degree_of_meridian(self):
        assert haversine_km(0, 0, 1, 0) == pytest.approx(2 * math.pi * 6371.0 / 360, abs=1e-3)

    def test_antipodes(self):
        assert haversine_km(0, 0, 0, 180) == pytest.approx(math.pi * EARTH_RADIUS_KM, abs=1e-2)

    def test_same_point(self):
        assert haversine_km(29.95, -90.07, 29.95, -90.07) == 0.0

    def test_bad_latitude(self):
        with pytest.raises(InvalidCoordinate):
            haversine_km(91, 0, 0, 0)

    @given(lats, lons, lats, lons)
    def test_symmetric_and_bounded(self, a, b, c, d):
        ab = haversine_km(a, b, c, d)
        assert ab == pytest.approx(haversine_km(c, d, a, b), abs=1e-9)
        assert 0.0 <= ab <= math.pi * EARTH_RADIUS_KM + 1e-6

    @settings(max_examples=50)
    @given(lats, lons, lats, lons)
    def test_agrees_with_dot_product_form(self, a, b, c, d):
        # central angle from unit vectors, a separate formulation
        def unit(lat, lon):
            la, lo = math.radians(lat), math.radians(lon)
            return np.array([math.cos(la) * math.cos(lo), math.cos(la) * math.sin(lo),
                             math.sin(la)])
        u, v = unit(a, b), unit(c, d)
        angle = math.atan2(np.linalg.norm(np.cross(u, v)), float(u @ v))
        assert haversine_km(a, b, c, d) == pytest.approx(EARTH_RADIUS_KM * angle, abs=1e-6)


class TestDistanceToPath:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        path = rng.uniform([25, -95], [35, -85], size=(40, 2))
        for lat, lon in rng.uniform([25, -95], [35, -85], size=(10, 2)):
            brute = min(haversine_km(lat, lon, p, q) for p, q in path)
            assert distance_to_path((lat, lon), path) == pytest.approx(brute, abs=1e-12)

    def test_accepts_frames(self):
        path = pd.DataFrame({"lat": [29.0, 30.0], "lon": [-90.0, -90.5]})
        region = pd.Series({"center_lat": 29.0, "center_lon": -90.0})
        assert distance_to_path(region, path) == 0.0

    def test_empty_path(self):
        with pytest.raises(EmptyPath):
            distance_to_path((0, 0), [])


def _outages(fractions, total=1000, step_hours=1):
    ts = pd.date_range("2021-08-29", periods=len(fractions), freq=f"{step_hours}h", tz="UTC")
    return pd.DataFrame({"county": "Alpha", "timestamp": ts, "customers_total": total,
                         "customers_out": [round(f * total) for f in fractions]})


class TestRestoration:
    def test_no_outage(self):
        assert restoration_days(_outages([0.0] * 48)) == 0.0

    def test_five_days_fully_out(self):
        days = restoration_days(_outages([1.0] * 121 + [0.0] * 5))
        assert days == pytest.approx(5.0, abs=1 / 24)

    def test_peak_below_threshold(self):
        assert restoration_days(_outages([0.0, 0.08, 0.05, 0.0])) == 0.0

    def test_scale_invariance(self):
        f = [0.0, 0.2, 0.5, 0.3, 0.12, 0.05]
        small = restoration_days(_outages(f, total=100))
        large = restoration_days(_outages(f, total=100_000))
        assert small == large == pytest.approx(3 / 24)

    def test_order_of_rows_does_not_matter(self):
        df = _outages([0.0, 0.5, 0.5, 0.0])
        assert restoration_days(df.iloc[::-1]) == restoration_days(df)

    def test_empty(self):
        with pytest.raises(EmptySeries):
            restoration_days(_outages([]))


WINDOW = (pd.Timestamp("2021-08-25T05:00Z"), pd.Timestamp("2021-10-01T05:00Z"))


def _events(rows):
    df = pd.DataFrame(rows, columns=["event_id", "lat", "lon", "start", "end", "category"])
    for col in ("start", "end"):
        df[col] = pd.to_datetime(df[col], utc=True)
    return df


def _lookup():
    attrs = pd.DataFrame({"center_lat": [29.9, 30.5], "center_lon": [-90.1, -91.1]},
                         index=pd.Index(["P1", "P2"], name="polygon_id"))
    return NearestCenterLookup(attrs)


class TestRoadHours:
    def test_no_events(self):
        assert road_hours(_events([]), "P1", WINDOW, _lookup()) == 0.0

    def test_two_hour_closure(self):
        ev = _events([("E1", 29.9, -90.1, "2021-08-30T00:00Z", "2021-08-30T02:00Z",
                       "road_closed")])
        assert road_hours(ev, "P1", WINDOW, _lookup()) == 2.0
        assert road_hours(ev, "P2", WINDOW, _lookup()) == 0.0

    def test_open_ended_runs_to_window_end(self):
        ev = _events([("E1", 29.9, -90.1, "2021-10-01T02:00Z", None, "closure")])
        assert road_hours(ev, "P1", WINDOW, _lookup()) == 3.0

    def test_clipped_at_window_start(self):
        ev = _events([("E1", 29.9, -90.1, "2021-08-25T00:00Z", "2021-08-25T07:00Z",
                       "closure")])
        assert road_hours(ev, "P1", WINDOW, _lookup()) == 2.0

    def test_other_category_ignored(self):
        ev = _events([("E1", 29.9, -90.1, "2021-08-30T00:00Z", "2021-08-30T02:00Z", "other")])
        assert road_hours(ev, "P1", WINDOW, _lookup()) == 0.0

    def test_additive_over_disjoint_sets(self):
        a = [("E1", 29.9, -90.1, "2021-08-30T00:00Z", "2021-08-30T02:00Z", "closure")]
        b = [("E2", 29.8, -90.0, "2021-09-01T00:00Z", "2021-09-01T05:30Z", "obstruction")]
        ha, hb = (road_hours(_events(x), "P1", WINDOW, _lookup()) for x in (a, b))
        assert road_hours(_events(a + b), "P1", WINDOW, _lookup()) == ha + hb

    def test_events_far_from_any_region_are_unmapped(self):
        ev = _events([("E1", 40.0, -70.0, "2021-08-30T00:00Z", "2021-08-30T02:00Z",
                       "closure")])
        attrs = pd.DataFrame({"polygon_id": ["P1"], "center_lat": [29.9],
                              "center_lon": [-90.1]})
        totals, unmapped = road_hours_by_region(ev, WINDOW,
                                                NearestCenterLookup(attrs, max_km=50))
        assert totals == {} and unmapped == 1

    def test_polygon_lookup(self):
        square = {"type": "Polygon",
                  "coordinates": [[[-91, 29], [-89, 29], [-89, 31], [-91, 31], [-91, 29]]]}
        geo = {"type": "FeatureCollection", "features": [
            {"type": "Feature", "geometry": square, "properties": {"polygon_id": "P1"}}]}
        lookup = PolygonLookup(geo)
        assert lookup(30.0, -90.0) == "P1"
        assert lookup(35.0, -90.0) is None


class TestAssembleRows:
    def _results(self, ds):
        return [resilience_from_trl(3.0, 37, region=r) for r in ds.regions]

    def test_columns_and_values(self, write_set):
        outages = ("county,timestamp,customers_total,customers_out\n"
                   "Alpha,2021-08-29T00:00:00+00:00,1000,500\n"
                   "Alpha,2021-08-29T06:00:00+00:00,1000,300\n"
                   "Alpha,2021-08-29T07:00:00+00:00,1000,0\n"
                   "Beta,2021-08-29T00:00:00+00:00,500,0\n")
        ds = load_inputs(write_set(outages=outages))
        rows = assemble_rows(ds, self._results(ds))
        assert tuple(rows.columns) == COVARIATE_COLUMNS
        p1, p2 = rows.set_index("polygon_id").loc[["P1", "P2"]].itertuples()
        assert p1.road_hours == 2.0
        assert p1.restore_days == pytest.approx(6 / 24)
        assert p2.restore_days == 0.0
        assert p2.damage == 0.0
        assert p1.income == 50000.0

    def test_regions_of_one_county_share_restoration(self, write_set):
        attrs = ("polygon_id,center_lat,center_lon,median_income,pct_black,pct_hispanic,"
                 "pct_pre2000_houses,property_damage\n"
                 "P1,29.9,-90.1,50000,30,4,70,0\nP2,30.5,-91.1,60000,20,3,80,0\n")
        lines = ["polygon_id,name,county,date,baseline_users,crisis_users,z_score"]
        for pid in ("P1", "P2"):
            for d in pd.date_range("2021-08-25", "2021-09-30"):
                lines.append(f"{pid},D,Alpha,{d.date()},100,100,0")
        ds = load_inputs(write_set(activity="\n".join(lines) + "\n", attributes=attrs))
        rows = assemble_rows(ds, self._results(ds))
        assert rows["restore_days"].nunique() == 1

    def test_missing_county(self, write_set):
        outages = ("county,timestamp,customers_total,customers_out\n"
                   "Alpha,2021-08-29T00:00:00+00:00,1000,500\n")
        ds = load_inputs(write_set(outages=outages))
        with pytest.raises(MissingCounty, match="Beta"):
            assemble_rows(ds, self._results(ds))


class TestStandardize:
    def test_simple_column(self):
        z = standardize([[1.0], [2.0], [3.0]])
        np.testing.assert_allclose(z.values[:, 0], [-1.0, 0.0, 1.0])

    def test_idempotent(self):
        X = np.random.default_rng(0).normal(size=(30, 4))
        once = standardize(X).values
        np.testing.assert_allclose(standardize(once).values, once, atol=1e-12)

    def test_constant_column_named(self):
        df = pd.DataFrame({"a": [1.0, 2.0, 3.0], "flat": [5.0, 5.0, 5.0]})
        with pytest.raises(ConstantColumn) as err:
            standardize(df)
        assert list(err.value.columns) == ["flat"]

    def test_transform_reproduces_values(self):
        X = np.random.default_rng(1).normal(size=(10, 3))
        z = standardize(X)
        np.testing.assert_allclose(z.transform(X), z.values)


class TestDiagnostics:
    def test_orthogonal_columns(self):
        X = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float)
        d = diagnostics(X)
        np.testing.assert_allclose(d.vif, [1.0, 1.0])
        assert d.condition_number == pytest.approx(1.0)

    def test_exact_collinearity(self):
        x = np.arange(10.0)
        df = pd.DataFrame({"x": x, "y": 2 * x, "z": np.sin(x)})
        with pytest.raises(RankDeficient) as err:
            diagnostics(df)
        assert set(err.value.columns) == {"x", "y"}

    @pytest.mark.parametrize("seed", range(5))
    def test_vif_matches_auxiliary_regressions(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(50, 5))
        X[:, 4] += 0.8 * X[:, 0]
        np.testing.assert_allclose(diagnostics(X).vif, oracle_vif(X), atol=1e-8)

    def test_pearson_matches_numpy(self):
        X = np.random.default_rng(7).normal(size=(40, 3))
        np.testing.assert_allclose(diagnostics(X).pearson, np.corrcoef(X, rowvar=False),
                                   atol=1e-12)

    def test_as_dict_is_json_ready(self):
        import json
        X = np.random.default_rng(2).normal(size=(12, 2))
        d = diagnostics(standardize(X, names=("a", "b")))
        assert set(json.loads(json.dumps(d.as_dict()))["vif"]) == {"a", "b"}
