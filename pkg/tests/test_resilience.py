import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trlkit.data_model import load_inputs
from trlkit.errors import UnknownRegion, WindowOutOfRange, ZeroBaseline
from trlkit.resilience import (
    RegionSeries,
    SelectionThresholds,
    activity_rate,
    build_series,
    resilience_from_trl,
    screen_regions,
    select_affected,
    transient_loss,
)
from trlkit.synth import gen_step_curve, oracle_trl

rates = st.lists(st.floats(0.0, 3.0, allow_nan=False), min_size=1, max_size=60)


class TestActivityRate:
    def test_ratio(self):
        assert activity_rate(80, 100) == 0.8

    def test_identity(self):
        assert activity_rate(100, 100) == 1.0

    def test_zero_baseline(self):
        with pytest.raises(ZeroBaseline):
            activity_rate(37, 0)

    def test_vectorized(self):
        np.testing.assert_array_equal(activity_rate([1, 3], [2, 4]), [0.5, 0.75])


class TestBuildSeries:
    def _activity(self, halve_day=None):
        lines = ["polygon_id,name,county,date,baseline_users,crisis_users,z_score"]
        for i in range(37):
            d = dt.date(2021, 8, 25) + dt.timedelta(days=i)
            for pid, county in (("P1", "Alpha"), ("P2", "Beta")):
                crisis = 50 if (pid == "P1" and i == halve_day) else 100
                lines.append(f"{pid},D,{county},{d},100,{crisis},0")
        return "\n".join(lines) + "\n"

    def test_flat_curve(self, write_set):
        ds = load_inputs(write_set(activity=self._activity()))
        s = build_series(ds, "P1")
        assert s.horizon_days == 37
        assert np.all(s.rates == 1.0)
        assert s.dates[0] == dt.date(2021, 8, 25) and s.dates[-1] == dt.date(2021, 9, 30)

    def test_single_halved_day(self, write_set):
        ds = load_inputs(write_set(activity=self._activity(halve_day=4)))
        s = build_series(ds, ds.region("P1"))
        assert s.rates[4] == 0.5
        assert np.all(np.delete(s.rates, 4) == 1.0)

    def test_unknown_region(self, write_set):
        ds = load_inputs(write_set())
        with pytest.raises(UnknownRegion):
            build_series(ds, "nope")


class TestTransientLoss:
    def test_no_disruption(self):
        r = transient_loss(RegionSeries.from_rates(np.ones(37)))
        assert (r.trl, r.resilience, r.pct_loss, r.mpr) == (0.0, 37.0, 0.0, 37.0)

    def test_rectangle(self):
        r = transient_loss(RegionSeries.from_rates([0.5] * 10 + [1.0] * 27))
        assert r.trl == 5.0 and r.resilience == 32.0

    def test_published_row(self):
        r = resilience_from_trl(12.88, 37)
        assert r.resilience == pytest.approx(24.12, abs=1e-9)
        assert round(r.pct_loss, 2) == 34.81

    def test_gains_above_baseline_do_not_offset_losses(self):
        r = transient_loss(RegionSeries.from_rates([0.5, 1.5]))
        assert r.trl == 0.5

    def test_all_zero_series_loses_everything(self):
        r = transient_loss(RegionSeries.from_rates(np.zeros(37)))
        assert r.trl == 37.0 and r.pct_loss == 100.0

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_fine_grid_oracle(self, seed):
        q = gen_step_curve(seed)
        assert transient_loss(RegionSeries.from_rates(q)).trl == pytest.approx(
            oracle_trl(q, dt=1e-3), abs=1e-9)

    def test_rejects_gapped_dates(self):
        with pytest.raises(Exception):
            RegionSeries(None, (dt.date(2021, 1, 1), dt.date(2021, 1, 3)), np.ones(2))

    @given(rates)
    def test_bounds(self, q):
        r = transient_loss(RegionSeries.from_rates(q))
        assert 0.0 <= r.trl <= r.mpr
        assert r.resilience == pytest.approx(r.mpr - r.trl)
        assert 0.0 <= r.pct_loss <= 100.0

    @given(rates, st.integers(0, 59), st.floats(0.0, 1.0))
    def test_lowering_a_day_never_reduces_loss(self, q, idx, factor):
        q = np.array(q)
        i = idx % len(q)
        lowered = q.copy()
        lowered[i] = min(q[i], 1.0) * factor if q[i] < 1 else q[i] * factor
        before = transient_loss(RegionSeries.from_rates(q)).trl
        after = transient_loss(RegionSeries.from_rates(lowered)).trl
        assert after >= before - 1e-12

    @given(rates, st.lists(st.floats(1.0, 5.0), min_size=1, max_size=10))
    def test_days_at_or_above_baseline_add_nothing(self, q, extra):
        base = transient_loss(RegionSeries.from_rates(q))
        longer = transient_loss(RegionSeries.from_rates(list(q) + list(extra)))
        assert longer.trl == base.trl
        assert longer.mpr == base.mpr + len(extra)

    @settings(max_examples=50)
    @given(rates)
    def test_depends_only_on_rates(self, q):
        a = RegionSeries.from_rates(q, start=dt.date(2020, 1, 1))
        b = RegionSeries.from_rates(q, start=dt.date(2021, 8, 25))
        assert transient_loss(a).trl == transient_loss(b).trl


def _screen_activity(specs):
    """specs: polygon_id -> (list of 37 rates, list of 37 z-scores)."""
    lines = ["polygon_id,name,county,date,baseline_users,crisis_users,z_score"]
    for pid, (q, z) in specs.items():
        for i in range(37):
            d = dt.date(2021, 8, 25) + dt.timedelta(days=i)
            lines.append(f"{pid},D,C{pid},{d},100,{int(round(q[i] * 100))},{z[i]}")
    return "\n".join(lines) + "\n"


def _attrs(pids):
    head = ("polygon_id,center_lat,center_lon,median_income,pct_black,pct_hispanic,"
            "pct_pre2000_houses,property_damage\n")
    return head + "".join(f"{p},30,-90,50000,10,2,70,0\n" for p in pids)


class TestSelection:
    LANDFALL = 4  # 2021-08-29 is day 4 of the horizon

    def _dip(self, depth_rate, z_low_days, z=-3.0):
        q = [1.0] * 37
        q[self.LANDFALL + 1] = depth_rate
        zs = [0.0] * 37
        for i in range(z_low_days):
            zs[self.LANDFALL + i] = z
        return q, zs

    def _dataset(self, write_set, specs):
        return load_inputs(write_set(activity=_screen_activity(specs),
                                     attributes=_attrs(specs)))

    def test_shallow_dip_excluded(self, write_set):
        ds = self._dataset(write_set, {"A": self._dip(0.95, 3)})
        assert select_affected(ds) == []
        assert screen_regions(ds)[0].failed == ("rate_floor",)

    def test_both_criteria_met(self, write_set):
        ds = self._dataset(write_set, {"A": self._dip(0.70, 3)})
        assert [r.polygon_id for r in select_affected(ds)] == ["A"]

    def test_deep_dip_without_low_z_excluded(self, write_set):
        ds = self._dataset(write_set, {"A": self._dip(0.70, 0)})
        assert select_affected(ds) == []
        assert screen_regions(ds)[0].failed == ("z_floor",)

    def test_one_low_z_day_is_not_enough(self, write_set):
        ds = self._dataset(write_set, {"A": self._dip(0.70, 1)})
        assert select_affected(ds) == []

    def test_z_exactly_at_floor_does_not_count(self, write_set):
        ds = self._dataset(write_set, {"A": self._dip(0.70, 3, z=-1.82)})
        assert select_affected(ds) == []

    def test_drop_outside_window_ignored(self, write_set):
        q, z = self._dip(1.0, 3)
        q[20] = 0.5
        ds = self._dataset(write_set, {"A": (q, z)})
        assert select_affected(ds) == []

    def test_window_must_lie_in_horizon(self, write_set):
        ds = self._dataset(write_set, {"A": self._dip(0.7, 3)})
        with pytest.raises(WindowOutOfRange):
            select_affected(ds, SelectionThresholds(landfall=dt.date(2021, 9, 28)))

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            SelectionThresholds(rate_floor=0.0)
        with pytest.raises(ValueError):
            SelectionThresholds(z_floor=0.5)
