import datetime as dt
import textwrap

import pytest

HORIZON = {"start": "2021-08-25", "end": "2021-09-30"}


def _days(n, start=dt.date(2021, 8, 25)):
    return [start + dt.timedelta(days=i) for i in range(n)]


@pytest.fixture
def write_set(tmp_path):
    """Write a small, consistent input set; callers override any file body."""

    def _write(activity=None, outages=None, road_events=None, hazard_path=None,
               attributes=None, horizon=HORIZON, timezone="America/Chicago"):
        if activity is None:
            lines = ["polygon_id,name,county,date,baseline_users,crisis_users,z_score"]
            for pid, county in (("P1", "Alpha"), ("P2", "Beta")):
                for d in _days(37):
                    lines.append(f"{pid},District {pid[-1]},{county},{d},100,100,0.0")
            activity = "\n".join(lines) + "\n"
        if outages is None:
            outages = textwrap.dedent("""\
                county,timestamp,customers_total,customers_out
                Alpha,2021-08-29T00:00:00+00:00,1000,500
                Alpha,2021-08-29T01:00:00+00:00,1000,0
                Beta,2021-08-29T00:00:00+00:00,500,0
                """)
        if road_events is None:
            road_events = textwrap.dedent("""\
                event_id,lat,lon,start,end,category
                E1,29.9,-90.1,2021-08-30T00:00:00+00:00,2021-08-30T02:00:00+00:00,road closed
                E2,30.5,-91.1,2021-08-30T00:00:00+00:00,,obstruction
                """)
        if hazard_path is None:
            hazard_path = textwrap.dedent("""\
                timestamp,lat,lon
                2021-08-29T12:00:00+00:00,29.0,-90.0
                2021-08-30T00:00:00+00:00,30.0,-90.5
                """)
        if attributes is None:
            attributes = textwrap.dedent("""\
                polygon_id,center_lat,center_lon,median_income,pct_black,pct_hispanic,pct_pre2000_houses,property_damage
                P1,29.9,-90.1,50000,30,4,70,1200.5
                P2,30.5,-91.1,60000,20,3,80,
                """)
        files = {"activity": activity, "outages": outages, "road_events": road_events,
                 "hazard_path": hazard_path, "attributes": attributes}
        for role, body in files.items():
            (tmp_path / f"{role}.csv").write_text(body, encoding="utf-8")
        manifest = {role: f"{role}.csv" for role in files}
        manifest.update(horizon=horizon, timezone=timezone, base_dir=str(tmp_path))
        return manifest

    return _write


# one summary line per acceptance criterion
_acceptance = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance:
        mark = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{mark}] {name}")
