import json

import pandas as pd
import pytest

from trlkit.cli import main
from trlkit.report import histogram
from trlkit.synth import WorldParams, simulate_world


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    d = tmp_path_factory.mktemp("world")
    simulate_world(WorldParams(seed=7), d)
    return d / "manifest.json"


def run(*argv):
    return main([str(a) for a in argv])


def test_run_all_writes_every_output(world, tmp_path):
    assert run("run-all", "--manifest", world, "--out", tmp_path) == 0
    for name in ("regions.csv", "selection.json", "covariates.csv", "model.json",
                 "histogram.csv", "curves.csv", "run.json"):
        assert (tmp_path / name).exists(), name
    assert not (tmp_path / "choropleth.geojson").exists()
    model = json.loads((tmp_path / "model.json").read_text())
    assert len(model["coefficients"]) == 9
    hist = pd.read_csv(tmp_path / "histogram.csv")
    regions = pd.read_csv(tmp_path / "regions.csv")
    assert len(hist) == 37 and hist["count"].sum() == len(regions)


def test_reruns_are_byte_identical(world, tmp_path):
    run("run-all", "--manifest", world, "--out", tmp_path / "a")
    run("run-all", "--manifest", world, "--out", tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        if f.name == "run.json":
            continue
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_regions_sorted_by_loss(world, tmp_path):
    run("quantify", "--manifest", world, "--out", tmp_path)
    trl = pd.read_csv(tmp_path / "regions.csv")["trl"]
    assert trl.is_monotonic_decreasing


def test_empty_selection_writes_header_only(world, tmp_path):
    assert run("quantify", "--manifest", world, "--out", tmp_path, "--rate-floor", "0.01") == 0
    assert (tmp_path / "regions.csv").read_text().count("\n") == 1
    log = json.loads((tmp_path / "run.json").read_text())
    assert len(log["warnings"]) == 1


def test_flags_override_manifest(world, tmp_path):
    run("quantify", "--manifest", world, "--out", tmp_path, "--z-days", "3")
    cfg = json.loads((tmp_path / "run.json").read_text())["config"]
    assert cfg["z_days_min"] == 3 and cfg["rate_floor"] == 0.9


def test_boundaries_missing_a_region(world, tmp_path):
    run("quantify", "--manifest", world, "--out", tmp_path)
    ids = pd.read_csv(tmp_path / "regions.csv", dtype={"polygon_id": str})["polygon_id"]
    feats = [{"type": "Feature", "properties": {"polygon_id": pid},
              "geometry": {"type": "Point", "coordinates": [-90.0, 30.0]}}
             for pid in ids[1:]]
    geo = tmp_path / "bounds.geojson"
    geo.write_text(json.dumps({"type": "FeatureCollection", "features": feats}))
    assert run("report", "--manifest", world, "--out", tmp_path, "--boundaries", geo) == 0
    log = json.loads((tmp_path / "run.json").read_text())
    assert len(log["warnings"]) == 1 and ids[0] in log["warnings"][0]
    out = json.loads((tmp_path / "choropleth.geojson").read_text())
    assert all(f["properties"]["trl"] is not None for f in out["features"])


def test_constant_predictor_exits_4(world, tmp_path):
    src = world.parent
    attrs = pd.read_csv(src / "attributes.csv", dtype=str)
    attrs["median_income"] = "50000"
    copy = tmp_path / "in"
    copy.mkdir()
    for f in src.iterdir():
        (copy / f.name).write_bytes(f.read_bytes())
    attrs.to_csv(copy / "attributes.csv", index=False)
    assert run("fit", "--manifest", copy / "manifest.json", "--out", tmp_path / "out") == 4


def test_missing_manifest_exits_3(tmp_path):
    assert run("quantify", "--manifest", tmp_path / "nope.json", "--out", tmp_path) == 3


def test_bad_usage_exits_2(capsys):
    with pytest.raises(SystemExit) as err:
        main(["quantify"])
    assert err.value.code == 2


def test_histogram_bins():
    bins = histogram([5.2, 0.0, 37.0], 37)
    assert bins[5] == (5, 6, 1)
    assert bins[0] == (0, 1, 1)
    assert bins[-1] == (36, 37, 1)
    assert sum(c for *_, c in bins) == 3
