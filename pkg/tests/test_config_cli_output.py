import csv
import json
import shutil
from pathlib import Path

import pytest
import yaml
from pydantic import ValidationError

from castsim.cli import build_parser, main
from castsim.config import PRESETS, ScenarioConfig, dump_config, load_config, preset_config, resolve
from castsim.output import (
    MERGE_COLUMNS,
    RESOURCE_COLUMNS,
    IncompatibleRuns,
    compare,
    execute,
    format_comparison,
    sha256_of,
)

SHORT = 20.0


# --- config --------------------------------------------------------------------------------------

def test_defaults_follow_the_reference_scenario():
    c = ScenarioConfig()
    assert c.num_ues == 30
    assert c.content.ladder_bps[-1] == 20_000_000
    assert (c.mood.activate_threshold, c.mood.deactivate_threshold) == (2, 1)
    assert c.multilink.sinr_threshold_db == 5.0
    assert c.qoe.window_segments == 15
    assert c.client.quit_timer_s == 30.0
    assert c.duration_s == 300.0


@pytest.mark.parametrize("bad", [
    {"bogus": 1},
    {"radio": {"bogus": 1}},
    {"mood": {"activate_threshold": 1, "deactivate_threshold": 1}},
    {"client": {"initial_buffer_target_s": 40.0}},
    {"client": {"quit_timer_s": 10.0}},
    {"content": {"ladder_bps": [4, 1], "ladder_labels": ["a", "b"]}},
    {"ue_overrides": [{"ue": 99}]},
    {"preset": "nope"},
])
def test_invalid_configs_rejected(bad):
    with pytest.raises(ValidationError):
        resolve(bad)


def test_multicast_mcs_default_depends_on_multilink():
    assert preset_config("ptm-only").multicast_mcs == 2
    assert preset_config("ptm-multilink").multicast_mcs == 4
    assert preset_config("ptm-multilink", multicast={"mcs": 3}).multicast_mcs == 3


@pytest.mark.parametrize("name", PRESETS)
def test_presets_resolve_and_round_trip(name, tmp_path):
    cfg = preset_config(name)
    p = tmp_path / "c.yaml"
    p.write_text(dump_config(cfg))
    assert load_config(p) == cfg


def test_user_keys_override_preset():
    cfg = resolve({"preset": "mood-demo", "duration_s": 5.0, "topology": {"ues_per_cell": 3}})
    assert cfg.duration_s == 5.0
    assert cfg.topology.ues_per_cell == 3
    assert cfg.topology.area_radius_m == 60.0  # untouched preset key survives


# --- CLI -----------------------------------------------------------------------------------------

def test_parser_shapes():
    p = build_parser()
    a = p.parse_args(["run", "ptm-only", "--seed", "3", "--out", "x"])
    assert (a.command, a.config, a.seed, a.out) == ("run", "ptm-only", 3, "x")
    a = p.parse_args(["compare", "a", "b", "--assert-orderings"])
    assert a.dirs == ["a", "b"] and a.assert_orderings
    with pytest.raises(SystemExit):
        p.parse_args([])


def test_presets_command_lists_all(capsys):
    assert main(["presets"]) == 0
    out = capsys.readouterr().out
    for name in PRESETS:
        assert name in out


def test_invalid_config_exits_nonzero_with_field(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(yaml.safe_dump({"preset": "ptm-only", "radio": {"layers": 0}}))
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "radio.layers" in err
    assert not (tmp_path / "o").exists()


def test_missing_config_file(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.yaml")]) == 2


def _yaml(tmp_path, name, **kw):
    p = tmp_path / f"{name}.yaml"
    p.write_text(yaml.safe_dump({"preset": name, "duration_s": SHORT, **kw}))
    return str(p)


@pytest.fixture(scope="module")
def short_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    dirs = {}
    for name in ("ptp-only", "ptm-only", "ptm-multilink"):
        cfg = root / f"{name}.yaml"
        cfg.write_text(yaml.safe_dump({"preset": name, "duration_s": SHORT}))
        out = root / name
        assert main(["run", str(cfg), "--seed", "1", "--out", str(out)]) == 0
        dirs[name] = out
    return dirs


def test_run_writes_expected_tree(short_runs):
    d = short_runs["ptm-only"]
    names = {p.name for p in d.iterdir()}
    expected = {"manifest.json", "config.yaml", "kpi_report.json", "switch_log.csv", "merge_stats.csv",
                "mos_series.csv", "qoe_cdf.csv"}
    expected |= {f"resources_cell{c}.csv" for c in range(3)}
    expected |= {f"trace_ue{u}.csv" for u in range(30)}
    assert names == expected


def test_manifest_digests_and_snapshot(short_runs):
    d = short_runs["ptm-only"]
    m = json.loads((d / "manifest.json").read_text())
    assert m["seed"] == 1 and m["preset"] == "ptm-only"
    assert set(m["digests"]) == {p.name for p in d.iterdir()} - {"manifest.json"}
    for name, digest in m["digests"].items():
        assert sha256_of(d / name) == digest
    # no hidden defaults: the snapshot alone reproduces the config
    assert ScenarioConfig.model_validate(m["config"]) == load_config(d / "config.yaml")


def test_golden_csv_headers(short_runs):
    d = short_runs["ptm-multilink"]

    def head(name):
        with open(d / name) as fh:
            return next(csv.reader(fh))

    assert head("resources_cell0.csv") == list(RESOURCE_COLUMNS) == [
        "tti", "prbs_multicast", "prbs_unicast", "prbs_total"]
    assert head("trace_ue0.csv") == ["time_s", "event", "rung", "buffer_s"]
    assert head("switch_log.csv") == ["time_s", "content", "from_mode", "to_mode", "audience"]
    assert head("merge_stats.csv") == list(MERGE_COLUMNS) == [
        "ue", "received", "duplicates_discarded", "repaired", "declared_lost"]
    assert head("mos_series.csv") == ["ue", "time_s", "mos"]
    assert head("qoe_cdf.csv") == ["mos", "cdf"]
    rows = list(csv.reader(open(d / "resources_cell0.csv")))
    assert len(rows) == 1 + int(SHORT * 1000)


def test_resource_csv_reproduces_reported_consumption(short_runs):
    """Second route: recompute consumption from the CSVs on disk."""
    for d in short_runs.values():
        used = total = 0
        for c in range(3):
            with open(d / f"resources_cell{c}.csv") as fh:
                for row in csv.DictReader(fh):
                    used += int(row["prbs_multicast"]) + int(row["prbs_unicast"])
                    total += int(row["prbs_total"])
        rep = json.loads((d / "kpi_report.json").read_text())
        assert rep["avg_resource_consumption"] == pytest.approx(used / total, rel=1e-9)


def test_compare_identical_runs_zero_deltas(short_runs, capsys):
    d = short_runs["ptp-only"]
    cmp = compare([d, d])
    text = format_comparison(cmp)
    row = text.splitlines()[2].split()
    assert row[4:] == ["0.000000"] * 3


def test_compare_orders_and_csv(short_runs, tmp_path, capsys):
    out = tmp_path / "cmp.csv"
    rc = main(["compare", *map(str, short_runs.values()), "--csv", str(out)])
    assert rc == 0
    text = capsys.readouterr().out
    assert "avg_resource_consumption: ptm-only < ptp-only (seed 1)" in text
    assert len(list(csv.reader(open(out)))) == 4


def test_compare_refuses_incompatible(short_runs, tmp_path, capsys):
    other = tmp_path / "other"
    execute(preset_config("ptp-only", duration_s=5.0, seed=1), other)
    with pytest.raises(IncompatibleRuns, match="duration_s"):
        compare([short_runs["ptp-only"], other])
    assert main(["compare", str(short_runs["ptp-only"]), str(other)]) == 2
    assert "refusing" in capsys.readouterr().err


def test_compare_refuses_unfinished(short_runs, tmp_path):
    broken = tmp_path / "broken"
    shutil.copytree(short_runs["ptm-only"], broken)
    m = json.loads((broken / "manifest.json").read_text())
    m["digests"] = None
    (broken / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(IncompatibleRuns, match="did not finish"):
        compare([short_runs["ptm-only"], broken])
    with pytest.raises(IncompatibleRuns):
        compare([short_runs["ptm-only"]])


def _tree(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_config_round_trip_rerun_is_identical(short_runs, tmp_path):
    d = short_runs["ptm-multilink"]
    again = tmp_path / "again"
    assert main(["run", str(d / "config.yaml"), "--out", str(again)]) == 0
    assert _tree(again) == _tree(d)


def test_undefined_kpi_still_exits_zero(tmp_path):
    cfg = tmp_path / "idle.yaml"
    cfg.write_text(yaml.safe_dump({"preset": "ptp-only", "duration_s": 2.0,
                                   "topology": {"ues_per_cell": 0}}))
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "kpi_report.json").read_text())
    assert rep["al_se_bits_per_s_per_hz"] == "undefined"
