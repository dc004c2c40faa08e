import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kahlerflow.cli_io import (CSV_COLUMNS, OutputLayout, build_problem, main,
                               parse_config, read_snapshot, read_timeseries, write_outputs,
                               write_snapshot, write_timeseries)
from kahlerflow.errors import ConfigError
from kahlerflow.flow import RunSettings, run
from kahlerflow.geometry import ModelGeometry
from kahlerflow.monitor import MonitorReport

MINIMAL = "model: {kind: periodic_torus, n: 1, resolution: 16}\n"


def test_minimal_config_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.run.dt_safety == 0.2
    assert cfg.run.tol_w == 1e-7
    assert (cfg.run.p, cfg.run.k) == (4, 1)
    assert cfg.schedule.kind == "constant"
    assert cfg.forcing.recipe == "none"


def test_unknown_keys_are_named():
    with pytest.raises(ConfigError, match="modle"):
        parse_config("modle: {kind: periodic_torus, n: 1, resolution: 16}\n")
    with pytest.raises(ConfigError, match="resoltion"):
        parse_config("model: {kind: periodic_torus, n: 1, resoltion: 16}\n")


def test_missing_model_block():
    with pytest.raises(ConfigError, match="model"):
        parse_config("run: {t_max: 1.0}\n")


@pytest.mark.parametrize("text,field", [
    ("model: {kind: periodic_torus, n: 1, resolution: 0}\n", "resolution"),
    (MINIMAL + "run: {dt_safety: 0.7}\n", "dt_safety"),
    (MINIMAL + "run: {tol_w: 0}\n", "tol_w"),
    ("model: {kind: radial_plane, n: 2, resolution: 64, s_min: 3, s_max: 1}\n", "s_min"),
])
def test_invariant_violations_name_the_field(text, field):
    with pytest.raises(ConfigError, match=field):
        parse_config(text)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["periodic_torus", "radial_plane"]), st.integers(8, 4096),
       st.floats(0.01, 0.5), st.floats(1e-12, 1.0), st.floats(0.0, 100.0))
def test_parse_dump_round_trip(kind, res, safety, tol, t_max):
    n = 1 if kind == "periodic_torus" else 2
    text = (f"model: {{kind: {kind}, n: {n}, resolution: {res}}}\n"
            f"run: {{dt_safety: {safety!r}, tol_w: {tol!r}, t_max: {t_max!r}}}\n")
    cfg = parse_config(text)
    assert parse_config(cfg.dump()) == cfg


def _small_run():
    cfg = parse_config(MINIMAL + "forcing: {recipe: manufactured, amplitude: 0.1}\n"
                       "omega: {from_forcing: true}\n"
                       "run: {t_max: 0.5, record_interval: 0.1, snapshot_interval: 0.25}\n")
    problem, s = build_problem(cfg)
    traj, report = run(problem, s)
    return problem, traj, report


def test_empty_report_header_only(tmp_path):
    rep = MonitorReport()
    write_timeseries(rep, tmp_path / "ts.csv")
    header, rows = read_timeseries(tmp_path / "ts.csv")
    assert tuple(header) == CSV_COLUMNS and rows == []


def test_one_record_one_row(tmp_path):
    problem, traj, report = _small_run()
    one = MonitorReport(records=report.records[:1])
    write_timeseries(one, tmp_path / "ts.csv")
    header, rows = read_timeseries(tmp_path / "ts.csv")
    assert len(rows) == 1
    rec = report.records[0]
    assert float(rows[0][0]) == rec.t
    assert float(rows[0][CSV_COLUMNS.index("sup_w")]) == rec.sup_w
    assert rows[0][-1] == rec.status


def test_csv_rows_match_records(tmp_path):
    problem, traj, report = _small_run()
    manifest = write_outputs(report, traj, OutputLayout(tmp_path), problem.model)
    header, rows = read_timeseries(tmp_path / "timeseries.csv")
    assert len(rows) == len(report.records) == manifest["records"]
    ts = [float(r[0]) for r in rows]
    assert all(b > a for a, b in zip(ts, ts[1:]))
    listed = {f["path"] for f in manifest["files"]}
    on_disk = {str(p.relative_to(tmp_path)) for p in tmp_path.rglob("*")
               if p.is_file() and p.name != "manifest.json"}
    assert listed == on_disk
    for f in manifest["files"]:
        assert (tmp_path / f["path"]).stat().st_size == f["bytes"]


@pytest.mark.parametrize("model", [ModelGeometry.torus(2, 8), ModelGeometry.radial(3, 33)])
def test_snapshot_round_trip_bit_exact(tmp_path, model):
    rng = np.random.default_rng(7)
    v = rng.normal(size=model.shape) * 10.0 ** rng.integers(-300, 300, size=model.shape)
    meta = write_snapshot(model, 0.125, v, tmp_path / "s.json", tmp_path / "s.bin")
    assert meta["value_count"] == int(np.prod(meta["dims"]))
    assert (tmp_path / "s.bin").read_bytes() == v.astype("<f8").tobytes(order="C")
    meta2, back = read_snapshot(tmp_path / "s.json")
    assert back.tobytes() == v.tobytes()
    assert meta2["t"] == 0.125 and meta2["model_kind"] == model.kind


def test_layout_collision():
    with pytest.raises(ConfigError):
        OutputLayout("out", timeseries="x", manifest="x")


def test_cli_list_scenarios(capsys):
    assert main(["list-scenarios"]) == 0
    out = capsys.readouterr().out.split()
    assert out[0] == "cao_torus" and len(out) == 5


def test_cli_run_and_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.yaml"
    good.write_text(MINIMAL + "forcing: {recipe: manufactured, amplitude: 0.05}\n"
                    "run: {t_max: 0.2}\n")
    assert main(["run", "--config", str(good), "--out", str(tmp_path / "o")]) == 0
    assert json.loads(capsys.readouterr().out)["status"] == "horizon_reached"
    assert (tmp_path / "o" / "manifest.json").exists()

    bad = tmp_path / "bad.yaml"
    bad.write_text("modle: {}\n")
    assert main(["run", "--config", str(bad)]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert main(["scenario", "nope"]) == 2
    assert main(["scenario", "cao_torus", "--grid", "4"]) == 2
    assert main(["bogus-command"]) == 2


def test_cli_numeric_failure_exit_code(tmp_path, monkeypatch):
    import kahlerflow.cli_io as cli

    cfg = tmp_path / "c.yaml"
    cfg.write_text(MINIMAL + "run: {t_max: 1.0}\n")
    real_run = cli.run

    def degenerate_run(problem, settings):
        traj, report = real_run(problem, RunSettings(t_max=0.0))
        traj.status, traj.error = "degenerate", "metric degenerate at node (0, 0) (t=0.5)"
        return traj, report

    monkeypatch.setattr(cli, "run", degenerate_run)
    assert main(["run", "--config", str(cfg)]) == 3


def test_cli_scenario_verdict_codes(tmp_path, capsys):
    assert main(["scenario", "cao_torus", "--grid", "32", "--out", str(tmp_path)]) == 0
    assert json.loads(capsys.readouterr().out)["pass"] is True
    assert (tmp_path / "verdict.json").exists()
    # stopping far short of convergence fails the verdict
    assert main(["scenario", "cao_torus", "--grid", "16", "--t-max", "0.01"]) == 1
