"""Config validation, the scenario pipeline and the command line."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from stochqm.cli import build_parser, main
from stochqm.config import bundled_scenarios, json_schema, load_config, parse_config
from stochqm.errors import ConfigInvalid
from stochqm.fields import Grid, field_from_ndjson
from stochqm.pipeline import read_checkpoint, run_scenario, write_checkpoint
from stochqm.schrodinger import PhysicalParams, Potential, vortex_state

SMALL = {
    "name": "small",
    "grid": {"dim": 1, "extents": [[-8.0, 8.0]], "n": [128], "dt": 0.01},
    "physics": {"m": 1.0, "hbar": 1.0},
    "initial": {"kind": "gaussian", "sigma0": 1.0},
    "ensemble": {"n": 5000, "seed": 1},
    "schedule": {"t_end": 0.1, "snapshots": [0.0, 0.1]},
    "outputs": {"formats": ["csv", "ndjson"], "trajectories": 3, "trajectory_every": 5},
}


def _cfg(**over):
    d = json.loads(json.dumps(SMALL))
    for k, v in over.items():
        d[k] = v
    return d


def _tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_both_D_and_hbar_rejected():
    with pytest.raises(ConfigInvalid) as info:
        parse_config(_cfg(physics={"m": 1.0, "D": 0.5, "hbar": 1.0}))
    assert any("physics" in e for e in info.value.errors)


def test_field_level_errors():
    bad = _cfg(grid={"dim": 1, "extents": [[1.0, 0.0]], "n": [4], "dt": -1})
    with pytest.raises(ConfigInvalid) as info:
        parse_config(bad)
    assert any(e.startswith("grid") for e in info.value.errors)
    with pytest.raises(ConfigInvalid):
        parse_config(_cfg(schedule={"t_end": 0.1, "snapshots": [0.005]}))
    with pytest.raises(ConfigInvalid):
        parse_config(_cfg(schedule={"t_end": 0.1, "snapshots": [0.2]}))
    with pytest.raises(ConfigInvalid):
        parse_config(_cfg(colour="blue"))
    with pytest.raises(ConfigInvalid):
        parse_config("{not json")


def test_config_round_trip():
    for name in bundled_scenarios():
        cfg = load_config(name)
        again = parse_config(cfg.to_json())
        assert again == cfg
        assert again.to_json() == cfg.to_json()


def test_bundled_scenarios_present():
    names = bundled_scenarios()
    for want in ("free_gaussian_1d", "harmonic_ground_1d", "vortex_2d", "superposition_2d"):
        assert want in names


def test_schema_file_matches_models():
    shipped = Path(__file__).resolve().parents[1] / "schema" / "scenario.schema.json"
    assert json.loads(shipped.read_text()) == json.loads(json.dumps(json_schema()))


def test_pipeline_outputs_and_determinism(tmp_path):
    cfg = parse_config(_cfg())
    a = run_scenario(cfg, out_dir=tmp_path / "a")
    run_scenario(cfg, out_dir=tmp_path / "b", threads=3)
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")
    names = set(a.outputs)
    for want in (
        "psi_00000010.ndjson",
        "psi_00000010.csv",
        "compare_00000010.json",
        "empirical_00000010.csv",
        "reference_00000010.csv",
        "madelung_00000010.csv",
        "findings_00000010.ndjson",
        "trajectories.ndjson",
        "plot_snapshots.py",
        "report.json",
    ):
        assert want in names
    last = a.snapshots[-1]
    assert last["kl"] < 0.05
    assert "continuity_residual_max" in last and "hj_residual_max" in last
    traj = [json.loads(line) for line in (tmp_path / "a" / "trajectories.ndjson").read_text().splitlines()]
    assert {r["particle_id"] for r in traj} == {0, 1, 2}
    assert sorted({r["t"] for r in traj}) == pytest.approx([0.0, 0.05, 0.1])


def test_seed_override_changes_output(tmp_path):
    cfg = parse_config(_cfg())
    run_scenario(cfg, out_dir=tmp_path / "a")
    run_scenario(cfg, out_dir=tmp_path / "b", seed=2)
    assert (tmp_path / "a" / "empirical_00000010.csv").read_bytes() != (tmp_path / "b" / "empirical_00000010.csv").read_bytes()


def test_solve_mode_has_no_ensemble(tmp_path):
    rep = run_scenario(parse_config(_cfg()), mode="solve", out_dir=tmp_path)
    assert not any(n.startswith("compare_") for n in rep.outputs)
    psi, _ = field_from_ndjson((tmp_path / "psi_00000010.ndjson").read_text())
    assert abs(psi.norm() - 1.0) < 1e-12


def test_border_warning(tmp_path):
    narrow = _cfg(grid={"dim": 1, "extents": [[-3.0, 3.0]], "n": [64], "dt": 0.01})
    rep = run_scenario(parse_config(narrow), mode="solve", out_dir=tmp_path)
    assert rep.warnings and "border" in rep.warnings[0]


def test_checkpoints_round_trip(tmp_path):
    rep = run_scenario(parse_config(_cfg()), mode="solve", out_dir=tmp_path, checkpoint_every=5)
    assert "checkpoint_00000005.ndjson" in rep.outputs
    psi, p, U, t = read_checkpoint(tmp_path / "checkpoint_00000005.ndjson")
    assert p == PhysicalParams.from_hbar(1.0, 1.0)
    assert U == Potential.free()
    assert t == pytest.approx(0.05)


def test_cli_comdiff(capsys):
    assert main(["comdiff", "--n", "4", "--D", "0.5", "--ensembles", "200"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["D_com_fit"] == pytest.approx(0.125, rel=0.05)


def test_cli_diagnose_vortex(tmp_path, capsys):
    g = Grid.square(-5, 5, 65)
    path = tmp_path / "vortex.ndjson"
    write_checkpoint(path, vortex_state(g), PhysicalParams.from_hbar(1.0, 1.0), Potential.free(), 0.0)
    assert main(["diagnose", str(path)]) == 0
    findings = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    winding = [f for f in findings if f["finding"] == "winding"]
    assert winding[0]["winding"] == 1


def test_cli_compare_same_file(tmp_path, capsys):
    run_scenario(parse_config(_cfg()), out_dir=tmp_path)
    a = str(tmp_path / "reference_00000010.csv")
    assert main(["compare", a, a]) == 0
    assert json.loads(capsys.readouterr().out)["kl"] == 0.0
    assert main(["compare", a, str(tmp_path / "empirical_00000010.csv")]) == 0
    assert json.loads(capsys.readouterr().out)["kl"] > 0.0


def test_cli_ensemble_and_jobs(tmp_path, capsys):
    cfg_a = tmp_path / "a.json"
    cfg_b = tmp_path / "b.json"
    cfg_a.write_text(json.dumps(_cfg(name="alpha")))
    cfg_b.write_text(json.dumps(_cfg(name="beta")))
    out = tmp_path / "out"
    code = main(["ensemble", "--config", str(cfg_a), "--config", str(cfg_b), "--jobs", "2", "--out", str(out), "--quiet"])
    assert code == 0
    assert (out / "alpha" / "report.json").exists() and (out / "beta" / "report.json").exists()
    serial = tmp_path / "serial"
    main(["ensemble", "--config", str(cfg_a), "--out", str(serial), "--quiet"])
    assert _tree(serial) == _tree(out / "alpha")


def test_cli_classical(tmp_path):
    assert main(["classical", "--x0", "1", "--t-end", "10", "--dt", "0.01", "--out", str(tmp_path), "--quiet"]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert abs(summary["x_final"][0] - np.cos(10.0)) < 1e-6
    rows = (tmp_path / "characteristics.csv").read_text().splitlines()
    assert rows[0] == "t,id,x,p"


def test_cli_error_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(_cfg(physics={"m": 1.0, "D": 0.5, "hbar": 1.0})))
    assert main(["solve", "--config", str(bad), "--quiet"]) == 2
    assert main(["solve", "--config", str(tmp_path / "missing.json"), "--quiet"]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        build_parser().parse_args(["frobnicate"])
    assert info.value.code != 0
    with pytest.raises(SystemExit) as info:
        build_parser().parse_args(["solve", "--config", "x", "--bogus"])
    assert info.value.code != 0


def test_cli_schema(capsys):
    assert main(["schema"]) == 0
    schema = json.loads(capsys.readouterr().out)
    assert schema["title"] == "ScenarioConfig"
