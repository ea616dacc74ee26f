import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from swssb import runner
from swssb.cli import main

EXPERIMENTS = Path(__file__).resolve().parent.parent / "experiments"

SMALL = {
    "evolve": {"lattice": {"extents": [8], "periodic": False}, "gamma": 0.1, "times": [0.5, 1.0],
               "initial": "neel", "Q": [2], "separations": [1, 2, 3]},
    "correlators": {"lattice": {"extents": [8], "periodic": False}, "gamma": 0.1, "times": [1.0, 2.0],
                    "initial": "neel", "Q": [1, 2], "separations": [1, 2, 3, 4, 5]},
    "cmi": {"lattice": {"extents": [8], "periodic": False}, "gamma": 0.1, "times": [1.0],
            "initial": "domain_wall", "R_B": [1, 2, 3], "geometry": "covering"},
    "decode": {"L": 400, "gamma": 0.1, "times": [5, 10], "R_B": [2, 4, 8], "trials": 100},
    "winding": {"lattice": {"extents": [4, 4], "periodic": True}, "gamma": 1.0, "times": [0.0, 0.1],
                "initial": "neel", "ensemble": "disorder", "samples": 2000},
    "hydro": {"L": 64, "D": 1.0, "gamma_n": 1.0, "times": [2.0, 4.0], "R_B": [1, 2, 4], "r": [4, 8]},
    "rotor": {"t_tilde": [0.5, 1.0], "R_B": [3, 7], "t": [1.0]},
    "rg": {"A": [0.0], "y0": 0.001, "deltas": [1e-7, 1e-6, 1e-5], "flow_grid": {"s": [0, 0.1], "y": [0, 0.1], "n": 3}},
    "modelf": {"lattice": {"extents": [4, 4], "periodic": True}, "J": 1.0, "K": 1.0, "beta": 1.0,
               "gamma_phi": 0.5, "gamma_n": 0.5, "dt": 0.005, "t_total": 0.5, "copies": 4, "record_every": 20},
}


def _spec(kind, **extra):
    return {"schema": runner.SCHEMA_ID, "kind": kind, **SMALL[kind], **extra}


def _write(tmp_path, spec, name="spec.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(spec))
    return p


@pytest.mark.parametrize("kind", runner.KINDS)
def test_every_kind_runs_and_headers_roundtrip(kind, tmp_path):
    spec = _spec(kind)
    p = _write(tmp_path, spec)
    assert main([kind, "--spec", str(p), "--out", str(tmp_path / "out")]) == 0
    files = sorted((tmp_path / "out").iterdir())
    assert files
    for f in files:
        if f.suffix == ".csv":
            got, cols, rows = runner.read_csv(f)
            assert got == spec and cols and rows
            head = [l for l in f.read_text().splitlines() if l.startswith("#")]
            assert head[1].startswith("# code_hash ") and head[2].startswith("# seed ")
        elif not f.name.startswith("snapshot"):
            meta = json.loads(f.read_text())
            assert json.loads(meta["header"][3][len("spec "):]) == spec
    if kind in runner.STOCHASTIC:
        assert any("# seed 0" in f.read_text() for f in files if f.suffix == ".csv")


@pytest.mark.parametrize("kind", ["decode", "winding", "modelf"])
def test_byte_identical_reruns(kind, tmp_path):
    p = _write(tmp_path, _spec(kind, seed=42))
    a = runner.run(runner.load_spec(p), tmp_path / "a")
    b = runner.run(runner.load_spec(p), tmp_path / "b", threads=2)
    for fa, fb in zip(a, b):
        assert fa.read_bytes() == fb.read_bytes()
    c = runner.run(runner.load_spec(p), tmp_path / "c", seed=43)
    assert any(fa.read_bytes() != fc.read_bytes() for fa, fc in zip(a, c))


def test_seed_override_recorded(tmp_path):
    p = _write(tmp_path, _spec("decode", seed=1))
    files = runner.run(runner.load_spec(p), tmp_path / "o", seed=99)
    assert "# seed 99" in files[0].read_text()


def test_run_subcommand(tmp_path):
    p = _write(tmp_path, _spec("rotor"))
    assert main(["run", "--spec", str(p), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "rotor.csv").exists()


def test_schema_output_is_json(capsys):
    assert main(["schema", "rg"]) == 0
    schema = json.loads(capsys.readouterr().out)
    assert "A" in schema["required"] and schema["additionalProperties"] is False


def test_usage_errors(tmp_path):
    assert main([]) == 2
    assert main(["evolve"]) == 2
    assert main(["evolve", "--spec", str(tmp_path / "missing.yaml")]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("kind: [unclosed")
    assert main(["run", "--spec", str(bad)]) == 2
    p = _write(tmp_path, _spec("hydro"))
    assert main(["rotor", "--spec", str(p)]) == 2
    assert main(["hydro", "--spec", str(p), "--threads", "0"]) == 2


@pytest.mark.parametrize(
    "mutate",
    [
        lambda s: s.pop("gamma"),
        lambda s: s.update(gamma=-1.0),
        lambda s: s.update(bogus=1),
        lambda s: s.update(schema="other/1"),
        lambda s: s.update(times="soon"),
    ],
)
def test_schema_violations_exit_2(tmp_path, mutate):
    spec = _spec("evolve")
    mutate(spec)
    assert main(["evolve", "--spec", str(_write(tmp_path, spec)), "--out", str(tmp_path)]) == 2


def test_unknown_kind_exit_2(tmp_path):
    p = _write(tmp_path, {"schema": runner.SCHEMA_ID, "kind": "teleport"})
    assert main(["run", "--spec", str(p)]) == 2


def test_physics_errors_exit_1(tmp_path, capsys):
    unstable = _spec("modelf", dt=1.0)
    assert main(["modelf", "--spec", str(_write(tmp_path, unstable)), "--out", str(tmp_path / "o")]) == 1
    assert "stability" in capsys.readouterr().err
    floor = _spec("winding", times=[3.0], acceptance_floor=0.5)
    assert main(["winding", "--spec", str(_write(tmp_path, floor)), "--out", str(tmp_path / "o")]) == 1
    wrong = _spec("evolve", initial=[1, 0])
    assert main(["evolve", "--spec", str(_write(tmp_path, wrong)), "--out", str(tmp_path / "o")]) == 1


def test_json_spec_accepted(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(_spec("rotor")))
    assert main(["rotor", "--spec", str(p), "--out", str(tmp_path / "o")]) == 0


@pytest.mark.parametrize("path", sorted(EXPERIMENTS.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_experiments_validate(path):
    spec = runner.load_spec(path)
    assert spec["kind"] == path.stem


def test_console_script_entry_point(tmp_path):
    p = _write(tmp_path, _spec("rotor"))
    res = subprocess.run(
        [sys.executable, "-m", "swssb.cli", "rotor", "--spec", str(p), "--out", str(tmp_path / "o")],
        capture_output=True, text=True,
    )
    assert res.returncode == 0 and "rotor.csv" in res.stdout
