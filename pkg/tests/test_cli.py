import json
import os

import pytest

from zbsde.cli import EXIT_CONFIG, EXIT_OK, EXIT_OUTPUT, bundled_configs, main

SMALL = """
output_dir = "unused"
[grid]
T = 1.0
n_steps = 20
[mc]
n_paths = 4000
seed = 3
[payoff]
kind = "wiener_integral"
lam = "-(T - t)"
[constraint]
kind = "linear_lower"
nu = 0.0
[compensator]
mode = "case1"
[solver]
stderr_batches = 4
[[experiments]]
name = "pipeline"
[[experiments]]
name = "deterministic_k_infeasibility"
nu = 0.5
[[experiments]]
name = "lemma1"
sigma = 0.5
[[experiments]]
name = "lemma1"
sigma = 0.25
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


def _run(cfg, out, *extra):
    return main([str(cfg), "--output-dir", str(out), "-q", *extra])


def test_run_writes_artifacts(cfg_file, tmp_path):
    out = tmp_path / "out"
    assert _run(cfg_file, out) == EXIT_OK
    s = json.loads((out / "summary.json").read_text())
    assert s["status"] == "ok" and s["seed"] == 3 and s["n_paths"] == 4000
    assert s["config"]["grid"]["n_steps"] == 20
    assert s["wall_clock_seconds"] >= 0 and "numpy" in s["versions"]
    names = [e["name"] for e in s["experiments"]]
    assert names == ["pipeline", "deterministic_k_infeasibility", "lemma1", "lemma1"]
    assert (out / "pipeline.csv").exists() and (out / "pipeline.svg").exists()
    # repeated experiment names get their index appended
    assert (out / "lemma1_2.csv").exists() and (out / "lemma1_3.csv").exists()
    flag = s["experiments"][1]["result"]
    assert flag["flagged"] is True


def test_rerun_is_byte_identical(cfg_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(cfg_file, a) == EXIT_OK and _run(cfg_file, b) == EXIT_OK
    for name in sorted(os.listdir(a)):
        if name.endswith((".csv", ".svg")):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_no_figures_and_overrides(cfg_file, tmp_path):
    out = tmp_path / "o"
    assert _run(cfg_file, out, "--no-figures", "--paths", "3000", "--seed", "5",
                "--workers", "2") == EXIT_OK
    assert not list(out.glob("*.svg"))
    s = json.loads((out / "summary.json").read_text())
    assert (s["seed"], s["n_paths"], s["workers"]) == (5, 3000, 2)


def test_python_backend_flag(cfg_file, tmp_path):
    from zbsde import _backend
    prev = _backend.backend_name()
    try:
        assert _run(cfg_file, tmp_path / "p", "--backend", "python", "--no-figures") == EXIT_OK
        s = json.loads((tmp_path / "p" / "summary.json").read_text())
        assert s["versions"]["kernel_backend"] == "python"
    finally:
        _backend.use_backend(prev)


def test_bad_config_exit_code(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("foo = 1\n[payoff]\nkind = 'constant'\nvalue = 1.0\n")
    out = tmp_path / "out"
    assert _run(bad, out) == EXIT_CONFIG
    s = json.loads((out / "summary.json").read_text())
    assert s["status"] == "error" and s["error"]["type"] == "ConfigParseError"


def test_missing_config(tmp_path):
    assert _run(tmp_path / "nope.cfg", tmp_path / "o") == EXIT_CONFIG


def test_unwritable_output(cfg_file, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert _run(cfg_file, blocker / "sub") == EXIT_OUTPUT


def test_experiment_error_exit_code(tmp_path):
    p = tmp_path / "err.cfg"
    # a path-dependent sigma without its declared bound fails inside the experiment
    p.write_text(SMALL.replace('sigma = 0.25', 'sigma = "clip(b, -1, 1)"'))
    out = tmp_path / "out"
    assert _run(p, out, "--no-figures") == 1
    s = json.loads((out / "summary.json").read_text())
    assert s["status"] == "error"
    assert s["experiments"][3]["status"] == "error" and s["experiments"][3]["error"]
    assert s["experiments"][0]["status"] == "ok"


def test_list_configs(capsys):
    assert main(["--list-configs"]) == EXIT_OK
    assert capsys.readouterr().out.split() == bundled_configs()


def test_bundled_name_resolves(tmp_path):
    assert main(["impossibility", "--output-dir", str(tmp_path), "--paths", "2000", "-q",
                 "--no-figures"]) == EXIT_OK
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["experiments"][0]["result"]["flagged"] is True
