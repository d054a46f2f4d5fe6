import pytest

from zbsde.cli import bundled_configs, resolve_config
from zbsde.config import load_config, parse_config
from zbsde.runner import Runner


@pytest.mark.parametrize("name", bundled_configs())
def test_bundled_config_runs(name):
    cfg = load_config(resolve_config(name), {"mc.n_paths": 2000})
    outs = Runner(cfg).run()
    assert [o.status for o in outs] == ["ok"] * len(cfg.experiments), [o.error for o in outs]
    for o in outs:
        assert o.summary and o.table


def _cfg(experiments, **extra):
    body = ('[grid]\nn_steps = 10\n[mc]\nn_paths = 500\n'
            '[payoff]\nkind = "wiener_integral"\nlam = "-(T - t)"\n') + experiments
    return parse_config(body, extra)


def test_convergence_rejects_incompatible_fine_grid():
    out, = Runner(_cfg('[[experiments]]\nname = "convergence"\nsteps = [3, 4]\nfine_steps = 6\n')).run()
    assert out.status == "error" and "fine_steps" in out.error["message"]


def test_convergence_without_closed_form_has_no_error_column():
    body = ('[grid]\nn_steps = 10\n[mc]\nn_paths = 500\n'
            '[payoff]\nkind = "cylinder"\ng = "x0 ** 2"\ntimes = [1.0]\n'
            '[[experiments]]\nname = "convergence"\nsteps = [2, 4]\n')
    out, = Runner(parse_config(body)).run()
    assert out.status == "ok" and out.summary["reference_Y0"] is None
    assert "abs_error" not in out.table[0]


def test_paths_are_shared_between_experiments():
    r = Runner(_cfg(""))
    assert r.paths() is r.paths()
    assert r.paths(n_paths=100) is not r.paths()


def test_errors_are_isolated():
    exps = ('[[experiments]]\nname = "case_b"\nc = -1.0\nm_lower = 1.0\n'
            '[[experiments]]\nname = "concave_feasibility"\n')
    outs = Runner(_cfg(exps)).run()
    assert [o.status for o in outs] == ["error", "ok"]
    assert outs[0].error["type"] == "InvalidConfigError"
