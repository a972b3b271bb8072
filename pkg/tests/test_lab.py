import math
from pathlib import Path

import numpy as np
import pytest

from cahnlab.functionals import SystemParams
from cahnlab.lab.cli import cli_main
from cahnlab.lab.config import ConfigError, parse_config
from cahnlab.lab.io import csv_text, fmt
from cahnlab.lab.probes import diff_quotient_probe, poincare_constant, poincare_corpus, poincare_probe
from cahnlab.lab.sweep import (
    SweepConfig,
    epsilon_sweep,
    initial_state,
    trajectory_distance,
)
from cahnlab.dynamics import FvConfig, Trajectory, run
from cahnlab.mollifier import MollifierSpec, build_kernel
from cahnlab.torus import PeriodicGrid, State, integrate, read_snapshot

SMALL = """
[grid]
n = 64
[params]
kappa = 2
alpha = 1
beta = 0.5
gamma = 1   # inline comment
eps = 0.1
[solver]
t_end = 0.0005
output_every = 1e-4
steps = 2
[sweep]
eps_list = 0.2, 0.1
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(SMALL)
    return p


def test_fmt_roundtrips_floats():
    for v in (0.1, 1 / 3, 1e-300, -2.5e17):
        assert float(fmt(v)) == v
    assert fmt(True) == "1" and fmt(3) == "3"
    assert csv_text(["a", "b"], [[1, 0.5]]) == "a,b\n1,0.5\n"


def test_config_parsing_and_defaults():
    cfg = parse_config(SMALL)
    assert cfg.grid == PeriodicGrid(1, 64)
    assert cfg.params(need_eps=True).eps == 0.1
    assert cfg.get("sweep", "eps_list") == (0.2, 0.1)
    assert "grid.dim" in cfg.defaulted and "grid.n" not in cfg.defaulted
    assert cfg.fv().upwind == "central"
    assert cfg.sweep().grid_n == 64


@pytest.mark.parametrize(
    "text,msg",
    [
        ("[params]\nkappa=1\nalpha=0\nbeta=0\n", "gamma"),
        (SMALL + "\n[grid]\n", "unreadable"),
        (SMALL.replace("n = 64", "n = 64\nsize = 3"), "grid.size"),
        (SMALL + "[extras]\nx = 1\n", "extras"),
        (SMALL.replace("n = 64", "n = sixty"), "grid.n"),
    ],
)
def test_config_errors(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config(text)


def test_missing_eps_for_kernel_commands():
    cfg = parse_config(SMALL.replace("eps = 0.1", ""))
    with pytest.raises(ConfigError):
        cfg.params(need_eps=True)


def test_initial_states():
    g = PeriodicGrid(2, 16)
    for recipe in ("default", "random", "constant"):
        s = initial_state(recipe, g, 3)
        assert integrate(s.rho) == pytest.approx(1.0, abs=1e-14)
        assert s.rho.min() > 0
    with pytest.raises(ValueError):
        initial_state("spiral", g)


def test_trajectory_distance_zero_and_mismatch():
    g = PeriodicGrid(1, 32)
    s = initial_state("default", g)
    a = Trajectory(states=[s, State(s.rho, s.eta, 1.0)])
    assert trajectory_distance(a, a) == (0.0, 0.0)
    b = Trajectory(states=[s])
    with pytest.raises(ValueError):
        trajectory_distance(a, b)


def test_sweep_config_validation():
    with pytest.raises(ValueError):
        SweepConfig(eps_list=(0.1, 0.2)).validate()
    with pytest.raises(ValueError):
        SweepConfig(params=SystemParams(1.0, 1.0, 0.0, 1.0)).validate()  # positivity fails
    with pytest.raises(ValueError):
        SweepConfig(grid_n=32, eps_list=(0.05,)).validate()


def test_small_sweep_decreases(tmp_path):
    sc = SweepConfig(grid_n=64, eps_list=(0.2, 0.1, 0.05), t_end=1e-3, output_every=2e-4, dt=1e-6)
    res = epsilon_sweep(sc, out_dir=tmp_path)
    rep = res.report
    assert rep.monotone
    assert rep.fitted_order > 1
    lines = (tmp_path / "error_report.csv").read_text().splitlines()
    assert lines[0] == "eps,l2l2,l2h1,budget_rho,budget_eta,fitted_order,resolved_flag"
    assert lines[1].endswith(",,") and not lines[-1].endswith(",,")
    assert (tmp_path / "eps_0.05" / "diagnostics.csv").exists()
    assert (tmp_path / "local" / "snapshots").is_dir()


def test_sweep_workers_give_identical_report():
    sc = SweepConfig(grid_n=32, eps_list=(0.2, 0.1), t_end=2e-4, output_every=1e-4, dt=1e-6, refine_factor=1)
    a = epsilon_sweep(sc, workers=1).report
    b = epsilon_sweep(sc, workers=2).report
    assert a.rows() == b.rows()


def test_poincare_probe():
    k = build_kernel(MollifierSpec(), 0.1, PeriodicGrid(1, 128))
    corpus = poincare_corpus(k.grid, 16, 0)
    assert all(abs(np.mean(f)) > 0.1 for f in corpus)
    # Jensen: |f|_2 >= |f|_1 on the unit torus, so with no pair term C >= 1
    assert poincare_constant(k, 1e-12, corpus) >= 1.0
    rep = poincare_probe(k, 0.1, 16, 0)
    assert rep.passed and rep.values["C"] >= 0
    with pytest.raises(ValueError):
        poincare_probe(k, 0.0)


def test_diff_quotient_probe_first_order():
    g = PeriodicGrid(1, 128)
    k = build_kernel(MollifierSpec(), 0.1, g)
    s0 = initial_state("default", g)
    p = SystemParams(2.0, 1.0, 0.5, 1.0)
    traj = run(s0, p, k, FvConfig(dt=1e-6, t_end=2e-4, output_every=5e-5, upwind="central", stepper="stabilized"))
    rep = diff_quotient_probe(traj, k)
    assert rep.passed
    assert rep.values["strong_slope"] == pytest.approx(1.0, abs=0.1)


# command line


def run_cli(*argv):
    return cli_main([str(a) for a in argv])


def test_cli_exit_codes(tmp_path, cfg_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text(SMALL.replace("kappa = 2", ""))
    assert run_cli("simulate", "--config", bad, "--out", tmp_path / "x") == 2
    unk = tmp_path / "unk.cfg"
    unk.write_text(SMALL.replace("n = 64", "n = 64\nsize = 3"))
    assert run_cli("simulate", "--config", unk, "--out", tmp_path / "x") == 2
    assert run_cli("simulate", "--config", tmp_path / "missing.cfg", "--out", tmp_path / "x") == 2
    assert run_cli("no-such-command") == 2
    tiny = tmp_path / "tiny.cfg"
    tiny.write_text(SMALL.replace("eps = 0.1", "eps = 0.01"))
    assert run_cli("operator-audit", "--config", tiny) == 2


def test_cli_numerical_failure_exit_code(tmp_path, cfg_path):
    stiff = tmp_path / "stiff.cfg"
    stiff.write_text(
        SMALL.replace("t_end = 0.0005", "t_end = 0.5\ndt = 0.01\nadaptive = false\nstepper = explicit_euler")
    )
    assert run_cli("simulate", "--config", stiff, "--out", tmp_path / "s") == 3


def test_simulate_outputs(tmp_path, cfg_path):
    out = tmp_path / "sim"
    assert run_cli("simulate", "--config", cfg_path, "--out", out) == 0
    lines = (out / "diagnostics.csv").read_text().splitlines()
    assert lines[0].split(",")[:3] == ["time", "mass_rho", "mass_eta"]
    assert len(lines) == 1 + 6
    manifest = (out / "manifest.txt").read_text()
    assert "defaulted_keys:" in manifest and "grid.dim" in manifest
    f, name, t = read_snapshot(out / "snapshots" / "rho_00000.txt")
    assert name == "rho" and t == 0.0 and f.grid.n == 64
    assert run_cli("simulate", "--system", "local", "--config", cfg_path, "--out", tmp_path / "loc") == 0
    assert ",nan," in (tmp_path / "loc" / "diagnostics.csv").read_text()


def test_energy_audit_reads_snapshots(tmp_path, cfg_path):
    out = tmp_path / "sim"
    run_cli("simulate", "--config", cfg_path, "--out", out)
    snaps = sorted((out / "snapshots").glob("rho_*.txt"))
    last = snaps[-1].name.split("_")[1]
    audit = tmp_path / "audit"
    code = run_cli(
        "energy-audit", "--config", cfg_path, "--rho", snaps[-1], "--eta", out / "snapshots" / f"eta_{last}", "--out", audit
    )
    assert code == 0
    row = (audit / "energy_audit.csv").read_text().splitlines()[1]
    final = (out / "diagnostics.csv").read_text().splitlines()[-1]
    assert row.split(",")[:6] == final.split(",")[:6]


def test_operator_audit_all_pass(tmp_path, cfg_path):
    assert run_cli("operator-audit", "--config", cfg_path, "--out", tmp_path / "a") == 0
    rows = (tmp_path / "a" / "operator_audit.csv").read_text().splitlines()[1:]
    assert rows and all(r.endswith(",1") for r in rows)


def test_kernel_check_without_config(capsys):
    assert run_cli("kernel-check", "--eps", "0.1", "0.05", "--dim", "2", "--n", "64") == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("eps,m0,m1_max_abs,m2_diag_0,m2_diag_1")
    assert len(out) == 3


def _csv_files(root: Path):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*.csv"))}


@pytest.mark.parametrize(
    "command,extra",
    [
        ("simulate", ["--out"]),
        ("jko-run", ["--out"]),
        ("kernel-check", ["--out"]),
        ("operator-audit", ["--out"]),
        ("probes", ["--out"]),
    ],
)
def test_cli_determinism(tmp_path, cfg_path, command, extra):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli(command, "--config", cfg_path, *extra, a) == 0
    assert run_cli(command, "--config", cfg_path, *extra, b) == 0
    fa, fb = _csv_files(a), _csv_files(b)
    assert fa and fa == fb


def test_epsilon_sweep_cli_determinism(tmp_path, cfg_path):
    runs = []
    for name in ("a", "b"):
        assert run_cli("epsilon-sweep", "--config", cfg_path, "--out", tmp_path / name) == 0
        (stamp,) = list((tmp_path / name).iterdir())
        assert (stamp / "manifest.txt").exists()
        runs.append(_csv_files(stamp))
    assert runs[0] == runs[1]
    assert Path("error_report.csv") in runs[0]


def test_exact_symbol_sweep_has_zero_error():
    sc = SweepConfig(grid_n=32, eps_list=(0.1,), t_end=2e-4, output_every=1e-4, dt=1e-6, exact_symbol=True, refine_factor=1)
    rep = epsilon_sweep(sc).report
    assert rep.l2h1[0] <= 1e-12 and rep.l2l2[0] <= 1e-12


def test_error_norms_ordered():
    sc = SweepConfig(grid_n=32, eps_list=(0.2, 0.1), t_end=2e-4, output_every=1e-4, dt=1e-6, refine_factor=1)
    rep = epsilon_sweep(sc).report
    assert all(0 <= a <= b for a, b in zip(rep.l2l2, rep.l2h1))


def test_constant_trajectory_has_zero_budget():
    from cahnlab.lab.sweep import compactness_budget

    g = PeriodicGrid(1, 64)
    s = initial_state("constant", g)
    traj = Trajectory(states=[s, State(s.rho, s.eta, 0.1)])
    rep = compactness_budget(traj, build_kernel(MollifierSpec(), 0.1, g))
    assert rep.budget_rho == 0.0 and rep.budget_eta == 0.0


def test_poincare_constant_for_constants_and_large_delta():
    from cahnlab.torus import Field

    g = PeriodicGrid(1, 128)
    k = build_kernel(MollifierSpec(), 0.1, g)
    assert poincare_constant(k, 0.5, [np.full(g.shape, 3.0)]) == pytest.approx(1.0, rel=1e-12)
    corpus = poincare_corpus(g, 32, 1)
    small = poincare_constant(k, 0.01, corpus)
    large = poincare_constant(k, 10.0, corpus)
    assert large < small and large <= 1e-12


def test_diff_quotient_of_constant_and_mode():
    g = PeriodicGrid(1, 128)
    k = build_kernel(MollifierSpec(), 0.1, g)
    const = Trajectory(states=[initial_state("constant", g)])
    rep = diff_quotient_probe(const, k)
    assert max(rep.values["strong_error"]) == 0.0 and rep.passed
    from cahnlab.torus import Field

    mode = Field.from_function(g, lambda x: np.cos(2 * np.pi * x))
    single = Trajectory(states=[State(mode, mode, 0.0)])
    rep = diff_quotient_probe(single, k)
    assert rep.values["strong_slope"] >= 0.9
    assert rep.values["pairing_relative_error"][-1] <= 0.02


def test_gradient_control_holds_along_trajectory():
    from cahnlab.lab.probes import gradient_control_defect

    g = PeriodicGrid(1, 128)
    k = build_kernel(MollifierSpec(), 0.1, g)
    s0 = initial_state("default", g)
    traj = run(s0, SystemParams(2.0, 1.0, 0.5, 1.0), k, FvConfig(dt=1e-6, t_end=2e-4, output_every=5e-5, upwind="central"))
    delta = 0.01
    corpus = poincare_corpus(g, 64, 0) + [u for s in traj.states for u in (s.rho.values, s.eta.values)]
    c_grad = poincare_constant(k, delta, corpus, gradient=True)
    assert gradient_control_defect(traj, k, delta, c_grad) <= 1e-12
