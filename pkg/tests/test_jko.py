import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cahnlab.functionals import SystemParams, energy_nonlocal
from cahnlab.jko import (
    JkoConfig,
    TransportProblem,
    exact_ot_lp,
    flow_interchange_margins,
    heat_flow_probe,
    holder_check,
    jko_chain,
    jko_step,
    sinkhorn,
    sinkhorn_divergence,
    wasserstein_periodic,
)
from cahnlab.mollifier import MollifierSpec, build_kernel
from cahnlab.torus import Field, PeriodicGrid, normalized_state, random_band_limited


def density(grid, rng, amp=0.5):
    f = random_band_limited(grid, rng, kmax=3, amplitude=amp, mean=1.0)
    v = np.maximum(f.values, 0.05)
    return Field(grid, v / (grid.h * v.sum()))


@pytest.fixture(scope="module")
def setup64():
    g = PeriodicGrid(1, 64)
    k = build_kernel(MollifierSpec(), 0.1, g)
    p = SystemParams(2.0, 1.0, 0.5, 1.0, 0.1)
    x = g.axis_coords
    s0 = normalized_state(1 + 0.3 * np.cos(2 * np.pi * x), 1 + 0.3 * np.sin(2 * np.pi * x), g)
    return g, k, p, s0


@pytest.fixture(scope="module")
def chain(setup64):
    g, k, p, s0 = setup64
    return jko_chain(s0, p, k, JkoConfig(tau=1e-3), 4)


def test_transport_problem_checks():
    with pytest.raises(ValueError):
        TransportProblem(PeriodicGrid(2, 16), 0.01)
    with pytest.raises(ValueError):
        TransportProblem(PeriodicGrid(1, 16), 0.0)
    tp = TransportProblem(PeriodicGrid(1, 16), 0.01)
    assert tp.cost[0, 15] == pytest.approx((1 / 16) ** 2)  # wrapped neighbour
    assert tp.cost.max() == pytest.approx(0.25)


@pytest.mark.parametrize("seed", range(4))
def test_entropic_ot_matches_lp(seed):
    g = PeriodicGrid(1, 16)
    rng = np.random.default_rng(seed)
    mu, nu = density(g, rng), density(g, rng)
    tp = TransportProblem(g, g.h**2 / 10)
    res = wasserstein_periodic(mu, nu, tp, raise_on_fail=True)
    lp = exact_ot_lp(mu.values * g.h, nu.values * g.h, tp.cost)
    assert res.converged
    assert abs(res.cost - lp) <= 1e-4


def test_log_and_scaling_domains_agree(monkeypatch):
    import cahnlab.jko as jko

    g = PeriodicGrid(1, 32)
    rng = np.random.default_rng(3)
    a, b = density(g, rng).values * g.h, density(g, rng).values * g.h
    cost = TransportProblem(g, 1e-3).cost
    scaled = sinkhorn(a, b, cost, 1e-3)
    monkeypatch.setattr(jko, "EXP_DOMAIN_LIMIT", 0.0)
    logd = sinkhorn(a, b, cost, 1e-3)
    assert np.allclose(scaled.plan, logd.plan, atol=1e-12)
    assert scaled.value == pytest.approx(logd.value, abs=1e-12)


def test_plan_marginals_and_value_split():
    g = PeriodicGrid(1, 32)
    rng = np.random.default_rng(1)
    a, b = density(g, rng).values * g.h, density(g, rng).values * g.h
    r = sinkhorn(a, b, TransportProblem(g, 1e-3).cost, 1e-3)
    assert np.allclose(r.plan.sum(1), a, atol=1e-11)
    assert np.allclose(r.plan.sum(0), b, atol=1e-11)
    assert r.value == pytest.approx(r.cost + r.entropic, abs=1e-15)


def test_symmetric_sinkhorn_matches_general():
    g = PeriodicGrid(1, 32)
    a = density(g, np.random.default_rng(5)).values * g.h
    c = TransportProblem(g, 2e-3).cost
    assert sinkhorn(a, a, c, 2e-3, symmetric=True).value == pytest.approx(sinkhorn(a, a, c, 2e-3).value, abs=1e-11)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_divergence_nonnegative_and_zero_on_diagonal(seed):
    g = PeriodicGrid(1, 16)
    rng = np.random.default_rng(seed)
    a, b = density(g, rng).values * g.h, density(g, rng).values * g.h
    tp = TransportProblem(g, 5 * g.h**2)
    assert sinkhorn_divergence(a, a, tp) == pytest.approx(0.0, abs=1e-12)
    assert sinkhorn_divergence(a, b, tp) >= -1e-12


def test_single_step_decreases_energy(setup64):
    g, k, p, s0 = setup64
    s1, info = jko_step(s0, p, k, JkoConfig(tau=1e-3))
    assert info.objective_end <= info.objective_start
    assert info.energy < energy_nonlocal(s0, p, k)
    assert s1.rho.min() > 0 and s1.eta.min() > 0
    assert g.h * s1.rho.values.sum() == pytest.approx(1.0, abs=1e-13)
    assert s1.time == pytest.approx(1e-3)


def test_mirror_descent_agrees_with_lbfgs(setup64):
    g, k, p, s0 = setup64
    a, ia = jko_step(s0, p, k, JkoConfig(tau=1e-3))
    b, ib = jko_step(s0, p, k, JkoConfig(tau=1e-3, inner="mirror_descent", max_inner=2000))
    assert ib.objective_end == pytest.approx(ia.objective_end, rel=1e-4, abs=1e-5)
    assert ib.objective_end <= ib.objective_start


def test_energy_estimate_holds(chain):
    assert chain.energy_estimate_defect() <= len(chain.steps) * chain.inner_tol
    assert all(b <= a for a, b in zip(chain.energies, chain.energies[1:]))


def test_holder_ratio_bounded(chain, setup64):
    g, k, p, s0 = setup64
    assert holder_check(chain, p, TransportProblem(g, 5 * g.h**2)) <= 1.0


def test_flow_interchange_margins(chain, setup64):
    g, k, p, s0 = setup64
    m = flow_interchange_margins(chain, p, k)
    assert np.all(m >= -1e-6)


def test_heat_flow_probe_identity(setup64):
    g, k, p, s0 = setup64
    rep = heat_flow_probe(s0, p, k)
    assert rep.passed
    assert rep.values["relative_error"] < 1e-6
    assert rep.values["mass_drift"] < 1e-14


def test_config_validation():
    with pytest.raises(ValueError):
        JkoConfig(tau=0)
    with pytest.raises(ValueError):
        JkoConfig(tau=1e-3, inner="newton")


def test_wrapped_distance_between_point_masses():
    g = PeriodicGrid(1, 32)
    tp = TransportProblem(g, g.h**2 / 10)
    a, b = np.zeros(32), np.zeros(32)
    a[3], b[28] = 1.0, 1.0  # cells near 0.1 and 0.9
    res = wasserstein_periodic(Field(g, a / g.h), Field(g, b / g.h), tp)
    d = 1.0 - (g.axis_coords[28] - g.axis_coords[3])
    assert res.cost == pytest.approx(d * d, abs=5 * tp.sigma)


def test_distance_symmetric_and_translation_covariant():
    g = PeriodicGrid(1, 32)
    rng = np.random.default_rng(9)
    mu, nu = density(g, rng), density(g, rng)
    tp = TransportProblem(g, 5 * g.h**2)
    ab = wasserstein_periodic(mu, nu, tp).cost
    ba = wasserstein_periodic(nu, mu, tp).cost
    shifted = wasserstein_periodic(Field(g, np.roll(mu.values, 5)), Field(g, np.roll(nu.values, 5)), tp).cost
    assert ab == pytest.approx(ba, abs=1e-10)
    assert shifted == pytest.approx(ab, abs=1e-11)


def test_self_distance_is_entropic_bias_only():
    g = PeriodicGrid(1, 32)
    mu = density(g, np.random.default_rng(2))
    for sigma in (1e-3, 1e-4):
        tp = TransportProblem(g, sigma)
        assert wasserstein_periodic(mu, mu, tp).cost <= sigma * np.log(g.n)


def test_product_distance_decomposes(setup64):
    from cahnlab.jko import product_distance
    from cahnlab.torus import State

    g = PeriodicGrid(1, 32)
    rng = np.random.default_rng(4)
    u = State(density(g, rng), density(g, rng))
    v = State(density(g, rng), density(g, rng))
    tp = TransportProblem(g, 5 * g.h**2)
    total = product_distance(u, v, tp)
    parts = wasserstein_periodic(u.rho, v.rho, tp).cost + wasserstein_periodic(u.eta, v.eta, tp).cost
    assert total == pytest.approx(parts, abs=1e-12)
    assert product_distance(u, State(u.rho, v.eta), tp) == pytest.approx(
        wasserstein_periodic(u.rho, u.rho, tp).cost + wasserstein_periodic(u.eta, v.eta, tp).cost, abs=1e-12
    )


def test_uniform_state_barely_moves_with_large_step(setup64):
    g, k, p, _ = setup64
    s = normalized_state(np.ones(g.n), np.ones(g.n), g)
    s1, info = jko_step(s, p, k, JkoConfig(tau=1.0))
    assert np.max(np.abs(s1.rho.values - 1)) < 1e-6
    assert info.objective_end <= info.objective_start


def test_zero_step_chain(setup64):
    g, k, p, s0 = setup64
    traj = jko_chain(s0, p, k, JkoConfig(tau=1e-3), 0)
    assert len(traj.states) == 1 and traj.states[0] is s0


def test_single_step_tracks_finite_volume_flow(setup64):
    from cahnlab.dynamics import FvConfig, run

    g, k, p, s0 = setup64
    taus = [4e-4, 2e-4, 1e-4, 5e-5]
    gaps = []
    for tau in taus:
        sj, _ = jko_step(s0, p, k, JkoConfig(tau=tau))
        fv = run(s0, p, k, FvConfig(dt=1e-7, t_end=tau, stepper="heun", upwind="central", output_every=tau))
        sf = fv.states[-1]
        d = (sj.rho.values - sf.rho.values) ** 2 + (sj.eta.values - sf.eta.values) ** 2
        gaps.append(np.sqrt(g.h * d.sum()))
    slope = np.polyfit(np.log(taus), np.log(gaps), 1)[0]
    assert slope >= 0.9
