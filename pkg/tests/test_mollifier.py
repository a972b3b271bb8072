import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from cahnlab.errors import EpsTooLarge, EpsTooSmall
from cahnlab.mollifier import MollifierSpec, MomentTarget, Profile, build_kernel, kernel_report, profile_values
from cahnlab.torus import PeriodicGrid


def test_profiles_vanish_outside_unit_ball():
    r = np.array([0.0, 0.5, 1.0, 1.5])
    for prof in Profile:
        v = profile_values(prof, r)
        assert v[0] == 1.0 and v[2] == 0.0 and v[3] == 0.0 and v[1] > 0


@pytest.mark.parametrize(
    "dim,target,exact",
    [
        # closed forms for (1 - r^2)^3: 1D axis moment 1/9, 2D axis moment 1/10
        (1, "laplacian_consistent", np.sqrt(18.0)),
        (2, "laplacian_consistent", np.sqrt(20.0)),
        (2, "paper", np.sqrt(10.0)),
    ],
)
def test_continuous_radius_factor_closed_form(dim, target, exact):
    spec = MollifierSpec(Profile.POLYNOMIAL_BUMP, target)
    a0 = np.sqrt(spec.target(dim) / spec.unit_axis_moment(dim))
    assert a0 == pytest.approx(exact, rel=1e-12)


def test_density_has_unit_mass_and_target_moment_1d():
    spec = MollifierSpec()
    a = np.sqrt(18.0)
    f = lambda z: float(spec.density(np.array([[z]]), a, 1)[0])
    m0 = integrate.quad(f, -a, a, epsabs=1e-14)[0]
    m2 = integrate.quad(lambda z: z * z * f(z), -a, a, epsabs=1e-14)[0]
    assert m0 == pytest.approx(1.0, abs=1e-12)
    assert m2 == pytest.approx(2.0, abs=1e-10)


@pytest.mark.parametrize("dim,n", [(1, 256), (2, 128)])
@pytest.mark.parametrize("target", list(MomentTarget))
@pytest.mark.parametrize("profile", list(Profile))
def test_kernel_moments_certified(dim, n, target, profile):
    spec = MollifierSpec(profile, target)
    g = PeriodicGrid(dim, n)
    for eps in (0.2, 0.1, 0.05):
        rep = kernel_report(build_kernel(spec, eps, g))
        assert abs(rep.m0 - 1) <= 1e-13
        assert rep.m1_max_abs <= 1e-13
        assert np.max(np.abs(np.array(rep.m2_diag) - spec.target(dim))) <= 1e-9
        assert rep.m2_offdiag_max_abs <= 1e-12
        assert rep.negative_mass == 0.0


def test_moments_from_table_independently():
    # recompute moments from the density table with minimal-image displacements
    k = build_kernel(MollifierSpec(), 0.08, PeriodicGrid(2, 64))
    assert not k.wraps
    g = k.grid
    idx = np.indices(g.shape).reshape(g.dim, -1).T
    idx = np.where(idx > g.n // 2, idx - g.n, idx)
    w = k.values.values.ravel() * g.cell_volume
    y = idx * g.h / k.eps
    assert w.sum() == pytest.approx(1.0, abs=1e-13)
    assert np.allclose((w[:, None] * y).sum(0), 0.0, atol=1e-13)
    m2 = np.einsum("j,ja,jb->ab", w, y, y)
    assert np.allclose(m2, 2.0 * np.eye(2), atol=1e-9)


def test_radius_factor_close_to_continuous(grid1):
    k = build_kernel(MollifierSpec(), 0.1, PeriodicGrid(1, 256))
    assert k.radius_factor == pytest.approx(np.sqrt(18.0), rel=1e-2)


def test_wrapping_flag():
    g = PeriodicGrid(1, 256)
    assert build_kernel(MollifierSpec(), 0.2, g).wraps
    assert not build_kernel(MollifierSpec(), 0.05, g).wraps


def test_eps_guards():
    g = PeriodicGrid(1, 64)
    with pytest.raises(EpsTooSmall):
        build_kernel(MollifierSpec(), 2 * g.h, g)
    with pytest.raises(EpsTooLarge):
        build_kernel(MollifierSpec(), 0.5, g)


def test_modal_symbol_real_and_bounded(kernel2):
    assert kernel2.modal[0, 0] == pytest.approx(1.0, abs=1e-13)
    assert np.all(kernel2.b_symbol >= -1e-9)
    assert np.all(kernel2.modal <= 1 + 1e-13)


def test_c_eff():
    assert MollifierSpec(second_moment_target=MomentTarget.PAPER).c_eff(2) == 0.5
    assert MollifierSpec().c_eff(2) == 1.0


@settings(max_examples=15, deadline=None)
@given(eps=st.floats(0.05, 0.45))
def test_moments_property_any_eps(eps):
    g = PeriodicGrid(1, 128)
    rep = kernel_report(build_kernel(MollifierSpec(), eps, g))
    assert abs(rep.m0 - 1) <= 1e-13
    assert abs(rep.m2_diag[0] - 2.0) <= 1e-9


@pytest.mark.parametrize("n,eps", [(1024, 0.1), (512, 0.2)])
def test_samples_follow_scaling_law(n, eps):
    # table value at y equals eps^-d omega(y / eps) up to the discrete mass renormalisation
    g = PeriodicGrid(1, n)
    k = build_kernel(MollifierSpec(), eps, g)
    y = k.index_offsets * g.h / k.eps
    cont = k.spec.density(y, k.radius_factor, 1) / k.eps
    assert np.max(np.abs(cont - k.weights / g.h)) <= 1e-10 * cont.max()


def test_second_moment_independent_of_eps():
    g = PeriodicGrid(1, 256)
    m2 = [kernel_report(build_kernel(MollifierSpec(), e, g)).m2_diag[0] for e in (0.2, 0.1, 0.05, 0.025)]
    assert max(m2) - min(m2) <= 1e-9
