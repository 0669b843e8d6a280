import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from rsbcs import ConfigError, DomainError, EnsembleSpec, empirical_r_transform, r_integral, r_transform


def _mp_stieltjes(r, s):
    """G(s) = E[1/(t - s)] for the spectrum of A^T A, A k x n with N(0, 1/k) entries, r = n/k >= 1.

    The k nonzero eigenvalues are r times a Marchenko-Pastur law with ratio 1/r;
    the remaining n - k are zero.
    """
    g = 1.0 / r
    a, b = (1 - math.sqrt(g)) ** 2, (1 + math.sqrt(g)) ** 2

    def dens(x):
        return math.sqrt(max((b - x) * (x - a), 0.0)) / (2 * math.pi * g * x)

    cont, _ = integrate.quad(lambda x: dens(x) / (r * x - s), a, b, epsabs=1e-13, epsrel=1e-12, limit=200)
    return g * cont + (1 - g) / (0.0 - s)


def _projector_stieltjes(r, s):
    return (1 / r) / (r - s) + (1 - 1 / r) / (0.0 - s)


@pytest.mark.parametrize("r", [1.0, 2.0, 4.0])
@pytest.mark.parametrize("omega", [-0.05, -0.5, -2.0, -10.0])
def test_iid_inverts_marchenko_pastur_stieltjes(r, omega):
    R = r_transform(EnsembleSpec.iid(r), omega)
    assert _mp_stieltjes(r, R + 1 / omega) == pytest.approx(-omega, rel=1e-8)


@pytest.mark.parametrize("r", [1.5, 2.0, 4.0, 7.0])
@pytest.mark.parametrize("omega", [-0.01, -0.3, -1.0, -25.0])
def test_projector_inverts_two_atom_stieltjes(r, omega):
    R = r_transform(EnsembleSpec.projector(r), omega)
    assert _projector_stieltjes(r, R + 1 / omega) == pytest.approx(-omega, rel=1e-12)


def test_projector_rate_one_is_identity():
    spec = EnsembleSpec.projector(1.0)
    for omega in (-100.0, -1.0, -1e-3, 0.0, 0.5):
        assert r_transform(spec, omega) == 1.0


def test_projector_matches_tabulated_two_atoms():
    r = 3.0
    tab = EnsembleSpec.tabulated([0.0, r], [1 - 1 / r, 1 / r], rate=r)
    for omega in (-0.01, -0.7, -5.0):
        assert r_transform(tab, omega) == pytest.approx(r_transform(EnsembleSpec.projector(r), omega), rel=1e-10)


def test_transforms_at_zero_equal_spectral_mean():
    assert r_transform(EnsembleSpec.iid(3.0), 0.0) == 1.0
    assert r_transform(EnsembleSpec.projector(3.0), 0.0) == pytest.approx(1.0)
    tab = EnsembleSpec.tabulated([0.5, 2.0], [0.5, 0.5])
    assert r_transform(tab, 0.0) == pytest.approx(1.25)


@settings(max_examples=40, deadline=None)
@given(c=st.floats(0.0, 50.0), omega=st.floats(-1e3, -1e-6))
def test_point_mass_has_constant_transform(c, omega):
    assert r_transform(EnsembleSpec.tabulated([c], [1.0]), omega) == pytest.approx(c, abs=1e-12 * (1 + c))


@settings(max_examples=40, deadline=None)
@given(
    eig=st.lists(st.floats(0.0, 10.0), min_size=1, max_size=6),
    raw=st.lists(st.floats(0.05, 1.0), min_size=6, max_size=6),
    omega=st.floats(-50.0, -1e-4),
)
def test_tabulated_solves_stieltjes_equation(eig, raw, omega):
    m = np.array(raw[: len(eig)])
    m = m / m.sum()
    m[-1] = 1.0 - m[:-1].sum()
    spec = EnsembleSpec.tabulated(eig, m)
    R = r_transform(spec, omega)
    s = R + 1 / omega
    t = np.array(spec.eigenvalues)
    G = float(np.dot(spec.masses, 1.0 / (t - s)))
    assert G == pytest.approx(-omega, rel=1e-8)
    # R is non-decreasing in omega and bounded by the support
    assert min(eig) - 1e-12 <= R <= max(eig) + 1e-12


def test_iid_pole_raises():
    with pytest.raises(DomainError):
        r_transform(EnsembleSpec.iid(2.0), 0.5)


def test_bad_specs():
    with pytest.raises(ConfigError):
        EnsembleSpec.projector(0.5)
    with pytest.raises(ConfigError):
        EnsembleSpec.iid(-1.0)
    with pytest.raises(ConfigError):
        EnsembleSpec.tabulated([1.0, 2.0], [0.5, 0.6])
    with pytest.raises(ConfigError):
        EnsembleSpec.tabulated([-1.0], [1.0])


def test_from_csv(tmp_path):
    path = tmp_path / "spec.csv"
    path.write_text("eigenvalue,mass\n0,0.5\n2,0.5\n")
    spec = EnsembleSpec.from_csv(path, rate=2.0)
    assert r_transform(spec, -0.4) == pytest.approx(r_transform(EnsembleSpec.projector(2.0), -0.4), rel=1e-10)
    bad = tmp_path / "bad.csv"
    bad.write_text("eigenvalue,mass\n0,0.5,1\n")
    with pytest.raises(ConfigError):
        EnsembleSpec.from_csv(bad)


@pytest.mark.parametrize("spec", [EnsembleSpec.iid(2.5), EnsembleSpec.projector(2.5)])
def test_r_integral_against_trapezoid(spec):
    lam, a, b = 0.7, 0.1, 1.9
    w = np.linspace(a, b, 20001)
    vals = np.array([r_transform(spec, -t / lam) for t in w])
    assert r_integral(spec, lam, a, b) == pytest.approx(np.trapezoid(vals, w), rel=1e-7)
    assert r_integral(spec, lam, a, a) == 0.0


def test_empirical_transform_of_atoms():
    eig = np.array([0.0, 0.0, 3.0])
    assert empirical_r_transform(eig, -0.8) == pytest.approx(
        r_transform(EnsembleSpec.projector(3.0), -0.8), rel=1e-12
    )
