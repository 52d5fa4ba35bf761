import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctlab import ctbounds as ct
from ctlab import hscalc as hs
from ctlab import lattice as lat


def random_hermitian(n, seed, scale=None):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return (X + X.conj().T) / (scale or math.sqrt(4 * n))


def exact(H, f):
    w, v = np.linalg.eigh(H)
    return (v * f(w)) @ v.conj().T


# -- function descriptors ------------------------------------------------------------


@pytest.mark.parametrize("f", [
    hs.gaussian(),
    hs.gaussian(scale=0.7, center=0.4, amplitude=-2.0),
    hs.damped_polynomial([1.0, -0.5, 0.25], alpha=0.8),
    hs.bump(center=0.3, width=1.5),
], ids=["gauss", "shifted-gauss", "damped-poly", "bump"])
def test_derivatives_match_finite_differences(f):
    rng = np.random.default_rng(0)
    if f.tag == "bump":
        pts = f.params["center"] + rng.uniform(-0.9, 0.9, 100) * f.params["width"]
    else:
        pts = rng.uniform(-3, 3, 100)
    assert hs.derivative_fd_error(f, pts, r_max=4) <= 1e-6


@pytest.mark.parametrize("N, r", [(0, 0), (2, 1), (4, 3), (8, 2)])
def test_schwartz_norm_finite(N, r):
    val = hs.schwartz_norm(hs.gaussian(), N, r)
    assert math.isfinite(val) and val > 0
    grid = np.linspace(-30, 30, 600001)
    brute = np.max((1 + np.abs(grid)) ** N * np.abs(hs.gaussian().d(grid, r)))
    assert val == pytest.approx(brute, rel=1e-6)


def test_function_arithmetic():
    f, g = hs.gaussian(), hs.bump(width=2.0)
    u = np.linspace(-3, 3, 31)
    assert np.allclose((f + g)(u), f(u) + g(u))
    assert np.allclose((f * 3.0).d(u, 2), 3.0 * f.d(u, 2))
    assert not hs.zero_function()(u).any()


# -- cutoff and extension -----------------------------------------------------------------


def test_cutoff_examples():
    assert hs.cutoff_tau(0.5) == 1.0
    assert hs.cutoff_tau(3.0) == 0.0
    mid = float(hs.cutoff_tau(1.5))
    assert 0 < mid < 1 and mid == pytest.approx(0.5)
    u = np.linspace(-2.5, 2.5, 501)
    assert np.array_equal(hs.cutoff_tau(u), hs.cutoff_tau(-u))
    assert np.all(np.diff(hs.cutoff_tau(u[u >= 0])) <= 0)


@pytest.mark.parametrize("order", [1, 2])
def test_cutoff_derivatives_closed_form(order):
    u = np.linspace(1.01, 1.99, 99)
    step = 1e-5
    fd = (hs.cutoff_tau(u + step, order - 1) - hs.cutoff_tau(u - step, order - 1)) / (2 * step)
    ex = hs.cutoff_tau(u, order)
    assert np.abs(fd - ex).max() <= 1e-5 * max(1.0, np.abs(ex).max())


def test_dbar_vanishes_outside_support():
    rng = np.random.default_rng(1)
    u = rng.uniform(-10, 10, 500)
    v = hs.japanese(u) * rng.uniform(2.0, 5.0, 500) * rng.choice([-1, 1], 500)
    for n in (1, 2, 3):
        assert not hs.extension_dbar(hs.gaussian(), n, u, v).any()
        assert not hs.extension(hs.gaussian(), n, u, v).any()


def test_dbar_order_in_v():
    f, u = hs.gaussian(), 0.3
    vals = [abs(complex(hs.extension_dbar(f, 2, u, v))) for v in (1e-2, 1e-3, 1e-4)]
    coeff = abs(float(f.d(np.array([u]), 3)[0])) / 2 / math.factorial(2)
    for v, val in zip((1e-2, 1e-3, 1e-4), vals):
        assert val == pytest.approx(coeff * v**2, rel=1e-12)
    assert vals[0] / vals[1] == pytest.approx(100, rel=1e-9)


def test_dbar_insufficient_order():
    with pytest.raises(ValueError, match="derivatives"):
        hs.extension_dbar(hs.bump(r_max=3), 3, 0.0, 0.1)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_dbar_matches_finite_differences(n):
    f = hs.gaussian(scale=1.3, center=0.2)
    rng = np.random.default_rng(n)
    u = rng.uniform(-3, 3, 50)
    v = rng.uniform(0.05, 1.95, 50) * hs.japanese(u) * rng.choice([-1, 1], 50)
    e = 1e-5
    du = (hs.extension(f, n, u + e, v) - hs.extension(f, n, u - e, v)) / (2 * e)
    dv = (hs.extension(f, n, u, v + e) - hs.extension(f, n, u, v - e)) / (2 * e)
    fd = 0.5 * (du + 1j * dv)
    ex = hs.extension_dbar(f, n, u, v)
    scale = np.maximum(np.abs(ex), 1e-6)
    assert np.max(np.abs(fd - ex) / scale) <= 1e-5


# -- pointwise bound ----------------------------------------------------------------------


def test_bound_in_V_minus_U_needs_no_constant():
    f = hs.gaussian()
    rng = np.random.default_rng(2)
    u = rng.uniform(-5, 5, 2000)
    v = rng.uniform(1e-3, 0.999, 2000) * hs.japanese(u)
    lhs, first, second, in_U = hs.dbar_bound_terms(f, 1, u, v)
    assert not in_U.any()
    assert np.all(lhs <= second * (1 + 1e-12))
    rep = hs.dbar_bound_check(f, 1, samples=(u, v))
    assert rep.ok and rep.C == 0.0


def test_bound_constant_stable_under_resampling():
    f = hs.gaussian()
    Cs = [hs.dbar_bound_check(f, 2, count=10_000, seed=s).C for s in range(4)]
    assert all(math.isfinite(c) and c > 0 for c in Cs)
    assert max(Cs) <= 1.1 * min(Cs)


def test_bound_constant_homogeneous():
    f = hs.gaussian(scale=0.8)
    a = hs.dbar_bound_check(f, 2, seed=5)
    b = hs.dbar_bound_check(f * 2.0, 2, seed=5)
    assert a.violations == b.violations == 0
    assert abs(a.C - b.C) <= 1e-10 * a.C


# -- |||f|||_n --------------------------------------------------------------------------------


def test_a_norm_zero():
    assert hs.a_norm(hs.zero_function(), 3) == 0.0


def test_a_norm_trapezoid_oracle():
    x = np.linspace(-20, 20, 1_000_001)
    oracle = np.trapezoid(np.exp(-x**2) / np.sqrt(1 + x**2), x)
    assert hs.a_norm(hs.gaussian(), 0) == pytest.approx(oracle, rel=1e-8)


def test_a_norm_nondecreasing():
    vals = [hs.a_norm(hs.damped_polynomial([0.0, 1.0], 0.5), n) for n in range(5)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_a_norm_divergent():
    slow = hs.user_function([lambda u: np.ones_like(u)], schwartz=False)
    with pytest.raises(hs.DivergentNorm):
        hs.a_norm(slow, 0)


# -- HS quadrature ------------------------------------------------------------------------------


def test_extension_params_validation():
    with pytest.raises(ValueError):
        hs.ExtensionParams(n=0)
    with pytest.raises(ValueError):
        hs.ExtensionParams(tol=0.0)


def test_hs_scalar_cases():
    f = hs.gaussian()
    assert hs.hs_apply(np.zeros((1, 1)), f)[0, 0] == pytest.approx(1.0, abs=1e-6)
    D = hs.hs_apply(np.diag([0.0, 1.0]), f)
    assert np.abs(D - np.diag([1.0, math.exp(-1)])).max() <= 1e-6


@settings(max_examples=15, deadline=None)
@given(lam=st.floats(-6, 6), scale=st.floats(0.5, 3), n=st.integers(1, 3))
def test_hs_scalar_values_property(lam, scale, n):
    f = hs.gaussian(scale=scale)
    vals, errs = hs.hs_scalar_values(f, np.array([lam]), hs.ExtensionParams(n=n))
    assert abs(vals[0] - f(np.array([lam]))[0]) <= 1e-7
    assert errs[0] <= 1e-8


def test_quadrature_budget_error():
    with pytest.raises(hs.QuadratureError) as exc:
        hs.hs_scalar_values(hs.gaussian(), np.array([0.1]), hs.ExtensionParams(tol=1e-15, max_cells=20))
    assert exc.value.residual > 0


@pytest.fixture(scope="module")
def herm40():
    H = random_hermitian(40, 11)
    f = hs.gaussian()
    return H, f, exact(H, f), {n: hs.hs_apply(H, f, hs.ExtensionParams(n=n)) for n in (1, 3)}


def test_hs_matches_exact_40(herm40):
    H, f, E, M = herm40
    for n, Mn in M.items():
        assert np.allclose(Mn, Mn.conj().T, atol=0)
        assert np.linalg.norm(Mn - E, 2) <= 1e-4 * np.linalg.norm(E, 2)


def test_hs_independent_of_n(herm40):
    _, _, _, M = herm40
    assert np.linalg.norm(M[1] - M[3], 2) <= 10 * hs.ExtensionParams().tol


def test_hs_linear():
    H = random_hermitian(10, 4)
    f, g = hs.gaussian(scale=0.8), hs.damped_polynomial([0.0, 1.0], 1.0)
    lhs = hs.hs_apply(H, f + g)
    rhs = hs.hs_apply(H, f) + hs.hs_apply(H, g)
    assert np.abs(lhs - rhs).max() <= 1e-8


def test_hs_lattice_operator():
    dom = lat.build_domain(2, (4, 4))
    H = lat.assemble_hamiltonian(dom, lat.symmetric_gauge(dom, 0.5))
    f = hs.gaussian(scale=1.5)
    assert np.abs(hs.hs_apply(H, f) - H.func(f)).max() <= 1e-7


def test_norm_ratio_constant_stable():
    f_set = [hs.gaussian(scale=s) for s in (0.7, 1.0, 1.6)]

    def c_emp(seeds):
        return max(hs.hs_norm_ratio(random_hermitian(4, s, scale=1.0), f, 1) for s in seeds for f in f_set)

    a, b = c_emp([0, 1]), c_emp([2, 3])
    assert 0 < a <= 1 and 0 < b <= 1
    assert max(a, b) <= 2 * min(a, b)


# -- kernel decay -------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def free14():
    dom = lat.build_domain(2, (14, 14))
    return lat.assemble_hamiltonian(dom)


def test_kernel_decay_zero_function(free14):
    pairs = ct.default_pairs(free14.domain, 6)
    rep = hs.kernel_decay_experiment(free14, hs.zero_function(), 2, [1, 2], pairs)
    assert rep.degenerate and rep.ok
    assert all(row[4] == 0 for row in rep.rows)


def test_kernel_decay_excludes_diagonal(free14):
    rep = hs.kernel_decay_experiment(free14, hs.gaussian(), 2, [2], [((3, 3), (3, 3)), ((3, 3), (5, 3))])
    assert len(rep.rows) == 1 and rep.rows[0][2] == 2.0


def test_kernel_decay_requires_p(free14):
    with pytest.raises(ct.PreconditionError, match="p > d/2"):
        hs.kernel_decay_experiment(free14, hs.gaussian(), 1.0, [1], [((0, 0), (1, 0))])


def test_kernel_decay_free_gaussian(free14):
    pairs = ct.default_pairs(free14.domain, 12)
    rep = hs.kernel_decay_experiment(free14, hs.gaussian(), 2, [1, 2, 3, 4], pairs)
    assert not rep.degenerate and rep.ok
    assert all(math.isfinite(rep.sup[k]) for k in (1, 2, 3, 4))


def test_kernel_decay_hs_method_agrees():
    dom = lat.build_domain(2, (5, 5))
    H = lat.assemble_hamiltonian(dom)
    pairs = ct.default_pairs(dom, 4)
    a = hs.kernel_decay_experiment(H, hs.gaussian(), 2, [2], pairs)
    b = hs.kernel_decay_experiment(H, hs.gaussian(), 2, [2], pairs, method="hs")
    assert np.allclose([r[4] for r in a.rows], [r[4] for r in b.rows], atol=1e-8)
