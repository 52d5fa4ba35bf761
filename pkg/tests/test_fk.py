import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctlab import fk
from ctlab import lattice as lat
from ctlab import schatten as sn


@pytest.fixture(scope="module")
def box10():
    return lat.build_domain(2, (10, 10))


def gaussian_phi(center, sigma):
    c = np.asarray(center, dtype=float)
    return lambda x: np.exp(-np.sum((x - c) ** 2, axis=-1) / (2 * sigma**2))


# -- geometry ----------------------------------------------------------------------------


def test_inside_box_region(box10):
    # wall sites sit at -1/2 - h and 9.5 - h; the open box between them is the region
    assert fk.inside(box10, np.array([[-0.49, 4.0], [4.5, 4.5], [9.49, 0.0]])).all()
    assert not fk.inside(box10, np.array([[-1.01, 4.0], [4.0, 10.01], [20.0, 0.0]])).any()


def test_interpolate_reproduces_sites_and_linears(box10):
    vals = np.arange(box10.n_sites, dtype=float)
    grid = fk.site_values_to_grid(box10, vals)
    assert np.allclose(fk.interpolate(box10, grid, box10.coords), vals)
    lin = 2.0 * box10.coords[:, 0] - box10.coords[:, 1]
    x = np.random.default_rng(0).uniform(0, 8, (100, 2))
    got = fk.interpolate(box10, fk.site_values_to_grid(box10, lin), x)
    assert np.allclose(got, 2.0 * x[:, 0] - x[:, 1])


# -- paths ----------------------------------------------------------------------------------


def test_increment_statistics(box10):
    dt, count = 0.01, 100_000
    ens = fk.sample_paths([4.5, 4.5], dt, dt, count, 0, box10)
    inc = ens.increments[:, 0, :]
    assert ens.steps == 1
    assert np.all(np.abs(inc.mean(axis=0)) <= 3 * np.sqrt(dt / count))
    assert np.all(np.abs(inc.var(axis=0) - dt) <= 3 * np.sqrt(2 / count) * dt)


def test_alive_flags(box10):
    ens = fk.sample_paths([4.5, 4.5], 2.0, 0.05, 2000, 1, box10)
    assert ens.alive[:, 0].all()
    assert np.all(np.diff(ens.alive.astype(int), axis=1) <= 0)
    dead = fk.sample_paths([-5.0, 4.5], 0.5, 0.05, 100, 1, box10)
    assert not dead.alive.any()


def test_sample_paths_deterministic(box10):
    a = fk.sample_paths([1.0, 2.0], 0.3, 0.01, 500, 42, box10)
    b = fk.sample_paths([1.0, 2.0], 0.3, 0.01, 500, 42, box10)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.alive, b.alive)


@pytest.mark.parametrize("t, dt, count", [(0.0, 0.1, 10), (0.1, 0.2, 10), (0.1, 0.01, 0)])
def test_sample_paths_rejects(box10, t, dt, count):
    with pytest.raises(ValueError):
        fk.sample_paths([1.0, 1.0], t, dt, count, 0, box10)


# -- action ----------------------------------------------------------------------------------


def test_action_constant_potential(box10):
    ens = fk.sample_paths([4.5, 4.5], 0.7, 0.01, 200, 3, box10)
    S = fk.fk_action(ens.positions, fk.constant_field(c=1.5), ens.dt)
    assert np.allclose(S, 1.5 * 0.7, rtol=0, atol=1e-12)


def test_action_constant_vector_telescopes(box10):
    a = np.array([0.3, -1.1])
    ens = fk.sample_paths([4.5, 4.5], 0.5, 0.01, 200, 4, box10)
    S = fk.fk_action(ens.positions, fk.constant_field(a), ens.dt)
    disp = ens.positions[:, -1] - ens.positions[:, 0]
    assert np.abs(S - 1j * disp @ a).max() <= 1e-12


@settings(max_examples=20, deadline=None)
@given(B=st.floats(-3, 3), c=st.floats(-2, 2), seed=st.integers(0, 2**32 - 1))
def test_action_modulus(box10, B, c, seed):
    V = (lambda x: np.full(x.shape[:-1], c))
    ens = fk.sample_paths([4.5, 4.5], 0.4, 0.02, 100, seed, box10)
    S = fk.fk_action(ens.positions, fk.symmetric_field(B, V), ens.dt)
    assert np.abs(np.abs(np.exp(-S)) - np.exp(-c * 0.4)).max() <= 1e-12
    S0 = fk.fk_action(ens.positions, fk.symmetric_field(B), ens.dt)
    assert np.abs(np.abs(np.exp(-S0)) - 1).max() <= 1e-12


# -- semigroup -------------------------------------------------------------------------------


def test_small_time_identity(box10):
    phi = gaussian_phi([4.5, 4.5], 1.5)
    sites = [box10.index[4, 4], box10.index[3, 6]]
    est = fk.fk_semigroup_apply(box10, fk.constant_field(), 1e-6, phi, count=2000, dt=1e-6, sites=sites)
    exact = phi(box10.coords[sites])
    assert np.all(np.abs(est.estimate - exact) <= np.maximum(3 * est.stderr, 1e-4))


def test_heat_kernel_oracle():
    dom = lat.build_domain(2, (40, 40))
    c = np.array([19.5, 19.5])
    sites = [dom.index[19, 19], dom.index[21, 18], dom.index[17, 22]]
    est = fk.fk_semigroup_apply(dom, fk.constant_field(), 0.5, gaussian_phi(c, 1.0),
                                count=20_000, dt=0.05, seed=2, sites=sites)
    oracle = fk.heat_kernel_gaussian(dom.coords[sites], 0.5, 1.0, c)
    assert np.all(np.abs(est.estimate - oracle) <= 3 * est.stderr)
    assert np.all(est.estimate.imag == 0)


def test_lattice_expm_oracle():
    dom = lat.build_domain(2, (24, 24), h=0.25)
    c = dom.coords.mean(axis=0)
    phi_sites = gaussian_phi(c, 1.0)(dom.coords)
    ref = lat.expm_hermitian(lat.assemble_hamiltonian(dom), 0.5) @ phi_sites
    sites = [dom.index[11, 11], dom.index[12, 12], dom.index[9, 14]]
    est = fk.fk_semigroup_apply(dom, fk.constant_field(), 0.5, phi_sites, count=20_000, dt=0.02,
                                seed=0, sites=sites)
    tol = np.maximum(3 * est.stderr, 0.02 * np.abs(ref[sites]))
    assert np.all(np.abs(est.estimate.real - ref[sites]) <= tol)


def test_semigroup_sites_independent():
    dom = lat.build_domain(2, (8, 8))
    phi = np.ones(dom.n_sites)
    fld = fk.symmetric_field(0.4)
    full = fk.fk_semigroup_apply(dom, fld, 0.2, phi, count=300, dt=0.05, seed=9)
    part = fk.fk_semigroup_apply(dom, fld, 0.2, phi, count=300, dt=0.05, seed=9, sites=[20, 5])
    assert np.array_equal(part.estimate, full.estimate[[20, 5]])
    chunked = fk.fk_semigroup_apply(dom, fld, 0.2, phi, count=300, dt=0.05, seed=9, sites=[20, 5], chunk=300)
    assert np.array_equal(chunked.estimate, part.estimate)


def test_mc_error_slope_synthetic():
    counts = np.array([1e3, 1e4, 1e5])
    assert fk.mc_error_slope(counts, 2.0 / np.sqrt(counts)) == pytest.approx(-0.5)


# -- lattice inequalities -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def box6():
    return lat.build_domain(2, (6, 6))


def test_diamagnetic_equality_without_field(box6):
    V = lat.anderson_scalar(box6, 2.0, 0)
    phis = np.abs(np.random.default_rng(0).normal(size=(10, box6.n_sites)))
    rep = fk.diamagnetic_check(box6, None, V, 0.7, phis=phis)
    assert rep.ok and abs(rep.max_violation) <= 1e-12 and rep.strict_sites == 0


def test_diamagnetic_strict_with_flux(box6):
    A = lat.random_vector_potential(box6, 1.0, 3)
    phis = np.eye(box6.n_sites)[[0, 14, 21]]
    rep = fk.diamagnetic_check(box6, A, None, 1.0, phis=phis)
    assert rep.ok and rep.strict_sites > 0


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), t=st.floats(0.05, 5), B=st.floats(-2, 2))
def test_diamagnetic_random(box6, seed, t, B):
    A = lat.VectorPotential(lat.landau_gauge(box6, B).values + lat.random_vector_potential(box6, 0.5, seed).values)
    rep = fk.diamagnetic_check(box6, A, lat.anderson_scalar(box6, 3.0, seed), t, trials=50, seed=seed)
    assert rep.ok and rep.trials == 50


def test_monotonicity_equal_domains(box6):
    rep = fk.monotonicity_check(box6, box6, lat.anderson_scalar(box6, 1.0, 1), 0.8)
    assert rep.ok and rep.strict_sites == 0 and abs(rep.max_violation) <= 1e-12


def test_monotonicity_strict_near_boundary():
    big = lat.build_domain(2, (8, 8))
    small = lat.build_domain(2, (8, 8), mask=lat.box_mask((8, 8), (2, 2), (6, 6)))
    phi = np.zeros(big.n_sites)
    phi[big.index[small.mask]] = 1.0
    rep = fk.monotonicity_check(small, big, None, 1.0, phi)
    assert rep.ok and rep.strict_sites > 0


def test_monotonicity_zero_phi_and_nesting():
    big = lat.build_domain(2, (8, 8))
    small = lat.build_domain(2, (8, 8), mask=lat.box_mask((8, 8), (2, 2), (6, 6)))
    rep = fk.monotonicity_check(small, big, None, 1.0, np.zeros(big.n_sites))
    assert rep.max_violation == 0.0 and rep.strict_sites == 0
    with pytest.raises(ValueError, match="not nested"):
        fk.monotonicity_check(big, small, None, 1.0)
    with pytest.raises(ValueError, match="nonnegative"):
        fk.monotonicity_check(small, big, None, 1.0, -np.ones(big.n_sites))


def test_smoothing_two_two(box6):
    V = lat.anderson_scalar(box6, 2.0, 5)
    t = np.linspace(0.1, 4, 15)
    rep = fk.smoothing_check(box6, lat.landau_gauge(box6, 0.5), V, t, 2, 2)
    lam = lat.assemble_hamiltonian(box6, None, V).eigenvalues[0]
    assert rep.gamma == 0
    assert np.allclose(rep.norm_0V, np.exp(-t * lam), rtol=1e-10)
    assert rep.E == pytest.approx(-lam, abs=1e-5)
    assert rep.chain_ok and rep.envelope_ok and rep.ok


def test_smoothing_one_inf_decays(box6):
    t = np.linspace(0.2, 20, 20)
    rep = fk.smoothing_check(box6, lat.random_vector_potential(box6, 1.0, 0), None, t, 1, np.inf)
    assert rep.gamma == pytest.approx(1.0)
    assert np.all(np.diff(rep.norm_0V[5:]) < 0)
    assert rep.E < 0 and rep.ok
    assert len(rep.rows()) == 20


def test_smoothing_unsupported(box6):
    with pytest.raises(sn.UnsupportedNorm):
        fk.smoothing_check(box6, None, None, [0.5], 2, 1)
