"""Feynman-Kac-Itô Monte Carlo for ``exp(-t H)`` and the lattice semigroup inequalities.

Paths are standard Brownian motions (generator ``Delta/2``) started at site
coordinates.  A path is killed at the first time step whose position leaves
the continuum region of the domain: the points whose multilinear grid cell has
at least one interior corner.  For a full box this is the open box bounded by
the Dirichlet wall sites.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from .lattice import assemble_hamiltonian, expm_hermitian
from .schatten import mixed_norm


# -- continuum geometry ---------------------------------------------------------


def _grid_position(dom, x):
    # fractional grid index; sites sit at integers
    return (np.asarray(x, dtype=float) + 0.5) / dom.h - 0.5


def _cell_corners(dom, g):
    base = np.floor(g).astype(np.int64)
    frac = g - base
    for bits in np.ndindex(*(2,) * dom.d):
        off = np.array(bits)
        idx = base + off
        wt = np.prod(np.where(off == 1, frac, 1.0 - frac), axis=-1)
        yield idx, wt


def _lookup(dom, arr, idx):
    ok = np.all((idx >= 0) & (idx < np.array(dom.extents)), axis=-1)
    out = np.zeros(idx.shape[:-1], dtype=arr.dtype)
    safe = np.where(ok[..., None], idx, 0)
    vals = arr[tuple(np.moveaxis(safe, -1, 0))]
    out[ok] = vals[ok]
    return out


def inside(dom, x):
    """Membership of points ``x`` (shape ``(..., d)``) in the continuum region."""
    g = _grid_position(dom, x)
    if dom.mask.all():
        # some cell corner is a site iff -1 <= g < n on every axis
        return np.all((g >= -1.0) & (g < np.array(dom.extents)), axis=-1)
    hit = np.zeros(g.shape[:-1], dtype=bool)
    for idx, _ in _cell_corners(dom, g):
        hit |= _lookup(dom, dom.mask, idx)
    return hit


def interpolate(dom, grid_values, x):
    """Multilinear interpolation of box-shaped ``grid_values`` (zero off the mask)."""
    vals = np.where(dom.mask, grid_values, 0)
    g = _grid_position(dom, x)
    out = np.zeros(g.shape[:-1], dtype=np.result_type(vals, float))
    for idx, wt in _cell_corners(dom, g):
        out = out + wt * _lookup(dom, vals, idx)
    return out


def site_values_to_grid(dom, values):
    grid = np.zeros(dom.extents, dtype=np.result_type(values, float))
    grid[dom.mask] = values
    return grid


# -- fields -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ContinuumField:
    """Vector potential, its divergence and a scalar potential as callables on ``(..., d)``."""

    A: Optional[Callable] = None
    divA: Optional[Callable] = None
    V: Optional[Callable] = None
    d: int = 2

    def a(self, x):
        return np.zeros_like(x) if self.A is None else self.A(x)

    def div(self, x):
        return np.zeros(x.shape[:-1]) if self.divA is None else self.divA(x)

    def v(self, x):
        return np.zeros(x.shape[:-1]) if self.V is None else self.V(x)


def constant_field(a=None, c=0.0, d=2):
    a = np.zeros(d) if a is None else np.asarray(a, dtype=float)
    return ContinuumField(
        A=lambda x: np.broadcast_to(a, x.shape).copy(),
        V=lambda x: np.full(x.shape[:-1], float(c)),
        d=d,
    )


def symmetric_field(B, V=None, d=2):
    """``A = B/2 (-x2, x1, 0, ...)``; divergence free."""

    def A(x):
        out = np.zeros_like(x)
        out[..., 0] = -0.5 * B * x[..., 1]
        out[..., 1] = 0.5 * B * x[..., 0]
        return out

    return ContinuumField(A=A, V=V, d=d)


def landau_field(B, V=None, d=2):
    """``A = (-B x2, 0, ...)``; divergence free."""

    def A(x):
        out = np.zeros_like(x)
        out[..., 0] = -B * x[..., 1]
        return out

    return ContinuumField(A=A, V=V, d=d)


def lattice_scalar_field(dom, V):
    """Continuum ``V`` by multilinear interpolation of a lattice ``ScalarPotential``."""
    return ContinuumField(V=lambda x: interpolate(dom, V.values, x), d=dom.d)


# -- paths ------------------------------------------------------------------------


@dataclass
class PathEnsemble:
    count: int
    t: float
    dt: float
    seed: int
    positions: np.ndarray  # (count, steps + 1, d)
    alive: np.ndarray  # (count, steps + 1)

    @property
    def steps(self):
        return self.positions.shape[1] - 1

    @property
    def increments(self):
        return np.diff(self.positions, axis=1)


def _step_grid(t, dt):
    if not t > 0:
        raise ValueError("time t must be positive")
    if not (0 < dt <= t):
        raise ValueError("step must satisfy 0 < dt <= t")
    steps = max(1, int(round(t / dt)))
    return steps, t / steps


def sample_paths(x0, t, dt, count, seed, domain):
    """Euler-Maruyama Brownian paths from ``x0`` with step-resolution killing."""
    if count < 1:
        raise ValueError("count must be >= 1")
    steps, dt = _step_grid(t, dt)
    x0 = np.asarray(x0, dtype=float)
    rng = np.random.default_rng(seed)
    inc = rng.standard_normal((count, steps, x0.size)) * np.sqrt(dt)
    pos = np.concatenate([np.broadcast_to(x0, (count, 1, x0.size)), x0 + np.cumsum(inc, axis=1)], axis=1)
    alive = np.logical_and.accumulate(inside(domain, pos), axis=1)
    return PathEnsemble(count, float(t), dt, seed, pos, alive)


def fk_action(positions, fld, dt):
    """Action ``i int A dw + (i/2) int div A ds + int V ds`` for paths ``(count, steps+1, d)``.

    The stochastic integral is the left-endpoint Itô sum; the time integrals
    use the midpoint of each step.
    """
    pos = np.asarray(positions, dtype=float)
    if pos.ndim == 2:
        pos = pos[None]
    left, dw = pos[:, :-1], np.diff(pos, axis=1)
    mid = 0.5 * (pos[:, 1:] + left)
    ito = np.sum(fld.a(left) * dw, axis=(1, 2))
    div = np.sum(fld.div(mid), axis=1) * dt
    pot = np.sum(fld.v(mid), axis=1) * dt
    return 1j * ito + 0.5j * div + pot


def _site_phi(dom, phi):
    if callable(phi):
        return phi
    grid = site_values_to_grid(dom, np.asarray(phi))
    return lambda x: interpolate(dom, grid, x)


def _run_site(x0, steps, dt, count, rng, dom, fld, phi_fn, chunk):
    """Streamed FK estimate at one start point; returns the per-path samples."""
    d = x0.size
    out = np.empty(count, dtype=complex)
    for start in range(0, count, chunk):
        m = min(chunk, count - start)
        x = np.broadcast_to(x0, (m, d)).copy()
        alive = inside(dom, x)
        S = np.zeros(m, dtype=complex)
        for _ in range(steps):
            dw = rng.standard_normal((m, d)) * np.sqrt(dt)
            nxt = x + dw
            mid = x + 0.5 * dw
            S += 1j * np.sum(fld.a(x) * dw, axis=1) + (0.5j * fld.div(mid) + fld.v(mid)) * dt
            x = nxt
            alive &= inside(dom, x)
        val = np.zeros(m, dtype=complex)
        if alive.any():
            val[alive] = np.exp(-S[alive]) * phi_fn(x[alive])
        out[start:start + m] = val
    return out


@dataclass
class MCEstimate:
    sites: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray
    count: int
    dt: float

    def rows(self):
        return [(int(s), float(e.real), float(e.imag), float(se))
                for s, e, se in zip(self.sites, self.estimate, self.stderr)]


def fk_semigroup_apply(dom, fld, t, phi, count=10_000, dt=0.01, seed=0, sites=None, chunk=50_000):
    """Monte Carlo ``(exp(-t H) phi)(x)`` at interior sites.

    ``phi`` is a callable on continuum points or per-site values, which are
    interpolated multilinearly.  Each site draws from its own child of
    ``SeedSequence(seed)`` so estimates do not depend on which sites are run.
    """
    steps, dt = _step_grid(t, dt)
    sites = np.arange(dom.n_sites) if sites is None else np.asarray(sites, dtype=int)
    phi_fn = _site_phi(dom, phi)
    children = np.random.SeedSequence(seed).spawn(dom.n_sites)
    est = np.empty(len(sites), dtype=complex)
    err = np.empty(len(sites))
    for j, s in enumerate(sites):
        rng = np.random.default_rng(children[s])
        vals = _run_site(dom.coords[s], steps, dt, count, rng, dom, fld, phi_fn, chunk)
        est[j] = vals.mean()
        if count > 1:
            var = vals.real.var(ddof=1) + vals.imag.var(ddof=1)
            err[j] = np.sqrt(var / count)
        else:
            err[j] = np.inf
    return MCEstimate(sites, est, err, int(count), dt)


def heat_kernel_gaussian(x, t, sigma, center=None):
    """``exp(t Delta/2)`` applied to ``exp(-|x - c|^2 / (2 sigma^2))`` on all of ``R^d``."""
    x = np.asarray(x, dtype=float)
    c = np.zeros(x.shape[-1]) if center is None else np.asarray(center, dtype=float)
    s2 = sigma**2 + t
    r2 = np.sum((x - c) ** 2, axis=-1)
    return (sigma**2 / s2) ** (x.shape[-1] / 2) * np.exp(-r2 / (2 * s2))


def mc_error_slope(counts, errors):
    """Least-squares slope of ``log(error)`` against ``log(count)``."""
    slope, _ = np.polyfit(np.log(counts), np.log(errors), 1)
    return float(slope)


# -- exact lattice inequalities -----------------------------------------------------


@dataclass
class InequalityReport:
    max_violation: float
    strict_sites: int
    trials: int
    tol: float

    @property
    def ok(self):
        return self.max_violation <= self.tol


def diamagnetic_check(dom, A, V, t, trials=50, seed=0, tol=1e-10, phis=None):
    """Entrywise ``|exp(-tH(A,V)) phi| <= exp(-tH(0,V)) |phi|`` for random complex ``phi``."""
    if not t > 0:
        raise ValueError("time t must be positive")
    EA = expm_hermitian(assemble_hamiltonian(dom, A, V), t)
    E0 = expm_hermitian(assemble_hamiltonian(dom, None, V), t)
    if phis is None:
        rng = np.random.default_rng(seed)
        phis = rng.standard_normal((trials, dom.n_sites)) + 1j * rng.standard_normal((trials, dom.n_sites))
    phis = np.atleast_2d(phis)
    lhs = np.abs(phis @ EA.T)
    rhs = np.abs(phis) @ E0.T
    gap = lhs - rhs
    return InequalityReport(float(gap.max()), int(np.sum(gap < -tol)), len(phis), tol)


def monotonicity_check(dom, dom_big, V_big, t, phi=None, tol=1e-10):
    """``exp(-tH_dom(0,V)) chi phi <= exp(-tH_big(0,V)) phi`` entrywise for ``phi >= 0``.

    ``dom`` must be a sub-mask of ``dom_big``; ``V_big`` lives on the common box.
    """
    if not dom_big.contains(dom):
        raise ValueError("domains are not nested")
    if phi is None:
        phi = np.ones(dom_big.n_sites)
    phi = np.asarray(phi, dtype=float)
    if np.any(phi < 0):
        raise ValueError("phi must be nonnegative")
    Hs = assemble_hamiltonian(dom, None, V_big)
    Hb = assemble_hamiltonian(dom_big, None, V_big)
    sub = dom_big.index[dom.mask]
    small = np.zeros(dom_big.n_sites)
    small[sub] = expm_hermitian(Hs, t) @ phi[sub]
    big = expm_hermitian(Hb, t) @ phi
    gap = small - big
    return InequalityReport(float(gap.max()), int(np.sum(gap < -tol)), 1, tol)


@dataclass
class SmoothingReport:
    t: np.ndarray
    p: float
    q: float
    gamma: float
    norm_AV: np.ndarray
    norm_0V: np.ndarray
    C: float
    E: float
    E_free: float
    E0: float
    tol: float = 1e-10

    @property
    def envelope(self):
        return self.C * self.t ** (-self.gamma) * np.exp(self.E * self.t)

    @property
    def chain_ok(self):
        return bool(np.all(self.norm_AV <= self.norm_0V + self.tol))

    @property
    def envelope_ok(self):
        return bool(np.all(self.norm_0V <= self.envelope * (1 + 1e-12)))

    @property
    def ok(self):
        return self.chain_ok and self.envelope_ok and -self.E < self.E0

    def rows(self):
        env = self.envelope
        return [(float(t), self.p, self.q, float(a), float(b), float(e))
                for t, a, b, e in zip(self.t, self.norm_AV, self.norm_0V, env)]


def _fit_envelope(t, norms, gamma, e_lo, e_hi):
    logn = np.log(np.maximum(norms, 1e-300)) + gamma * np.log(t)

    def logC(E):
        return float(np.max(logn - E * t))

    def objective(E):
        return np.sum(logC(E) - gamma * np.log(t) + E * t)

    res = optimize.minimize_scalar(objective, bounds=(e_lo, e_hi), method="bounded",
                                   options={"xatol": 1e-10})
    E = float(res.x)
    # the bounded search never touches the endpoints; compare against them
    for cand in (e_lo, e_hi):
        if objective(cand) < objective(E):
            E = float(cand)
    return float(np.exp(logC(E))), E


def smoothing_check(dom, A, V, t_grid, p, q, eps=1e-6):
    """Mixed ``(p,q)`` norms of both semigroups and a fitted ``C t^-gamma e^{Et}`` envelope.

    ``E`` is restricted to ``E >= -E0 + eps`` with ``E0`` the bottom of the
    spectrum of ``H(0,V)``; ``E_free`` is the unconstrained optimum.
    """
    t = np.asarray(t_grid, dtype=float)
    if np.any(t <= 0):
        raise ValueError("t_grid must be positive")
    HA = assemble_hamiltonian(dom, A, V)
    H0 = assemble_hamiltonian(dom, None, V)
    nA = np.array([mixed_norm(expm_hermitian(HA, s), p, q, dom.h, dom.d) for s in t])
    n0 = np.array([mixed_norm(expm_hermitian(H0, s), p, q, dom.h, dom.d) for s in t])
    gamma = 0.5 * dom.d * (1.0 / p - 1.0 / q)
    E0 = float(H0.eigenvalues[0])
    span = 10.0 * (1.0 + abs(E0)) + 10.0 / t.min()
    _, E_free = _fit_envelope(t, n0, gamma, -E0 - span, -E0 + span)
    e_lo = -E0 + eps * max(1.0, abs(E0))
    C, E = _fit_envelope(t, n0, gamma, e_lo, e_lo + span)
    return SmoothingReport(t, float(p), float(q), gamma, nA, n0, C, E, E_free, E0)
