"""Finite-lattice Dirichlet discretization of magnetic Schrödinger operators.

The continuum operator ``1/2 (-i grad - A)^2 + V`` on a box-shaped (possibly
masked) region is realized as a dense hermitian matrix with Peierls link
phases.  Site ``i`` along an axis sits at ``(i + 1/2) h - 1/2`` so that the
half-open unit cube centred at an integer point holds exactly ``(1/h)^d``
sites.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np


class DomainError(ValueError):
    """Raised when a lattice domain or field does not satisfy its invariants."""


@dataclass(frozen=True, eq=False)
class GridDomain:
    d: int
    extents: tuple
    h: float
    mask: np.ndarray
    index: np.ndarray = field(repr=False)
    sites: np.ndarray = field(repr=False)

    @property
    def n_sites(self):
        return len(self.sites)

    @property
    def m(self):
        """Sites per unit length along each axis."""
        return int(round(1.0 / self.h))

    @property
    def coords(self):
        """Physical coordinates of interior sites, shape ``(N, d)``."""
        return (self.sites + 0.5) * self.h - 0.5

    def axis_coords(self, axis):
        return (np.arange(self.extents[axis]) + 0.5) * self.h - 0.5

    def grid_coords(self):
        """Physical coordinates of every box site, shape ``(*extents, d)``."""
        axes = [self.axis_coords(i) for i in range(self.d)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def contains(self, other: "GridDomain"):
        """True if ``other`` is a sub-mask of this domain (same box, same h)."""
        return (
            self.extents == other.extents
            and np.isclose(self.h, other.h)
            and bool(np.all(self.mask | ~other.mask))
        )


def build_domain(d, extents, h=1.0, mask=None):
    """Validate and build a lattice domain.

    Parameters
    ----------
    d : int
        Spatial dimension, at least 2.
    extents : sequence of int
        Number of sites along each axis.
    h : float
        Lattice spacing; ``1/h`` must be an integer.
    mask : array_like of bool, optional
        Interior indicator on the full box. Defaults to the whole box.
    """
    d = int(d)
    if d < 2:
        raise DomainError("dimension d >= 2 required")
    extents = tuple(int(e) for e in extents)
    if len(extents) != d:
        raise DomainError(f"extents has {len(extents)} entries, expected d={d}")
    if any(e < 1 for e in extents):
        raise DomainError("extents must be positive")
    h = float(h)
    if not h > 0:
        raise DomainError("spacing h must be positive")
    m = Fraction(h).limit_denominator(10**6)
    inv = 1 / m
    if inv.denominator != 1 or abs(float(m) - h) > 1e-12:
        raise DomainError(f"1/h must be an integer (got h={h})")
    h = 1.0 / int(inv)
    if mask is None:
        mask = np.ones(extents, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != extents:
            raise DomainError(f"mask shape {mask.shape} does not match extents {extents}")
    if not mask.any():
        raise DomainError("domain has no interior sites")
    mask = mask.copy()
    mask.setflags(write=False)
    sites = np.argwhere(mask)
    index = -np.ones(extents, dtype=np.int64)
    index[tuple(sites.T)] = np.arange(len(sites))
    index.setflags(write=False)
    return GridDomain(d, extents, h, mask, index, sites)


def box_mask(extents, lower, upper):
    """Boolean mask selecting the sub-box ``lower <= idx < upper`` (grid indices)."""
    mask = np.zeros(tuple(extents), dtype=bool)
    mask[tuple(slice(lo, hi) for lo, hi in zip(lower, upper))] = True
    return mask


# -- fields -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VectorPotential:
    """Link values ``A[i][x] = A_{x -> x + e_i}``; the reverse link is the negative."""

    values: np.ndarray
    kind: str = "samples"
    params: dict = field(default_factory=dict)

    def link(self, axis, site, forward=True):
        val = self.values[axis][tuple(site)]
        return val if forward else -val


def _check_link_shape(dom, values):
    values = np.asarray(values, dtype=float)
    if values.shape != (dom.d,) + dom.extents:
        raise DomainError(
            f"vector potential samples have shape {values.shape}, "
            f"expected {(dom.d,) + dom.extents}"
        )
    return values


def zero_potential(dom):
    return VectorPotential(np.zeros((dom.d,) + dom.extents), "zero")


def vector_potential_from_field(dom, func, kind="field", **params):
    """Sample ``func(x) -> (..., d)`` at link midpoints along each axis."""
    grid = dom.grid_coords()
    vals = np.empty((dom.d,) + dom.extents)
    for i in range(dom.d):
        mid = grid.copy()
        mid[..., i] += 0.5 * dom.h
        vals[i] = np.asarray(func(mid))[..., i]
    return VectorPotential(vals, kind, dict(params))


def landau_gauge(dom, B):
    """Constant field ``B`` in the (x1, x2) plane, gauge ``A = (-B x2, 0, ...)``."""

    def func(x):
        a = np.zeros_like(x)
        a[..., 0] = -B * x[..., 1]
        return a

    return vector_potential_from_field(dom, func, "landau", B=float(B))


def symmetric_gauge(dom, B):
    """Constant field ``B`` in the (x1, x2) plane, gauge ``A = B/2 (-x2, x1, 0, ...)``."""

    def func(x):
        a = np.zeros_like(x)
        a[..., 0] = -0.5 * B * x[..., 1]
        a[..., 1] = 0.5 * B * x[..., 0]
        return a

    return vector_potential_from_field(dom, func, "symmetric", B=float(B))


def random_vector_potential(dom, scale, seed):
    rng = np.random.default_rng(seed)
    vals = rng.uniform(-scale, scale, size=(dom.d,) + dom.extents)
    return VectorPotential(vals, "random", {"scale": float(scale), "seed": seed})


@dataclass(frozen=True, eq=False)
class ScalarPotential:
    values: np.ndarray
    kind: str = "samples"
    params: dict = field(default_factory=dict)

    @property
    def plus(self):
        return np.maximum(self.values, 0.0)

    @property
    def minus(self):
        return np.maximum(-self.values, 0.0)

    def on(self, dom):
        """Values at the interior sites of ``dom`` (ordered like the matrix)."""
        return self.values[dom.mask]


def scalar_potential(dom, values, kind="samples", **params):
    values = np.broadcast_to(np.asarray(values, dtype=float), dom.extents).copy()
    return ScalarPotential(values, kind, dict(params))


def constant_scalar(dom, c):
    return scalar_potential(dom, c, "constant", c=float(c))


def scalar_from_function(dom, func, cap=None):
    """Sample ``func`` at site coordinates; ``cap`` clips ``|V|`` for singular wells."""
    vals = np.asarray(func(dom.grid_coords()), dtype=float)
    params = {}
    if cap is not None:
        vals = np.clip(vals, -cap, cap)
        params["cap"] = float(cap)
    return ScalarPotential(vals, "function", params)


def anderson_scalar(dom, width, seed):
    """I.i.d. uniform potential on ``[-width/2, width/2]``."""
    rng = np.random.default_rng(seed)
    vals = rng.uniform(-0.5 * width, 0.5 * width, size=dom.extents)
    return ScalarPotential(vals, "anderson", {"width": float(width), "seed": seed})


# -- Hamiltonian ------------------------------------------------------------


@dataclass(eq=False)
class Hamiltonian:
    matrix: np.ndarray
    domain: GridDomain
    A: Optional[VectorPotential] = None
    V: Optional[ScalarPotential] = None
    _eig: Optional[tuple] = field(default=None, repr=False)

    @property
    def h(self):
        return self.domain.h

    @property
    def n(self):
        return self.matrix.shape[0]

    def eigh(self):
        if self._eig is None:
            w, v = np.linalg.eigh(self.matrix)
            self._eig = (w, v)
        return self._eig

    @property
    def eigenvalues(self):
        return self.eigh()[0]

    def func(self, values_fn):
        """``sum_k g(lambda_k) v_k v_k^*`` for a vectorized scalar function ``g``."""
        w, v = self.eigh()
        g = np.asarray(values_fn(w))
        return (v * g) @ v.conj().T


def _links(dom):
    """Yield ``(axis, src, dst)`` interior index arrays for every interior link."""
    for axis in range(dom.d):
        lo = [slice(None)] * dom.d
        hi = [slice(None)] * dom.d
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        src = dom.index[tuple(lo)]
        dst = dom.index[tuple(hi)]
        ok = (src >= 0) & (dst >= 0)
        yield axis, tuple(lo), ok, src[ok], dst[ok]


def assemble_hamiltonian(dom, A=None, V=None):
    """Dense Peierls matrix of ``1/2 (-i grad - A)^2 + V`` with Dirichlet walls."""
    if A is None:
        A = zero_potential(dom)
    if V is None:
        V = scalar_potential(dom, 0.0, "zero")
    _check_link_shape(dom, A.values)
    if V.values.shape != dom.extents:
        raise DomainError(f"scalar potential shape {V.values.shape} does not match {dom.extents}")
    N = dom.n_sites
    h = dom.h
    real = not np.any(A.values)
    H = np.zeros((N, N), dtype=float if real else complex)
    H[np.diag_indices(N)] = dom.d / h**2 + V.on(dom)
    t = -0.5 / h**2
    for axis, lo, ok, src, dst in _links(dom):
        if real:
            hop = np.full(len(src), t)
        else:
            hop = t * np.exp(-1j * h * A.values[axis][lo][ok])
        H[src, dst] = hop
        H[dst, src] = np.conj(hop)
    return Hamiltonian(H, dom, A, V)


def _chi_on_grid(dom, chi):
    chi = np.asarray(chi, dtype=float)
    if chi.shape == dom.extents:
        return chi
    if chi.shape == (dom.n_sites,):
        grid = np.zeros(dom.extents)
        grid[dom.mask] = chi
        return grid
    raise DomainError(f"gauge field shape {chi.shape} matches neither grid nor interior")


def gauge_transform(H, chi):
    """Return ``e^{i chi} H e^{-i chi}`` with the link field shifted by the discrete gradient."""
    dom = H.domain
    grid = _chi_on_grid(dom, chi)
    phase = np.exp(1j * grid[dom.mask])
    M = phase[:, None] * H.matrix * phase.conj()[None, :]
    A = H.A if H.A is not None else zero_potential(dom)
    vals = A.values.copy()
    for axis in range(dom.d):
        grad = np.zeros(dom.extents)
        lo = [slice(None)] * dom.d
        hi = [slice(None)] * dom.d
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        grad[tuple(lo)] = (grid[tuple(hi)] - grid[tuple(lo)]) / dom.h
        vals[axis] += grad
    return Hamiltonian(M, dom, VectorPotential(vals, "gauge"), H.V)


def spectrum(H):
    """Ascending eigenvalues and orthonormal eigenvectors (cached on ``H``)."""
    return H.eigh()


def apply_function_exact(H, f):
    """Exact functional calculus ``f(H)`` through the eigendecomposition."""
    return H.func(f)


# -- unit cubes ---------------------------------------------------------------


def cube_sites(dom, beta):
    """Interior indices of sites in the half-open unit cube centred at ``beta``."""
    beta = np.asarray(beta)
    if beta.shape != (dom.d,):
        raise DomainError(f"cube centre must have {dom.d} components")
    x = dom.coords
    inside = np.all((x >= beta - 0.5 - 1e-12) & (x < beta + 0.5 - 1e-12), axis=1)
    return np.flatnonzero(inside)


def indicator(dom, beta):
    """Diagonal 0/1 projection onto the unit cube centred at ``beta``."""
    P = np.zeros((dom.n_sites, dom.n_sites))
    idx = cube_sites(dom, beta)
    P[idx, idx] = 1.0
    return P


def cube_centers(dom):
    """Integer points whose unit cube meets the interior, lexicographically sorted."""
    centers = np.floor(dom.coords + 0.5 + 1e-12).astype(int)
    return np.unique(centers, axis=0)


def site_cube(dom):
    """Integer cube centre of each interior site, shape ``(N, d)``."""
    return np.floor(dom.coords + 0.5 + 1e-12).astype(int)


def expm_hermitian(H, t):
    """``exp(-t H)`` from the cached eigendecomposition."""
    return H.func(lambda w: np.exp(-t * w))
