"""Schatten norms, discrete mixed L^p -> L^q norms and unit-cube blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import cube_sites


class UnsupportedNorm(ValueError):
    """Raised for a (p, q) pair whose operator norm is not exactly computable."""


@dataclass(frozen=True)
class BlockNorm:
    beta: tuple
    gamma: tuple
    distance: float
    p: float
    n: int
    value: float


def singular_values(M):
    """Singular values of ``M`` in descending order."""
    M = np.atleast_2d(np.asarray(M))
    if M.size == 0:
        return np.zeros(0)
    return np.linalg.svd(M, compute_uv=False)


def _check_p(p):
    p = float(p)
    if not (p >= 1.0):
        raise ValueError(f"Schatten index must satisfy p >= 1 (got {p})")
    return p


def schatten_from_sv(sv, p):
    p = _check_p(p)
    if sv.size == 0:
        return 0.0
    if np.isinf(p):
        return float(sv[0])
    top = sv[0]
    if top == 0:
        return 0.0
    # scale by the top value so large p does not overflow
    return float(top * np.sum((sv / top) ** p) ** (1.0 / p))


def schatten_norm(M, p):
    r"""Schatten norm :math:`(\sum_k \sigma_k^p)^{1/p}`; ``p = inf`` gives the operator norm."""
    _check_p(p)
    return schatten_from_sv(singular_values(M), p)


def _vec_norm(x, p, axis):
    if np.isinf(p):
        return np.max(np.abs(x), axis=axis)
    return np.sum(np.abs(x) ** p, axis=axis) ** (1.0 / p)


def _conjugate(p):
    if p == 1:
        return np.inf
    if np.isinf(p):
        return 1.0
    return p / (p - 1.0)


def mixed_norm(M, p, q, h=1.0, d=2):
    r"""Operator norm of ``M`` from :math:`L^p` to :math:`L^q` with site weight ``h**d``.

    Functions carry the norm :math:`(h^d \sum_x |\phi(x)|^p)^{1/p}`.  Exact
    formulas exist for ``p = 1`` (extreme points of the unit ball), for
    ``q = inf`` (row norms in the conjugate exponent) and for ``p = q = 2``.
    """
    M = np.atleast_2d(np.asarray(M))
    p, q = float(p), float(q)
    w = float(h) ** d
    if M.size == 0:
        return 0.0
    if p == 1.0:
        col = _vec_norm(M, q, axis=0)
        scale = w ** (-1.0) if np.isinf(q) else w ** (1.0 / q - 1.0)
        return float(scale * col.max())
    if np.isinf(q):
        row = _vec_norm(M, _conjugate(p), axis=1)
        scale = w ** (-1.0 / p) if not np.isinf(p) else 1.0
        return float(scale * row.max())
    if p == 2.0 and q == 2.0:
        return float(singular_values(M)[0])
    raise UnsupportedNorm(f"({p:g},{q:g}) norm is not exactly computable")


def lp_norm(phi, p, h=1.0, d=2):
    phi = np.asarray(phi)
    if np.isinf(p):
        return float(np.max(np.abs(phi)))
    return float((h**d * np.sum(np.abs(phi) ** p)) ** (1.0 / p))


def block(M, dom, beta, gamma):
    """Rows of cube ``beta`` and columns of cube ``gamma`` (zero rows/cols dropped)."""
    rows = cube_sites(dom, beta)
    cols = cube_sites(dom, gamma)
    return np.asarray(M)[np.ix_(rows, cols)]


def block_norm(M, dom, beta, gamma, p, n=1):
    beta = tuple(int(b) for b in beta)
    gamma = tuple(int(g) for g in gamma)
    dist = float(np.linalg.norm(np.subtract(beta, gamma)))
    return BlockNorm(beta, gamma, dist, float(p), int(n), schatten_norm(block(M, dom, beta, gamma), p))


def hilbert_schmidt_kernel_norm(M, h=1.0, d=2):
    """J_2 norm via the kernel ``k = M / h^d`` integrated against ``h^d`` per variable."""
    k = np.asarray(M) / h**d
    return float(np.sqrt(h ** (2 * d) * np.sum(np.abs(k) ** 2)))


def multiplier_hs_bound(F, g, h=1.0, d=2):
    """Both sides of ``||g F||_{J_2} <= ||g||_2 ||F||_{2,inf}``.

    ``g`` acts as a multiplication operator (one value per site).
    Returns ``(lhs, rhs)``.
    """
    g = np.asarray(g)
    lhs = schatten_norm(g[:, None] * np.asarray(F), 2)
    rhs = lp_norm(g, 2, h, d) * mixed_norm(F, 2, np.inf, h, d)
    return lhs, rhs
