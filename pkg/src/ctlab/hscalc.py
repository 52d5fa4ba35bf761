"""Helffer-Sjöstrand functional calculus on lattice Hamiltonians.

``f(H) = (1/pi) int dbar f~_n(z) (H - z)^{-1} du dv`` where ``f~_n`` is the
order-``n`` almost-analytic extension cut off by ``tau(v/<u>)``.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import Polynomial, hermite
from scipy import integrate, optimize, special

from .lattice import Hamiltonian
from .schatten import schatten_norm

NOISE_FLOOR = 1e-13


class QuadratureError(RuntimeError):
    def __init__(self, message, residual):
        self.residual = residual
        super().__init__(f"{message} (residual estimate {residual:.3e})")


class DivergentNorm(ValueError):
    pass


def japanese(u):
    return np.sqrt(1.0 + np.asarray(u, dtype=float) ** 2)


# -- function descriptors -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SmoothFunction:
    """Real function with closed-form derivatives ``deriv(u, r)`` for ``r <= r_max``."""

    deriv: Callable
    r_max: int
    tag: str = "user"
    params: dict = field(default_factory=dict)
    schwartz: bool = True

    def __call__(self, u):
        return self.deriv(np.asarray(u, dtype=float), 0)

    def d(self, u, r):
        if r > self.r_max:
            raise ValueError(f"derivative order {r} exceeds r_max={self.r_max}")
        return self.deriv(np.asarray(u, dtype=float), r)

    def __mul__(self, c):
        c = float(c)
        return SmoothFunction(lambda u, r: c * self.deriv(u, r), self.r_max, self.tag,
                              {**self.params, "factor": c}, self.schwartz)

    __rmul__ = __mul__

    def __add__(self, other):
        return SmoothFunction(
            lambda u, r: self.deriv(u, r) + other.deriv(u, r),
            min(self.r_max, other.r_max), "user", {}, self.schwartz and other.schwartz,
        )


def gaussian(scale=1.0, center=0.0, amplitude=1.0, r_max=12):
    """``amplitude * exp(-((u - center)/scale)^2)``."""
    coef = [np.eye(r_max + 1)[r] for r in range(r_max + 1)]

    def deriv(u, r):
        w = (u - center) / scale
        return amplitude * (-1.0 / scale) ** r * hermite.hermval(w, coef[r]) * np.exp(-w * w)

    return SmoothFunction(deriv, r_max, "gaussian",
                          {"scale": scale, "center": center, "amplitude": amplitude})


def damped_polynomial(coeffs, alpha=1.0, r_max=12):
    """``P(u) exp(-alpha u^2)`` with ``P`` given by ascending coefficients."""
    polys = [Polynomial(coeffs)]
    x = Polynomial([0.0, 1.0])
    for _ in range(r_max):
        p = polys[-1]
        polys.append(p.deriv() - 2.0 * alpha * x * p)

    def deriv(u, r):
        return polys[r](u) * np.exp(-alpha * u * u)

    return SmoothFunction(deriv, r_max, "damped-polynomial",
                          {"coeffs": list(map(float, coeffs)), "alpha": alpha})


def bump(center=0.0, width=1.0, r_max=8):
    """``exp(-1/(1 - w^2))`` on ``|w| < 1`` with ``w = (u - center)/width``; zero outside."""
    # f^(r)(w) = P_r(w) exp(-1/(1-w^2)) / (1-w^2)^(2r)
    x = Polynomial([0.0, 1.0])
    q = 1.0 - x * x
    polys = [Polynomial([1.0])]
    for r in range(r_max):
        p = polys[-1]
        polys.append(p.deriv() * q * q + 4.0 * r * x * p * q - 2.0 * x * p)

    def deriv(u, r):
        w = (np.asarray(u, dtype=float) - center) / width
        out = np.zeros_like(w)
        inside = np.abs(w) < 1.0
        t = 1.0 - w[inside] ** 2
        with np.errstate(under="ignore"):
            out[inside] = polys[r](w[inside]) * np.exp(-1.0 / t - 2 * r * np.log(t))
        return out * width ** (-r)

    return SmoothFunction(deriv, r_max, "bump", {"center": center, "width": width})


def zero_function(r_max=12):
    return SmoothFunction(lambda u, r: np.zeros_like(np.asarray(u, dtype=float)), r_max, "zero")


def user_function(derivs: Sequence[Callable], schwartz=True):
    """Descriptor from a list ``[f, f', f'', ...]`` of vectorized callables."""
    derivs = list(derivs)
    return SmoothFunction(lambda u, r: np.asarray(derivs[r](u), dtype=float),
                          len(derivs) - 1, "user", {}, schwartz)


def derivative_fd_error(f, points, r_max=4, step=1e-4):
    """Largest relative gap between ``f^(r)`` and a 4th-order difference of ``f^(r-1)``."""
    u = np.asarray(points, dtype=float)
    worst = 0.0
    for r in range(1, min(r_max, f.r_max) + 1):
        g = lambda x: f.d(x, r - 1)
        fd = (-g(u + 2 * step) + 8 * g(u + step) - 8 * g(u - step) + g(u - 2 * step)) / (12 * step)
        exact = f.d(u, r)
        scale = np.maximum(np.abs(exact), 1e-3 * np.max(np.abs(exact)) + 1e-300)
        worst = max(worst, float(np.max(np.abs(fd - exact) / scale)))
    return worst


def schwartz_norm(f, N, r, L=None, n_grid=20001):
    """``sup_x (1+|x|)^N |f^(r)(x)|`` by grid search plus bounded local refinement."""
    if L is None:
        L = 10.0
        while L < 1e4:
            tail = (1 + L) ** N * np.abs(f.d(np.array([-L, L]), r))
            if tail.max() < 1e-16:
                break
            L *= 2
    x = np.linspace(-L, L, n_grid)
    vals = (1 + np.abs(x)) ** N * np.abs(f.d(x, r))
    k = int(np.argmax(vals))
    lo, hi = x[max(k - 1, 0)], x[min(k + 1, n_grid - 1)]
    res = optimize.minimize_scalar(
        lambda t: -(1 + abs(t)) ** N * abs(float(f.d(np.array([t]), r)[0])),
        bounds=(lo, hi), method="bounded", options={"xatol": 1e-12},
    )
    return float(max(vals[k], -res.fun))


# -- cutoff and extension -------------------------------------------------------


def cutoff_tau(u, order=0):
    """Smooth plateau: 1 on ``|u| <= 1``, 0 on ``|u| >= 2``, logistic ``exp(-1/t)`` blend between.

    ``order`` 0, 1 or 2 selects the value or a closed-form derivative.
    """
    u = np.asarray(u, dtype=float)
    t = np.abs(u)
    out = np.zeros_like(t)
    if order == 0:
        out[t <= 1.0] = 1.0
    mid = (t > 1.0 + 1e-3) & (t < 2.0 - 1e-3)
    # outside ``mid`` but inside (1, 2) the blend differs from 0/1 by < e^-900
    if order == 0:
        out[(t > 1.0) & (t <= 1.0 + 1e-3)] = 1.0
    tm = t[mid]
    g = 1.0 / (tm - 1.0) - 1.0 / (2.0 - tm)
    sg = special.expit(g)
    if order == 0:
        out[mid] = sg
        return out
    s1 = sg * special.expit(-g)
    dg = -1.0 / (tm - 1.0) ** 2 - 1.0 / (2.0 - tm) ** 2
    if order == 1:
        out[mid] = s1 * dg * np.sign(u[mid])
        return out
    if order == 2:
        d2g = 2.0 / (tm - 1.0) ** 3 - 2.0 / (2.0 - tm) ** 3
        out[mid] = s1 * ((1.0 - 2.0 * sg) * dg * dg + d2g)
        return out
    raise ValueError("order must be 0, 1 or 2")


def _taylor(f, n, u, v):
    acc = np.zeros(np.broadcast(u, v).shape, dtype=complex)
    iv = 1j * v
    for r in range(n + 1):
        acc = acc + f.d(u, r) * iv**r / math.factorial(r)
    return acc


def extension(f, n, u, v):
    """Almost-analytic extension ``sum_r f^(r)(u) (iv)^r / r! * tau(v/<u>)``."""
    u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
    return _taylor(f, n, u, v) * cutoff_tau(v / japanese(u))


def extension_dbar(f, n, u, v):
    """Closed-form ``1/2 (d/du + i d/dv)`` of :func:`extension`.

    The Taylor sum telescopes to ``f^(n+1)(u) (iv)^n / n!``; the remaining
    terms carry derivatives of the cutoff and vanish where ``|v| <= <u>``.
    """
    if n < 1:
        raise ValueError("extension order n must be >= 1")
    if n + 1 > f.r_max:
        raise ValueError(f"need derivatives up to order {n + 1}, have {f.r_max}")
    u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
    ju = japanese(u)
    w = v / ju
    sig = cutoff_tau(w)
    dtau = cutoff_tau(w, 1)
    sig_u = dtau * (-v * u / ju**3)
    sig_v = dtau / ju
    top = f.d(u, n + 1) * (1j * v) ** n / math.factorial(n) * sig
    out = 0.5 * top
    edge = dtau != 0
    if np.any(edge):
        T = _taylor(f, n, u[edge], v[edge])
        out[edge] += 0.5 * T * (sig_u[edge] + 1j * sig_v[edge])
    return out


@dataclass
class DbarBoundReport:
    C: float
    violations: int
    samples: int
    in_U: int

    @property
    def ok(self):
        return self.violations == 0 and math.isfinite(self.C)


def dbar_bound_terms(f, n, u, v):
    """``(|dbar f~_n|, U-term without C, V-term)`` of the pointwise estimate."""
    u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
    ju = japanese(u)
    av = np.abs(v)
    in_U = (ju < av) & (av < 2 * ju)
    in_V = (av > 0) & (av < 2 * ju)
    first = sum(np.abs(f.d(u, r)) * av**r / ju / math.factorial(r) for r in range(n + 1))
    second = np.abs(f.d(u, n + 1)) * av**n / (2 * math.factorial(n))
    lhs = np.abs(extension_dbar(f, n, u, v))
    return lhs, np.where(in_U, first, 0.0), np.where(in_V, second, 0.0), in_U


def dbar_bound_check(f, n, samples=None, count=10_000, seed=0, u_range=6.0):
    """Smallest ``C`` with ``|dbar f~_n| <= C * U-term + V-term`` over the samples.

    Default samples are uniform in ``u`` and in ``v`` over ``0 < |v| < 2<u>``.
    """
    if samples is None:
        rng = np.random.default_rng(seed)
        u = rng.uniform(-u_range, u_range, count)
        v = rng.uniform(0, 2, count) * japanese(u) * rng.choice([-1.0, 1.0], count)
    else:
        u, v = (np.asarray(a, float) for a in samples)
    lhs, first, second, in_U = dbar_bound_terms(f, n, u, v)
    excess = lhs - second
    slack = 1e-12 * np.maximum(lhs, 1e-300)
    outside = ~in_U
    violations = int(np.sum(excess[outside] > slack[outside]))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(in_U & (first > 0), excess / first, 0.0)
    C = float(max(0.0, np.max(ratios, initial=0.0)))
    bad_U = in_U & (first == 0) & (excess > slack)
    return DbarBoundReport(C, violations + int(bad_U.sum()), len(u), int(in_U.sum()))


def a_norm(f, n, rel_tol=1e-8):
    """``sum_{r<=n} int |f^(r)(u)| <u>^(r-1) du`` by adaptive quadrature."""
    total = 0.0
    for r in range(n + 1):
        g = lambda x, r=r: float(np.abs(f.d(np.array([x]), r))[0] * (1 + x * x) ** ((r - 1) / 2))
        gv = lambda x, r=r: np.abs(f.d(np.asarray(x), r)) * japanese(x) ** (r - 1)
        L = 8.0
        while True:
            probe = np.linspace(L, 2 * L, 257)
            tail = max(np.max(gv(probe)), np.max(gv(-probe))) * L
            if tail < 1e-14:
                break
            L *= 2
            if L > 1e7:
                raise DivergentNorm(f"integrand of order {r} does not decay; f is not in class A")
        edges = np.linspace(-L, L, int(2 * L) + 1)
        part = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            val, _ = integrate.quad(g, a, b, epsabs=0.0, epsrel=rel_tol * 1e-2, limit=200)
            part += val
        total += part
    return total


# -- HS quadrature ----------------------------------------------------------------


@dataclass(frozen=True)
class ExtensionParams:
    n: int = 1
    u_trunc: Optional[float] = None
    tol: float = 1e-9
    max_cells: int = 20_000
    order: int = 8

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("extension order n must be >= 1")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")


def truncation_halfwidth(f, n, thresh=1e-14):
    """Smallest ``U`` (on a 0.25 grid) with ``<u>^(n+2) max_r |f^(r)(u)| < thresh`` beyond it."""
    xs = np.arange(0.0, 200.0, 0.25)
    vals = np.zeros_like(xs)
    for r in range(n + 2):
        vals = np.maximum(vals, np.abs(f.d(xs, r)))
        vals = np.maximum(vals, np.abs(f.d(-xs, r)))
    vals = vals * japanese(xs) ** (n + 2)
    big = np.flatnonzero(vals >= thresh)
    return float(xs[big[-1]] + 0.25) if big.size else 0.25


class _Rule:
    def __init__(self, order):
        x, w = np.polynomial.legendre.leggauss(order)
        self.x = 0.5 * (x + 1.0)
        self.w = 0.5 * w


def _hs_scalar(f, n, lam, U, tol_abs, rule, max_cells):
    """``(2/pi) Re int_{w>0} dbar f~ <u> / (lam - u - i w <u>) du dw`` over ``[-U, U] x (0, 2]``."""

    def integrand(u, w):
        ju = japanese(u)
        v = w * ju
        return extension_dbar(f, n, u, v) * ju / (lam - u - 1j * v)

    def cell_value(cells):
        # cells: (k, 4) array of (u0, u1, w0, w1)
        u0, u1, w0, w1 = cells.T
        du, dw = u1 - u0, w1 - w0
        uu = u0[:, None, None] + du[:, None, None] * rule.x[None, :, None]
        ww = w0[:, None, None] + dw[:, None, None] * rule.x[None, None, :]
        uu, ww = np.broadcast_arrays(uu, ww)
        vals = integrand(uu.ravel(), ww.ravel()).reshape(uu.shape)
        wts = rule.w[:, None] * rule.w[None, :]
        return np.sum(vals.real * wts[None], axis=(1, 2)) * du * dw

    def children(cells):
        u0, u1, w0, w1 = cells.T
        um, wm = 0.5 * (u0 + u1), 0.5 * (w0 + w1)
        return np.stack([
            np.stack([u0, um, w0, wm], 1), np.stack([um, u1, w0, wm], 1),
            np.stack([u0, um, wm, w1], 1), np.stack([um, u1, wm, w1], 1),
        ], 1)

    ub = list(np.arange(-U, U + 1e-12, 0.5))
    if -U < lam < U:
        ub.append(lam)
        ub.extend(x for x in (lam - 2.0**-k for k in range(1, 5)) if x > -U)
        ub.extend(x for x in (lam + 2.0**-k for k in range(1, 5)) if x < U)
    ub = np.unique(np.array(ub))
    wb = np.array([0.0, 1 / 16, 1 / 8, 1 / 4, 1 / 2, 1.0, 1.25, 1.5, 1.75, 2.0])
    cells = np.array([(a, b, c, d) for a, b in zip(ub[:-1], ub[1:]) for c, d in zip(wb[:-1], wb[1:])])

    def evaluate(cells):
        coarse = cell_value(cells)
        kids = children(cells)
        fine_parts = cell_value(kids.reshape(-1, 4)).reshape(-1, 4)
        fine = fine_parts.sum(axis=1)
        return fine, np.abs(fine - coarse), kids, fine_parts

    fine, err, kids, parts = evaluate(cells)
    heap = [(-e, i) for i, e in enumerate(err)]
    heapq.heapify(heap)
    store = {i: (fine[i], err[i], kids[i]) for i in range(len(cells))}
    next_id = len(cells)
    total_err = float(err.sum())
    while total_err > tol_abs:
        if len(store) >= max_cells:
            raise QuadratureError("Helffer-Sjöstrand quadrature did not converge", total_err)
        _, i = heapq.heappop(heap)
        val, e, kid = store.pop(i)
        total_err -= e
        f2, e2, k2, _ = evaluate(kid)
        for j in range(4):
            store[next_id] = (f2[j], e2[j], k2[j])
            heapq.heappush(heap, (-e2[j], next_id))
            total_err += e2[j]
            next_id += 1
    # fixed summation order for bit-stable results
    total = math.fsum(store[k][0] for k in sorted(store))
    return 2.0 / math.pi * total, total_err


def hs_scalar_values(f, lams, params=ExtensionParams()):
    """Apply the quadrature to each real ``lam``; returns ``(values, error_estimates)``."""
    n = params.n
    U = params.u_trunc if params.u_trunc is not None else truncation_halfwidth(f, n)
    probe = np.linspace(-U, U, 2001)
    scale = max(float(np.max(np.abs(f(probe)))), 1e-300)
    tol_abs = params.tol * scale * math.pi / 2.0
    rule = _Rule(params.order)
    vals, errs = [], []
    for lam in np.asarray(lams, dtype=float):
        val, err = _hs_scalar(f, n, float(lam), U, tol_abs, rule, params.max_cells)
        vals.append(val)
        errs.append(err * 2.0 / math.pi)
    return np.array(vals), np.array(errs)


def hs_apply(H, f, params=ExtensionParams()):
    """``f(H)`` from the Helffer-Sjöstrand integral, resolvents taken in the eigenbasis."""
    lam, vec = H.eigh() if isinstance(H, Hamiltonian) else np.linalg.eigh(np.asarray(H))
    g, _ = hs_scalar_values(f, lam, params)
    M = (vec * g) @ vec.conj().T
    return 0.5 * (M + M.conj().T)


def hs_norm_ratio(H, f, n, params=None):
    """``||f(H)|| / |||f|||_{n+1}`` for the HS-computed ``f(H)``."""
    params = params or ExtensionParams(n=n)
    M = hs_apply(H, f, params)
    return schatten_norm(M, np.inf) / a_norm(f, n + 1)


# -- kernel decay -----------------------------------------------------------------


@dataclass
class KernelDecayReport:
    rows: list  # (beta, gamma, distance, k, norm, product)
    sup: dict
    monotone: dict
    knee: float
    degenerate: bool

    @property
    def ok(self):
        return all(math.isfinite(s) for s in self.sup.values()) and all(self.monotone.values())


def kernel_decay_experiment(H, f, p, k_list, pairs, method="exact", params=None,
                            knee=4.0, floor=NOISE_FLOOR, shell=1.0, min_distance=0.0):
    """Block norms of ``f(H)`` weighted by ``|beta - gamma|^k``.

    For each ``k`` reports the supremum of ``norm * distance^k`` over pairs
    with ``beta != gamma`` and whether its envelope (maximum over pairs in
    each distance shell ``[j*shell, (j+1)*shell)``) is nonincreasing beyond
    ``knee``.  Norms at or below
    ``floor`` count as zero.
    """
    from .lattice import cube_sites

    dom = H.domain
    if not p > dom.d / 2.0:
        from .ctbounds import PreconditionError
        raise PreconditionError("p > d/2", f"p={p}, d={dom.d}")
    if method == "exact":
        F = H.func(f)
    elif method == "hs":
        F = hs_apply(H, f, params or ExtensionParams())
    else:
        raise ValueError(f"unknown method {method!r}")
    norms = []
    for beta, gamma in pairs:
        dist = float(np.linalg.norm(np.subtract(beta, gamma)))
        if dist == 0 or dist < min_distance - 1e-12:
            continue
        val = schatten_norm(F[np.ix_(cube_sites(dom, beta), cube_sites(dom, gamma))], p)
        norms.append((tuple(int(b) for b in beta), tuple(int(g) for g in gamma), dist, val))
    rows, sup, mono = [], {}, {}
    degenerate = all(v <= floor for *_, v in norms)
    for k in k_list:
        prods = []
        for beta, gamma, dist, val in norms:
            prod = val * dist**k if val > floor else 0.0
            rows.append((beta, gamma, dist, k, val, prod))
            prods.append((dist, prod))
        sup[k] = max((pr for _, pr in prods), default=0.0)
        # the kernel changes sign, so single pairs oscillate; compare shell maxima
        env = {}
        for dist, pr in prods:
            if dist >= knee - 1e-12:
                key = int(np.floor(dist / shell + 1e-9))
                env[key] = max(env.get(key, 0.0), pr)
        seq = [env[key] for key in sorted(env)]
        mono[k] = all(b <= a * (1 + 1e-12) for a, b in zip(seq, seq[1:]))
    return KernelDecayReport(rows, sup, mono, knee, degenerate)
