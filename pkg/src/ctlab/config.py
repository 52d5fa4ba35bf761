"""Experiment configuration: YAML in, validated nested dataclasses out.

Every key is checked against a fixed schema before any computation runs;
unknown keys and out-of-range values raise :class:`ConfigError` naming the
offending field with its dotted path.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from dataclasses import field as _field
from typing import Optional

import yaml

EXPERIMENTS = (
    "build", "spectrum", "constants", "ct-decay", "kernel-decay",
    "hs-apply", "fk-semigroup", "smoothing",
)


class ConfigError(ValueError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass
class DomainSpec:
    d: int = 2
    extents: tuple = (12, 12)
    h: float = 1.0
    mask: Optional[dict] = None  # {"lower": [...], "upper": [...]} in grid indices


@dataclass
class PotentialSpec:
    kind: str = "zero"  # zero | constant | anderson
    c: float = 0.0
    width: float = 1.0
    seed: int = 0


@dataclass
class FieldSpec:
    kind: str = "zero"  # zero | landau | symmetric | random
    B: float = 0.0
    scale: float = 0.0
    seed: int = 0


@dataclass
class FunctionSpec:
    kind: str = "gaussian"  # gaussian | damped-polynomial | bump | zero
    scale: float = 1.0
    center: float = 0.0
    coeffs: tuple = (1.0,)
    alpha: float = 1.0


@dataclass
class MCSpec:
    count: int = 10_000
    dt: float = 0.01
    sites: Optional[tuple] = None  # interior site indices; default: every site
    sigma: float = 1.0  # width of the Gaussian initial datum


@dataclass
class ExperimentParams:
    z: Optional[float] = None  # default E0 - 1
    n: int = 1
    p: float = 2.0
    q: float = 2.0
    k_list: tuple = (1, 2, 3, 4)
    t: float = 0.5
    t_grid: tuple = (0.1, 5.0, 20)  # start, stop, count
    branch: int = 1
    strategy: str = "max-a0"
    s: Optional[float] = None
    kappa: float = 10.0
    theta1: float = 1e-3
    lambda0_offset: float = 1.0
    delta0: float = 0.9
    max_distance: float = 8.0
    knee: float = 4.0
    hs_n: int = 1
    hs_tol: float = 1e-9
    method: str = "exact"  # kernel-decay: exact | hs
    function: FunctionSpec = _field(default_factory=FunctionSpec)
    mc: MCSpec = _field(default_factory=MCSpec)


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    output: Optional[str] = None
    domain: DomainSpec = _field(default_factory=DomainSpec)
    potential: PotentialSpec = _field(default_factory=PotentialSpec)
    field: FieldSpec = _field(default_factory=FieldSpec)
    params: ExperimentParams = _field(default_factory=ExperimentParams)

    def to_dict(self):
        return asdict(self)


# -- schema helpers ---------------------------------------------------------------


def _int(path, v, lo=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(path, f"must be >= {lo}")
    return v


def _num(path, v, positive=False, allow_inf=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        if allow_inf and v in ("inf", "infinity"):
            return math.inf
        raise ConfigError(path, f"expected a number, got {v!r}")
    v = float(v)
    if math.isnan(v) or (math.isinf(v) and not allow_inf):
        raise ConfigError(path, "must be finite")
    if positive and not v > 0:
        raise ConfigError(path, "must be positive")
    return v


def _choice(path, v, options):
    if v not in options:
        raise ConfigError(path, f"must be one of {', '.join(options)} (got {v!r})")
    return v


def _section(path, raw, cls, converters):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(path, "expected a mapping")
    unknown = sorted(set(raw) - set(converters))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown key")
    kwargs = {}
    for key, conv in converters.items():
        if key in raw:
            kwargs[key] = conv(f"{path}.{key}" if path else key, raw[key])
    return cls(**kwargs)


def _int_list(path, v, lo=None):
    if not isinstance(v, (list, tuple)) or not v:
        raise ConfigError(path, "expected a non-empty list")
    return tuple(_int(f"{path}[{i}]", x, lo) for i, x in enumerate(v))


def _num_list(path, v):
    if not isinstance(v, (list, tuple)) or not v:
        raise ConfigError(path, "expected a non-empty list")
    return tuple(_num(f"{path}[{i}]", x) for i, x in enumerate(v))


def _optional(conv):
    return lambda path, v: None if v is None else conv(path, v)


def _mask(path, v):
    if not isinstance(v, dict) or set(v) != {"lower", "upper"}:
        raise ConfigError(path, "mask must have exactly the keys lower and upper")
    return {"lower": list(_int_list(f"{path}.lower", v["lower"], 0)),
            "upper": list(_int_list(f"{path}.upper", v["upper"], 1))}


def _t_grid(path, v):
    vals = _num_list(path, v)
    if len(vals) != 3:
        raise ConfigError(path, "expected [start, stop, count]")
    start, stop, count = vals
    if not (0 < start < stop):
        raise ConfigError(path, "need 0 < start < stop")
    if count != int(count) or count < 2:
        raise ConfigError(path, "count must be an integer >= 2")
    return (start, stop, int(count))


def parse_config(raw, experiment=None):
    """Validate a parsed YAML mapping; ``experiment`` (from the subcommand) wins if given."""
    if not isinstance(raw, dict):
        raise ConfigError("", "config must be a mapping")
    top = {"experiment", "seed", "output", "domain", "potential", "field", "params"}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    kind = raw.get("experiment", experiment)
    if experiment is not None and kind != experiment:
        raise ConfigError("experiment", f"config is for {kind!r}, not {experiment!r}")
    if kind is None:
        raise ConfigError("experiment", "missing")
    _choice("experiment", kind, EXPERIMENTS)

    dom = _section("domain", raw.get("domain"), DomainSpec, {
        "d": lambda p, v: _int(p, v),
        "extents": lambda p, v: _int_list(p, v, 1),
        "h": lambda p, v: _num(p, v, positive=True),
        "mask": _optional(_mask),
    })
    if dom.d < 2:
        raise ConfigError("domain.d", "dimension d >= 2 required")
    if "extents" not in (raw.get("domain") or {}):
        dom.extents = (12,) * dom.d
    if len(dom.extents) != dom.d:
        raise ConfigError("domain.extents", f"expected {dom.d} entries")
    inv = 1.0 / dom.h
    if abs(inv - round(inv)) > 1e-9:
        raise ConfigError("domain.h", "1/h must be an integer")
    if dom.mask is not None:
        for key in ("lower", "upper"):
            if len(dom.mask[key]) != dom.d:
                raise ConfigError(f"domain.mask.{key}", f"expected {dom.d} entries")
        if any(lo >= hi or hi > e for lo, hi, e in zip(dom.mask["lower"], dom.mask["upper"], dom.extents)):
            raise ConfigError("domain.mask", "need lower < upper <= extents on every axis")

    pot = _section("potential", raw.get("potential"), PotentialSpec, {
        "kind": lambda p, v: _choice(p, v, ("zero", "constant", "anderson")),
        "c": lambda p, v: _num(p, v),
        "width": lambda p, v: _num(p, v, positive=True),
        "seed": lambda p, v: _int(p, v, 0),
    })
    fld = _section("field", raw.get("field"), FieldSpec, {
        "kind": lambda p, v: _choice(p, v, ("zero", "landau", "symmetric", "random")),
        "B": lambda p, v: _num(p, v),
        "scale": lambda p, v: _num(p, v),
        "seed": lambda p, v: _int(p, v, 0),
    })
    raw_params = dict(raw.get("params") or {})
    fn = _section("params.function", raw_params.pop("function", None), FunctionSpec, {
        "kind": lambda p, v: _choice(p, v, ("gaussian", "damped-polynomial", "bump", "zero")),
        "scale": lambda p, v: _num(p, v, positive=True),
        "center": lambda p, v: _num(p, v),
        "coeffs": _num_list,
        "alpha": lambda p, v: _num(p, v, positive=True),
    })
    mc = _section("params.mc", raw_params.pop("mc", None), MCSpec, {
        "count": lambda p, v: _int(p, v, 1),
        "dt": lambda p, v: _num(p, v, positive=True),
        "sites": lambda p, v: None if v is None else _int_list(p, v, 0),
        "sigma": lambda p, v: _num(p, v, positive=True),
    })
    prm = _section("params", raw_params, ExperimentParams, {
        "z": _optional(lambda p, v: _num(p, v)),
        "n": lambda p, v: _int(p, v, 1),
        "p": lambda p, v: _num(p, v, allow_inf=True),
        "q": lambda p, v: _num(p, v, allow_inf=True),
        "k_list": lambda p, v: _int_list(p, v, 0),
        "t": lambda p, v: _num(p, v, positive=True),
        "t_grid": _t_grid,
        "branch": lambda p, v: _int(p, v),
        "strategy": lambda p, v: _choice(p, v, ("max-a0", "fixed-s")),
        "s": _optional(lambda p, v: _num(p, v, positive=True)),
        "kappa": lambda p, v: _num(p, v),
        "theta1": lambda p, v: _num(p, v),
        "lambda0_offset": lambda p, v: _num(p, v),
        "delta0": lambda p, v: _num(p, v),
        "max_distance": lambda p, v: _num(p, v, positive=True),
        "knee": lambda p, v: _num(p, v),
        "hs_n": lambda p, v: _int(p, v, 1),
        "hs_tol": lambda p, v: _num(p, v, positive=True),
        "method": lambda p, v: _choice(p, v, ("exact", "hs")),
    })
    prm.function, prm.mc = fn, mc
    _check_preconditions(kind, dom, fld, prm)

    seed = _int("seed", raw.get("seed", 0), 0)
    output = raw.get("output")
    if output is not None and not isinstance(output, str):
        raise ConfigError("output", "expected a path string")
    return ExperimentConfig(kind, seed, output, dom, pot, fld, prm)


def _check_preconditions(kind, dom, fld, prm):
    d = dom.d
    if prm.p < 1:
        raise ConfigError("params.p", "Schatten index p >= 1 required")
    if kind == "ct-decay" and not prm.p > d / (2.0 * prm.n):
        raise ConfigError("params.p", "p > d/(2n) required")
    if kind == "kernel-decay" and not prm.p > d / 2.0:
        raise ConfigError("params.p", "p > d/2 required")
    if not 0 < prm.theta1 < 1:
        raise ConfigError("params.theta1", "Theta1 in (0, 1) required")
    if prm.branch not in (1, 2):
        raise ConfigError("params.branch", "branch must be 1 or 2")
    if prm.strategy == "fixed-s" and prm.s is None:
        raise ConfigError("params.s", "fixed-s strategy needs s")
    if not 0 < prm.delta0 < 1:
        raise ConfigError("params.delta0", "delta0 in (0, 1) required")
    if not prm.kappa > 1:
        raise ConfigError("params.kappa", "kappa > 1 required (C* is never below c_z)")
    if not prm.lambda0_offset > 0:
        raise ConfigError("params.lambda0_offset", "offset > 0 required so that lambda0 < min{-Theta2, E0}")
    if kind == "smoothing":
        if not (prm.p == 1 or math.isinf(prm.q) or prm.p == prm.q == 2):
            raise ConfigError("params", "(p, q) must have p = 1 or q = inf, or p = q = 2")
    if fld.kind in ("landau", "symmetric") and d < 2:
        raise ConfigError("field.kind", "magnetic field needs d >= 2")
    if kind == "fk-semigroup" and fld.kind == "random":
        raise ConfigError("field.kind", "fk-semigroup needs a continuum field (zero, landau or symmetric)")
    if kind == "fk-semigroup" and prm.mc.dt > prm.t:
        raise ConfigError("params.mc.dt", "dt <= t required")


def load_config(path, experiment=None):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError("", f"cannot read config: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("", f"malformed YAML: {exc}") from None
    return parse_config(raw if raw is not None else {}, experiment)
