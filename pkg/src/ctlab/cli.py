"""Command-line runner: ``ctlab <experiment> --config cfg.yaml --out dir``.

Exit codes: 0 success, 2 validation error, 3 infeasible parameters,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_VALIDATION, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 2, 3, 4

log = logging.getLogger("ctlab")


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return str(int(x))
    if isinstance(x, (tuple, list)):
        return " ".join(_fmt(v) for v in x)
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out, cfg, outputs):
    entries = [{"file": Path(p).name, "sha256": sha256(p), "bytes": Path(p).stat().st_size}
               for p in outputs]
    doc = {"experiment": cfg.experiment, "seed": cfg.seed, "config": cfg.to_dict(), "outputs": entries}
    path = Path(out) / "manifest.json"
    # json prints floats with repr, which round-trips exactly
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# -- model construction -------------------------------------------------------------


def build_model(cfg):
    from . import lattice as lat

    ds = cfg.domain
    mask = None
    if ds.mask is not None:
        mask = lat.box_mask(ds.extents, ds.mask["lower"], ds.mask["upper"])
    dom = lat.build_domain(ds.d, ds.extents, ds.h, mask)
    ps = cfg.potential
    V = {
        "zero": lambda: None,
        "constant": lambda: lat.constant_scalar(dom, ps.c),
        "anderson": lambda: lat.anderson_scalar(dom, ps.width, ps.seed),
    }[ps.kind]()
    fs = cfg.field
    A = {
        "zero": lambda: None,
        "landau": lambda: lat.landau_gauge(dom, fs.B),
        "symmetric": lambda: lat.symmetric_gauge(dom, fs.B),
        "random": lambda: lat.random_vector_potential(dom, fs.scale, fs.seed),
    }[fs.kind]()
    H = lat.assemble_hamiltonian(dom, A, V)
    H0 = H if A is None else lat.assemble_hamiltonian(dom, None, V)
    return dom, A, V, H, H0


def smooth_function(spec):
    from . import hscalc

    if spec.kind == "gaussian":
        return hscalc.gaussian(spec.scale, spec.center)
    if spec.kind == "damped-polynomial":
        return hscalc.damped_polynomial(spec.coeffs, spec.alpha)
    if spec.kind == "bump":
        return hscalc.bump(spec.center, spec.scale)
    return hscalc.zero_function()


def admissible(cfg, H, H0, V):
    from . import ctbounds as ct

    prm = cfg.params
    theta1, theta2 = (prm.theta1, 0.0) if V is None else ct.form_bound_constants(V, prm.theta1)
    e0, lambda0 = ct.e0_lambda0(H0, theta2, prm.lambda0_offset)
    z = e0 - 1.0 if prm.z is None else prm.z
    params = ct.admissible_params(
        H.eigenvalues, z, lambda0, theta1, theta2, e0, branch=prm.branch,
        strategy=prm.strategy, s=prm.s, kappa=prm.kappa,
    )
    return params, z


# -- experiments ----------------------------------------------------------------------


def run_build(cfg, out):
    import numpy as np

    dom, A, V, H, _ = build_model(cfg)
    vals = V.on(dom) if V is not None else np.zeros(dom.n_sites)
    hdr = ["site"] + [f"x{i + 1}" for i in range(dom.d)] + ["V"]
    rows = [(i, *map(float, x), float(v)) for i, (x, v) in enumerate(zip(dom.coords, vals))]
    herm = float(np.abs(H.matrix - H.matrix.conj().T).max())
    return [
        write_csv(out / "sites.csv", hdr, rows),
        write_csv(out / "hamiltonian.csv", ["quantity", "value"], [
            ("n_sites", dom.n_sites), ("h", dom.h), ("hermitian_residual", herm),
        ]),
    ]


def run_spectrum(cfg, out):
    _, _, _, H, _ = build_model(cfg)
    return [write_csv(out / "spectrum.csv", ["index", "eigenvalue"],
                      [(k, float(v)) for k, v in enumerate(H.eigenvalues)])]


def _constant_rows(params, z):
    return [
        ("theta1", params.theta1), ("theta2", params.theta2), ("E0", params.e0),
        ("lambda0", params.lambda0), ("z", float(z)), ("c_z", params.c_z),
        ("delta", params.delta), ("branch", params.branch), ("s", params.s),
        ("a0", params.a0), ("xi1", params.xi1), ("xi2", params.xi2), ("c_star", params.c_star),
    ]


def run_constants(cfg, out):
    _, _, V, H, H0 = build_model(cfg)
    params, z = admissible(cfg, H, H0, V)
    return [write_csv(out / "constants.csv", ["name", "value"], _constant_rows(params, z))]


def run_ct_decay(cfg, out):
    import numpy as np

    from . import ctbounds as ct
    from .plotting import emit_plot

    dom, _, V, H, H0 = build_model(cfg)
    prm = cfg.params
    params, z = admissible(cfg, H, H0, V)
    pairs = ct.default_pairs(dom, prm.max_distance)
    res = ct.ct_decay_experiment(H, z, prm.n, prm.p, pairs, params, delta0=prm.delta0)
    hdr = ["beta", "gamma", "distance", "p", "n", "norm", "predicted_bound",
           "branch", "a0", "s", "c_star"]
    rows = [(b.beta, b.gamma, b.distance, b.p, b.n, b.value, bd,
             params.branch, params.a0, params.s, params.c_star) for b, bd in res.rows]
    # summary row: fitted rate in the norm column, fitted prefactor in predicted_bound
    rows.append(("fit", "", "", prm.p, prm.n, res.fit.rate, math.exp(res.fit.log_prefactor),
                 params.branch, params.a0, params.s, params.c_star))
    path = write_csv(out / "ct_decay.csv", hdr, rows)
    checks = write_csv(out / "ct_decay_checks.csv", ["check", "value"],
                       sorted((k, int(v) if isinstance(v, (bool, np.bool_)) else v) for k, v in res.report.items()))
    svg = out / "ct_decay.svg"
    emit_plot(path, "decay", svg)
    log.info("fitted rate %.4f, a0 %.4f, bound_ok %s", res.fit.rate, params.a0, res.report["bound_ok"])
    return [path, checks, svg, write_csv(out / "constants.csv", ["name", "value"], _constant_rows(params, z))]


def run_kernel_decay(cfg, out):
    from . import ctbounds as ct
    from . import hscalc
    from .plotting import emit_plot

    dom, _, _, H, _ = build_model(cfg)
    prm = cfg.params
    f = smooth_function(prm.function)
    pairs = ct.default_pairs(dom, prm.max_distance)
    rep = hscalc.kernel_decay_experiment(
        H, f, prm.p, prm.k_list, pairs, method=prm.method,
        params=hscalc.ExtensionParams(n=prm.hs_n, tol=prm.hs_tol), knee=prm.knee,
    )
    hdr = ["beta", "gamma", "distance", "p", "k", "norm", "norm_times_distance_pow_k"]
    rows = [(b, g, dist, prm.p, k, val, prod) for b, g, dist, k, val, prod in rep.rows]
    path = write_csv(out / "kernel_decay.csv", hdr, rows)
    summ = write_csv(out / "kernel_decay_summary.csv", ["k", "sup", "nonincreasing"],
                     [(k, rep.sup[k], int(rep.monotone[k])) for k in prm.k_list])
    outputs = [path, summ]
    if not rep.degenerate:
        svg = out / "kernel_decay.svg"
        emit_plot(path, "decay", svg)
        outputs.append(svg)
    return outputs


def run_hs_apply(cfg, out):
    import numpy as np

    from . import hscalc
    from .schatten import schatten_norm

    _, _, _, H, _ = build_model(cfg)
    prm = cfg.params
    f = smooth_function(prm.function)
    ep = hscalc.ExtensionParams(n=prm.hs_n, tol=prm.hs_tol)
    M = hscalc.hs_apply(H, f, ep)
    exact = H.func(f)
    ref = schatten_norm(exact, np.inf)
    err = schatten_norm(M - exact, np.inf)
    an = hscalc.a_norm(f, prm.hs_n + 1)
    dbar = hscalc.dbar_bound_check(f, prm.hs_n, seed=cfg.seed)
    rows = [
        ("n", prm.hs_n), ("tol", prm.hs_tol), ("norm_hs", schatten_norm(M, np.inf)),
        ("norm_exact", ref), ("abs_error", err), ("rel_error", err / ref if ref > 0 else err),
        ("a_norm_n_plus_1", an), ("norm_ratio", schatten_norm(M, np.inf) / an if an > 0 else 0.0),
        ("dbar_C", dbar.C), ("dbar_violations", dbar.violations),
    ]
    diag = [(i, float(a.real), float(b.real)) for i, (a, b) in enumerate(zip(np.diag(M), np.diag(exact)))]
    return [
        write_csv(out / "hs_apply.csv", ["quantity", "value"], rows),
        write_csv(out / "hs_apply_diagonal.csv", ["site", "hs", "exact"], diag),
    ]


def run_fk_semigroup(cfg, out):
    import numpy as np

    from . import fk
    from .lattice import expm_hermitian

    dom, A, V, H, _ = build_model(cfg)
    prm = cfg.params
    mc = prm.mc
    Vc = None if V is None else fk.lattice_scalar_field(dom, V).V
    fs = cfg.field
    if fs.kind == "landau":
        fld = fk.landau_field(fs.B, Vc, dom.d)
    elif fs.kind == "symmetric":
        fld = fk.symmetric_field(fs.B, Vc, dom.d)
    else:
        fld = fk.ContinuumField(V=Vc, d=dom.d)
    c = dom.coords.mean(axis=0)
    sigma = mc.sigma

    def phi(x):
        return np.exp(-np.sum((x - c) ** 2, axis=-1) / (2 * sigma**2))

    sites = None if mc.sites is None else np.array(mc.sites)
    if sites is not None and np.any(sites >= dom.n_sites):
        from .config import ConfigError
        raise ConfigError("params.mc.sites", f"site index out of range (n_sites={dom.n_sites})")
    est = fk.fk_semigroup_apply(dom, fld, prm.t, phi, mc.count, mc.dt, cfg.seed, sites)
    ref = expm_hermitian(H, prm.t) @ phi(dom.coords)
    return [
        write_csv(out / "fk_semigroup.csv", ["site", "estimate_re", "estimate_im", "stderr"], est.rows()),
        write_csv(out / "fk_oracle.csv", ["site", "expm_re", "expm_im"],
                  [(int(s), float(ref[s].real), float(ref[s].imag)) for s in est.sites]),
    ]


def run_smoothing(cfg, out):
    import numpy as np

    from . import fk
    from .plotting import emit_plot

    dom, A, V, _, _ = build_model(cfg)
    prm = cfg.params
    t0, t1, count = prm.t_grid
    rep = fk.smoothing_check(dom, A, V, np.linspace(t0, t1, count), prm.p, prm.q)
    path = write_csv(out / "smoothing.csv", ["t", "p", "q", "norm_AV", "norm_0V", "envelope"], rep.rows())
    fit = write_csv(out / "smoothing_fit.csv", ["quantity", "value"], [
        ("gamma", rep.gamma), ("C", rep.C), ("E", rep.E), ("E_unconstrained", rep.E_free),
        ("E0", rep.E0), ("chain_ok", int(rep.chain_ok)), ("envelope_ok", int(rep.envelope_ok)),
    ])
    svg = out / "smoothing.svg"
    emit_plot(path, "envelope", svg)
    return [path, fit, svg]


RUNNERS = {
    "build": run_build,
    "spectrum": run_spectrum,
    "constants": run_constants,
    "ct-decay": run_ct_decay,
    "kernel-decay": run_kernel_decay,
    "hs-apply": run_hs_apply,
    "fk-semigroup": run_fk_semigroup,
    "smoothing": run_smoothing,
}


def run_config(path, experiment=None, out=None, seed=None):
    """Validate, run and write artifacts plus ``manifest.json``; returns the output files."""
    from .config import load_config

    cfg = load_config(path, experiment)
    if seed is not None:
        cfg.seed = int(seed)
    out_dir = Path(out or cfg.output or "out")
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = RUNNERS[cfg.experiment](cfg, out_dir)
    return outputs + [write_manifest(out_dir, cfg, outputs)]


def _classify(exc):
    from . import ctbounds as ct
    from .config import ConfigError
    from .hscalc import DivergentNorm, QuadratureError
    from .lattice import DomainError
    from .plotting import PlotError

    if isinstance(exc, ct.Infeasible):
        return EXIT_INFEASIBLE
    if isinstance(exc, (ConfigError, DomainError, PlotError, ct.PreconditionError, DivergentNorm)):
        return EXIT_VALIDATION
    if isinstance(exc, (QuadratureError, ct.RadiusTooSmall, ArithmeticError)):
        return EXIT_NUMERICAL
    import numpy as np

    if isinstance(exc, np.linalg.LinAlgError):
        return EXIT_NUMERICAL
    return None


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="seed (overrides the config)")
    common.add_argument("--threads", type=int, help="BLAS thread cap")
    common.add_argument("--verbose", action="store_true")
    ap = argparse.ArgumentParser(prog="ctlab", description="Lattice resolvent and semigroup experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        sub.add_parser(name, parents=[common])
    sub.add_parser("run", parents=[common], help="run the experiment named in the config")
    pl = sub.add_parser("plot", parents=[common])
    pl.add_argument("--csv", required=True)
    pl.add_argument("--kind", choices=("decay", "envelope"), required=True)
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.threads is not None:
        # honoured only if numpy has not been imported yet in this process
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "plot":
            from .plotting import emit_plot

            out = Path(args.out or ".")
            out.mkdir(parents=True, exist_ok=True)
            target = out / (Path(args.csv).stem + ".svg")
            rate = emit_plot(args.csv, args.kind, target)
            if rate is not None:
                print(f"rate {rate:.6g}")
            print(target)
            return EXIT_OK
        if not args.config:
            print("error: --config is required", file=sys.stderr)
            return EXIT_VALIDATION
        experiment = None if args.command == "run" else args.command
        for p in run_config(args.config, experiment, args.out, args.seed):
            print(p)
        return EXIT_OK
    except Exception as exc:  # mapped to exit codes below
        code = _classify(exc)
        if code is None:
            raise
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
