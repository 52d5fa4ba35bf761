"""Static SVG figures for decay and smoothing CSVs."""

from __future__ import annotations

import csv
import math

import numpy as np


class PlotError(ValueError):
    pass


def _read_csv(path, required):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
            header = rows[0].keys() if rows else []
    except OSError as exc:
        raise PlotError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise PlotError(f"{path}: no data rows")
    missing = [c for c in required if c not in header]
    if missing:
        raise PlotError(f"{path}: missing columns {', '.join(missing)}")
    return rows


def _floats(rows, col):
    out = []
    for i, r in enumerate(rows):
        try:
            out.append(float(r[col]))
        except (TypeError, ValueError):
            raise PlotError(f"row {i + 1}: column {col} is not numeric ({r[col]!r})") from None
    return np.array(out)


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams.update({"svg.hashsalt": "ctlab", "svg.fonttype": "none"})
    return plt


def decay_fit(distance, norm, min_distance=2.0, floor=1e-13):
    keep = (distance >= min_distance) & (norm > floor)
    if keep.sum() < 2 or np.ptp(distance[keep]) == 0:
        raise PlotError("need at least two distinct distances above the noise floor to fit")
    slope, icpt = np.polyfit(distance[keep], np.log(norm[keep]), 1)
    return -float(slope), float(icpt)


def emit_plot(csv_path, kind, out_path):
    """Render ``decay`` (log-linear scatter with fitted line) or ``envelope`` to SVG.

    Returns the fitted rate for ``decay`` and ``None`` for ``envelope``.
    """
    if kind == "decay":
        rows = _read_csv(csv_path, ["distance", "norm"])
        rows = [r for r in rows if r.get("beta") != "fit"]
        if not rows:
            raise PlotError(f"{csv_path}: no data rows")
        r, y = _floats(rows, "distance"), _floats(rows, "norm")
        if "k" in rows[0]:
            # kernel-decay CSVs repeat each norm once per k
            k = _floats(rows, "k")
            r, y = r[k == k.min()], y[k == k.min()]
        rate, icpt = decay_fit(r, y)
        plt = _figure()
        fig, ax = plt.subplots(figsize=(5.5, 4))
        pos = y > 0
        ax.semilogy(r[pos], y[pos], "o", ms=4, label="block norm")
        xs = np.linspace(r.min(), r.max(), 50)
        ax.semilogy(xs, np.exp(icpt - rate * xs), "-", label=f"fit, rate = {rate:.4f}")
        ax.set_xlabel("distance")
        ax.set_ylabel("norm")
        ax.annotate(f"rate = {rate:.4f}", xy=(0.6, 0.9), xycoords="axes fraction")
        ax.legend(loc="lower left")
        result = rate
    elif kind == "envelope":
        rows = _read_csv(csv_path, ["t", "norm_AV", "norm_0V", "envelope"])
        t = _floats(rows, "t")
        plt = _figure()
        fig, ax = plt.subplots(figsize=(5.5, 4))
        ax.semilogy(t, _floats(rows, "norm_AV"), "o-", ms=3, label="with field")
        ax.semilogy(t, _floats(rows, "norm_0V"), "s--", ms=3, label="without field")
        ax.semilogy(t, _floats(rows, "envelope"), "-", label="envelope")
        ax.set_xlabel("t")
        ax.set_ylabel("mixed norm")
        ax.legend()
        result = None
    else:
        raise PlotError(f"unknown plot kind {kind!r}")
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return result


def svg_rate_annotation(svg_path):
    """Rate printed in a decay SVG (text is kept as text, not paths)."""
    import re

    with open(svg_path, encoding="utf-8") as fh:
        m = re.search(r"rate = ([-+0-9.eE]+)", fh.read())
    return float(m.group(1)) if m else math.nan
