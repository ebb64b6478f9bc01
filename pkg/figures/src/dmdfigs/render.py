"""Deterministic figure rendering from benchmark artifacts.

Two figure kinds are supported: density contour panels (rows are dataset
shapes, columns are system grid points, truth eigenvalues overplotted as red
crosses) and per-bin deviation charts with a discarded-trials panel.
Rendering is a pure function of the input files and the figure spec: fixed
fonts, fixed DPI, no timestamps, so identical inputs give identical bytes.
"""

from __future__ import annotations

import math
import warnings
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .io import read_binstats, read_density

# one color per eigenvalue bin, shared between density crosses and the
# deviation charts
BIN_COLORS = plt.get_cmap("tab10").colors

# marker per trajectory length
SHAPE_MARKERS = {2: "s", 10: "o", 50: "D"}
_FALLBACK_MARKERS = ["v", "^", "<", ">", "P", "X"]

DEFAULT_LEVELS = [0.5, 0.7, 0.85, 0.95]

_RC = {
    "font.family": "DejaVu Sans",
    "font.size": 8,
    "figure.dpi": 100,
    "svg.hashsalt": "dmdfigs",
}


def _shape_marker(length: int, slot: int) -> str:
    return SHAPE_MARKERS.get(length, _FALLBACK_MARKERS[slot % len(_FALLBACK_MARKERS)])


def _save(fig, out_path, dpi: int) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=dpi, metadata={"Software": "dmdfigs"})
    plt.close(fig)
    return out_path


def _contour_levels(values: np.ndarray, quantiles) -> list[float]:
    positive = values[values > 0.0]
    if positive.size == 0:
        return []
    levels = sorted({float(np.quantile(positive, q)) for q in quantiles})
    return [lv for lv in levels if lv > 0.0]


def render_density(spec: dict, out_path) -> Path:
    """Contour panel grid of eigenvalue densities.

    ``spec["rows"]`` is a list of ``{"label", "panels": [{"csv", "title"}]}``
    entries; a missing or unreadable panel is reported on its axes while the
    remaining panels render normally.
    """
    rows = spec["rows"]
    quantiles = spec.get("levels", DEFAULT_LEVELS)
    dpi = int(spec.get("dpi", 150))
    n_rows = len(rows)
    n_cols = max(len(r["panels"]) for r in rows)

    with plt.rc_context(_RC):
        fig, axes = plt.subplots(
            n_rows,
            n_cols,
            figsize=(2.3 * n_cols, 2.3 * n_rows),
            squeeze=False,
            constrained_layout=True,
        )
        for i, row in enumerate(rows):
            for j in range(n_cols):
                ax = axes[i][j]
                panel = row["panels"][j] if j < len(row["panels"]) else None
                if panel is None or not panel.get("csv"):
                    ax.text(0.5, 0.5, "missing input", ha="center", va="center",
                            transform=ax.transAxes)
                    ax.set_axis_off()
                    continue
                try:
                    re_coords, im_coords, values, meta = read_density(
                        panel["csv"], panel.get("meta")
                    )
                except (OSError, ValueError, KeyError) as exc:
                    warnings.warn(f"panel {panel['csv']}: {exc}", stacklevel=2)
                    ax.text(0.5, 0.5, "missing input", ha="center", va="center",
                            transform=ax.transAxes)
                    ax.set_axis_off()
                    continue

                bounds = spec.get("bounds", {})
                re_lim = bounds.get("re", [re_coords[0], re_coords[-1]])
                im_lim = bounds.get("im", [im_coords[0], im_coords[-1]])

                levels = _contour_levels(values, quantiles)
                if levels:
                    ax.contourf(
                        re_coords, im_coords, values,
                        levels=[*levels, float(values.max()) + 1e-300],
                        cmap="Blues",
                    )
                    ax.contour(
                        re_coords, im_coords, values, levels=levels,
                        colors="steelblue", linewidths=0.6,
                    )
                else:
                    ax.text(0.5, 0.35, "all trials discarded", ha="center",
                            va="center", transform=ax.transAxes, fontsize=7)
                for b, (re_t, im_t) in enumerate(meta.get("truth", [])):
                    ax.plot(re_t, im_t, marker="+", color="red", markersize=7,
                            markeredgewidth=1.2)
                ax.set_xlim(re_lim)
                ax.set_ylim(im_lim)
                ax.set_aspect("equal")
                kappa = meta.get("kappa_A")
                kappa_est = meta.get("kappa_est_mean")
                note = []
                if kappa is not None and math.isfinite(kappa):
                    note.append(f"cond(A)={kappa:.3g}")
                if kappa_est is not None and math.isfinite(kappa_est):
                    note.append(f"mean est={kappa_est:.3g}")
                if note:
                    ax.set_xlabel(", ".join(note), fontsize=6)
                if i == 0:
                    ax.set_title(panel.get("title", ""), fontsize=7)
                if j == 0:
                    ax.set_ylabel(row.get("label", ""), fontsize=7)
                ax.tick_params(labelsize=6)
        return _save(fig, out_path, dpi)


def _x_value(row: dict, mode: str) -> float:
    if mode == "kappa":
        return float(row["kappa_A"])
    if mode == "real-eigenvalue":
        # swept value is encoded in the system label as lam<value>
        label = row["system"]
        for part in label.split("_"):
            if part.startswith("lam"):
                return float(part[3:].replace("p", ".").replace("m", "-"))
        if float(row["truth_im"]) == 0.0:
            return float(row["truth_re"])
        raise ValueError(f"cannot extract swept eigenvalue from {label!r}")
    raise ValueError(f"unknown x mode {mode!r}")


def render_std(spec: dict, out_path) -> Path:
    """Per-bin deviation charts plus the discarded-trials panel.

    ``spec["binstats"]`` lists bin-statistics CSVs; ``spec["x"]`` selects the
    horizontal axis (``kappa`` or ``real-eigenvalue``).  Colors follow the
    bin index, markers follow the trajectory length, and shapes missing from
    the data are left out of the legend with a warning.
    """
    paths = spec["binstats"]
    if isinstance(paths, (str, Path)):
        paths = [paths]
    mode = spec.get("x", "kappa")
    algorithm = spec.get("algorithm")
    dpi = int(spec.get("dpi", 150))

    rows = []
    for path in paths:
        rows.extend(read_binstats(path))
    if algorithm:
        rows = [r for r in rows if r["algorithm"] == algorithm]
    if not rows:
        raise ValueError("no bin-statistics rows to plot")

    bins = sorted({int(r["bin"]) for r in rows})
    shapes = sorted({(int(r["shape_n"]), int(r["shape_l"])) for r in rows},
                    key=lambda s: s[1])
    expected = spec.get("shapes")
    if expected:
        wanted = [tuple(s) for s in expected]
        missing = [s for s in wanted if s not in shapes]
        for s in missing:
            warnings.warn(f"shape N={s[0]} L={s[1]} absent from inputs; omitted",
                          stacklevel=2)

    n_panels = len(bins) + 1
    n_cols = min(3, n_panels)
    n_rows = math.ceil(n_panels / n_cols)

    with plt.rc_context(_RC):
        fig, axes = plt.subplots(
            n_rows, n_cols, figsize=(2.8 * n_cols, 2.3 * n_rows),
            squeeze=False, constrained_layout=True,
        )
        flat = [ax for row_axes in axes for ax in row_axes]
        for ax in flat[n_panels:]:
            ax.set_axis_off()

        for idx, b in enumerate(bins):
            ax = flat[idx]
            color = BIN_COLORS[b % len(BIN_COLORS)]
            truth_label = None
            for slot, (n, length) in enumerate(shapes):
                pts = [
                    (_x_value(r, mode), float(r["std"]))
                    for r in rows
                    if int(r["bin"]) == b
                    and (int(r["shape_n"]), int(r["shape_l"])) == (n, length)
                    and r["std"] != "nan"
                ]
                if not pts:
                    continue
                pts.sort()
                xs, ys = zip(*pts)
                ax.plot(
                    xs, ys, marker=_shape_marker(length, slot), color=color,
                    linestyle="-", linewidth=0.7, markersize=4,
                    label=f"N={n} L={length}",
                )
            sample = next(r for r in rows if int(r["bin"]) == b)
            truth_label = (
                f"bin {b}: {float(sample['truth_re']):.3g}"
                f"{float(sample['truth_im']):+.3g}j"
            )
            if mode == "kappa":
                ax.set_xscale("log")
            ax.set_title(truth_label, fontsize=7)
            ax.set_ylabel("std", fontsize=7)
            ax.tick_params(labelsize=6)
            if idx == 0:
                ax.legend(fontsize=6)

        ax = flat[len(bins)]
        for slot, (n, length) in enumerate(shapes):
            pts = sorted(
                {
                    (_x_value(r, mode), float(r["discard_fraction"]))
                    for r in rows
                    if (int(r["shape_n"]), int(r["shape_l"])) == (n, length)
                }
            )
            if not pts:
                continue
            xs, ys = zip(*pts)
            ax.plot(xs, ys, marker=_shape_marker(length, slot), color="dimgray",
                    linestyle="--", linewidth=0.7, markersize=4,
                    label=f"N={n} L={length}")
        if mode == "kappa":
            ax.set_xscale("log")
        ax.set_title("discarded trials", fontsize=7)
        ax.set_ylabel("fraction", fontsize=7)
        ax.set_ylim(-0.02, 1.02)
        ax.tick_params(labelsize=6)
        ax.legend(fontsize=6)
        return _save(fig, out_path, dpi)


def render(spec: dict, out_path) -> Path:
    kind = spec.get("kind")
    if kind == "density":
        return render_density(spec, out_path)
    if kind == "std":
        return render_std(spec, out_path)
    raise ValueError(f"unknown figure kind {kind!r}")
