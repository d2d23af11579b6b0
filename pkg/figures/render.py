#!/usr/bin/env python3
"""Render motorlab CSV outputs into figures, driven by a JSON manifest.

Usage:
    python figures/render.py MANIFEST.json [--dump-layers LAYERS.json]

The manifest holds {"figures": [spec, ...]} (or a bare list). Each spec:

    kind      "heatmap" | "line-overlay" | "vector-plane" | "training-curve"
    inputs    list of CSV paths (heatmap panels share one color scale)
    output    image path (PNG)
    value     column to plot (heatmap cell value / overlay y axis)
    reference optional dashed-overlay column (line-overlay only)
    title     optional figure title

Relative paths in a spec resolve against the manifest's directory. Numeric
values are drawn exactly as found in the CSV (no smoothing); heatmap cells
whose value column is empty stay blank. Images carry no timestamps, so
identical inputs give identical bytes. Every render returns its "data
layer" (the exact arrays drawn), which the tests compare against golden
files instead of pixels.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

#: Column schemas of the producing tool, keyed by logical file kind.
SCHEMAS = {
    "sweep": ("omega_final_rad_s", "T_L_Nm", "settling_time_s", "overshoot_rel",
              "final_error_rel", "efficiency", "valid"),
    "trajectory": ("t", "i_d", "i_q", "omega_e", "v_d", "v_q", "omega_ref", "T_L",
                   "P_elec", "P_cu", "T_e"),
    "metrics": ("epoch", "L_s", "L_c", "L_o", "L_f", "total", "settled_fraction",
                "mean_overshoot", "mean_efficiency", "diverged_count"),
}

KIND_SCHEMA = {
    "heatmap": "sweep",
    "line-overlay": "trajectory",
    "vector-plane": "trajectory",
    "training-curve": "metrics",
}

#: PNG metadata is pinned so renders are byte-stable.
SAVEFIG_KWARGS = {"dpi": 110, "metadata": {"Software": None}}


class SchemaError(ValueError):
    """A CSV is missing columns the figure kind requires."""


class ManifestError(ValueError):
    pass


def read_columns(path: str, schema: str) -> dict[str, list[str]]:
    """Load a CSV and check it carries every column of the named schema."""
    try:
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise SchemaError(f"{path}: empty file (no header row)") from None
            rows = list(reader)
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc}") from exc
    missing = [col for col in SCHEMAS[schema] if col not in header]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {missing} required for "
                          f"{schema} files")
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    index = {col: header.index(col) for col in header}
    return {col: [row[index[col]] for row in rows] for col in header}


def _floats(values: list[str]) -> np.ndarray:
    """Parse numbers, mapping empty cells to NaN (undefined)."""
    return np.array([float(v) if v not in ("", None) else math.nan for v in values])


def _heatmap_grid(table: dict[str, list[str]], value: str):
    """Pivot a sweep file onto its speed x torque lattice; missing cells NaN."""
    if value not in table:
        raise SchemaError(f"value column {value!r} not present in sweep file")
    speeds = _floats(table["omega_final_rad_s"])
    torques = _floats(table["T_L_Nm"])
    values = _floats(table[value])
    s_axis = np.unique(speeds)
    t_axis = np.unique(torques)
    grid = np.full((len(t_axis), len(s_axis)), math.nan)
    for s, t, v in zip(speeds, torques, values):
        grid[np.searchsorted(t_axis, t), np.searchsorted(s_axis, s)] = v
    return s_axis, t_axis, grid


def render_heatmap(spec: dict, base: str) -> dict:
    value = spec.get("value", "settling_time_s")
    panels = []
    grids = []
    for path in spec["inputs"]:
        table = read_columns(_resolve(path, base), "sweep")
        s_axis, t_axis, grid = _heatmap_grid(table, value)
        grids.append(grid)
        panels.append({"input": path, "speed_axis": s_axis.tolist(),
                       "torque_axis": t_axis.tolist(),
                       "values": [_jsonable(row) for row in grid]})
    finite = np.concatenate([grid.ravel() for grid in grids])
    finite = finite[np.isfinite(finite)]
    vmin = float(finite.min()) if finite.size else 0.0
    vmax = float(finite.max()) if finite.size else 1.0

    fig, axes = plt.subplots(1, len(panels), figsize=(5.2 * len(panels), 4.2),
                             squeeze=False)
    mesh = None
    for ax, panel, grid in zip(axes[0], panels, grids):
        mesh = ax.pcolormesh(panel["speed_axis"], panel["torque_axis"],
                             np.ma.masked_invalid(grid),
                             vmin=vmin, vmax=vmax, shading="nearest")
        ax.set_xlabel("final speed [rad/s el.]")
        ax.set_ylabel("load torque [N m]")
        ax.set_title(os.path.basename(panel["input"]))
    if mesh is not None:
        fig.colorbar(mesh, ax=axes[0].tolist(), label=value)
    if spec.get("title"):
        fig.suptitle(spec["title"])
    _save(fig, spec, base)
    return {"kind": "heatmap", "value": value, "vmin": vmin, "vmax": vmax,
            "panels": panels}


def render_line_overlay(spec: dict, base: str) -> dict:
    value = spec.get("value", "omega_e")
    reference = spec.get("reference")
    lines = []
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for path in spec["inputs"]:
        table = read_columns(_resolve(path, base), "trajectory")
        if value not in table:
            raise SchemaError(f"value column {value!r} not present in {path}")
        t = _floats(table["t"])
        y = _floats(table[value])
        keep = np.isfinite(y)
        ax.plot(t[keep], y[keep], linewidth=1.0)
        entry = {"input": path, "t": _jsonable(t[keep]), "y": _jsonable(y[keep])}
        if reference:
            if reference not in table:
                raise SchemaError(f"reference column {reference!r} not present in {path}")
            r = _floats(table[reference])
            keep_r = np.isfinite(r)
            ax.plot(t[keep_r], r[keep_r], linestyle=":", linewidth=0.9, color="gray")
            entry["reference"] = _jsonable(r[keep_r])
        lines.append(entry)
    ax.set_xlabel("t [s]")
    ax.set_ylabel(value)
    if spec.get("title"):
        ax.set_title(spec["title"])
    _save(fig, spec, base)
    return {"kind": "line-overlay", "value": value, "lines": lines}


def render_vector_plane(spec: dict, base: str) -> dict:
    paths_out = []
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    for path in spec["inputs"]:
        table = read_columns(_resolve(path, base), "trajectory")
        i_d = _floats(table["i_d"])
        i_q = _floats(table["i_q"])
        ax.plot(i_d, i_q, linewidth=0.9)
        paths_out.append({"input": path, "i_d": _jsonable(i_d), "i_q": _jsonable(i_q)})
    ax.set_xlabel("i_d [A]")
    ax.set_ylabel("i_q [A]")
    ax.set_aspect("equal", adjustable="datalim")
    if spec.get("title"):
        ax.set_title(spec["title"])
    _save(fig, spec, base)
    return {"kind": "vector-plane", "trajectories": paths_out}


def render_training_curve(spec: dict, base: str) -> dict:
    columns = spec.get("columns", ["L_s", "L_c", "L_o", "L_f", "total"])
    if len(spec["inputs"]) != 1:
        raise ManifestError("training-curve expects exactly one metrics CSV")
    table = read_columns(_resolve(spec["inputs"][0], base), "metrics")
    epochs = _floats(table["epoch"])
    curves = {}
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for column in columns:
        if column not in table:
            raise SchemaError(f"column {column!r} not present in metrics file")
        y = _floats(table[column])
        ax.plot(epochs, y, label=column, linewidth=1.0)
        curves[column] = _jsonable(y)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    if spec.get("title"):
        ax.set_title(spec["title"])
    _save(fig, spec, base)
    return {"kind": "training-curve", "epoch": _jsonable(epochs), "curves": curves}


RENDERERS = {
    "heatmap": render_heatmap,
    "line-overlay": render_line_overlay,
    "vector-plane": render_vector_plane,
    "training-curve": render_training_curve,
}


def _resolve(path: str, base: str) -> str:
    return path if os.path.isabs(path) else os.path.join(base, path)


def _jsonable(array: np.ndarray) -> list:
    return [None if not math.isfinite(v) else float(v) for v in np.asarray(array).ravel()]


def _save(fig, spec: dict, base: str) -> None:
    out = _resolve(spec["output"], base)
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    fig.savefig(out, **SAVEFIG_KWARGS)
    plt.close(fig)


def render(spec: dict, base: str = ".") -> dict:
    """Render one FigureSpec; returns the exact data layer that was drawn."""
    for key in ("kind", "inputs", "output"):
        if key not in spec:
            raise ManifestError(f"figure spec missing required key {key!r}: {spec}")
    kind = spec["kind"]
    if kind not in RENDERERS:
        raise ManifestError(f"unknown figure kind {kind!r}; "
                            f"expected one of {sorted(RENDERERS)}")
    if not spec["inputs"]:
        raise ManifestError("figure spec has no inputs")
    return RENDERERS[kind](spec, base)


def render_manifest(manifest_path: str) -> list[dict]:
    with open(manifest_path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    specs = payload["figures"] if isinstance(payload, dict) else payload
    base = os.path.dirname(os.path.abspath(manifest_path))
    return [render(spec, base) for spec in specs]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("manifest", help="figure manifest JSON")
    parser.add_argument("--dump-layers", default=None, metavar="PATH",
                        help="also write the rendered data layers as JSON")
    args = parser.parse_args(argv)
    try:
        layers = render_manifest(args.manifest)
    except (SchemaError, ManifestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.dump_layers:
        with open(args.dump_layers, "w", encoding="utf-8") as fh:
            json.dump(layers, fh, indent=2)
            fh.write("\n")
    print(f"rendered {len(layers)} figure(s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
