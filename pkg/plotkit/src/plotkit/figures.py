"""Turn kgflow run artifacts into report figures.

Reads only the published contract: the per-run diagnostics CSV (one row per
sample time) and the schema-1 summary / decomposition JSON files.  Inputs are
never written; rendering either produces one complete image or fails naming
what is missing.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

KINDS = ("energy_drift", "morawetz", "scatter_residual", "stability_ladder", "bubbles")

#: columns each CSV-based kind needs
REQUIRED_COLUMNS = {
    "energy_drift": ["time", "energy"],
    "morawetz": ["time", "energy", "morawetz_cum"],
    "scatter_residual": ["time", "scatter_residual"],
}

PNG_METADATA = {"Software": "plotkit"}


class SchemaError(ValueError):
    """An input file does not carry the columns/keys its kind requires."""


@dataclass
class FigureSpec:
    kind: str
    inputs: list
    output: str
    log_x: bool = False
    log_y: bool = False
    title: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}")
        if not self.inputs:
            raise SchemaError("spec.inputs must list at least one artifact")

    @staticmethod
    def from_file(path) -> "FigureSpec":
        with open(path) as fh:
            data = json.load(fh)
        allowed = {"kind", "inputs", "output", "log_x", "log_y", "title"}
        unknown = set(data) - allowed
        if unknown:
            raise SchemaError(f"unknown spec fields: {sorted(unknown)}")
        return FigureSpec(**data)


def read_diagnostics_csv(path, columns):
    """Load the named columns; raise SchemaError listing every missing one."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty CSV") from None
        missing = [c for c in columns if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        idx = [header.index(c) for c in columns]
        rows = [[float(row[i]) for i in idx] for row in reader]
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    data = np.array(rows)
    return {c: data[:, k] for k, c in enumerate(columns)}


def _config_hash_near(path) -> str:
    """The config hash from a summary.json sitting next to the artifact."""
    for name in ("summary.json", "config.json"):
        sibling = Path(path).parent / name
        if sibling.exists():
            try:
                with open(sibling) as fh:
                    payload = json.load(fh)
            except (OSError, json.JSONDecodeError):
                continue
            if "config_hash" in payload:
                return payload["config_hash"]
    return "unknown"


def _finish(fig, ax, spec: FigureSpec, hashes):
    if spec.log_x:
        ax.set_xscale("log")
    if spec.log_y:
        ax.set_yscale("log")
    if spec.title:
        ax.set_title(spec.title)
    caption = "config " + ", ".join(sorted(set(hashes)))
    fig.text(0.01, 0.01, caption, fontsize=7, color="0.4")
    fig.savefig(spec.output, dpi=110, metadata=PNG_METADATA)
    plt.close(fig)


def _render_energy_drift(spec: FigureSpec):
    fig, ax = plt.subplots(figsize=(6, 4))
    hashes = []
    for path in spec.inputs:
        cols = read_diagnostics_csv(path, REQUIRED_COLUMNS["energy_drift"])
        e = cols["energy"]
        scale = abs(e[0]) if e[0] != 0 else 1.0
        drift = np.abs(e - e[0]) / scale
        ax.plot(cols["time"], drift, label=Path(path).stem)
        hashes.append(_config_hash_near(path))
    ax.set_xlabel("time  [1]")
    ax.set_ylabel("relative energy drift  [1]")
    if len(spec.inputs) > 1:
        ax.legend(fontsize=7)
    _finish(fig, ax, spec, hashes)


def _render_morawetz(spec: FigureSpec):
    fig, ax = plt.subplots(figsize=(6, 4))
    hashes = []
    for path in spec.inputs:
        cols = read_diagnostics_csv(path, REQUIRED_COLUMNS["morawetz"])
        label = Path(path).stem
        line, = ax.plot(cols["time"], cols["morawetz_cum"], label=label)
        # measured bound: the recorded max of M/E times the run energy
        energy = cols["energy"][0]
        if energy > 0:
            bound = cols["morawetz_cum"].max() / energy * energy
            ax.axhline(
                bound, linestyle="--", linewidth=0.8, color=line.get_color()
            )
        hashes.append(_config_hash_near(path))
    ax.set_xlabel("time  [1]")
    ax.set_ylabel("cumulative Morawetz integral  [energy]")
    if len(spec.inputs) > 1:
        ax.legend(fontsize=7)
    _finish(fig, ax, spec, hashes)


def _render_scatter_residual(spec: FigureSpec):
    fig, ax = plt.subplots(figsize=(6, 4))
    hashes = []
    for path in spec.inputs:
        cols = read_diagnostics_csv(path, REQUIRED_COLUMNS["scatter_residual"])
        t = cols["time"]
        r = cols["scatter_residual"]
        keep = np.isfinite(r)
        if not keep.any():
            raise SchemaError(f"{path}: scatter_residual column carries no values")
        ax.plot(t[keep], r[keep], marker=".", label=Path(path).stem)
        hashes.append(_config_hash_near(path))
    if not spec.log_x and not spec.log_y:
        ax.set_yscale("log")
    ax.set_xlabel("time  [1]")
    ax.set_ylabel("pullback Cauchy residual  [H^{s_c} pair norm]")
    if len(spec.inputs) > 1:
        ax.legend(fontsize=7)
    _finish(fig, ax, spec, hashes)


def _load_summary(path, *keys):
    with open(path) as fh:
        payload = json.load(fh)
    missing = [k for k in keys if k not in payload]
    if missing:
        raise SchemaError(f"{path}: missing keys {missing}")
    return payload


def _render_stability_ladder(spec: FigureSpec):
    fig, ax = plt.subplots(figsize=(6, 4))
    hashes = []
    for path in spec.inputs:
        payload = _load_summary(path, "ladder", "stability_constant")
        ladder = payload["ladder"]
        for key in ("epsilon", "ratio"):
            bad = [i for i, row in enumerate(ladder) if key not in row]
            if bad:
                raise SchemaError(f"{path}: ladder rows {bad} missing {key!r}")
        eps = [row["epsilon"] for row in ladder]
        ratios = [row["ratio"] for row in ladder]
        ax.plot(eps, ratios, marker="o", label=Path(path).parent.name)
        ax.axhline(
            payload["stability_constant"], linestyle="--", linewidth=0.8, color="0.5"
        )
        hashes.append(payload.get("config_hash", "unknown"))
    ax.set_xscale("log")
    ax.set_xlabel("free-difference size epsilon  [W norm]")
    ax.set_ylabel("||u - w||_ST / epsilon  [1]")
    _finish(fig, ax, spec, hashes)


def _render_bubbles(spec: FigureSpec):
    fig, ax = plt.subplots(figsize=(6, 4))
    hashes = []
    for path in spec.inputs:
        payload = _load_summary(path, "profiles", "ground_truth")
        for key in ("shift", "scale", "l2_mass"):
            bad = [i for i, row in enumerate(payload["profiles"]) if key not in row]
            if bad:
                raise SchemaError(f"{path}: profiles rows {bad} missing {key!r}")
        truth = sorted(payload["ground_truth"], key=lambda p: p["shift"][0])
        found = sorted(payload["profiles"], key=lambda p: p["shift"][0])
        for t, f in zip(truth, found):
            ax.scatter(
                t["shift"][0],
                f["shift"][0],
                s=60.0 * f["l2_mass"],
                label=f"scale {f['scale']:g} (true {t['scale']:g})",
            )
        hashes.append(payload.get("config_hash", "unknown"))
    lims = ax.get_xlim()
    ax.plot(lims, lims, linestyle=":", linewidth=0.8, color="0.5")
    ax.set_xlabel("true shift  [box units]")
    ax.set_ylabel("recovered shift  [box units]")
    ax.legend(fontsize=7)
    _finish(fig, ax, spec, hashes)


_RENDERERS = {
    "energy_drift": _render_energy_drift,
    "morawetz": _render_morawetz,
    "scatter_residual": _render_scatter_residual,
    "stability_ladder": _render_stability_ladder,
    "bubbles": _render_bubbles,
}


def render(spec: FigureSpec) -> str:
    """Write the figure for ``spec``; returns the output path."""
    for path in spec.inputs:
        if not Path(path).exists():
            raise SchemaError(f"input does not exist: {path}")
    _RENDERERS[spec.kind](spec)
    return spec.output
