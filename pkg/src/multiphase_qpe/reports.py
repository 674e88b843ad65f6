"""Plain-text artifacts: metadata headers, plot-data tables and fit summaries.

Every file starts with ``#``-prefixed lines holding a JSON metadata object
(tool version, subcommand, fully resolved configuration and seed), so the
data can be loaded with ``numpy.loadtxt`` and the producing command rerun
exactly. Nothing time-dependent is written, so reruns are byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .experiments import CampaignStats

TOOL = "multiphase-qpe"


def make_meta(command: str, config: dict, **extra) -> dict:
    meta = {"tool": TOOL, "version": __version__, "command": command, "config": config}
    meta.update(extra)
    return meta


def header_lines(meta: dict) -> list[str]:
    return ["# " + json.dumps(meta, sort_keys=True)]


def read_meta(path) -> dict:
    with open(path) as fh:
        first = fh.readline()
    if not first.startswith("# "):
        raise ValueError(f"{path} has no metadata header")
    return json.loads(first[2:])


def write_table(path, meta: dict, names: Sequence[str], columns: Sequence) -> Path:
    """Whitespace-separated columns with a metadata header and a name row."""
    path = Path(path)
    cols = [np.asarray(c, dtype=float).ravel() for c in columns]
    if len({c.size for c in cols}) > 1:
        raise ValueError("columns differ in length")
    with open(path, "w") as fh:
        for line in header_lines(meta):
            fh.write(line + "\n")
        fh.write("# " + " ".join(names) + "\n")
        if cols:
            np.savetxt(fh, np.column_stack(cols), fmt="%.10g")
    return path


def scaling_columns(stats: CampaignStats):
    """Rows (N_T, V_ij N_T^2 for i <= j) over completed rounds of usable runs."""
    rows = stats.usable[:, None] & stats.completed
    NT = stats.N_T[rows]
    scaled = stats.scaled_covariance()[rows]
    names, cols = ["N_T"], [NT]
    i, j = np.triu_indices(stats.d)
    order = sorted(zip(i, j), key=lambda p: (p[0] != p[1], p))
    for a, b in order:
        names.append(f"V{a + 1}{b + 1}*N_T^2")
        cols.append(scaled[:, a, b])
    return names, cols


def write_summary(path, meta: dict, items: Sequence[tuple[str, object]]) -> Path:
    """``key = value`` lines after the metadata header."""
    path = Path(path)
    with open(path, "w") as fh:
        for line in header_lines(meta):
            fh.write(line + "\n")
        for key, value in items:
            fh.write(f"{key} = {format_value(value)}\n")
    return path


def format_value(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    if isinstance(value, np.ndarray):
        return json.dumps(np.round(value, 10).tolist())
    if isinstance(value, tuple) and hasattr(value, "_fields"):
        return " ".join(f"{k}={format_value(v)}" for k, v in zip(value._fields, value))
    return str(value)
