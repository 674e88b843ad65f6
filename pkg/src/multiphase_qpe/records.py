"""Line-delimited JSON persistence for round records.

A records file is a sequence of JSON objects, one per line:

1. a header ``{"type": "header", ...}`` with format version and the metadata
   needed to reproduce the producing command;
2. for each run, its ``"round"`` lines in round order followed by a single
   ``"run"`` line. The ``"run"`` line marks the run as complete, which is what
   makes interrupted campaigns resumable.

Floats are written with ``repr`` precision, so a write/read cycle is exact.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import IO, Iterable, Iterator

import numpy as np

from . import __version__
from .protocol import RoundRecord, RunConfig, RunResult

FORMAT = "multiphase-qpe-records"
FORMAT_VERSION = 1

ROUND_FIELDS = (
    "type",
    "run",
    "k",
    "M",
    "m_k",
    "cumulative_resources",
    "p_half_final",
    "truth_in_C",
    "stalled",
    "estimate",
    "covariance",
    "outcomes",
)
RUN_FIELDS = ("type", "run", "seed", "theta_true", "n_rounds", "abort_reason", "config")


def make_header(meta: dict) -> dict:
    return {"type": "header", "format": FORMAT, "format_version": FORMAT_VERSION,
            "version": __version__, "meta": meta}


def round_to_dict(rec: RoundRecord, run: int = 0) -> dict:
    values = {
        "type": "round",
        "run": run,
        "k": rec.k,
        "M": rec.M,
        "m_k": rec.m_k,
        "cumulative_resources": rec.cumulative_resources,
        "p_half_final": float(rec.p_half_final),
        "truth_in_C": bool(rec.truth_in_C),
        "stalled": bool(rec.stalled),
        "estimate": [float(x) for x in rec.estimate],
        "covariance": np.asarray(rec.covariance, dtype=float).tolist(),
        "outcomes": [[list(phi), int(o)] for phi, o in rec.outcomes],
    }
    return {key: values[key] for key in ROUND_FIELDS}


def round_from_dict(data: dict) -> RoundRecord:
    return RoundRecord(
        k=data["k"],
        M=data["M"],
        m_k=data["m_k"],
        outcomes=[(tuple(phi), o) for phi, o in data["outcomes"]],
        estimate=np.array(data["estimate"], dtype=float),
        covariance=np.array(data["covariance"], dtype=float),
        p_half_final=data["p_half_final"],
        cumulative_resources=data["cumulative_resources"],
        truth_in_C=data["truth_in_C"],
        stalled=data["stalled"],
    )


def run_to_dict(result: RunResult, run: int = 0) -> dict:
    cfg = result.config.to_dict()
    values = {
        "type": "run",
        "run": run,
        "seed": cfg["seed"],
        "theta_true": [float(x) for x in result.theta_true],
        "n_rounds": len(result.records),
        "abort_reason": result.abort_reason,
        "config": cfg,
    }
    return {key: values[key] for key in RUN_FIELDS}


def _dumps(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=True)


def write_run(fh: IO[str], result: RunResult, run: int = 0) -> None:
    for rec in result.records:
        fh.write(_dumps(round_to_dict(rec, run)) + "\n")
    fh.write(_dumps(run_to_dict(result, run)) + "\n")
    fh.flush()


def write_records(path, results: Iterable[RunResult], meta: dict) -> None:
    with open(path, "w") as fh:
        fh.write(_dumps(make_header(meta)) + "\n")
        for i, result in enumerate(results):
            write_run(fh, result, i)


def iter_lines(path) -> Iterator[dict]:
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError:
                # a run interrupted mid-write leaves a truncated last line
                return


def read_header(path) -> dict:
    first = next(iter_lines(path), None)
    if not first or first.get("type") != "header" or first.get("format") != FORMAT:
        raise ValueError(f"{path} is not a {FORMAT} file")
    return first


def read_records(path) -> tuple[dict, dict[int, RunResult]]:
    """Return the header and every *complete* run keyed by run index."""
    header = read_header(path)
    pending: dict[int, list[RoundRecord]] = {}
    runs: dict[int, RunResult] = {}
    for obj in iter_lines(path):
        kind = obj.get("type")
        if kind == "round":
            pending.setdefault(obj["run"], []).append(round_from_dict(obj))
        elif kind == "run":
            idx = obj["run"]
            records = pending.pop(idx, [])
            runs[idx] = RunResult(
                config=RunConfig.from_dict(obj["config"]),
                theta_true=np.array(obj["theta_true"], dtype=float),
                records=records,
                abort_reason=obj["abort_reason"],
            )
    return header, runs


def rewrite_complete(path, header: dict, runs: dict[int, RunResult]) -> None:
    """Drop partial trailing runs so appends continue from a clean file."""
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w") as fh:
        fh.write(_dumps(header) + "\n")
        for idx in sorted(runs):
            write_run(fh, runs[idx], idx)
    tmp.replace(path)
