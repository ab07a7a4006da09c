"""
CSV artifacts. Every file is written to a temporary sibling and renamed into
place, so a failed run never leaves a partial file behind.
"""

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from stepsim.core.config import settings
from stepsim.core.errors import ArtifactError, DomainError
from stepsim.core.paths import StepSize, Trajectory
from stepsim.engine.diagnostics import ConvergenceSweep
from stepsim.engine.stability import PhReport


def format_value(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.{settings.FLOAT_DIGITS}g}"


def ensure_output_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ArtifactError(f"cannot create output directory {path}: {exc}") from exc
    return path


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    tmp_name = None
    try:
        with tempfile.NamedTemporaryFile(
            "w", dir=path.parent, prefix=f".{path.name}.", suffix=".tmp",
            delete=False, encoding="utf-8", newline="",
        ) as handle:
            tmp_name = handle.name
            handle.write(text)
        os.replace(tmp_name, path)
    except OSError as exc:
        if tmp_name is not None and os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise ArtifactError(f"cannot write {path}: {exc}") from exc
    return path


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    return atomic_write_text(path, buffer.getvalue())


def state_columns(dimension: int) -> List[str]:
    return [f"x_{i + 1}" for i in range(dimension)]


def write_trajectory(out_dir, traj: Trajectory) -> Path:
    """trajectory_<seed>.csv with columns k, t, x_1..x_N."""
    ks = traj.thin * np.arange(len(traj))
    ts = traj.times()
    rows = ([k, t, *x] for k, t, x in zip(ks, ts, traj.states))
    header = ["k", "t", *state_columns(traj.dimension)]
    return write_csv(Path(out_dir) / f"trajectory_{traj.seed}.csv", header, rows)


def read_trajectory(path, gamma: Optional[float] = None, seed: int = 0) -> Trajectory:
    """Inverse of write_trajectory; gamma is inferred from (k, t) when not given."""
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as handle:
            rows = list(csv.reader(handle))
    except OSError as exc:
        raise ArtifactError(f"cannot read {path}: {exc}") from exc
    if len(rows) < 2 or rows[0][:2] != ["k", "t"]:
        raise DomainError(f"{path} is not a trajectory file")
    data = np.array([[float(v) for v in row] for row in rows[1:]])
    ks, ts, states = data[:, 0].astype(int), data[:, 1], data[:, 2:]
    thin = int(ks[1] - ks[0]) if len(ks) > 1 else 1
    if gamma is None:
        if len(ks) < 2:
            raise DomainError("gamma cannot be inferred from a single-row trajectory")
        gamma = float(ts[1] / ks[1])
    return Trajectory(gamma=StepSize.coerce(gamma), states=states, seed=seed, thin=thin)


def write_di_solution(
    out_dir, ts, states, segment_ids, deviation: Optional[np.ndarray] = None
) -> Path:
    """di_solution.csv with t, x_1..x_N, segment_id and, when given, deviation."""
    states = np.atleast_2d(states)
    header = ["t", *state_columns(states.shape[1]), "segment_id"]
    if deviation is None:
        rows = ([t, *x, int(s)] for t, x, s in zip(ts, states, segment_ids))
    else:
        header.append("deviation")
        rows = (
            [t, *x, int(s), d] for t, x, s, d in zip(ts, states, segment_ids, deviation)
        )
    return write_csv(Path(out_dir) / "di_solution.csv", header, rows)


def write_di_summary(out_dir, solver: str, step: float, sup_deviation: float) -> Path:
    return write_csv(
        Path(out_dir) / "di_summary.csv",
        ["solver", "step", "sup_deviation"],
        [[solver, step, sup_deviation]],
    )


def write_sweep(out_dir, sweep: ConvergenceSweep) -> List[Path]:
    records = write_csv(
        Path(out_dir) / "sweep_records.csv",
        ["gamma", "seed", "sup_distance"],
        ([r.gamma, r.seed, r.sup_distance] for r in sweep.records),
    )
    summary = write_csv(
        Path(out_dir) / "sweep_summary.csv",
        ["gamma", "exceedance", "median", "q90"],
        ([s.gamma, s.exceedance, s.median, s.q90] for s in sweep.summary()),
    )
    return [records, summary]


def write_longrun(out_dir, rows: Iterable[Sequence[float]]) -> Path:
    return write_csv(
        Path(out_dir) / "longrun.csv",
        ["gamma", "fraction_within_eps", "ergodic_distance"],
        rows,
    )


def write_ph_report(out_dir, report: PhReport, dimension: int) -> Path:
    header = ["probe_id", "gamma", *state_columns(dimension), "gap", "stderr", "flag"]
    rows = (
        [r.probe_id, r.gamma, *r.x, r.gap, r.stderr, r.flag] for r in report.records
    )
    return write_csv(Path(out_dir) / "ph_report.csv", header, rows)


def write_summary(out_dir, command: str, status: str, metrics: dict) -> Path:
    """<command>_summary.json with the run status and headline numbers."""
    payload = {"command": command, "status": status, "metrics": metrics}
    text = json.dumps(payload, indent=2, sort_keys=True, default=float) + "\n"
    return atomic_write_text(Path(out_dir) / f"{command}_summary.json", text)
