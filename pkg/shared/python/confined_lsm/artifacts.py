"""
Output files of experiment runs.

All files are written to a temporary file in the target directory and moved
into place with os.replace, so a reader never sees a half-written file.
CSV numbers use the shortest repr that round-trips. Every JSON file carries
the config echo and the package version.
"""

import csv
import io
import json
import math
import os
import tempfile
from typing import Any, Iterable, List, Sequence

import numpy as np

from . import __version__
from .simulator import EventLog, RunRecord, SystemState, jump_histogram


def atomic_write_text(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_number(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_number(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def _plain(value):
    """JSON-safe copy: numpy scalars/arrays to Python, NaN/inf to None."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def write_json(path: str, payload: dict, config_echo: dict):
    document = {"version": __version__, "config": config_echo, **payload}
    atomic_write_text(path, json.dumps(_plain(document), indent=2, sort_keys=True) + "\n")


def table_rows(rows: List[dict]):
    """(header, row values) of a list of uniform dicts."""
    if not rows:
        return [], []
    header = list(rows[0])
    return header, [[r[h] for h in header] for r in rows]


# ==============================================================
# Run outputs
# ==============================================================

def _axis_names(prefix: str, dim: int) -> List[str]:
    return [f"{prefix}{j}" for j in range(dim)]


def write_events(path: str, events: EventLog):
    d = events.dim
    header = (["t", "id"] + _axis_names("hit", d) + _axis_names("n", d)
              + _axis_names("u_minus", d) + _axis_names("u_plus", d))
    c = events.columns
    rows = (
        [c["t"][i], c["particle"][i], *c["hit"][i], *c["normal"][i],
         *c["u_minus"][i], *c["u_plus"][i]]
        for i in range(len(c["t"])))
    write_csv(path, header, rows)


def write_state(path: str, state: SystemState):
    d = state.x.shape[1]
    header = (["id"] + _axis_names("x", d) + _axis_names("u", d) + _axis_names("k", d)
              + ["jumps"])
    rows = ([i, *state.x[i], *state.u[i], *state.k[i], state.jumps[i]]
            for i in range(state.size))
    write_csv(path, header, rows)


def write_run(record: RunRecord, out_dir: str, config_echo: dict) -> List[str]:
    """events.csv, checkpoints/<t>.csv and summary.json for one run."""
    written = []
    if record.events is not None:
        path = os.path.join(out_dir, "events.csv")
        write_events(path, record.events)
        written.append(path)
    for t, state in sorted(record.checkpoints.items()):
        path = os.path.join(out_dir, "checkpoints", f"{t!r}.csv")
        write_state(path, state)
        written.append(path)
    summary = {
        "wall_time": record.wall_time,
        "steps": record.steps,
        "boundary_events": len(record.events) if record.events is not None else None,
        "jump_histogram": jump_histogram(record.final),
    }
    path = os.path.join(out_dir, "summary.json")
    write_json(path, summary, config_echo)
    written.append(path)
    return written
