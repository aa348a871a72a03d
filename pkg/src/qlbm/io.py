"""File formats for density fields, metrics and figure tables."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import QLBMError, ShapeError


class OutputError(QLBMError, OSError):
    """Writing or reading an artifact failed; the message names the path."""


def _io(path, action):
    try:
        return action()
    except OSError as e:
        raise OutputError(f"{path}: {e.strerror or e}") from e


def _mkparent(path: Path):
    _io(path.parent, lambda: path.parent.mkdir(parents=True, exist_ok=True))


def _coords3(shape):
    idx = np.indices(shape).reshape(len(shape), -1, order="F")
    if len(shape) < 3:
        idx = np.vstack([idx, np.zeros((3 - len(shape), idx.shape[1]), dtype=int)])
    return idx


def write_field_csv(path, field: np.ndarray) -> Path:
    """One row per site ``x,y,z,value`` (z = 0 in 2D), x fastest."""
    path = Path(path)
    field = np.asarray(field, dtype=float)
    xyz = _coords3(field.shape)
    vals = field.reshape(-1, order="F")
    lines = ["x,y,z,value"]
    lines += [f"{x},{y},{z},{v!r}" for x, y, z, v in zip(*xyz.tolist(), vals.tolist())]
    _mkparent(path)
    _io(path, lambda: path.write_text("\n".join(lines) + "\n"))
    return path


def read_field_csv(path, d: int | None = None) -> np.ndarray:
    path = Path(path)
    data = _io(path, lambda: np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2))
    xyz = data[:, :3].astype(int)
    if d is None:
        d = 3 if np.any(xyz[:, 2]) else 2
    shape = tuple(int(xyz[:, a].max()) + 1 for a in range(d))
    out = np.zeros(shape)
    out[tuple(xyz[:, a] for a in range(d))] = data[:, 3]
    return out


def write_field_blob(path, field: np.ndarray) -> tuple:
    """Raw little-endian float64 in x-fastest order plus a JSON shape sidecar."""
    path = Path(path)
    field = np.asarray(field, dtype="<f8")
    side = path.with_suffix(".json")
    meta = {"dtype": "<f8", "shape": list(field.shape), "order": "F", "axes": list("xyz"[:field.ndim])}
    _mkparent(path)
    _io(path, lambda: path.write_bytes(field.reshape(-1, order="F").tobytes()))
    _io(side, lambda: side.write_text(json.dumps(meta, sort_keys=True) + "\n"))
    return path, side


def read_field_blob(path) -> np.ndarray:
    path = Path(path)
    side = path.with_suffix(".json")
    meta = json.loads(_io(side, side.read_text))
    raw = _io(path, path.read_bytes)
    data = np.frombuffer(raw, dtype=meta["dtype"])
    shape = tuple(meta["shape"])
    if data.size != int(np.prod(shape)):
        raise ShapeError(f"{path}: {data.size} values do not fill shape {shape}")
    return data.reshape(shape, order=meta["order"]).astype(float)


def write_json(path, doc) -> Path:
    """Deterministic JSON: sorted keys, fixed indentation, shortest round-trip floats."""
    path = Path(path)
    _mkparent(path)
    _io(path, lambda: path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n"))
    return path


def write_table(path, header, rows) -> Path:
    path = Path(path)
    _mkparent(path)

    def go():
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in r])

    _io(path, go)
    return path


def read_table(path) -> list:
    path = Path(path)

    def go():
        with path.open(newline="") as fh:
            return list(csv.DictReader(fh))

    return _io(path, go)


def emit_outputs(report, fields: dict, out_dir, figures: bool = True) -> list:
    """Write the metrics report, per-step density fields and figure tables.

    ``fields`` maps a label (``"quantum"``, ``"classical"``) to a list of
    per-step density arrays.  With no fields only ``metrics.json`` is written.
    """
    out = Path(out_dir)
    written = [write_json(out / "metrics.json", report.to_dict())]
    if not any(len(v) for v in fields.values()):
        return written
    if report.timing:
        written.append(write_json(out / "timing.json", report.timing))
    for label, traj in fields.items():
        for t, phi in enumerate(traj):
            stem = out / "fields" / f"{label}_t{t:03d}"
            written.append(write_field_csv(stem.with_suffix(".csv"), phi))
            written.extend(write_field_blob(stem.with_suffix(".bin"), phi))
    rows = [[s["t"], s["fidelity"], s["p_success"], s["accepted"], s["rejected"], s["wall_leakage"],
             s["mass_rel_error"]] for s in report.steps]
    written.append(write_table(out / "fidelity_vs_time.csv",
                               ["t", "fidelity", "p_success", "accepted", "rejected", "wall_leakage",
                                "mass_rel_error"], rows))
    q, c = fields.get("quantum", []), fields.get("classical", [])
    for cs in report.cross_sections:
        axis = "xyz".index(cs["axis"])
        for t in sorted({0, len(q) - 1}):
            qs = np.take(q[t], cs["at"], axis=axis)
            cl = np.take(c[t], cs["at"], axis=axis) if c else np.zeros_like(qs)
            ij = np.indices(qs.shape).reshape(qs.ndim, -1, order="F")
            names = [a for a in "xyz"[:q[t].ndim] if a != cs["axis"]]
            rows = [list(p) + [float(a), float(b)] for p, a, b in
                    zip(ij.T.tolist(), qs.reshape(-1, order="F"), cl.reshape(-1, order="F"))]
            written.append(write_table(out / f"cross_section_{cs['axis']}{cs['at']}_t{t:03d}.csv",
                                       names + ["quantum", "classical"], rows))
    if figures:
        from . import plotting
        written.extend(plotting.pipeline_figures(report, fields, out))
    return written
