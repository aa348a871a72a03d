"""PNG figures rendered next to the CSV/JSON outputs."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 120


def _axes(width=5.0, height=3.4):
    fig, ax = plt.subplots(figsize=(width, height))
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    return fig, ax


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def plot_fidelity(steps, path, title=""):
    fig, ax = _axes()
    t = [s["t"] for s in steps]
    ax.plot(t, [s["fidelity"] for s in steps], "o-", ms=3)
    ax.set_xlabel("time step")
    ax.set_ylabel("fidelity vs classical")
    ax.set_ylim(min(0.0, min((s["fidelity"] for s in steps), default=0)), 1.02)
    ax.set_title(title)
    return _save(fig, path)


def plot_slice(field, path, axis: int | None = None, at: int | None = None, title=""):
    """Heat map of a 2D field, or of one plane of a 3D field (default: central z plane)."""
    field = np.asarray(field)
    names = list("xyz"[:field.ndim])
    if field.ndim == 3:
        axis = 2 if axis is None else axis
        at = field.shape[axis] // 2 if at is None else at
        field = np.take(field, at, axis=axis)
        names.pop(axis)
    fig, ax = _axes(4.2, 3.6)
    im = ax.imshow(field.T, origin="lower", cmap="viridis")
    fig.colorbar(im, ax=ax)
    ax.set_xlabel(names[0])
    ax.set_ylabel(names[1])
    ax.set_title(title)
    return _save(fig, path)


def plot_line_slice(quantum, classical, path, axis: int, at: int, title=""):
    """Quantum vs classical density along one line of a 2D field."""
    fig, ax = _axes()
    ax.plot(np.take(quantum, at, axis=axis), "o", ms=3, label="quantum")
    if classical is not None:
        ax.plot(np.take(classical, at, axis=axis), "-", label="classical")
    ax.set_xlabel("yx"[axis])
    ax.set_ylabel("density")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def pipeline_figures(report, fields, out) -> list:
    out = Path(out)
    files = []
    if report.steps:
        files.append(plot_fidelity(report.steps, out / "fidelity_vs_time.png", report.scenario.get("name", "")))
    q = fields.get("quantum", [])
    if q:
        files.append(plot_slice(q[-1], out / "density_final.png", title=f"t = {len(q) - 1}"))
        c = fields.get("classical", [])
        for cs in report.cross_sections:
            axis = "xyz".index(cs["axis"])
            path = out / f"cross_section_{cs['axis']}{cs['at']}.png"
            title = f"{cs['axis']} = {cs['at']}, t = {len(q) - 1}"
            if q[-1].ndim == 3:
                files.append(plot_slice(q[-1], path, axis=axis, at=cs["at"], title=title))
            else:
                files.append(plot_line_slice(q[-1], c[-1] if c else None, path, axis, cs["at"], title))
    return files


def plot_infidelity_vs_time(rows, path):
    """``rows`` are dicts with grid, chi, t, infidelity."""
    fig, ax = _axes()
    keys = sorted({(r["grid"], r["chi"]) for r in rows})
    for grid, chi in keys:
        sel = [r for r in rows if (r["grid"], r["chi"]) == (grid, chi)]
        ax.semilogy([r["t"] for r in sel], [max(r["infidelity"], 1e-17) for r in sel], "o-", ms=3,
                    label=f"L={grid}, chi={chi}")
    ax.set_xlabel("time step")
    ax.set_ylabel("1 - fidelity")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_peak_vs_chi(rows, path):
    fig, ax = _axes()
    for grid in sorted({r["grid"] for r in rows}):
        sel = sorted((r for r in rows if r["grid"] == grid), key=lambda r: r["chi"])
        ax.semilogy([r["chi"] for r in sel], [max(r["peak_infidelity"], 1e-17) for r in sel], "o-", label=f"L={grid}")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("bond dimension")
    ax.set_ylabel("peak infidelity")
    ax.legend()
    return _save(fig, path)


def plot_shadow_sweep(rows, path):
    fig, ax = _axes()
    for method in sorted({r["method"] for r in rows}):
        for shots in sorted({r["shots"] for r in rows}):
            sel = [r for r in rows if r["method"] == method and r["shots"] == shots]
            if not sel:
                continue
            ts = sorted({r["t"] for r in sel})
            mean = [np.mean([r["fidelity"] for r in sel if r["t"] == t]) for t in ts]
            ax.plot(ts, mean, "o-" if method.startswith("shadow") else "s--", ms=3, label=f"{method}, {shots} shots")
    ax.set_xlabel("time step")
    ax.set_ylabel("fidelity vs classical")
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_fwht_error(rows, path):
    fig, ax = _axes()
    for L in sorted({r["L"] for r in rows}):
        for method in sorted({r["method"] for r in rows}):
            sel = sorted((r for r in rows if r["L"] == L and r["method"] == method), key=lambda r: r["K"])
            ax.semilogy([r["K"] for r in sel], [max(r["rel_error"], 1e-17) for r in sel], "o-",
                        label=f"{method}, L={L}")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("samples per dimension K")
    ax.set_ylabel("relative spectrum error")
    ax.legend(fontsize=7)
    return _save(fig, path)
