"""Experiment driver: classical reference, quantum chain with readout and reload, sweeps."""
from __future__ import annotations

import dataclasses
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegenerateProjectionError, QLBMError
from .lattice import GridSpec, build_model, gaussian_blob, simulate_classical, swirl_velocity
from .mps import fidelity, infidelity_sweep, peak_infidelity
from .quantum import QLBMStep, encode_density, measure_histogram, postselect
from .readout import ReadoutInputs, collect_shadow_dataset, generate_settings, reconstruct
from .scenario import Scenario, build_initial, build_velocity, build_walls, scenario_from_dict
from .velocity import coarse_fwht_3d, exact_spectrum, interpolated_fwht_3d, relative_error


@dataclass
class MetricsReport:
    scenario: dict
    method: str
    steps: list = field(default_factory=list)  # one dict per time step
    cross_sections: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)  # wall-clock data, kept out of to_dict()

    @property
    def final_fidelity(self) -> float:
        return self.steps[-1]["fidelity"] if self.steps else 1.0

    @property
    def cumulative_p(self) -> float:
        return float(np.prod([s["p_success"] for s in self.steps]))

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "method": self.method,
            "steps": self.steps,
            "summary": {
                "final_fidelity": self.final_fidelity,
                "min_fidelity": min((s["fidelity"] for s in self.steps), default=1.0),
                "cumulative_p_success": self.cumulative_p,
                "accepted": sum(s["accepted"] for s in self.steps),
                "rejected": sum(s["rejected"] for s in self.steps),
                "max_wall_leakage": max((s["wall_leakage"] for s in self.steps), default=0.0),
                "max_mass_rel_error": max((s["mass_rel_error"] for s in self.steps), default=0.0),
            },
        }


def _with_step(err: QLBMError, t: int) -> QLBMError:
    err.args = (f"step {t}: {err.args[0] if err.args else err}",) + tuple(err.args[1:])
    err.step = t
    return err


def run_pipeline(scn: Scenario, out_dir=None, figures: bool = True):
    """Run one scenario; returns ``(MetricsReport, fields)``.

    ``fields`` holds per-step densities under ``"quantum"`` and
    ``"classical"``.  The quantum density is the reconstructed amplitude field
    rescaled by ``||phi_0|| * sqrt(prod p)``, with ``p`` estimated from the
    accepted fraction whenever the state is measured.
    """
    t_start = time.perf_counter()
    model = build_model(scn.model)
    grid = scn.grid
    walls = build_walls(scn)
    u = build_velocity(scn, walls)
    phi0 = build_initial(scn, walls, u)
    truth = simulate_classical(phi0, u, scn.T, model, walls)
    t_classical = time.perf_counter() - t_start

    ro = scn.readout
    method = ro["method"]
    fit_base = scn.fit_config()
    step = QLBMStep(u, model, walls, scn.route)
    state = encode_density(phi0, step.layout)
    scale = float(np.linalg.norm(phi0))
    mass0 = float(phi0.sum())
    seeds = np.random.SeedSequence(scn.seed).spawn(max(scn.T, 1))
    quantum = [phi0.copy()]
    report = MetricsReport(scenario=scn.to_dict(), method=method, cross_sections=list(scn.cross_sections))
    step_times = []
    for t in range(1, scn.T + 1):
        t0 = time.perf_counter()
        try:
            full = step.circuit(state)
            exact, p = postselect(full)
            accepted = rejected = 0
            p_used = p
            if method != "none" and t % ro["period"] == 0:
                ss = seeds[t - 1]
                prev = state.grid_field().real
                if method.startswith("shadow"):
                    settings = generate_settings(ro["settings"], grid.n_qubits, ss)
                    ds = collect_shadow_dataset(full, settings, ro["shots"], ro["noise_p"], seed=ss)
                    accepted, rejected = ds.accepted, ds.rejected
                    inputs = ReadoutInputs(grid, dataset=ds, chi=ro["chi"], bandwidth=ro["bandwidth"],
                                           fit=dataclasses.replace(fit_base, init=prev))
                else:
                    h, accepted, rejected = measure_histogram(full, ro["shots"], noise_p=ro["noise_p"], seed=ss)
                    inputs = ReadoutInputs(grid, histogram=h, chi=ro["chi"], bandwidth=ro["bandwidth"])
                if accepted == 0:
                    raise DegenerateProjectionError(f"no accepted shots out of {ro['shots']}")
                p_used = accepted / (accepted + rejected)
                state = encode_density(reconstruct(method, inputs), step.layout)
            else:
                state = exact
        except QLBMError as e:
            raise _with_step(e, t) from None
        scale *= np.sqrt(p_used)
        amp = state.grid_field().real
        rho = scale * amp
        quantum.append(rho)
        leak = float(np.max(np.abs(rho[walls]))) if walls is not None else 0.0
        report.steps.append({
            "t": t,
            "fidelity": fidelity(grid.flatten(amp), grid.flatten(truth[t])),
            "p_success": min(1.0, max(0.0, p)),
            "p_estimate": p_used,
            "accepted": int(accepted),
            "rejected": int(rejected),
            "wall_leakage": leak,
            "mass_rel_error": abs(float(rho.sum()) - mass0) / abs(mass0),
        })
        step_times.append(time.perf_counter() - t0)
    report.timing = {"classical_s": t_classical, "quantum_steps_s": step_times,
                     "total_s": time.perf_counter() - t_start}
    fields = {"quantum": quantum, "classical": truth}
    if out_dir is not None:
        from .io import emit_outputs
        emit_outputs(report, fields, out_dir, figures=figures)
    return report, fields


# ---------------------------------------------------------------------------
# worker pool


def worker_count() -> int:
    raw = os.environ.get("QLBM_THREADS", "")
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"QLBM_THREADS must be a positive integer, got {raw!r}", field="QLBM_THREADS") from None
    if n < 1:
        raise ConfigurationError(f"QLBM_THREADS must be a positive integer, got {n}", field="QLBM_THREADS")
    return n


def map_points(fn, points, workers: int | None = None) -> list:
    """Evaluate independent sweep points; results keep the order of ``points``."""
    workers = worker_count() if workers is None else workers
    points = list(points)
    if workers <= 1 or len(points) <= 1:
        return [fn(p) for p in points]
    with ProcessPoolExecutor(max_workers=min(workers, len(points))) as pool:
        return list(pool.map(fn, points))


# ---------------------------------------------------------------------------
# MPS representability sweep


def swirl_trajectory(L: int, base_L: int = 16, amplitude: float = 0.3, horizon: int = 96, interval: int = 1) -> tuple:
    """Sampled D3Q7 swirl trajectory with diffusive scaling relative to ``base_L``.

    The velocity amplitude scales as ``base_L / L`` and times as
    ``(L / base_L)**2``, so grids of different size see the same physical
    Peclet number and the same dimensionless times.  The default samples
    every base-grid step; coarser sampling can miss the infidelity peak.
    """
    model = build_model("D3Q7")
    grid = GridSpec(L, 3)
    s = L / base_L
    u = swirl_velocity(grid, amplitude / s)
    T, every = int(round(horizon * s * s)), max(1, int(round(interval * s * s)))
    traj = simulate_classical(gaussian_blob(grid), u, T, model)
    ts = list(range(0, T + 1, every))
    return ts, [traj[t] for t in ts]


def _mps_point(args):
    L, chis = args
    ts, traj = swirl_trajectory(L)
    return [{"grid": L, "chi": chi, "t": ts[i], "infidelity": inf} for i, chi, inf in infidelity_sweep(traj, chis)]


def sweep_mps(grids, chis, workers=None) -> tuple:
    """Rows ``(grid, chi, t, infidelity)`` and per-(grid, chi) peaks."""
    rows = [r for part in map_points(_mps_point, [(L, list(chis)) for L in grids], workers) for r in part]
    peaks = []
    for L in grids:
        pk = peak_infidelity([(r["t"], r["chi"], r["infidelity"]) for r in rows if r["grid"] == L])
        peaks += [{"grid": L, "chi": chi, "peak_infidelity": pk[chi]} for chi in chis]
    return rows, peaks


def is_unimodal(values) -> bool:
    x = np.asarray(values, dtype=float)
    p = int(np.argmax(x))
    return bool(np.all(np.diff(x[: p + 1]) >= 0) and np.all(np.diff(x[p:]) <= 0))


# ---------------------------------------------------------------------------
# shadow vs direct readout sweep


def shadow_scenario(method: str, shots: int, settings: int, seed: int, chi: int, L: int = 16, T: int = 10) -> Scenario:
    return scenario_from_dict({
        "name": f"swirl-{method}",
        "model": "D3Q7", "L": L, "T": T,
        "velocity": {"preset": "swirl", "amplitude": 0.2},
        "initial": {"kind": "gaussian"},
        "readout": {"method": method, "period": 1, "shots": shots, "settings": settings, "chi": chi},
        "seed": seed,
    })


def _shadow_point(args):
    method, shots, settings, seed, chi, L, T = args
    report, _ = run_pipeline(shadow_scenario(method, shots, settings, seed, chi, L, T))
    return [{"method": method, "shots": shots, "seed": seed, "chi": chi, "t": s["t"], "fidelity": s["fidelity"]}
            for s in report.steps]


def sweep_shadow(shots_list, settings: int = 25, seeds=(0,), chi_shadow: int = 4, chi_direct: int = 8,
                 L: int = 16, T: int = 10, methods=("shadow", "mps"), workers=None) -> list:
    """Rows ``(method, shots, seed, chi, t, fidelity)`` for readout-reload every step."""
    points = [(m, s, settings, seed, chi_shadow if m.startswith("shadow") else chi_direct, L, T)
              for s in shots_list for seed in seeds for m in methods]
    return [r for part in map_points(_shadow_point, points, workers) for r in part]


def final_fidelity_means(rows) -> dict:
    """Mean final-step fidelity per (method, shots)."""
    out = {}
    T = max(r["t"] for r in rows)
    for r in rows:
        if r["t"] == T:
            out.setdefault((r["method"], r["shots"]), []).append(r["fidelity"])
    return {k: float(np.mean(v)) for k, v in out.items()}


# ---------------------------------------------------------------------------
# interpolated transform sweep


def fwht_test_field(L: int) -> np.ndarray:
    x = np.arange(L)
    s = np.sin(2 * np.pi * x / L)
    return 1 + s[:, None, None] * s[None, :, None] * s[None, None, :]


def _fwht_point(args):
    L, K = args
    f = fwht_test_field(L)
    exact = exact_spectrum(f)
    sp = interpolated_fwht_3d(f, K)
    n_log = (L ** 3).bit_length() - 1
    return [
        {"L": L, "K": K, "method": "interpolated", "rel_error": relative_error(sp.to_dense(), exact),
         "butterflies": sp.butterflies, "entries": len(sp)},
        {"L": L, "K": K, "method": "coarse", "rel_error": relative_error(coarse_fwht_3d(f, K), exact),
         "butterflies": 3 * ((K.bit_length() - 1) * K ** 3 // 2), "entries": K ** 3},
        {"L": L, "K": K, "method": "dense", "rel_error": 0.0, "butterflies": n_log * (L ** 3 // 2), "entries": L ** 3},
    ]


def sweep_fwht(Ls, Ks, workers=None) -> list:
    """Rows ``(L, K, method, rel_error, butterflies, entries)``; K larger than L is skipped."""
    points = [(L, K) for L in Ls for K in Ks if K <= L]
    return [r for part in map_points(_fwht_point, points, workers) for r in part]


def butterfly_model(L: int, K: int) -> float:
    """Predicted cost ``K^3 log K log(N/K)`` with ``N = L^3``."""
    N = L ** 3
    return K ** 3 * np.log2(K) * np.log2(N / K)
