"""Scenario files: JSON documents describing one simulation run.

Precedence is command-line flag > file value > default.  Unknown keys are
rejected with the dotted path of the offending field.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, QLBMError
from .lattice import (
    GridSpec, build_model, gaussian_blob, random_divergence_free, shear_velocity, swirl_velocity,
    uniform_velocity,
)
from .readout import METHODS, FitConfig
from .walls import box_mask, channel_flow_around_mask, mask_from_spec

READOUT_METHODS = ("none",) + METHODS

DEFAULTS = {
    "name": "",
    "velocity": {"preset": "swirl", "amplitude": 0.2},
    "initial": {"kind": "gaussian"},
    "walls": [],
    "route": "isometry",
    "readout": {
        "method": "none",
        "period": 1,
        "shots": 20000,
        "settings": 25,
        "chi": 8,
        "bandwidth": 0.5,
        "noise_p": 0.0,
        "fit": {},
    },
    "cross_sections": [],
    "seed": 0,
    "output": "qlbm-out",
}
REQUIRED = ("model", "L", "T")
_FIT_KEYS = {"optimizer", "lr", "decay", "epochs", "patience", "init_noise", "holdout", "cold_epochs", "cold_lr"}
_VELOCITY_KEYS = {
    "swirl": {"amplitude"},
    "shear": {"amplitude"},
    "uniform": {"value"},
    "random": {"umax", "seed"},
    "channel": {"speed"},
}
_INITIAL_KEYS = {
    "gaussian": {"sigma", "center"},
    "delta": {"site"},
    "uniform": set(),
    "plane": {"axis", "at"},
    "shell": {"lo", "hi"},
    "file": {"path"},
}


@dataclass
class Scenario:
    model: str
    L: int
    T: int
    name: str = ""
    velocity: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["velocity"]))
    initial: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["initial"]))
    walls: list = field(default_factory=list)
    route: str = "isometry"
    readout: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["readout"]))
    cross_sections: list = field(default_factory=list)
    seed: int = 0
    output: str = "qlbm-out"
    base_dir: Path = field(default=Path("."), repr=False, compare=False)

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.L, build_model(self.model).d)

    def fit_config(self) -> FitConfig:
        return FitConfig(seed=self.seed, **self.readout["fit"])

    def to_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in ("name", "model", "L", "T", "velocity", "initial", "walls",
                                                              "route", "readout", "cross_sections", "seed", "output")}


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigurationError("expected an object", field=where)
    for k in obj:
        if k not in allowed:
            raise ConfigurationError(f"unknown key {k!r}; allowed: {sorted(allowed)}", field=f"{where}.{k}" if where else k)


def _int(v, where, lo=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigurationError(f"expected an integer, got {v!r}", field=where)
    if lo is not None and v < lo:
        raise ConfigurationError(f"must be >= {lo}, got {v}", field=where)
    return v


def _num(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigurationError(f"expected a number, got {v!r}", field=where)
    return float(v)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "velocity" and k != "initial":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def scenario_from_dict(doc: dict, overrides: dict | None = None, base_dir: Path | str = ".") -> Scenario:
    """Validate a scenario document; ``overrides`` are flag values (dotted keys allowed)."""
    _check_keys(doc, set(DEFAULTS) | set(REQUIRED), "")
    for k in REQUIRED:
        if k not in doc:
            raise ConfigurationError("required field missing", field=k)
    merged = _merge(DEFAULTS, doc)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        parts = key.split(".")
        target = merged
        for p in parts[:-1]:
            target = target.setdefault(p, {})
        target[parts[-1]] = value

    model = merged["model"]
    if not isinstance(model, str):
        raise ConfigurationError("expected a model name", field="model")
    d = build_model(model).d
    L = _int(merged["L"], "L", 1)
    try:
        GridSpec(L, d)
    except QLBMError as e:
        raise ConfigurationError(str(e), field="L") from None
    T = _int(merged["T"], "T", 0)
    seed = _int(merged["seed"], "seed", 0)
    if merged["route"] not in ("isometry", "gates"):
        raise ConfigurationError(f"route must be 'isometry' or 'gates', got {merged['route']!r}", field="route")
    if not isinstance(merged["name"], str) or not isinstance(merged["output"], str):
        raise ConfigurationError("expected a string", field="name" if not isinstance(merged["name"], str) else "output")

    vel = merged["velocity"]
    _check_keys(vel, {"preset", "file"} | set().union(*_VELOCITY_KEYS.values()), "velocity")
    if "file" in vel:
        _check_keys(vel, {"file"}, "velocity")
    else:
        preset = vel.get("preset")
        if preset not in _VELOCITY_KEYS:
            raise ConfigurationError(f"unknown velocity preset {preset!r}; expected one of {sorted(_VELOCITY_KEYS)}",
                                     field="velocity.preset")
        _check_keys(vel, {"preset"} | _VELOCITY_KEYS[preset], "velocity")
        if preset == "channel" and not merged["walls"]:
            raise ConfigurationError("channel flow needs walls", field="velocity.preset")

    ini = merged["initial"]
    _check_keys(ini, {"kind"} | set().union(*_INITIAL_KEYS.values()), "initial")
    kind = ini.get("kind")
    if kind not in _INITIAL_KEYS:
        raise ConfigurationError(f"unknown initial condition {kind!r}; expected one of {sorted(_INITIAL_KEYS)}",
                                 field="initial.kind")
    _check_keys(ini, {"kind"} | _INITIAL_KEYS[kind], "initial")

    if not isinstance(merged["walls"], list):
        raise ConfigurationError("expected a list of wall primitives", field="walls")
    mask_from_spec(merged["walls"], (L,) * d)

    ro = merged["readout"]
    _check_keys(ro, set(DEFAULTS["readout"]), "readout")
    if ro["method"] not in READOUT_METHODS:
        raise ConfigurationError(f"unknown readout method {ro['method']!r}; expected one of {READOUT_METHODS}",
                                 field="readout.method")
    _int(ro["period"], "readout.period", 1)
    _int(ro["shots"], "readout.shots", 1)
    _int(ro["settings"], "readout.settings", 1)
    _int(ro["chi"], "readout.chi", 1)
    if ro["bandwidth"] != "auto" and not _num(ro["bandwidth"], "readout.bandwidth") > 0:
        raise ConfigurationError("must be positive or \"auto\"", field="readout.bandwidth")
    if ro["bandwidth"] == "auto" and ro["method"] not in ("kde", "kde+mps"):
        raise ConfigurationError("\"auto\" needs a histogram readout (kde or kde+mps)", field="readout.bandwidth")
    if not 0.0 <= _num(ro["noise_p"], "readout.noise_p") <= 1.0:
        raise ConfigurationError("must lie in [0, 1]", field="readout.noise_p")
    _check_keys(ro["fit"], _FIT_KEYS, "readout.fit")

    if not isinstance(merged["cross_sections"], list):
        raise ConfigurationError("expected a list", field="cross_sections")
    for n, cs in enumerate(merged["cross_sections"]):
        where = f"cross_sections[{n}]"
        _check_keys(cs, {"axis", "at"}, where)
        if cs.get("axis") not in "xyz"[:d] or not cs.get("axis"):
            raise ConfigurationError(f"axis must be one of {list('xyz'[:d])}", field=where + ".axis")
        _int(cs.get("at"), where + ".at", 0)
        if cs["at"] >= L:
            raise ConfigurationError(f"index {cs['at']} outside grid", field=where + ".at")

    scn = Scenario(model=model, L=L, T=T, name=merged["name"], velocity=vel, initial=ini, walls=merged["walls"],
                   route=merged["route"], readout=ro, cross_sections=merged["cross_sections"], seed=seed,
                   output=merged["output"], base_dir=Path(base_dir))
    # build once so parameter errors surface at load time
    walls = build_walls(scn)
    u = build_velocity(scn, walls)
    check_flow(scn, u, walls)
    build_initial(scn, walls, u)
    return scn


def check_flow(scn: Scenario, u, walls) -> None:
    """Velocity bound, wall faces and column sums of the streamed kernels."""
    from .quantum import unprep_weights

    try:
        unprep_weights(u, build_model(scn.model), walls)
    except QLBMError as e:
        raise ConfigurationError(str(e), field="velocity") from None


def packaged_scenarios() -> list:
    return sorted(p.name[:-5] for p in resources.files("qlbm.scenarios").iterdir() if p.name.endswith(".json"))


def resolve_path(path) -> Path:
    """A file path, or the name of a scenario shipped with the package."""
    p = Path(path)
    if p.exists():
        return p
    name = p.name[:-5] if p.name.endswith(".json") else p.name
    if name in packaged_scenarios():
        return Path(str(resources.files("qlbm.scenarios").joinpath(name + ".json")))
    raise ConfigurationError(f"scenario file {str(path)!r} not found", field="path")


def parse_scenario(path, overrides: dict | None = None) -> Scenario:
    p = resolve_path(path)
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{p}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}", field="") from None
    return scenario_from_dict(doc, overrides, base_dir=p.parent)


# ---------------------------------------------------------------------------
# builders


def build_walls(scn: Scenario):
    return mask_from_spec(scn.walls, scn.grid.shape)


def build_velocity(scn: Scenario, walls=None) -> np.ndarray:
    grid = scn.grid
    v = scn.velocity
    try:
        if "file" in v:
            u = np.load(scn.base_dir / v["file"])
            if u.shape != (grid.d,) + grid.shape:
                raise ConfigurationError(f"velocity file has shape {u.shape}, expected {(grid.d,) + grid.shape}",
                                         field="velocity.file")
            return u.astype(float)
        preset = v["preset"]
        if preset == "swirl":
            return swirl_velocity(grid, _num(v.get("amplitude", 0.2), "velocity.amplitude"))
        if preset == "shear":
            return shear_velocity(grid, _num(v.get("amplitude", 1 / 3), "velocity.amplitude"))
        if preset == "uniform":
            return uniform_velocity(grid, v.get("value", [0.0] * grid.d))
        if preset == "random":
            rng = np.random.default_rng(v.get("seed", scn.seed))
            return random_divergence_free(grid, _num(v.get("umax", 0.3), "velocity.umax"), rng)
        if preset == "channel":
            mask = build_walls(scn) if walls is None else walls
            return channel_flow_around_mask(mask, _num(v.get("speed", 0.1), "velocity.speed"))
    except OSError as e:
        raise ConfigurationError(f"cannot read velocity file: {e}", field="velocity.file") from None
    except QLBMError as e:
        if isinstance(e, ConfigurationError):
            raise
        raise ConfigurationError(str(e), field="velocity") from None
    raise ConfigurationError(f"unknown velocity preset {v.get('preset')!r}", field="velocity.preset")


def build_initial(scn: Scenario, walls=None, u=None) -> np.ndarray:
    """Initial density with wall sites zeroed."""
    grid = scn.grid
    ini = scn.initial
    kind = ini["kind"]
    if kind == "gaussian":
        sigma = ini.get("sigma")
        phi = gaussian_blob(grid, sigma=None if sigma is None else _num(sigma, "initial.sigma"), center=ini.get("center"))
    elif kind == "delta":
        site = ini.get("site", [grid.L // 2] * grid.d)
        if len(site) != grid.d or not all(0 <= s < grid.L for s in site):
            raise ConfigurationError(f"site {site} is not on the grid", field="initial.site")
        phi = np.zeros(grid.shape)
        phi[tuple(site)] = 1.0
    elif kind == "uniform":
        phi = np.ones(grid.shape)
    elif kind == "plane":
        axis = ini.get("axis", "y")
        if axis not in "xyz"[:grid.d]:
            raise ConfigurationError(f"axis must be one of {list('xyz'[:grid.d])}", field="initial.axis")
        phi = np.zeros(grid.shape)
        idx = [slice(None)] * grid.d
        idx["xyz".index(axis)] = _int(ini.get("at", 0), "initial.at", 0) % grid.L
        phi[tuple(idx)] = 1.0
    elif kind == "shell":
        lo, hi = ini.get("lo"), ini.get("hi")
        if lo is None or hi is None or len(lo) != grid.d or len(hi) != grid.d:
            raise ConfigurationError("shell needs lo and hi with one entry per axis", field="initial")
        box = box_mask(grid.shape, lo, hi)
        grown = box.copy()
        for a in range(grid.d):
            grown |= np.roll(box, 1, axis=a) | np.roll(box, -1, axis=a)
        phi = (grown & ~box).astype(float)
    elif kind == "file":
        try:
            phi = np.load(scn.base_dir / ini["path"]).astype(float)
        except OSError as e:
            raise ConfigurationError(f"cannot read initial field: {e}", field="initial.path") from None
        if phi.shape != grid.shape:
            raise ConfigurationError(f"initial field shape {phi.shape} does not match grid {grid.shape}",
                                     field="initial.path")
    else:
        raise ConfigurationError(f"unknown initial condition {kind!r}", field="initial.kind")
    if np.any(phi < 0):
        raise ConfigurationError("initial density must be non-negative", field="initial")
    if walls is not None:
        phi = np.where(walls, 0.0, phi)
    if not np.any(phi):
        raise ConfigurationError("initial density is zero on every fluid site", field="initial")
    return phi
