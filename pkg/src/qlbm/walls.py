"""Wall boundaries: masks, per-site wall flags and the V_P / V_Q corrections.

The wall register is not materialised.  ``wall_flags`` evaluates what the
flag circuit would write for each grid basis state, and the correction
rotations are applied as grid-controlled RBS gates keyed by that pattern.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError, ShapeError
from .lattice import LatticeModel, shift


def wall_flags(mask: np.ndarray, model: LatticeModel) -> np.ndarray:
    """Integer flag pattern per site; bit ``i-1`` set iff ``r + c_i`` is a wall.

    Wall sites themselves get pattern 0.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != model.d:
        raise ShapeError(f"wall mask has {mask.ndim} dims, {model.name} needs {model.d}")
    if mask.all():
        raise DomainError("wall mask leaves no fluid site")
    flags = np.zeros(mask.shape, dtype=np.int64)
    for i in range(1, model.Q):
        flags |= shift(mask, -model.directions[i]).astype(np.int64) << (i - 1)
    flags[mask] = 0
    return flags


def blocked_directions(pattern: int, model: LatticeModel) -> list:
    return [i for i in range(1, model.Q) if pattern >> (i - 1) & 1]


def _fold_sequence(model: LatticeModel, blocked) -> list:
    """Rotations folding each blocked weight into the rest direction in turn."""
    w = model.w
    acc = w[0]
    seq = []
    for j in sorted(blocked):
        seq.append((j, float(np.arcsin(np.sqrt(w[j] / (acc + w[j]))))))
        acc += w[j]
    return seq


@dataclass
class CorrectionPlan:
    """Per flag pattern, ordered ``[(direction, angle)]`` rotations.

    ``prep[p]`` are RBS gates between the rest qubit and ``direction`` applied
    after PREP.  ``unprep_adjoint[p]`` are the rotations that, applied after
    the UNPREP adjoint, zero the amplitudes arriving from wall sites; the
    V_Q operator placed before UNPREP is their inverse in reverse order.
    """
    model: LatticeModel
    prep: dict = field(default_factory=dict)
    unprep_adjoint: dict = field(default_factory=dict)

    def unprep(self, pattern: int) -> list:
        return [(j, -theta) for j, theta in reversed(self.unprep_adjoint[pattern])]


def build_correction_plan(model: LatticeModel) -> CorrectionPlan:
    if model.name not in ("D2Q5", "D3Q7"):
        raise ConfigurationError(f"no wall corrections for model {model.name!r}", field="model")
    plan = CorrectionPlan(model=model)
    for pattern in range(2 ** (model.Q - 1)):
        out_blocked = blocked_directions(pattern, model)
        plan.prep[pattern] = _fold_sequence(model, out_blocked)
        plan.unprep_adjoint[pattern] = _fold_sequence(model, [model.opposite(i) for i in out_blocked])
    return plan


def validate_wall_velocity(mask: np.ndarray, u: np.ndarray, model: LatticeModel, atol: float = 1e-12) -> None:
    """Reject velocity fields with flow through a wall face.

    For every fluid site ``r`` with a wall at ``r + c_i`` the component along
    ``c_i`` must vanish at both ``r`` and ``r + c_i``; otherwise the
    velocity-independent correction angles would not zero the blocked weight.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != u.shape[1:]:
        raise ShapeError("wall mask shape does not match velocity field")
    for i in range(1, model.Q):
        a = model.axis(i)
        face = shift(mask, -model.directions[i]) & ~mask
        if not face.any():
            continue
        here = np.abs(u[a][face])
        there = np.abs(shift(u[a], -model.directions[i])[face])
        worst = max(here.max(), there.max())
        if worst > atol:
            raise DomainError(
                f"velocity component {'xyz'[a]} is {worst:.3g} on a wall face (direction {i}); normal flow into walls must vanish"
            )


# ---------------------------------------------------------------------------
# mask construction


def slab_mask(shape, axis: int, positions) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    for p in positions:
        idx = [slice(None)] * len(shape)
        idx[axis] = p
        mask[tuple(idx)] = True
    return mask


def box_mask(shape, lo, hi) -> np.ndarray:
    """Closed box ``lo <= r <= hi`` (inclusive extents)."""
    mask = np.zeros(shape, dtype=bool)
    mask[tuple(slice(a, b + 1) for a, b in zip(lo, hi))] = True
    return mask


def mask_from_spec(spec, shape) -> np.ndarray | None:
    """Build a mask from scenario entries.

    ``spec`` is a list of primitives::

        {"slab": {"axis": "y", "at": [0, 31]}}
        {"box": {"lo": [8, 7, 7], "hi": [12, 11, 11]}}
        {"sites": [[x, y, z], ...]}
    """
    if not spec:
        return None
    mask = np.zeros(shape, dtype=bool)
    for n, prim in enumerate(spec):
        where = f"walls[{n}]"
        if not isinstance(prim, dict) or len(prim) != 1:
            raise ConfigurationError("each wall primitive must be a single-key object", field=where)
        (kind, body), = prim.items()
        if kind == "slab":
            axis = body.get("axis")
            axis = "xyz".index(axis) if isinstance(axis, str) and axis in "xyz" else axis
            if not isinstance(axis, int) or not 0 <= axis < len(shape):
                raise ConfigurationError(f"bad slab axis {body.get('axis')!r}", field=where + ".slab.axis")
            mask |= slab_mask(shape, axis, body.get("at", []))
        elif kind == "box":
            lo, hi = body.get("lo"), body.get("hi")
            if lo is None or hi is None or len(lo) != len(shape) or len(hi) != len(shape):
                raise ConfigurationError("box needs lo and hi with one entry per axis", field=where + ".box")
            mask |= box_mask(shape, lo, hi)
        elif kind == "sites":
            for s in body:
                if len(s) != len(shape):
                    raise ConfigurationError(f"site {s} has wrong dimension", field=where + ".sites")
                mask[tuple(s)] = True
        else:
            raise ConfigurationError(f"unknown wall primitive {kind!r}", field=where)
    return mask


def channel_flow_around_mask(mask: np.ndarray, speed: float = 0.1) -> np.ndarray:
    """Streamwise flow ``u_x(y, z)`` that stops in the shadow of any wall.

    ``u_x`` is independent of ``x`` (so the central divergence vanishes) and
    is zero on every (y, z) column containing a wall site, which makes the
    normal component vanish on all wall faces.
    """
    mask = np.asarray(mask, dtype=bool)
    blocked = mask.any(axis=0)
    u = np.zeros((mask.ndim,) + mask.shape)
    u[0] = np.where(blocked, 0.0, speed)[None, ...]
    return u
