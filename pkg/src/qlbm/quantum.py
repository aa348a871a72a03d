"""Statevector semantics of one QLBM time step.

Register layout: grid qubits are little-endian and dimension-blocked (x bits,
then y, then z), so the grid basis index equals the flattened site index
``x + L*y + L**2*z``.  The Q direction qubits sit above the grid; direction
``i`` is the one-hot pattern ``1 << i``.  Amplitudes are stored as a
``(2**Q, N)`` array whose row is the direction-register value, i.e. the
full basis index is ``grid + N * direction``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Histogram
from .errors import DegenerateProjectionError, DomainError, PreconditionError, QLBMError, ShapeError
from .lattice import GridSpec, LatticeModel, collision_kernels, shift
from .velocity import prep_angles, unprep_angles
from .walls import build_correction_plan, validate_wall_velocity, wall_flags

ROUTES = ("isometry", "gates")


@dataclass(frozen=True)
class RegisterLayout:
    grid: GridSpec
    model: LatticeModel
    n_ancilla: int = 0  # flag/wall registers are evaluated classically, never stored

    @property
    def n_grid(self) -> int:
        return self.grid.n_qubits

    @property
    def n_dir(self) -> int:
        return self.model.Q

    @property
    def n_qubits(self) -> int:
        return self.n_grid + self.n_dir + self.n_ancilla

    @staticmethod
    def one_hot(i: int) -> int:
        return 1 << i


@dataclass
class StateVector:
    amps: np.ndarray
    layout: RegisterLayout

    def __post_init__(self):
        expected = (2 ** self.layout.n_dir, self.layout.grid.N)
        if self.amps.shape != expected:
            raise ShapeError(f"amplitude array {self.amps.shape} does not match layout {expected}")

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def copy(self) -> "StateVector":
        return StateVector(self.amps.copy(), self.layout)

    def flat(self) -> np.ndarray:
        """Full statevector in canonical basis order."""
        return self.amps.reshape(-1)

    def grid_field(self, direction: int = 0) -> np.ndarray:
        return self.layout.grid.unflatten(self.amps[direction])

    def populated_directions(self, tol: float = 1e-14) -> np.ndarray:
        return np.flatnonzero(np.max(np.abs(self.amps), axis=1) > tol)


def encode_density(phi: np.ndarray, layout: RegisterLayout) -> StateVector:
    """Amplitude-encode a non-negative density on the grid register."""
    phi = np.asarray(phi, dtype=float)
    vec = layout.grid.flatten(phi)
    if np.any(~np.isfinite(vec)) or np.any(vec < -1e-14):
        raise DomainError("density must be finite and non-negative")
    nrm = np.linalg.norm(vec)
    if nrm == 0:
        raise DomainError("cannot encode an all-zero density")
    amps = np.zeros((2 ** layout.n_dir, layout.grid.N), dtype=complex)
    amps[0] = np.clip(vec, 0, None) / nrm
    return StateVector(amps, layout)


# ---------------------------------------------------------------------------
# gate primitives on the direction register


def _pair_rows(n_dir: int, qa: int, qb: int):
    rows = np.arange(2 ** n_dir)
    sel = ((rows >> qa) & 1 == 0) & ((rows >> qb) & 1 == 1)
    r01 = rows[sel]
    return r01, r01 ^ (1 << qa) ^ (1 << qb)


def apply_rbs(amps: np.ndarray, qa: int, qb: int, theta) -> np.ndarray:
    """RBS(theta) on direction qubits (qa, qb).

    With ``|ab>`` meaning qa=a, qb=b: ``|01> -> cos|01> + sin|10>`` and
    ``|10> -> -sin|01> + cos|10>``; ``|00>``, ``|11>`` are fixed.  ``theta``
    may be a scalar or one angle per grid site (grid-controlled rotation).
    """
    n_dir = int(np.log2(amps.shape[0]))
    r01, r10 = _pair_rows(n_dir, qa, qb)
    c, s = np.cos(theta), np.sin(theta)
    a01, a10 = amps[r01], amps[r10]
    out = amps.copy()
    out[r01] = c * a01 - s * a10
    out[r10] = s * a01 + c * a10
    return out


def apply_x(amps: np.ndarray, q: int) -> np.ndarray:
    rows = np.arange(amps.shape[0])
    return amps[rows ^ (1 << q)]


def apply_cnot(amps: np.ndarray, control: int, target: int) -> np.ndarray:
    rows = np.arange(amps.shape[0])
    src = np.where((rows >> control) & 1, rows ^ (1 << target), rows)
    return amps[src]


def apply_cz(amps: np.ndarray, grid_qubit: int, dir_qubit: int) -> np.ndarray:
    """Controlled-Z between a grid qubit and a direction qubit."""
    rows = np.arange(amps.shape[0])
    cols = np.arange(amps.shape[1])
    sign = np.where(((rows[:, None] >> dir_qubit) & 1) & ((cols[None, :] >> grid_qubit) & 1), -1.0, 1.0)
    return amps * sign


def apply_grid_unitaries(amps: np.ndarray, unitaries: np.ndarray) -> np.ndarray:
    """Apply ``unitaries[j]`` (2x2) to grid qubit ``j`` for every j."""
    n_rows, N = amps.shape
    n = N.bit_length() - 1
    if unitaries.shape != (n, 2, 2):
        raise ShapeError(f"expected {n} single-qubit unitaries, got {unitaries.shape}")
    t = amps.reshape((n_rows,) + (2,) * n)
    for j in range(n):
        ax = 1 + (n - 1 - j)  # C-order: first grid axis is the most significant qubit
        t = np.moveaxis(np.tensordot(unitaries[j], t, axes=([1], [ax])), 0, ax)
    return t.reshape(n_rows, N)


def apply_gate_sequence(amps: np.ndarray, seq, adjoint: bool = False) -> np.ndarray:
    """Run ``[("X", q) | ("RBS", qa, qb, theta)]``; ``adjoint`` reverses and inverts."""
    ops = reversed(seq) if adjoint else seq
    for op in ops:
        if op[0] == "X":
            amps = apply_x(amps, op[1])
        elif op[0] == "RBS":
            _, qa, qb, theta = op
            amps = apply_rbs(amps, qa, qb, -theta if adjoint else theta)
        elif op[0] == "CNOT":
            amps = apply_cnot(amps, op[1], op[2])
        else:
            raise ValueError(f"unknown gate {op[0]!r}")
    return amps


def execute_program(state: StateVector, program) -> StateVector:
    """Run a compiled :class:`qlbm.velocity.GateProgram` on the register."""
    amps = state.amps
    for op in program.ops:
        if op.kind == "RBS":
            (_, qa), (_, qb) = op.targets
            amps = apply_rbs(amps, qa, qb, op.angle)
        elif op.kind == "CZ":
            (_, dq), = op.targets
            (_, gq), = op.controls
            amps = apply_cz(amps, gq, dq)
        else:
            raise ValueError(f"unsupported program gate {op.kind!r}")
    return StateVector(amps, state.layout)


# ---------------------------------------------------------------------------
# PREP / UNPREP construction


def _subspace_rows(Q: int) -> np.ndarray:
    return np.array([0] + [1 << i for i in range(Q)])


def complete_columns(v: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Orthonormal completion per site by Gram-Schmidt over the canonical basis.

    ``v`` has shape ``(N, D)`` with unit rows.  Returns ``W`` of shape
    ``(N, D, D)`` with ``W[:, :, 0] = v``; remaining columns come from
    ``e_0, e_1, ...`` in index order, skipping vectors whose residual norm is
    below ``tol``.
    """
    N, D = v.shape
    W = np.zeros((N, D, D))
    W[:, :, 0] = v
    count = np.ones(N, dtype=int)
    sites = np.arange(N)
    for k in range(D):
        # residual of e_k against the columns accepted so far (unused columns are zero)
        w = -W @ W[:, k, :][:, :, None]
        w = w[:, :, 0]
        w[:, k] += 1.0
        nrm = np.linalg.norm(w, axis=1)
        ok = (nrm > tol) & (count < D)
        W[sites[ok], :, count[ok]] = w[ok] / nrm[ok, None]
        count[ok] += 1
    if np.any(count != D):
        raise DomainError("unitary completion failed")
    return W


@dataclass
class Collision:
    """Everything needed to apply PREP and UNPREP for one velocity field."""
    layout: RegisterLayout
    route: str
    prep_amplitudes: np.ndarray  # (Q, N): sqrt of wall-corrected kernels
    unprep_column: np.ndarray  # (Q, N): U_Q^dagger |r,0> one-hot amplitudes
    prep_gates: list = field(default_factory=list)
    unprep_adjoint_gates: list = field(default_factory=list)
    _W: np.ndarray | None = None

    @property
    def unprep_unitary(self) -> np.ndarray:
        """Per-site ``(Q+1)x(Q+1)`` matrix of U_Q^dagger on the zero/one-hot subspace."""
        if self._W is None:
            v = np.vstack([np.zeros(self.unprep_column.shape[1]), self.unprep_column]).T
            self._W = complete_columns(v)
        return self._W


def _wall_angle_fields(flags: np.ndarray, table: dict, Q: int) -> dict:
    """Per-direction angle fields realising the per-pattern rotation sequences."""
    out = {}
    patterns = np.unique(flags)
    for j in range(1, Q):
        theta = np.zeros(flags.shape)
        for p in patterns:
            for jj, angle in table[int(p)]:
                if jj == j:
                    theta[flags == p] = angle
        if np.any(theta):
            out[j] = theta
    return out


def unprep_weights(u: np.ndarray, model: LatticeModel, walls: np.ndarray | None = None) -> np.ndarray:
    """``q_i(r) = k_i(r - c_i)``, with weight arriving from a wall folded into ``q_0``.

    Raises DomainError unless every column sums to one, which holds exactly
    for discretely divergence-free flow.
    """
    k_open = collision_kernels(model, u)
    q = np.stack([shift(k_open[i], model.directions[i]) for i in range(model.Q)])
    if walls is not None:
        walls = np.asarray(walls, dtype=bool)
        validate_wall_velocity(walls, u, model)
        flags = wall_flags(walls, model)
        for j in range(1, model.Q):
            # direction j arrives from r - c_j = r + c_opp(j): blocked if that is a wall
            incoming_wall = (flags >> (model.opposite(j) - 1)) & 1 == 1
            q[0] = np.where(incoming_wall, q[0] + q[j], q[0])
            q[j] = np.where(incoming_wall, 0.0, q[j])
    colsum = q.sum(axis=0)
    if np.max(np.abs(colsum - 1)) > 1e-10:
        raise DomainError(
            f"sum_i k_i(r - c_i) deviates from 1 by {np.max(np.abs(colsum - 1)):.3g}; velocity field is not discretely divergence-free"
        )
    return q


def build_collision(u: np.ndarray, model: LatticeModel, walls: np.ndarray | None = None,
                    route: str = "isometry", grid: GridSpec | None = None) -> Collision:
    if route not in ROUTES:
        raise ValueError(f"route must be one of {ROUTES}")
    grid = grid or GridSpec(L=u.shape[1], d=model.d)
    layout = RegisterLayout(grid, model)
    Q = model.Q
    k = collision_kernels(model, u, walls)
    q = unprep_weights(u, model, walls)
    flags = None if walls is None else wall_flags(np.asarray(walls, dtype=bool), model)
    flat = lambda a: a.reshape(a.shape[0], -1, order="F")
    col = Collision(layout=layout, route=route,
                    prep_amplitudes=np.sqrt(np.clip(flat(k), 0, None)),
                    unprep_column=np.sqrt(np.clip(flat(q), 0, None)))
    if route == "gates":
        col.prep_gates, col.unprep_adjoint_gates = _gate_sequences(u, model, grid, flags)
    return col


def _gate_sequences(u, model, grid, flags):
    w = model.w
    d = model.d
    fl = lambda a: grid.flatten(a)

    # PREP: sqrt(w0)|0_H> + sum_a sqrt(2 w_a)|(2a+1)_H>, then split each axis pair
    prep = [("X", 0)]
    remaining = 1.0
    for a in range(d):
        share = 2 * w[2 * a + 1]
        prep.append(("RBS", 2 * a + 1, 0, float(np.arcsin(np.sqrt(share / remaining)))))
        remaining -= share
    for a in range(d):
        prep.append(("RBS", 2 * a + 2, 2 * a + 1, fl(prep_angles(u, a))))

    # UNPREP adjoint: sqrt(w0)|0_H> + chain over axis pairs, then split pairs
    g = unprep_angles(u, model)
    unprep = [("X", 0), ("RBS", 1, 0, float(np.arccos(np.sqrt(w[0]))))]
    for a, name in zip(range(d - 1), ("lambda", "mu")):
        unprep.append(("RBS", 2 * a + 3, 2 * a + 1, fl(g[name])))
    for a, name in zip(range(d), "xyz"):
        unprep.append(("RBS", 2 * a + 2, 2 * a + 1, fl(g[name])))

    if flags is not None:
        plan = build_correction_plan(model)
        for j, theta in sorted(_wall_angle_fields(flags, plan.prep, model.Q).items()):
            prep.append(("RBS", 0, j, fl(theta)))
        for j, theta in sorted(_wall_angle_fields(flags, plan.unprep_adjoint, model.Q).items()):
            unprep.append(("RBS", 0, j, fl(theta)))
    return prep, unprep


def _check_dir_zero(state: StateVector, what: str) -> None:
    rest = np.linalg.norm(state.amps[1:])
    if rest > 1e-12 * max(1.0, state.norm()):
        raise PreconditionError(f"{what} requires the direction register in |0...0>; found weight {rest:.3g} elsewhere")


def _as_collision(state: StateVector, u, route: str, walls) -> Collision:
    if isinstance(u, Collision):
        return u
    return build_collision(np.asarray(u, dtype=float), state.layout.model, walls, route, state.layout.grid)


def apply_prep(state: StateVector, u, route: str = "isometry", walls=None) -> StateVector:
    """``|r>|0> -> |r> sum_i sqrt(k_i(r)) |i_H>``.

    ``u`` is a velocity field or a prebuilt :class:`Collision`.
    """
    collision = _as_collision(state, u, route, walls)
    _check_dir_zero(state, "PREP")
    if collision.route == "gates":
        return StateVector(apply_gate_sequence(state.amps, collision.prep_gates), state.layout)
    out = np.zeros_like(state.amps)
    for i in range(state.layout.n_dir):
        out[1 << i] = collision.prep_amplitudes[i] * state.amps[0]
    return StateVector(out, state.layout)


def apply_streaming(state: StateVector, model: LatticeModel) -> StateVector:
    """Shift the grid index by ``c_i`` inside each one-hot sector ``|i_H>``, i >= 1."""
    grid = state.layout.grid
    out = state.amps.copy()
    for i in range(1, model.Q):
        row = 1 << i
        out[row] = grid.flatten(shift(grid.unflatten(state.amps[row]), model.directions[i]))
    return StateVector(out, state.layout)


def apply_unprep(state: StateVector, u, route: str = "isometry", walls=None) -> StateVector:
    """Apply U_Q, whose adjoint maps ``|r>|0>`` to ``sum_i sqrt(k_i(r - c_i)) |i_H>``."""
    collision = _as_collision(state, u, route, walls)
    if collision.route == "gates":
        return StateVector(apply_gate_sequence(state.amps, collision.unprep_adjoint_gates, adjoint=True),
                           state.layout)
    rows = _subspace_rows(state.layout.n_dir)
    W = collision.unprep_unitary
    sub = state.amps[rows]
    out = state.amps.copy()
    out[rows] = np.einsum("rba,br->ar", W, sub)
    return StateVector(out, state.layout)


def apply_wall_corrections(state: StateVector, flags: np.ndarray, plan, stage: str) -> StateVector:
    """Per-site fold rotations keyed by wall-flag pattern.

    ``stage="prep"`` applies V_P; ``stage="unprep"`` applies V_Q, the inverse of
    the rotations that follow the UNPREP adjoint.
    """
    if stage not in ("prep", "unprep"):
        raise ValueError("stage must be 'prep' or 'unprep'")
    flat_flags = state.layout.grid.flatten(np.asarray(flags))
    missing = set(np.unique(flat_flags).tolist()) - set(plan.prep)
    if missing:
        raise QLBMError(f"correction plan has no entry for wall patterns {sorted(missing)}")
    table = plan.prep if stage == "prep" else plan.unprep_adjoint
    seq = [("RBS", 0, j, theta) for j, theta in sorted(_wall_angle_fields(flat_flags, table, state.layout.n_dir).items())]
    return StateVector(apply_gate_sequence(state.amps, seq, adjoint=(stage == "unprep")), state.layout)


def postselect(state: StateVector):
    """Project the direction register on ``|0...0>``; returns (renormalised state, p)."""
    p = float(np.sum(np.abs(state.amps[0]) ** 2)) / state.norm() ** 2
    if p < 1e-15:
        raise DegenerateProjectionError(f"post-selection probability {p:.3g} is degenerate")
    out = np.zeros_like(state.amps)
    out[0] = state.amps[0] / np.linalg.norm(state.amps[0])
    return StateVector(out, state.layout), p


class QLBMStep:
    """One compiled time step (PREP, streaming, UNPREP) for a fixed velocity field."""

    def __init__(self, u, model: LatticeModel, walls=None, route: str = "isometry"):
        self.model = model
        self.walls = None if walls is None else np.asarray(walls, dtype=bool)
        self.collision = build_collision(np.asarray(u, dtype=float), model, self.walls, route)
        self.layout = self.collision.layout

    def circuit(self, state: StateVector) -> StateVector:
        """Full pre-measurement state ``U_Q U_S U_P |state>``."""
        s = apply_prep(state, self.collision)
        s = apply_streaming(s, self.model)
        return apply_unprep(s, self.collision)

    def __call__(self, state: StateVector):
        return postselect(self.circuit(state))


def qlbm_step(state: StateVector, u, model: LatticeModel, walls=None, route: str = "isometry"):
    """Return (post-selected next state, success probability)."""
    return QLBMStep(u, model, walls, route)(state)


def run_chain(phi0, u, T: int, model: LatticeModel, walls=None, route: str = "isometry",
              readout_period: int | None = None, reload=None):
    """Chain ``T`` post-selected steps.

    Returns ``(final amplitude field, cumulative success probability,
    trajectory of amplitude fields)``.  Every ``readout_period`` steps the
    optional ``reload(state, t) -> StateVector`` replaces the state; the
    default is the exact (noise-free) readout, which leaves it unchanged.
    """
    if T < 1:
        raise DomainError("run_chain needs T >= 1")
    step = QLBMStep(u, model, walls, route)
    state = encode_density(phi0, step.layout)
    traj = [state.grid_field().real.copy()]
    cum = 1.0
    for t in range(1, T + 1):
        state, p = step(state)
        cum *= p
        if readout_period and reload is not None and t % readout_period == 0:
            state = reload(state, t)
        traj.append(state.grid_field().real.copy())
    return traj[-1], cum, traj


# ---------------------------------------------------------------------------
# sampling


@dataclass
class ShotRecord:
    """Per-shot outcomes.  ``accepted`` is a pure function of ``observed``."""
    grid: np.ndarray
    direction: np.ndarray  # before injected bit flips
    observed: np.ndarray  # after injected bit flips

    @property
    def accepted(self) -> np.ndarray:
        return classify(self.observed)


def classify(observed_direction: np.ndarray) -> np.ndarray:
    """Accept only the all-zeros direction register."""
    return np.asarray(observed_direction) == 0


def sample_shots(state: StateVector, shots: int, setting=None, noise_p: float = 0.0, seed=None) -> ShotRecord:
    if shots < 1:
        raise DomainError("shots must be >= 1")
    if not 0.0 <= noise_p <= 1.0:
        raise DomainError("noise_p must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    amps = state.amps
    if setting is not None:
        unitaries = getattr(setting, "unitaries", setting)
        amps = apply_grid_unitaries(amps, np.asarray(unitaries))
    prob = np.abs(amps.reshape(-1)) ** 2
    prob /= prob.sum()
    idx = rng.choice(prob.size, size=shots, p=prob)
    N = state.layout.grid.N
    direction = idx // N
    observed = direction.copy()
    if noise_p > 0:
        flips = rng.random((shots, state.layout.n_dir)) < noise_p
        observed ^= (flips * (1 << np.arange(state.layout.n_dir))).sum(axis=1)
    return ShotRecord(grid=idx % N, direction=direction, observed=observed)


def measure_histogram(state: StateVector, shots: int, setting=None, noise_p: float = 0.0, seed=None):
    """Sample, classify and tally accepted grid outcomes.

    Returns ``(Histogram, accepted_count, rejected_count)``.
    """
    rec = sample_shots(state, shots, setting=setting, noise_p=noise_p, seed=seed)
    acc = rec.accepted
    counts = np.bincount(rec.grid[acc], minlength=state.layout.grid.N)
    return Histogram(counts, state.layout.grid), int(acc.sum()), int((~acc).sum())
