"""Classical lattice Boltzmann reference for advection-diffusion (BGK, tau = 1).

Fields are plain numpy arrays indexed ``[x, y]`` or ``[x, y, z]``; velocity
fields carry a leading component axis, ``u[a, x, y, z]``.  The flattened site
index is ``x + L*y + L**2*z`` (Fortran order), which is also the grid-register
basis index used by :mod:`qlbm.quantum`.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConfigurationError, DomainError, ShapeError

CS2 = 1.0 / 3.0
U_MAX = 1.0 / 3.0

_WEIGHTS = {
    "D2Q5": (Fraction(1, 3),) + (Fraction(1, 6),) * 4,
    "D3Q7": (Fraction(1, 4),) + (Fraction(1, 8),) * 6,
}


@dataclass(frozen=True)
class LatticeModel:
    name: str
    d: int
    weights: tuple  # Fractions, rest direction first
    directions: np.ndarray  # (Q, d) integer
    cs: float = 1.0 / np.sqrt(3.0)

    @property
    def Q(self) -> int:
        return len(self.weights)

    @property
    def w(self) -> np.ndarray:
        return np.array([float(x) for x in self.weights])

    def opposite(self, i: int) -> int:
        if i == 0:
            return 0
        return i + 1 if i % 2 == 1 else i - 1

    def axis(self, i: int) -> int:
        """Axis index (0-based) of direction ``i >= 1``."""
        return (i - 1) // 2


def build_model(name: str) -> LatticeModel:
    """Return the D2Q5 or D3Q7 model.

    Directions follow ``c_i = (-1)**(i+1) e_{floor((i+1)/2)}``: 1 = +x, 2 = -x,
    3 = +y, 4 = -y, 5 = +z, 6 = -z.
    """
    if name not in _WEIGHTS:
        raise ConfigurationError(f"unsupported lattice model {name!r}; expected one of {sorted(_WEIGHTS)}", field="model")
    weights = _WEIGHTS[name]
    Q = len(weights)
    d = (Q - 1) // 2
    c = np.zeros((Q, d), dtype=int)
    for i in range(1, Q):
        c[i, (i + 1) // 2 - 1] = (-1) ** (i + 1)
    c.setflags(write=False)
    return LatticeModel(name=name, d=d, weights=weights, directions=c)


@dataclass(frozen=True)
class GridSpec:
    L: int
    d: int

    def __post_init__(self):
        if self.L < 1 or self.L & (self.L - 1):
            raise ShapeError(f"grid side L={self.L} is not a power of two")
        if self.d not in (2, 3):
            raise ShapeError(f"dimension d={self.d} not supported")

    @property
    def shape(self) -> tuple:
        return (self.L,) * self.d

    @property
    def N(self) -> int:
        return self.L ** self.d

    @property
    def l(self) -> int:
        return self.L.bit_length() - 1

    @property
    def n_qubits(self) -> int:
        return self.d * self.l

    def flatten(self, field: np.ndarray) -> np.ndarray:
        if field.shape != self.shape:
            raise ShapeError(f"field shape {field.shape} does not match grid {self.shape}")
        return field.reshape(-1, order="F")

    def unflatten(self, vec: np.ndarray) -> np.ndarray:
        vec = np.asarray(vec)
        if vec.shape != (self.N,):
            raise ShapeError(f"vector of length {vec.shape} does not match N={self.N}")
        return vec.reshape(self.shape, order="F")

    def coords(self) -> np.ndarray:
        """Integer coordinates, shape ``(d, L, ..., L)``."""
        return np.stack(np.meshgrid(*[np.arange(self.L)] * self.d, indexing="ij"))

    @classmethod
    def of(cls, field: np.ndarray) -> "GridSpec":
        if len(set(field.shape)) != 1:
            raise ShapeError(f"field shape {field.shape} is not a cube")
        return cls(L=field.shape[0], d=field.ndim)


def shift(a: np.ndarray, c) -> np.ndarray:
    """Periodic translation: ``out[r] = a[r - c]``."""
    return np.roll(a, shift=tuple(int(v) for v in c), axis=tuple(range(len(c))))


def discrete_divergence(u: np.ndarray) -> np.ndarray:
    """Central-difference divergence with periodic wrap."""
    d = u.shape[0]
    div = np.zeros(u.shape[1:])
    for a in range(d):
        div += (np.roll(u[a], -1, axis=a) - np.roll(u[a], 1, axis=a)) / 2.0
    return div


def _check_velocity(model: LatticeModel, u: np.ndarray) -> None:
    if u.ndim != model.d + 1 or u.shape[0] != model.d:
        raise ShapeError(f"velocity shape {u.shape} does not match {model.name}")
    if not np.all(np.isfinite(u)):
        raise DomainError("velocity field has non-finite entries")
    if np.max(np.abs(u)) > U_MAX + 1e-12:
        raise DomainError(f"|u| = {np.max(np.abs(u)):.6g} exceeds 1/3; collision kernels would go negative")


def collision_kernels(model: LatticeModel, u: np.ndarray, walls: np.ndarray | None = None) -> np.ndarray:
    """Equilibrium weights ``k_i(r) = w_i (1 + 3 c_i.u(r))``, shape ``(Q, *grid)``.

    With a wall mask, streaming from a fluid site into a wall neighbour is
    folded into the rest weight so every column still sums to one.
    """
    _check_velocity(model, u)
    c = model.directions
    k = np.empty((model.Q,) + u.shape[1:])
    for i in range(model.Q):
        cu = np.tensordot(c[i].astype(float), u, axes=(0, 0))
        k[i] = model.w[i] * (1.0 + cu / CS2)
    if walls is not None:
        walls = np.asarray(walls, dtype=bool)
        if walls.shape != u.shape[1:]:
            raise ShapeError("wall mask shape does not match velocity field")
        for i in range(1, model.Q):
            blocked = shift(walls, -c[i]) & ~walls  # r + c_i is a wall
            k[0] = np.where(blocked, k[0] + k[i], k[0])
            k[i] = np.where(blocked, 0.0, k[i])
    return k


def classical_step(phi: np.ndarray, kernels: np.ndarray, model: LatticeModel) -> np.ndarray:
    """One LBM step ``phi'(r) = sum_i k_i(r - c_i) phi(r - c_i)``."""
    if kernels.shape != (model.Q,) + phi.shape:
        raise ShapeError(f"kernel shape {kernels.shape} does not match field {phi.shape} for {model.name}")
    out = kernels[0] * phi
    for i in range(1, model.Q):
        out = out + shift(kernels[i] * phi, model.directions[i])
    return out


def simulate_classical(phi0: np.ndarray, u: np.ndarray, T: int, model: LatticeModel,
                       walls: np.ndarray | None = None) -> list:
    """Trajectory ``[phi_0, ..., phi_T]``."""
    if T < 0:
        raise DomainError("number of steps must be non-negative")
    k = collision_kernels(model, u, walls)
    phi = np.array(phi0, dtype=float)
    if walls is not None:
        if np.any(phi[np.asarray(walls, dtype=bool)] != 0):
            raise DomainError("initial field is nonzero on wall sites")
    traj = [phi]
    for _ in range(T):
        phi = classical_step(phi, k, model)
        traj.append(phi)
    return traj


# ---------------------------------------------------------------------------
# presets


def swirl_velocity(grid: GridSpec, amplitude: float = 0.2) -> np.ndarray:
    """``u = A(-sin(2 pi y/L), sin(2 pi x/L), 0)``; exactly divergence-free."""
    X = grid.coords()
    u = np.zeros((grid.d,) + grid.shape)
    u[0] = -amplitude * np.sin(2 * np.pi * X[1] / grid.L)
    u[1] = amplitude * np.sin(2 * np.pi * X[0] / grid.L)
    return u


def shear_velocity(grid: GridSpec, amplitude: float = 1.0 / 3.0) -> np.ndarray:
    """``u = (A sin(2 pi y/L), 0, ...)``."""
    X = grid.coords()
    u = np.zeros((grid.d,) + grid.shape)
    u[0] = amplitude * np.sin(2 * np.pi * X[1] / grid.L)
    return u


def uniform_velocity(grid: GridSpec, value) -> np.ndarray:
    value = np.asarray(value, dtype=float)
    if value.shape != (grid.d,):
        raise ShapeError(f"uniform velocity needs {grid.d} components")
    return np.broadcast_to(value.reshape((grid.d,) + (1,) * grid.d), (grid.d,) + grid.shape).copy()


def random_divergence_free(grid: GridSpec, umax: float, rng: np.random.Generator) -> np.ndarray:
    """Random field built as a discrete curl of a random potential.

    Central differences commute, so the central-difference divergence of a
    central-difference curl vanishes identically.
    """
    def D(a, axis):
        return (np.roll(a, -1, axis=axis) - np.roll(a, 1, axis=axis)) / 2.0

    if grid.d == 2:
        psi = rng.standard_normal(grid.shape)
        u = np.stack([D(psi, 1), -D(psi, 0)])
    else:
        A = rng.standard_normal((3,) + grid.shape)
        u = np.stack([
            D(A[2], 1) - D(A[1], 2),
            D(A[0], 2) - D(A[2], 0),
            D(A[1], 0) - D(A[0], 1),
        ])
    u += rng.uniform(-1, 1, size=(grid.d,) + (1,) * grid.d)
    peak = np.max(np.abs(u))
    return u * (umax / peak) if peak > 0 else u


def gaussian_blob(grid: GridSpec, sigma: float | None = None, center=None) -> np.ndarray:
    """Isotropic Gaussian normalised to unit L2 norm (default centre L/2, sigma L/8)."""
    sigma = grid.L / 8 if sigma is None else sigma
    center = np.full(grid.d, grid.L / 2) if center is None else np.asarray(center, dtype=float)
    X = grid.coords()
    r2 = sum((X[a] - center[a]) ** 2 for a in range(grid.d))
    phi = np.exp(-r2 / (2 * sigma ** 2))
    return phi / np.linalg.norm(phi)
