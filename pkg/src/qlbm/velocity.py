"""Velocity-field compilation: rotation angles, Walsh-Hadamard transforms, QPIXL.

The PREP and UNPREP operators are built from grid-controlled RBS rotations
whose angles are pointwise functions of the velocity field.  A
grid-controlled rotation with angle field ``theta(r)`` compiles to an
alternating rotation / controlled-Z sequence whose rotation angles are the
Walsh-Hadamard coefficients of ``theta`` in Gray-code order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError
from .lattice import LatticeModel, build_model, collision_kernels, shift

_ATOL = 1e-12


def _safe_arccos_sqrt(arg: np.ndarray, what: str) -> np.ndarray:
    arg = np.asarray(arg, dtype=float)
    if np.any(~np.isfinite(arg)) or np.any(arg < -_ATOL) or np.any(arg > 1 + _ATOL):
        bad = arg[~np.isfinite(arg) | (arg < -_ATOL) | (arg > 1 + _ATOL)]
        raise DomainError(f"{what}: arccos argument outside [0, 1] (e.g. {bad.flat[0]!r})")
    return np.arccos(np.sqrt(np.clip(arg, 0.0, 1.0)))


def prep_angles(u: np.ndarray, axis: int) -> np.ndarray:
    """``g^P_a(r) = arccos sqrt((1 + 3 u_a(r)) / 2)``."""
    return _safe_arccos_sqrt((1.0 + 3.0 * u[axis]) / 2.0, f"prep angle axis {axis}")


def unprep_angles(u: np.ndarray, model: LatticeModel | None = None) -> dict:
    """Angle fields for the UNPREP adjoint.

    Returns per-axis splits ``"x", "y", ("z")`` and the chain angles
    ``"lambda"`` (and ``"mu"`` for D3Q7).  Writing ``q_i(r) = k_i(r - c_i)``
    and ``P_a = q_{2a+1} + q_{2a+2}``::

        cos^2 g_a      = q_{2a+1} / P_a
        cos^2 lambda   = P_x / (1 - w_0)
        cos^2 mu       = P_y / (1 - w_0 - P_x)

    For D3Q7 these are ``arccos sqrt((1+3u_i(r-c)) / (2+3u_i(r-c)-3u_i(r+c)))``,
    ``arccos sqrt((2+3u_x(r-c_1)-3u_x(r+c_1))/6)`` and the y/x ratio for mu.
    """
    model = model or build_model("D3Q7")
    k = collision_kernels(model, u)
    q = np.stack([shift(k[i], model.directions[i]) for i in range(model.Q)])
    names = "xyz"
    out = {}
    P = []
    for a in range(model.d):
        pa = q[2 * a + 1] + q[2 * a + 2]
        if np.any(pa <= 0):
            raise DomainError(f"UNPREP denominator for axis {names[a]} is not strictly positive")
        P.append(pa)
        out[names[a]] = _safe_arccos_sqrt(q[2 * a + 1] / pa, f"unprep angle {names[a]}")
    remaining = 1.0 - model.w[0]
    for a, name in zip(range(model.d - 1), ("lambda", "mu")):
        if np.any(remaining <= 0):
            raise DomainError(f"UNPREP denominator for {name} is not strictly positive")
        out[name] = _safe_arccos_sqrt(P[a] / remaining, f"unprep angle {name}")
        remaining = remaining - P[a]
    return out


# ---------------------------------------------------------------------------
# Walsh-Hadamard transforms


def _check_pow2(n: int) -> None:
    if n < 1 or n & (n - 1):
        raise ShapeError(f"length {n} is not a power of two")


def _butterflies(a: np.ndarray, halve: bool) -> np.ndarray:
    """Hadamard butterflies along the last axis."""
    n = a.shape[-1]
    lead = a.shape[:-1]
    h = 1
    while h < n:
        b = a.reshape(lead + (n // (2 * h), 2, h))
        x, y = b[..., 0, :], b[..., 1, :]
        if halve:
            a = np.stack(((x + y) / 2, (x - y) / 2), axis=-2).reshape(lead + (n,))
        else:
            a = np.stack((x + y, x - y), axis=-2).reshape(lead + (n,))
        h *= 2
    return a


def fwht(a) -> np.ndarray:
    """Walsh-Hadamard transform with per-level halving, ``(1/2^n) H^{(x)n} a``."""
    a = np.array(a, dtype=float)
    if a.ndim != 1:
        raise ShapeError("fwht expects a vector")
    _check_pow2(a.shape[0])
    return _butterflies(a, halve=True)


def inverse_fwht(a) -> np.ndarray:
    """Inverse of :func:`fwht`: same butterflies without halving."""
    a = np.array(a, dtype=float)
    if a.ndim != 1:
        raise ShapeError("inverse_fwht expects a vector")
    _check_pow2(a.shape[0])
    return _butterflies(a, halve=False)


def fwht_axes(a: np.ndarray) -> np.ndarray:
    """Halving FWHT along every axis of ``a`` (separable transform)."""
    for ax in range(a.ndim):
        a = np.moveaxis(_butterflies(np.moveaxis(a, ax, -1), halve=True), -1, ax)
    return a


@dataclass
class SparseSpectrum:
    """Sparse approximation of the flattened field's Walsh-Hadamard transform."""
    entries: dict
    L: int
    d: int
    K: int
    butterflies: int = 0

    @property
    def R(self) -> int:
        return self.L // self.K

    @property
    def N(self) -> int:
        return self.L ** self.d

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.N)
        for k, v in self.entries.items():
            out[k] = v
        return out

    def __len__(self):
        return len(self.entries)


def _block_midpoints(f: np.ndarray, K: int) -> np.ndarray:
    """Value at each block centre, averaging the 2^d central samples."""
    d, L = f.ndim, f.shape[0]
    R = L // K
    if R == 1:
        return f.astype(float).copy()
    b = f.reshape(sum(((K, R) for _ in range(d)), ()))
    centre = tuple(x for _ in range(d) for x in (slice(None), slice(R // 2 - 1, R // 2 + 1)))
    b = b[centre]
    return b.mean(axis=tuple(2 * a + 1 for a in range(d)))


def _block_slopes(f: np.ndarray, mid: np.ndarray, K: int) -> list:
    """Per-axis slope (per lattice unit) at each block, from neighbouring blocks.

    Central differences inside, one-sided at the first and last block; with a
    single block the slope comes from the two central sample planes.
    """
    d, L = f.ndim, f.shape[0]
    R = L // K
    slopes = []
    for a in range(d):
        if K == 1:
            lo = np.take(f, [R // 2 - 1], axis=a)
            hi = np.take(f, [R // 2], axis=a)
            diff = hi - lo
            centre = tuple(slice(None) if ax == a else slice(R // 2 - 1, R // 2 + 1) for ax in range(d))
            slopes.append(np.full(mid.shape, diff[centre].mean()))
            continue
        m = np.moveaxis(mid, a, 0)
        s = np.empty_like(m)
        s[1:-1] = (m[2:] - m[:-2]) / (2 * R)
        s[0] = (m[1] - m[0]) / R
        s[-1] = (m[-1] - m[-2]) / R
        slopes.append(np.moveaxis(s, 0, a))
    return slopes


def interpolated_fwht_3d(f: np.ndarray, K: int) -> SparseSpectrum:
    """Approximate WHT of a smooth field from ``K`` samples per dimension.

    Each ``R^d`` block (``R = L/K``) is modelled as affine.  The transform of
    an affine block is its centre value at the block base index plus
    ``-slope_a * 2**(m-1)`` at offset ``2**m * L**a`` for each level ``m < r``;
    the remaining ``log2 K`` levels per axis act only on those entries.
    """
    f = np.asarray(f, dtype=float)
    d = f.ndim
    L = f.shape[0]
    if f.shape != (L,) * d:
        raise ShapeError(f"field shape {f.shape} is not a cube")
    _check_pow2(L)
    if not isinstance(K, (int, np.integer)) or K < 1 or K > L or L % K:
        raise ShapeError(f"K={K} must be a power of two dividing L={L}")
    _check_pow2(K)
    R = L // K
    r = R.bit_length() - 1

    mid = _block_midpoints(f, K)
    slots = [mid]
    offsets = [0]
    if r:
        slopes = _block_slopes(f, mid, K)
        for a in range(d):
            for m in range(r):
                slots.append(-slopes[a] * 2.0 ** (m - 1))
                offsets.append((2 ** m) * L ** a)
    theta = np.stack(slots)  # (slots, K, ..., K)

    # remaining levels act on the block-index bits of each axis
    for a in range(d):
        theta = np.moveaxis(_butterflies(np.moveaxis(theta, a + 1, -1), halve=True), -1, a + 1)
    levels = K.bit_length() - 1
    butterflies = d * levels * (K ** d // 2) * len(slots)

    idx = np.stack(np.meshgrid(*[np.arange(K)] * d, indexing="ij"))
    base = sum(idx[a] * R * L ** a for a in range(d)).ravel()
    entries = {}
    for s, off in enumerate(offsets):
        vals = theta[s].ravel()
        for b, v in zip(base, vals):
            entries[int(b + off)] = float(v)
    return SparseSpectrum(entries=entries, L=L, d=d, K=K, butterflies=butterflies)


def coarse_fwht_3d(f: np.ndarray, K: int) -> np.ndarray:
    """Baseline: transform of the K^d block midpoints only, placed at block bases."""
    f = np.asarray(f, dtype=float)
    d, L = f.ndim, f.shape[0]
    R = L // K
    theta = fwht_axes(_block_midpoints(f, K))
    out = np.zeros(L ** d)
    idx = np.stack(np.meshgrid(*[np.arange(K)] * d, indexing="ij"))
    base = sum(idx[a] * R * L ** a for a in range(d)).ravel()
    out[base] = theta.ravel()
    return out


def exact_spectrum(f: np.ndarray) -> np.ndarray:
    return fwht(np.asarray(f, dtype=float).reshape(-1, order="F"))


def relative_error(approx: np.ndarray, exact: np.ndarray) -> float:
    return float(np.linalg.norm(approx - exact) / np.linalg.norm(exact))


# ---------------------------------------------------------------------------
# QPIXL-style compilation of grid-controlled RBS rotations


@dataclass(frozen=True)
class GateOp:
    """One gate.  Qubits are ``("G", j)`` grid or ``("D", i)`` direction."""
    kind: str
    targets: tuple
    controls: tuple = ()
    angle: float | None = None
    source: int | None = None  # spectrum index that produced this rotation


@dataclass
class GateProgram:
    ops: list = field(default_factory=list)
    n_controls: int = 0
    target: tuple = (("D", 2), ("D", 1))

    def rotations(self) -> list:
        return [op for op in self.ops if op.kind == "RBS"]

    def count(self, kind: str) -> int:
        return sum(op.kind == kind for op in self.ops)


def gray(i: int) -> int:
    return i ^ (i >> 1)


def inverse_gray(k: int) -> int:
    i = k
    k >>= 1
    while k:
        i ^= k
        k >>= 1
    return i


def qpixl_program(spectrum, threshold: float = 0.0, target=(("D", 2), ("D", 1))) -> GateProgram:
    """Compile ``sum_r |r><r| (x) RBS(theta(r))`` into rotations and CZs.

    ``spectrum`` is either a dense angle field (array over grid sites, any
    shape; flattened x-fastest) or a :class:`SparseSpectrum` of one.  The
    rotation preceding the ``i``-th frame change has angle equal to the WHT
    coefficient at Walsh index ``gray(i)``.  Rotations with
    ``|angle| < threshold`` (and exact zeros) are dropped and the CZs left
    adjacent are merged, so only parity changes between kept rotations remain.
    """
    if threshold < 0:
        raise DomainError("threshold must be non-negative")
    if isinstance(spectrum, SparseSpectrum):
        coeffs = spectrum.entries
        N = spectrum.N
    else:
        a = np.asarray(spectrum, dtype=float)
        flat = a.reshape(-1, order="F")
        _check_pow2(flat.size)
        dense = fwht(flat)
        coeffs = {k: float(v) for k, v in enumerate(dense)}
        N = flat.size
    n = N.bit_length() - 1
    kept = sorted(
        (inverse_gray(k), k, v) for k, v in coeffs.items() if v != 0.0 and abs(v) >= threshold
    )
    ops = []
    frame = 0
    for _, k, v in kept:
        diff = frame ^ k
        ops.extend(GateOp("CZ", targets=(target[0],), controls=(("G", j),)) for j in range(n) if diff >> j & 1)
        ops.append(GateOp("RBS", targets=tuple(target), angle=v, source=k))
        frame = k
    ops.extend(GateOp("CZ", targets=(target[0],), controls=(("G", j),)) for j in range(n) if frame >> j & 1)
    return GateProgram(ops=ops, n_controls=n, target=tuple(target))


def program_angles(program: GateProgram) -> np.ndarray:
    """Net rotation angle per control value, by walking the gate list."""
    N = 2 ** program.n_controls
    r = np.arange(N)
    sign = np.ones(N)
    total = np.zeros(N)
    for op in program.ops:
        if op.kind == "CZ":
            j = op.controls[0][1]
            sign = np.where(r >> j & 1, -sign, sign)
        elif op.kind == "RBS":
            total += sign * op.angle
    if np.any(sign != 1):
        raise ShapeError("program does not return to the computational frame")
    return total


def program_deviation(program: GateProgram, angles: np.ndarray) -> float:
    """Operator-norm distance between the program and the exact rotation field."""
    target = np.asarray(angles, dtype=float).reshape(-1, order="F")
    diff = program_angles(program) - target
    return float(np.max(2 * np.abs(np.sin(diff / 2))))
