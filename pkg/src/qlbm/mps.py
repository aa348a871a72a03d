"""Matrix product states over the grid register.

Site ``j`` is grid qubit ``j`` (x bits first, least significant first), so a
flat amplitude vector ``v[sum_j b_j 2**j]`` is reshaped in Fortran order to
``T[b_0, ..., b_{n-1}]`` before factorisation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ResourceError, ShapeError

MAX_CONTRACT_QUBITS = 24


@dataclass
class MPS:
    tensors: list  # each (left bond, 2, right bond)
    chi: int
    normalized: bool = False

    @property
    def n_sites(self) -> int:
        return len(self.tensors)

    @property
    def bond_dims(self) -> list:
        return [t.shape[2] for t in self.tensors[:-1]]

    @property
    def n_params(self) -> int:
        return sum(t.size for t in self.tensors)

    def copy(self) -> "MPS":
        return MPS([t.copy() for t in self.tensors], self.chi, self.normalized)


def _n_qubits(length: int) -> int:
    n = length.bit_length() - 1
    if length < 1 or 1 << n != length:
        raise ShapeError(f"amplitude vector length {length} is not a power of two")
    return n


def compress(amplitudes, chi: int) -> MPS:
    """Left-to-right successive SVD with every bond truncated to ``chi``, then normalised."""
    if chi < 1:
        raise DomainError("bond dimension must be >= 1")
    v = np.asarray(amplitudes).reshape(-1)
    n = _n_qubits(v.size)
    if not np.any(v):
        raise DomainError("cannot compress a zero vector")
    rest = v.reshape((2,) * n, order="F").reshape(1, -1) if n else v.reshape(1, 1)
    tensors = []
    left = 1
    for j in range(n - 1):
        mat = rest.reshape(left * 2, -1)
        U, S, Vh = np.linalg.svd(mat, full_matrices=False)
        keep = min(chi, int(np.count_nonzero(S > S[0] * 1e-15)) or 1)
        tensors.append(U[:, :keep].reshape(left, 2, keep))
        rest = S[:keep, None] * Vh[:keep]
        left = keep
    last = rest.reshape(left, 2, 1)
    last = last / np.linalg.norm(last)
    tensors.append(last)
    return MPS(tensors, chi, normalized=True)


def contract(mps: MPS) -> np.ndarray:
    """Dense amplitude vector in grid-register index order."""
    n = mps.n_sites
    if n > MAX_CONTRACT_QUBITS:
        raise ResourceError(f"contracting {n} qubits exceeds the {MAX_CONTRACT_QUBITS}-qubit limit")
    acc = mps.tensors[0].reshape(2, -1)
    for t in mps.tensors[1:]:
        acc = np.tensordot(acc, t, axes=([-1], [0]))
        acc = acc.reshape(-1, t.shape[2])
    # acc rows are in C order over (b_0, ..., b_{n-1}); convert to b_0 least significant
    return acc.reshape((2,) * n).reshape(-1, order="F")


def mps_norm(mps: MPS) -> float:
    env = np.ones((1, 1))
    for t in mps.tensors:
        env = np.einsum("ab,asc,bsd->cd", env, t.conj(), t)
    return float(np.sqrt(env.real[0, 0]))


def _dense(x) -> np.ndarray:
    return contract(x) if isinstance(x, MPS) else np.asarray(x).reshape(-1)


def fidelity(a, b) -> float:
    """``|<a|b>|**2`` after normalising both."""
    a, b = _dense(a), _dense(b)
    if a.shape != b.shape:
        raise ShapeError(f"size mismatch {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DomainError("fidelity of a zero vector")
    return float(min(1.0, abs(np.vdot(a, b)) ** 2 / (na * nb) ** 2))


def infidelity_sweep(trajectory, chis) -> list:
    """Rows ``(t, chi, infidelity)`` for every field in the trajectory and every chi."""
    rows = []
    for t, phi in enumerate(trajectory):
        v = np.asarray(phi).reshape(-1, order="F")
        for chi in chis:
            rows.append((t, int(chi), max(0.0, 1.0 - fidelity(v, compress(v, chi)))))
    return rows


def peak_infidelity(rows) -> dict:
    """Maximum infidelity over time per chi."""
    out = {}
    for _, chi, inf in rows:
        out[chi] = max(out.get(chi, 0.0), inf)
    return out
