"""Measurement containers shared by the simulator and the readout code."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .lattice import GridSpec


@dataclass
class Histogram:
    """Accepted-shot counts per grid basis index (dense, length N)."""
    counts: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (self.grid.N,):
            raise DomainError("histogram length does not match grid")
        if np.any(self.counts < 0):
            raise DomainError("negative counts")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def as_dict(self) -> dict:
        nz = np.flatnonzero(self.counts)
        return {int(i): int(self.counts[i]) for i in nz}

    @classmethod
    def from_dict(cls, counts: dict, grid: GridSpec) -> "Histogram":
        arr = np.zeros(grid.N, dtype=np.int64)
        for k, v in counts.items():
            arr[int(k)] = v
        return cls(arr, grid)


@dataclass
class MeasurementSetting:
    """One single-qubit SU(2) rotation per grid qubit, applied before readout."""
    unitaries: np.ndarray  # (n_G, 2, 2) complex
    seed: int | None = None
    index: int = 0

    @property
    def n_qubits(self) -> int:
        return self.unitaries.shape[0]


@dataclass
class ShadowDataset:
    settings: list
    histograms: list
    raw_shots: int = 0
    rejected: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.settings) != len(self.histograms):
            raise DomainError("one histogram per setting required")
        if not self.settings:
            raise DomainError("shadow dataset needs at least one setting")

    @property
    def M(self) -> int:
        return len(self.settings)

    @property
    def accepted(self) -> int:
        return sum(h.total for h in self.histograms)
