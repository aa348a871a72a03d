"""Density reconstruction from finite measurement data.

Direct readout turns a computational-basis histogram into amplitudes
(optionally smoothed by KDE and/or a fixed-bond-dimension MPS).  Shadow
readout fits a real MPS to histograms taken after random per-qubit SU(2)
rotations by minimising the Hellinger loss.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import Histogram, MeasurementSetting, ShadowDataset
from .errors import ConfigurationError, DomainError, FitFailure, ShapeError
from .lattice import GridSpec
from .mps import MPS, compress, contract

METHODS = ("raw", "kde", "mps", "kde+mps", "shadow", "shadow+kde")


# ---------------------------------------------------------------------------
# direct readout


def _unit_field(p: np.ndarray, grid: GridSpec) -> np.ndarray:
    amp = np.sqrt(np.clip(p, 0, None))
    return grid.unflatten(amp / np.linalg.norm(amp))


def histogram_to_amplitudes(h: Histogram) -> np.ndarray:
    if h.total < 1:
        raise DomainError("empty histogram")
    return _unit_field(h.counts / h.total, h.grid)


def _periodic_kernel(L: int, bandwidth: float) -> np.ndarray:
    delta = np.minimum(np.arange(L), L - np.arange(L))
    k = np.exp(-0.5 * (delta / bandwidth) ** 2)
    return k / k.sum()


def kde_probabilities(p: np.ndarray, bandwidth: float, grid: GridSpec) -> np.ndarray:
    """Separable periodic Gaussian smoothing of a flat probability vector."""
    if not bandwidth > 0:
        raise DomainError(f"KDE bandwidth must be positive, got {bandwidth}")
    f = grid.unflatten(np.asarray(p, dtype=float))
    spec = np.fft.fftn(f)
    kh = np.fft.fft(_periodic_kernel(grid.L, bandwidth))
    for a in range(grid.d):
        shape = [1] * grid.d
        shape[a] = grid.L
        spec = spec * kh.reshape(shape)
    out = np.clip(np.fft.ifftn(spec).real, 0, None)
    return grid.flatten(out)


BANDWIDTH_GRID = tuple(np.round(np.arange(0.2, 1.51, 0.05), 2))


def select_bandwidth(h: Histogram, candidates=BANDWIDTH_GRID) -> float:
    """Leave-one-out likelihood cross-validation over ``candidates``.

    The held-out estimate at a shot's own site removes that shot's kernel
    weight: ``f(r) = (sum_r' K(r - r') n(r') - K(0)) / (s - 1)``.
    """
    s = h.total
    if s < 2:
        raise DomainError("bandwidth selection needs at least two shots")
    occupied = h.counts > 0
    best, best_ll = None, -np.inf
    for bw in candidates:
        k0 = _periodic_kernel(h.grid.L, bw)[0] ** h.grid.d
        smooth = kde_probabilities(h.counts.astype(float), bw, h.grid)
        loo = (smooth[occupied] - k0) / (s - 1)
        if np.any(loo <= 0):
            continue
        ll = float(np.dot(h.counts[occupied], np.log(loo)))
        if ll > best_ll:
            best, best_ll = float(bw), ll
    if best is None:
        raise DomainError("no candidate bandwidth gives a positive leave-one-out density")
    return best


def kde_smooth(h: Histogram, bandwidth=0.5, grid: GridSpec | None = None) -> np.ndarray:
    """KDE of the histogram; ``bandwidth="auto"`` selects it by cross-validation."""
    grid = grid or h.grid
    if h.total < 1:
        raise DomainError("empty histogram")
    if bandwidth == "auto":
        bandwidth = select_bandwidth(h)
    return _unit_field(kde_probabilities(h.counts / h.total, bandwidth, grid), grid)


def mps_smooth(phi: np.ndarray, chi: int) -> np.ndarray:
    """Project onto a bond-dimension-``chi`` MPS, take the modulus and renormalise."""
    grid = GridSpec.of(phi)
    v = np.abs(contract(compress(grid.flatten(phi), chi)))
    return grid.unflatten(v / np.linalg.norm(v))


# ---------------------------------------------------------------------------
# shadow data


def haar_su2(rng: np.random.Generator, size: int) -> np.ndarray:
    """Haar-random SU(2) matrices from uniformly random unit quaternions."""
    q = rng.standard_normal((size, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    a = q[:, 0] + 1j * q[:, 1]
    b = q[:, 2] + 1j * q[:, 3]
    return np.stack([np.stack([a, -b.conj()], -1), np.stack([b, a.conj()], -1)], -2)


def generate_settings(M: int, n_G: int, seed) -> list:
    if M < 1:
        raise DomainError("need at least one measurement setting")
    rng = np.random.default_rng(seed)
    return [MeasurementSetting(haar_su2(rng, n_G), seed=seed, index=m) for m in range(M)]


def split_shots(total: int, M: int) -> list:
    base, extra = divmod(total, M)
    return [base + (1 if m < extra else 0) for m in range(M)]


def collect_shadow_dataset(state, settings, total_shots: int, noise_p: float = 0.0, seed=None) -> ShadowDataset:
    """Measure ``state`` under every setting with the shot budget split evenly."""
    from .quantum import measure_histogram

    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = root.spawn(len(settings))
    hists, rejected = [], 0
    for setting, shots, ss in zip(settings, split_shots(total_shots, len(settings)), seeds):
        h, _, rej = measure_histogram(state, max(shots, 1), setting=setting, noise_p=noise_p, seed=ss)
        hists.append(h)
        rejected += rej
    return ShadowDataset(settings, hists, raw_shots=total_shots, rejected=rejected)


# ---------------------------------------------------------------------------
# Hellinger loss and its gradient


class _Observations:
    """Per-setting rotations and dense ``sqrt(phat)`` tables of a dataset."""

    def __init__(self, dataset: ShadowDataset, n_sites: int):
        U = np.stack([s.unitaries for s in dataset.settings])
        if U.shape[1] != n_sites:
            raise ShapeError(f"settings act on {U.shape[1]} qubits, MPS has {n_sites} sites")
        self.U = U  # (M, n, 2, 2)
        self.sqrt_phat = np.stack([
            np.sqrt(h.counts / h.total) if h.total else np.zeros(h.counts.size) for h in dataset.histograms
        ])  # (M, 2**n)


def _rotated(tensors, U):
    return [np.einsum("mst,atb->masb", U[:, j], A) for j, A in enumerate(tensors)]  # (M, Dl, 2, Dr)


def _prefixes(rot):
    """``left[j]``: (M, 2**j, D_j) contraction of sites < j, low bit first."""
    M = rot[0].shape[0]
    left = [np.ones((M, 1, 1), dtype=complex)]
    for R in rot:
        _, Dl, _, Dr = R.shape
        nxt = left[-1] @ R.reshape(M, Dl, 2 * Dr)  # (M, lo, 2*Dr)
        lo = nxt.shape[1]
        left.append(nxt.reshape(M, lo, 2, Dr).transpose(0, 2, 1, 3).reshape(M, 2 * lo, Dr))
    return left


def _suffixes(rot):
    """``right[j]``: (M, D_j, 2**(n-j)) contraction of sites >= j, low bit first."""
    M = rot[0].shape[0]
    right = [np.ones((M, 1, 1), dtype=complex)]
    for R in reversed(rot):
        _, Dl, _, Dr = R.shape
        nxt = R.reshape(M, Dl * 2, Dr) @ right[-1]  # (M, Dl*2, hi)
        hi = nxt.shape[2]
        right.append(nxt.reshape(M, Dl, 2, hi).transpose(0, 1, 3, 2).reshape(M, Dl, 2 * hi))
    return right[::-1]


def _norm_and_grad(tensors, want_grad: bool):
    n = len(tensors)
    lefts = [np.ones((1, 1))]
    for A in tensors:
        lefts.append(np.einsum("ab,asc,bsd->cd", lefts[-1], A, A))
    norm2 = float(lefts[-1][0, 0])
    if not want_grad:
        return norm2, None
    rights = [np.ones((1, 1))]
    for A in reversed(tensors):
        rights.append(np.einsum("asc,bsd,cd->ab", A, A, rights[-1]))
    rights = rights[::-1]
    grads = [2 * np.einsum("ab,bsd,cd->asc", lefts[j], tensors[j], rights[j + 1]) for j in range(n)]
    return norm2, grads


def _loss_and_grad(tensors, obs: _Observations, M: int, want_grad: bool = True):
    rot = _rotated(tensors, obs.U)
    left = _prefixes(rot)
    amp = left[-1][:, :, 0]  # (M, N)
    mod = np.abs(amp)
    norm2, ngrad = _norm_and_grad(tensors, want_grad)
    loss = M * (1.0 + norm2) - 2.0 * float(np.sum(obs.sqrt_phat * mod))
    if not want_grad:
        return loss, None
    right = _suffixes(rot)
    # d|amp|/dA = Re(conj(amp)/|amp| * d amp/dA); weight is zero off the observed support
    w = -2.0 * obs.sqrt_phat * np.where(mod > 0, amp.conj() / np.where(mod > 0, mod, 1), 0)
    grads = []
    Mset, N = w.shape
    for j, A in enumerate(tensors):
        Dl, _, Dr = A.shape
        lo = 2 ** j
        # site index = low + 2**j * (s + 2 * high)
        X = left[j].transpose(0, 2, 1) @ w.reshape(Mset, N // lo, lo).transpose(0, 2, 1)  # (M, Dl, s + 2*high)
        X = X.reshape(Mset, Dl, N // lo // 2, 2).transpose(0, 1, 3, 2)  # (M, Dl, s, high)
        Y = X @ right[j + 1].transpose(0, 2, 1)[:, None]  # (M, Dl, s, Dr)
        g = np.einsum("masb,mst->atb", Y, obs.U[:, j]).real
        grads.append(M * ngrad[j] + g)
    return loss, grads


def hellinger_loss(dataset: ShadowDataset, mps: MPS) -> float:
    """Sum over settings of ``sum_b (sqrt(phat) - sqrt(p))**2`` including unobserved strings."""
    obs = _Observations(dataset, mps.n_sites)
    return _loss_and_grad(mps.tensors, obs, dataset.M, want_grad=False)[0]


def hellinger_grad(dataset: ShadowDataset, mps: MPS) -> list:
    obs = _Observations(dataset, mps.n_sites)
    return _loss_and_grad([np.asarray(t, dtype=float) for t in mps.tensors], obs, dataset.M)[1]


# ---------------------------------------------------------------------------
# fitting


@dataclass
class FitConfig:
    optimizer: str = "gd"  # "gd" (full-batch gradient descent) or "adam"
    lr: float = 0.05
    decay: float = 0.98
    epochs: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    patience: int = 50  # consecutive loss increases before giving up
    init_noise: float = 1e-2
    seed: int | None = 0
    init: object = None  # warm-start amplitudes (flat vector or field) or MPS
    holdout: float = 0.0  # fraction of shots held out to pick the stopping epoch
    cold_epochs: int = 1500  # Adam pre-fit used when no warm start is given
    cold_lr: float = 0.01


def _pad(A: np.ndarray, Dl: int, Dr: int, rng, noise: float) -> np.ndarray:
    """Embed ``A`` in a larger bond; only the new entries get symmetry-breaking noise."""
    out = noise * rng.standard_normal((Dl, 2, Dr))
    out[: A.shape[0], :, : A.shape[2]] = A
    return out


def _initial_tensors(n: int, chi: int, cfg: FitConfig) -> list:
    rng = np.random.default_rng(cfg.seed)
    dims = [1] + [min(chi, 2 ** min(j, n - j)) for j in range(1, n)] + [1]
    if cfg.init is None:
        base = [np.full((1, 2, 1), np.sqrt(0.5)) for _ in range(n)]
    else:
        init = cfg.init if isinstance(cfg.init, MPS) else compress(np.abs(np.asarray(cfg.init)).reshape(-1, order="F"), chi)
        base = [np.real(t) for t in init.tensors]
    return [_pad(base[j], dims[j], dims[j + 1], rng, cfg.init_noise) for j in range(n)]


def split_dataset(dataset: ShadowDataset, fraction: float, seed) -> tuple:
    """Binomially thin every histogram into (train, validation) datasets."""
    rng = np.random.default_rng(seed)
    train, val = [], []
    for h in dataset.histograms:
        v = rng.binomial(h.counts, fraction)
        train.append(Histogram(h.counts - v, h.grid))
        val.append(Histogram(v, h.grid))
    return (ShadowDataset(dataset.settings, train, dataset.raw_shots, dataset.rejected),
            ShadowDataset(dataset.settings, val, dataset.raw_shots, dataset.rejected))


def shadow_fit(dataset: ShadowDataset, chi: int, cfg: FitConfig | None = None) -> MPS:
    """Fit a real MPS of bond dimension ``chi`` by minimising the Hellinger loss.

    With ``cfg.holdout > 0`` the parameters kept are those with the lowest
    loss on the held-out shots; otherwise those with the lowest training loss.
    """
    cfg = cfg or FitConfig()
    if cfg.optimizer not in ("gd", "adam"):
        raise ConfigurationError(f"unknown optimizer {cfg.optimizer!r}", field="readout.fit.optimizer")
    if cfg.init is None and cfg.cold_epochs > 0:
        # decaying plain descent from a flat start stalls far from the optimum
        pre = replace(cfg, optimizer="adam", lr=cfg.cold_lr, decay=1.0, epochs=cfg.cold_epochs, cold_epochs=0)
        cfg = replace(cfg, init=shadow_fit(dataset, chi, pre))
    n = dataset.settings[0].n_qubits
    val_obs = None
    if cfg.holdout > 0:
        dataset, val = split_dataset(dataset, cfg.holdout, cfg.seed)
        val_obs = _Observations(val, n)
    obs = _Observations(dataset, n)
    tensors = _initial_tensors(n, chi, cfg)
    m1 = [np.zeros_like(t) for t in tensors]
    m2 = [np.zeros_like(t) for t in tensors]
    history = []
    best_loss, best = np.inf, [t.copy() for t in tensors]
    rises = 0
    lr = cfg.lr
    for epoch in range(1, cfg.epochs + 1):
        loss, grads = _loss_and_grad(tensors, obs, dataset.M)
        history.append(loss)
        score = loss if val_obs is None else _loss_and_grad(tensors, val_obs, dataset.M, want_grad=False)[0]
        if score < best_loss:
            best_loss, best = score, [t.copy() for t in tensors]
        rises = rises + 1 if len(history) > 1 and loss > history[-2] else 0
        if rises >= cfg.patience or not np.isfinite(loss):
            raise FitFailure(f"Hellinger loss diverged at epoch {epoch}", best=_finish(best, chi), history=history)
        for j, g in enumerate(grads):
            if cfg.optimizer == "gd":
                tensors[j] = tensors[j] - (lr / dataset.M) * g  # step on the per-setting mean loss
                continue
            m1[j] = cfg.beta1 * m1[j] + (1 - cfg.beta1) * g
            m2[j] = cfg.beta2 * m2[j] + (1 - cfg.beta2) * g * g
            mh = m1[j] / (1 - cfg.beta1 ** epoch)
            vh = m2[j] / (1 - cfg.beta2 ** epoch)
            tensors[j] = tensors[j] - lr * mh / (np.sqrt(vh) + 1e-12)
        lr *= cfg.decay
    final = val_obs if val_obs is not None else obs
    if _loss_and_grad(tensors, final, dataset.M, want_grad=False)[0] < best_loss:
        best = tensors
    return _finish(best, chi)


def _finish(tensors, chi: int) -> MPS:
    norm = np.sqrt(_norm_and_grad(tensors, False)[0])
    scale = norm ** (1.0 / len(tensors))
    return MPS([t / scale for t in tensors], chi, normalized=True)


def shadow_density(mps: MPS, grid: GridSpec) -> np.ndarray:
    v = np.abs(contract(mps))
    return grid.unflatten(v / np.linalg.norm(v))


# ---------------------------------------------------------------------------
# dispatch


@dataclass
class ReadoutInputs:
    grid: GridSpec
    histogram: Histogram | None = None
    dataset: ShadowDataset | None = None
    chi: int = 8
    bandwidth: float = 0.5
    fit: FitConfig = field(default_factory=FitConfig)


def reconstruct(method: str, inputs: ReadoutInputs) -> np.ndarray:
    """Unit-norm, non-negative density amplitudes from measurement data."""
    if method not in METHODS:
        raise ConfigurationError(f"unknown readout method {method!r}; expected one of {METHODS}", field="readout.method")
    grid = inputs.grid
    if method.startswith("shadow"):
        if inputs.dataset is None:
            raise ConfigurationError(f"method {method!r} needs a shadow dataset", field="readout.settings")
        phi = shadow_density(shadow_fit(inputs.dataset, inputs.chi, inputs.fit), grid)
        if method == "shadow+kde":
            p = kde_probabilities(grid.flatten(phi) ** 2, inputs.bandwidth, grid)
            phi = _unit_field(p, grid)
        return phi
    if inputs.histogram is None:
        raise ConfigurationError(f"method {method!r} needs a computational-basis histogram", field="readout.shots")
    if method in ("kde", "kde+mps"):
        phi = kde_smooth(inputs.histogram, inputs.bandwidth, grid)
    else:
        phi = histogram_to_amplitudes(inputs.histogram)
    if method.endswith("mps"):
        phi = mps_smooth(phi, inputs.chi)
    return phi
