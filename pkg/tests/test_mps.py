import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qlbm.errors import DomainError, ResourceError, ShapeError
from qlbm.mps import MPS, compress, contract, fidelity, infidelity_sweep, mps_norm, peak_infidelity


def test_full_rank_roundtrip(rng):
    v = rng.standard_normal(2 ** 8)
    v /= np.linalg.norm(v)
    m = compress(v, 16)
    assert np.max(np.abs(contract(m) - v)) < 1e-12
    assert max(m.bond_dims) == 16


def test_ghz_at_bond_one():
    v = np.zeros(2 ** 6)
    v[0] = v[-1] = 1 / np.sqrt(2)
    assert np.isclose(fidelity(v, compress(v, 1)), 0.5)
    assert np.isclose(fidelity(v, compress(v, 2)), 1.0)


def test_four_qubits_match_middle_cut_svd(rng):
    # at chi=2 only the middle cut of a 4-qubit state is truncated
    v = rng.standard_normal(16)
    v /= np.linalg.norm(v)
    T = v.reshape((2,) * 4, order="F").reshape(4, 4)
    s = np.linalg.svd(T, compute_uv=False)
    assert np.isclose(fidelity(v, compress(v, 2)), (s[:2] ** 2).sum(), atol=1e-12)


def test_product_state_is_bond_one(rng):
    q = [rng.standard_normal(2) for _ in range(5)]
    v = q[4]
    for a in reversed(q[:4]):
        v = np.kron(v, a)  # first factor is the least significant qubit
    m = compress(v, 1)
    assert m.bond_dims == [1] * 4 and np.isclose(fidelity(v, m), 1.0)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 9), chi=st.integers(1, 8), seed=st.integers(0, 1000))
def test_compress_invariants(n, chi, seed):
    v = np.random.default_rng(seed).standard_normal(2 ** n)
    m = compress(v, chi)
    assert all(b <= chi for b in m.bond_dims)
    assert m.n_params <= 2 * n * chi * chi
    assert abs(mps_norm(m) - 1) < 1e-12
    assert abs(np.linalg.norm(contract(m)) - 1) < 1e-12
    assert 0 <= fidelity(v, m) <= 1


def test_fidelity_monotone_in_chi(rng):
    v = rng.random(2 ** 10)
    f = [fidelity(v, compress(v, chi)) for chi in (1, 2, 4, 8, 16, 32)]
    assert all(a <= b + 1e-12 for a, b in zip(f, f[1:])) and np.isclose(f[-1], 1)


def test_compress_errors():
    with pytest.raises(DomainError):
        compress(np.zeros(8), 2)
    with pytest.raises(ShapeError):
        compress(np.ones(6), 2)
    with pytest.raises(DomainError):
        compress(np.ones(8), 0)


def test_contract_limit():
    m = MPS([np.ones((1, 2, 1))] * 25, chi=1)
    with pytest.raises(ResourceError):
        contract(m)


def test_fidelity_errors():
    with pytest.raises(ShapeError):
        fidelity(np.ones(4), np.ones(8))
    with pytest.raises(DomainError):
        fidelity(np.zeros(4), np.ones(4))


def test_infidelity_sweep_rows(rng):
    traj = [rng.random((4, 4, 4)) for _ in range(3)]
    rows = infidelity_sweep(traj, [1, 8])
    assert [(t, c) for t, c, _ in rows] == [(0, 1), (0, 8), (1, 1), (1, 8), (2, 1), (2, 8)]
    peaks = peak_infidelity(rows)
    assert peaks[8] < 1e-12 < peaks[1]
