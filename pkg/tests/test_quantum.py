import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qlbm.errors import DegenerateProjectionError, DomainError, PreconditionError, ShapeError
from qlbm.lattice import (
    GridSpec, build_model, classical_step, collision_kernels, gaussian_blob, random_divergence_free,
    simulate_classical, swirl_velocity, uniform_velocity,
)
from qlbm.quantum import (
    QLBMStep, RegisterLayout, StateVector, apply_grid_unitaries, apply_prep, apply_rbs, apply_streaming,
    apply_unprep, build_collision, classify, encode_density, measure_histogram, postselect, qlbm_step,
    run_chain, sample_shots,
)
from qlbm.readout import haar_su2

ROUTES = ["isometry", "gates"]


def layout(name="D3Q7", L=4):
    m = build_model(name)
    return RegisterLayout(GridSpec(L, m.d), m)


def basis(lay, site, direction=0):
    amps = np.zeros((2 ** lay.n_dir, lay.grid.N), complex)
    amps[direction, site] = 1
    return StateVector(amps, lay)


# --- layout and encoding ---------------------------------------------------


def test_register_sizes():
    lay = layout("D3Q7", 8)
    assert (lay.n_grid, lay.n_dir, lay.n_qubits) == (9, 7, 16)
    assert all(bin(lay.one_hot(i)).count("1") == 1 for i in range(7))


def test_encode_delta_and_uniform():
    lay = layout("D2Q5", 4)
    phi = np.zeros(lay.grid.shape)
    phi[1, 2] = 3.0
    s = encode_density(phi, lay)
    assert s.amps[0, 1 + 4 * 2] == 1 and np.count_nonzero(s.amps) == 1
    s = encode_density(np.ones(lay.grid.shape), lay)
    assert np.allclose(s.amps[0], 1 / 4) and not np.any(s.amps[1:])


def test_encode_gaussian_normalised():
    lay = layout("D3Q7", 8)
    phi = 5 * gaussian_blob(lay.grid)
    s = encode_density(phi, lay)
    assert abs(s.norm() - 1) < 1e-12
    assert np.allclose(s.grid_field().real, phi / np.linalg.norm(phi))


@pytest.mark.parametrize("bad", [0.0, -1.0, np.nan])
def test_encode_rejects(bad):
    lay = layout("D2Q5", 4)
    phi = np.zeros(lay.grid.shape) if bad == 0 else np.full(lay.grid.shape, bad)
    with pytest.raises(DomainError):
        encode_density(phi, lay)


def test_state_shape_checked():
    with pytest.raises(ShapeError):
        StateVector(np.zeros((4, 16)), layout("D2Q5", 4))


# --- gates ----------------------------------------------------------------


def test_rbs_convention():
    amps = np.zeros((4, 1), complex)
    amps[0b10, 0] = 1  # qa=0, qb=1
    th = 0.3
    out = apply_rbs(amps, 0, 1, th)
    assert np.isclose(out[0b10, 0], np.cos(th)) and np.isclose(out[0b01, 0], np.sin(th))
    amps = np.zeros((4, 1), complex)
    amps[0b01, 0] = 1  # qa=1, qb=0
    out = apply_rbs(amps, 0, 1, th)
    assert np.isclose(out[0b10, 0], -np.sin(th)) and np.isclose(out[0b01, 0], np.cos(th))
    fixed = np.zeros((4, 1), complex)
    fixed[0b00] = fixed[0b11] = 1
    assert np.allclose(apply_rbs(fixed, 0, 1, th), fixed)


def test_grid_unitaries_match_kron(rng):
    n = 3
    U = haar_su2(rng, n)
    v = rng.standard_normal((2, 2 ** n)) + 1j * rng.standard_normal((2, 2 ** n))
    dense = U[2]
    for j in (1, 0):
        dense = np.kron(dense, U[j])  # qubit 0 least significant
    assert np.allclose(apply_grid_unitaries(v, U), v @ dense.T)


# --- streaming -------------------------------------------------------------


def test_streaming_examples():
    m = build_model("D3Q7")
    lay = layout("D3Q7", 4)
    s = apply_streaming(basis(lay, 0, direction=1 << 1), m)  # +x
    assert s.amps[1 << 1, 1] == 1
    s0 = basis(lay, 5)
    assert np.array_equal(apply_streaming(s0, m).amps, s0.amps)
    uni = np.zeros((2 ** 7, 64), complex)
    uni[1 << 3] = 1 / 8
    assert np.allclose(apply_streaming(StateVector(uni, lay), m).amps, uni)


# --- PREP / UNPREP ---------------------------------------------------------


@pytest.mark.parametrize("route", ROUTES)
def test_prep_rest_amplitudes(route):
    lay = layout("D3Q7", 4)
    s = apply_prep(basis(lay, 7), np.zeros((3,) + lay.grid.shape), route)
    got = [s.amps[1 << i, 7] for i in range(7)]
    assert np.allclose(got, [0.5] + [1 / (2 * np.sqrt(2))] * 6, atol=1e-12)
    assert abs(s.norm() - 1) < 1e-12


@pytest.mark.parametrize("route", ROUTES)
def test_prep_extreme_velocity(route):
    lay = layout("D3Q7", 4)
    s = apply_prep(basis(lay, 0), uniform_velocity(lay.grid, [1 / 3, 0, 0]), route)
    assert np.isclose(s.amps[1 << 1, 0], 0.5, atol=1e-12)
    assert abs(s.amps[1 << 2, 0]) < 1e-12


@pytest.mark.parametrize("route", ROUTES)
def test_prep_wall_row(route):
    lay = layout("D2Q5", 8)
    walls = np.zeros(lay.grid.shape, bool)
    walls[:, 0] = walls[:, 7] = True
    site = 3 + 8 * 1  # y = 1, wall below
    s = apply_prep(basis(lay, site), np.zeros((2,) + lay.grid.shape), route, walls)
    got = [s.amps[1 << i, site].real for i in range(5)]
    assert np.allclose(got, [1 / np.sqrt(2), 1 / np.sqrt(6), 1 / np.sqrt(6), 1 / np.sqrt(6), 0], atol=1e-12)


def test_prep_precondition():
    lay = layout("D2Q5", 4)
    with pytest.raises(PreconditionError):
        apply_prep(basis(lay, 0, direction=1), np.zeros((2, 4, 4)))


@pytest.mark.parametrize("route", ROUTES)
def test_unprep_rest_elements(route):
    lay = layout("D3Q7", 4)
    u = np.zeros((3,) + lay.grid.shape)
    for i in range(7):
        s = apply_unprep(basis(lay, 9, direction=1 << i), u, route)
        assert np.isclose(s.amps[0, 9], np.sqrt(build_model("D3Q7").w[i]), atol=1e-12)


@pytest.mark.parametrize("route", ROUTES)
def test_unprep_wall_zeroes_incoming(route):
    lay = layout("D2Q5", 8)
    walls = np.zeros(lay.grid.shape, bool)
    walls[:, 0] = walls[:, 7] = True
    site = 3 + 8 * 1
    u = np.zeros((2,) + lay.grid.shape)
    # direction 3 (+y) arrives at y=1 from the wall at y=0
    s = apply_unprep(basis(lay, site, direction=1 << 3), u, route, walls)
    assert abs(s.amps[0, site]) < 1e-12
    s = apply_unprep(basis(lay, site, direction=1 << 0), u, route, walls)
    assert np.isclose(s.amps[0, site], 1 / np.sqrt(2), atol=1e-12)


def test_unprep_rejects_fast_flow():
    lay = layout("D2Q5", 4)
    with pytest.raises(DomainError):
        apply_unprep(basis(lay, 0, 1), uniform_velocity(lay.grid, [0.4, 0]))


@pytest.mark.parametrize("route", ROUTES)
def test_unitarity_on_arbitrary_states(route, rng):
    lay = layout("D2Q5", 4)
    u = random_divergence_free(lay.grid, 0.3, rng)
    amps = rng.standard_normal((32, 16)) + 1j * rng.standard_normal((32, 16))
    amps /= np.linalg.norm(amps)
    s = StateVector(amps, lay)
    if route == "gates":  # the gate route is unitary on the whole register
        col = build_collision(u, lay.model, route="gates")
        from qlbm.quantum import apply_gate_sequence
        assert abs(np.linalg.norm(apply_gate_sequence(amps, col.prep_gates)) - 1) < 1e-12
    sub = np.zeros_like(amps)
    rows = [0] + [1 << i for i in range(5)]
    sub[rows] = amps[rows]
    sub /= np.linalg.norm(sub)
    assert abs(apply_unprep(StateVector(sub, lay), u, route).norm() - 1) < 1e-12


# --- full step -------------------------------------------------------------


@pytest.mark.parametrize("route", ROUTES)
def test_delta_step_probability(route):
    lay = layout("D3Q7", 4)
    phi = np.zeros(lay.grid.shape)
    phi[1, 2, 3] = 1
    s, p = qlbm_step(encode_density(phi, lay), np.zeros((3,) + lay.grid.shape), lay.model, route=route)
    assert abs(p - 5 / 32) < 1e-12


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2 ** 31), name=st.sampled_from(["D2Q5", "D3Q7"]), route=st.sampled_from(ROUTES))
def test_oracle_equivalence(seed, name, route):
    rng = np.random.default_rng(seed)
    lay = layout(name, 4)
    u = random_divergence_free(lay.grid, 0.3, rng)
    phi = rng.random(lay.grid.shape)
    s, p = qlbm_step(encode_density(phi, lay), u, lay.model, route=route)
    ref = classical_step(phi, collision_kernels(lay.model, u), lay.model)
    assert np.max(np.abs(s.grid_field() - ref / np.linalg.norm(ref))) < 1e-10
    assert abs(p - (np.linalg.norm(ref) / np.linalg.norm(phi)) ** 2) < 1e-10


@pytest.mark.parametrize("route", ROUTES)
def test_oracle_equivalence_with_walls(route, rng):
    m = build_model("D3Q7")
    g = GridSpec(8, 3)
    walls = np.zeros(g.shape, bool)
    walls[:, 0, :] = True
    walls[:, :, 0] = True
    walls[3:5, 3:6, 3:5] = True
    u = np.zeros((3,) + g.shape)
    u[0] = np.where(walls.any(axis=0), 0.0, 0.2)[None]
    phi = np.where(walls, 0.0, rng.random(g.shape))
    state = encode_density(phi, RegisterLayout(g, m))
    step = QLBMStep(u, m, walls, route)
    ref = phi
    for _ in range(3):
        state, p = step(state)
        new = classical_step(ref, collision_kernels(m, u, walls), m)
        assert abs(p - (np.linalg.norm(new) / np.linalg.norm(ref)) ** 2) < 1e-10
        ref = new
        assert np.max(np.abs(state.grid_field() - ref / np.linalg.norm(ref))) < 1e-10
        assert np.max(np.abs(state.grid_field()[walls])) < 1e-14


def test_routes_agree_on_populated_sector(rng):
    lay = layout("D3Q7", 4)
    u = random_divergence_free(lay.grid, 0.3, rng)
    s = encode_density(rng.random(lay.grid.shape), lay)
    a = apply_prep(s, u, "isometry")
    b = apply_prep(s, u, "gates")
    assert np.max(np.abs(a.amps - b.amps)) < 1e-12


def test_uniform_density_unit_probability(model, rng):
    g = GridSpec(4, model.d)
    u = random_divergence_free(g, 0.3, rng)
    s, p = qlbm_step(encode_density(np.ones(g.shape), RegisterLayout(g, model)), u, model)
    assert abs(p - 1) < 1e-12
    assert np.allclose(s.grid_field(), 1 / np.sqrt(g.N))


# --- post-selection --------------------------------------------------------


def test_postselect_examples():
    lay = layout("D2Q5", 4)
    s, p = postselect(basis(lay, 3))
    assert p == 1.0 and s.amps[0, 3] == 1
    amps = np.zeros((32, 16), complex)
    amps[0, 3] = amps[1, 3] = 1 / np.sqrt(2)
    s, p = postselect(StateVector(amps, lay))
    assert abs(p - 0.5) < 1e-15 and np.isclose(s.amps[0, 3], 1)


def test_postselect_degenerate():
    lay = layout("D2Q5", 4)
    with pytest.raises(DegenerateProjectionError):
        postselect(basis(lay, 3, direction=2))


# --- chains ----------------------------------------------------------------


def test_chain_single_step_matches_step(rng):
    m = build_model("D2Q5")
    g = GridSpec(4, 2)
    u = random_divergence_free(g, 0.3, rng)
    phi = rng.random(g.shape)
    final, cum, traj = run_chain(phi, u, 1, m)
    s, p = qlbm_step(encode_density(phi, RegisterLayout(g, m)), u, m)
    assert np.allclose(final, s.grid_field().real) and cum == p and len(traj) == 2


def test_chain_cumulative_probability():
    m = build_model("D3Q7")
    g = GridSpec(8, 3)
    u = swirl_velocity(g)
    phi = gaussian_blob(g)
    final, cum, _ = run_chain(phi, u, 6, m)
    ref = simulate_classical(phi, u, 6, m)[-1]
    assert abs(cum - (np.linalg.norm(ref) / np.linalg.norm(phi)) ** 2) < 1e-10
    assert np.max(np.abs(final - ref / np.linalg.norm(ref))) < 1e-10


def test_exact_reload_is_identity(rng):
    m = build_model("D2Q5")
    g = GridSpec(8, 2)
    u = random_divergence_free(g, 0.3, rng)
    phi = rng.random(g.shape)
    plain, _, _ = run_chain(phi, u, 2, m)
    reload = lambda s, t: encode_density(s.grid_field().real, s.layout)
    reloaded, _, _ = run_chain(phi, u, 2, m, readout_period=1, reload=reload)
    assert np.max(np.abs(plain - reloaded)) < 1e-10


def test_chain_needs_steps():
    with pytest.raises(DomainError):
        run_chain(np.ones((4, 4)), np.zeros((2, 4, 4)), 0, build_model("D2Q5"))


# --- sampling --------------------------------------------------------------


def test_histogram_of_basis_state():
    lay = layout("D2Q5", 4)
    h, acc, rej = measure_histogram(basis(lay, 6), 100, seed=0)
    assert h.as_dict() == {6: 100} and (acc, rej) == (100, 0)


def test_noise_accept_fraction():
    lay = layout("D3Q7", 2)
    shots = 20000
    _, acc, rej = measure_histogram(basis(lay, 1), shots, noise_p=0.5, seed=3)
    p = 0.5 ** 7
    sigma = np.sqrt(shots * p * (1 - p))
    assert abs(acc - shots * p) < 5 * sigma and acc + rej == shots


def test_two_site_histogram():
    lay = layout("D2Q5", 2)
    phi = np.zeros((2, 2))
    phi[0, 0] = phi[1, 0] = 1
    h, _, _ = measure_histogram(encode_density(phi, lay), 100000, seed=11)
    sigma = np.sqrt(100000 * 0.25)
    assert abs(h.counts[0] - 50000) < 5 * sigma and abs(h.counts[1] - 50000) < 5 * sigma


def test_zero_shots_rejected():
    with pytest.raises(DomainError):
        measure_histogram(basis(layout("D2Q5", 2), 0), 0)


def test_sampling_reproducible():
    lay = layout("D2Q5", 4)
    s = encode_density(np.ones(lay.grid.shape), lay)
    a = sample_shots(s, 500, noise_p=0.1, seed=42)
    b = sample_shots(s, 500, noise_p=0.1, seed=42)
    assert np.array_equal(a.grid, b.grid) and np.array_equal(a.observed, b.observed)


@given(st.integers(0, 6), st.integers(0, 2 ** 7 - 1))
def test_single_flip_always_rejected(bit, other):
    # an accepted-sector outcome with one flipped direction bit is never accepted
    assert classify(np.array([0]))[0]
    assert not classify(np.array([1 << bit]))[0]
    assert classify(np.array([other]))[0] == (other == 0)
