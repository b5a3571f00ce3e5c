
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from esp.em import Medium, green_dyadic
from esp.errors import ParameterError, SingularityError
from esp.modes import (
    CascadeLink, ModeDecomposition, SampledSpace, capacity_for_powers, cascade_allocation,
    cascade_capacity, coupling_matrix, count_dof, end_to_end, link_capacity, mode_decomposition,
    mode_transfer_matrix, optimal_scatter_matrix, water_filling,
)

from oracles import random_unitary, water_filling_oracle

M = Medium(1.0)


def segments(lt, lr, d, pitch=0.25):
    return SampledSpace.segment(lt, pitch), SampledSpace.segment(lr, pitch, center=(0, d, 0))


def test_coupling_reciprocity():
    tx, rx = segments(3.0, 5.0, 4.0)
    assert np.allclose(coupling_matrix(rx, tx, M), coupling_matrix(tx, rx, M).T, rtol=1e-12)


def test_coupling_single_element_definition():
    a = SampledSpace([[0, 0, 0]], [0, 0, 1], 0.1, 0.1)
    b = SampledSpace([[1.0, 2.0, 0.5]], [1, 0, 0], 0.1, 0.1)
    expect = 0.01 * np.array([1, 0, 0]) @ green_dyadic(np.array([1.0, 2.0, 0.5]), M) @ [0, 0, 1]
    assert coupling_matrix(a, b, M)[0, 0] == pytest.approx(expect, rel=1e-13)


def test_coupling_far_decay_20db():
    tx = SampledSpace.segment(2.0, 0.25)
    near = SampledSpace.segment(2.0, 0.25, center=(0, 100, 0))
    far = SampledSpace.segment(2.0, 0.25, center=(0, 1000, 0))
    s1 = np.linalg.svd(coupling_matrix(tx, near, M), compute_uv=False)[0]
    s2 = np.linalg.svd(coupling_matrix(tx, far, M), compute_uv=False)[0]
    assert 20 * np.log10(s1 / s2) == pytest.approx(20.0, abs=1.0)


def test_coupling_coincident_raises():
    a = SampledSpace.segment(1.0, 0.25)
    with pytest.raises(SingularityError):
        coupling_matrix(a, a, M)


def test_undersampling_warns():
    a = SampledSpace.segment(4.0, 0.75)
    b = SampledSpace.segment(4.0, 0.25, center=(0, 5, 0))
    with pytest.warns(UserWarning):
        coupling_matrix(a, b, M)


def test_decomposition_diagonal_and_reconstruction(rng):
    dec = mode_decomposition(np.diag([3.0, 1.0]))
    assert np.allclose(dec.singular_values, [3, 1])
    assert np.allclose(np.abs(dec.left_basis), np.eye(2))
    h = rng.normal(size=(7, 5)) + 1j * rng.normal(size=(7, 5))
    dec = mode_decomposition(h)
    assert np.linalg.norm(dec.reconstruct() - h) < 1e-10 * np.linalg.norm(h)
    assert np.allclose(dec.right_basis.conj().T @ dec.right_basis, np.eye(5), atol=1e-10)
    assert np.all(np.diff(dec.singular_values) <= 0)
    piv = dec.right_basis[np.argmax(np.abs(dec.right_basis), axis=0), np.arange(5)]
    assert np.allclose(piv.imag, 0, atol=1e-14) and np.all(piv.real > 0)


def test_singular_values_unitarily_invariant(rng):
    h = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    q = random_unitary(rng, 6)
    assert np.allclose(mode_decomposition(q @ h).singular_values,
                       mode_decomposition(h).singular_values, atol=1e-10)


def test_paraxial_segment_mode_count():
    tx, rx = segments(10.0, 10.0, 20.0, pitch=0.5)
    dec = mode_decomposition(coupling_matrix(tx, rx, M))
    n10 = count_dof(dec, threshold_db=10)
    assert abs(n10 - 5) <= 2
    assert abs(count_dof(dec, energy_fraction=0.99) - n10) <= 1


def test_count_dof_examples():
    dec = ModeDecomposition(np.eye(3), np.array([1.0, 1.0, 1e-6]), np.eye(3))
    assert count_dof(dec, threshold_db=30) == 2
    one = ModeDecomposition(np.eye(1), np.array([2.0]), np.eye(1))
    assert count_dof(one, threshold_db=3) == 1 and count_dof(one, energy_fraction=0.5) == 1
    with pytest.raises(ParameterError):
        count_dof(dec, energy_fraction=1.5)


def test_mode_saturation_with_receiver_length():
    counts = []
    for lr in (2, 8, 16, 32, 64):
        tx, rx = segments(4.0, lr, 5.0)
        counts.append(count_dof(mode_decomposition(coupling_matrix(tx, rx, M)), threshold_db=10))
    assert all(b >= a for a, b in zip(counts, counts[1:]))
    assert counts[-1] <= np.ceil(2 * 4.0) + 2


def test_water_filling_trivial_cases():
    a = water_filling([2.0], 1.0, 3.0)
    assert a.powers[0] == pytest.approx(3.0) and a.water_level == pytest.approx(3.5)
    a = water_filling([0.7] * 5, 1.0, 2.0)
    assert np.allclose(a.powers, 0.4)
    with pytest.raises(ParameterError):
        water_filling([], 1.0, 1.0)


def test_water_filling_against_oracle_example():
    p, mu, cap = water_filling_oracle([1.0, 0.25], 1.0, 1.0)
    a = water_filling([1.0, 0.25], 1.0, 1.0)
    assert np.allclose(a.powers, p, atol=1e-9)
    assert link_capacity([1.0, 0.25], 1.0, 1.0) == pytest.approx(cap, rel=1e-9)


@given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=16),
       st.floats(1e-2, 10), st.floats(1e-2, 100))
@settings(max_examples=300, deadline=None)
def test_water_filling_kkt(gains, noise, total):
    a = water_filling(gains, noise, total)
    floors = noise / np.asarray(gains)
    assert a.powers.sum() == pytest.approx(total, rel=1e-9)
    act = a.powers > 0
    assert np.allclose(a.water_level - floors[act], a.powers[act], rtol=1e-9, atol=1e-12)
    assert np.all(a.water_level <= floors[~act] * (1 + 1e-9))


def test_capacity_examples_and_optimality(rng):
    assert link_capacity([1.0], 1.0, 1.0) == pytest.approx(1.0)
    assert link_capacity([0.5, 0.5], 1.0, 2.0) == pytest.approx(2 * np.log2(1.5))
    for _ in range(100):
        g = rng.uniform(0.01, 2, 4)
        uni = capacity_for_powers(g, np.full(4, 0.25), 0.1)
        assert link_capacity(g, 0.1, 1.0) >= uni - 1e-12


def test_capacity_increases_with_power(rng):
    g = rng.uniform(0.01, 1, 6)
    caps = [link_capacity(g, 0.5, p) for p in np.geomspace(0.01, 100, 30)]
    assert np.all(np.diff(caps) > 0)


def test_cascade_identity_and_paths(rng):
    link = CascadeLink(np.eye(3), np.eye(3))
    assert cascade_capacity(link, 1.0, 3.0) == pytest.approx(link_capacity([1, 1, 1], 1.0, 3.0))
    link = CascadeLink(rng.normal(size=(4, 3)), rng.normal(size=(2, 4)))
    alloc = cascade_allocation(link, 0.1, 1.0)
    assert np.count_nonzero(alloc.powers) <= 2 and alloc.powers.size == 4
    st_ = np.linalg.svd(link.h_t, compute_uv=False)
    sr = np.linalg.svd(link.h_r, compute_uv=False)
    g = (st_[:2] * sr[:2]) ** 2
    assert cascade_capacity(link, 0.1, 1.0) == pytest.approx(link_capacity(g, 0.1, 1.0))
    with pytest.raises(ParameterError):
        CascadeLink(np.eye(3), np.eye(4))


def test_optimal_scatter_matrix_properties(rng):
    assert np.allclose(np.abs(optimal_scatter_matrix(np.diag([3, 2, 1.0]), np.diag([3, 2, 1.0]))),
                       np.eye(3))
    for _ in range(20):
        ht = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        hr = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        r = optimal_scatter_matrix(ht, hr)
        assert np.allclose(r.conj().T @ r, np.eye(4), atol=1e-12)
        u_r = np.linalg.svd(hr)[0]
        v_t = np.linalg.svd(ht)[2].conj().T
        core = u_r.conj().T @ end_to_end(hr, r, ht) @ v_t
        off = core - np.diag(np.diag(core))
        assert np.linalg.norm(off) < 1e-8 * np.linalg.norm(core)
        e2e = np.linalg.svd(end_to_end(hr, r, ht), compute_uv=False)
        assert np.allclose(e2e ** 2, CascadeLink(ht, hr).product_gains())


def test_optimal_scatter_repeated_singular_values_warn():
    with pytest.warns(UserWarning):
        optimal_scatter_matrix(np.eye(3), np.eye(3))


def test_mode_transfer_born_and_exact(rng):
    d = np.diag(rng.uniform(0.1, 0.3, 4)).astype(complex)
    g = 0.1 * (rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    u = random_unitary(rng, 4)
    v = random_unitary(rng, 4)
    born = mode_transfer_matrix(d, u=u, v=v)
    assert np.allclose(born, u @ d @ v.conj().T)
    exact = mode_transfer_matrix(d, g, u, v, born=False)
    assert np.allclose(exact, u @ d @ np.linalg.inv(np.eye(4) - g @ d) @ np.linalg.inv(v))
    with pytest.raises(ParameterError):
        mode_transfer_matrix(d, born=False)
    with pytest.warns(UserWarning):
        mode_transfer_matrix(d, v=np.diag([1, 1, 1, 1e-10]))
