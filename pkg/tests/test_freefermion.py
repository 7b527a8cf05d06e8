import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from blochlab.errors import GapClosedAlongPath, OddLength
from blochlab.freefermion import (SingleParticleModel, dimerized_bloch_current, dimerized_matrix, fermi_current,
                                  fermi_current_asymptotic, fermi_current_closed_form, fermi_sea, fermi_window,
                                  mode_current, mode_current_fd, odd_filling, pump, quadratic_ground_current,
                                  remainder_constant, rice_mele_path, ring_current_matrix, ring_hamiltonian,
                                  ring_spectrum)
from blochlab.models import dimerized_ring, tv_ring


def test_ring_spectrum_four_sites():
    _, E, _ = ring_spectrum(4, 0.0)
    assert np.allclose(np.sort(E), [-2, 0, 0, 2], atol=1e-14)


def test_ring_spectrum_matches_dense_diagonalization():
    _, E, psi = ring_spectrum(6, np.pi / 2)
    assert np.allclose(np.sort(E), np.linalg.eigvalsh(ring_hamiltonian(6, np.pi / 2)), atol=1e-13)
    assert np.allclose(psi.conj().T @ psi, np.eye(6), atol=1e-13)


@given(st.integers(2, 40), st.floats(-10, 10))
def test_ring_spectrum_flux_period(L, phi):
    _, E0, _ = ring_spectrum(L, phi, check=False)
    _, E1, _ = ring_spectrum(L, phi + 2 * np.pi, check=False)
    assert np.allclose(np.sort(E0), np.sort(E1), atol=1e-12)


def test_ring_spectrum_rejects_tiny_rings():
    with pytest.raises(ValueError):
        ring_spectrum(1, 0.0)


@given(st.integers(2, 40), st.floats(-4, 4), st.integers(0, 39))
def test_mode_current_is_expectation_of_current_matrix(L, phi, k):
    k = k % L
    _, _, psi = ring_spectrum(L, phi, check=False)
    v = psi[:, k]
    expected = (v.conj() @ ring_current_matrix(L, phi) @ v).real
    assert mode_current(L, phi, k) == pytest.approx(expected, abs=1e-12)


def test_mode_current_example():
    assert mode_current(8, 1.0, 1) == pytest.approx(0.25 * math.sin((2 * math.pi - 1.0) / 8), abs=1e-15)
    assert mode_current_fd(8, 1.0, 1, 1e-5) == pytest.approx(mode_current(8, 1.0, 1), abs=1e-9)


def test_current_matrix_is_minus_flux_derivative():
    L, phi, h = 7, 0.8, 1e-5
    fd = -(ring_hamiltonian(L, phi + h) - ring_hamiltonian(L, phi - h)) / (2 * h)
    assert np.abs(fd - ring_current_matrix(L, phi)).max() < 1e-9


def test_fermi_window():
    assert fermi_window(5).tolist() == [-2, -1, 0, 1, 2]
    assert fermi_window(4).tolist() == [-1, 0, 1, 2]


def test_zero_flux_carries_no_current():
    assert fermi_current(100, 0.0, 33).exact == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("L, N", [(12, 5), (13, 4), (30, 11), (31, 10)])
def test_window_agrees_with_direct_filling(L, N):
    phi = 0.9
    assert fermi_current(L, phi, N).exact == pytest.approx(fermi_current(L, phi, N, "direct").exact, abs=1e-13)


@given(st.integers(3, 500), st.floats(0.01, 3.1), st.integers(0, 249))
def test_closed_form_matches_window(L, phi, m):
    N = 2 * (m % ((L - 1) // 2 + 1)) + 1
    if N > L:
        return
    assert fermi_current_closed_form(L, phi, N) == pytest.approx(fermi_current(L, phi, N).exact, abs=1e-13)


def test_closed_form_needs_odd_filling():
    with pytest.raises(ValueError):
        fermi_current_closed_form(10, 1.0, 4)


def test_thousand_site_ring_one_third_filling():
    fc = fermi_current(999, 1.0, 333)
    # a third filled: sin(pi N/L) = sin(pi/3)
    assert fc.asymptotic == pytest.approx(-(2 / (np.pi * 999)) * np.sin(np.pi / 3), rel=1e-15)
    assert abs(fc.remainder) < 5 / 999 ** 2


def test_current_halves_when_ring_doubles():
    phi, rho = np.pi / 2, 1 / 3
    a = fermi_current(301, phi, odd_filling(301, rho), rho=rho).exact
    b = fermi_current(601, phi, odd_filling(601, rho), rho=rho).exact
    assert a / b == pytest.approx(601 / 301, rel=2e-2)


def test_even_filling_asymptotic_sign():
    L, phi = 400, 1.0
    fc = fermi_current(L, phi, 100)
    assert fc.asymptotic > 0 and fc.exact > 0
    assert abs(fc.remainder) * L * L < 10


def test_remainder_constant_is_stable_across_ranges():
    c1 = remainder_constant(np.pi / 2, 1 / 3, range(100, 500))
    c2 = remainder_constant(np.pi / 2, 1 / 3, range(500, 2001))
    assert 0.5 < c1 / c2 < 2


def test_odd_filling():
    for L in (10, 101, 999):
        N = odd_filling(L, 1 / 3)
        assert N % 2 == 1 and abs(N - L / 3) <= 1


def test_cross_engine_value_ten_sites():
    spm = SingleParticleModel.from_model(tv_ring(10, 1.0, 0.0, 1.0), 3)
    assert quadratic_ground_current(spm) == pytest.approx(-0.0522734556, abs=1e-10)
    assert quadratic_ground_current(spm) == pytest.approx(fermi_current(10, 1.0, 3).exact, abs=1e-14)


def test_fermi_sea_basic():
    sea = fermi_sea(ring_hamiltonian(4, 0.5), 2)
    P = sea.projector
    assert np.allclose(P @ P, P) and np.trace(P).real == pytest.approx(2)
    assert sea.expectation(ring_hamiltonian(4, 0.5)).real == pytest.approx(sea.energy)
    assert math.isinf(fermi_sea(ring_hamiltonian(4, 0.5), 4).gap)


def test_single_particle_model_must_be_hermitian():
    with pytest.raises(ValueError):
        SingleParticleModel(np.array([[0, 1], [0, 0]]), 2, 0.0, 1)


def test_dimerized_matrix_matches_model():
    model = dimerized_ring(10, 1.0, 0.4, 0.7)
    assert np.abs(dimerized_matrix(10, 1.0, 0.4, 0.7) - model.single_particle_matrix()).max() < 1e-14
    with pytest.raises(OddLength):
        dimerized_matrix(7, 1.0, 0.5)


@pytest.mark.parametrize("L", [8, 20, 40, 60])
def test_dimerized_bloch_current_matches_dense(L):
    phi, d = 1.0, 1e-4
    energy = lambda f: np.linalg.eigvalsh(dimerized_matrix(L, 1.0, 0.5, f))[:L // 2].sum()
    dense = -(energy(phi + d) - energy(phi - d)) / (2 * d)
    assert dimerized_bloch_current(L, 1.0, 0.5, phi) == pytest.approx(dense, abs=1e-9)


def test_dimerized_current_decays_exponentially():
    vals = [abs(dimerized_bloch_current(L, 1.0, 0.5, 1.0)) for L in (40, 80, 120)]
    r1, r2 = vals[0] / vals[1], vals[1] / vals[2]
    assert r1 > 1e3 and r2 == pytest.approx(r1, rel=0.2)


def test_dimerized_bloch_current_needs_even_length():
    with pytest.raises(OddLength):
        dimerized_bloch_current(9)


@pytest.fixture(scope="module")
def pumps():
    L, N = 32, 16
    return {
        "forward": pump(rice_mele_path(L), N, n_steps=200),
        "reverse": pump(rice_mele_path(L, reverse=True), N, n_steps=200),
        "trivial": pump(rice_mele_path(L, offset=0.8), N, n_steps=200),
    }


def test_pump_forward_and_reverse(pumps):
    assert abs(abs(pumps["forward"].charge) - 1) < 1e-3
    assert pumps["reverse"].charge == pytest.approx(-pumps["forward"].charge, abs=1e-6)
    assert pumps["forward"].projector_defect < 1e-6


def test_trivial_loop_pumps_nothing(pumps):
    assert abs(pumps["trivial"].charge) < 1e-3
    assert pumps["trivial"].distance < 1e-3


def test_pump_finite_size_error_shrinks_with_length():
    err = [abs(pump(rice_mele_path(L, offset=0.8), L // 2, n_steps=100).charge) for L in (16, 24, 32)]
    assert err[0] > 2 * err[1] > 4 * err[2]


def test_pump_refuses_gap_closing_loop():
    with pytest.raises(GapClosedAlongPath):
        pump(rice_mele_path(8, offset=0.5, delta=0.5), 4, n_steps=20)


def test_pump_needs_even_steps():
    with pytest.raises(ValueError):
        pump(rice_mele_path(8), 4, n_steps=21)


def test_compressed_region_projector_is_nearly_binary():
    L = 40
    sea = fermi_sea(dimerized_matrix(L, 1.0, 0.3), L // 2)
    q = np.zeros(L)
    q[:L // 2] = 1.0
    P = sea.projector
    ev = np.linalg.eigvalsh(P @ np.diag(q) @ P)
    far = np.minimum(np.abs(ev), np.abs(ev - 1)) > 1e-6
    # only the two boundaries produce intermediate eigenvalues
    assert far.sum() <= 4
