import numpy as np
import pytest
from hypothesis import given, strategies as st

from blochlab.errors import NotChargeConserving, OddLength, RangeViolation
from blochlab.lattice import ring
from blochlab.manybody import FockBasis, charge_operator, commutator
from blochlab.models import build_model, custom_model, dimerized_ring, staggered_mu, torus_hopping, tv_ring
from blochlab.spectral import diagonalize, ground_projector


def ring_levels(L, phi, t=1.0):
    k = np.arange(L)
    return np.sort(-2 * t * np.cos((phi - 2 * np.pi * k) / L))


@pytest.mark.parametrize("L, N, phi", [(6, 2, 0.0), (6, 3, 0.7), (8, 3, 2.1), (9, 4, -1.3)])
def test_free_ring_energy_is_sum_of_levels(L, N, phi):
    model = tv_ring(L, 1.0, 0.0, phi)
    spec = diagonalize(model.hamiltonian(model.basis(N)))
    assert spec.energies[0] == pytest.approx(ring_levels(L, phi)[:N].sum(), abs=1e-12)


def test_two_site_ring_doubles_the_bond():
    model = tv_ring(2, 1.0, 0.0, 0.0)
    spec = diagonalize(model.hamiltonian(model.basis(1)))
    assert np.allclose(spec.energies, [-2, 2])


def test_strong_repulsion_gives_charge_density_wave():
    model = tv_ring(4, 1.0, 50.0, 0.0)
    basis = model.basis(2)
    spec = diagonalize(model.hamiltonian(basis))
    ground = ground_projector(spec, rank=2)
    cdw = [i for i in range(basis.dim) if basis.label(i) in ("1010", "0101")]
    weight = np.sum(np.abs(ground.vectors[cdw]) ** 2) / ground.p
    assert weight > 0.99


def test_dimerized_uniform_bonds_is_the_free_ring():
    a = dimerized_ring(8, 0.8, 0.8, 0.6).single_particle_matrix()
    b = tv_ring(8, 0.8, 0.0, 0.6).single_particle_matrix()
    assert np.allclose(a, b)


def test_dimerized_four_site_spectrum():
    e = np.linalg.eigvalsh(dimerized_ring(4, 1.0, 0.5, 0.0).single_particle_matrix())
    # two unit cells, k in {0, pi}: +-|t1 + t2 e^{ik}|
    assert np.allclose(e, [-1.5, -0.5, 0.5, 1.5])


@pytest.mark.parametrize("phi", np.linspace(0, 2 * np.pi, 9))
def test_dimerized_gap_bound(phi):
    t1, t2, L = 1.0, 0.4, 12
    e = np.linalg.eigvalsh(dimerized_ring(L, t1, t2, phi).single_particle_matrix())
    assert e[L // 2] - e[L // 2 - 1] >= 2 * abs(t1 - t2) - 1e-12


def test_dimerized_needs_even_length():
    with pytest.raises(OddLength):
        dimerized_ring(7, 1.0, 0.5)


def test_torus_time_reversal_point_has_no_current():
    from blochlab.observables import current_density
    model = torus_hopping(3, 1.0, [0.5] * 9, 0.0)
    spec = diagonalize(model.hamiltonian(model.basis(4)))
    g = ground_projector(spec)
    assert abs(g.trace(current_density(model, spec.basis))) < 1e-12


def test_torus_strong_stagger_gap():
    model = torus_hopping(3, 1.0, staggered_mu(3, 5.0), 0.0)
    e = np.linalg.eigvalsh(model.single_particle_matrix())
    n_low = sum(1 for m in staggered_mu(3, 5.0) if m < 0)
    gap = e[n_low] - e[n_low - 1]
    assert 10 - 4 <= gap <= 10 + 1e-12


def test_torus_decoupled_rows_are_rings():
    L, phi = 4, 0.9
    model = torus_hopping(L, 1.0, None, phi, t_perp=0.0)
    e = np.sort(np.linalg.eigvalsh(model.single_particle_matrix()))
    assert np.allclose(e, np.sort(np.tile(ring_levels(L, phi), L)))


def test_range_and_conservation_are_enforced():
    lat = ring(8)
    with pytest.raises(RangeViolation):
        custom_model("far", lat, ["1.0 * c(0) a(3) + 1.0 * c(3) a(0)"], R=2)
    model = custom_model("pairing", lat, ["1.0 * c(0) c(1) + 1.0 * a(1) a(0)", "1.0 * c(0) a(1) + 1.0 * c(1) a(0)"], R=2)
    # the pairing term is removed by the gauge average
    assert len(model.terms) == 1


def test_unknown_model_name():
    with pytest.raises(KeyError):
        build_model("ladder", 4)


models = st.sampled_from([
    lambda phi: tv_ring(6, 1.0, 1.5, phi),
    lambda phi: dimerized_ring(6, 1.0, 0.3, phi, V=0.5, stagger=0.2),
    lambda phi: torus_hopping(3, 1.0, staggered_mu(3, 1.0), phi),
])


@given(models, st.floats(-4, 4))
def test_model_invariants(make, phi):
    model = make(phi)
    basis = FockBasis(model.n_sites)
    H = model.hamiltonian(basis)
    assert H.is_hermitian(atol=0)
    assert commutator(H, charge_operator(range(model.n_sites), basis)).is_zero()
    assert all(model.lattice.diameter(t.support) < model.range for t in model.terms)


@given(st.floats(-3, 3))
def test_flux_periodicity(phi):
    a = tv_ring(6, 1.0, 1.0, phi)
    b = tv_ring(6, 1.0, 1.0, phi + 2 * np.pi)
    ea = diagonalize(a.hamiltonian(a.basis(3))).energies
    eb = diagonalize(b.hamiltonian(b.basis(3))).energies
    assert np.allclose(ea, eb, atol=1e-11)
