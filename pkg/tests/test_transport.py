import warnings

import numpy as np
import pytest
from scipy.linalg import expm

from blochlab.errors import NotChargeConserving, ProjectorNotInvariant, StepSizeTooCoarse
from blochlab.freefermion import kato_generator, pump, rice_mele_path
from blochlab.lattice import ring, strip
from blochlab.manybody import FockBasis, charge_operator, hopping, parse_term
from blochlab.models import dimerized_ring, tv_ring
from blochlab.observables import edge_currents
from blochlab.spectral import diagonalize, ground_projector
from blochlab.transport import (DriveProtocol, bloch_sweep, distance_to_lattice, evolve, fiducial_width, index,
                                magnus_step, transported_charge)


@pytest.fixture(scope="module")
def chain8():
    model = dimerized_ring(8, 1.0, 0.1, 1.0)
    spec = diagonalize(model.hamiltonian(model.basis(4)))
    return model, spec


def test_constant_drive_is_the_exponential():
    model = tv_ring(6, 1.0, 1.0, 0.5)
    basis = model.basis(3)
    ev = evolve(DriveProtocol.constant(model, 0.7), basis, n_steps=32)
    H = model.hamiltonian(basis).dense()
    assert np.abs(ev.U - expm(-0.7j * H)).max() < 1e-8
    assert ev.unitarity_defect < 1e-8


def test_zero_drive():
    basis = FockBasis(6, 3)
    lat = ring(6)
    ev = evolve(DriveProtocol.zero(lat), basis, n_steps=4)
    assert np.array_equal(ev.U, np.eye(basis.dim))
    U, Tm, Tp, ucc = transported_charge(DriveProtocol.zero(lat), basis, n_steps=4)
    assert not np.any(Tm) and not np.any(Tp) and ucc == 0


def test_two_step_protocol_composes():
    L = 6
    lat = ring(L)
    A = [hopping(0, 1, 0.8), hopping(2, 3, -0.3j)]
    B = [hopping(1, 2, 0.5), parse_term("1.0 * c(4) a(4)")]
    proto = DriveProtocol(lat, A + B, lambda s: np.array([2, 2, 0, 0] if s < 0.5 else [0, 0, 2, 2], dtype=complex))
    basis = FockBasis(L, 3)
    ev = evolve(proto, basis, n_steps=16)
    from blochlab.manybody import realize_sum
    HA = realize_sum(A, basis).dense()
    HB = realize_sum(B, basis).dense()
    assert np.abs(ev.U - expm(-1j * HB) @ expm(-1j * HA)).max() < 1e-10
    assert ev.charge_defect < 1e-12


def test_grid_protocol_interpolates():
    lat = ring(4)
    proto = DriveProtocol.from_grid(lat, [0.0, 1.0], [["1.0 * c(0) a(1) + 1.0 * c(1) a(0)"],
                                                     ["2.0 * c(2) a(3) + 2.0 * c(3) a(2)"]])
    assert np.allclose(proto.coefficients(0.25), [0.75, 0.25])
    with pytest.raises(ValueError):
        DriveProtocol.from_grid(lat, [0.0], [["1.0 * c(0) a(1)"]])


def test_drive_terms_must_conserve_charge():
    with pytest.raises(NotChargeConserving):
        DriveProtocol(ring(4), [parse_term("1.0 * c(0) c(1) + 1.0 * a(1) a(0)")], lambda s: np.ones(1))


def test_coarse_steps_are_refused():
    model = tv_ring(6, 1.0, 1.0, 0.5)
    with pytest.raises(StepSizeTooCoarse):
        evolve(DriveProtocol.constant(model, 20.0), model.basis(3), n_steps=2)


def test_magnus_step_is_unitary(rng):
    G1 = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    G2 = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    G1, G2 = G1 + G1.conj().T, G2 + G2.conj().T
    U = magnus_step(G1, G2, 0.1)
    assert np.abs(U.conj().T @ U - np.eye(5)).max() < 1e-13


def test_transport_is_linear_in_time(chain8):
    model, spec = chain8
    sweep = bloch_sweep(model, spec, times=[0.2, 0.5, 1.0])
    assert np.allclose(sweep.transported, sweep.times * sweep.trPJ, atol=1e-10)
    assert sweep.max_distance == pytest.approx(abs(sweep.trPJ), rel=1e-6)


def test_bloch_pathway_ten_sites():
    model = dimerized_ring(10, 1.0, 0.1, 1.0)
    spec = diagonalize(model.hamiltonian(model.basis(5)))
    sweep = bloch_sweep(model, spec, times=[0.5, 1.0])
    assert sweep.max_distance <= 1e-5


def test_index_bookkeeping(chain8):
    model, spec = chain8
    res = index(spec, DriveProtocol.constant(model, 1.0), n_steps=64)
    assert res.up_commutator < 1e-10
    assert res.ucc_residual < 1e-8
    U, Tm, Tp, _ = transported_charge(DriveProtocol.constant(model, 1.0), spec.basis, n_steps=64)
    g = ground_projector(spec)
    Q = charge_operator(range(5), spec.basis).dense()
    # net charge into the half ring equals the difference of the edge transports
    assert g.trace(Tm - Tp) == pytest.approx(g.trace(U.conj().T @ Q @ U - Q), abs=1e-8)


def test_ucc_residual_converges_at_fourth_order(chain8):
    model, spec = chain8
    res = [transported_charge(DriveProtocol.constant(model, 1.0), spec.basis, n_steps=n)[3] for n in (16, 32)]
    assert np.log2(res[0] / res[1]) == pytest.approx(4.0, abs=0.2)


def test_trivial_protocol_has_zero_index(chain8):
    _, spec = chain8
    res = index(spec, DriveProtocol.zero(ring(8)), n_steps=2)
    assert res.trPT == 0 and res.distance == 0


def test_protocol_breaking_the_ground_space(chain8):
    model, spec = chain8
    kick = DriveProtocol(ring(8), [hopping(1, 2, 1.0)], lambda s: np.ones(1, dtype=complex))
    with pytest.raises(ProjectorNotInvariant) as info:
        index(spec, kick, n_steps=8)
    assert info.value.defect > 1e-3


def test_gauge_invariance_of_transport():
    L, N = 8, 4
    h = dimerized_ring(L, 1.0, 0.2, 1.0).single_particle_matrix()
    theta = np.random.default_rng(5).uniform(0, 2 * np.pi, L)
    D = np.diag(np.exp(1j * theta))
    values = []
    for hh in (h, D @ h @ D.conj().T):
        lat = ring(L)
        proto = DriveProtocol.from_single_particle(lat, lambda s, hh=hh: hh, cutoff=1e-14)
        basis = FockBasis(L, N)
        from blochlab.manybody import realize_sum
        H = realize_sum([t.scaled(c) for t, c in zip(proto.terms, proto.coefficients(0.0))], basis)
        spec = diagonalize(H)
        values.append(index(spec, proto, n_steps=16).trPT)
    assert values[0] == pytest.approx(values[1], abs=1e-8)


def test_many_body_pump_matches_single_particle():
    L, N = 8, 4
    path = rice_mele_path(L)
    single = pump(path, N, n_steps=100)
    proto = DriveProtocol.from_single_particle(ring(L), kato_generator(path, N), cutoff=1e-12)
    model = dimerized_ring(L, 1.5, 0.5, 0.0)
    spec = diagonalize(model.hamiltonian(model.basis(N)))
    g = ground_projector(spec)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)     # the Kato generator reaches across both strips
        _, Tm, _, ucc = transported_charge(proto, spec.basis, n_steps=100)
    assert g.trace(Tm).real == pytest.approx(single.charge, abs=1e-9)
    assert ucc < 1e-6


def test_minus_mask_warns_on_shared_terms():
    lat = ring(8)
    proto = DriveProtocol(lat, [hopping(1, 3, 1.0)], lambda s: np.ones(1, dtype=complex))
    with pytest.warns(UserWarning):
        mask = proto.minus_mask(strip(lat, 0, 1), strip(lat, 4, 1))
    assert mask.tolist() == [True]


def test_locality_constant():
    model = tv_ring(8, 1.0, 0.0, 0.0)
    proto = DriveProtocol.constant(model)
    # each site touches two unit-norm bonds of diameter 1
    assert proto.locality_constant() == pytest.approx(2 * 1 / np.exp(-1))


@pytest.mark.parametrize("x, p, d", [(0.98, 1, 0.02), (0.49, 2, 0.01), (-1.3, 1, 0.3)])
def test_distance_to_lattice(x, p, d):
    assert distance_to_lattice(x, p) == pytest.approx(d)


def test_fiducial_strips_disjoint():
    for L in range(6, 30, 2):
        w = fiducial_width(L)
        a = set(strip(ring(L), 0, w).sites)
        b = set(strip(ring(L), L // 2, w).sites)
        assert not a & b
