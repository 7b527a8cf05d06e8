import numpy as np
import pytest
from scipy.integrate import simpson
from hypothesis import given, strategies as st

from blochlab.errors import NoGap, QuadratureNotConverged, RequiresFullSpectrum
from blochlab.lattice import half_torus
from blochlab.manybody import FockBasis, ManyBodyOperator, charge_operator, commutator
from blochlab.models import dimerized_ring, tv_ring
from blochlab.quasiadiabatic import (FilterSpec, apply_filter, build_dressed_charge, clustering_table, gapped_bloch_check,
                                     time_domain_filter, time_kernel, topological_order_check)
from blochlab.spectral import diagonalize, ground_projector


def gapped(L, t2=0.1, phi=1.0):
    model = dimerized_ring(L, 1.0, t2, phi)
    spec = diagonalize(model.hamiltonian(model.basis(L // 2)), mode="full")
    return model, spec


@pytest.fixture(scope="module")
def chain8():
    model, spec = gapped(8)
    return model, spec, build_dressed_charge(model, spec)


@pytest.mark.parametrize("kind", ["linear", "smooth"])
@given(w=st.floats(-50, 50).filter(lambda x: abs(x) > 1e-9))
def test_filter_properties(kind, w):
    f = FilterSpec(1.5, kind)
    assert f(-w) == pytest.approx(np.conj(f(w)))
    # the linear filter peaks at the gap edge; the smooth one overshoots to 1.0997/gap near 0.88 gap
    assert abs(f(w)) <= (1.0 if kind == "linear" else 1.09967) / 1.5 + 1e-12
    if abs(w) >= 1.5:
        assert f(w) == pytest.approx(1j / w, rel=1e-15)


def test_filter_continuous_at_gap_edge():
    for kind in ("linear", "smooth"):
        f = FilterSpec(2.0, kind)
        assert f(2.0 - 1e-9) == pytest.approx(f(2.0 + 1e-9), abs=1e-8)


def test_filter_needs_gap():
    with pytest.raises(NoGap):
        FilterSpec(0.0)
    with pytest.raises(ValueError):
        FilterSpec(1.0, "cubic")


def test_two_level_filter():
    gap = 0.7
    basis = FockBasis(2, 1)
    H = ManyBodyOperator(basis, np.diag([0.0, 2 * gap]).astype(complex))
    Q = ManyBodyOperator(basis, np.array([[0, 1], [1, 0]], dtype=complex))
    spec = diagonalize(H)
    K = apply_filter(spec, commutator(H, Q) * 1j, FilterSpec(gap)).dense()
    assert K[0, 1] == pytest.approx(1) and K[1, 0] == pytest.approx(1)
    zero = apply_filter(spec, ManyBodyOperator(basis, np.zeros((2, 2), dtype=complex)), FilterSpec(gap))
    assert not np.any(zero.dense())


def test_filter_requires_full_spectrum():
    model = tv_ring(14, 1.0, 4.0, 1.0)
    spec = diagonalize(model.hamiltonian(model.basis(7)), mode="lowest", k=3)
    with pytest.raises(RequiresFullSpectrum):
        apply_filter(spec, charge_operator([0], spec.basis), FilterSpec(1.0))


def test_dressed_charge_exactness(chain8):
    _, _, dressed = chain8
    d = dressed.diagnostics
    assert d["kp_minus_qp"] <= 1e-9 * d["q_norm"]
    assert d["qbar_p_commutator"] <= 1e-9
    assert d["offgap_max"] <= 1e-12
    assert d["edge_residual"] == 0
    assert np.allclose((dressed.K_minus + dressed.K_plus).dense(), dressed.K.dense())


def test_sign_conventions(chain8):
    model, spec, dressed = chain8
    # only the sum convention gives a charge commuting with P
    assert dressed.diagnostics["qbar_p_commutator_alt"] > 1e-3
    alt = build_dressed_charge(model, spec, convention="difference", decay=False)
    assert alt.convention == "difference"
    assert alt.diagnostics["qbar_p_commutator"] == pytest.approx(dressed.diagnostics["qbar_p_commutator"])


def test_dressed_charge_at_ten_sites():
    model, spec = gapped(10, t2=0.5)
    d = build_dressed_charge(model, spec, decay=False).diagnostics
    assert d["qbar_p_commutator"] <= 1e-9


def test_in_gap_choice_does_not_matter():
    model, spec = gapped(8, t2=0.5)
    g = ground_projector(spec)
    for kind in ("linear", "smooth"):
        d = build_dressed_charge(model, spec, filt=FilterSpec(g.gap, kind), decay=False).diagnostics
        assert d["qbar_p_commutator"] <= 1e-9


def test_decay_table_monotone(chain8):
    _, _, dressed = chain8
    table = dressed.diagnostics["decay_minus"]
    dist, prof = table.profile()
    assert dist[0] == 0
    assert table.monotone_after(2)
    assert prof[-1] < prof[0]


def test_locality_sharpens_with_dimerization():
    # each weak bond crossed costs roughly a power of t2/t1
    drops = []
    for t2 in (0.2, 0.1, 0.05):
        model, spec = gapped(10, t2)
        drops.append(build_dressed_charge(model, spec).diagnostics["decay_minus"].drop())
    assert drops[0] < drops[1] < drops[2]
    assert drops[2] / drops[1] > 2


def test_strongly_dimerized_chain_reaches_small_commutators():
    model, spec = gapped(12, 0.02)
    table = build_dressed_charge(model, spec).diagnostics["decay_minus"]
    dist, prof = table.profile()
    assert table.monotone_after(2)
    assert prof[list(dist).index(3)] < 1e-4


def test_gapped_bloch_residual(chain8):
    model, spec, dressed = chain8
    r = gapped_bloch_check(model, spec, dressed)
    assert abs(r.trPJ) <= r.p * r.residual + 1e-9
    assert r.residual < 1e-3


def test_zero_flux_has_no_current():
    model, spec = gapped(8, t2=0.3, phi=0.0)
    r = gapped_bloch_check(model, spec, build_dressed_charge(model, spec, decay=False))
    assert abs(r.trPJ) < 1e-12


def test_gapless_ring_refuses():
    # degenerate Fermi level of the free ring at phi = 0
    model = tv_ring(8, 1.0, 0.0, 0.0)
    spec = diagonalize(model.hamiltonian(model.basis(4)))
    with pytest.raises(NoGap):
        build_dressed_charge(model, spec, ground=ground_projector(spec, rank=1))


def test_time_domain_agrees_with_spectral():
    model, spec = gapped(8)
    g = ground_projector(spec)
    Q = charge_operator(half_torus(model.lattice).sites, spec.basis)
    A = commutator(model.hamiltonian(spec.basis), Q) * 1j
    filt = FilterSpec(g.gap, "smooth")
    td = time_domain_filter(spec, A, filt)
    K = apply_filter(spec, A, filt).dense()
    assert np.linalg.norm(td.K.dense() - K, 2) <= 1e-6 * Q.norm()
    assert td.kernel_tail < 1e-8


def test_time_domain_cutoff_too_short():
    model, spec = gapped(6)
    g = ground_projector(spec)
    A = commutator(model.hamiltonian(spec.basis), charge_operator([0, 1, 2, 3], spec.basis)) * 1j
    with pytest.raises(QuadratureNotConverged):
        time_domain_filter(spec, A, FilterSpec(g.gap, "smooth", t_max=3.0 / g.gap))


def test_time_kernel_is_real_and_odd():
    t = np.linspace(0.1, 20, 50)
    w = time_kernel(t, 1.3)
    assert np.isrealobj(w)
    assert np.allclose(time_kernel(-t, 1.3), -w)


def test_time_kernel_transform():
    # 2i int_0^T W(t) sin(w t) dt reproduces the smooth filter
    gap = 1.0
    t = np.linspace(0, 200, 20001)
    W = time_kernel(t, gap)
    filt = FilterSpec(gap, "smooth")
    for w in (-2.5, -0.4, 0.3, 1.7):
        val = 2j * simpson(W * np.sin(w * t), x=t)
        assert val == pytest.approx(filt(-w), abs=2e-3)


def test_topological_order_unique_ground_state():
    model, spec = gapped(8)
    g = ground_projector(spec)
    probes = [charge_operator([x], spec.basis) for x in range(8)]
    J = build_dressed_charge(model, spec, decay=False).currents.J_minus
    dev, pjp = topological_order_check(g, probes, J)
    assert dev == pytest.approx(0, abs=1e-14)
    assert pjp == pytest.approx(abs(g.trace(J)))


def test_topological_order_cdw_pair():
    model = tv_ring(10, 1.0, 10.0, 0.0)
    spec = diagonalize(model.hamiltonian(model.basis(5)))
    g = ground_projector(spec, rank=2)
    dev, _ = topological_order_check(g, [charge_operator([x], spec.basis) for x in range(10)])
    # the two symmetry-broken density waves are told apart by a single density
    assert 0.3 < dev <= 1.0


def test_clustering_decays():
    model, spec = gapped(10)
    g = ground_projector(spec)
    dist, prof = clustering_table(g, spec.basis, model.lattice).profile()
    assert prof[dist >= 2].max() < 1e-2 * prof[dist == 1].max()
