"""Charges, edge currents, the twist family H~_s and variational current bounds.

Twisting multiplies each monomial of a term by ``exp(i s m)`` where ``m`` is the
term's twist charge (lifted x1 of annihilators minus creators).  With the
uniform convention every bond picks up one factor of ``e^{-is}`` on its
rightward hop, so ``H~_{2pi/L}`` is the gauge copy of ``H`` under
``theta_x = 2 pi x1 / L``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import StripTooNarrow
from .lattice import Region, half_torus, strip
from .manybody import (FockBasis, ManyBodyOperator, charge_operator, commutator, opnorm,
                       realize_monomials, realize_sum)
from .models import ModelSpec
from .spectral import GroundSpace, SpectralData, ground_projector, gibbs

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


class TwistFamily:
    """s -> H~_s for a model, realized on one basis.

    Monomials are grouped by twist charge m, so H~_s = sum_m e^{ism} H_m and
    every s-derivative is a reweighting of the same sparse blocks.
    """

    def __init__(self, model: ModelSpec, basis: FockBasis):
        self.model = model
        self.basis = basis
        groups: dict[int, list] = {}
        for i, t in enumerate(model.terms):
            for mono, m in zip(t.monomials, model.twist_charges(i)):
                groups.setdefault(int(m), []).append(mono)
        self.charges = sorted(groups)
        self.blocks = {m: realize_monomials(groups[m], basis) for m in self.charges}
        self.support = frozenset().union(*(t.support for t in model.terms)) if model.terms else frozenset()

    def _combine(self, weight) -> ManyBodyOperator:
        mat = sp.csr_matrix((self.basis.dim, self.basis.dim), dtype=complex)
        for m in self.charges:
            w = weight(m)
            if w != 0:
                mat = mat + w * self.blocks[m]
        return ManyBodyOperator(self.basis, mat, self.support)

    def hamiltonian(self, s: float = 0.0) -> ManyBodyOperator:
        return self._combine(lambda m: np.exp(1j * s * m))

    def derivative(self, s: float = 0.0, order: int = 1) -> ManyBodyOperator:
        return self._combine(lambda m: (1j * m) ** order * np.exp(1j * s * m))

    def rest(self, s: float) -> ManyBodyOperator:
        """R_s = H~_s - H - s dH~/ds|_0, in closed form."""
        return self._combine(lambda m: np.exp(1j * s * m) - 1 - 1j * s * m)

    def rest_quadrature(self, s: float) -> ManyBodyOperator:
        """R_s from the integral remainder s^2 int_0^1 (1-u) H~''(us) du (16-point Gauss)."""
        u = 0.5 * (_GL_NODES + 1)
        w = 0.5 * _GL_WEIGHTS

        def weight(m):
            return s * s * np.sum(w * (1 - u) * (1j * m) ** 2 * np.exp(1j * u * s * m))

        return self._combine(weight)

    def curvature_constant(self, n_samples: int = 16) -> float:
        """C with sup_s ||d^2 H~_s / ds^2|| <= C L, from local term norms.

        Uses the triangle inequality over terms, each term's twisted second
        derivative being evaluated on its own small Fock space.
        """
        model = self.model
        total = 0.0
        s_grid = np.linspace(0, 2 * np.pi, n_samples, endpoint=False)
        for i, t in enumerate(model.terms):
            ms = model.twist_charges(i)
            if not any(ms):
                continue
            order = sorted(t.support)
            relabel = {x: k for k, x in enumerate(order)}
            blocks = {}
            for (c, f), m in zip(t.monomials, ms):
                blocks.setdefault(m, []).append((c, tuple((relabel[x], d) for x, d in f)))
            local = FockBasis(len(order))
            mats = {m: realize_monomials(b, local).toarray() for m, b in blocks.items()}
            best = 0.0
            for s in s_grid:
                d2 = sum(-(m * m) * np.exp(1j * s * m) * mats[m] for m in mats)
                best = max(best, opnorm(d2))
            total += best
        return total / model.L


def twist_family(model: ModelSpec, basis: FockBasis) -> TwistFamily:
    return TwistFamily(model, basis)


def current_density(model: ModelSpec, basis: FockBasis) -> ManyBodyOperator:
    """j = (1/L) dH~_s/ds at s = 0 (equivalently -dH/dphi)."""
    return TwistFamily(model, basis).derivative(0.0, 1) * (1.0 / model.L)


def bond_current(model: ModelSpec, x: int, basis: FockBasis) -> ManyBodyOperator:
    """Edge current J_<x-1,x> across the cut between columns x-1 and x."""
    monos = []
    support = set()
    for i, t in enumerate(model.terms):
        cuts = model.cut_charges(i, x)
        if not any(cuts):
            continue
        support |= t.support
        monos += [(1j * m * c, f) for (c, f), m in zip(t.monomials, cuts) if m]
    return ManyBodyOperator(basis, realize_monomials(monos, basis), frozenset(support))


@dataclass
class CurrentDecomposition:
    J_minus: ManyBodyOperator
    J_plus: ManyBodyOperator
    region: Region
    strips: tuple[Region, Region]
    residual: float
    H_minus: ManyBodyOperator = field(repr=False, default=None)
    H_plus: ManyBodyOperator = field(repr=False, default=None)


def default_strips(model: ModelSpec, width: int | None = None) -> tuple[Region, Region]:
    """Column strips around x1 = 0 and x1 = L//2, wide enough for every term."""
    if width is None:
        width = max([model.lattice.diameter(t.support) for t in model.terms] + [1])
    lat = model.lattice
    return strip(lat, 0, width), strip(lat, lat.L // 2, width)


def edge_currents(model: ModelSpec, region: Region | None = None,
                  strips: tuple[Region, Region] | None = None,
                  basis: FockBasis | None = None) -> CurrentDecomposition:
    """J_- = i[H_-, Q], J_+ = -i[H_+, Q] with H_+- the terms inside each strip.

    Every term straddling the boundary of the region must lie inside one of
    the strips, otherwise the strips are too narrow.
    """
    lat = model.lattice
    region = half_torus(lat) if region is None else region
    strips = default_strips(model) if strips is None else strips
    basis = model.basis(model.half_filling()) if basis is None else basis
    s_minus, s_plus = strips
    inside = set(region.sites)
    minus_idx, plus_idx = [], []
    for i, t in enumerate(model.terms):
        crosses = bool(t.support & inside) and not t.support <= inside
        in_minus = t.support <= set(s_minus.sites)
        in_plus = t.support <= set(s_plus.sites)
        if in_minus and in_plus:
            warnings.warn(f"term on {sorted(t.support)} lies in both strips; assigned to the minus side")
            in_plus = False
        if crosses and not (in_minus or in_plus):
            raise StripTooNarrow(f"boundary term on {sorted(t.support)} is not inside a strip")
        if in_minus:
            minus_idx.append(i)
        elif in_plus:
            plus_idx.append(i)
    Q = charge_operator(region.sites, basis)
    H_minus = realize_sum([model.terms[i] for i in minus_idx], basis)
    H_plus = realize_sum([model.terms[i] for i in plus_idx], basis)
    # i[H_+-, Q] acts only where H_+- does
    J_minus = ManyBodyOperator(basis, commutator(H_minus, Q).matrix * 1j, H_minus.support)
    J_plus = ManyBodyOperator(basis, commutator(H_plus, Q).matrix * -1j, H_plus.support)
    H = model.hamiltonian(basis)
    lhs = commutator(H, Q) * 1j
    diff = (lhs - (J_minus - J_plus)).matrix
    residual = float(np.abs(diff.data).max()) if sp.issparse(diff) and diff.nnz else 0.0
    if not sp.issparse(diff):
        residual = float(np.abs(diff).max())
    return CurrentDecomposition(J_minus, J_plus, region, (s_minus, s_plus), residual, H_minus, H_plus)


@dataclass
class BlochBound:
    L: int
    current: float            # max over ground vectors of |<psi, j psi>|
    bound: float              # variational bound from the exact rest term
    norm_bound: float         # pi C / L from the curvature constant
    p: int
    gap: float | None
    per_state: list[tuple[float, float]]   # (signed current, bound) per ground vector

    @property
    def holds(self) -> bool:
        return all(abs(c) <= b + 1e-10 for c, b in self.per_state)


def _variational(fam: TwistFamily, j: ManyBodyOperator, psi) -> tuple[float, float]:
    L = fam.model.L
    s = 2 * np.pi / L
    r_plus = fam.rest(s).expectation(psi).real
    r_minus = fam.rest(-s).expectation(psi).real
    return j.expectation(psi).real, max(abs(r_plus), abs(r_minus)) / (2 * np.pi)


def bloch_bound_1d(model: ModelSpec, spec: SpectralData,
                   ground: GroundSpace | None = None) -> BlochBound:
    """Measured ground-state current and the bound from E(U_phi Omega) >= E(Omega).

    For a degenerate ground space the bound is applied to every eigenvector of
    P j P and the maxima are reported.
    """
    basis = spec.basis
    fam = TwistFamily(model, basis)
    j = fam.derivative(0.0, 1) * (1.0 / model.L)
    ground = ground_projector(spec) if ground is None else ground
    vecs = ground.vectors
    if ground.p > 1:
        _, w = np.linalg.eigh(ground.compress(j))
        vecs = vecs @ w
    per_state = [_variational(fam, j, vecs[:, k]) for k in range(vecs.shape[1])]
    C = fam.curvature_constant()
    return BlochBound(model.L, max(abs(c) for c, _ in per_state), max(b for _, b in per_state),
                      np.pi * C / model.L, ground.p, ground.gap, per_state)


def thermal_bloch_bound(model: ModelSpec, spec: SpectralData, beta: float) -> BlochBound:
    """Same bound for the Gibbs state: F(U rho U*) >= F(rho) with equal entropies."""
    fam = TwistFamily(model, spec.basis)
    j = fam.derivative(0.0, 1) * (1.0 / model.L)
    state = gibbs(spec, beta)
    s = 2 * np.pi / model.L
    cur = state.expectation(j).real
    rests = [state.expectation(fam.rest(x)).real for x in (s, -s)]
    bound = max(abs(r) for r in rests) / (2 * np.pi)
    C = fam.curvature_constant()
    return BlochBound(model.L, abs(cur), bound, np.pi * C / model.L, 0, None, [(cur, bound)])


def quasi1d_bound(model: ModelSpec, spec: SpectralData) -> BlochBound:
    """Slab version on the torus: the same twist along x1 over all L rows.

    The slab current is the full (1/L) dH~/ds; its bound grows like W/L with
    W = L rows and therefore does not decay.
    """
    if model.lattice.kind != "torus2d":
        raise ValueError("quasi1d_bound expects a torus model")
    return bloch_bound_1d(model, spec)
