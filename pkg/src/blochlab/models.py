"""Charge-conserving lattice Hamiltonians built from LocalTerm sums.

Every term carries, besides its support, a *lift*: an integer x1 coordinate per
support site with wrap-around undone, so the term sits on a contiguous stretch
of the covering line.  Twisting and cut currents are defined through lifts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import NotChargeConserving, OddLength, RangeViolation
from .lattice import Lattice, ring, torus
from .manybody import (FockBasis, LocalTerm, ManyBodyOperator, density_density, gauge_average,
                       hopping, number, parse_term, realize, realize_sum)


def unwrap_lift(lattice: Lattice, sites) -> dict[int, int]:
    """Lift x1 coordinates of ``sites`` to the covering line around the first site."""
    sites = sorted(sites)
    if not sites:
        return {}
    L = lattice.L
    base = lattice.column(sites[0])
    lift = {}
    for s in sites:
        d = (lattice.column(s) - base) % L
        if d > L // 2:
            d -= L
        lift[s] = base + d
    return lift


@dataclass(frozen=True, eq=False)
class ModelSpec:
    name: str
    lattice: Lattice
    params: Mapping[str, Any]
    terms: tuple[LocalTerm, ...]
    range: int
    lifts: tuple[Mapping[int, int], ...] = field(default=())

    def __post_init__(self):
        terms = tuple(self.terms)
        lifts = tuple(self.lifts) or tuple(unwrap_lift(self.lattice, t.support) for t in terms)
        if len(lifts) != len(terms):
            raise ValueError("one lift per term required")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "lifts", lifts)
        object.__setattr__(self, "params", dict(self.params))
        self.validate()

    @property
    def n_sites(self) -> int:
        return self.lattice.n_sites

    @property
    def L(self) -> int:
        return self.lattice.L

    def validate(self):
        for t, lift in zip(self.terms, self.lifts):
            if self.lattice.diameter(t.support) >= self.range:
                raise RangeViolation(f"term on {sorted(t.support)} has diameter >= R={self.range}")
            if not t.is_charge_conserving:
                raise NotChargeConserving(f"term {t.to_text()} does not conserve charge")
            if set(lift) != set(t.support):
                raise ValueError("lift must cover exactly the term support")

    def hamiltonian(self, basis: FockBasis) -> ManyBodyOperator:
        return realize_sum(self.terms, basis)

    def basis(self, n_particles: int | None = None) -> FockBasis:
        return FockBasis(self.n_sites, n_particles)

    def half_filling(self) -> int:
        return self.n_sites // 2

    def terms_within(self, sites) -> list[int]:
        """Indices of terms whose support lies inside ``sites``."""
        sites = set(sites)
        return [i for i, t in enumerate(self.terms) if t.support <= sites]

    def twist_charges(self, i: int) -> list[int]:
        """Per monomial of term ``i``: sum of lifted x1 over annihilators minus creators.

        Twisting by s multiplies monomial coefficients by exp(i s m).
        """
        lift = self.lifts[i]
        return [sum(-lift[s] if c else lift[s] for s, c in f) for _, f in self.terms[i].monomials]

    def cut_charges(self, i: int, x: int) -> list[int]:
        """Twist charges of term ``i`` restricted to the cut between columns x-1 and x.

        Counts annihilators minus creators on the right of the cut, with the term
        lifted so that it straddles the cut if it crosses it at all.
        """
        lift = self.lifts[i]
        L = self.L
        ys = list(lift.values())
        lo, hi = min(ys), max(ys)
        shift = None
        for k in range(-2, 3):
            if lo + k * L <= x - 1 and hi + k * L >= x:
                shift = k
                break
        if shift is None:
            return [0] * len(self.terms[i].monomials)
        right = {s for s, y in lift.items() if y + shift * L >= x}
        return [sum((-1 if c else 1) for s, c in f if s in right)
                for _, f in self.terms[i].monomials]

    def single_particle_matrix(self) -> np.ndarray:
        """Hopping matrix h with H = sum_xy h_xy a*_x a_y, for quadratic models."""
        n = self.n_sites
        h = np.zeros((n, n), dtype=complex)
        for t in self.terms:
            for c, f in t.monomials:
                if len(f) != 2 or not (f[0][1] and not f[1][1]):
                    raise ValueError(f"term {t.to_text()} is not of the form a*_x a_y")
                h[f[0][0], f[1][0]] += c
        return h

    @property
    def is_quadratic(self) -> bool:
        try:
            self.single_particle_matrix()
        except ValueError:
            return False
        return True

    def with_params(self, **overrides) -> "ModelSpec":
        return build_model(self.name, self.L, **{**self.params, **overrides})


def _finish(name, lattice, params, terms, lifts, R):
    kept = []
    kept_lifts = []
    for t, lift in zip(terms, lifts):
        avg = gauge_average(t)
        if avg.is_zero:
            continue
        kept.append(avg)
        kept_lifts.append({s: lift[s] for s in avg.support})
    return ModelSpec(name, lattice, params, tuple(kept), R, tuple(kept_lifts))


def _ring_lift(L, x):
    # for L = 2 the two bonds share a support and differ only by this lift
    return {x: x, (x + 1) % L: x + 1}


def _bond(lattice, x, y_next, amp, V):
    """Bond term from site x (column c) to site y_next (column c+1)."""
    t = hopping(y_next, x, amp)
    if V:
        t = t + density_density(x, y_next, V)
    return t


def tv_ring(L: int, t_hop: float = 1.0, V: float = 0.0, phi: float = 0.0) -> ModelSpec:
    """Spinless fermions on a ring with nearest-neighbour hopping, interaction V and flux phi.

    H = sum_x [-t (e^{i phi/L} a*_{x+1} a_x + h.c.) + V n_x n_{x+1}]
    """
    if L < 2:
        raise ValueError("L >= 2")
    lat = ring(L)
    amp = -t_hop * np.exp(1j * phi / L)
    terms, lifts = [], []
    for x in range(L):
        terms.append(_bond(lat, x, (x + 1) % L, amp, V))
        lifts.append(_ring_lift(L, x))
    params = dict(t_hop=t_hop, V=V, phi=phi)
    return _finish("tv_ring", lat, params, terms, lifts, 2)


def dimerized_ring(L: int, t1: float = 1.0, t2: float = 0.5, phi: float = 0.0,
                   V: float = 0.0, stagger: float = 0.0) -> ModelSpec:
    """Alternating bonds t1 (x even -> x+1) and t2 (x odd -> x+1) with uniform flux.

    ``stagger`` adds an on-site potential +stagger on even and -stagger on odd
    sites (Rice-Mele form); ``V`` adds a nearest-neighbour density interaction.
    """
    if L % 2:
        raise OddLength("dimerized ring needs an even number of sites")
    lat = ring(L)
    terms, lifts = [], []
    for x in range(L):
        t = t1 if x % 2 == 0 else t2
        terms.append(_bond(lat, x, (x + 1) % L, -t * np.exp(1j * phi / L), V))
        lifts.append(_ring_lift(L, x))
        if stagger:
            terms.append(number(x, stagger if x % 2 == 0 else -stagger))
            lifts.append({x: x})
    params = dict(t1=t1, t2=t2, phi=phi, V=V, stagger=stagger)
    return _finish("dimerized_ring", lat, params, terms, lifts, 2)


def torus_hopping(L: int, t_hop: float = 1.0, mu_pattern: Sequence[float] | None = None,
                  phi: float = 0.0, t_perp: float | None = None) -> ModelSpec:
    """Nearest-neighbour hopping on the L x L torus, flux phi/L per x1-bond.

    ``mu_pattern`` is an on-site potential indexed by site (row-major);
    ``t_perp`` is the hopping along x2 (defaults to ``t_hop``).
    """
    if L < 3:
        raise ValueError("torus needs L >= 3")
    lat = torus(L)
    t_perp = t_hop if t_perp is None else t_perp
    terms, lifts = [], []
    for x2 in range(L):
        for x1 in range(L):
            s = lat.site(x1, x2)
            right = lat.site(x1 + 1, x2)
            up = lat.site(x1, x2 + 1)
            if t_hop:
                terms.append(hopping(right, s, -t_hop * np.exp(1j * phi / L)))
                lifts.append({s: x1, right: x1 + 1})
            if t_perp:
                terms.append(hopping(up, s, -t_perp))
                lifts.append({s: x1, up: x1})
    if mu_pattern is not None:
        mu = np.asarray(mu_pattern, dtype=float)
        if mu.shape != (lat.n_sites,):
            raise ValueError("mu_pattern needs one value per site")
        for s in range(lat.n_sites):
            if mu[s]:
                terms.append(number(s, mu[s]))
                lifts.append({s: lat.column(s)})
    params = dict(t_hop=t_hop, phi=phi, t_perp=t_perp,
                  mu_pattern=None if mu_pattern is None else list(map(float, mu_pattern)))
    return _finish("torus_hopping", lat, params, terms, lifts, 2)


def staggered_mu(L: int, amplitude: float) -> list[float]:
    """(-1)^(x1+x2) pattern on the L x L torus."""
    return [amplitude * (-1) ** ((s % L) + (s // L)) for s in range(L * L)]


def custom_model(name: str, lattice: Lattice, term_texts: Sequence[str], R: int,
                 params: Mapping[str, Any] | None = None) -> ModelSpec:
    terms = [parse_term(t) for t in term_texts]
    lifts = [unwrap_lift(lattice, t.support) for t in terms]
    return _finish(name, lattice, dict(params or {}), terms, lifts, R)


BUILDERS = {
    "tv_ring": tv_ring,
    "dimerized_ring": dimerized_ring,
    "torus_hopping": torus_hopping,
}


def build_model(name: str, L: int, **params) -> ModelSpec:
    if name not in BUILDERS:
        raise KeyError(f"unknown model {name!r}; known: {sorted(BUILDERS)}")
    if name == "torus_hopping" and isinstance(params.get("mu_pattern"), (int, float)):
        params["mu_pattern"] = staggered_mu(L, params["mu_pattern"])
    return BUILDERS[name](L, **params)


def term_operator(model: ModelSpec, i: int, basis: FockBasis) -> ManyBodyOperator:
    return realize(model.terms[i], basis)
