"""Fermionic Fock-space algebra on occupation-number bases.

A basis state is an integer whose bit ``x`` is the occupation of site ``x``.
Monomials are stored as ordered factor lists and act right-to-left; moving an
operator to site ``x`` picks up ``(-1)**(number of occupied sites < x)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from math import comb
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import norm as sparse_norm

from .errors import BasisMismatch, OddTerm, SectorViolation, SiteOutOfRange

Factor = tuple[int, bool]  # (site, is_creator)
Monomial = tuple[complex, tuple[Factor, ...]]

DENSE_BELOW = 64


def popcount(states: np.ndarray) -> np.ndarray:
    return np.bitwise_count(np.asarray(states, dtype=np.uint64)).astype(np.int64)


class FockBasis:
    """Occupation-number basis on ``n_sites`` modes, optionally at fixed charge.

    States are sorted ascending as integers, which makes matrices reproducible.
    """

    def __init__(self, n_sites: int, n_particles: int | None = None):
        if n_sites < 1 or n_sites > 30:
            raise ValueError("n_sites must lie in 1..30")
        self.n_sites = int(n_sites)
        self.n_particles = None if n_particles is None else int(n_particles)
        if self.n_particles is None:
            self.states = np.arange(2 ** n_sites, dtype=np.uint64)
        else:
            if not 0 <= self.n_particles <= n_sites:
                raise ValueError("particle number outside 0..n_sites")
            states = [sum(1 << x for x in occ)
                      for occ in combinations(range(n_sites), self.n_particles)]
            self.states = np.array(sorted(states), dtype=np.uint64)

    @property
    def dim(self) -> int:
        return len(self.states)

    @property
    def is_sector(self) -> bool:
        return self.n_particles is not None

    def __eq__(self, other):
        return (isinstance(other, FockBasis) and other.n_sites == self.n_sites
                and other.n_particles == self.n_particles)

    def __hash__(self):
        return hash((self.n_sites, self.n_particles))

    def __repr__(self):
        sector = "" if self.n_particles is None else f", N={self.n_particles}"
        return f"FockBasis(n={self.n_sites}{sector}, dim={self.dim})"

    def index(self, states: np.ndarray) -> np.ndarray:
        """Positions of ``states`` in the basis; -1 where absent."""
        states = np.asarray(states, dtype=np.uint64)
        if not self.is_sector:
            return states.astype(np.int64)
        pos = np.searchsorted(self.states, states)
        pos = np.minimum(pos, self.dim - 1)
        return np.where(self.states[pos] == states, pos, -1)

    @cached_property
    def charges(self) -> np.ndarray:
        return popcount(self.states)

    @cached_property
    def occupations(self) -> np.ndarray:
        """(dim, n_sites) 0/1 array of site occupations."""
        bits = (self.states[:, None] >> np.arange(self.n_sites, dtype=np.uint64)) & np.uint64(1)
        return bits.astype(np.int8)

    def sectors(self) -> dict[int, np.ndarray]:
        """Basis indices grouped by particle number."""
        q = self.charges
        return {int(N): np.flatnonzero(q == N) for N in np.unique(q)}

    def sector_dim(self, N: int) -> int:
        return comb(self.n_sites, N)

    def label(self, i: int) -> str:
        s = int(self.states[i])
        return "".join(str((s >> x) & 1) for x in range(self.n_sites))


def _apply_monomial(states: np.ndarray, factors: Sequence[Factor]):
    cur = states.copy()
    amp = np.ones(len(states), dtype=np.int8)
    alive = np.ones(len(states), dtype=bool)
    for site, creator in reversed(factors):
        bit = np.uint64(1 << site)
        occ = (cur & bit) != 0
        alive &= ~occ if creator else occ
        parity = (np.bitwise_count(cur & (bit - np.uint64(1))) & 1).astype(np.int8)
        amp *= 1 - 2 * parity
        cur ^= bit
    return cur[alive], amp[alive], np.flatnonzero(alive)


def monomial_charge(factors: Sequence[Factor]) -> int:
    """Creators minus annihilators."""
    return sum(1 if c else -1 for _, c in factors)


def realize_monomials(monomials: Iterable[Monomial], basis: FockBasis) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for coef, factors in monomials:
        for site, _ in factors:
            if not 0 <= site < basis.n_sites:
                raise SiteOutOfRange(f"site {site} outside basis of {basis.n_sites} sites")
        if coef == 0:
            continue
        new, amp, src = _apply_monomial(basis.states, factors)
        if len(src) == 0:
            continue
        dst = basis.index(new)
        if np.any(dst < 0):
            raise SectorViolation("monomial leaves the fixed-charge sector; use a full basis")
        rows.append(dst)
        cols.append(src)
        vals.append(coef * amp)
    if not rows:
        return sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    m = sp.coo_matrix((np.concatenate(vals).astype(complex),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(basis.dim, basis.dim))
    m = m.tocsr()
    m.sum_duplicates()
    m.eliminate_zeros()
    return m


@dataclass(frozen=True)
class LocalTerm:
    """An even polynomial in creation/annihilation operators with a declared support."""

    monomials: tuple[Monomial, ...]
    support: frozenset[int] = field(default=frozenset())

    def __post_init__(self):
        monos = tuple((complex(c), tuple((int(s), bool(d)) for s, d in f))
                      for c, f in self.monomials)
        used = {s for _, f in monos for s, _ in f}
        support = frozenset(self.support) if self.support else frozenset(used)
        if not used <= support:
            raise ValueError(f"factor sites {sorted(used - support)} outside declared support")
        for _, f in monos:
            if len(f) % 2:
                raise OddTerm("observable terms must be even in fermionic factors")
        object.__setattr__(self, "monomials", monos)
        object.__setattr__(self, "support", support)

    @property
    def is_charge_conserving(self) -> bool:
        return all(monomial_charge(f) == 0 for c, f in self.monomials if c != 0)

    @property
    def is_zero(self) -> bool:
        return all(c == 0 for c, _ in self.monomials)

    def adjoint(self) -> "LocalTerm":
        monos = tuple((np.conj(c), tuple((s, not d) for s, d in reversed(f)))
                      for c, f in self.monomials)
        return LocalTerm(monos, self.support)

    def scaled(self, factor: complex) -> "LocalTerm":
        return LocalTerm(tuple((factor * c, f) for c, f in self.monomials), self.support)

    def __add__(self, other: "LocalTerm") -> "LocalTerm":
        return LocalTerm(self.monomials + other.monomials, self.support | other.support)

    def local_matrix(self) -> np.ndarray:
        """Dense matrix on the Fock space of the support alone (sites relabelled in order)."""
        order = sorted(self.support)
        relabel = {s: i for i, s in enumerate(order)}
        monos = [(c, tuple((relabel[s], d) for s, d in f)) for c, f in self.monomials]
        return realize_monomials(monos, FockBasis(max(len(order), 1))).toarray()

    def is_hermitian(self, atol: float = 1e-12) -> bool:
        m = self.local_matrix()
        return bool(np.allclose(m, m.conj().T, atol=atol, rtol=0))

    def to_text(self) -> str:
        return format_term(self)

    @classmethod
    def parse(cls, text: str, support: Iterable[int] | None = None) -> "LocalTerm":
        return parse_term(text, support)


# -- canonical text form: "1.0 * c(0) a(1) + (-0.5+2j) * c(1) a(0)" ----------

_FACTOR_RE = re.compile(r"([ca])\((\d+)\)")


def _format_coef(c: complex) -> str:
    c = complex(c)
    return repr(c.real) if c.imag == 0 else repr(c)


def format_term(term: LocalTerm) -> str:
    parts = []
    for c, f in term.monomials:
        ops = " ".join(f"{'c' if d else 'a'}({s})" for s, d in f)
        parts.append(f"{_format_coef(c)} * {ops}" if ops else _format_coef(c))
    return " + ".join(parts) if parts else "0.0"


def parse_term(text: str, support: Iterable[int] | None = None) -> LocalTerm:
    monos = []
    text = text.strip()
    if text in ("", "0", "0.0"):
        return LocalTerm((), frozenset(support or ()))
    for chunk in text.split(" + "):
        coef_txt, _, ops_txt = chunk.partition("*")
        try:
            coef = complex(coef_txt.strip().replace(" ", ""))
        except ValueError as exc:
            raise ValueError(f"bad coefficient in term chunk {chunk!r}") from exc
        ops_txt = ops_txt.strip()
        factors = tuple((int(s), k == "c") for k, s in _FACTOR_RE.findall(ops_txt))
        if _FACTOR_RE.sub("", ops_txt).strip():
            raise ValueError(f"cannot parse operator list {ops_txt!r}")
        monos.append((coef, factors))
    return LocalTerm(tuple(monos), frozenset(support or ()))


# -- common terms -------------------------------------------------------------

def hopping(x: int, y: int, amplitude: complex) -> LocalTerm:
    """``amplitude * a*_x a_y + h.c.``"""
    return LocalTerm(((amplitude, ((x, True), (y, False))),
                      (np.conj(amplitude), ((y, True), (x, False)))), frozenset((x, y)))


def density_density(x: int, y: int, V: float) -> LocalTerm:
    return LocalTerm(((V, ((x, True), (x, False), (y, True), (y, False))),), frozenset((x, y)))


def number(x: int, mu: float = 1.0) -> LocalTerm:
    return LocalTerm(((mu, ((x, True), (x, False))),), frozenset((x,)))


# -- operators on a basis -----------------------------------------------------

def _is_zero_matrix(m, atol=0.0) -> bool:
    if sp.issparse(m):
        return m.nnz == 0 or np.abs(m.data).max() <= atol
    return np.abs(m).max() <= atol if m.size else True


@dataclass(frozen=True, eq=False)
class ManyBodyOperator:
    """Matrix on a FockBasis plus the set of sites it is declared to act on."""

    basis: FockBasis
    matrix: sp.csr_matrix
    support: frozenset[int] = frozenset()

    def __post_init__(self):
        m = self.matrix
        if not sp.issparse(m):
            m = np.asarray(m, dtype=complex)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "support", frozenset(self.support))

    @property
    def shape(self):
        return self.matrix.shape

    def dense(self) -> np.ndarray:
        m = self.matrix
        return m.toarray() if sp.issparse(m) else m

    def _other(self, other) -> "ManyBodyOperator":
        if not isinstance(other, ManyBodyOperator):
            return NotImplemented
        if other.basis != self.basis:
            raise BasisMismatch(f"{self.basis} vs {other.basis}")
        return other

    def __add__(self, other):
        other = self._other(other)
        return ManyBodyOperator(self.basis, self.matrix + other.matrix, self.support | other.support)

    def __sub__(self, other):
        other = self._other(other)
        return ManyBodyOperator(self.basis, self.matrix - other.matrix, self.support | other.support)

    def __neg__(self):
        return ManyBodyOperator(self.basis, -self.matrix, self.support)

    def __mul__(self, scalar):
        if isinstance(scalar, ManyBodyOperator):
            return NotImplemented
        return ManyBodyOperator(self.basis, self.matrix * scalar, self.support)

    __rmul__ = __mul__

    def __matmul__(self, other):
        other = self._other(other)
        return ManyBodyOperator(self.basis, self.matrix @ other.matrix, self.support | other.support)

    def dag(self) -> "ManyBodyOperator":
        return ManyBodyOperator(self.basis, self.matrix.conj().T, self.support)

    def is_hermitian(self, atol=1e-12) -> bool:
        return _is_zero_matrix(self.matrix - self.matrix.conj().T, atol)

    def is_zero(self, atol=0.0) -> bool:
        return _is_zero_matrix(self.matrix, atol)

    def frobenius(self) -> float:
        m = self.matrix
        return float(sparse_norm(m) if sp.issparse(m) else np.linalg.norm(m))

    def norm(self) -> float:
        return opnorm(self.dense())

    def expectation(self, psi: np.ndarray) -> complex:
        return complex(np.vdot(psi, self.matrix @ psi))

    def off_sector_max(self) -> float:
        """Largest entry connecting different charge sectors (0 for conserving ops)."""
        coo = sp.coo_matrix(self.matrix)
        q = self.basis.charges
        off = q[coo.row] != q[coo.col]
        return float(np.abs(coo.data[off]).max()) if off.any() else 0.0


def opnorm(m: np.ndarray) -> float:
    """Operator (spectral) norm; uses eigvalsh for (anti-)hermitian input."""
    m = np.asarray(m)
    if m.size == 0:
        return 0.0
    if np.allclose(m, m.conj().T, atol=1e-13, rtol=0):
        return float(np.abs(np.linalg.eigvalsh(m)).max())
    if np.allclose(m, -m.conj().T, atol=1e-13, rtol=0):
        return float(np.abs(np.linalg.eigvalsh(1j * m)).max())
    return float(np.linalg.norm(m, 2))


def realize(term: LocalTerm, basis: FockBasis) -> ManyBodyOperator:
    return ManyBodyOperator(basis, realize_monomials(term.monomials, basis), term.support)


def realize_sum(terms: Iterable[LocalTerm], basis: FockBasis) -> ManyBodyOperator:
    terms = list(terms)
    monos = [m for t in terms for m in t.monomials]
    support = frozenset().union(*(t.support for t in terms)) if terms else frozenset()
    return ManyBodyOperator(basis, realize_monomials(monos, basis), support)


def creation_operator(site: int, basis: FockBasis) -> ManyBodyOperator:
    return ManyBodyOperator(basis, realize_monomials([(1.0, ((site, True),))], basis), {site})


def annihilation_operator(site: int, basis: FockBasis) -> ManyBodyOperator:
    return ManyBodyOperator(basis, realize_monomials([(1.0, ((site, False),))], basis), {site})


def charge_operator(region: Iterable[int], basis: FockBasis) -> ManyBodyOperator:
    """Diagonal operator counting the occupied sites of ``region``."""
    sites = sorted(set(int(x) for x in region))
    if sites and sites[-1] >= basis.n_sites:
        raise SiteOutOfRange("region exceeds the basis")
    mask = np.uint64(sum(1 << x for x in sites))
    counts = popcount(basis.states & mask).astype(complex)
    return ManyBodyOperator(basis, sp.diags(counts, format="csr"), frozenset(sites))


def gauge_average(term: LocalTerm) -> LocalTerm:
    """Average of ``exp(i theta Q) term exp(-i theta Q)`` over theta in [0, 2pi).

    For integer charge the average keeps exactly the balanced monomials.
    """
    kept = tuple((c, f) for c, f in term.monomials if monomial_charge(f) == 0 and c != 0)
    used = {s for _, f in kept for s, _ in f}
    return LocalTerm(kept, frozenset(used) & term.support)


def gauge_unitary(theta: Sequence[float], basis: FockBasis) -> ManyBodyOperator:
    """Diagonal ``exp(i sum_x theta_x n_x)``."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (basis.n_sites,):
        raise ValueError("need exactly one angle per site")
    phases = np.exp(1j * (basis.occupations @ theta))
    support = frozenset(np.flatnonzero(np.mod(theta, 2 * np.pi) != 0).tolist())
    return ManyBodyOperator(basis, sp.diags(phases, format="csr"), support)


def commutator(A: ManyBodyOperator, B: ManyBodyOperator) -> ManyBodyOperator:
    """``AB - BA`` with a support tightened by scanning which sites it acts on.

    On full (all-charge) bases a site is dropped when the result commutes with
    both ``a_x`` and ``a*_x``; on sector bases only the all-zero case is
    tightened.
    """
    if A.basis != B.basis:
        raise BasisMismatch(f"{A.basis} vs {B.basis}")
    m = A.matrix @ B.matrix - B.matrix @ A.matrix
    if sp.issparse(m):
        m.eliminate_zeros()
    if _is_zero_matrix(m):
        return ManyBodyOperator(A.basis, m, frozenset())
    support = set(A.support | B.support)
    if not A.basis.is_sector:
        for x in sorted(support):
            ax = annihilation_operator(x, A.basis).matrix
            if _is_zero_matrix(m @ ax - ax @ m, 1e-13) and _is_zero_matrix(
                    m @ ax.T - ax.T @ m, 1e-13):
                support.discard(x)
    return ManyBodyOperator(A.basis, m, frozenset(support))
