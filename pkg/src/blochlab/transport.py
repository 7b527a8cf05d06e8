"""Charge transport by local charge-conserving drives and the many-body index.

A drive is s -> G(s) = sum_X g_X(s) on s in [0, 1]; U solves i dU/ds = G(s) U.
The charge moved across the fiducial line near x1 = 0 is

    T_- = i int_0^1 U(s)* [G_-(s), Q] U(s) ds,

with G_- the terms of G touching a strip around x1 = 0.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import NotChargeConserving, ProjectorNotInvariant, StepSizeTooCoarse
from .lattice import Lattice, Region, half_torus, strip
from .manybody import FockBasis, LocalTerm, ManyBodyOperator, charge_operator, opnorm, parse_term, realize_sum
from .models import ModelSpec
from .spectral import GroundSpace, SpectralData, ground_projector

_SQ3 = math.sqrt(3.0)


@dataclass
class DriveProtocol:
    """s -> list of (coefficient, LocalTerm); G(s) = sum of coefficient * term.

    ``terms`` is fixed and ``coefficients(s)`` returns one complex weight per
    term, which keeps every realization a cheap linear combination.
    """

    lattice: Lattice
    terms: tuple[LocalTerm, ...]
    coefficients: Callable[[float], np.ndarray]
    name: str = "drive"
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.terms = tuple(self.terms)
        for t in self.terms:
            if not t.is_charge_conserving:
                raise NotChargeConserving(f"drive term {t.to_text()} does not conserve charge")

    @classmethod
    def constant(cls, model: ModelSpec, duration: float = 1.0) -> "DriveProtocol":
        """G(s) = duration * H, so that U(1) = exp(-i duration H)."""
        n = len(model.terms)
        return cls(model.lattice, model.terms, lambda s: np.full(n, duration, dtype=complex),
                   name=f"{model.name}*{duration:g}")

    @classmethod
    def zero(cls, lattice: Lattice) -> "DriveProtocol":
        return cls(lattice, (), lambda s: np.zeros(0, dtype=complex), name="zero")

    @classmethod
    def from_grid(cls, lattice: Lattice, s_grid: Sequence[float],
                  term_lists: Sequence[Sequence[str]]) -> "DriveProtocol":
        """Piecewise-linear interpolation between term lists given at grid points.

        ``term_lists[k]`` holds canonical term texts active at ``s_grid[k]``.
        """
        s_grid = np.asarray(s_grid, dtype=float)
        if len(s_grid) != len(term_lists) or len(s_grid) < 2 or np.any(np.diff(s_grid) <= 0):
            raise ValueError("need an increasing s-grid with one term list per point")
        terms = [parse_term(t) for lst in term_lists for t in lst]
        owner = np.concatenate([[k] * len(lst) for k, lst in enumerate(term_lists)]).astype(int)

        def coeffs(s):
            w = np.zeros(len(s_grid))
            k = int(np.clip(np.searchsorted(s_grid, s, side="right") - 1, 0, len(s_grid) - 2))
            a = (s - s_grid[k]) / (s_grid[k + 1] - s_grid[k])
            w[k], w[k + 1] = 1 - a, a
            return w[owner].astype(complex)

        return cls(lattice, tuple(terms), coeffs, name="grid")

    @classmethod
    def from_single_particle(cls, lattice: Lattice, generator: Callable[[float], np.ndarray],
                             cutoff: float = 0.0) -> "DriveProtocol":
        """Second-quantize s -> g(s): G(s) = sum_xy g_xy(s) a*_x a_y.

        One term per unordered pair {x, y} (hermitian part carried by the
        coefficient); pairs whose entries stay below ``cutoff`` on a probe grid
        are dropped.
        """
        n = lattice.n_sites
        probe = np.array([generator(s) for s in np.linspace(0, 1, 9)])
        pairs = [(x, y) for x in range(n) for y in range(x, n)
                 if np.abs(probe[:, x, y]).max() > cutoff]
        terms = []
        for x, y in pairs:
            if x == y:
                terms.append(LocalTerm(((1.0, ((x, True), (x, False))),), frozenset((x,))))
            else:
                # two terms per pair: real and imaginary parts of g_xy
                terms.append(LocalTerm(((1.0, ((x, True), (y, False))), (1.0, ((y, True), (x, False)))),
                                       frozenset((x, y))))
                terms.append(LocalTerm(((1j, ((x, True), (y, False))), (-1j, ((y, True), (x, False)))),
                                       frozenset((x, y))))

        def coeffs(s):
            g = generator(s)
            out = []
            for x, y in pairs:
                if x == y:
                    out.append(g[x, x].real)
                else:
                    out += [g[x, y].real, g[x, y].imag]
            return np.asarray(out, dtype=complex)

        return cls(lattice, tuple(terms), coeffs, name="single-particle")

    def realize_terms(self, basis: FockBasis) -> list[sp.csr_matrix]:
        key = id(basis)
        if key not in self._cache:
            self._cache[key] = [realize_sum([t], basis).matrix for t in self.terms]
        return self._cache[key]

    def matrix(self, s: float, basis: FockBasis, mask: np.ndarray | None = None) -> np.ndarray:
        """Dense G(s) (restricted to the terms selected by ``mask``)."""
        mats = self.realize_terms(basis)
        c = self.coefficients(s)
        out = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
        for k, m in enumerate(mats):
            if c[k] != 0 and (mask is None or mask[k]):
                out = out + c[k] * m
        return out.toarray()

    def norm_bound(self, s: float) -> float:
        """sum_X |c_X(s)| ||g_X||, an upper bound on ||G(s)||."""
        if "norms" not in self._cache:
            self._cache["norms"] = np.array([opnorm(t.local_matrix()) for t in self.terms])
        return float(np.abs(self.coefficients(s)) @ self._cache["norms"]) if self.terms else 0.0

    def minus_mask(self, minus: Region, plus: Region | None = None) -> np.ndarray:
        """Terms touching ``minus``; those touching both strips go to the minus side."""
        ms = set(minus.sites)
        ps = set(plus.sites) if plus is not None else set()
        mask = np.array([bool(t.support & ms) for t in self.terms], dtype=bool)
        both = [t for t in self.terms if t.support & ms and t.support & ps]
        if both:
            warnings.warn(f"{len(both)} drive terms touch both strips; assigned to G_-")
        return mask

    def locality_constant(self, xi: Callable[[int], float] = lambda d: math.exp(-d),
                          n_samples: int = 11) -> float:
        """sup over s and sites x of sum_{X containing x} ||g_X(s)|| / xi(diam X)."""
        norms = [opnorm(t.local_matrix()) for t in self.terms]
        diams = [self.lattice.diameter(t.support) for t in self.terms]
        worst = 0.0
        for s in np.linspace(0, 1, n_samples):
            c = np.abs(self.coefficients(s))
            per_site = np.zeros(self.lattice.n_sites)
            for k, t in enumerate(self.terms):
                for x in t.support:
                    per_site[x] += c[k] * norms[k] / xi(diams[k])
            worst = max(worst, float(per_site.max()) if len(per_site) else 0.0)
        return worst


def magnus_step(G1: np.ndarray, G2: np.ndarray, h: float) -> np.ndarray:
    """exp(-i Omega) for the fourth-order Magnus expansion on one step.

    G1, G2 are the generator at the two Gauss points; Omega is hermitian so
    the step is unitary to rounding.
    """
    M = 0.5 * h * (G1 + G2) - 1j * (_SQ3 / 12.0) * h * h * (G2 @ G1 - G1 @ G2)
    M = 0.5 * (M + M.conj().T)
    lam, V = np.linalg.eigh(M)
    return (V * np.exp(-1j * lam)) @ V.conj().T


def evolve_matrices(G: Callable[[float], np.ndarray], dim: int, n_steps: int,
                    observer: Callable[[int, float, np.ndarray], None] | None = None,
                    max_phase: float = 2.0,
                    norm_bound: Callable[[float], float] | None = None) -> np.ndarray:
    """Integrate i dU/ds = G(s) U on [0, 1] with n_steps Magnus-4 steps.

    ``observer(k, s_k, U_k)`` is called at every grid point including s = 0.
    Raises StepSizeTooCoarse when ||G|| h exceeds ``max_phase`` or unitarity drifts.
    """
    h = 1.0 / n_steps
    U = np.eye(dim, dtype=complex)
    if observer:
        observer(0, 0.0, U)
    c1, c2 = 0.5 - _SQ3 / 6, 0.5 + _SQ3 / 6
    for k in range(n_steps):
        s = k * h
        G1, G2 = G(s + c1 * h), G(s + c2 * h)
        if norm_bound is not None:
            phase = h * max(norm_bound(s + c1 * h), norm_bound(s + c2 * h))
        else:
            phase = h * max(opnorm(G1), opnorm(G2)) if dim else 0.0
        if phase > max_phase:
            raise StepSizeTooCoarse(f"||G|| h = {phase:.2f} exceeds {max_phase}; use more steps")
        U = magnus_step(G1, G2, h) @ U
        if observer:
            observer(k + 1, s + h, U)
    defect = float(np.abs(U.conj().T @ U - np.eye(dim)).max()) if dim else 0.0
    if defect > 1e-8:
        raise StepSizeTooCoarse(f"unitarity defect {defect:.2e}")
    return U


@dataclass
class Evolution:
    U: np.ndarray
    s_grid: np.ndarray
    path: list[np.ndarray] | None
    unitarity_defect: float
    charge_defect: float


def evolve(protocol: DriveProtocol, basis: FockBasis, n_steps: int = 64,
           keep_path: bool = False) -> Evolution:
    path = [] if keep_path else None

    def obs(k, s, U):
        if keep_path:
            path.append(U.copy())

    U = evolve_matrices(lambda s: protocol.matrix(s, basis), basis.dim, n_steps, obs,
                        norm_bound=protocol.norm_bound)
    defect = float(np.abs(U.conj().T @ U - np.eye(basis.dim)).max())
    Qt = basis.charges.astype(float)
    charge = float(np.abs(U * Qt[None, :] - Qt[:, None] * U).max())
    return Evolution(U, np.linspace(0, 1, n_steps + 1), path, defect, charge)


@dataclass
class TransportResult:
    trPT: float                # tr(P T_-)
    p: int
    distance: float            # distance of tr(P T_-) to (1/p) Z
    up_commutator: float       # ||[U, P]||
    ucc_residual: float        # ||U*QU - Q - (T_- - T_+)||
    T_minus: np.ndarray = field(repr=False, default=None)
    U: np.ndarray = field(repr=False, default=None)


def distance_to_lattice(x: float, p: int = 1) -> float:
    """Distance of x to the nearest multiple of 1/p."""
    y = x * p
    return abs(y - round(y)) / p


def fiducial_width(L: int) -> int:
    """Widest pair of strips around x1 = 0 and L//2 that nearest-neighbour terms cannot bridge (L >= 6)."""
    return max((L // 2 - 2) // 2, 1)


def transported_charge(protocol: DriveProtocol, basis: FockBasis, region: Region | None = None,
                       minus: Region | None = None, plus: Region | None = None,
                       n_steps: int = 64):
    """Evolve and accumulate T_- and T_+ by Simpson's rule on the step grid.

    Returns (U, T_minus, T_plus, ucc_residual).
    """
    if n_steps % 2:
        n_steps += 1
    lat = protocol.lattice
    region = half_torus(lat) if region is None else region
    width = fiducial_width(lat.L)
    minus = strip(lat, 0, width) if minus is None else minus
    plus = strip(lat, lat.L // 2, width) if plus is None else plus
    Q = charge_operator(region.sites, basis).dense()
    mask = protocol.minus_mask(minus, plus)
    dim = basis.dim
    Tm = np.zeros((dim, dim), dtype=complex)
    Tp = np.zeros((dim, dim), dtype=complex)
    h = 1.0 / n_steps

    def obs(k, s, U):
        w = (1 if k in (0, n_steps) else (4 if k % 2 else 2)) * h / 3
        Gm = protocol.matrix(s, basis, mask)
        Gp = protocol.matrix(s, basis, ~mask)
        Tm[:] += w * (U.conj().T @ (1j * (Gm @ Q - Q @ Gm)) @ U)
        Tp[:] += w * (U.conj().T @ (-1j * (Gp @ Q - Q @ Gp)) @ U)

    U = evolve_matrices(lambda s: protocol.matrix(s, basis), dim, n_steps, obs,
                        norm_bound=protocol.norm_bound)
    ucc = float(np.linalg.norm(U.conj().T @ Q @ U - Q - (Tm - Tp), 2)) if dim else 0.0
    return U, Tm, Tp, ucc


def index(spec: SpectralData, protocol: DriveProtocol, ground: GroundSpace | None = None,
          n_steps: int = 64, invariance_tol: float = 1e-6, **regions) -> TransportResult:
    """tr(P T_-) for a drive whose evolution leaves the ground space invariant."""
    ground = ground_projector(spec) if ground is None else ground
    U, Tm, _, ucc = transported_charge(protocol, spec.basis, n_steps=n_steps, **regions)
    P = ground.projector
    comm = float(np.linalg.norm(U @ P - P @ U, 2))
    if comm > invariance_tol:
        raise ProjectorNotInvariant(f"||[U, P]|| = {comm:.2e} above {invariance_tol:.1e}", defect=comm)
    tr = ground.trace(Tm).real
    return TransportResult(float(tr), ground.p, distance_to_lattice(tr, ground.p), comm, ucc, Tm, U)


@dataclass
class BlochSweep:
    times: np.ndarray
    transported: np.ndarray     # tr(P T_-(t)) for U = exp(-itH)
    trPJ: float                 # tr(P J_-), independent of t
    max_distance: float
    slope: float                # least-squares slope of transported charge against t


def bloch_sweep(model: ModelSpec, spec: SpectralData, times: Sequence[float] | None = None,
                ground: GroundSpace | None = None, n_steps: int = 8) -> BlochSweep:
    """Index along U = exp(-itH): tr(P T_-(t)) = t tr(P J) must stay near Z for all t."""
    from .observables import edge_currents

    times = np.round(np.arange(1, 11) * 0.1, 12) if times is None else np.asarray(times, float)
    ground = ground_projector(spec) if ground is None else ground
    values = []
    for t in times:
        res = index(spec, DriveProtocol.constant(model, float(t)), ground, n_steps=n_steps)
        values.append(res.trPT)
    values = np.array(values)
    J = edge_currents(model, basis=spec.basis).J_minus
    trPJ = ground.trace(J).real
    dist = max(distance_to_lattice(v, ground.p) for v in values)
    slope = float(np.dot(times, values) / np.dot(times, times))
    return BlochSweep(times, values, float(trPJ), dist, slope)
