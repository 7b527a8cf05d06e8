"""Quadratic Hamiltonians: Fermi seas, ring closed forms, large-L currents and pumps.

For H = sum_xy h_xy a*_x a_y every many-body ground-state quantity reduces to
the single-particle matrix h and the Fermi projection onto its N lowest levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import mpmath
import numpy as np

from .errors import GapClosedAlongPath, OddLength
from .models import ModelSpec
from .transport import distance_to_lattice, evolve_matrices


@dataclass
class SingleParticleModel:
    h: np.ndarray
    L: int
    phi: float
    N: int
    current: np.ndarray | None = field(default=None, repr=False)   # -dh/dphi

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=complex)
        if not np.allclose(self.h, self.h.conj().T, atol=1e-13, rtol=0):
            raise ValueError("single-particle matrix must be hermitian")

    @classmethod
    def from_model(cls, model: ModelSpec, N: int | None = None) -> "SingleParticleModel":
        N = model.half_filling() if N is None else N
        return cls(model.single_particle_matrix(), model.L, float(model.params.get("phi", 0.0)), N,
                   single_particle_current(model))


def single_particle_current(model: ModelSpec) -> np.ndarray:
    """(1/L) dh~/ds at s = 0 from the twist charges of a quadratic model."""
    n = model.n_sites
    j = np.zeros((n, n), dtype=complex)
    for i, t in enumerate(model.terms):
        for (c, f), m in zip(t.monomials, model.twist_charges(i)):
            j[f[0][0], f[1][0]] += 1j * m * c / model.L
    return j


@dataclass
class FermiSea:
    energies: np.ndarray
    vectors: np.ndarray
    N: int
    gap: float

    @property
    def projector(self) -> np.ndarray:
        V = self.vectors[:, :self.N]
        return V @ V.conj().T

    def expectation(self, A: np.ndarray) -> complex:
        """tr(P_F A) = <dGamma(A)> in the Fermi sea."""
        V = self.vectors[:, :self.N]
        return complex(np.einsum("xi,xy,yi->", V.conj(), A, V))

    @property
    def energy(self) -> float:
        return float(self.energies[:self.N].sum())


def fermi_sea(h: np.ndarray, N: int) -> FermiSea:
    e, v = np.linalg.eigh(h)
    gap = float(e[N] - e[N - 1]) if 0 < N < len(e) else math.inf
    return FermiSea(e, v, N, gap)


def quadratic_ground_current(model: SingleParticleModel, J1: np.ndarray | None = None) -> float:
    """tr(P_F J1); J1 defaults to the model's current density matrix."""
    J1 = model.current if J1 is None else J1
    return fermi_sea(model.h, model.N).expectation(J1).real


# -- flux ring ---------------------------------------------------------------

def ring_hamiltonian(L: int, phi: float, t_hop: float = 1.0) -> np.ndarray:
    """h = -t (e^{i phi/L} T + h.c.) with (T psi)(x) = psi(x-1)."""
    h = np.zeros((L, L), dtype=complex)
    for x in range(L):
        h[(x + 1) % L, x] += -t_hop * np.exp(1j * phi / L)
        h[x, (x + 1) % L] += -t_hop * np.exp(-1j * phi / L)
    return h


def ring_current_matrix(L: int, phi: float, t_hop: float = 1.0) -> np.ndarray:
    """j = -dh/dphi for the flux ring."""
    j = np.zeros((L, L), dtype=complex)
    for x in range(L):
        j[(x + 1) % L, x] += 1j * t_hop / L * np.exp(1j * phi / L)
        j[x, (x + 1) % L] += -1j * t_hop / L * np.exp(-1j * phi / L)
    return j


def ring_spectrum(L: int, phi: float, check: bool = True):
    """Plane-wave eigenpairs E_k = -2 cos((phi - 2 pi k)/L), psi_k(x) = e^{2 pi i x k/L}/sqrt(L).

    Returns (k, energies, vectors as columns).  With ``check`` the pairs are
    verified against the ring matrix to 1e-12.
    """
    if L < 2:
        raise ValueError("L >= 2")
    k = np.arange(L)
    E = -2 * np.cos((phi - 2 * np.pi * k) / L)
    x = np.arange(L)
    psi = np.exp(2j * np.pi * np.outer(x, k) / L) / np.sqrt(L)
    if check:
        h = ring_hamiltonian(L, phi)
        err = np.abs(h @ psi - psi * E).max()
        if err > 1e-12 * max(L, 1):
            raise ArithmeticError(f"ring eigenpairs off by {err:.2e}")
    return k, E, psi


def mode_current(L: int, phi: float, k) -> float:
    """<psi_k, j psi_k> = (2/L) sin((2 pi k - phi)/L)."""
    return 2.0 / L * np.sin((2 * np.pi * np.asarray(k) - phi) / L)


def mode_current_fd(L: int, phi: float, k, h: float = 1e-4):
    """-dE_k/dphi by central differences."""
    E = lambda f: -2 * np.cos((f - 2 * np.pi * np.asarray(k)) / L)
    return -(E(phi + h) - E(phi - h)) / (2 * h)


def fermi_window(N: int) -> np.ndarray:
    """Occupied momenta: [-m, m] for N = 2m+1, [-m+1, m] for N = 2m."""
    m = N // 2
    return np.arange(-m, m + 1) if N % 2 else np.arange(-m + 1, m + 1)


@dataclass
class FermiCurrent:
    L: int
    N: int
    phi: float
    exact: float
    asymptotic: float

    @property
    def remainder(self) -> float:
        return self.exact - self.asymptotic


def fermi_current_asymptotic(L: int, phi: float, N: int, rho: float | None = None) -> float:
    """Leading 1/L term of tr(P_F j) for the window sea at density ``rho`` (default N/L).

    Odd N: -(2 phi/(pi L)) sin(pi rho).  Even N (window shifted by half a
    momentum): +(2 (pi - phi)/(pi L)) sin(pi rho).
    """
    rho = N / L if rho is None else rho
    if N % 2:
        return -(2 * phi / (np.pi * L)) * np.sin(np.pi * rho)
    return (2 * (np.pi - phi) / (np.pi * L)) * np.sin(np.pi * rho)


def fermi_current(L: int, phi: float, N: int, method: str = "window",
                  rho: float | None = None) -> FermiCurrent:
    """tr(P_F j) for N fermions on the flux ring.

    ``window`` sums the mode currents over the momentum window (the ground
    state for 0 < phi < pi); ``direct`` fills the N lowest levels of the ring
    matrix and traces the current matrix.
    """
    if method == "window":
        exact = float(np.sum(mode_current(L, phi, fermi_window(N))))
    elif method == "direct":
        sea = fermi_sea(ring_hamiltonian(L, phi), N)
        exact = sea.expectation(ring_current_matrix(L, phi)).real
    else:
        raise ValueError("method must be 'window' or 'direct'")
    return FermiCurrent(L, N, phi, exact, fermi_current_asymptotic(L, phi, N, rho))


def odd_filling(L: int, rho: float) -> int:
    """Odd particle number nearest to rho L."""
    m = round((rho * L - 1) / 2)
    return int(min(max(2 * m + 1, 1), L - 1 if L % 2 == 0 else L))


def remainder_constant(phi: float, rho: float, sizes) -> float:
    """Envelope c with |exact - asymptotic| <= c / L^2 over ``sizes`` at odd filling.

    The remainder oscillates with the offset N - rho L, so the constant is the
    largest |r| L^2 seen rather than an average.
    """
    return float(max(abs(fermi_current(L, phi, odd_filling(L, rho), rho=rho).remainder) * L * L
                     for L in sizes))


def fermi_current_closed_form(L: int, phi: float, N: int) -> float:
    """Odd N: -(2/L) sin(phi/L) sin(pi N/L) / sin(pi/L) (geometric sum of the window)."""
    if N % 2 == 0:
        raise ValueError("closed form written for odd N")
    return -(2.0 / L) * np.sin(phi / L) * np.sin(np.pi * N / L) / np.sin(np.pi / L)


# -- dimerized ring ----------------------------------------------------------

def dimerized_bloch_current(L: int, t1: float = 1.0, t2: float = 0.5, phi: float = 1.0,
                            stagger: float = 0.0, dps: int | None = None) -> float:
    """Half-filled dimerized ring current from the two-band Bloch form, in high precision.

    j = (2 t1 t2 / L) sum_k sin(k - 2 phi/L) / E_+(k), k = 2 pi n / (L/2), with
    E_+(k) = sqrt(stagger^2 + t1^2 + t2^2 + 2 t1 t2 cos(k - 2 phi/L)).
    The terms are O(1/L) while the sum is exponentially small, so the working
    precision grows with L.
    """
    if L % 2:
        raise OddLength("dimerized ring needs an even number of sites")
    M = L // 2
    with mpmath.workdps(dps if dps is not None else 30 + L // 4):
        t1m, t2m, dm = mpmath.mpf(t1), mpmath.mpf(t2), mpmath.mpf(stagger)
        shift = 2 * mpmath.mpf(phi) / L
        total = mpmath.mpf(0)
        for n in range(M):
            q = 2 * mpmath.pi * n / M - shift
            E = mpmath.sqrt(dm ** 2 + t1m ** 2 + t2m ** 2 + 2 * t1m * t2m * mpmath.cos(q))
            total += mpmath.sin(q) / E
        return float(2 * t1m * t2m / L * total)


def dimerized_matrix(L: int, t1: float, t2: float, phi: float = 0.0, stagger: float = 0.0) -> np.ndarray:
    """Single-particle matrix of models.dimerized_ring."""
    if L % 2:
        raise OddLength("dimerized ring needs an even number of sites")
    h = np.zeros((L, L), dtype=complex)
    for x in range(L):
        t = t1 if x % 2 == 0 else t2
        h[(x + 1) % L, x] += -t * np.exp(1j * phi / L)
        h[x, (x + 1) % L] += -t * np.exp(-1j * phi / L)
        h[x, x] += stagger if x % 2 == 0 else -stagger
    return h


# -- pumps -------------------------------------------------------------------

def rice_mele_path(L: int, t0: float = 1.0, delta: float = 0.5, stagger: float = 1.0,
                   offset: float = 0.0, reverse: bool = False) -> Callable[[float], np.ndarray]:
    """s -> h(s) with t1,2 = t0 +- (offset + delta cos 2 pi s) and stagger sin 2 pi s.

    The loop winds around the gap-closing point t1 = t2, stagger = 0 when
    |offset| < delta and can be shrunk to a point otherwise.
    """
    sign = -1.0 if reverse else 1.0

    def path(s):
        c, sn = np.cos(2 * np.pi * s), np.sin(2 * np.pi * sign * s)
        return dimerized_matrix(L, t0 + offset + delta * c, t0 - offset - delta * c, 0.0, stagger * sn)

    return path


@dataclass
class PumpResult:
    charge: float             # tr(P_F(0) T_-)
    distance: float           # to the nearest integer
    min_gap: float
    projector_defect: float   # ||U P(0) U* - P(1)||
    n_steps: int


def _fermi_projector(h, N):
    e, v = np.linalg.eigh(h)
    V = v[:, :N]
    return V @ V.conj().T, float(e[N] - e[N - 1])


def kato_generator(path: Callable[[float], np.ndarray], N: int, ds: float = 1e-5):
    """s -> i[dP/ds, P] with dP/ds from central differences of the Fermi projection."""
    def g(s):
        P, _ = _fermi_projector(path(s), N)
        Pp, _ = _fermi_projector(path(s + ds), N)
        Pm, _ = _fermi_projector(path(s - ds), N)
        dP = (Pp - Pm) / (2 * ds)
        return 1j * (dP @ P - P @ dP)
    return g


def pump(path: Callable[[float], np.ndarray], N: int, region=None, minus=None,
         n_steps: int = 200, gap_tol: float = 1e-6) -> PumpResult:
    """Charge transported across the line near x = 0 by parallel transport of P_F.

    The single-particle generator is the Kato form g = i[P', P], whose flow keeps
    the instantaneous Fermi projection invariant.  T_- = i int u*[g_-, q]u ds
    with g_- the entries of g touching ``minus`` and q the projection onto
    ``region``; the result is tr(P_F(0) T_-).
    """
    h0 = path(0.0)
    L = h0.shape[0]
    region = np.arange(L // 2 + 1) if region is None else np.asarray(list(region))
    if minus is None:
        w = max((L // 2 - 2) // 2, 1)
        minus = [x % L for x in range(-w, w + 1)]
    q = np.zeros(L)
    q[region] = 1.0
    mark = np.zeros(L, dtype=bool)
    mark[list(minus)] = True
    touch = mark[:, None] | mark[None, :]
    gaps = [_fermi_projector(path(s), N)[1] for s in np.linspace(0, 1, 4 * n_steps + 1)]
    min_gap = float(min(gaps))
    if min_gap < gap_tol:
        raise GapClosedAlongPath(f"Fermi-level gap closes along the path (min {min_gap:.2e})")
    g = kato_generator(path, N)
    T = np.zeros((L, L), dtype=complex)
    hstep = 1.0 / n_steps
    if n_steps % 2:
        raise ValueError("n_steps must be even for Simpson weights")

    def obs(k, s, U):
        wgt = (1 if k in (0, n_steps) else (4 if k % 2 else 2)) * hstep / 3
        gm = np.where(touch, g(s), 0)
        comm = gm * q[None, :] - q[:, None] * gm
        T[:] += wgt * (U.conj().T @ (1j * comm) @ U)

    U = evolve_matrices(g, L, n_steps, obs)
    P0, _ = _fermi_projector(h0, N)
    P1, _ = _fermi_projector(path(1.0), N)
    defect = float(np.linalg.norm(U @ P0 @ U.conj().T - P1, 2))
    charge = float(np.trace(P0 @ T).real)
    return PumpResult(charge, distance_to_lattice(charge), min_gap, defect, n_steps)


def single_particle_edge_current(model: ModelSpec, region, minus) -> np.ndarray:
    """i[h_-, q] with h_- the terms inside ``minus`` and q the projection onto ``region``.

    Its second quantization is the many-body J_- of observables.edge_currents.
    """
    n = model.n_sites
    ms = set(minus)
    h = np.zeros((n, n), dtype=complex)
    for t in model.terms:
        if t.support <= ms:
            for c, f in t.monomials:
                h[f[0][0], f[1][0]] += c
    q = np.zeros(n)
    q[list(region)] = 1.0
    return 1j * (h * q[None, :] - q[:, None] * h)
