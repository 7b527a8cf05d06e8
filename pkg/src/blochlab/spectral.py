"""Sector-resolved eigenproblems, ground projectors and Gibbs states."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh
from scipy.special import logsumexp

from .errors import IterationDivergence, NoGap, NotChargeConserving, NotHermitian, RequiresFullSpectrum
from .manybody import FockBasis, ManyBodyOperator

LANCZOS_RTOL = 1e-10


@dataclass
class SectorBlock:
    charge: int
    indices: np.ndarray        # positions of the sector inside the basis
    energies: np.ndarray       # ascending
    vectors: np.ndarray        # (len(indices), n_found) eigenvectors, columns
    full: bool

    def embed(self, dim: int) -> np.ndarray:
        """Eigenvectors as columns of the full basis dimension."""
        out = np.zeros((dim, self.vectors.shape[1]), dtype=complex)
        out[self.indices] = self.vectors
        return out


@dataclass
class SpectralData:
    basis: FockBasis
    hamiltonian: ManyBodyOperator
    blocks: list[SectorBlock]
    norm_estimate: float

    @property
    def is_full(self) -> bool:
        return all(b.full for b in self.blocks)

    @cached_property
    def energies(self) -> np.ndarray:
        return np.sort(np.concatenate([b.energies for b in self.blocks]))

    @cached_property
    def _merged(self):
        e = np.concatenate([b.energies for b in self.blocks])
        owner = np.concatenate([np.full(len(b.energies), i) for i, b in enumerate(self.blocks)])
        col = np.concatenate([np.arange(len(b.energies)) for b in self.blocks])
        order = np.argsort(e, kind="stable")
        return e[order], owner[order], col[order]

    def lowest(self, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(energies, vectors in full basis, charges) of the k lowest states overall."""
        e, owner, col = self._merged
        k = min(k, len(e))
        vecs = np.zeros((self.basis.dim, k), dtype=complex)
        charges = np.zeros(k, dtype=int)
        for j in range(k):
            b = self.blocks[owner[j]]
            vecs[b.indices, j] = b.vectors[:, col[j]]
            charges[j] = b.charge
        return e[:k], vecs, charges

    def eigenbasis(self) -> tuple[np.ndarray, np.ndarray]:
        """All (energies, vectors) for a single-sector full spectrum, sorted."""
        if not self.is_full:
            raise RequiresFullSpectrum("eigenbasis requires mode='full'")
        e, vecs, _ = self.lowest(len(self.energies))
        return e, vecs

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sector", "index", "eigenvalue"])
            for b in self.blocks:
                for i, e in enumerate(b.energies):
                    w.writerow([b.charge, i, repr(float(e))])


def _diag_block(h: sp.csr_matrix, mode: str, k: int, dense_below: int = 2048):
    n = h.shape[0]
    if mode == "full" or n <= max(dense_below, k + 1):
        e, v = np.linalg.eigh(h.toarray())
        full = True
        if mode != "full":
            e, v = e[:k], v[:, :k]
            full = k >= n
        return e, v, full
    e, v = eigsh(h, k=k, which="SA", tol=1e-13, maxiter=20 * n)
    order = np.argsort(e)
    e, v = e[order], v[:, order]
    scale = max(float(np.abs(e).max()), 1.0)
    res = np.linalg.norm(h @ v - v * e, axis=0).max()
    if res > LANCZOS_RTOL * scale:
        raise IterationDivergence(f"Lanczos residual {res:.2e} above tolerance", residual=res)
    return e, v, False


def diagonalize(H: ManyBodyOperator, mode: str = "full", k: int = 6,
                charges: Iterable[int] | None = None, workers: int = 1) -> SpectralData:
    """Diagonalize a charge-conserving Hamiltonian sector by sector.

    ``mode='full'`` uses dense eigh per sector; ``mode='lowest'`` keeps the k
    lowest states per sector (iterative solver above dimension 2048).
    """
    if mode not in ("full", "lowest"):
        raise ValueError("mode must be 'full' or 'lowest'")
    if not H.is_hermitian(1e-12):
        raise NotHermitian("Hamiltonian is not hermitian")
    basis = H.basis
    if not basis.is_sector and H.off_sector_max() > 0:
        raise NotChargeConserving("Hamiltonian mixes charge sectors")
    mat = sp.csr_matrix(H.matrix)
    sectors = basis.sectors()
    if charges is not None:
        wanted = set(int(c) for c in charges)
        sectors = {N: idx for N, idx in sectors.items() if N in wanted}

    def work(item):
        N, idx = item
        e, v, full = _diag_block(mat[idx][:, idx], mode, k)
        return SectorBlock(N, idx, e, v, full)

    items = sorted(sectors.items())
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            blocks = list(pool.map(work, items))
    else:
        blocks = [work(it) for it in items]
    norm = max(float(np.abs(b.energies).max()) for b in blocks if len(b.energies))
    return SpectralData(basis, H, blocks, norm)


@dataclass
class GroundSpace:
    energies: np.ndarray
    vectors: np.ndarray          # (dim, p) orthonormal columns
    charges: np.ndarray
    gap: float | None
    cluster_tol: float

    @property
    def p(self) -> int:
        return self.vectors.shape[1]

    @cached_property
    def projector(self) -> np.ndarray:
        return self.vectors @ self.vectors.conj().T

    def trace(self, A) -> complex:
        """tr(P A) for a ManyBodyOperator or array A."""
        m = A.matrix if isinstance(A, ManyBodyOperator) else A
        return complex(np.trace(self.vectors.conj().T @ (m @ self.vectors)))

    def compress(self, A) -> np.ndarray:
        """p x p matrix V* A V of A inside the ground space."""
        m = A.matrix if isinstance(A, ManyBodyOperator) else A
        return self.vectors.conj().T @ (m @ self.vectors)


def ground_projector(spec: SpectralData, cluster_tol: float | None = None,
                     rank: int | None = None) -> GroundSpace:
    """Ground-state cluster, its projector and the gap to the rest of the spectrum.

    By default the cluster holds every eigenvalue within ``cluster_tol`` (default
    1e-8 * ||H||) of the minimum.  ``rank`` instead fixes the number of states.
    """
    tol = 1e-8 * max(spec.norm_estimate, 1.0) if cluster_tol is None else cluster_tol
    e, _, _ = spec._merged
    if rank is None:
        p = int(np.sum(e <= e[0] + tol))
    else:
        p = int(rank)
    if p >= len(e):
        if spec.is_full:
            energies, vecs, charges = spec.lowest(p)
            return GroundSpace(energies, vecs, charges, None, tol)
        raise NoGap("every computed eigenvalue is in the ground cluster; request more states")
    gap = float(e[p] - e[p - 1])
    if not spec.is_full:
        # the next state could live in a sector whose computed window is exhausted
        for b in spec.blocks:
            if not b.full and len(b.energies) and b.energies[-1] <= e[p - 1] + tol:
                raise NoGap("lowest-k window too small to resolve the gap")
    if gap <= tol:
        raise NoGap(f"gap {gap:.3e} not above cluster tolerance {tol:.1e}", gap=gap)
    energies, vecs, charges = spec.lowest(p)
    return GroundSpace(energies, vecs, charges, gap, tol)


@dataclass
class GibbsState:
    beta: float
    spec: SpectralData
    log_weights: list[np.ndarray] = field(repr=False)
    log_Z: float = 0.0

    @cached_property
    def weights(self) -> list[np.ndarray]:
        return [np.exp(lw - self.log_Z) for lw in self.log_weights]

    def expectation(self, A) -> complex:
        m = A.matrix if isinstance(A, ManyBodyOperator) else A
        total = 0.0
        for b, w in zip(self.spec.blocks, self.weights):
            sub = m[b.indices][:, b.indices]
            sub = sub.toarray() if sp.issparse(sub) else sub
            diag = np.einsum("ij,ij->j", b.vectors.conj(), sub @ b.vectors)
            total = total + np.dot(w, diag)
        return complex(total)

    @cached_property
    def density_matrix(self) -> np.ndarray:
        dim = self.spec.basis.dim
        rho = np.zeros((dim, dim), dtype=complex)
        for b, w in zip(self.spec.blocks, self.weights):
            v = b.embed(dim)
            rho += (v * w) @ v.conj().T
        return rho

    @property
    def energy(self) -> float:
        return float(sum(np.dot(w, b.energies) for b, w in zip(self.spec.blocks, self.weights)))

    @property
    def entropy(self) -> float:
        s = 0.0
        for w in self.weights:
            nz = w[w > 0]
            s -= float(np.sum(nz * np.log(nz)))
        return s

    def free_energy(self, H=None) -> float:
        """tr(rho H) - S/beta; ``H`` defaults to the Hamiltonian of the state."""
        e = self.energy if H is None else self.expectation(H).real
        return e - self.entropy / self.beta if self.beta > 0 else -np.inf


def gibbs(spec: SpectralData, beta: float) -> GibbsState:
    if not spec.is_full:
        raise RequiresFullSpectrum("Gibbs state needs every eigenvalue")
    logw = [-beta * b.energies for b in spec.blocks]
    logZ = float(logsumexp(np.concatenate(logw)))
    return GibbsState(beta, spec, logw, logZ)
