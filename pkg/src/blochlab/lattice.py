"""Periodic ring and torus geometry with named regions.

Sites of the torus are indexed row-major, ``site = x1 + L * x2``, so that the
first coordinate ``x1`` (the transport direction) varies fastest.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator

import numpy as np

from .errors import EmptyRegion, StripOverlap

RING = "ring"
TORUS = "torus2d"


@dataclass(frozen=True)
class Lattice:
    kind: str
    L: int

    def __post_init__(self):
        if self.kind not in (RING, TORUS):
            raise ValueError(f"unknown lattice kind {self.kind!r}")
        if int(self.L) != self.L or self.L < 2:
            raise ValueError("linear size must be an integer >= 2")

    @property
    def n_sites(self) -> int:
        return self.L if self.kind == RING else self.L * self.L

    @property
    def dim(self) -> int:
        return 1 if self.kind == RING else 2

    def coords(self, site: int) -> tuple[int, ...]:
        if self.kind == RING:
            return (site,)
        return (site % self.L, site // self.L)

    def site(self, x1: int, x2: int = 0) -> int:
        if self.kind == RING:
            return x1 % self.L
        return (x1 % self.L) + self.L * (x2 % self.L)

    def column(self, site: int) -> int:
        """First coordinate x1 of a site."""
        return site % self.L

    @cached_property
    def _coord_array(self) -> np.ndarray:
        sites = np.arange(self.n_sites)
        if self.kind == RING:
            return sites[:, None]
        return np.stack([sites % self.L, sites // self.L], axis=1)

    @cached_property
    def distance_matrix(self) -> np.ndarray:
        c = self._coord_array
        diff = np.abs(c[:, None, :] - c[None, :, :])
        diff = np.minimum(diff, self.L - diff)
        return diff.sum(axis=-1)

    def site_distance(self, a: int, b: int) -> int:
        return int(self.distance_matrix[a, b])

    def diameter(self, sites: Iterable[int]) -> int:
        s = list(sites)
        if not s:
            return 0
        return int(self.distance_matrix[np.ix_(s, s)].max())

    def neighbors(self, site: int) -> list[int]:
        return [int(y) for y in np.flatnonzero(self.distance_matrix[site] == 1)]

    def all_sites(self) -> "Region":
        return Region(self, range(self.n_sites))


def ring(L: int) -> Lattice:
    return Lattice(RING, L)


def torus(L: int) -> Lattice:
    return Lattice(TORUS, L)


@dataclass(frozen=True, eq=False)
class Region:
    """A set of lattice sites. Immutable; set operations return new regions."""

    lattice: Lattice
    sites: tuple[int, ...] = field(default=())

    def __init__(self, lattice: Lattice, sites: Iterable[int] = ()):
        s = sorted({int(x) for x in sites})
        if s and (s[0] < 0 or s[-1] >= lattice.n_sites):
            raise ValueError("site index outside the lattice")
        object.__setattr__(self, "lattice", lattice)
        object.__setattr__(self, "sites", tuple(s))

    @cached_property
    def _set(self) -> frozenset[int]:
        return frozenset(self.sites)

    def __contains__(self, site: int) -> bool:
        return site in self._set

    def __len__(self) -> int:
        return len(self.sites)

    def __iter__(self) -> Iterator[int]:
        return iter(self.sites)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Region):
            return NotImplemented
        return self.lattice == other.lattice and self.sites == other.sites

    def __hash__(self) -> int:
        return hash((self.lattice, self.sites))

    def __repr__(self) -> str:
        return f"Region({list(self.sites)})"

    def _check(self, other: "Region"):
        if other.lattice != self.lattice:
            raise ValueError("regions live on different lattices")

    def complement(self) -> "Region":
        return Region(self.lattice, (x for x in range(self.lattice.n_sites) if x not in self._set))

    def intersection(self, other: "Region") -> "Region":
        self._check(other)
        return Region(self.lattice, self._set & other._set)

    def union(self, other: "Region") -> "Region":
        self._check(other)
        return Region(self.lattice, self._set | other._set)

    __and__ = intersection
    __or__ = union

    def issubset(self, sites: Iterable[int]) -> bool:
        return self._set.issubset(sites)

    def mask(self) -> int:
        """Bit mask with bit x set for every site x in the region."""
        m = 0
        for x in self.sites:
            m |= 1 << x
        return m

    def boundary(self) -> "Region":
        """Sites within distance 1 of both the region and its complement."""
        lat = self.lattice
        if not self.sites or len(self.sites) == lat.n_sites:
            return Region(lat)
        d = lat.distance_matrix
        inside = np.zeros(lat.n_sites, dtype=bool)
        inside[list(self.sites)] = True
        d_in = d[:, inside].min(axis=1)
        d_out = d[:, ~inside].min(axis=1)
        return Region(lat, np.flatnonzero((d_in <= 1) & (d_out <= 1)))

    def to_list(self) -> list[int]:
        return list(self.sites)


def half_torus(lat: Lattice) -> Region:
    """Sites with 0 <= x1 <= L/2."""
    return Region(lat, (x for x in range(lat.n_sites) if 2 * lat.column(x) <= lat.L))


def _periodic_abs(x: int, L: int) -> int:
    x %= L
    return min(x, L - x)


def strip(lat: Lattice, center: int, width: int) -> Region:
    """Columns with periodic |x1 - center| <= width. No overlap checks."""
    return Region(lat, (x for x in range(lat.n_sites)
                        if _periodic_abs(lat.column(x) - center, lat.L) <= width))


def boundary_strip(lat: Lattice, which: str, width: int) -> Region:
    """Strip of 2*width+1 columns around one of the two edges of the half-torus.

    ``which="minus"`` is centred on x1 = 0, ``which="plus"`` on x1 = floor(L/2).
    """
    if which not in ("minus", "plus"):
        raise ValueError("which must be 'minus' or 'plus'")
    if not 2 * width + 1 < lat.L / 2:
        raise StripOverlap(f"strips of width {width} overlap on L={lat.L} (need 2R+1 < L/2)")
    center = 0 if which == "minus" else lat.L // 2
    return strip(lat, center, width)


def graph_distance(lat: Lattice, X: Region, Y: Region) -> int:
    if len(X) == 0 or len(Y) == 0:
        raise EmptyRegion("distance to an empty region is undefined")
    return int(lat.distance_matrix[np.ix_(list(X.sites), list(Y.sites))].min())
