"""Square-lattice Hamiltonians as explicit sums of few-site terms.

Sites are indexed ``i = x + Lx * y``.  The local basis is ``|0>, |1>`` with
``sigma_z |0> = +|0>``; the Rydberg state ``|r>`` is ``|0>`` so that
``n = (1 + sigma_z) / 2 = diag(1, 0)``.  Energies are in MHz, lengths in um.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
ID2 = np.eye(2, dtype=complex)
NUM = np.array([[1, 0], [0, 0]], dtype=complex)

PAULI = {"x": SX, "y": SY, "z": SZ}

# Offsets up to the fourth-nearest neighbour, one representative per +-pair.
RYDBERG_OFFSETS = (
    (0, 1), (1, 0), (1, 1), (1, -1), (2, 0),
    (0, 2), (2, 1), (2, -1), (1, 2), (1, -2),
)

GHZ_TO_MHZ = 1000.0


@dataclass(frozen=True)
class Lattice2D:
    """Rectangular ``Lx x Ly`` lattice; ``Ly`` defaults to ``Lx``."""

    L: int
    boundary: str = "periodic"
    Ly: int | None = None

    def __post_init__(self):
        if self.L < 1 or (self.Ly is not None and self.Ly < 1):
            raise ValueError("lattice extents must be positive")
        if self.boundary not in ("periodic", "open"):
            raise ValueError(f"unknown boundary {self.boundary!r}")

    @property
    def Lx(self) -> int:
        return self.L

    @property
    def height(self) -> int:
        return self.L if self.Ly is None else self.Ly

    @property
    def N(self) -> int:
        return self.Lx * self.height

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    def index(self, x: int, y: int) -> int:
        return x + self.Lx * y

    def coords(self, i: int) -> tuple[int, int]:
        return i % self.Lx, i // self.Lx

    def shift(self, i: int, dx: int, dy: int) -> int | None:
        """Site displaced by ``(dx, dy)``, or None if it falls off an open edge."""
        x, y = self.coords(i)
        x, y = x + dx, y + dy
        if self.periodic:
            return self.index(x % self.Lx, y % self.height)
        if 0 <= x < self.Lx and 0 <= y < self.height:
            return self.index(x, y)
        return None

    def edges(self) -> list[tuple[int, int]]:
        """Nearest-neighbour bonds ``(i, i+x)`` then ``(i, i+y)`` for every site.

        On periodic extents of 2 the wrap-around bond duplicates the direct one;
        both copies are kept, matching the literal double sum.
        """
        out = []
        for i in range(self.N):
            for dx, dy in ((1, 0), (0, 1)):
                if (dx and self.Lx == 1) or (dy and self.height == 1):
                    continue
                j = self.shift(i, dx, dy)
                if j is not None:
                    out.append((i, j))
        return out


@dataclass(frozen=True)
class LocalTerm:
    """``coefficient * op`` acting on ``sites`` (``op`` is a ``2^k x 2^k`` matrix).

    The matrix uses kron ordering: ``sites[0]`` is the most significant factor.
    """

    sites: tuple[int, ...]
    op: np.ndarray
    coefficient: float = 1.0

    def __post_init__(self):
        sites = tuple(int(s) for s in self.sites)
        if len(set(sites)) != len(sites):
            raise ValueError(f"repeated site in term support {sites}")
        op = np.asarray(self.op, dtype=complex)
        dim = 2 ** len(sites)
        if op.shape != (dim, dim):
            raise ValueError(f"operator shape {op.shape} does not match {len(sites)} sites")
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "op", op)

    @property
    def matrix(self) -> np.ndarray:
        return self.coefficient * self.op

    def is_hermitian(self, atol: float = 1e-12) -> bool:
        m = self.matrix
        return bool(np.allclose(m, m.conj().T, atol=atol))


TermList = list  # list[LocalTerm]


def kron_all(ops: Iterable[np.ndarray]) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for op in ops:
        out = np.kron(out, op)
    return out


def embed(op: np.ndarray, sites: Sequence[int], target: Sequence[int]) -> np.ndarray:
    """Extend ``op`` on ``sites`` to the (ordered) superset ``target``."""
    sites = list(sites)
    target = list(target)
    k, n = len(sites), len(target)
    missing = [s for s in target if s not in sites]
    if len(missing) != n - k:
        raise ValueError("target does not contain all sites")
    full = np.kron(op, np.eye(2 ** (n - k), dtype=complex))
    order = sites + missing
    perm = [order.index(s) for s in target]
    t = full.reshape((2,) * (2 * n))
    t = t.transpose(perm + [n + p for p in perm])
    return t.reshape(2 ** n, 2 ** n)


def term_supports(terms: Sequence[LocalTerm]) -> list[tuple[int, ...]]:
    return [t.sites for t in terms]


def build_ising(lat: Lattice2D) -> list[LocalTerm]:
    """``sum sx sx`` over bonds plus ``sum sy`` over sites, all coefficients +1."""
    xx = np.kron(SX, SX)
    terms = [LocalTerm((i, j), xx, 1.0) for i, j in lat.edges()]
    terms += [LocalTerm((i,), SY, 1.0) for i in range(lat.N)]
    return terms


def build_heisenberg(lat: Lattice2D) -> list[LocalTerm]:
    terms = []
    for i, j in lat.edges():
        for g in "xyz":
            terms.append(LocalTerm((i, j), np.kron(PAULI[g], PAULI[g]), 1.0))
    return terms


@dataclass(frozen=True)
class RydbergParams:
    """Rydberg array parameters.

    ``c6`` is in GHz um^6, frequencies in MHz, spacing ``a`` in um.
    ``delta_br`` replaces the detuning on the bottom row (y=0) and right
    column (x=Lx-1); None disables the boundary pinning.
    """

    omega: float = 4.0
    delta: float = 0.0
    c6: float = 863.0
    a: float = 5.155
    delta_br: float | None = -7.0
    neighbor_cutoff: tuple[tuple[int, int], ...] = field(default=RYDBERG_OFFSETS)

    def __post_init__(self):
        if self.omega < 0 or self.c6 <= 0:
            raise ValueError("omega must be nonnegative and c6 positive")
        if self.a <= 0:
            raise ValueError("lattice spacing must be positive")
        offs = tuple(tuple(int(v) for v in o) for o in self.neighbor_cutoff)
        seen = set()
        for o in offs:
            if o == (0, 0):
                raise ValueError("cutoff offset (0, 0) is not a pair")
            if o in seen or (-o[0], -o[1]) in seen:
                raise ValueError(f"offset {o} counted twice")
            seen.add(o)
        object.__setattr__(self, "neighbor_cutoff", offs)

    @property
    def c6_mhz(self) -> float:
        return self.c6 * GHZ_TO_MHZ

    def interaction(self, dist: float) -> float:
        return self.c6_mhz / dist ** 6

    @property
    def v_nn(self) -> float:
        return self.interaction(self.a)

    @classmethod
    def from_vnn(cls, v_nn: float, **kw) -> "RydbergParams":
        c6 = kw.get("c6", cls.c6)
        return cls(a=spacing_for_vnn(v_nn, c6), **kw)


def spacing_for_vnn(v_nn: float, c6: float = 863.0) -> float:
    """Lattice spacing (um) giving nearest-neighbour interaction ``v_nn`` (MHz)."""
    return (c6 * GHZ_TO_MHZ / v_nn) ** (1 / 6)


def blockade_radius(p: RydbergParams) -> float:
    """Distance at which ``V(r) = Omega``."""
    if p.omega <= 0:
        raise ValueError("blockade radius needs omega > 0")
    return (p.c6_mhz / p.omega) ** (1 / 6)


def pinned_sites(lat: Lattice2D) -> set[int]:
    """Bottom row and right column."""
    out = set()
    for i in range(lat.N):
        x, y = lat.coords(i)
        if y == 0 or x == lat.Lx - 1:
            out.add(i)
    return out


def build_rydberg(lat: Lattice2D, p: RydbergParams) -> list[LocalTerm]:
    if lat.periodic:
        raise ValueError("the Rydberg model is defined with open boundaries")
    pinned = pinned_sites(lat) if p.delta_br is not None else set()
    terms = []
    for i in range(lat.N):
        det = p.delta_br if i in pinned else p.delta
        terms.append(LocalTerm((i,), 0.5 * p.omega * SX - det * NUM, 1.0))
    nn = np.kron(NUM, NUM)
    for i in range(lat.N):
        for dx, dy in p.neighbor_cutoff:
            j = lat.shift(i, dx, dy)
            if j is None:
                continue
            v = p.interaction(p.a * math.hypot(dx, dy))
            terms.append(LocalTerm((i, j), nn, v))
    return terms


def build_model(name: str, lat: Lattice2D, rydberg: RydbergParams | None = None) -> list[LocalTerm]:
    if name == "ising":
        return build_ising(lat)
    if name == "heisenberg":
        return build_heisenberg(lat)
    if name == "rydberg":
        return build_rydberg(lat, rydberg or RydbergParams())
    raise ValueError(f"unknown model {name!r}")
