"""Sparse layer of two-site unitaries in front of a tree tensor network.

The augmented state is ``D(u)^dag |ttn>`` with ``D = prod_k u_k``.  Energies
are evaluated as ``<ttn| D H D^dag |ttn>``, so the tree is optimised against
the mapped Hamiltonian and each ``u_k`` against the tree's reduced density
matrices.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
from scipy.stats import unitary_group

from .lattice import LocalTerm, embed
from .tree import TreeTopology
from .ttn import (SweepConfig, TtnOptimizer, TtnState, expectation, randomize,
                  reduced_density_matrix)

log = logging.getLogger(__name__)

EYE4 = np.eye(4, dtype=complex)


# ---------------------------------------------------------------------------
# Placement


@dataclass
class PlacementPlan:
    """Site pairs of the disentanglers and the tree link each one supports.

    ``links[k]`` is the link whose bipartition pair ``k`` straddles (the
    child of the pair's lowest common ancestor that holds ``pairs[k][0]``);
    ``layers[k]`` is that link's layer, 1 for the root's children.
    """

    pairs: list[tuple[int, int]]
    links: list[int]
    layers: list[int]

    @property
    def n_disentanglers(self) -> int:
        return len(self.pairs)

    N_D = n_disentanglers

    @property
    def per_link(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for e in self.links:
            out[e] = out.get(e, 0) + 1
        return out

    @property
    def per_layer(self) -> tuple[int, ...]:
        if not self.layers:
            return ()
        counts = [0] * max(self.layers)
        for l in self.layers:
            counts[l - 1] += 1
        return tuple(counts)

    def validate(self, topology: TreeTopology, supports: Iterable[Sequence[int]] = ()) -> None:
        """Raise ValueError on site reuse, a term bridging two pairs, or a pair
        not straddling its link."""
        owner: dict[int, int] = {}
        for k, (i, j) in enumerate(self.pairs):
            if i == j:
                raise ValueError(f"pair {k} uses site {i} twice")
            for s in (i, j):
                if s in owner:
                    raise ValueError(f"site {s} in pairs {owner[s]} and {k}")
                owner[s] = k
            below = topology.sites_below(self.links[k])
            if (i in below) == (j in below):
                raise ValueError(f"pair {k} does not straddle link {self.links[k]}")
        for sup in supports:
            hit = {owner[s] for s in sup if s in owner}
            if len(hit) > 1:
                raise ValueError(f"term on {tuple(sup)} touches disentanglers {sorted(hit)}")

    def to_text(self) -> str:
        lines = ["# placement plan v1", f"# N_D {self.n_disentanglers}",
                 "# per-layer " + " ".join(str(c) for c in self.per_layer),
                 "# site_a site_b link layer"]
        lines += [f"{i} {j} {e} {l}" for (i, j), e, l in zip(self.pairs, self.links, self.layers)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, topology: TreeTopology | None = None) -> "PlacementPlan":
        """Parse ``to_text`` output.  Lines may carry only the two sites; with a
        topology the link and layer are then recomputed."""
        pairs, links, layers = [], [], []
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            f = [int(v) for v in line.split()]
            if len(f) not in (2, 4):
                raise ValueError(f"cannot parse placement line {raw!r}")
            i, j = f[0], f[1]
            if topology is not None:
                e, l = pair_link(topology, i, j)
            elif len(f) == 4:
                e, l = f[2], f[3]
            else:
                raise ValueError("site-only placement lines need a topology")
            pairs.append((i, j))
            links.append(e)
            layers.append(l)
        return cls(pairs, links, layers)


def pair_link(topology: TreeTopology, i: int, j: int) -> tuple[int, int]:
    """Link (and its layer) whose bipartition separates sites ``i`` and ``j``."""
    c = topology.lca(i, j)
    path = topology.path_to_root(i)
    e = path[path.index(c) - 1]
    return e, int(topology.depth[e])


def _conflict_sets(N: int, supports: Iterable[Sequence[int]]) -> list[set[int]]:
    nbr = [{s} for s in range(N)]
    for sup in supports:
        for s in sup:
            nbr[s].update(sup)
    return nbr


def plan_placement(topology: TreeTopology, term_supports: Iterable[Sequence[int]],
                   max_layer_depth: int | None = None,
                   candidates: Sequence[tuple[int, int]] | None = None) -> PlacementPlan:
    """Greedy placement, topmost links first.

    Candidates default to the lattice's nearest-neighbour bonds.  They are
    ranked by the layer of the link they cross, then row-major by their
    sites.  A pair is accepted unless one of its sites is already used or
    shares a term with a used site.  The scan stops after ``max_layer_depth``
    layers (default ``log2`` of the lattice width) or at the first layer that
    receives no pair.
    """
    lat = topology.lattice
    if max_layer_depth is None:
        max_layer_depth = max(1, int(round(math.log2(lat.Lx))))
    nbr = _conflict_sets(topology.N, term_supports)
    cands = lat.edges() if candidates is None else candidates

    def rowmajor(s):
        x, y = lat.coords(s)
        return (y, x)

    ranked = set()
    for i, j in cands:
        if i == j:
            continue
        a, b = sorted((i, j), key=rowmajor)
        e, l = pair_link(topology, a, b)
        ranked.add((l, rowmajor(a), rowmajor(b), a, b, e))
    ranked = sorted(ranked)

    blocked: set[int] = set()
    pairs, links, layers = [], [], []
    for layer in range(1, max_layer_depth + 1):
        placed = 0
        for l, _, _, a, b, e in ranked:
            if l != layer or a in blocked or b in blocked:
                continue
            pairs.append((a, b))
            links.append(e)
            layers.append(l)
            blocked |= nbr[a] | nbr[b]
            placed += 1
        if placed == 0:
            break
    return PlacementPlan(pairs, links, layers)


# ---------------------------------------------------------------------------
# Layer


@dataclass
class Disentangler:
    """Two-site unitary ``u`` on ``sites`` (kron order, ``sites[0]`` major)."""

    k: int
    sites: tuple[int, int]
    u: np.ndarray

    def __post_init__(self):
        self.sites = (int(self.sites[0]), int(self.sites[1]))
        self.u = np.asarray(self.u, dtype=complex)
        if self.u.shape != (4, 4):
            raise ValueError("a disentangler acts on two qubits")

    def unitarity_error(self) -> float:
        return float(np.linalg.norm(self.u @ self.u.conj().T - EYE4))

    @property
    def tensor(self):
        from .tensor import LabeledTensor

        a, b = self.sites
        return LabeledTensor((f"out{a}", f"out{b}", f"in{a}", f"in{b}"), self.u.reshape(2, 2, 2, 2))

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.u, EYE4))


@dataclass
class DisentanglerLayer:
    disentanglers: list[Disentangler] = field(default_factory=list)

    def __post_init__(self):
        self._owner = {}
        for d in self.disentanglers:
            for s in d.sites:
                if s in self._owner:
                    raise ValueError(f"site {s} carries two disentanglers")
                self._owner[s] = d.k
        self._by_k = {d.k: d for d in self.disentanglers}

    @classmethod
    def identity(cls, plan: PlacementPlan) -> "DisentanglerLayer":
        return cls([Disentangler(k, p, EYE4.copy()) for k, p in enumerate(plan.pairs)])

    @classmethod
    def random(cls, plan: PlacementPlan, seed: int = 0) -> "DisentanglerLayer":
        rng = np.random.default_rng(seed)
        return cls([Disentangler(k, p, unitary_group.rvs(4, random_state=rng))
                    for k, p in enumerate(plan.pairs)])

    def __len__(self):
        return len(self.disentanglers)

    def __iter__(self):
        return iter(self.disentanglers)

    def owner(self, site: int) -> int | None:
        return self._owner.get(site)

    def get(self, k: int) -> Disentangler:
        return self._by_k[k]

    def touching(self, sites: Sequence[int]) -> list[int]:
        """Ids of disentanglers acting on any of ``sites`` (first-touch order)."""
        out = []
        for s in sites:
            k = self._owner.get(s)
            if k is not None and k not in out:
                out.append(k)
        return out

    def replaced(self, k: int, u: np.ndarray) -> "DisentanglerLayer":
        ds = [Disentangler(d.k, d.sites, u if d.k == k else d.u) for d in self.disentanglers]
        return DisentanglerLayer(ds)

    def copy(self) -> "DisentanglerLayer":
        return DisentanglerLayer([Disentangler(d.k, d.sites, d.u.copy()) for d in self.disentanglers])

    def apply_dagger(self, vec: np.ndarray, N: int) -> np.ndarray:
        """``D^dag |vec>`` for a dense kron-ordered vector."""
        return self._apply(vec, N, dagger=True)

    def apply(self, vec: np.ndarray, N: int) -> np.ndarray:
        """``D |vec>``."""
        return self._apply(vec, N, dagger=False)

    def _apply(self, vec, N, dagger):
        v = np.asarray(vec, dtype=complex).reshape((2,) * N)
        for d in self.disentanglers:
            u = d.u.conj().T if dagger else d.u
            a, b = d.sites
            y = np.tensordot(u.reshape(2, 2, 2, 2), v, axes=([2, 3], [a, b]))
            v = np.moveaxis(y, [0, 1], [a, b])
        return v.reshape(-1)


def _conjugate(ops_u: Sequence[np.ndarray], op: np.ndarray, sites: Sequence[int],
               u_sites: Sequence[int]) -> tuple[tuple[int, ...], np.ndarray]:
    """``U (op x 1) U^dag`` on the support ``u_sites + remaining term sites``."""
    rest = [s for s in sites if s not in u_sites]
    support = tuple(u_sites) + tuple(rest)
    full = embed(op, sites, support)
    U = np.ones((1, 1), dtype=complex)
    for u in ops_u:
        U = np.kron(U, u)
    U = np.kron(U, np.eye(2 ** len(rest), dtype=complex))
    return support, U @ full @ U.conj().T


def map_hamiltonian(layer: DisentanglerLayer, terms: Sequence[LocalTerm]) -> list[LocalTerm]:
    """``D H D^dag`` as a term list.

    Terms away from the layer (or under an identity disentangler) are passed
    through unchanged.  Mapped terms that end up on the same support are
    summed into a single dense term.
    """
    out: list[LocalTerm] = []
    merged: dict[tuple[int, ...], np.ndarray] = {}
    for t in terms:
        ks = layer.touching(t.sites)
        if len(ks) > 1:
            raise ValueError(f"term on {t.sites} touches disentanglers {ks}; placement is not conflict-free")
        if not ks or layer.get(ks[0]).is_identity:
            out.append(t)
            continue
        d = layer.get(ks[0])
        support, op = _conjugate([d.u], t.matrix, t.sites, d.sites)
        if support in merged:
            merged[support] = merged[support] + op
        else:
            merged[support] = op
    out.extend(LocalTerm(s, op, 1.0) for s, op in merged.items())
    return out


def map_observable(layer: DisentanglerLayer, ops: Sequence[LocalTerm]) -> list[LocalTerm]:
    """``D O D^dag`` term by term (one output per input, order preserved).

    Two-site observables may touch two disentanglers; the mapped support is
    then the four sites of both pairs.
    """
    out = []
    for t in ops:
        ks = [k for k in layer.touching(t.sites) if not layer.get(k).is_identity]
        if not ks:
            out.append(t)
            continue
        us = [layer.get(k) for k in ks]
        u_sites = [s for d in us for s in d.sites]
        support, op = _conjugate([d.u for d in us], t.matrix, t.sites, u_sites)
        out.append(LocalTerm(support, op, 1.0))
    return out


def aux_energy(state: TtnState, layer: DisentanglerLayer, terms: Sequence[LocalTerm]) -> float:
    """``<ttn| D H D^dag |ttn>``."""
    return expectation(state, map_hamiltonian(layer, terms))


# ---------------------------------------------------------------------------
# Disentangler optimisation


def svd_update(gamma: np.ndarray) -> np.ndarray:
    """Unitary minimising ``Re tr(u gamma)``: ``-V U^dag`` for ``gamma = U s V^dag``."""
    U, _, Vh = np.linalg.svd(gamma)
    return -Vh.conj().T @ U.conj().T


@dataclass
class _Environment:
    """``E(u) = sum_S tr[(u x 1) A_S (u x 1)^dag rho_S]`` for one disentangler."""

    blocks: list[tuple[np.ndarray, np.ndarray, int]]  # (A_S, rho_S, n_extra)

    def energy(self, u: np.ndarray) -> float:
        e = 0.0
        for A, rho, extra in self.blocks:
            U = np.kron(u, np.eye(2 ** extra))
            e += np.trace(U @ A @ U.conj().T @ rho).real
        return float(e)

    def gamma(self, u: np.ndarray) -> np.ndarray:
        """``sum_S Tr_extra[A_S U^dag rho_S]`` so that ``E = Re tr(u gamma)``."""
        g = np.zeros((4, 4), dtype=complex)
        for A, rho, extra in self.blocks:
            U = np.kron(u, np.eye(2 ** extra))
            X = A @ U.conj().T @ rho
            r = 2 ** extra
            g += np.trace(X.reshape(4, r, 4, r), axis1=1, axis2=3)
        return g


def _environment(state: TtnState, d: Disentangler, terms: Sequence[LocalTerm]) -> _Environment:
    grouped: dict[tuple[int, ...], np.ndarray] = {}
    for t in terms:
        if not set(t.sites) & set(d.sites):
            continue
        rest = tuple(sorted(s for s in t.sites if s not in d.sites))
        support = d.sites + rest
        A = embed(t.matrix, t.sites, support)
        grouped[support] = grouped.get(support, 0) + A
    blocks = []
    for support, A in grouped.items():
        rho = reduced_density_matrix(state, support)
        blocks.append((A, rho, len(support) - 2))
    return _Environment(blocks)


def _geodesic(u: np.ndarray, w: np.ndarray, t: float) -> np.ndarray:
    step = scipy.linalg.logm(u.conj().T @ w)
    step = 0.5 * (step - step.conj().T)
    v = u @ scipy.linalg.expm(t * step)
    X, _, Yh = np.linalg.svd(v)
    return X @ Yh


def optimize_disentangler(env: _Environment, u: np.ndarray, max_iter: int = 50,
                          tol: float = 1e-10, max_backtrack: int = 30) -> tuple[np.ndarray, dict]:
    """Repeat the environment SVD update on one unitary.

    A step is only accepted if it lowers the exact (quadratic) energy; a
    rejected step is halved along the unitary geodesic.
    """
    e = env.energy(u)
    e0 = e
    prev = None
    its = 0
    for its in range(1, max_iter + 1):
        g = env.gamma(u)
        if np.linalg.norm(g) < 1e-14:
            break
        sv = np.linalg.svd(g, compute_uv=False).sum()
        cand = svd_update(g)
        ec = env.energy(cand)
        t = 1.0
        while ec > e and max_backtrack and t > 2.0 ** -max_backtrack:
            t *= 0.5
            cand = _geodesic(u, svd_update(g), t)
            ec = env.energy(cand)
        if ec <= e:
            u, e = cand, ec
        if prev is not None and abs(sv - prev) <= tol * max(abs(sv), 1e-300):
            break
        prev = sv
    return u, {"iterations": its, "energy_before": e0, "energy_after": e}


def optimize_disentanglers(layer: DisentanglerLayer, state: TtnState, terms: Sequence[LocalTerm],
                           max_iter: int = 50, tol: float = 1e-10) -> DisentanglerLayer:
    """One pass over all disentanglers with the tree held fixed.

    ``terms`` is the physical Hamiltonian.  Since no term touches two
    disentanglers, each ``u_k`` sees an independent quadratic objective.
    """
    out = []
    for d in layer:
        env = _environment(state, d, terms)
        if not env.blocks:
            out.append(Disentangler(d.k, d.sites, d.u.copy()))
            continue
        u, _ = optimize_disentangler(env, d.u, max_iter=max_iter, tol=tol)
        out.append(Disentangler(d.k, d.sites, u))
    return DisentanglerLayer(out)


# ---------------------------------------------------------------------------
# Full algorithm


@dataclass
class AttnConfig:
    """Outer loop settings.  ``sweep`` drives the warm-up and every cycle's
    TTN sweeps (with ``n_sweeps`` replaced by ``cycle_sweeps`` in cycles)."""

    sweep: SweepConfig = field(default_factory=SweepConfig)
    n_cycles: int = 4
    cycle_sweeps: int = 2
    cycle_expansion_offset: int = 1
    u_max_iter: int = 50
    u_tol: float = 1e-10
    conv_tol: float = 1e-10
    max_layer_depth: int | None = None
    seed: int = 0


@dataclass
class AttnResult:
    state: TtnState
    layer: DisentanglerLayer
    trace: list
    energy: float
    cycle_energies: list = field(default_factory=list)
    converged: bool = False
    plan: PlacementPlan | None = None

    def __iter__(self):
        return iter((self.state, self.layer, self.trace))


def attn_ground_state(terms: Sequence[LocalTerm], topology: TreeTopology,
                      cfg: AttnConfig | None = None, plan: PlacementPlan | None = None,
                      state: TtnState | None = None, layer: DisentanglerLayer | None = None) -> AttnResult:
    """aTTN ground state search.

    The warm-up is a plain TTN run with ``cfg.sweep`` (against the mapped
    Hamiltonian if a starting ``layer`` is given, else with ``D = 1``); then
    cycles of (optimise disentanglers, map ``H``, sweep the tree) follow.
    The lowest energy iterate is returned.
    """
    cfg = cfg or AttnConfig()
    terms = list(terms)
    if layer is not None:
        found = [pair_link(topology, *d.sites) for d in layer]
        plan = PlacementPlan([d.sites for d in layer], [e for e, _ in found], [l for _, l in found])
    if plan is None:
        plan = plan_placement(topology, [t.sites for t in terms], cfg.max_layer_depth)
    plan.validate(topology, [t.sites for t in terms])
    if state is None:
        state = randomize(topology, cfg.sweep.max_m, seed=cfg.seed)
    if layer is None:
        layer = DisentanglerLayer.identity(plan)
    start_terms = map_hamiltonian(layer, terms)

    opt = TtnOptimizer(state, start_terms, cfg.sweep)
    res = opt.run()
    trace = list(res.energies)
    state = opt.state
    energy = expectation(state, start_terms)
    best = (energy, state, layer)
    cycle_energies = [energy]
    converged = False
    if plan.n_disentanglers == 0:
        return AttnResult(state, layer, trace, energy, cycle_energies, res.converged, plan)

    prev = energy
    for cycle in range(cfg.n_cycles):
        layer = optimize_disentanglers(layer, state, terms, cfg.u_max_iter, cfg.u_tol)
        mapped = map_hamiltonian(layer, terms)
        e_u = expectation(state, mapped)
        trace.append(e_u)
        ccfg = replace(cfg.sweep, n_sweeps=cfg.cycle_sweeps)
        opt = TtnOptimizer(state, mapped, ccfg)
        for s in range(cfg.cycle_sweeps):
            opt.sweep(s + cfg.cycle_expansion_offset)
        opt.move_to(topology.root)
        state = opt.state
        energy = expectation(state, mapped)
        trace.append(energy)
        cycle_energies.append(energy)
        log.info("cycle %d: after u %.12f, after sweeps %.12f", cycle, e_u, energy)
        if energy < best[0]:
            best = (energy, state, layer)
        if abs(prev - energy) <= cfg.conv_tol * max(1.0, abs(energy)):
            converged = True
            break
        prev = energy
    energy, state, layer = best
    return AttnResult(state, layer, trace, energy, cycle_energies, converged, plan)
