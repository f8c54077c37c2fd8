"""Binary tree over a 2D lattice with alternating x/y coarse-graining.

Entities are numbered ``0..N-1`` for physical sites and ``N..2N-2`` for tree
nodes; the root is ``2N-2``.  A link is named by its lower endpoint, so link
``e`` joins entity ``e`` to ``parent[e]``.  Node tensors carry legs
``(child0, child1, parent)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .lattice import Lattice2D


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class _Block:
    x0: int
    y0: int
    wx: int
    wy: int


class TreeTopology:
    """Perfect binary tree whose bottom layer merges along x.

    Merges alternate x, y, x, ... from the bottom; on rectangular lattices a
    direction is skipped once it spans the full extent.  For square lattices
    this gives x-merges on even layers and y-merges on odd layers, counting
    the top layer as ``l = 1``.
    """

    def __init__(self, lattice: Lattice2D):
        Lx, Ly = lattice.Lx, lattice.height
        if not (_is_pow2(Lx) and _is_pow2(Ly)) or lattice.N < 2:
            raise ValueError(f"tree needs power-of-two extents, got {Lx}x{Ly}")
        self.lattice = lattice
        N = lattice.N
        self.N = N
        self.parent = np.full(2 * N - 1, -1, dtype=int)
        self.children: dict[int, tuple[int, int]] = {}
        self.merge_dir: dict[int, str] = {}
        blocks = {lattice.index(x, y): _Block(x, y, 1, 1) for y in range(Ly) for x in range(Lx)}
        self.block: dict[int, _Block] = dict(blocks)
        current = [lattice.index(x, y) for y in range(Ly) for x in range(Lx)]
        next_id = N
        wx = wy = 1
        want = "x"
        while len(current) > 1:
            if want == "x" and wx == Lx:
                want = "y"
            elif want == "y" and wy == Ly:
                want = "x"
            by_corner = {(self.block[e].x0, self.block[e].y0): e for e in current}
            merged = []
            for e in current:
                b = self.block[e]
                if want == "x" and (b.x0 // wx) % 2 == 0:
                    partner = by_corner[(b.x0 + wx, b.y0)]
                    nb = _Block(b.x0, b.y0, 2 * wx, wy)
                elif want == "y" and (b.y0 // wy) % 2 == 0:
                    partner = by_corner[(b.x0, b.y0 + wy)]
                    nb = _Block(b.x0, b.y0, wx, 2 * wy)
                else:
                    continue
                node = next_id
                next_id += 1
                self.children[node] = (e, partner)
                self.parent[e] = node
                self.parent[partner] = node
                self.block[node] = nb
                self.merge_dir[node] = want
                merged.append(node)
            if want == "x":
                wx *= 2
            else:
                wy *= 2
            want = "y" if want == "x" else "x"
            current = merged
        self.root = current[0]
        assert self.root == 2 * N - 2
        self.depth = np.zeros(2 * N - 1, dtype=int)
        for n in reversed(self.nodes):  # root first
            for c in self.children[n]:
                self.depth[c] = self.depth[n] + 1

    @property
    def nodes(self) -> list[int]:
        """Internal nodes, bottom-up (root last)."""
        return list(range(self.N, 2 * self.N - 1))

    @property
    def links(self) -> list[int]:
        """All links (every entity except the root), sites first."""
        return list(range(2 * self.N - 2))

    @property
    def n_layers(self) -> int:
        return int(self.depth[: self.N].max())

    def is_site(self, e: int) -> bool:
        return e < self.N

    def link_layer(self, e: int) -> int:
        """Layer index of link ``e``; the root's child links are layer 1."""
        return int(self.depth[e])

    def layer_links(self, l: int) -> list[int]:
        return [e for e in self.links if self.depth[e] == l]

    @cached_property
    def _leaves(self) -> dict[int, frozenset[int]]:
        out: dict[int, frozenset[int]] = {s: frozenset([s]) for s in range(self.N)}
        for n in self.nodes:
            a, b = self.children[n]
            out[n] = out[a] | out[b]
        return out

    def sites_below(self, e: int) -> frozenset[int]:
        """Bipartition side ``A`` of link ``e``."""
        return self._leaves[e]

    @cached_property
    def membership(self) -> np.ndarray:
        """Boolean ``(2N-1, N)`` array: site s lies below entity e."""
        m = np.zeros((2 * self.N - 1, self.N), dtype=bool)
        for e, leaves in self._leaves.items():
            m[e, list(leaves)] = True
        return m

    def path_to_root(self, e: int) -> list[int]:
        out = [e]
        while self.parent[out[-1]] >= 0:
            out.append(int(self.parent[out[-1]]))
        return out

    def lca(self, a: int, b: int) -> int:
        pa = self.path_to_root(a)
        sa = set(pa)
        for e in self.path_to_root(b):
            if e in sa:
                return e
        raise RuntimeError("disconnected tree")

    def path(self, a: int, b: int) -> list[int]:
        """Node sequence from ``a`` to ``b`` inclusive."""
        c = self.lca(a, b)
        pa = self.path_to_root(a)
        pb = self.path_to_root(b)
        up = pa[: pa.index(c) + 1]
        down = pb[: pb.index(c)]
        return up + down[::-1]

    def boundary_length(self, e: int, edges=None) -> int:
        """Number of lattice bonds crossing the bipartition of link ``e``."""
        inside = self.sites_below(e)
        edges = self.lattice.edges() if edges is None else edges
        return sum((i in inside) != (j in inside) for i, j in edges)

    def post_order(self) -> list[int]:
        """Internal nodes in depth-first post-order (children before parents)."""
        out = []

        def visit(n):
            for c in self.children[n]:
                if not self.is_site(c):
                    visit(c)
            out.append(n)

        visit(self.root)
        return out


def build_tree(lattice: Lattice2D | int) -> TreeTopology:
    if isinstance(lattice, (int, np.integer)):
        lattice = Lattice2D(int(lattice))
    return TreeTopology(lattice)
