"""Binary tree tensor network states and their variational optimisation.

Node tensors are arrays with legs ``(child0, child1, parent)``; the root's
parent leg has extent 1.  In canonical form with center ``c`` every other
node is an isometry toward ``c``.

Operators are handled as sums of products (see ``operators``).  For each
link the engine caches a block: the summed operator of all products living
entirely on one side of the link, plus the renormalised partial factors of
products that straddle it.  Blocks looking up the tree ("up") and down the
tree ("down") are refreshed as the center moves, which keeps a local update
at ``O(m^4)`` per product.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .lattice import LocalTerm
from .operators import ProductTerms
from .tensor import lanczos_smallest, qr_isometry, svd_truncate
from .tree import TreeTopology

log = logging.getLogger(__name__)

_CHUNK = 256


class TtnState:
    """Tree topology plus one tensor per internal node."""

    def __init__(self, topology: TreeTopology, tensors: dict[int, np.ndarray], center: int | None = None):
        self.topology = topology
        self.tensors = dict(tensors)
        self.center = center

    def copy(self) -> "TtnState":
        return TtnState(self.topology, self.tensors, self.center)

    @property
    def N(self) -> int:
        return self.topology.N

    def bond_dim(self, e: int) -> int:
        """Extent of link ``e`` (2 for physical links)."""
        topo = self.topology
        if topo.is_site(e):
            return 2
        return self.tensors[e].shape[2]

    @property
    def bond_dims(self) -> dict[int, int]:
        return {e: self.bond_dim(e) for e in self.topology.links}

    @property
    def max_bond(self) -> int:
        return max(self.bond_dims.values())

    def norm(self) -> float:
        s = self.move_center(self.topology.root) if self.center is not None else canonicalize(self)
        return float(np.linalg.norm(s.tensors[s.topology.root]))

    def move_center(self, node: int) -> "TtnState":
        return move_center(self, node)

    def isometry_errors(self) -> dict[int, float]:
        """``||Q^dag Q - 1||`` toward the center for every non-center node."""
        out = {}
        topo = self.topology
        for n, T in self.tensors.items():
            if n == self.center:
                continue
            ax = _leg_toward(topo, n, self.center)
            M = _matricize(T, ax)
            out[n] = float(np.linalg.norm(M.conj().T @ M - np.eye(M.shape[1])))
        return out


def _leg_toward(topo: TreeTopology, n: int, target: int) -> int:
    """Leg index (0, 1, 2) of node ``n`` pointing toward ``target``."""
    if target == n:
        raise ValueError("node is the target")
    c0, c1 = topo.children[n]
    if topo.membership[c0].any() and _is_below(topo, target, c0):
        return 0
    if _is_below(topo, target, c1):
        return 1
    return 2


def _is_below(topo: TreeTopology, e: int, anc: int) -> bool:
    while e >= 0:
        if e == anc:
            return True
        e = int(topo.parent[e])
    return False


def _matricize(T: np.ndarray, ax: int) -> np.ndarray:
    """Rows: the two legs other than ``ax`` (in order); columns: ``ax``."""
    perm = [i for i in range(3) if i != ax] + [ax]
    return np.ascontiguousarray(T.transpose(perm)).reshape(-1, T.shape[ax])


def _unmatricize(M: np.ndarray, shape_others: tuple[int, int], ax: int) -> np.ndarray:
    k = M.shape[1]
    T = M.reshape(shape_others[0], shape_others[1], k)
    inv = {0: (2, 0, 1), 1: (0, 2, 1), 2: (0, 1, 2)}[ax]
    return np.ascontiguousarray(T.transpose(inv))


def _absorb(T: np.ndarray, ax: int, R: np.ndarray) -> np.ndarray:
    """Multiply ``R`` (new x old) into leg ``ax`` of ``T``."""
    return np.ascontiguousarray(np.moveaxis(np.tensordot(R, T, axes=(1, ax)), 0, ax))


def _cap(topo: TreeTopology, e: int, m: int) -> int:
    k = len(topo.sites_below(e))
    rest = topo.N - k
    return int(min(m, 2 ** min(k, 62), 2 ** min(rest, 62)))


def randomize(topology: TreeTopology, m: int, seed: int = 0) -> TtnState:
    """Random complex TTN with bond dimensions ``min(m, 2^|A|, 2^|B|)``,
    canonicalised with the center at the root."""
    if m < 1:
        raise ValueError("bond dimension must be >= 1")
    rng = np.random.default_rng(seed)
    tensors = {}
    for n in topology.nodes:
        a, b = topology.children[n]
        da = 2 if topology.is_site(a) else _cap(topology, a, m)
        db = 2 if topology.is_site(b) else _cap(topology, b, m)
        dp = 1 if n == topology.root else _cap(topology, n, m)
        shape = (da, db, dp)
        tensors[n] = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return canonicalize(TtnState(topology, tensors, None))


def product_state(topology: TreeTopology, local: Sequence[np.ndarray]) -> TtnState:
    """Bond-dimension-1 TTN of the given single-site vectors."""
    tensors = {}
    vec = {s: np.asarray(local[s], dtype=complex).reshape(2, 1) for s in range(topology.N)}
    for n in topology.nodes:
        a, b = topology.children[n]
        da = 2 if topology.is_site(a) else 1
        db = 2 if topology.is_site(b) else 1
        va = vec[a] if topology.is_site(a) else np.ones((1, 1))
        vb = vec[b] if topology.is_site(b) else np.ones((1, 1))
        tensors[n] = np.einsum("ai,bj->abij", va, vb).reshape(da, db, 1)
    return canonicalize(TtnState(topology, tensors, None))


def canonicalize(state: TtnState) -> TtnState:
    """QR every node toward the root and normalise; center ends at the root."""
    topo = state.topology
    T = dict(state.tensors)
    for n in topo.nodes:
        if n == topo.root:
            continue
        Q, R = qr_isometry(_matricize(T[n], 2))
        T[n] = _unmatricize(Q, T[n].shape[:2], 2)
        p = int(topo.parent[n])
        ax = topo.children[p].index(n)
        T[p] = _absorb(T[p], ax, R)
    nrm = np.linalg.norm(T[topo.root])
    if nrm == 0:
        raise ValueError("state has zero norm")
    T[topo.root] = T[topo.root] / nrm
    return TtnState(topo, T, topo.root)


def move_center(state: TtnState, node: int) -> TtnState:
    """Relocate the gauge center by QR steps along the tree path."""
    if state.center is None:
        state = canonicalize(state)
    topo = state.topology
    if topo.is_site(node):
        raise ValueError("center must be an internal node")
    if node == state.center:
        return state.copy()
    T = dict(state.tensors)
    path = topo.path(state.center, node)
    for c, nxt in zip(path[:-1], path[1:]):
        ax = _leg_toward(topo, c, nxt)
        Q, R = qr_isometry(_matricize(T[c], ax))
        others = tuple(T[c].shape[i] for i in range(3) if i != ax)
        T[c] = _unmatricize(Q, others, ax)
        T[nxt] = _absorb(T[nxt], _leg_toward(topo, nxt, c), R)
    return TtnState(topo, T, node)


def from_dense(topology: TreeTopology, vec: np.ndarray, max_m: int | None = None) -> TtnState:
    """Exact (or truncated) TTN of a dense vector in kron site order."""
    N = topology.N
    psi = np.asarray(vec, dtype=complex).reshape((2,) * N)
    legs = list(range(N))  # entity carried by each axis of psi
    tensors = {}
    for n in topology.nodes:
        a, b = topology.children[n]
        ia, ib = legs.index(a), legs.index(b)
        rest = [i for i in range(len(legs)) if i not in (ia, ib)]
        t = psi.transpose([ia, ib] + rest)
        da, db = t.shape[0], t.shape[1]
        if n == topology.root:
            tensors[n] = t.reshape(da, db, 1)
            break
        mat = t.reshape(da * db, -1)
        U, s, Vh, _ = svd_truncate(mat, max_m, 1e-14)
        tensors[n] = U.reshape(da, db, -1)
        psi = (s[:, None] * Vh).reshape((len(s),) + t.shape[2:])
        legs = [n] + [legs[i] for i in rest]
    return canonicalize(TtnState(topology, tensors, None))


def to_dense(state: TtnState) -> np.ndarray:
    """Full amplitude vector in kron site order (site 0 most significant)."""
    topo = state.topology
    sub: dict[int, tuple[list[int], np.ndarray]] = {s: ([s], np.eye(2, dtype=complex)) for s in range(topo.N)}
    for n in topo.nodes:
        a, b = topo.children[n]
        sa, A = sub.pop(a)
        sb, B = sub.pop(b)
        T = state.tensors[n]
        X = np.tensordot(A, T, axes=(A.ndim - 1, 0))
        X = np.tensordot(B, X, axes=(B.ndim - 1, len(sa)))
        # axes: sites_b, sites_a, parent
        nb = len(sb)
        perm = list(range(nb, nb + len(sa))) + list(range(nb)) + [X.ndim - 1]
        sub[n] = (sa + sb, X.transpose(perm))
    sites, X = sub[topo.root]
    X = X.reshape(X.shape[:-1])
    order = np.argsort(sites)
    return X.transpose(order).reshape(-1)


# ---------------------------------------------------------------------------
# Operator blocks


class _Block:
    __slots__ = ("H", "idx", "ops", "cnt")

    def __init__(self, H, idx, ops, cnt):
        self.H = H
        self.idx = idx
        self.ops = ops
        self.cnt = cnt


def _empty_block(d: int = 1) -> _Block:
    return _Block(np.zeros((d, d), dtype=complex), np.zeros(0, dtype=np.int64),
                  np.zeros((0, d, d), dtype=complex), np.zeros(0, dtype=np.int64))


def _leaf_block(pt: ProductTerms, s: int, separate: bool) -> _Block:
    ids, ops = pt.by_site[s]
    if separate:
        return _Block(np.zeros((2, 2), dtype=complex), ids, ops, np.ones(len(ids), dtype=np.int64))
    single = pt.nsite[ids] == 1
    H = ops[single].sum(axis=0) if single.any() else np.zeros((2, 2), dtype=complex)
    keep = ~single
    return _Block(H, ids[keep], ops[keep], np.ones(int(keep.sum()), dtype=np.int64))


def _apply_left(ops: np.ndarray, T: np.ndarray) -> np.ndarray:
    """``Y[k,a,b,s] = sum_c ops[k,a,c] T[c,b,s]``."""
    a, b, s = T.shape
    return (ops @ T.reshape(a, b * s)).reshape(len(ops), ops.shape[1], b, s)


def _apply_mid(ops: np.ndarray, T: np.ndarray) -> np.ndarray:
    """``Y[k,a,b,s] = sum_d ops[k,b,d] T[a,d,s]`` (T may carry a batch axis)."""
    if T.ndim == 3:
        T = T[None]
    K = max(len(ops), len(T))
    _, a, b, s = T.shape
    X = np.ascontiguousarray(T.transpose(0, 2, 1, 3)).reshape(len(T), b, a * s)
    Y = (ops @ X).reshape(K, ops.shape[1], a, s)
    return Y.transpose(0, 2, 1, 3)


def _merge(A: _Block, B: _Block, T: np.ndarray, nsite: np.ndarray, separate: bool) -> _Block:
    """Renormalise blocks on legs 0, 1 of ``T`` into its leg 2."""
    a, b, t = T.shape
    Tc = T.conj().reshape(a * b, t).T  # (t, ab)
    Y = np.tensordot(A.H, T, axes=(1, 0)) + _apply_mid(B.H[None], T)[0]

    ia, ib = A.idx, B.idx
    both = np.intersect1d(ia, ib, assume_unique=True)
    only_a = np.setdiff1d(ia, both, assume_unique=True)
    only_b = np.setdiff1d(ib, both, assume_unique=True)
    pa_only = np.searchsorted(ia, only_a)
    pb_only = np.searchsorted(ib, only_b)
    pa_both = np.searchsorted(ia, both)
    pb_both = np.searchsorted(ib, both)

    groups = []  # (ids, cnt, kind, positions)
    if len(only_a):
        groups.append((only_a, A.cnt[pa_only], "a", (pa_only,)))
    if len(only_b):
        groups.append((only_b, B.cnt[pb_only], "b", (pb_only,)))
    if len(both):
        groups.append((both, A.cnt[pa_both] + B.cnt[pb_both], "ab", (pa_both, pb_both)))

    new_ids, new_cnt, new_ops = [], [], []
    for ids, cnt, kind, pos in groups:
        done = (cnt == nsite[ids]) if not separate else np.zeros(len(ids), dtype=bool)
        for sel, finished in ((done, True), (~done, False)):
            if not sel.any():
                continue
            sub = np.nonzero(sel)[0]
            for start in range(0, len(sub), _CHUNK):
                chunk = sub[start:start + _CHUNK]
                if kind == "a":
                    Yk = _apply_left(A.ops[pos[0][chunk]], T)
                elif kind == "b":
                    Yk = _apply_mid(B.ops[pos[0][chunk]], T)
                else:
                    Yk = _apply_mid(B.ops[pos[1][chunk]], T)
                    Yk = _apply_left_batched(A.ops[pos[0][chunk]], Yk)
                if finished:
                    Y = Y + Yk.sum(axis=0)
                else:
                    new_ops.append(Tc @ Yk.reshape(len(chunk), a * b, t))
                    new_ids.append(ids[chunk])
                    new_cnt.append(cnt[chunk])
    H = Tc @ Y.reshape(a * b, t)
    if new_ids:
        idx = np.concatenate(new_ids)
        order = np.argsort(idx, kind="stable")
        return _Block(H, idx[order], np.concatenate(new_ops)[order], np.concatenate(new_cnt)[order])
    return _Block(H, np.zeros(0, dtype=np.int64), np.zeros((0, t, t), dtype=complex),
                  np.zeros(0, dtype=np.int64))


def _apply_left_batched(ops: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """``Z[k,a,b,s] = sum_c ops[k,a,c] Y[k,c,b,s]``."""
    K, c, b, s = Y.shape
    return (ops @ Y.reshape(K, c, b * s)).reshape(K, ops.shape[1], b, s)


def _apply_single(psi: np.ndarray, ops: np.ndarray, axis: int) -> np.ndarray:
    """``Y[k] = ops[k]`` applied on ``axis`` of the single 3-leg tensor ``psi``."""
    a, b, u = psi.shape
    K, d = len(ops), ops.shape[1]
    if axis == 0:
        return (ops @ psi.reshape(a, b * u)).reshape(K, d, b, u)
    if axis == 2:
        return (psi.reshape(a * b, u) @ ops.transpose(0, 2, 1)).reshape(K, a, b, d)
    Y = ops @ psi.transpose(1, 0, 2).reshape(b, a * u)
    return Y.reshape(K, d, a, u).transpose(0, 2, 1, 3)


def _compress_pair(F1: np.ndarray, F2: np.ndarray, cut: float = 1e-14):
    """Shortest stacks ``G1, G2`` with ``sum_k G1[k] x G2[k] = sum_k F1[k] x F2[k]``."""
    K = len(F1)
    if K <= 1:
        return F1, F2
    d1, d2 = F1.shape[1], F2.shape[1]
    Q1, R1 = np.linalg.qr(F1.reshape(K, -1).T)
    Q2, R2 = np.linalg.qr(F2.reshape(K, -1).T)
    U, s, Vh = np.linalg.svd(R1 @ R2.T)
    if s[0] == 0:
        return F1[:0], F2[:0]
    r = int(np.count_nonzero(s > cut * s[0]))
    if r >= K:
        return F1, F2
    G1 = (Q1 @ (U[:, :r] * s[:r])).T.reshape(r, d1, d1)
    G2 = (Q2 @ Vh[:r].T).T.reshape(r, d2, d2)
    return np.ascontiguousarray(G1), np.ascontiguousarray(G2)


def _apply_on_axis(X: np.ndarray, ops: np.ndarray, axis: int) -> np.ndarray:
    """Batched ``X[k] -> ops[k]`` acting on ``axis`` of the 3-leg tensor ``X[k]``."""
    Xm = np.moveaxis(X, axis + 1, -1)
    shp = Xm.shape
    K = max(shp[0], len(ops))
    Z = Xm.reshape(shp[0], -1, shp[-1]) @ ops.transpose(0, 2, 1)
    Z = Z.reshape((K,) + shp[1:-1] + (ops.shape[1],))
    return np.moveaxis(Z, -1, axis + 1)


# ---------------------------------------------------------------------------
# Expectation values


def _as_products(terms, N) -> ProductTerms:
    if isinstance(terms, ProductTerms):
        return terms
    return ProductTerms.from_terms(terms, N)


def _up_blocks(state: TtnState, pt: ProductTerms, separate: bool) -> dict[int, _Block]:
    topo = state.topology
    up = {s: _leaf_block(pt, s, separate) for s in range(topo.N)}
    for n in topo.nodes:
        if n == topo.root:
            break
        a, b = topo.children[n]
        up[n] = _merge(up.pop(a), up.pop(b), state.tensors[n], pt.nsite, separate)
    return up


def expectation(state: TtnState, terms) -> float:
    """``sum_p <psi|H_p|psi>`` by exact tree contraction (state need not be normalised)."""
    s = state.move_center(state.topology.root) if state.center is not None else canonicalize(state)
    pt = _as_products(terms, s.N)
    topo = s.topology
    up = _up_blocks(s, pt, separate=False)
    a, b = topo.children[topo.root]
    psi = s.tensors[topo.root]
    eng = _Heff(up[a], up[b], _empty_block(psi.shape[2]), pt.nsite)
    return float(np.vdot(psi, eng(psi)).real / np.vdot(psi, psi).real)


def term_expectations(state: TtnState, terms: Sequence[LocalTerm]) -> np.ndarray:
    """Per-term expectation values ``<psi|c_p O_p|psi>`` (complex array)."""
    s = state.move_center(state.topology.root) if state.center is not None else canonicalize(state)
    pt = _as_products(terms, s.N)
    topo = s.topology
    up = _up_blocks(s, pt, separate=True)
    a, b = topo.children[topo.root]
    A, B = up[a], up[b]
    psi = s.tensors[topo.root]
    norm = np.vdot(psi, psi).real
    vals = np.zeros(pt.n, dtype=complex)
    both = np.intersect1d(A.idx, B.idx, assume_unique=True)
    only_a = np.setdiff1d(A.idx, both, assume_unique=True)
    only_b = np.setdiff1d(B.idx, both, assume_unique=True)
    for ids, fa, fb in ((only_a, A, None), (only_b, None, B), (both, A, B)):
        for start in range(0, len(ids), _CHUNK):
            chunk = ids[start:start + _CHUNK]
            X = psi[None]
            if fa is not None:
                X = _apply_on_axis(X, fa.ops[np.searchsorted(fa.idx, chunk)], 0)
            if fb is not None:
                X = _apply_on_axis(X, fb.ops[np.searchsorted(fb.idx, chunk)], 1)
            vals[chunk] = np.einsum("abu,kabu->k", psi.conj(), X) / norm
    out = np.zeros(len(terms), dtype=complex)
    np.add.at(out, pt.owner, vals)
    return out


def reduced_density_matrix(state: TtnState, sites: Sequence[int]) -> np.ndarray:
    """Reduced density matrix on ``sites`` (kron order as given)."""
    sites = list(sites)
    k = len(sites)
    s = state.move_center(state.topology.root) if state.center is not None else canonicalize(state)
    topo = s.topology
    units = np.zeros((4, 2, 2), dtype=complex)
    for i in range(2):
        for j in range(2):
            units[2 * i + j, i, j] = 1.0
    # objects: entity -> (sites carried, stack of renormalised matrix units)
    obj: dict[int, tuple[list[int], np.ndarray]] = {q: ([q], units) for q in sites}
    want = set(sites)
    for n in topo.nodes:
        a, b = topo.children[n]
        oa, ob = obj.pop(a, None), obj.pop(b, None)
        if oa is None and ob is None:
            continue
        T = s.tensors[n]
        if n == topo.root:
            X = T[None]
            carried = []
            if oa is not None:
                X = _apply_on_axis(X, oa[1], 0)
                carried = oa[0]
            if ob is not None:
                K = len(X)
                Xb = _apply_on_axis(np.repeat(X, len(ob[1]), axis=0), np.tile(ob[1], (K, 1, 1)), 1)
                X = Xb
                carried = carried + ob[0]
            vals = np.einsum("abu,kabu->k", T.conj(), X)
            break
        t = T.shape[2]
        Tc = T.conj().reshape(-1, t).T
        if oa is not None and ob is not None:
            Ya = _apply_left(oa[1], T)
            Ka, Kb = len(oa[1]), len(ob[1])
            Y = _apply_mid(np.tile(ob[1], (Ka, 1, 1)), np.repeat(Ya, Kb, axis=0))
            carried = oa[0] + ob[0]
        elif oa is not None:
            Y = _apply_left(oa[1], T)
            carried = oa[0]
        else:
            Y = _apply_mid(ob[1], T)
            carried = ob[0]
        ops = Tc @ Y.reshape(len(Y), -1, t)
        obj[n] = (carried, ops)
    del want
    # vals index: matrix unit (i_q, j_q) per carried site, first site most significant
    rho_t = vals.reshape((2, 2) * k)  # axes: i_0, j_0, i_1, j_1, ...
    # <|i><j|> = rho[j, i]
    perm_i = [2 * carried.index(q) for q in sites]
    perm_j = [2 * carried.index(q) + 1 for q in sites]
    rho = rho_t.transpose(perm_j + perm_i).reshape(2 ** k, 2 ** k)
    return rho / np.trace(rho).real


def entanglement_spectrum(state: TtnState, link: int) -> np.ndarray:
    topo = state.topology
    if link == topo.root or link < 0 or link >= 2 * topo.N - 1:
        raise ValueError(f"no link {link}")
    p = int(topo.parent[link])
    s = state.move_center(p)
    T = s.tensors[p]
    ax = topo.children[p].index(link)
    sv = np.linalg.svd(_matricize(T, ax), compute_uv=False)
    sv = sv / np.linalg.norm(sv)
    return sv


def entanglement_entropy(state: TtnState, link: int) -> float:
    """Von Neumann entropy of the bipartition cut by ``link``."""
    p = entanglement_spectrum(state, link) ** 2
    p = p[p > 1e-300]
    return float(-np.sum(p * np.log(p)))


# ---------------------------------------------------------------------------
# Effective Hamiltonian and sweeps


class _Heff:
    """Effective Hamiltonian on a center tensor with blocks on legs 0, 1, 2."""

    def __init__(self, A: _Block, B: _Block, C: _Block, nsite: np.ndarray):
        self.blocks = (A, B, C)
        ids = [blk.idx for blk in self.blocks]
        allids = np.unique(np.concatenate(ids)) if any(len(i) for i in ids) else np.zeros(0, np.int64)
        member = np.zeros((3, len(allids)), dtype=bool)
        pos = np.zeros((3, len(allids)), dtype=np.int64)
        for ax, blk in enumerate(self.blocks):
            p = np.searchsorted(blk.idx, allids)
            ok = p < len(blk.idx)
            ok[ok] = blk.idx[p[ok]] == allids[ok]
            member[ax] = ok
            pos[ax] = np.where(ok, p, 0)
        self.groups = []
        for pattern in ((0, 1), (0, 2), (1, 2), (0, 1, 2)):
            want = np.zeros(3, dtype=bool)
            want[list(pattern)] = True
            sel = np.all(member == want[:, None], axis=0)
            if sel.any():
                factors = [(ax, self.blocks[ax].ops[pos[ax, sel]]) for ax in pattern]
                if len(pattern) == 2:
                    f1, f2 = _compress_pair(factors[0][1], factors[1][1])
                    factors = [(pattern[0], f1), (pattern[1], f2)]
                self.groups.append((allids[sel], factors))
        self.ids = allids
        self.member = member
        self.pos = pos

    def __call__(self, psi: np.ndarray) -> np.ndarray:
        A, B, C = self.blocks
        out = np.tensordot(A.H, psi, axes=(1, 0))
        out += np.moveaxis(np.tensordot(B.H, psi, axes=(1, 1)), 0, 1)
        out += np.tensordot(psi, C.H, axes=(2, 1))
        for _, factors in self.groups:
            K = len(factors[0][1])
            for start in range(0, K, _CHUNK):
                sl = slice(start, start + _CHUNK)
                X = _apply_single(psi, factors[0][1][sl], factors[0][0])
                for ax, ops in factors[1:-1]:
                    X = _apply_on_axis(X, ops[sl], ax)
                ax, ops = factors[-1]
                # last factor and the sum over products in one contraction
                Z = np.tensordot(ops[sl], X, axes=([0, 2], [0, ax + 1]))
                out += np.moveaxis(Z, 0, ax)
        return out

    def side_vectors(self, psi: np.ndarray, ax: int, r: int) -> np.ndarray:
        """Columns spanning ``H_side psi`` for the subspace expansion across leg ``ax``.

        Returns a ``(rows, r')`` matrix in the row space of ``_matricize(psi, ax)``.
        """
        others = [i for i in range(3) if i != ax]
        blocks = self.blocks
        local = np.zeros_like(psi)
        for i in others:
            local += _apply_on_axis(psi[None], blocks[i].H[None], i)[0]
        cols = [_matricize(local, ax)]
        # products on this side only are folded into `local`, crossing ones kept apart
        on_side = self.member[others[0]] | self.member[others[1]]
        crossing = on_side & self.member[ax]
        inner = on_side & ~self.member[ax]
        for sel, fold in ((inner, True), (crossing, False)):
            idx = np.nonzero(sel)[0]
            for start in range(0, len(idx), _CHUNK):
                chunk = idx[start:start + _CHUNK]
                X = psi[None]
                for i in others:
                    has = self.member[i, chunk]
                    if not has.any():
                        continue
                    ops = np.broadcast_to(np.eye(psi.shape[i], dtype=complex),
                                          (len(chunk), psi.shape[i], psi.shape[i])).copy()
                    ops[has] = blocks[i].ops[self.pos[i, chunk[has]]]
                    X = _apply_on_axis(X, ops, i)
                if fold:
                    cols[0] = cols[0] + _matricize(X.sum(axis=0), ax)
                else:
                    cols.extend(_matricize(x, ax) for x in X)
        P = np.concatenate(cols, axis=1)
        nrm = np.linalg.norm(P)
        if nrm == 0:
            return P[:, :0]
        P = P / nrm
        G = P @ P.conj().T
        w, U = np.linalg.eigh(G)
        order = np.argsort(w)[::-1][:r]
        w = np.clip(w[order], 0, None)
        return U[:, order] * np.sqrt(w)[None, :]


@dataclass
class SweepConfig:
    """Knobs for the TTN sweeps.

    ``expansion_size=None`` means ``max_m // 4``; the expansion size and the
    mixing weight shrink by ``expansion_decay`` every sweep.  Eigensolver
    tolerances tighten from ``eig_tol_start`` to ``eig_tol`` by
    ``eig_tol_decay`` per sweep.
    """

    n_sweeps: int = 10
    max_m: int = 16
    eig_tol: float = 1e-10
    eig_tol_start: float = 1e-6
    eig_tol_decay: float = 0.1
    eig_max_iter: int = 400
    krylov_dim: int = 30
    expansion_size: int | None = None
    expansion_decay: float = 0.5
    expansion_alpha: float = 1e-2
    trunc_tol: float = 1e-12
    conv_tol: float = 1e-10
    min_sweeps: int = 2

    def expansion_at(self, sweep: int) -> int:
        base = self.max_m // 4 if self.expansion_size is None else self.expansion_size
        return int(base * self.expansion_decay ** sweep)

    def eig_tol_at(self, sweep: int) -> float:
        return max(self.eig_tol, self.eig_tol_start * self.eig_tol_decay ** sweep)


@dataclass
class SweepResult:
    energies: list = field(default_factory=list)  # one per local update
    sweep_energies: list = field(default_factory=list)
    converged: bool = False
    eig_failures: int = 0
    truncation: float = 0.0


class TtnOptimizer:
    """Holds a TTN, its operator blocks and the gauge center during sweeps."""

    def __init__(self, state: TtnState, terms, cfg: SweepConfig | None = None):
        self.cfg = cfg or SweepConfig()
        if state.center is None:
            state = canonicalize(state)
        self.topo = state.topology
        self.T = dict(state.tensors)
        self.center = state.center
        self.pt = _as_products(terms, self.topo.N)
        self._build_blocks()

    # -- state access
    @property
    def state(self) -> TtnState:
        return TtnState(self.topo, self.T, self.center)

    def _build_blocks(self):
        topo = self.topo
        pt = self.pt
        self.up: dict[int, _Block] = {s: _leaf_block(pt, s, False) for s in range(topo.N)}
        self.down: dict[int, _Block] = {topo.root: _empty_block(1)}
        center = self.center
        path = set(topo.path_to_root(center))
        for n in topo.nodes:
            if n in path:
                continue
            a, b = topo.children[n]
            self.up[n] = _merge(self.up[a], self.up[b], self.T[n], pt.nsite, False)
        # down blocks along root -> center
        chain = topo.path_to_root(center)[::-1]
        for n, child in zip(chain[:-1], chain[1:]):
            self._refresh_down(n, child)

    def _refresh_up(self, n: int):
        a, b = self.topo.children[n]
        self.up[n] = _merge(self.up[a], self.up[b], self.T[n], self.pt.nsite, False)

    def _refresh_down(self, n: int, child: int):
        """Down block of link ``child`` from node ``n`` (must be isometric toward child)."""
        a, b = self.topo.children[n]
        T = self.T[n]
        if child == a:
            Tt = np.ascontiguousarray(T.transpose(1, 2, 0))
            self.down[child] = _merge(self.up[b], self.down[n], Tt, self.pt.nsite, False)
        else:
            Tt = np.ascontiguousarray(T.transpose(0, 2, 1))
            self.down[child] = _merge(self.up[a], self.down[n], Tt, self.pt.nsite, False)

    def heff(self, n: int | None = None) -> _Heff:
        n = self.center if n is None else n
        a, b = self.topo.children[n]
        return _Heff(self.up[a], self.up[b], self.down[n], self.pt.nsite)

    def energy(self) -> float:
        psi = self.T[self.center]
        return float(np.vdot(psi, self.heff()(psi)).real / np.vdot(psi, psi).real)

    # -- gauge moves
    def _step(self, nxt: int, expand: int = 0, alpha: float = 0.0, max_m: int | None = None,
              trunc_tol: float = 0.0) -> float:
        """Move the center one hop to neighbour ``nxt``; returns discarded weight."""
        topo = self.topo
        c = self.center
        ax = _leg_toward(topo, c, nxt)
        T = self.T[c]
        M = _matricize(T, ax)
        others = tuple(T.shape[i] for i in range(3) if i != ax)
        discarded = 0.0
        if expand > 0:
            d_e = M.shape[1]
            cap = d_e + expand if max_m is None else min(d_e + expand, max(max_m, 1))
            cap = min(cap, _cap(topo, c if ax == 2 else nxt, 10 ** 9))
            P = self.heff(c).side_vectors(T, ax, expand)
            if P.shape[1]:
                big = np.concatenate([M, alpha * P], axis=1)
            else:
                big = M
            U, s, Vh, discarded = svd_truncate(big, cap, trunc_tol)
            Q = U
            R = s[:, None] * Vh[:, :d_e]
        else:
            Q, R = qr_isometry(M)
        self.T[c] = _unmatricize(Q, others, ax)
        self.T[nxt] = _absorb(self.T[nxt], _leg_toward(topo, nxt, c), R)
        if ax == 2:
            self._refresh_up(c)
        else:
            self._refresh_down(c, nxt)
        self.center = nxt
        return discarded

    def move_to(self, node: int, **kw) -> float:
        path = self.topo.path(self.center, node)
        disc = 0.0
        for i, nxt in enumerate(path[1:]):
            disc += self._step(nxt, **(kw if i == 0 else {}))
        return disc

    def optimize_center(self, tol: float) -> tuple[float, bool]:
        c = self.center
        H = self.heff(c)
        psi0 = self.T[c]
        val, vec, info = lanczos_smallest(H, psi0, tol=tol, max_iter=self.cfg.eig_max_iter,
                                          krylov_dim=self.cfg.krylov_dim)
        self.T[c] = vec
        return val, info.converged

    def sweep(self, sweep_index: int = 0, result: SweepResult | None = None) -> SweepResult:
        cfg = self.cfg
        result = result or SweepResult()
        tol = cfg.eig_tol_at(sweep_index)
        expand = cfg.expansion_at(sweep_index)
        alpha = cfg.expansion_alpha * cfg.expansion_decay ** sweep_index
        order = self.topo.post_order()
        for i, n in enumerate(order):
            if n != self.center:
                self.move_to(n)
            val, ok = self.optimize_center(tol)
            if not ok:
                result.eig_failures += 1
            result.energies.append(val)
            if i + 1 < len(order) and expand > 0:
                result.truncation += self.move_to(order[i + 1], expand=expand, alpha=alpha,
                                                  max_m=cfg.max_m, trunc_tol=cfg.trunc_tol)
        result.sweep_energies.append(result.energies[-1])
        return result

    def run(self) -> SweepResult:
        cfg = self.cfg
        result = SweepResult()
        prev = None
        for k in range(cfg.n_sweeps):
            self.sweep(k, result)
            e = result.sweep_energies[-1]
            log.debug("sweep %d energy %.12f", k, e)
            if prev is not None and k + 1 >= cfg.min_sweeps:
                if abs(e - prev) <= cfg.conv_tol * max(1.0, abs(e)):
                    result.converged = True
                    break
            prev = e
        self.move_to(self.topo.root)
        return result


def sweep_optimize(state: TtnState, terms, cfg: SweepConfig | None = None):
    """Variational ground-state search; returns ``(state, energy_trace)``."""
    opt = TtnOptimizer(state, terms, cfg)
    res = opt.run()
    return opt.state, res.energies


def sweep_optimize_full(state: TtnState, terms, cfg: SweepConfig | None = None):
    """Like ``sweep_optimize`` but returns the full ``SweepResult``."""
    opt = TtnOptimizer(state, terms, cfg)
    res = opt.run()
    return opt.state, res
