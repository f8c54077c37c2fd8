"""Sum-of-products form of few-site operators.

The tree engine renormalises one-site factors link by link, so every dense
term is split into a short sum of tensor products by sequential SVDs across
its sites (an operator Schmidt decomposition).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lattice import LocalTerm

_CUT = 1e-13


def product_decompose(op: np.ndarray, nsites: int, cut: float = _CUT) -> list[list[np.ndarray]]:
    """Write ``op`` (kron order over ``nsites`` qubits) as ``sum_k A_k1 x A_k2 x ...``.

    Factors are 2x2; the returned list holds one list of factors per product.
    """
    op = np.asarray(op, dtype=complex)
    if nsites == 1:
        return [[op]]
    t = op.reshape((2,) * (2 * nsites))
    perm = [p for s in range(nsites) for p in (s, nsites + s)]
    t = t.transpose(perm).reshape((4,) * nsites)
    scale = np.linalg.norm(t)
    if scale == 0:
        return []
    # tensor-train sweep; cores[s] has shape (r_left, 4, r_right)
    cores = []
    rest = t.reshape(1, -1)
    r = 1
    for s in range(nsites - 1):
        mat = rest.reshape(r * 4, -1)
        U, sv, Vh = np.linalg.svd(mat, full_matrices=False)
        keep = max(1, int(np.count_nonzero(sv > cut * scale)))
        cores.append(U[:, :keep].reshape(r, 4, keep))
        rest = sv[:keep, None] * Vh[:keep]
        r = keep
    cores.append(rest.reshape(r, 4, 1))
    out = []
    ranks = [c.shape[2] for c in cores[:-1]]
    for combo in np.ndindex(*ranks):
        left = 0
        factors = []
        for s, core in enumerate(cores):
            right = combo[s] if s < nsites - 1 else 0
            factors.append(core[left, :, right].reshape(2, 2))
            left = right
        if all(np.any(np.abs(f) > 0) for f in factors):
            out.append(factors)
    return out


@dataclass
class ProductTerms:
    """Flat list of product operators, indexed ``0..n-1``.

    ``by_site[s]`` holds ``(ids, ops)``: sorted product ids touching site s and
    their 2x2 factors there.  ``owner[k]`` is the source term of product k.
    """

    n: int
    nsite: np.ndarray
    owner: np.ndarray
    by_site: dict

    @classmethod
    def from_terms(cls, terms: Sequence[LocalTerm], N: int) -> "ProductTerms":
        per_site: dict[int, list] = {s: [] for s in range(N)}
        nsite, owner = [], []
        k = 0
        for ti, term in enumerate(terms):
            if any(s < 0 or s >= N for s in term.sites):
                raise ValueError(f"term support {term.sites} outside the lattice")
            for factors in product_decompose(term.matrix, len(term.sites)):
                for s, f in zip(term.sites, factors):
                    per_site[s].append((k, f))
                nsite.append(len(term.sites))
                owner.append(ti)
                k += 1
        by_site = {}
        for s, lst in per_site.items():
            if lst:
                ids = np.array([i for i, _ in lst], dtype=np.int64)
                ops = np.array([f for _, f in lst], dtype=complex)
            else:
                ids = np.zeros(0, dtype=np.int64)
                ops = np.zeros((0, 2, 2), dtype=complex)
            by_site[s] = (ids, ops)
        return cls(k, np.array(nsite, dtype=np.int64), np.array(owner, dtype=np.int64), by_site)
