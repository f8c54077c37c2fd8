"""Exact diagonalisation reference for small lattices.

Vectors are dense in kron order (site 0 most significant), so a vector
reshaped to ``(2,) * N`` has site ``s`` on axis ``s``.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .lattice import LocalTerm
from .tensor import ConvergenceError, lanczos_smallest

SPARSE_LIMIT = 12


class DenseOperatorAssembly:
    """Matrix-free ``H`` on the full ``2^N`` space.

    Terms sharing a support are merged.  Diagonal parts of all terms are
    collected into one precomputed vector; off-diagonal parts are applied by
    tensordot on the ``(2,) * N`` view.
    """

    def __init__(self, terms: Sequence[LocalTerm], N: int):
        if N > 24:
            raise ValueError(f"{N} sites is beyond the dense reference")
        self.N = N
        self.dim = 2 ** N
        merged: dict[tuple[int, ...], np.ndarray] = {}
        for t in terms:
            if any(s < 0 or s >= N for s in t.sites):
                raise ValueError(f"term support {t.sites} outside the lattice")
            key = tuple(sorted(t.sites))
            op = _reorder(t.matrix, t.sites, key)
            merged[key] = merged.get(key, 0) + op
        self.diag = np.zeros(self.dim, dtype=float)
        self.offdiag: list[tuple[tuple[int, ...], np.ndarray]] = []
        self._hermitian = True
        for sites, op in merged.items():
            d = np.diagonal(op)
            if np.abs(d.imag).max(initial=0) > 1e-12:
                self._hermitian = False
            self.diag += _diag_on_full(d.real, sites, N)
            off = op - np.diag(d)
            if np.any(np.abs(off) > 0):
                k = len(sites)
                self.offdiag.append((sites, off.reshape((2,) * (2 * k))))

    def apply(self, vec: np.ndarray) -> np.ndarray:
        """``H @ vec``; ``vec`` may be ``(2^N,)`` or ``(2^N, B)``."""
        vec = np.asarray(vec)
        batch = vec.ndim == 2
        v = vec.reshape((2,) * self.N + ((vec.shape[1],) if batch else ()))
        out = (self.diag.reshape(self.diag.shape + (1,) * batch) * vec).astype(complex)
        out = out.reshape(v.shape)
        for sites, op in self.offdiag:
            k = len(sites)
            y = np.tensordot(op, v, axes=(list(range(k, 2 * k)), list(sites)))
            out += np.moveaxis(y, list(range(k)), list(sites))
        return out.reshape(vec.shape)

    __call__ = apply

    def expectation(self, vec: np.ndarray) -> float:
        return float(np.vdot(vec, self.apply(vec)).real / np.vdot(vec, vec).real)

    def to_sparse(self) -> sp.csr_matrix:
        if self.N > SPARSE_LIMIT:
            raise ValueError(f"explicit matrices are limited to N <= {SPARSE_LIMIT}")
        cols = []
        chunk = 256
        for start in range(0, self.dim, chunk):
            stop = min(start + chunk, self.dim)
            E = np.zeros((self.dim, stop - start), dtype=complex)
            E[np.arange(start, stop), np.arange(stop - start)] = 1.0
            cols.append(sp.csr_matrix(self.apply(E)))
        return sp.hstack(cols).tocsr()

    def to_dense(self) -> np.ndarray:
        if self.N > SPARSE_LIMIT:
            raise ValueError(f"explicit matrices are limited to N <= {SPARSE_LIMIT}")
        return self.apply(np.eye(self.dim, dtype=complex))


def _reorder(op: np.ndarray, sites: Sequence[int], target: Sequence[int]) -> np.ndarray:
    sites, target = list(sites), list(target)
    if sites == target:
        return np.asarray(op, dtype=complex)
    k = len(sites)
    perm = [sites.index(s) for s in target]
    t = np.asarray(op, dtype=complex).reshape((2,) * (2 * k))
    return t.transpose(perm + [k + p for p in perm]).reshape(2 ** k, 2 ** k)


def _diag_on_full(d: np.ndarray, sites: Sequence[int], N: int) -> np.ndarray:
    k = len(sites)
    shape = [1] * N
    for s in sites:
        shape[s] = 2
    t = d.reshape((2,) * k)
    # axes of t are already in ascending site order
    return np.broadcast_to(t.reshape(shape), (2,) * N).reshape(-1)


def exact_ground_state(terms: Sequence[LocalTerm], N: int, tol: float = 1e-10,
                       seed: int = 0, max_iter: int = 3000):
    """Lowest eigenpair ``(E0, psi)`` by Lanczos on the matrix-free operator."""
    H = DenseOperatorAssembly(terms, N)
    if H.dim <= 64:
        w, v = np.linalg.eigh(H.to_dense())
        return float(w[0]), v[:, 0]
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal(H.dim) + 1j * rng.standard_normal(H.dim)
    val, vec, info = lanczos_smallest(H.apply, x0, tol=tol, max_iter=max_iter, krylov_dim=60, keep=8)
    if not info.converged:
        raise ConvergenceError(f"ED Lanczos residual {info.residual:.2e}", val, vec, info.residual)
    return val, vec / np.linalg.norm(vec)


def spectrum(terms: Sequence[LocalTerm], N: int) -> np.ndarray:
    """All eigenvalues (ascending); only for N <= 12."""
    return np.linalg.eigvalsh(DenseOperatorAssembly(terms, N).to_dense())


def energy_of(terms: Sequence[LocalTerm], N: int, vec: np.ndarray) -> float:
    return DenseOperatorAssembly(terms, N).expectation(vec)


def reconstruct_dense(state, layer=None, max_sites: int = 16) -> np.ndarray:
    """Normalised dense vector of ``|ttn>`` or ``D^dag |ttn>``."""
    from .ttn import to_dense

    N = state.topology.N
    if N > max_sites:
        raise ValueError(f"dense reconstruction is capped at {max_sites} sites, got {N}")
    v = to_dense(state)
    if layer is not None:
        v = layer.apply_dagger(v, N)
    return v / np.linalg.norm(v)
