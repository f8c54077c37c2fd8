"""Dense labelled tensors: contraction, SVD/QR splits and a Lanczos eigensolver.

The labelled API (``LabeledTensor`` and friends) is what tests and callers
see.  The tree engine works on raw arrays with a fixed leg order and uses the
matrix-level helpers (``svd_truncate``, ``qr_isometry``, ``lanczos_smallest``)
directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ConvergenceError(RuntimeError):
    """Iterative solver stopped before reaching its tolerance."""

    def __init__(self, msg, value=None, vector=None, residual=None):
        super().__init__(msg)
        self.value = value
        self.vector = vector
        self.residual = residual


@dataclass
class LabeledTensor:
    labels: tuple[str, ...]
    data: np.ndarray

    def __post_init__(self):
        self.labels = tuple(self.labels)
        self.data = np.asarray(self.data, dtype=complex)
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"duplicate labels {self.labels}")
        if self.data.ndim != len(self.labels):
            raise ValueError(f"{len(self.labels)} labels for a rank-{self.data.ndim} array")
        if any(d < 1 for d in self.data.shape):
            raise ValueError("all extents must be positive")

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    def dim(self, label: str) -> int:
        return self.data.shape[self.axis(label)]

    def axis(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"no leg {label!r} in {self.labels}") from None

    def transpose(self, labels: Sequence[str]) -> "LabeledTensor":
        perm = [self.axis(l) for l in labels]
        if sorted(perm) != list(range(len(self.labels))):
            raise ValueError("transpose needs a permutation of all legs")
        return LabeledTensor(tuple(labels), self.data.transpose(perm))

    def relabel(self, mapping: dict[str, str]) -> "LabeledTensor":
        return LabeledTensor(tuple(mapping.get(l, l) for l in self.labels), self.data)

    def matricize(self, row_legs: Sequence[str]) -> tuple[np.ndarray, list[str], list[str]]:
        rows = [l for l in self.labels if l in set(row_legs)]
        if len(rows) != len(set(row_legs)):
            missing = set(row_legs) - set(self.labels)
            raise KeyError(f"unknown legs {sorted(missing)}")
        cols = [l for l in self.labels if l not in set(row_legs)]
        t = self.transpose(rows + cols)
        nr = int(np.prod([self.dim(l) for l in rows], dtype=int))
        return t.data.reshape(nr, -1), rows, cols

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def vdot(self, other: "LabeledTensor") -> complex:
        other = other.transpose(self.labels)
        return complex(np.vdot(self.data, other.data))

    def __add__(self, other):
        other = other.transpose(self.labels)
        return LabeledTensor(self.labels, self.data + other.data)

    def __mul__(self, scalar):
        return LabeledTensor(self.labels, scalar * self.data)

    __rmul__ = __mul__


def contract(a: LabeledTensor, b: LabeledTensor, pairs: Sequence[tuple[str, str]]) -> LabeledTensor:
    """Sum over paired legs; output legs are a's free legs then b's free legs."""
    ax_a, ax_b = [], []
    for la, lb in pairs:
        ia, ib = a.axis(la), b.axis(lb)
        if a.data.shape[ia] != b.data.shape[ib]:
            raise ValueError(f"extent mismatch on ({la}, {lb}): {a.data.shape[ia]} != {b.data.shape[ib]}")
        ax_a.append(ia)
        ax_b.append(ib)
    free = [l for i, l in enumerate(a.labels) if i not in ax_a]
    free += [l for i, l in enumerate(b.labels) if i not in ax_b]
    if len(set(free)) != len(free):
        raise ValueError(f"duplicate label in contraction result {free}")
    data = np.tensordot(a.data, b.data, axes=(ax_a, ax_b))
    return LabeledTensor(tuple(free), data)


def svd_truncate(mat: np.ndarray, max_kept: int | None = None, trunc_tol: float = 0.0):
    """SVD keeping at most ``max_kept`` values and dropping ``s_i/s_1 < trunc_tol``.

    Returns ``U, s, Vh, discarded`` where ``discarded`` is the sum of squared
    dropped singular values.
    """
    try:
        U, s, Vh = np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError:
        U, s, Vh = _svd_fallback(mat)
    k = len(s)
    if max_kept is not None:
        k = min(k, max_kept)
    if trunc_tol > 0 and len(s) and s[0] > 0:
        k = min(k, max(1, int(np.count_nonzero(s[:k] / s[0] >= trunc_tol))))
    k = max(k, 1)
    discarded = float(np.sum(s[k:] ** 2))
    return U[:, :k], s[:k], Vh[:k], discarded


def _svd_fallback(mat):
    import scipy.linalg

    return scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesvd")


def svd_split(t: LabeledTensor, row_legs: Sequence[str], max_kept: int | None = None,
              trunc_tol: float = 0.0, bond: str = "bond"):
    """Split ``t`` into ``U (row legs + bond)``, ``s`` and ``V (bond + column legs)``."""
    row_legs = list(row_legs)
    if not row_legs or len(set(row_legs)) >= len(t.labels):
        raise ValueError("row legs must be a nonempty proper subset of the tensor legs")
    mat, rows, cols = t.matricize(row_legs)
    if bond in t.labels:
        raise ValueError(f"bond label {bond!r} already used")
    U, s, Vh, _ = svd_truncate(mat, max_kept, trunc_tol)
    k = len(s)
    Ut = LabeledTensor(tuple(rows) + (bond,), U.reshape([t.dim(l) for l in rows] + [k]))
    Vt = LabeledTensor((bond,) + tuple(cols), Vh.reshape([k] + [t.dim(l) for l in cols]))
    return Ut, s, Vt


def qr_isometry(mat: np.ndarray):
    """Reduced QR with a nonnegative diagonal on R."""
    Q, R = np.linalg.qr(mat)
    d = np.diagonal(R)
    ph = np.where(np.abs(d) > 0, d / np.where(np.abs(d) > 0, np.abs(d), 1), 1.0)
    Q = Q * ph[None, :]
    R = ph.conj()[:, None] * R
    return Q, R


def isometrize(t: LabeledTensor, toward_leg: str, bond: str = "bond"):
    """QR split ``t = Q R`` with ``Q`` isometric onto ``toward_leg``.

    ``Q`` keeps t's labels with ``toward_leg`` renamed to ``bond``; ``R`` has
    legs ``(bond, toward_leg)`` and carries the gauge to the neighbour.
    """
    others = [l for l in t.labels if l != toward_leg]
    t.axis(toward_leg)
    if not others:
        raise ValueError("cannot isometrize a rank-1 tensor")
    mat, rows, _ = t.matricize(others)
    Q, R = qr_isometry(mat)
    k = Q.shape[1]
    Qt = LabeledTensor(tuple(rows) + (bond,), Q.reshape([t.dim(l) for l in rows] + [k]))
    Qt = Qt.transpose([bond if l == toward_leg else l for l in t.labels])
    Rt = LabeledTensor((bond, toward_leg), R)
    return Qt, Rt


@dataclass
class LinearMap:
    """A linear operator on tensors of one fixed shape."""

    apply: Callable[[LabeledTensor], LabeledTensor]
    hermitian: bool = True


@dataclass
class LanczosInfo:
    converged: bool
    residual: float
    matvecs: int
    history: list = field(default_factory=list)


def lanczos_smallest(matvec: Callable[[np.ndarray], np.ndarray], x0: np.ndarray,
                     tol: float = 1e-10, max_iter: int = 1000, krylov_dim: int = 40,
                     keep: int = 6, dense_cutoff: int = 48, seed: int = 0):
    """Smallest eigenpair of a Hermitian map by thick-restart Lanczos.

    Every new Krylov vector is orthogonalised twice against the whole basis.
    When the basis is full it is compressed to the ``keep`` lowest Ritz
    vectors.  Problems of size ``<= dense_cutoff`` are solved densely.
    Returns ``(value, vector, LanczosInfo)``; ``vector`` has x0's shape.
    """
    shape = x0.shape
    x = np.asarray(x0, dtype=complex).ravel()
    n = x.size
    nrm = np.linalg.norm(x)
    rng = np.random.default_rng(seed)
    if nrm == 0:
        raise ValueError("initial guess must be nonzero")
    x = x / nrm

    if n <= dense_cutoff:
        eye = np.eye(n, dtype=complex)
        A = np.stack([matvec(eye[i].reshape(shape)).ravel() for i in range(n)], axis=1)
        A = 0.5 * (A + A.conj().T)
        w, v = np.linalg.eigh(A)
        vec = v[:, 0]
        res = float(np.linalg.norm(A @ vec - w[0] * vec))
        return float(w[0]), vec.reshape(shape), LanczosInfo(True, res, n)

    kmax = max(3, min(krylov_dim, n))
    keep = max(1, min(keep, kmax - 2))
    V = np.zeros((kmax, n), dtype=complex)
    W = np.zeros((kmax, n), dtype=complex)
    H = np.zeros((kmax, kmax), dtype=complex)
    V[0] = x
    W[0] = matvec(x.reshape(shape)).ravel()
    H[0, 0] = np.vdot(V[0], W[0]).real
    j = 1
    matvecs = 1
    history = []
    theta, vec, res = None, x, np.inf
    while True:
        w, Y = np.linalg.eigh(H[:j, :j])
        theta = float(w[0])
        y = Y[:, 0]
        vec = y @ V[:j]
        r = y @ W[:j] - theta * vec
        vn = np.linalg.norm(vec)
        res = float(np.linalg.norm(r) / vn)
        history.append(theta)
        if res <= tol:
            return theta, (vec / vn).reshape(shape), LanczosInfo(True, res, matvecs, history)
        if matvecs >= max_iter:
            return theta, (vec / vn).reshape(shape), LanczosInfo(False, res, matvecs, history)
        if j == kmax:
            k = keep
            V[:k] = Y[:, :k].T @ V[:j]
            W[:k] = Y[:, :k].T @ W[:j]
            H[:] = 0
            H[:k, :k] = np.diag(w[:k])
            j = k
        for _ in range(2):
            r = r - V[:j].T @ (V[:j] @ r.conj()).conj()
        rn = np.linalg.norm(r)
        if rn < 1e-13:
            r = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            for _ in range(2):
                r = r - V[:j].T @ (V[:j] @ r.conj()).conj()
            rn = np.linalg.norm(r)
            if rn < 1e-13:
                # basis spans the whole space
                return theta, (vec / vn).reshape(shape), LanczosInfo(True, res, matvecs, history)
        V[j] = r / rn
        W[j] = matvec(V[j].reshape(shape)).ravel()
        matvecs += 1
        h = (V[: j + 1] @ W[j].conj()).conj()
        H[: j + 1, j] = h
        H[j, : j + 1] = h.conj()
        H[j, j] = h[j].real
        j += 1


def eigsh_smallest(op: LinearMap, guess: LabeledTensor, tol: float = 1e-10, max_iter: int = 1000):
    """Algebraically smallest eigenpair of a Hermitian ``LinearMap``.

    Raises ConvergenceError (carrying the best iterate) if the residual is
    still above ``tol`` after ``max_iter`` applications.
    """
    if not op.hermitian:
        raise ValueError("eigsh_smallest needs a Hermitian map")
    labels = guess.labels

    def mv(arr):
        out = op.apply(LabeledTensor(labels, arr))
        return out.transpose(labels).data

    val, vec, info = lanczos_smallest(mv, guess.data, tol=tol, max_iter=max_iter)
    v = LabeledTensor(labels, vec)
    if not info.converged:
        raise ConvergenceError(f"Lanczos residual {info.residual:.2e} > {tol:.1e} after "
                               f"{info.matvecs} iterations", val, v, info.residual)
    return val, v
