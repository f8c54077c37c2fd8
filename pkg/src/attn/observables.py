"""Density correlations, structure factors and critical-point analysis."""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.signal import find_peaks

from .lattice import NUM, Lattice2D, LocalTerm, pinned_sites


# ---------------------------------------------------------------------------
# Site sets


def bulk_sites(lat: Lattice2D, margin: int = 1) -> list[int]:
    """Sites at least ``margin`` away from every edge (drops the pinned rows)."""
    return [lat.index(x, y) for y in range(margin, lat.height - margin)
            for x in range(margin, lat.Lx - margin)]


def free_sites(lat: Lattice2D) -> list[int]:
    """Sites without boundary pinning (everything but bottom row and right column)."""
    pin = pinned_sites(lat)
    return [i for i in range(lat.N) if i not in pin]


def sampled_pairs(lat: Lattice2D, sites: Sequence[int], max_disp: int = 8, coarse: int = 4):
    """Pairs within ``max_disp`` (Chebyshev) plus pairs on a coarse grid."""
    out = []
    for a, b in itertools.combinations(sites, 2):
        (xa, ya), (xb, yb) = lat.coords(a), lat.coords(b)
        near = max(abs(xa - xb), abs(ya - yb)) <= max_disp
        grid = all(v % coarse == 0 for v in (xa, ya, xb, yb))
        if near or grid:
            out.append((a, b))
    return out


# ---------------------------------------------------------------------------
# Correlation tables


@dataclass
class CorrelationTable:
    """``<n_r>`` and ``<n_r n_s>`` on a fixed set of sites.

    ``corr`` entries that were not measured hold NaN.
    """

    lattice: Lattice2D
    sites: tuple[int, ...]
    density: np.ndarray
    corr: np.ndarray

    def __post_init__(self):
        self.sites = tuple(int(s) for s in self.sites)
        self.density = np.asarray(self.density, dtype=float)
        self.corr = np.asarray(self.corr, dtype=float)
        n = len(self.sites)
        if self.density.shape != (n,) or self.corr.shape != (n, n):
            raise ValueError("density/corr shapes do not match the site list")
        if np.any(self.density < -1e-9) or np.any(self.density > 1 + 1e-9):
            raise ValueError("densities must lie in [0, 1]")
        d = np.diagonal(self.corr)
        ok = ~np.isnan(d)
        if np.any(np.abs(d[ok] - self.density[ok]) > 1e-9):
            raise ValueError("<n_r n_r> must equal <n_r> for projectors")

    @property
    def L(self) -> int:
        return self.lattice.L

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def complete(self) -> bool:
        return not np.isnan(self.corr).any()

    @property
    def coords(self) -> np.ndarray:
        return np.array([self.lattice.coords(s) for s in self.sites], dtype=float)

    @classmethod
    def from_pattern(cls, lat: Lattice2D, occupation: Sequence[float], sites: Sequence[int] | None = None):
        """Product state with ``<n_r> = occupation[r]`` (lattice-indexed)."""
        sites = list(range(lat.N)) if sites is None else list(sites)
        p = np.array([occupation[s] for s in sites], dtype=float)
        C = np.outer(p, p)
        np.fill_diagonal(C, p)
        return cls(lat, tuple(sites), p, C)

    @classmethod
    def from_dense(cls, lat: Lattice2D, vec: np.ndarray, sites: Sequence[int]):
        """Exact table from a dense kron-ordered state vector."""
        prob = np.abs(np.asarray(vec).reshape((2,) * lat.N)) ** 2
        prob = prob / prob.sum()
        sites = list(sites)
        occ = [np.take(prob, 0, axis=s) for s in range(lat.N)]  # |r> = |0>
        dens = np.array([occ[s].sum() for s in sites])
        C = np.zeros((len(sites), len(sites)))
        for a, sa in enumerate(sites):
            C[a, a] = dens[a]
            for b in range(a + 1, len(sites)):
                sb = sites[b]
                ax = sb - 1 if sb > sa else sb
                C[a, b] = C[b, a] = np.take(occ[sa], 0, axis=ax).sum()
        return cls(lat, tuple(sites), dens, C)

    @classmethod
    def from_state(cls, state, lat: Lattice2D, sites: Sequence[int], layer=None,
                   pairs: Sequence[tuple[int, int]] | None = None):
        """Table of a (augmented) TTN; ``pairs=None`` measures all pairs."""
        from .disentangler import map_observable
        from .ttn import term_expectations

        sites = list(sites)
        pos = {s: i for i, s in enumerate(sites)}
        if pairs is None:
            pairs = list(itertools.combinations(sites, 2))
        nn = np.kron(NUM, NUM)
        ops = [LocalTerm((s,), NUM) for s in sites] + [LocalTerm(p, nn) for p in pairs]
        if layer is not None:
            ops = map_observable(layer, ops)
        vals = term_expectations(state, ops).real
        dens = np.clip(vals[: len(sites)], 0.0, 1.0)
        C = np.full((len(sites), len(sites)), np.nan)
        np.fill_diagonal(C, dens)
        for (a, b), v in zip(pairs, vals[len(sites):]):
            C[pos[a], pos[b]] = C[pos[b], pos[a]] = v
        return cls(lat, tuple(sites), dens, C)

    def restrict(self, sites: Sequence[int]) -> "CorrelationTable":
        idx = [self.sites.index(s) for s in sites]
        return CorrelationTable(self.lattice, tuple(sites), self.density[idx], self.corr[np.ix_(idx, idx)])

    def to_dict(self) -> dict:
        return {"L": self.lattice.L, "Ly": self.lattice.height, "boundary": self.lattice.boundary,
                "sites": list(self.sites), "density": self.density.tolist(),
                "corr": [[None if np.isnan(v) else float(v) for v in row] for row in self.corr]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "CorrelationTable":
        lat = Lattice2D(d["L"], d.get("boundary", "open"), d.get("Ly"))
        C = np.array([[np.nan if v is None else v for v in row] for row in d["corr"]], dtype=float)
        return cls(lat, tuple(d["sites"]), np.array(d["density"]), C)


@dataclass
class ScanSeries:
    """Results of a scan over one control parameter at fixed ``L`` and ``m``."""

    L: int
    m: int
    control: np.ndarray
    energy: np.ndarray
    tables: list = field(default_factory=list)

    def __post_init__(self):
        self.control = np.asarray(self.control, dtype=float)
        self.energy = np.asarray(self.energy, dtype=float)
        if len(self.control) != len(self.energy):
            raise ValueError("control and energy lengths differ")
        if np.any(np.diff(self.control) <= 0):
            raise ValueError("control values must be strictly increasing")


# ---------------------------------------------------------------------------
# Structure factor and order parameters


def structure_factor(t: CorrelationTable, k: Sequence[float], fill_missing: bool = False) -> float:
    """``S(k) = 1/N^2 sum_{r,s} exp(-i k.(r-s)) <n_r n_s>`` over the table's sites."""
    C = t.corr
    if not t.complete:
        if not fill_missing:
            raise ValueError("correlation table is incomplete")
        C = np.where(np.isnan(C), np.outer(t.density, t.density), C)
    f = np.exp(-1j * (t.coords @ np.asarray(k, dtype=float)))
    n = t.n_sites
    return float((f @ C @ f.conj()).real) / n ** 2


def renormalized_structure_factor(t: CorrelationTable, k: Sequence[float], **kw) -> float:
    s0 = structure_factor(t, (0.0, 0.0), **kw)
    if s0 <= 0:
        return 0.0
    return structure_factor(t, k, **kw) / s0


def structure_factor_grid(t: CorrelationTable, nk: int | None = None, **kw) -> tuple[np.ndarray, np.ndarray]:
    """``S(k)`` on ``k = 2 pi (i, j) / nk`` (default ``nk = L``); returns ``(ks, S)``."""
    nk = t.lattice.L if nk is None else nk
    ks = 2 * np.pi * np.arange(nk) / nk
    S = np.array([[structure_factor(t, (kx, ky), **kw) for kx in ks] for ky in ks])
    return ks, S


def structure_factor_peaks(t: CorrelationTable, rel_height: float = 0.75, nk: int | None = None,
                           **kw) -> list[tuple[float, float]]:
    """Momenta ``(kx, ky)`` where ``S'(k)`` is a local maximum on the periodic
    k-grid and reaches ``rel_height`` of the largest value away from k = 0."""
    ks, S = structure_factor_grid(t, nk, **kw)
    n = len(ks)
    off = [S[i, j] for i in range(n) for j in range(n) if (i, j) != (0, 0)]
    if not off:
        return []
    top = max(off)
    out = []
    for i in range(n):
        for j in range(n):
            if (i, j) == (0, 0):
                continue
            nb = max(S[(i + 1) % n, j], S[(i - 1) % n, j], S[i, (j + 1) % n], S[i, (j - 1) % n])
            if S[i, j] >= nb - 1e-12 and S[i, j] >= rel_height * top:
                out.append((float(ks[j]), float(ks[i])))
    return out


def staggered_magnetization(t: CorrelationTable) -> float:
    """``|sum_r (-1)^(x+y) <n_r>| / N``."""
    sign = np.array([(-1) ** int(x + y) for x, y in t.coords])
    return float(abs(sign @ t.density)) / t.n_sites


def order_parameter_sq(t: CorrelationTable, which: str, **kw) -> float:
    """Estimator of ``<O^dag O>``: ``S(pi, pi)`` for Z2, ``S(0, pi)`` for Z4."""
    if which.upper() == "Z2":
        return structure_factor(t, (np.pi, np.pi), **kw)
    if which.upper() == "Z4":
        return structure_factor(t, (0.0, np.pi), **kw)
    raise ValueError(f"unknown order {which!r}")


# ---------------------------------------------------------------------------
# Finite-size scaling collapse


@dataclass
class CollapseResult:
    delta_c: float
    inv_nu: float
    beta: float
    cost: float
    success: bool
    errors: dict = field(default_factory=dict)

    @property
    def two_beta_over_nu(self) -> float:
        return 2 * self.beta * self.inv_nu


def _collapse_cost(params, data) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        return _collapse_cost_raw(params, data)


def _collapse_cost_raw(params, data) -> float:
    dc, inv_nu, b = params
    if dc == 0:
        return np.inf
    curves = []
    for L, (x, y) in data.items():
        X = L ** inv_nu * (x - dc) / dc
        Y = y * L ** b
        o = np.argsort(X)
        curves.append((X[o], Y[o]))
    scale = np.var(np.concatenate([c[1] for c in curves]))
    if not np.isfinite(scale) or scale <= 0:
        return np.inf
    total, count = 0.0, 0
    for i, (Xi, Yi) in enumerate(curves):
        for j, (Xj, Yj) in enumerate(curves):
            if i == j:
                continue
            inside = (Xi >= Xj[0]) & (Xi <= Xj[-1])
            if not inside.any():
                continue
            pred = np.interp(Xi[inside], Xj, Yj)
            total += np.sum((Yi[inside] - pred) ** 2)
            count += int(inside.sum())
    if count == 0:
        return np.inf
    return total / count / scale


def _fit_collapse(data, dc_range, inv_nu_range, b_range, grid) -> tuple[np.ndarray, float]:
    best = (np.inf, None)
    for p in itertools.product(np.linspace(*dc_range, grid), np.linspace(*inv_nu_range, grid),
                               np.linspace(*b_range, grid)):
        c = _collapse_cost(p, data)
        if c < best[0]:
            best = (c, np.array(p))
    if best[1] is None:
        return np.full(3, np.nan), np.inf
    res = minimize(_collapse_cost, best[1], args=(data,), method="Nelder-Mead",
                   options={"xatol": 1e-9, "fatol": 1e-14, "maxiter": 4000, "maxfev": 8000})
    if res.fun <= best[0]:
        return res.x, float(res.fun)
    return best[1], best[0]


def fss_collapse(series,
                 dc_range: tuple[float, float] | None = None,
                 inv_nu_range: tuple[float, float] = (0.2, 2.0),
                 two_beta_nu_range: tuple[float, float] = (-1.0, 2.0),
                 grid: int = 13, leave_one_out: bool = True) -> CollapseResult:
    """Collapse ``O(Delta, L) L^(2 beta/nu)`` against ``L^(1/nu) (Delta - Dc)/Dc``.

    ``series`` maps ``L`` to ``(Delta values, order parameter values)`` (or is a
    sequence of ``(L, Delta values, values)``; repeated sizes are rejected).  The
    cost is the mean squared deviation of each curve from piecewise-linear
    interpolants of the others, divided by the variance of all rescaled
    values.  A coarse grid seeds a Nelder-Mead refinement; parameter errors
    are the spread of leave-one-size-out refits.
    """
    items = list(series.items()) if isinstance(series, Mapping) else [(L, (x, y)) for L, x, y in series]
    Ls = [int(L) for L, _ in items]
    if len(set(Ls)) != len(Ls):
        raise ValueError("duplicate system sizes")
    if len(Ls) < 2:
        raise ValueError("need at least two system sizes")
    data = {int(L): (np.asarray(x, dtype=float), np.asarray(y, dtype=float)) for L, (x, y) in items}
    if dc_range is None:
        lo = max(x.min() for x, _ in data.values())
        hi = min(x.max() for x, _ in data.values())
        if hi <= lo:
            return CollapseResult(np.nan, np.nan, np.nan, np.inf, False)
        pad = 0.05 * (hi - lo)
        dc_range = (lo + pad, hi - pad)
    p, cost = _fit_collapse(data, dc_range, inv_nu_range, two_beta_nu_range, grid)
    ok = bool(np.isfinite(cost))
    dc, inv_nu, b = p
    beta = b / (2 * inv_nu) if ok else np.nan
    errors = {}
    if ok and leave_one_out and len(data) >= 3:
        fits = []
        for L in data:
            sub = {k: v for k, v in data.items() if k != L}
            q, c = _fit_collapse(sub, dc_range, inv_nu_range, two_beta_nu_range, grid)
            if np.isfinite(c):
                fits.append((q[0], q[1], q[2] / (2 * q[1])))
        if len(fits) >= 2:
            f = np.array(fits)
            errors = {"delta_c": float(f[:, 0].std()), "inv_nu": float(f[:, 1].std()),
                      "beta": float(f[:, 2].std())}
    return CollapseResult(float(dc), float(inv_nu), float(beta), float(cost), ok, errors)


# ---------------------------------------------------------------------------
# Second-derivative peaks


@dataclass
class DerivativeResult:
    peaks: dict                      # L -> array of refined peak positions
    second_derivative: dict          # L -> (interior control values, d2E)
    delta_c: list = field(default_factory=list)
    delta_c_err: list = field(default_factory=list)


def second_derivative(x: Sequence[float], E: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    E = np.asarray(E, dtype=float)
    h = np.diff(x)
    if len(x) < 3 or not np.allclose(h, h[0], rtol=1e-6, atol=0):
        raise ValueError("central differences need at least three uniformly spaced points")
    d2 = (E[2:] - 2 * E[1:-1] + E[:-2]) / h[0] ** 2
    return x[1:-1], d2


def find_derivative_peaks(x: Sequence[float], E: Sequence[float], rel_prominence: float = 0.05) -> np.ndarray:
    """Peaks of ``|d2E/dx2|`` with parabolic refinement."""
    xi, d2 = second_derivative(x, E)
    a = np.abs(d2)
    top = a.max() if a.size else 0.0
    if top == 0:
        return np.zeros(0)
    idx, _ = find_peaks(a, prominence=rel_prominence * top)
    h = xi[1] - xi[0] if len(xi) > 1 else 1.0
    out = []
    for i in idx:
        y0, y1, y2 = a[i - 1], a[i], a[i + 1]
        den = y0 - 2 * y1 + y2
        shift = 0.5 * (y0 - y2) / den if den != 0 else 0.0
        out.append(xi[i] + float(np.clip(shift, -0.5, 0.5)) * h)
    return np.array(out)


def second_derivative_analysis(series: Mapping[int, tuple[Sequence[float], Sequence[float]]],
                               nu: float | None = None, rel_prominence: float = 0.05) -> DerivativeResult:
    """Per-size peaks of ``|E''|`` and, with ``nu`` and >= 3 sizes, the
    extrapolation ``Delta*(L) = Delta*_c + s L^(-nu)`` for every peak index."""
    peaks, d2s = {}, {}
    spacing = {}
    for L, (x, E) in series.items():
        xi, d2 = second_derivative(x, E)
        d2s[int(L)] = (xi, d2)
        p = find_derivative_peaks(x, E, rel_prominence)
        if len(p) == 0:
            raise ValueError(f"no interior peak found for L={L}")
        peaks[int(L)] = p
        spacing[int(L)] = float(np.asarray(x)[1] - np.asarray(x)[0])
    out = DerivativeResult(peaks, d2s)
    counts = {len(p) for p in peaks.values()}
    if nu is None or len(peaks) < 3 or len(counts) != 1:
        return out
    Ls = sorted(peaks)
    A = np.column_stack([np.ones(len(Ls)), np.array(Ls, dtype=float) ** (-nu)])
    AtA_inv = np.linalg.inv(A.T @ A)
    sigma = np.array([spacing[L] / 2 for L in Ls])
    for j in range(counts.pop()):
        y = np.array([peaks[L][j] for L in Ls])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        G = AtA_inv @ A.T
        err = float(np.sqrt(np.sum((G[0] * sigma) ** 2)))
        out.delta_c.append(float(coef[0]))
        out.delta_c_err.append(err)
    return out


# ---------------------------------------------------------------------------
# Bond-dimension extrapolation


@dataclass
class ExtrapolationResult:
    e_inf: float
    slope: float
    residual: float
    window: tuple


def extrapolate_energy(pairs: Sequence[tuple[float, float]], window: int = 3, tol: float = 1e-9) -> ExtrapolationResult:
    """Linear fit of ``E`` against ``1/m`` over the ``window`` largest ``m``."""
    pairs = sorted((float(m), float(e)) for m, e in pairs)
    ms = np.array([m for m, _ in pairs])
    if len(np.unique(ms)) != len(ms) or len(ms) < 3:
        raise ValueError("need at least three distinct bond dimensions")
    Es = np.array([e for _, e in pairs])
    if np.any(np.diff(Es) > tol):
        warnings.warn("energies are not non-increasing in m; extrapolation may be unreliable",
                      RuntimeWarning, stacklevel=2)
    w = min(max(window, 2), len(ms))
    x = 1.0 / ms[-w:]
    y = Es[-w:]
    A = np.column_stack([np.ones(w), x])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return ExtrapolationResult(float(coef[0]), float(coef[1]), resid, tuple(ms[-w:].astype(int)))
