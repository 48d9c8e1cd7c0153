"""Green-function probes of localization.

Fractional moments of the Green function, Combes-Thomas decay outside the
spectrum, Lifshitz-tail statistics of periodic boxes, boundary moments and
an exact check of the geometric decoupling resolvent identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import stats

from .lattice import (BoxHamiltonian, HoppingKernel, assemble_hamiltonian, box_sites, boundary_sets,
                      sample_disorder, site_index)
from .seeding import derive_seed
from .spectral import count_eigenvalues

ZERO_NORM = 1e-300


class SingularResolventError(RuntimeError):
    """``H - z`` could not be factorized."""


class Resolvent:
    """Sparse LU factorization of ``H - z`` reused for many Green-function blocks.

    Parameters
    ----------
    H : BoxHamiltonian
    z : complex
        Spectral parameter; real values must lie outside the spectrum.
    """

    def __init__(self, H: BoxHamiltonian, z: complex):
        self.H = H
        self.z = complex(z)
        A = (H.sparse - self.z * sp.identity(H.dim, dtype=complex, format="csr")).tocsc()
        try:
            self._lu = spla.splu(A)
        except RuntimeError as exc:
            raise SingularResolventError(f"H - z is singular at z={self.z}: {exc}") from exc

    def _unit(self, n) -> np.ndarray:
        E = np.zeros((self.H.dim, self.H.d), dtype=complex)
        s = self.H.site_slice(n)
        E[s, :] = np.eye(self.H.d)
        return E

    def _check(self, X):
        if not np.all(np.isfinite(X)):
            raise SingularResolventError(f"non-finite solve at z={self.z}")
        return X

    def columns(self, m) -> np.ndarray:
        """``G(., m)`` as a ``(dim, d)`` array."""
        return self._check(self._lu.solve(self._unit(m)))

    def rows(self, n) -> np.ndarray:
        """``G(n, .)`` as a ``(d, dim)`` array (one transposed solve)."""
        return self._check(self._lu.solve(self._unit(n), trans="T")).T

    def block(self, n, m) -> np.ndarray:
        return self.rows(n)[:, self.H.site_slice(m)]

    def row_blocks(self, n, sites) -> np.ndarray:
        """``G(n, m)`` for each site ``m`` in ``sites``, shape ``(len(sites), d, d)``."""
        R = self.rows(n)
        d = self.H.d
        cols = np.array([site_index(self.H.L, m) for m in sites]) * d
        return np.stack([R[:, c:c + d] for c in cols])


def green_block(H: BoxHamiltonian, z: complex, n, m) -> np.ndarray:
    """Block ``G(n, m; z)`` of ``(H - z)^{-1}``."""
    return Resolvent(H, z).block(n, m)


def _ols(x, y):
    """Least-squares line ``y = c0 + c1 x``; returns ``(c0, c1, r2)``."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    res = stats.linregress(x, y)
    return float(res.intercept), float(res.slope), float(res.rvalue ** 2)


# --- fractional moments ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GreenSampleSet:
    """Per-realization Green-function norms along a ray and their fractional-moment fit.

    ``norms[i, j]`` is ``|G(n0, n0 + r_j e1; z)|_F`` for realization ``i``;
    ``values = norms ** s``.  Zero norms are stored as NaN and counted in
    ``dropped``.
    """

    z: complex
    s: float
    anchor: tuple[int, int]
    distances: np.ndarray
    norms: np.ndarray
    N: int
    failures: int
    dropped: int
    fit_range: tuple[int, int]
    C: float
    alpha: float
    r2: float

    @property
    def values(self) -> np.ndarray:
        return self.norms ** self.s

    @property
    def means(self) -> np.ndarray:
        return np.nanmean(self.values, axis=0)

    @property
    def stderr(self) -> np.ndarray:
        v = self.values
        n = np.sum(np.isfinite(v), axis=0)
        return np.nanstd(v, axis=0, ddof=1) / np.sqrt(n) if self.N > 1 else np.full(v.shape[1], np.nan)

    def summary(self) -> dict:
        return {"z_real": self.z.real, "z_imag": self.z.imag, "s": self.s, "N": self.N,
                "failures": self.failures, "dropped": self.dropped, "fit_range": list(self.fit_range),
                "C": self.C, "alpha": self.alpha, "r2": self.r2}


def fractional_moment_scan(kernel: HoppingKernel, L: int, t: float, eta: float, lam: float, eps: float,
                           s: float, N: int, master_seed: int, *, anchor=(0, 0),
                           fit_range: tuple[int, int] | None = None) -> GreenSampleSet:
    """Monte-Carlo fractional moments ``E |G(0, r e1; lam + i eps)|^s`` for ``r = 1 .. L-2``.

    The exponential fit ``log mean = log C - alpha r`` uses ``r`` in
    ``[2, L-2]`` unless ``fit_range`` is given.
    """
    if not 0.0 < s <= 1.0:
        raise ValueError("s must lie in (0, 1]")
    if not eps > 0:
        raise ValueError("eps must be positive")
    if N < 1:
        raise ValueError("N must be at least 1")
    if L < 4:
        raise ValueError("L must be at least 4")
    z = complex(lam, eps)
    r = np.arange(1, L - 1)
    sites = [(anchor[0] + k, anchor[1]) for k in r]
    norms = np.full((N, len(r)), np.nan)
    failures = 0
    for i in range(N):
        dis = sample_disorder(L, kernel.d, eta, t, master_seed, i)
        H = assemble_hamiltonian(kernel, dis, "simple")
        try:
            blocks = Resolvent(H, z).row_blocks(anchor, sites)
        except SingularResolventError:
            failures += 1
            continue
        norms[i] = np.linalg.norm(blocks, axis=(1, 2))
    zero = norms < ZERO_NORM
    dropped = int(np.sum(zero))
    norms[zero] = np.nan
    lo, hi = fit_range or (2, L - 2)
    sel = (r >= lo) & (r <= hi)
    means = np.nanmean(norms ** s, axis=0)
    c0, c1, r2 = _ols(r[sel], np.log(means[sel]))
    return GreenSampleSet(z, float(s), tuple(anchor), r, norms, N, failures, dropped, (lo, hi),
                          float(np.exp(c0)), -c1, r2)


# --- Combes-Thomas ------------------------------------------------------------------

@dataclass(frozen=True)
class CombesThomasRow:
    energy: float
    distance: float
    rate: float
    saturated: bool


@dataclass(frozen=True)
class CombesThomasTable:
    rows: tuple[CombesThomasRow, ...]

    @property
    def monotone(self) -> bool:
        """Rates non-decreasing in distance to the spectrum."""
        rows = sorted(self.rows, key=lambda r: r.distance)
        rates = [r.rate for r in rows]
        return all(b >= a for a, b in zip(rates, rates[1:]))


def shell_envelope(H: BoxHamiltonian, G_row: np.ndarray, anchor) -> tuple[np.ndarray, np.ndarray]:
    """``max |G(n0, m)|`` over l1-shells ``|m - n0|_1 = r`` that fit inside the box."""
    sites = box_sites(H.L)
    d = H.d
    blocks = G_row.reshape(d, len(sites), d).transpose(1, 0, 2)
    norms = np.linalg.norm(blocks, axis=(1, 2))
    dist = np.abs(sites - np.asarray(anchor)).sum(axis=1)
    R = H.L - int(np.max(np.abs(anchor)))
    r = np.arange(1, R + 1)
    return r, np.array([norms[dist == k].max() for k in r])


def combes_thomas_probe(H: BoxHamiltonian, energies, anchor=(0, 0), *, spectrum: np.ndarray | None = None,
                        min_distance: float = 1e-8) -> CombesThomasTable:
    """Decay rate of ``|G(n0, m; lambda)|`` in ``|n0 - m|_1`` for real ``lambda`` outside the spectrum.

    The rate is minus the least-squares slope of the log shell envelope over
    ``r >= 2``; an identically vanishing envelope is reported as an infinite,
    saturated rate.
    """
    if spectrum is None:
        spectrum = np.linalg.eigvalsh(H.matrix)
    rows = []
    for lam in energies:
        dist = float(np.min(np.abs(spectrum - lam)))
        if dist <= min_distance:
            raise ValueError(f"lambda={lam} lies in the spectrum")
        G = Resolvent(H, lam).rows(anchor)
        r, env = shell_envelope(H, G, anchor)
        if np.all(env < ZERO_NORM):
            rows.append(CombesThomasRow(float(lam), dist, float("inf"), True))
            continue
        sel = (r >= 2) & (env >= ZERO_NORM)
        if np.sum(sel) < 2:
            sel = env >= ZERO_NORM
        _, slope, _ = _ols(r[sel], np.log(env[sel]))
        rows.append(CombesThomasRow(float(lam), dist, -slope, False))
    return CombesThomasTable(tuple(rows))


# --- Lifshitz tails -----------------------------------------------------------------

def wilson_interval(hits: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion (95% by default)."""
    if n == 0:
        return 0.0, 1.0
    p = hits / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass(frozen=True)
class LifshitzEstimate:
    """Fraction ``p(L)`` of periodic boxes with an eigenvalue within ``L^-beta`` of ``lambda0``."""

    Ls: tuple[int, ...]
    beta: float
    eta: float
    N: int
    hits: tuple[int, ...]
    p: tuple[float, ...]
    intervals: tuple[tuple[float, float], ...]
    slope: float
    slope_range: tuple[float, float]
    radius_scale: float = 1.0

    @property
    def strictly_decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.p, self.p[1:]))

    def summary(self) -> dict:
        return {"L": list(self.Ls), "beta": self.beta, "eta": self.eta, "N": self.N, "hits": list(self.hits),
                "p": list(self.p), "wilson": [list(c) for c in self.intervals], "slope": self.slope,
                "slope_range": list(self.slope_range), "radius_scale": self.radius_scale}


def _loglog_slope(Ls, p):
    p = np.asarray(p, float)
    ok = p > 0
    if np.sum(ok) < 2:
        return float("nan")
    return _ols(np.log(np.asarray(Ls, float)[ok]), np.log(p[ok]))[1]


def lifshitz_probe(kernel: HoppingKernel, Ls, beta: float, eta: float, N: int, master_seed: int, *,
                   t: float = 1.0, radius_scale: float = 1.0) -> LifshitzEstimate:
    """Estimate ``p(L) = P(sigma(H_periodic) meets (lambda0 - r_L, lambda0 + r_L))``, ``r_L = L^-beta``.

    Eigenvalues are counted by Sylvester inertia (two LDL factorizations per
    sample).  Each ``L`` uses its own sub-ensemble with master seed
    ``derive_seed(master_seed, L)``.  ``slope_range`` collects the log-log
    slopes obtained from the extreme Wilson-interval endpoints.
    """
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    Ls = tuple(int(L) for L in Ls)
    lam0 = kernel.fermi_level
    hits = []
    for L in Ls:
        radius = radius_scale * L ** (-beta)
        sub = derive_seed(master_seed, L)
        count = 0
        for i in range(N):
            dis = sample_disorder(L, kernel.d, eta, t, sub, i)
            H = assemble_hamiltonian(kernel, dis, "periodic")
            count += count_eigenvalues(H, lam0 - radius, lam0 + radius) > 0
        hits.append(count)
    p = tuple(h / N for h in hits)
    ci = tuple(wilson_interval(h, N) for h in hits)
    half = len(Ls) // 2
    steep = [c[1] if j < half else c[0] for j, c in enumerate(ci)]
    shallow = [c[0] if j < half else c[1] for j, c in enumerate(ci)]
    slopes = [_loglog_slope(Ls, steep), _loglog_slope(Ls, shallow)]
    return LifshitzEstimate(Ls, float(beta), float(eta), int(N), tuple(hits), p, ci,
                            _loglog_slope(Ls, p), (min(slopes), max(slopes)), float(radius_scale))


# --- boundary moments ---------------------------------------------------------------

@dataclass(frozen=True)
class BoundaryMoment:
    L: int
    mean: float
    stderr: float
    N: int
    energies: tuple[float, ...]
    per_realization: np.ndarray = field(repr=False)


def boundary_moment_probe(kernel: HoppingKernel, L: int, beta: float, eta: float, N: int, s: float,
                          master_seed: int, *, t: float = 1.0, eps: float = 1e-3,
                          n_energies: int = 3) -> BoundaryMoment:
    """Mean of ``|G(0, n; lambda + i eps)|^s`` over the interior boundary, energies and realizations.

    Energies form a uniform grid on ``[lambda0 - L^-beta / 2, lambda0 + L^-beta / 2]``.
    """
    if not 0.0 < s < 1.0:
        raise ValueError("s must lie in (0, 1)")
    half = 0.5 * L ** (-beta)
    lam0 = kernel.fermi_level
    energies = np.linspace(lam0 - half, lam0 + half, n_energies) if n_energies > 1 else np.array([lam0])
    boundary = [tuple(n) for n in boundary_sets(L)[0].tolist()]
    per = np.empty(N)
    for i in range(N):
        dis = sample_disorder(L, kernel.d, eta, t, master_seed, i)
        H = assemble_hamiltonian(kernel, dis, "simple")
        vals = [np.linalg.norm(Resolvent(H, complex(lam, eps)).row_blocks((0, 0), boundary), axis=(1, 2)) ** s
                for lam in energies]
        per[i] = np.mean(vals)
    se = float(np.std(per, ddof=1) / np.sqrt(N)) if N > 1 else float("nan")
    return BoundaryMoment(int(L), float(np.mean(per)), se, int(N), tuple(float(e) for e in energies), per)


# --- geometric decoupling --------------------------------------------------------------

def decoupling_residual(kernel: HoppingKernel, M: int, L: int, z: complex, eta: float, master_seed: int, *,
                        t: float = 1.0, realization_index: int = 0) -> float:
    """Check the two-step resolvent identity on an ambient box ``Lambda_M``.

    With ``F^(l) = H - H^(l)`` the hops between ``Lambda_l`` and the rest of
    the ambient box, for every ``m`` with ``|m|_inf > L + 1``::

        G(0, m) = sum G_L(0, u) F^(L)(u, u') G(u', v) F^(L+1)(v, v') G_out(v', m)

    where ``G_L`` is the resolvent of ``H`` restricted to ``Lambda_L`` and
    ``G_out`` that of ``H`` restricted to ``Lambda_M minus Lambda_{L+1}``.
    Returns the largest entrywise deviation.
    """
    if complex(z).imag == 0:
        raise ValueError("z must have nonzero imaginary part")
    if not (L >= 1 and L + 1 < M):
        raise ValueError("need 1 <= L and L + 1 < M")
    dis = sample_disorder(M, kernel.d, eta, t, master_seed, realization_index)
    H = assemble_hamiltonian(kernel, dis, "simple")
    F_in = (H.sparse - assemble_hamiltonian(kernel, dis, f"decoupled:{L}").sparse).toarray()
    F_out = (H.sparse - assemble_hamiltonian(kernel, dis, f"decoupled:{L + 1}").sparse).toarray()
    A = H.matrix - z * np.eye(H.dim)
    G = np.linalg.inv(A)

    radius = np.repeat(np.max(np.abs(box_sites(M)), axis=1), kernel.d)
    inner = np.nonzero(radius <= L)[0]
    outer = np.nonzero(radius > L + 1)[0]
    G_in = np.zeros((H.dim, H.dim), dtype=complex)
    G_in[np.ix_(inner, inner)] = np.linalg.inv(A[np.ix_(inner, inner)])
    G_out = np.zeros((H.dim, H.dim), dtype=complex)
    G_out[np.ix_(outer, outer)] = np.linalg.inv(A[np.ix_(outer, outer)])

    origin = H.site_slice((0, 0))
    chain = G_in[origin] @ F_in @ G @ F_out @ G_out[:, outer]
    return float(np.max(np.abs(G[origin][:, outer] - chain)))


def hop_support(F: np.ndarray, L: int, d: int) -> set[tuple[tuple[int, int], tuple[int, int]]]:
    """Site pairs carrying a nonzero block of an operator on ``Lambda_L (x) C^d``."""
    sites = [tuple(n) for n in box_sites(L).tolist()]
    B = np.abs(F).reshape(len(sites), d, len(sites), d).sum(axis=(1, 3))
    return {(sites[i], sites[j]) for i, j in zip(*np.nonzero(B))}
