"""Hermitian spectral calculus.

Eigendecompositions (full or restricted to an energy window), spectral
projectors, the smooth switch function ``rho``, eigenvalue counting by
Sylvester inertia, and a Helffer-Sjostrand quadrature that evaluates
``rho(H)`` from resolvents only.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb, factorial

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import expit

from .lattice import BoxHamiltonian


class EigenSolverError(RuntimeError):
    """The dense eigensolver failed or returned inaccurate pairs."""


class EigenvalueCollisionError(ValueError):
    """A projector was requested at an energy that coincides with an eigenvalue."""

    def __init__(self, lam, eigenvalue):
        super().__init__(f"lambda={lam!r} is within the tie guard of eigenvalue {eigenvalue!r}")
        self.lam = lam
        self.eigenvalue = eigenvalue


class QuadratureError(RuntimeError):
    """The Helffer-Sjostrand quadrature produced a non-finite result."""


def _dense(H) -> np.ndarray:
    return H.matrix if isinstance(H, BoxHamiltonian) else np.asarray(H)


def _operator(H):
    """Sparse form when available (cheap products), otherwise dense."""
    return H.sparse if isinstance(H, BoxHamiltonian) else np.asarray(H)


def norm_bound(H) -> float:
    """Upper bound ``sqrt(|H|_1 |H|_inf)`` on the spectral norm (equal for Hermitian)."""
    A = _operator(H)
    if sp.issparse(A):
        col = abs(A).sum(axis=0).max()
    else:
        col = np.abs(A).sum(axis=0).max()
    return float(col)


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Ascending eigenvalues and orthonormal eigenvectors (as columns).

    When computed over an energy window ``(lo, hi]`` only the eigenpairs
    inside the window are stored; ``window`` records the bounds and
    ``(-inf, inf)`` marks a complete decomposition.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    source_dim: int
    residual_bound: float
    window: tuple[float, float] = (-np.inf, np.inf)

    @property
    def complete(self) -> bool:
        return self.window == (-np.inf, np.inf)

    def covers(self, lo: float, hi: float) -> bool:
        """Whether every eigenvalue in ``(lo, hi)`` is stored."""
        return self.window[0] <= lo and hi <= self.window[1]

    def select(self, lo: float, hi: float) -> np.ndarray:
        """Indices of stored eigenvalues with ``lo < lambda < hi``."""
        if not self.covers(lo, hi):
            raise ValueError(f"eigen window {self.window} does not cover ({lo}, {hi})")
        ev = self.eigenvalues
        return np.nonzero((ev > lo) & (ev < hi))[0]


def eig(H, window: tuple[float, float] | None = None, *, check: bool = True,
        tol: float = 1e-10, method: str = "dense") -> EigenSystem:
    """Eigendecomposition of a Hermitian matrix or :class:`BoxHamiltonian`.

    Parameters
    ----------
    H : BoxHamiltonian or ndarray
    window : (float, float), optional
        Keep only eigenvalues in the half-open interval ``(lo, hi]``; either
        end may be infinite.  This uses LAPACK's MRRR driver, which is much
        cheaper than a full decomposition when few vectors are requested.
    check : bool
        Compute the residual bound and raise if it exceeds ``tol``.
    method : {"dense", "shift-invert"}
        ``"shift-invert"`` finds the eigenpairs of a finite window by sparse
        Lanczos iteration around its centre (see :func:`eig_shift_invert`).

    Returns
    -------
    EigenSystem
    """
    if method == "shift-invert":
        if window is None:
            raise ValueError("shift-invert needs a finite window")
        return eig_shift_invert(H, window, check=check, tol=tol)
    if method != "dense":
        raise ValueError(f"unknown eigensolver method {method!r}")
    A = _dense(H)
    n = A.shape[0]
    if n == 0:
        return EigenSystem(np.zeros(0), np.zeros((0, 0), complex), 0, 0.0)
    kwargs = {}
    lo, hi = (-np.inf, np.inf) if window is None else (float(window[0]), float(window[1]))
    if (lo, hi) != (-np.inf, np.inf):
        bound = norm_bound(H) + 1.0
        kwargs["subset_by_value"] = (max(lo, -bound), min(hi, bound))
    try:
        w, V = sla.eigh(A, driver="evr", check_finite=False, **kwargs)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenSolverError(str(exc)) from exc
    residual = _residual(H, w, V, tol) if check else 0.0
    return EigenSystem(w, V, n, residual, (lo, hi))


def _residual(H, w, V, tol):
    R = _operator(H) @ V - V * w
    scale = max(norm_bound(H), np.finfo(float).tiny)
    residual = float(np.max(np.linalg.norm(R, axis=0)) / scale) if len(w) else 0.0
    if residual > tol:
        raise EigenSolverError(f"eigen-residual {residual:.3e} exceeds {tol:.1e}")
    return residual


def eig_shift_invert(H, window: tuple[float, float], *, check: bool = True, tol: float = 1e-10,
                     k0: int = 32) -> EigenSystem:
    """Eigenpairs in ``(lo, hi]`` from shift-invert Lanczos on the sparse matrix.

    The ``k`` eigenvalues nearest the window centre are computed with a fixed
    start vector; ``k`` doubles until at least one of them lies outside the
    window, which certifies that every eigenvalue inside was found.  The
    vectors are re-orthonormalized by a Rayleigh-Ritz step so that degenerate
    eigenvalues get an orthonormal basis.  Small matrices, or windows holding
    most of the spectrum, fall back to the dense solver.
    """
    lo, hi = float(window[0]), float(window[1])
    if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
        raise ValueError("shift-invert needs a finite window lo < hi")
    S = sp.csc_matrix(_operator(H), dtype=complex)
    n = S.shape[0]
    if n < 200:
        return eig(H, window, check=check, tol=tol)
    sigma, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    try:
        lu = spla.splu(S - sigma * sp.identity(n, dtype=complex, format="csc"))
    except RuntimeError as exc:
        raise EigenSolverError(f"window centre {sigma} is an eigenvalue: {exc}") from exc
    op = spla.LinearOperator((n, n), matvec=lu.solve, dtype=complex)
    v0 = np.full(n, 1.0 / np.sqrt(n), dtype=complex)
    k = min(k0, n // 4)
    while True:
        try:
            w, V = spla.eigsh(S, k=k, sigma=sigma, which="LM", OPinv=op, v0=v0, tol=0)
        except spla.ArpackError as exc:
            raise EigenSolverError(str(exc)) from exc
        if np.max(np.abs(w - sigma)) > half:
            break
        if 2 * k > n // 4:
            return eig(H, window, check=check, tol=tol)
        k *= 2
    Q, _ = np.linalg.qr(V)
    w, Z = np.linalg.eigh(Q.conj().T @ (S @ Q))
    V = Q @ Z
    keep = (w > lo) & (w <= hi)
    w, V = w[keep], V[:, keep]
    residual = _residual(H, w, V, tol) if check else 0.0
    return EigenSystem(w, V, n, residual, (lo, hi))


def spectral_projector(es: EigenSystem, lam: float, tie: float = 1e-12) -> np.ndarray:
    """Fermi projection ``P = sum_{lambda_k < lam} v_k v_k^dagger``."""
    V = occupied_frame(es, lam, tie)
    return V @ V.conj().T


def occupied_frame(es: EigenSystem, lam: float, tie: float = 1e-12) -> np.ndarray:
    """Orthonormal columns spanning the range of the Fermi projection below ``lam``."""
    if es.window[0] != -np.inf or es.window[1] < lam:
        raise ValueError("eigen window must contain (-inf, lam]")
    ev = es.eigenvalues
    if len(ev):
        j = int(np.argmin(np.abs(ev - lam)))
        if abs(ev[j] - lam) < tie:
            raise EigenvalueCollisionError(lam, float(ev[j]))
    return es.eigenvectors[:, ev < lam]


def apply_function(es: EigenSystem, f) -> np.ndarray:
    """``f(H) = sum_k f(lambda_k) v_k v_k^dagger`` on a complete decomposition."""
    if not es.complete:
        raise ValueError("apply_function needs a complete eigendecomposition")
    fv = np.asarray(f(es.eigenvalues))
    V = es.eigenvectors
    return (V * fv) @ V.conj().T


# --- switch function ----------------------------------------------------------------

_EXP_CUTOFF = 700.0


@dataclass(frozen=True)
class SwitchFunction:
    """Smooth step from 1 (``lambda <= a``) to 0 (``lambda >= b``).

    ``rho(x) = f(b - x) / (f(b - x) + f(x - a))`` with ``f(s) = exp(-1/s)``
    for ``s > 0`` and 0 otherwise.  Inside ``(a, b)`` this is the logistic
    function of ``g(x) = 1/(x - a) - 1/(b - x)``, which is how it is
    evaluated.
    """

    a: float
    b: float

    def __post_init__(self):
        if not float(self.a) < float(self.b):
            raise ValueError(f"switch interval needs a < b, got ({self.a}, {self.b})")

    @property
    def support(self) -> tuple[float, float]:
        """Open interval carrying ``rho'``."""
        return self.a, self.b

    def _g(self, x):
        inside = (x > self.a) & (x < self.b)
        xi = np.where(inside, x, 0.5 * (self.a + self.b))
        return inside, xi, 1.0 / (xi - self.a) - 1.0 / (self.b - xi)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        inside, _, g = self._g(x)
        return np.where(inside, expit(g), np.where(x <= self.a, 1.0, 0.0))

    def derivative(self, x):
        """Closed form ``rho' = -rho (1 - rho) (1/(x-a)^2 + 1/(b-x)^2)``."""
        x = np.asarray(x, dtype=float)
        inside, xi, g = self._g(x)
        inside &= np.abs(g) < _EXP_CUTOFF
        # points next to a or b would underflow (x - a)^2; they are flat anyway
        xi = np.where(inside, xi, 0.5 * (self.a + self.b))
        dg = 1.0 / (xi - self.a) ** 2 + 1.0 / (self.b - xi) ** 2
        return np.where(inside, -expit(g) * expit(-g) * dg, 0.0)

    def derivatives(self, x, order: int) -> np.ndarray:
        """``rho^{(j)}(x)`` for ``j = 0..order``, shape ``(order + 1,) + x.shape``."""
        x = np.asarray(x, dtype=float)
        out = np.zeros((order + 1,) + x.shape)
        out[0] = self(x)
        if order >= 1:
            out[1] = self.derivative(x)
        if order >= 2:
            # the symbolic forms contain exp(j |g|); beyond |g| = 150 every
            # derivative is below exp(-100) and is set to zero
            inside, xi, g = self._g(x)
            inside &= np.abs(g) < 150.0
            xi = np.where(inside, xi, 0.5 * (self.a + self.b))
            for j in range(2, order + 1):
                out[j] = np.where(inside, _switch_derivative(j)(xi, self.a, self.b), 0.0)
        return out


@lru_cache(maxsize=None)
def _switch_derivative(j: int):
    """Numerical function for the ``j``-th derivative of the switch, built symbolically."""
    import sympy

    x, a, b = sympy.symbols("x a b", real=True)
    rho = 1 / (1 + sympy.exp(1 / (b - x) - 1 / (x - a)))
    return sympy.lambdify((x, a, b), sympy.diff(rho, x, j), modules="numpy")


def switch_function(a: float, b: float) -> SwitchFunction:
    return SwitchFunction(float(a), float(b))


# --- eigenvalue counting ----------------------------------------------------------

def negative_count(A: np.ndarray) -> int:
    """Number of negative eigenvalues of a Hermitian matrix via Bunch-Kaufman LDL^H."""
    _, D, _ = sla.ldl(A, hermitian=True, check_finite=False)
    n = D.shape[0]
    count, i = 0, 0
    while i < n:
        if i + 1 < n and D[i + 1, i] != 0:
            count += int(np.sum(np.linalg.eigvalsh(D[i:i + 2, i:i + 2]) < 0))
            i += 2
        else:
            count += int(D[i, i].real < 0)
            i += 1
    return count


def count_eigenvalues(H, lo: float, hi: float) -> int:
    """Number of eigenvalues in the open interval ``(lo, hi)`` by Sylvester inertia.

    Uses ``#{lambda < hi} - #{lambda <= lo}``; a shift that hits an eigenvalue
    exactly is measure-zero for disordered input and is resolved in favour of
    the open interval.
    """
    A = np.array(_dense(H), dtype=complex)
    I = np.eye(A.shape[0])
    below_hi = negative_count(A - hi * I)
    below_lo = A.shape[0] - negative_count(lo * I - A)
    return max(below_hi - below_lo, 0)


# --- Helffer-Sjostrand -------------------------------------------------------------

def lower_spectral_bound(H: np.ndarray, iterations: int = 40) -> float:
    """Certified lower bound on the spectrum from Cholesky factorizations.

    ``H - c I`` is positive definite exactly when ``c < lambda_min``.  The
    largest such ``c`` is bracketed by bisection between a Gershgorin bound
    and the smallest diagonal entry.
    """
    H = np.asarray(H)
    radius = np.abs(H).sum(axis=1) - np.abs(np.diag(H))
    lo = float(np.min(np.diag(H).real - radius)) - 1e-3
    hi = float(np.min(np.diag(H).real))
    I = np.eye(H.shape[0])
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        try:
            np.linalg.cholesky(H - mid * I)
            lo = mid
        except np.linalg.LinAlgError:
            hi = mid
    return lo


@dataclass(frozen=True)
class HSQuadrature:
    """Quadrature nodes ``z`` (upper half plane) and weights for a HS integral.

    For Hermitian ``H``, ``f(H) ~ W + W^dagger`` with
    ``W = sum_j weights[j] (H - z_j)^{-1}``.
    """

    z: np.ndarray
    weights: np.ndarray


def hs_quadrature(rho: SwitchFunction, lower: float, K: int = 3, h: float = 0.01,
                  y_flat: float = 0.5, y_max: float = 1.0) -> HSQuadrature:
    """Nodes and weights for ``rho(H)`` with spectrum contained in ``(lower, inf)``.

    ``rho`` is multiplied by a smooth cut-off equal to 1 on ``[lower - 0.25, inf)``
    and 0 below ``lower - 1.25``, giving a compactly supported ``f`` that agrees
    with ``rho`` on the spectrum.  The almost-analytic extension is

        f~(x + iy) = chi(y) sum_{j <= K} f^{(j)}(x) (iy)^j / j!

    with ``chi = 1`` for ``|y| <= y_flat`` and ``0`` for ``|y| >= y_max``, whence

        d f~/d zbar = (1/2) [chi f^{(K+1)} (iy)^K / K! + i chi' sum_j f^{(j)} (iy)^j / j!].

    The area integral ``(1/pi) int d f~/d zbar (H - z)^{-1}`` is evaluated by
    the midpoint rule with step ``h``; nodes with vanishing weight are dropped.
    """
    x_lo = min(lower - 1.25, rho.a)
    x_hi = rho.b
    nx = int(np.ceil((x_hi - x_lo) / h))
    ny = int(np.ceil(y_max / h))
    x = x_lo + (np.arange(nx) + 0.5) * h
    y = (np.arange(ny) + 0.5) * h

    cut = switch_function(lower - 1.25, lower - 0.25)
    r = rho.derivatives(x, K + 1)
    c = -cut.derivatives(x, K + 1)
    c[0] += 1.0
    f = np.array([sum(comb(j, i) * r[i] * c[j - i] for i in range(j + 1)) for j in range(K + 2)])

    ychi = switch_function(y_flat, y_max)
    chi = ychi(y)
    dchi = ychi.derivative(y)
    iy = 1j * y
    taylor = sum(np.outer(f[j], iy ** j / factorial(j)) for j in range(K + 1))
    dbar = 0.5 * (np.outer(f[K + 1], chi * iy ** K / factorial(K)) + 1j * taylor * dchi)
    X, Y = np.meshgrid(x, y, indexing="ij")
    keep = dbar != 0
    return HSQuadrature((X + 1j * Y)[keep], dbar[keep] * h * h / np.pi)


def hs_apply(H: np.ndarray, quad: HSQuadrature, chunk: int = 2048) -> np.ndarray:
    """Evaluate ``W + W^dagger`` with ``W = sum_j w_j (H - z_j)^{-1}`` by batched inversion."""
    H = np.asarray(H, dtype=complex)
    n = H.shape[0]
    I = np.eye(n)
    W = np.zeros((n, n), dtype=complex)
    for s in range(0, len(quad.z), chunk):
        z = quad.z[s:s + chunk]
        R = np.linalg.inv(H[None, :, :] - z[:, None, None] * I)
        W += np.einsum("k,kij->ij", quad.weights[s:s + chunk], R)
    out = W + W.conj().T
    if not np.all(np.isfinite(out)):
        raise QuadratureError("non-finite Helffer-Sjostrand quadrature")
    return out


def hs_function(H, rho: SwitchFunction, K: int = 3, h: float = 0.01) -> np.ndarray:
    """``rho(H)`` from resolvents alone (no eigendecomposition)."""
    A = np.asarray(_dense(H), dtype=complex)
    return hs_apply(A, hs_quadrature(rho, lower_spectral_bound(A) - 0.05, K, h))


def hs_validate(H, rho: SwitchFunction, K: int = 3, h: float = 0.01) -> float:
    """Operator-norm distance between the resolvent and eigendecomposition routes to ``rho(H)``."""
    A = np.asarray(_dense(H), dtype=complex)
    if A.shape[0] > 64:
        raise ValueError("hs_validate is limited to dimension 64")
    hs = hs_function(A, rho, K, h)
    ref = apply_function(eig(A, check=False), rho)
    return float(np.linalg.norm(hs - ref, 2))
