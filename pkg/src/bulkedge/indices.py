"""Edge index, Chern marker and refined bulk index of a finite sample.

Normalization
-------------
All indices are reported in Chern units: the bare trace formulas are
multiplied by ``CHERN_UNITS = -2 pi`` so that a clean Qi-Wu-Zhang sample
with ``0 < delta < 2`` approaches +1, matching :func:`bulkedge.bloch.chern_number_fhs`.

With ``O = [H, x2] x1 - [H, x1] x2`` (anti-Hermitian) and ``A_k = i <psi_k|O|psi_k>``:

* edge index   ``E = CHERN_UNITS / (2 |Lambda_L|) * sum_k rho'(lambda_k) A_k``
* Chern marker ``M = CHERN_UNITS * (-i) / |Lambda_w| * sum_{n in window} tr(P[[P,x1],[P,x2]])(n,n)``
* correction   ``C = CHERN_UNITS / 2 * Re(i sum_{bulk k} rho'(lambda_k) / |Lambda_w| * sum_{n in window} (O P_k)(n,n))``

so that ``refined = M + C``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .lattice import BoxHamiltonian, box_size, parse_bc
from .spectral import EigenSystem, SwitchFunction, hs_quadrature, lower_spectral_bound, occupied_frame

CHERN_UNITS = -2.0 * np.pi

EDGE = "edge"
BULK = "bulk-localized"


def _require_simple(H: BoxHamiltonian):
    if parse_bc(H.bc)[0] != "simple":
        raise ValueError(f"edge quantities need simple boundary conditions, got {H.bc!r}")


def apply_O(H: BoxHamiltonian, psi: np.ndarray) -> np.ndarray:
    """``O psi`` with ``O = [H,x2] x1 - [H,x1] x2 = x1 H x2 - x2 H x1``."""
    x1 = H.position(1)[:, None] if psi.ndim == 2 else H.position(1)
    x2 = H.position(2)[:, None] if psi.ndim == 2 else H.position(2)
    S = H.sparse
    return x1 * (S @ (x2 * psi)) - x2 * (S @ (x1 * psi))


def angular_momenta(H: BoxHamiltonian, vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``A_k = i <psi_k|O|psi_k>`` for each column; returns real parts and imaginary residuals."""
    vectors = np.asarray(vectors).reshape(H.dim, -1)
    w = 1j * np.einsum("ik,ik->k", vectors.conj(), apply_O(H, vectors))
    return w.real, w.imag


def mode_angular_momentum(H: BoxHamiltonian, es: EigenSystem, k: int) -> float:
    """Angular momentum ``A_k`` of the ``k``-th stored eigenvector."""
    A, _ = angular_momenta(H, es.eigenvectors[:, k])
    return float(A[0])


def edge_index(H: BoxHamiltonian, es: EigenSystem, rho: SwitchFunction) -> tuple[float, float]:
    """Edge index of a simple-boundary sample and the magnitude of its imaginary part.

    Only eigenpairs in the support ``(a, b)`` of ``rho'`` contribute, so ``es``
    may be a windowed decomposition covering that interval.
    """
    _require_simple(H)
    idx = es.select(rho.a, rho.b)
    if len(idx) == 0:
        return 0.0, 0.0
    A, imag = angular_momenta(H, es.eigenvectors[:, idx])
    weight = rho.derivative(es.eigenvalues[idx])
    scale = CHERN_UNITS / (2 * box_size(H.L))
    return float(scale * np.dot(weight, A)), float(abs(scale * np.dot(weight, imag)))


def edge_index_hs(H: BoxHamiltonian, rho: SwitchFunction, K: int = 3, h: float = 0.01,
                  chunk: int = 1024) -> float:
    """Edge index from resolvents via an almost-analytic extension of ``rho``.

    Uses the identity

        Tr(O rho'(H)) = (1/pi) int d rho~/d zbar Tr(S_12(z) - S_21(z)) dm(z),
        S_ij = R [H, x_i] R [H, x_j] R,   R = (H - z)^{-1},

    which follows from divided differences of ``rho`` and ``[x1, x2] = 0``.
    Intended for small samples (dimension of a few dozen).
    """
    _require_simple(H)
    A = np.asarray(H.matrix, dtype=complex)
    x1, x2 = H.position(1), H.position(2)
    C1 = A * (x1[None, :] - x1[:, None])
    C2 = A * (x2[None, :] - x2[:, None])
    quad = hs_quadrature(rho, lower_spectral_bound(A) - 0.05, K, h)
    I = np.eye(A.shape[0])
    total = 0j
    for s in range(0, len(quad.z), chunk):
        z = quad.z[s:s + chunk]
        R = np.linalg.inv(A[None] - z[:, None, None] * I)
        R2 = R @ R
        # Tr(R C1 R C2 R) = Tr(C1 R C2 R^2)
        t12 = np.einsum("kij,kji->k", C1 @ R, C2 @ R2)
        t21 = np.einsum("kij,kji->k", C2 @ R, C1 @ R2)
        total += np.dot(quad.weights[s:s + chunk], t12 - t21)
    # the lower half plane contributes minus the conjugate of the upper half
    trace = 2j * total.imag
    value = 1j * trace / (2 * box_size(H.L))
    return float(CHERN_UNITS * value.real)


# --- Chern marker -------------------------------------------------------------------

def window_radius(L: int, window_fraction: float) -> int:
    if not 0.0 < window_fraction <= 1.0:
        raise ValueError(f"window fraction must lie in (0, 1], got {window_fraction}")
    return int(np.floor(window_fraction * L))


def window_basis(L: int, d: int, radius: int) -> np.ndarray:
    """Basis indices of all channels of sites in ``Lambda_radius`` inside ``Lambda_L``."""
    r = np.arange(-radius, radius + 1)
    n1, n2 = np.meshgrid(r, r, indexing="ij")
    sites = ((n1 + L) * (2 * L + 1) + (n2 + L)).ravel()
    return (sites[:, None] * d + np.arange(d)[None, :]).ravel()


def _marker_sum(Pw, apply_P, x1, x2, with_residual):
    """``sum_n Y(n,n)`` and optionally ``sum_n Z(n,n)`` over the window.

    ``Y = P x1 Q x2 P`` and ``Z = P x2 Q x1 P``, so that
    ``P[[P,x1],[P,x2]] = Z - Y``.
    """
    def diag_sum(xa, xb):
        U = xb[:, None] * Pw
        QU = U - apply_P(U)
        return np.sum(np.conj(xa[:, None] * Pw) * QU)

    Y = diag_sum(x1, x2)
    Z = diag_sum(x2, x1) if with_residual else np.conj(Y)
    return Y, Z


def _marker(Pw, apply_P, L, d, radius, return_residual):
    x = np.repeat(np.arange(-L, L + 1), 2 * L + 1)
    y = np.tile(np.arange(-L, L + 1), 2 * L + 1)
    x1, x2 = np.repeat(x, d).astype(float), np.repeat(y, d).astype(float)
    Y, Z = _marker_sum(Pw, apply_P, x1, x2, return_residual)
    value = CHERN_UNITS * (-1j) * (Z - Y) / box_size(radius)
    if return_residual:
        return float(value.real), float(abs(value.imag))
    return float(value.real)


def chern_marker(P: np.ndarray, L: int, window_fraction: float = 0.5, d: int = 2,
                 return_residual: bool = False):
    """Windowed Chern marker of a dense projector on ``Lambda_L (x) C^d``.

    Averages ``-i tr(P[[P,x1],[P,x2]])(n,n)`` over ``Lambda_w`` with
    ``w = floor(window_fraction * L)``, in Chern units.
    """
    P = np.asarray(P)
    win = window_basis(L, d, window_radius(L, window_fraction))
    return _marker(P[:, win], lambda U: P @ U, L, d, window_radius(L, window_fraction),
                   return_residual)


def chern_marker_frame(V: np.ndarray, L: int, window_fraction: float = 0.5, d: int = 2,
                       return_residual: bool = False):
    """Same as :func:`chern_marker` for ``P = V V^dagger`` given orthonormal columns ``V``."""
    radius = window_radius(L, window_fraction)
    win = window_basis(L, d, radius)
    Pw = V @ V[win].conj().T
    return _marker(Pw, lambda U: V @ (V.conj().T @ U), L, d, radius, return_residual)


# --- mode classification and refined index -----------------------------------------

@dataclass(frozen=True)
class InGapMode:
    """One eigenpair with eigenvalue in the support of ``rho'``."""

    energy: float
    angular_momentum: float
    boundary_weight: float
    label: str
    group: int


def boundary_weights(L: int, d: int, vectors: np.ndarray, width: int) -> np.ndarray:
    """Weight of each column on sites with ``dist_1(n, interior boundary) < width``.

    For a square box that distance is ``L - max(|n1|, |n2|)``.
    """
    sites = np.repeat(np.arange(-L, L + 1), 2 * L + 1), np.tile(np.arange(-L, L + 1), 2 * L + 1)
    dist = L - np.maximum(np.abs(sites[0]), np.abs(sites[1]))
    mask = np.repeat(dist < width, d)
    vectors = np.asarray(vectors).reshape(len(mask), -1)
    return np.sum(np.abs(vectors[mask]) ** 2, axis=0)


def degenerate_groups(energies: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Group labels for sorted energies, chaining neighbours closer than ``tol``."""
    if len(energies) == 0:
        return np.zeros(0, dtype=int)
    return np.concatenate([[0], np.cumsum(np.diff(energies) >= tol)])


def classify_modes(H: BoxHamiltonian, es: EigenSystem, interval: tuple[float, float],
                   width: int = 2, theta: float = 0.5) -> list[InGapMode]:
    """Label the eigenpairs with eigenvalue in ``interval`` as edge or bulk-localized.

    A degenerate group (eigenvalues within 1e-10) shares the mean boundary
    weight of its members and therefore a single label.
    """
    if width < 1:
        raise ValueError("boundary width must be at least 1")
    if not 0.0 < theta < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    idx = es.select(*interval)
    vecs = es.eigenvectors[:, idx]
    lam = es.eigenvalues[idx]
    w = boundary_weights(H.L, H.d, vecs, width)
    A, _ = angular_momenta(H, vecs) if len(idx) else (np.zeros(0), None)
    groups = degenerate_groups(lam)
    modes = []
    for g in np.unique(groups):
        members = np.nonzero(groups == g)[0]
        wg = float(np.mean(w[members]))
        label = EDGE if wg >= theta else BULK
        modes += [InGapMode(float(lam[k]), float(A[k]), float(w[k]) if len(members) == 1 else wg,
                            label, int(g)) for k in members]
    return modes


def refined_correction(H: BoxHamiltonian, es: EigenSystem, rho: SwitchFunction,
                       modes: list[InGapMode], window_fraction: float = 0.5) -> float:
    """Contribution of bulk-localized in-gap modes to the refined bulk index.

    Each bulk-localized eigenvector contributes
    ``rho'(lambda) / |Lambda_w| * sum_{n in window} (O psi)(n) . conj(psi(n))``;
    the sum is multiplied by ``i/2`` and reported in Chern units.
    """
    _require_simple(H)
    bulk = [m for m in modes if m.label == BULK]
    if not bulk:
        return 0.0
    radius = window_radius(H.L, window_fraction)
    win = window_basis(H.L, H.d, radius)
    # modes follow the order of es.select, so positions identify eigenvectors
    idx = es.select(rho.a, rho.b)
    if len(idx) != len(modes):
        raise ValueError("modes must be classified on the support of rho'")
    cols = idx[[k for k, m in enumerate(modes) if m.label == BULK]]
    psi = es.eigenvectors[:, cols]
    local = np.sum(np.conj(psi[win]) * apply_O(H, psi)[win], axis=0)
    weight = rho.derivative(es.eigenvalues[cols])
    total = 1j * np.dot(weight, local) / box_size(radius)
    return float(CHERN_UNITS * 0.5 * total.real)


@dataclass(frozen=True)
class IndexReport:
    """Indices and in-gap mode classification of one realization."""

    L: int
    t: float
    eta: float
    master_seed: int | None
    realization_index: int | None
    seed: int | None
    a: float
    b: float
    fermi_level: float
    window_fraction: float
    boundary_width: int
    threshold: float
    edge_index: float
    edge_index_imag_residual: float
    chern_marker: float
    refined_correction: float
    refined_bulk_index: float
    momentum_chern: int | None
    ingap_modes: tuple[InGapMode, ...] = field(default_factory=tuple)

    @property
    def n_edge_modes(self) -> int:
        return sum(m.label == EDGE for m in self.ingap_modes)

    @property
    def n_bulk_modes(self) -> int:
        return sum(m.label == BULK for m in self.ingap_modes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ingap_modes"] = [asdict(m) for m in self.ingap_modes]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> IndexReport:
        d = dict(d)
        d["ingap_modes"] = tuple(InGapMode(**m) for m in d["ingap_modes"])
        return cls(**d)


def compute_indices(H: BoxHamiltonian, es: EigenSystem, rho: SwitchFunction, *,
                    fermi_level: float | None = None, window_fraction: float = 0.5,
                    boundary_width: int = 2, threshold: float = 0.5,
                    momentum_chern: int | None = None) -> IndexReport:
    """All indices of one simple-boundary sample.

    ``es`` must contain every eigenpair below ``rho.b``; the Fermi level of
    the marker defaults to the centre of ``(a, b)``.
    """
    lam = 0.5 * (rho.a + rho.b) if fermi_level is None else float(fermi_level)
    edge, imag = edge_index(H, es, rho)
    marker = chern_marker_frame(occupied_frame(es, lam), H.L, window_fraction, H.d)
    modes = classify_modes(H, es, rho.support, boundary_width, threshold)
    corr = refined_correction(H, es, rho, modes, window_fraction)
    dis = H.metadata.get("disorder") or {}
    return IndexReport(
        L=H.L, t=float(dis.get("t", 0.0)), eta=float(dis.get("eta", float("nan"))),
        master_seed=dis.get("master_seed"), realization_index=dis.get("realization_index"),
        seed=dis.get("seed"), a=rho.a, b=rho.b, fermi_level=lam, window_fraction=window_fraction,
        boundary_width=boundary_width, threshold=threshold, edge_index=edge,
        edge_index_imag_residual=imag, chern_marker=marker, refined_correction=corr,
        refined_bulk_index=marker + corr, momentum_chern=momentum_chern, ingap_modes=tuple(modes))


def window_trace(M: np.ndarray, L: int, d: int, radius: int) -> complex:
    """``Tr_{Lambda_radius}(M)`` for an operator on ``Lambda_L (x) C^d``."""
    win = window_basis(L, d, radius)
    return complex(np.trace(M[np.ix_(win, win)]))


def cyclicity_defect(P: np.ndarray, L: int, d: int, radii, axis: int = 1) -> tuple[np.ndarray, float]:
    """``|Tr_{Lambda_l}(A B - B A)|`` for ``A = P``, ``B = [P, x_axis]``, and its log-log growth exponent."""
    x = np.repeat(np.repeat(np.arange(-L, L + 1), 2 * L + 1) if axis == 1
                  else np.tile(np.arange(-L, L + 1), 2 * L + 1), d).astype(float)
    B = P * x[None, :] - x[:, None] * P
    comm = P @ B - B @ P
    vals = np.array([abs(window_trace(comm, L, d, r)) for r in radii])
    slope = np.polyfit(np.log(np.asarray(radii, float)), np.log(vals), 1)[0]
    return vals, float(slope)
