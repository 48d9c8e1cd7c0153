"""Bloch matrices, band-gap checks and the lattice Chern number.

The Bloch transform uses the sign convention ``h(k) = sum_v T(v) exp(+i k.v)``
with ``T(v) = H0(n, n + v)``.  With this convention the Qi-Wu-Zhang kernel at
``0 < delta < 2`` has Chern number +1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import HoppingKernel


class GapError(RuntimeError):
    """Raised when a gap-dependent quantity is requested at a gapless energy."""


@dataclass(frozen=True)
class BlochMatrix:
    k: tuple[float, float]
    h: np.ndarray

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.h)


@dataclass(frozen=True)
class ChernResult:
    """Outcome of the plaquette Chern-number computation.

    Attributes
    ----------
    chern : int
        Rounded Chern number of the bands below ``lambda0``.
    raw_sum : float
        Sum of plaquette phases divided by ``2 pi`` before rounding.
    grid : int
        Number of k-points per axis.
    gap_at_fermi : float
        ``min |lambda - lambda0|`` over the grid.
    """

    chern: int
    raw_sum: float
    grid: int
    gap_at_fermi: float

    def to_dict(self) -> dict:
        return {"chern": self.chern, "raw_sum": self.raw_sum, "grid": self.grid,
                "gap_at_fermi": self.gap_at_fermi}


def bloch_hamiltonians(kernel: HoppingKernel, k1, k2) -> np.ndarray:
    """Bloch matrices on broadcast arrays of momenta, shape ``(..., d, d)``."""
    k1, k2 = np.broadcast_arrays(np.asarray(k1, float), np.asarray(k2, float))
    h = np.zeros(k1.shape + (kernel.d, kernel.d), dtype=complex)
    h += kernel.hopping((0, 0)) + np.diag(kernel.onsite_potential)
    for v in kernel.displacements():
        phase = np.exp(1j * (k1 * v[0] + k2 * v[1]))
        h += phase[..., None, None] * kernel.hopping(v)
    return h


def bloch_matrix(kernel: HoppingKernel, k) -> BlochMatrix:
    """``h(k) = T(0) + diag(V) + sum_{v != 0} T(v) exp(i k.v)``."""
    k = (float(k[0]), float(k[1]))
    return BlochMatrix(k, bloch_hamiltonians(kernel, k[0], k[1]))


def _grid(N_k):
    k = 2 * np.pi * np.arange(N_k) / N_k
    return np.meshgrid(k, k, indexing="ij")


def _grid_gap(kernel, lambda0, N_k):
    k1, k2 = _grid(N_k)
    ev = np.linalg.eigvalsh(bloch_hamiltonians(kernel, k1, k2))
    return float(np.min(np.abs(ev - lambda0)))


def verify_gap(kernel: HoppingKernel, lambda0: float = 0.0, N_k: int = 32, *,
               rtol: float = 0.01, max_grid: int = 1024, zero_tol: float = 1e-9) -> tuple[float, bool]:
    """Check that ``lambda0`` lies in a spectral gap of the periodic Hamiltonian.

    The grid distance ``Delta = min_k min_j |lambda_j(k) - lambda0|`` is
    recomputed with ``N_k`` doubled until two successive values agree within
    ``rtol``.  A gap that keeps shrinking under refinement, or a value below
    ``zero_tol``, is reported as gapless.

    Returns
    -------
    (float, bool)
        The last grid distance and the gapped flag.
    """
    if N_k < 8:
        raise ValueError("N_k must be at least 8")
    delta = _grid_gap(kernel, lambda0, N_k)
    while N_k * 2 <= max_grid:
        N_k *= 2
        refined = _grid_gap(kernel, lambda0, N_k)
        if refined <= zero_tol:
            return refined, False
        if abs(refined - delta) <= rtol * delta:
            return refined, True
        delta = refined
    return delta, False


def occupied_frames(kernel: HoppingKernel, lambda0: float, N_k: int) -> tuple[np.ndarray, float]:
    """Eigenvectors of bands below ``lambda0`` on the ``N_k x N_k`` grid.

    Returns the frames with shape ``(N_k, N_k, d, n_occ)`` and the grid gap.
    Raises :class:`GapError` if the number of occupied bands changes across
    the grid.
    """
    k1, k2 = _grid(N_k)
    ev, vec = np.linalg.eigh(bloch_hamiltonians(kernel, k1, k2))
    n_occ = np.sum(ev < lambda0, axis=-1)
    if np.any(n_occ != n_occ.flat[0]):
        raise GapError(f"band count below {lambda0} varies over the Brillouin zone")
    m = int(n_occ.flat[0])
    return vec[..., :m], float(np.min(np.abs(ev - lambda0)))


def fhs_chern_from_frames(frames: np.ndarray, det_floor: float = 1e-10) -> tuple[int, float]:
    """Plaquette Chern number of a periodic family of occupied frames.

    Parameters
    ----------
    frames : ndarray, shape (N1, N2, d, m)
        Orthonormal occupied frames on a periodic momentum grid.
    det_floor : float
        Links with ``|det| < det_floor`` abort the computation.

    Returns
    -------
    (int, float)
        Rounded Chern number and the raw plaquette sum over ``2 pi``.
    """
    if frames.shape[-1] == 0:
        return 0, 0.0

    def link(axis):
        nxt = np.roll(frames, -1, axis=axis)
        det = np.linalg.det(np.einsum("abim,abin->abmn", frames.conj(), nxt))
        if np.min(np.abs(det)) < det_floor:
            raise GapError("overlap determinant below floor; refine the k-grid")
        return det / np.abs(det)

    U1, U2 = link(0), link(1)
    plaquette = U1 * np.roll(U2, -1, axis=0) * np.conj(np.roll(U1, -1, axis=1)) * np.conj(U2)
    raw = float(np.sum(np.angle(plaquette)) / (2 * np.pi))
    return int(round(raw)), raw


def chern_number_fhs(kernel: HoppingKernel, lambda0: float = 0.0, N_k: int = 24) -> ChernResult:
    """Chern number of the Fermi projection below ``lambda0`` by lattice plaquettes."""
    frames, gap = occupied_frames(kernel, lambda0, N_k)
    if gap <= 0:
        raise GapError(f"an eigenvalue sits at lambda0={lambda0}")
    chern, raw = fhs_chern_from_frames(frames)
    return ChernResult(chern, raw, int(N_k), gap)


def band_table(kernel: HoppingKernel, N_k: int) -> np.ndarray:
    """Rows ``(k1, k2, lambda_1, ..., lambda_d)`` over the ``N_k x N_k`` grid."""
    k1, k2 = _grid(N_k)
    ev = np.linalg.eigvalsh(bloch_hamiltonians(kernel, k1, k2))
    return np.column_stack([k1.ravel(), k2.ravel(), ev.reshape(-1, kernel.d)])
