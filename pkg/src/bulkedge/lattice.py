"""Finite boxes, short-range hopping kernels, disorder and box Hamiltonians.

Conventions
-----------
* The box of radius ``L`` is ``Lambda_L = [-L, L]^2`` in Z^2 with
  ``(2L+1)^2`` sites.
* Sites are enumerated row-major by ``(n1, n2)`` and the ``d`` channels of a
  site are contiguous::

      index(n, k) = ((n1 + L) * (2L + 1) + (n2 + L)) * d + k

* A kernel block ``T(v)`` is the matrix element ``H0(n, n + v)``.
* Position operators use the raw integer coordinates of the centred box.
"""

from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from functools import cached_property
from types import MappingProxyType

import numpy as np
import scipy.sparse as sp

from .seeding import derive_seed

SIGMA_0 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)

UNIT_STEPS = ((1, 0), (-1, 0), (0, 1), (0, -1))

MATRIX_DUMP_VERSION = 1


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HoppingKernel:
    """Translation-invariant nearest-neighbour Hamiltonian plus on-site matrix.

    Parameters
    ----------
    d : int
        Number of internal channels per site.
    blocks : mapping
        ``{v: T(v)}`` for displacements with ``|v|_1 <= 1``.  Missing
        partners ``T(-v)`` are filled in as ``T(v)^dagger``.
    onsite_potential : array_like
        Real vector ``V`` of the gap-opening matrix ``diag(V)``.
    fermi_level : float
        Reference energy ``lambda_0`` inside the gap of the clean model.
    name : str
        Label carried into reports and matrix dumps.
    """

    d: int
    blocks: Mapping[tuple[int, int], np.ndarray]
    onsite_potential: np.ndarray
    fermi_level: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        d = int(self.d)
        if d < 1:
            raise ValueError("d must be a positive integer")
        full: dict[tuple[int, int], np.ndarray] = {}
        for v, block in self.blocks.items():
            v = (int(v[0]), int(v[1]))
            if abs(v[0]) + abs(v[1]) >= 2:
                raise ValueError(f"hopping {v} is not nearest-neighbour")
            block = np.asarray(block, dtype=complex)
            if block.shape != (d, d):
                raise ValueError(f"block {v} has shape {block.shape}, expected {(d, d)}")
            full[v] = block
        for v in list(full):
            w = (-v[0], -v[1])
            partner = full[v].conj().T
            if w not in full:
                full[w] = partner
            elif not np.array_equal(full[w], partner):
                raise ValueError(f"T({w}) is not the adjoint of T({v})")
        V = np.asarray(self.onsite_potential, dtype=float).reshape(-1)
        if V.shape != (d,):
            raise ValueError("onsite_potential must have length d")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "blocks", MappingProxyType({v: _frozen(b) for v, b in sorted(full.items())}))
        object.__setattr__(self, "onsite_potential", _frozen(V))
        object.__setattr__(self, "fermi_level", float(self.fermi_level))

    def hopping(self, v) -> np.ndarray:
        """Return ``T(v)``, or the zero block when ``v`` is not stored."""
        v = (int(v[0]), int(v[1]))
        if v in self.blocks:
            return self.blocks[v]
        return np.zeros((self.d, self.d), dtype=complex)

    def displacements(self) -> list[tuple[int, int]]:
        """Stored nonzero displacements (excluding the on-site block)."""
        return [v for v in self.blocks if v != (0, 0)]

    def describe(self) -> dict:
        return {"name": self.name, "d": self.d, "fermi_level": self.fermi_level,
                "onsite_potential": self.onsite_potential.tolist()}


def build_qwz_kernel(delta: float, hopping_scale: float = 1.0) -> HoppingKernel:
    """Qi-Wu-Zhang kernel with mass ``delta``.

    ``T(e1) = (sz - i sx)/2``, ``T(e2) = (sz - i sy)/2`` and ``V = (delta, -delta)``,
    so the Bloch symbol is ``sin k1 sx + sin k2 sy + (delta + cos k1 + cos k2) sz``.
    ``hopping_scale`` multiplies both hopping blocks (1 gives the standard model).
    """
    delta = float(delta)
    if not np.isfinite(delta):
        raise ValueError("delta must be finite")
    c = float(hopping_scale)
    blocks = {
        (1, 0): c * 0.5 * (SIGMA_Z - 1j * SIGMA_X),
        (0, 1): c * 0.5 * (SIGMA_Z - 1j * SIGMA_Y),
    }
    name = f"qwz(delta={delta!r})" if c == 1.0 else f"qwz(delta={delta!r},hopping_scale={c!r})"
    return HoppingKernel(2, blocks, (delta, -delta), fermi_level=0.0, name=name)


# --- geometry -----------------------------------------------------------------

def box_size(L: int) -> int:
    """Number of sites ``(2L+1)^2`` of the box."""
    return (2 * L + 1) ** 2


def box_sites(L: int) -> np.ndarray:
    """Site coordinates of ``Lambda_L`` in enumeration order, shape ``(|Lambda_L|, 2)``."""
    r = np.arange(-L, L + 1)
    n1, n2 = np.meshgrid(r, r, indexing="ij")
    return np.column_stack([n1.ravel(), n2.ravel()])


def site_index(L: int, n) -> int:
    """Enumeration index of site ``n`` in ``Lambda_L``."""
    n1, n2 = int(n[0]), int(n[1])
    if max(abs(n1), abs(n2)) > L:
        raise IndexError(f"site {n} outside box of radius {L}")
    return (n1 + L) * (2 * L + 1) + (n2 + L)


def basis_positions(L: int, d: int) -> np.ndarray:
    """Coordinates of every basis vector, shape ``(d |Lambda_L|, 2)``."""
    return np.repeat(box_sites(L), d, axis=0)


def boundary_sets(L: int) -> tuple[np.ndarray, np.ndarray]:
    """Interior and exterior boundary of ``Lambda_L``.

    The interior boundary is ``{n : max(|n1|, |n2|) = L}``; the exterior
    boundary is the ring one step further out, ``max(|n1|, |n2|) = L + 1``.
    """
    if L < 1:
        raise ValueError("L must be at least 1")

    def ring(R):
        s = box_sites(R)
        return s[np.max(np.abs(s), axis=1) == R]

    return ring(L), ring(L + 1)


# --- disorder -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DisorderField:
    """Per-site, per-channel couplings ``omega`` with deformation strength ``t``.

    ``omega`` has shape ``(|Lambda_L|, d)`` in site enumeration order.  The
    on-site matrix at ``n`` is ``diag((1 - t (1 - omega_n)) V)``.
    """

    L: int
    d: int
    omega: np.ndarray
    eta: float
    t: float
    master_seed: int
    realization_index: int

    @property
    def seed(self) -> int:
        return derive_seed(self.master_seed, self.realization_index)

    def onsite_scale(self) -> np.ndarray:
        return 1.0 - self.t * (1.0 - self.omega)

    def with_t(self, t: float) -> DisorderField:
        """Same couplings, different deformation strength."""
        _check_t(t)
        return replace(self, t=float(t))

    def describe(self) -> dict:
        return {"L": self.L, "d": self.d, "eta": self.eta, "t": self.t,
                "master_seed": self.master_seed, "realization_index": self.realization_index,
                "seed": self.seed}


def _check_t(t):
    if not 0.0 <= float(t) <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")


def sample_disorder(L: int, d: int, eta: float, t: float, master_seed: int,
                    realization_index: int) -> DisorderField:
    """Draw ``omega ~ eta x^(eta-1) dx`` on [0, 1] for every site and channel.

    Sampling uses the inverse CDF ``omega = u^(1/eta)`` on a PCG64 stream keyed
    by :func:`derive_seed`; ``eta = inf`` gives the point mass at 1.
    """
    eta = float(eta)
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    if L < 1:
        raise ValueError("L must be at least 1")
    _check_t(t)
    rng = np.random.Generator(np.random.PCG64(derive_seed(master_seed, realization_index)))
    u = rng.random((box_size(L), d))
    omega = u ** (1.0 / eta)
    return DisorderField(int(L), int(d), _frozen(omega), eta, float(t), int(master_seed),
                         int(realization_index))


# --- assembly -----------------------------------------------------------------

def parse_bc(bc) -> tuple[str, int | None]:
    """Normalise a boundary condition to ``(kind, inner_radius)``.

    Accepts ``"simple"``, ``"periodic"``, ``"decoupled:l"`` or ``("decoupled", l)``.
    """
    if isinstance(bc, tuple):
        kind, inner = bc
        return parse_bc(f"{kind}:{inner}")
    kind, _, arg = str(bc).partition(":")
    if kind in ("simple", "periodic") and not arg:
        return kind, None
    if kind == "decoupled" and arg:
        inner = int(arg)
        if inner < 0:
            raise ValueError("decoupled inner radius must be non-negative")
        return kind, inner
    raise ValueError(f"unknown boundary condition {bc!r}")


def _bc_label(kind, inner):
    return kind if inner is None else f"{kind}:{inner}"


@dataclass(frozen=True, eq=False)
class BoxHamiltonian:
    """Hermitian box Hamiltonian on ``Lambda_L (x) C^d``.

    The operator is stored sparse (``sparse``); ``matrix`` is its dense form,
    built on first access.
    """

    L: int
    d: int
    bc: str
    sparse: sp.csr_matrix
    kernel_name: str = "custom"
    metadata: Mapping = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.d * box_size(self.L)

    @property
    def n_sites(self) -> int:
        return box_size(self.L)

    @property
    def inner(self) -> int | None:
        return parse_bc(self.bc)[1]

    @cached_property
    def matrix(self) -> np.ndarray:
        m = self.sparse.toarray()
        m.setflags(write=False)
        return m

    @cached_property
    def positions(self) -> np.ndarray:
        return basis_positions(self.L, self.d)

    def position(self, axis: int) -> np.ndarray:
        """Diagonal of ``x_axis`` (axis 1 or 2) as a float vector."""
        return self.positions[:, _axis(axis)].astype(float)

    def site_slice(self, n) -> slice:
        i = site_index(self.L, n) * self.d
        return slice(i, i + self.d)


def _axis(axis):
    if axis not in (1, 2):
        raise ValueError("axis must be 1 or 2")
    return axis - 1


def _hop_pairs(L: int, v, periodic: bool):
    """Site index pairs ``(i, j)`` with ``n_j = n_i + v``, wrapped when periodic."""
    sites = box_sites(L)
    target = sites + np.asarray(v)
    if periodic:
        src = np.arange(len(sites))
        target = (target + L) % (2 * L + 1) - L
    else:
        inside = np.all(np.abs(target) <= L, axis=1)
        src = np.nonzero(inside)[0]
        target = target[inside]
    return src, (target[:, 0] + L) * (2 * L + 1) + (target[:, 1] + L)


def _block_coo(src, dst, block, d):
    """COO triplets for placing ``block`` at site pairs ``(src, dst)``."""
    k, l = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    rows = (src[:, None] * d + k.ravel()[None, :]).ravel()
    cols = (dst[:, None] * d + l.ravel()[None, :]).ravel()
    vals = np.broadcast_to(block.ravel(), (len(src), d * d)).ravel()
    return rows, cols, vals


def assemble_hamiltonian(kernel: HoppingKernel, disorder: DisorderField | None = None, bc="simple",
                         L: int | None = None) -> BoxHamiltonian:
    """Assemble ``H_{omega,t}`` on ``Lambda_L`` under the given boundary condition.

    Parameters
    ----------
    kernel : HoppingKernel
    disorder : DisorderField or None
        On-site couplings; ``None`` gives the clean on-site block ``diag(V)``.
    bc : str or tuple
        ``"simple"``, ``"periodic"`` or ``"decoupled:l"`` (hops between
        ``Lambda_l`` and the rest of the box are removed).
    L : int, optional
        Box radius; required when ``disorder`` is None.

    Notes
    -----
    Every hop ``(n, m)`` is inserted together with its partner ``(m, n)``
    carrying ``T(-v) = T(v)^dagger``, so the result is exactly Hermitian.
    """
    kind, inner = parse_bc(bc)
    d = kernel.d
    if disorder is not None:
        if L is not None and L != disorder.L:
            raise ValueError(f"disorder radius {disorder.L} does not match L={L}")
        if disorder.d != d:
            raise ValueError(f"disorder has {disorder.d} channels, kernel has {d}")
        L = disorder.L
    if L is None or L < 1:
        raise ValueError("box radius L must be at least 1")
    if inner is not None and inner >= L:
        raise ValueError("decoupled inner radius must be smaller than L")
    sites = box_sites(L)
    rows, cols, vals = [], [], []

    for v in kernel.displacements():
        src, dst = _hop_pairs(L, v, periodic=(kind == "periodic"))
        if inner is not None:
            a = np.max(np.abs(sites[src]), axis=1) <= inner
            b = np.max(np.abs(sites[dst]), axis=1) <= inner
            src, dst = src[a == b], dst[a == b]
        r, c, x = _block_coo(src, dst, kernel.hopping(v), d)
        rows.append(r), cols.append(c), vals.append(x)

    n = len(sites)
    onsite = np.broadcast_to(kernel.onsite_potential, (n, d))
    if disorder is not None:
        onsite = disorder.onsite_scale() * kernel.onsite_potential
    r, c, x = _block_coo(np.arange(n), np.arange(n), kernel.hopping((0, 0)), d)
    rows.append(r), cols.append(c), vals.append(x)
    idx = np.arange(n * d)
    rows.append(idx), cols.append(idx), vals.append(np.asarray(onsite, dtype=complex).ravel())

    dim = n * d
    H = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(dim, dim)).tocsr()
    H.eliminate_zeros()
    H.sort_indices()
    meta = {"kernel": kernel.describe()}
    if disorder is not None:
        meta["disorder"] = disorder.describe()
    return BoxHamiltonian(L, d, _bc_label(kind, inner), H, kernel.name, MappingProxyType(meta))


def gluing_operator(kernel: HoppingKernel, L: int) -> list[tuple[tuple[int, int], tuple[int, int], np.ndarray]]:
    """Hops added across the boundary by periodic gluing.

    For ``n1 = +-L`` the entry ``(n, n -+ 2L e1)`` carries ``H0(n, n +- e1)``,
    and likewise along axis 2.  Entries are returned as ``(n, m, block)``.
    """
    if L < 1:
        raise ValueError("L must be at least 1")
    out = []
    for n in map(tuple, box_sites(L).tolist()):
        for v in kernel.displacements():
            target = (n[0] + v[0], n[1] + v[1])
            if max(abs(target[0]), abs(target[1])) <= L:
                continue
            m = tuple((c + L) % (2 * L + 1) - L for c in target)
            out.append((n, m, kernel.hopping(v)))
    return out


def commutator_with_position(H: BoxHamiltonian, axis: int, dense: bool = True):
    """``[H, x_axis]``; block ``(n, m)`` equals ``(m_axis - n_axis) H(n, m)``."""
    C = position_commutator(H.sparse, H.position(axis))
    return C.toarray() if dense else C


def position_commutator(A: sp.spmatrix, x: np.ndarray) -> sp.csr_matrix:
    """Sparse ``[A, diag(x)]`` for a diagonal position vector ``x``."""
    A = sp.coo_matrix(A)
    data = A.data * (x[A.col] - x[A.row])
    C = sp.coo_matrix((data, (A.row, A.col)), shape=A.shape).tocsr()
    C.eliminate_zeros()
    return C


# --- matrix dumps --------------------------------------------------------------

def dump_matrix(H: BoxHamiltonian, path) -> None:
    """Write ``H`` as a JSON header line followed by column-major complex128 pairs.

    The header records the geometry, kernel and disorder metadata; the body is
    ``dim * dim`` little-endian ``(re, im)`` float64 pairs in Fortran order.
    """
    header = {"format": "bulkedge-matrix", "version": MATRIX_DUMP_VERSION, "L": H.L, "d": H.d,
              "bc": H.bc, "dim": H.dim, "order": "F", "dtype": "<c16", "kernel": H.kernel_name}
    dis = H.metadata.get("disorder")
    if dis:
        header.update(seed=dis["seed"], t=dis["t"], eta=dis["eta"],
                      master_seed=dis["master_seed"], realization_index=dis["realization_index"])
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode() + b"\n")
        fh.write(np.asarray(H.matrix, dtype="<c16").tobytes(order="F"))


def load_matrix(path) -> tuple[dict, np.ndarray]:
    """Read a dump written by :func:`dump_matrix`; returns ``(header, matrix)``."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        body = fh.read()
    if header.get("format") != "bulkedge-matrix":
        raise ValueError("not a matrix dump")
    if header.get("version") != MATRIX_DUMP_VERSION:
        raise ValueError(f"unsupported matrix dump version {header.get('version')}")
    dim = header["dim"]
    if len(body) != 16 * dim * dim:
        raise ValueError("truncated matrix dump")
    return header, np.frombuffer(body, dtype="<c16").reshape((dim, dim), order="F").astype(complex)
