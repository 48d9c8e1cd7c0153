import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bulkedge.lattice import HoppingKernel, assemble_hamiltonian, boundary_sets, build_qwz_kernel, sample_disorder
from bulkedge.localization import (
    Resolvent, SingularResolventError, boundary_moment_probe, combes_thomas_probe, decoupling_residual,
    fractional_moment_scan, green_block, hop_support, lifshitz_probe, wilson_interval,
)
from conftest import disordered


def flat_box(L, value):
    return assemble_hamiltonian(HoppingKernel(2, {}, np.array([value, value])), L=L)


# --- Green function -------------------------------------------------------------------

def test_green_of_zero_matrix():
    H = flat_box(2, 0.0)
    assert np.allclose(green_block(H, 1j, (0, 0), (0, 0)), 1j * np.eye(2))
    assert np.all(green_block(H, 1j, (0, 0), (1, 0)) == 0)


def test_green_of_scalar_matrix():
    assert np.allclose(green_block(flat_box(2, 2.0), 1.0, (1, -1), (1, -1)), np.eye(2))


def test_green_residual():
    H = disordered(5, 0.4)
    z = 0.1 + 0.01j
    R = Resolvent(H, z)
    G = R.columns((2, -1))
    E = np.zeros_like(G)
    E[H.site_slice((2, -1))] = np.eye(2)
    assert np.max(np.abs((H.matrix - z * np.eye(H.dim)) @ G - E)) <= 1e-10
    assert np.allclose(R.rows((2, -1)), np.linalg.inv(H.matrix - z * np.eye(H.dim))[H.site_slice((2, -1))])


@settings(deadline=None, max_examples=15)
@given(st.integers(0, 2**32), st.floats(-2, 2), st.floats(0.01, 1))
def test_green_adjoint_symmetry(seed, re, im):
    H = disordered(3, 0.7, seed=seed)
    n, m = (1, 0), (-2, 3)
    G = green_block(H, complex(re, im), n, m)
    assert np.allclose(G.conj().T, green_block(H, complex(re, -im), m, n), atol=1e-12)


def test_singular_resolvent():
    with pytest.raises(SingularResolventError):
        Resolvent(flat_box(1, 0.5), 0.5)


# --- fractional moments -------------------------------------------------------------------

def test_clean_gap_decays():
    scan = fractional_moment_scan(build_qwz_kernel(1.0), 12, 0.0, 6.0, 0.0, 1e-6, 0.5, 1, 0)
    assert scan.alpha > 0 and scan.r2 > 0.9


def test_fractional_power_of_the_same_norm():
    k = build_qwz_kernel(1.0)
    half = fractional_moment_scan(k, 8, 0.5, 6.0, 0.0, 1e-3, 0.5, 4, 9)
    full = fractional_moment_scan(k, 8, 0.5, 6.0, 0.0, 1e-3, 1.0, 4, 9)
    assert np.array_equal(half.values, full.values ** 0.5)


def test_prefix_determinism():
    k = build_qwz_kernel(1.0)
    a = fractional_moment_scan(k, 8, 0.5, 6.0, 0.0, 1e-3, 0.5, 3, 21)
    b = fractional_moment_scan(k, 8, 0.5, 6.0, 0.0, 1e-3, 0.5, 6, 21)
    assert np.array_equal(a.norms, b.norms[:3])


@pytest.mark.parametrize("kwargs", [dict(s=0.0), dict(s=1.5), dict(eps=0.0), dict(N=0), dict(L=3)])
def test_scan_validation(kwargs):
    args = dict(kernel=build_qwz_kernel(1.0), L=8, t=0.3, eta=6.0, lam=0.0, eps=1e-3, s=0.5, N=2,
                master_seed=0)
    args.update(kwargs)
    with pytest.raises(ValueError):
        fractional_moment_scan(**args)


# --- Combes-Thomas --------------------------------------------------------------------

def test_combes_thomas_rates_grow_with_distance():
    H = assemble_hamiltonian(build_qwz_kernel(1.0), L=10, bc="periodic")
    table = combes_thomas_probe(H, [0.8, 0.5, 0.0])
    assert np.allclose([r.distance for r in table.rows], [0.2, 0.5, 1.0], atol=1e-3)
    rates = [r.rate for r in table.rows]
    assert rates[0] < rates[1] < rates[2]
    assert table.monotone


def test_combes_thomas_saturates_for_diagonal():
    table = combes_thomas_probe(flat_box(3, 0.0), [0.5])
    assert table.rows[0].saturated and table.rows[0].rate == np.inf


def test_combes_thomas_rejects_spectrum():
    with pytest.raises(ValueError):
        combes_thomas_probe(flat_box(2, 0.0), [0.0])


# --- Lifshitz ---------------------------------------------------------------------------

def test_point_mass_never_hits():
    est = lifshitz_probe(build_qwz_kernel(1.0), [4, 6], 0.5, np.inf, 5, 0)
    assert est.p == (0.0, 0.0)


def test_smaller_interval_never_hits_more():
    k = build_qwz_kernel(1.0, 0.1)
    wide = lifshitz_probe(k, [4, 6], 0.5, 6.0, 30, 3)
    narrow = lifshitz_probe(k, [4, 6], 0.5, 6.0, 30, 3, radius_scale=0.5)
    assert all(n <= w for n, w in zip(narrow.hits, wide.hits))


def test_lifshitz_summary_consistent():
    est = lifshitz_probe(build_qwz_kernel(1.0, 0.1), [4, 8], 0.5, 6.0, 40, 1)
    assert est.p == tuple(h / 40 for h in est.hits)
    for p, (lo, hi) in zip(est.p, est.intervals):
        assert lo <= p <= hi
    assert est.slope_range[0] <= est.slope_range[1]


def test_wilson_interval():
    # frozen reference: 50 successes of 100 at 95 %
    lo, hi = wilson_interval(50, 100)
    assert np.isclose(lo, 0.4038315, atol=1e-6) and np.isclose(hi, 0.5961685, atol=1e-6)
    assert wilson_interval(0, 10)[0] == 0.0


# --- boundary moments --------------------------------------------------------------------

def test_boundary_moment_matches_dense_inverse():
    k = build_qwz_kernel(1.0)
    L, s = 5, 0.5
    bm = boundary_moment_probe(k, L, 0.5, 6.0, 1, s, 0, t=0.0, n_energies=1)
    H = assemble_hamiltonian(k, L=L)
    G = np.linalg.inv(H.matrix - 1e-3j * np.eye(H.dim))
    vals = [np.linalg.norm(G[H.site_slice((0, 0)), H.site_slice(tuple(n))]) ** s for n in boundary_sets(L)[0]]
    assert abs(bm.mean - np.mean(vals)) <= 1e-10
    assert bm.mean <= max(vals)


def test_boundary_moment_reproducible():
    k = build_qwz_kernel(1.0)
    a = boundary_moment_probe(k, 5, 0.5, 6.0, 1, 0.5, 8)
    b = boundary_moment_probe(k, 5, 0.5, 6.0, 1, 0.5, 8)
    assert a.mean == b.mean


# --- decoupling ---------------------------------------------------------------------------

def test_decoupling_identity_small():
    assert decoupling_residual(build_qwz_kernel(1.0), 7, 3, 0.5j, 6.0, 2) <= 1e-8
    with pytest.raises(ValueError):
        decoupling_residual(build_qwz_kernel(1.0), 5, 4, 0.5j, 6.0, 2)
    with pytest.raises(ValueError):
        decoupling_residual(build_qwz_kernel(1.0), 7, 3, 0.5, 6.0, 2)


def test_cut_operator_support():
    k = build_qwz_kernel(1.0)
    M, L = 6, 3
    dis = sample_disorder(M, 2, 6.0, 1.0, 0, 0)
    F = (assemble_hamiltonian(k, dis).matrix - assemble_hamiltonian(k, dis, f"decoupled:{L}").matrix)
    pairs = hop_support(F, M, 2)
    assert pairs
    for n, m in pairs:
        assert sorted([max(map(abs, n)), max(map(abs, m))]) == [L, L + 1]
    assert len(pairs) == 2 * 4 * (2 * L + 1)
