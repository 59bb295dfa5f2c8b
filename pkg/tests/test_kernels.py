"""Compiled kernels against their numpy twins and LAPACK."""
import numpy as np
import pytest

from graspvae import _jit, kernels
from graspvae.dense_nn import DenseNetwork

needs_numba = pytest.mark.skipif(not _jit.USE_NUMBA, reason="numba path disabled")


def _net(rng):
    widths = [5, 7, 6, 4, 4]
    acts = ["tanh", "sigmoid", "linear", "quaternion_normalizer"]
    return DenseNetwork.build(widths, acts, rng)


@needs_numba
@pytest.mark.parametrize("seed", range(5))
def test_forward_backward_twins_agree(seed):
    rng = np.random.default_rng(seed)
    net = _net(rng)
    x = rng.standard_normal((9, 5))
    z1, a1, g1 = kernels.forward(net.params, net.layout, x)
    z2, a2, g2 = kernels.forward_numpy(net.params, net.layout, x)
    np.testing.assert_allclose(a1, a2, rtol=0, atol=1e-13)
    np.testing.assert_allclose(z1, z2, rtol=0, atol=1e-13)
    assert g1 == g2
    up = rng.standard_normal((9, 4))
    gr1, gr2 = np.zeros_like(net.params), np.zeros_like(net.params)
    gi1 = kernels.backward(net.params, net.layout, x, z1, a1, up, gr1)
    gi2 = kernels.backward_numpy(net.params, net.layout, x, z2, a2, up, gr2)
    np.testing.assert_allclose(gr1, gr2, rtol=0, atol=1e-12)
    np.testing.assert_allclose(gi1, gi2, rtol=0, atol=1e-12)


@needs_numba
def test_adam_twins_agree():
    rng = np.random.default_rng(3)
    p1 = rng.standard_normal(50)
    p2 = p1.copy()
    m1, v1, m2, v2 = (np.zeros(50) for _ in range(4))
    for step in range(1, 6):
        g = rng.standard_normal(50)
        kernels.adam_update(p1, g, m1, v1, 1e-3, 0.9, 0.999, 1e-8, step)
        kernels.adam_update_numpy(p2, g, m2, v2, 1e-3, 0.9, 0.999, 1e-8, step)
    np.testing.assert_allclose(p1, p2, rtol=0, atol=1e-15)
    np.testing.assert_allclose(v1, v2, rtol=1e-14)


def test_sq_distances_brute_force():
    x = np.random.default_rng(1).standard_normal((12, 8))
    brute = np.array([[np.sum((a - b) ** 2) for b in x] for a in x])
    np.testing.assert_allclose(kernels.sq_distances(x), brute, atol=1e-12)
    np.testing.assert_allclose(kernels.sq_distances_numpy(x), brute, atol=1e-12)
    assert np.all(np.diag(kernels.sq_distances(x)) == 0.0)


def test_center_gram_matches_projection_formula():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((10, 10))
    k = a @ a.T
    h = np.eye(10) - np.full((10, 10), 0.1)
    np.testing.assert_allclose(kernels.center_gram(k), h @ k @ h, atol=1e-12)
    np.testing.assert_allclose(kernels.center_gram_numpy(k), h @ k @ h, atol=1e-12)


@pytest.mark.parametrize("n", [1, 2, 5, 30])
@pytest.mark.parametrize("twin", [0, 1])
def test_jacobi_matches_lapack(n, twin):
    rng = np.random.default_rng(n)
    a = rng.standard_normal((n, n))
    a = a + a.T
    solver = (kernels.jacobi_eigh, kernels.jacobi_eigh_numpy)[twin]
    vals, vecs, _ = solver(a.copy())
    np.testing.assert_allclose(np.sort(vals), np.linalg.eigvalsh(a), atol=1e-11 * max(1, np.abs(a).max()))
    np.testing.assert_allclose(vecs @ np.diag(vals) @ vecs.T, a, atol=1e-10)
    np.testing.assert_allclose(vecs.T @ vecs, np.eye(n), atol=1e-12)


def test_jacobi_diagonal_input_needs_no_sweep():
    vals, vecs, sweeps = kernels.jacobi_eigh(np.diag([3.0, 1.0, 2.0]))
    assert sorted(vals) == [1.0, 2.0, 3.0]
    assert sweeps <= 1


def test_kernel_pairs_cover_every_twin():
    for name, (active, twin) in kernels.KERNEL_PAIRS.items():
        assert twin.__name__ == f"{name}_numpy"
        if not _jit.USE_NUMBA:
            assert active is twin
