import numpy as np
import pytest
import scipy.linalg as sla

from dynembed.consensus import constraint, default_ridge, fuse, fusion_matrices, objective, project


def views(n=40, k=5, seed=13):
    rng = np.random.default_rng(seed)
    ya = rng.standard_normal((n, k))
    yx = 0.6 * ya @ rng.standard_normal((k, k)) + rng.standard_normal((n, k))
    return ya, yx


def test_identical_views_give_gamma_two():
    ya, _ = views()
    proj, _ = fuse(ya, ya, 3)
    assert proj.gammas[0] == pytest.approx(2.0, abs=1e-6)


def test_uncorrelated_views_give_gamma_one():
    q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((30, 8)))
    proj, _ = fuse(q[:, :4], q[:, 4:], 8, ridge=0.0)
    assert np.allclose(proj.gammas, 1.0, atol=1e-12)


def test_matches_dense_generalized_oracle():
    ya, yx = views()
    ridge = 1e-6
    proj, y = fuse(ya, yx, 3, ridge=ridge)
    z = np.hstack([ya, yx])
    left = np.block([[ya.T @ ya, ya.T @ yx], [yx.T @ ya, yx.T @ yx]])
    right = sla.block_diag(ya.T @ ya, yx.T @ yx) + ridge * np.eye(10)
    vals, vecs = sla.eigh(left, right)
    ref_g, ref_p = vals[::-1][:3], vecs[:, ::-1][:, :3]
    assert np.max(np.abs(proj.gammas - ref_g)) <= 1e-8
    signs = np.sign(np.sum(ref_p * proj.p, axis=0))
    assert np.max(np.abs(proj.p - ref_p * signs)) <= 1e-8
    assert np.max(np.abs(y - z @ proj.p)) <= 1e-10
    assert np.array_equal(y, project(ya, yx, proj))


def test_projection_invariants():
    ya, yx = views(seed=2)
    proj, _ = fuse(ya, yx, 6)
    _, right = fusion_matrices(ya, yx)
    b = right + proj.ridge * np.eye(10)
    assert np.max(np.abs(proj.p.T @ b @ proj.p - np.eye(6))) <= 1e-8
    assert np.all(np.diff(proj.gammas) <= 0)
    assert proj.l == 6
    idx = np.argmax(np.abs(proj.p), axis=0)
    assert np.all(proj.p[idx, np.arange(6)] > 0)


def test_objective_consistency_and_optimality():
    ya, yx = views(seed=3)
    proj, _ = fuse(ya, yx, 4)
    obj = objective(ya, yx, proj.p)
    con = constraint(ya, yx, proj.p, proj.ridge)
    assert np.max(np.abs(obj - proj.gammas * con)) <= 1e-8
    rng = np.random.default_rng(0)
    for _ in range(100):
        p = rng.standard_normal((10, 1))
        p /= np.sqrt(constraint(ya, yx, p, proj.ridge))
        assert objective(ya, yx, p)[0] <= obj[0] + 1e-8


def test_rotation_invariance_of_fused_subspace():
    ya, yx = views(seed=4)
    r, _ = np.linalg.qr(np.random.default_rng(4).standard_normal((5, 5)))
    _, y1 = fuse(ya, yx, 4)
    _, y2 = fuse(ya @ r, yx, 4)
    assert np.max(sla.subspace_angles(y1, y2)) <= 1e-6


def test_scaling_leaves_gammas_unchanged():
    ya, yx = views(seed=5)
    g1 = fuse(ya, yx, 5, ridge=0.0)[0].gammas
    g2 = fuse(3.0 * ya, yx, 5, ridge=0.0)[0].gammas
    assert np.max(np.abs(g1 - g2)) <= 1e-10


def test_default_ridge_is_relative():
    ya, yx = views()
    _, right = fusion_matrices(ya, yx)
    assert default_ridge(right) == pytest.approx(1e-8 * np.trace(right) / 10)
    assert fuse(ya, yx, 2)[0].ridge == pytest.approx(default_ridge(right))


def test_errors():
    ya, yx = views()
    with pytest.raises(ValueError, match="l = 11"):
        fuse(ya, yx, 11)
    with pytest.raises(ValueError):
        fuse(ya, yx, 0)
    dup = np.hstack([ya[:, :2], ya[:, :1]])
    with pytest.raises(ValueError, match="ridge > 0"):
        fuse(dup, yx[:, :3], 2, ridge=0.0)
    # the same inputs are fine once regularized
    fuse(dup, yx[:, :3], 2, ridge=1e-6)
    with pytest.raises(ValueError, match="equal n"):
        fuse(ya, yx[:10], 2)
