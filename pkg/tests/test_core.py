import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lowsync_bcgs.core import (
    BlockPartition,
    DimensionError,
    NotPositiveDefinite,
    SingularMatrix,
    SingularTriangular,
    SyncLedger,
    ZeroMatrix,
    cholesky_upper,
    cond2,
    fused_block_product,
    loss_of_orthogonality,
    relative_residual,
    tri_solve,
)
from lowsync_bcgs.intraortho import house_qr

from conftest import U, with_kappa


def test_ledger_counts_phases():
    led = SyncLedger()
    led.charge("a")
    led.charge("b", 2)
    led.charge("a")
    assert led.total == 4
    assert dict(led.breakdown) == {"a": 2, "b": 2}
    assert led.excluding("a") == 2
    with pytest.raises(ValueError):
        led.charge("a", -1)


def test_partition_layout():
    part = BlockPartition(20, 3, 2, lead_width=3)
    assert part.n == 7
    assert [part.bounds(k) for k in range(3)] == [(0, 3), (3, 5), (5, 7)]
    with pytest.raises(DimensionError):
        BlockPartition(5, 3, 2)
    assert BlockPartition.for_matrix(np.zeros((10, 7)), 2, lead_width=3) == part.__class__(10, 3, 2, 3)


def test_fused_identity():
    led = SyncLedger()
    grid = fused_block_product([np.eye(3)], [np.eye(3)], led)
    assert np.array_equal(grid[0][0], np.eye(3))
    assert led.total == 1


def test_fused_four_blocks_single_charge(rng):
    Q1, Uk, X = (rng.standard_normal((30, 4)) for _ in range(3))
    led = SyncLedger()
    grid = fused_block_product([Q1, Uk], [Uk, X], led)
    assert led.total == 1
    for i, L in enumerate([Q1, Uk]):
        for j, R in enumerate([Uk, X]):
            assert np.array_equal(grid[i][j], L.T @ R)


def test_fused_orthogonal_units():
    e1, e2 = np.eye(2)[:, :1], np.eye(2)[:, 1:]
    assert fused_block_product([e1], [e2], None)[0][0] == [[0.0]]


def test_fused_dimension_mismatch():
    with pytest.raises(DimensionError):
        fused_block_product([np.eye(3)], [np.eye(4)], SyncLedger())


def test_cholesky_examples():
    assert np.array_equal(cholesky_upper(np.eye(4)), np.eye(4))
    R = cholesky_upper(np.array([[4.0, 2.0], [2.0, 2.0]]))
    np.testing.assert_allclose(R, [[2.0, 1.0], [0.0, 1.0]], atol=1e-15)
    with pytest.raises(NotPositiveDefinite) as info:
        cholesky_upper(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert info.value.pivot == 1


def test_cholesky_symmetrizes(rng):
    A = rng.standard_normal((6, 6))
    G = A.T @ A + 6 * np.eye(6)
    skew = 1e-14 * rng.standard_normal((6, 6))
    R = cholesky_upper(G + skew)
    assert np.allclose(np.tril(R, -1), 0)
    assert np.max(np.abs(R.T @ R - G)) <= 50 * U * np.linalg.norm(G) + 1e-13


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1.0, 1e6))
def test_cholesky_reconstructs(seed, kappa):
    rng = np.random.default_rng(seed)
    X = with_kappa(rng, 12, 5, np.sqrt(kappa))
    G = X.T @ X
    R = cholesky_upper(G)
    assert np.all(np.diag(R) > 0)
    assert np.max(np.abs(R.T @ R - G)) <= 50 * U * np.linalg.norm(G, 2)


def test_tri_solve_examples(rng):
    B = rng.standard_normal((3, 2))
    np.testing.assert_array_equal(tri_solve(np.eye(3), B), B)
    out = tri_solve(np.diag([2.0, 4.0]), np.array([[2.0], [8.0]]))
    np.testing.assert_array_equal(out, [[1.0], [2.0]])
    with pytest.raises(SingularTriangular):
        tri_solve(np.diag([1.0, 0.0]), np.ones((2, 1)))


def test_tri_solve_sides(rng):
    R = np.triu(rng.standard_normal((5, 5))) + 5 * np.eye(5)
    B = rng.standard_normal((5, 3))
    X = tri_solve(R, B)
    assert np.linalg.norm(R @ X - B) <= 100 * U * np.linalg.norm(R, 2) * np.linalg.norm(X, 2)
    Xt = tri_solve(R, B, trans=True)
    np.testing.assert_allclose(R.T @ Xt, B, atol=1e-12)
    C = rng.standard_normal((4, 5))
    Y = tri_solve(R, C, side="right")
    np.testing.assert_allclose(Y @ R, C, atol=1e-12)
    Yt = tri_solve(R, C, side="right", trans=True)
    np.testing.assert_allclose(Yt @ R.T, C, atol=1e-12)


def test_loo_examples(rng):
    assert loss_of_orthogonality(np.eye(5)[:, :3]) == 0.0
    assert loss_of_orthogonality(2 * np.eye(3)[:, :1]) == pytest.approx(3.0)
    assert loss_of_orthogonality(house_qr(rng.standard_normal((60, 6))).Q) <= 100 * U


def test_loo_permutation_invariant(rng):
    Q = np.linalg.qr(rng.standard_normal((20, 5)))[0] + 1e-6 * rng.standard_normal((20, 5))
    perm = np.eye(5)[:, rng.permutation(5)]
    assert loss_of_orthogonality(Q @ perm) == pytest.approx(loss_of_orthogonality(Q), rel=1e-10)


def test_relative_residual_examples():
    assert relative_residual(np.eye(3), np.eye(3), np.eye(3)) == 0.0
    assert relative_residual(np.eye(4)[:, :2], np.eye(4)[:, :2], np.eye(2)) == 0.0
    with pytest.raises(ZeroMatrix):
        relative_residual(np.zeros((3, 2)), np.eye(3)[:, :2], np.eye(2))


def test_cond2_examples():
    assert cond2(np.eye(4)) == pytest.approx(1.0)
    assert cond2(np.diag([10.0, 1.0, 0.1])) == pytest.approx(100.0)
    with pytest.raises(SingularMatrix):
        cond2(np.diag([1.0, 0.0]))
