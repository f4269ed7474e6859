"""Sparse matrix, Krylov, and Newton tests against dense numpy oracles."""

import numpy as np
import pytest

from octoflow.la import (
    BlockJacobi, ILU0, Jacobi, KrylovResult, NewtonConfig, SolverConfig,
    SparseMatrix, krylov_solve, make_preconditioner, newton_solve,
)


def random_sparse(rng, n, density=0.2, dd_boost=0.0):
    """Random matrix with explicit diagonal; dd_boost > 0 makes it
    strictly diagonally dominant."""
    A = rng.standard_normal((n, n))
    mask = rng.random((n, n)) < density
    np.fill_diagonal(mask, True)
    A = A * mask
    if dd_boost > 0.0:
        np.fill_diagonal(A, np.abs(A).sum(axis=1) + dd_boost)
    rows, cols = np.nonzero(mask)
    return SparseMatrix.from_coo(rows, cols, A[rows, cols], n), A


# ── SparseMatrix ────────────────────────────────────────────────────────

def test_from_coo_sums_duplicates_and_sorts():
    rows = np.array([0, 0, 1, 1, 1, 2])
    cols = np.array([1, 1, 2, 0, 2, 2])
    vals = np.array([1.0, 2.0, 5.0, -1.0, 0.5, 4.0])
    A = SparseMatrix.from_coo(rows, cols, vals, 3)
    dense = A.to_scipy().toarray()
    expect = np.array([[0.0, 3.0, 0.0], [-1.0, 0.0, 5.5], [0.0, 0.0, 4.0]])
    assert np.array_equal(dense, expect)
    for i in range(3):
        seg = A.indices[A.indptr[i]:A.indptr[i + 1]]
        assert np.all(np.diff(seg) > 0)
        assert i in seg  # explicit diagonal even when zero
    assert np.array_equal(A.diagonal(), np.array([0.0, 0.0, 4.0]))


def test_missing_diagonal_rejected():
    # direct construction bypasses from_coo's diagonal completion
    with pytest.raises(ValueError):
        SparseMatrix(np.array([0, 1, 2]), np.array([1, 0]),
                     np.array([1.0, 1.0]), 2)


def test_spmv_matches_dense():
    rng = np.random.default_rng(7)
    for n in (1, 5, 40, 173):
        A, dense = random_sparse(rng, n, density=0.3)
        x = rng.standard_normal(n)
        err = np.abs(A.matvec(x) - dense @ x)
        scale = max(1.0, np.abs(dense @ x).max())
        assert err.max() <= 1e-13 * scale


def test_scaled_matches_dense():
    rng = np.random.default_rng(8)
    A, dense = random_sparse(rng, 30, density=0.3)
    s = rng.random(30) + 0.5
    As = A.scaled(s)
    assert np.allclose(As.to_scipy().toarray(),
                       np.diag(s) @ dense @ np.diag(s), atol=1e-14)


# ── preconditioners ─────────────────────────────────────────────────────

def test_ilu0_exact_on_tridiagonal():
    # zero fill-in pattern == full LU pattern, so ILU(0) is exact
    rng = np.random.default_rng(3)
    n = 25
    dense = np.diag(4.0 + rng.random(n)) + np.diag(rng.random(n - 1), 1) \
        + np.diag(rng.random(n - 1), -1)
    rows, cols = np.nonzero(dense)
    A = SparseMatrix.from_coo(rows, cols, dense[rows, cols], n)
    M = ILU0(A)
    b = rng.standard_normal(n)
    assert np.abs(M.apply(b) - np.linalg.solve(dense, b)).max() <= 1e-12


def test_ilu0_same_sparsity():
    rng = np.random.default_rng(4)
    A, _ = random_sparse(rng, 30, density=0.2, dd_boost=1.0)
    M = ILU0(A)
    assert M.data.shape == A.data.shape
    assert M.indices is A.indices


def test_ilu0_zero_pivot_falls_back_to_jacobi():
    A = SparseMatrix.from_coo(np.array([0, 1]), np.array([1, 0]),
                              np.array([1.0, 1.0]), 2)
    with pytest.raises(ZeroDivisionError):
        ILU0(A)
    M = make_preconditioner(A, "ilu0")
    assert isinstance(M, Jacobi)


def test_ilu0_reduces_iterations_on_dd_matrices():
    rng = np.random.default_rng(11)
    cfg_none = SolverConfig(method="bicgstab", preconditioner="none",
                            rel_tol=1e-10, max_iters=500)
    cfg_ilu = SolverConfig(method="bicgstab", preconditioner="ilu0",
                           rel_tol=1e-10, max_iters=500)
    for _ in range(20):
        A, _ = random_sparse(rng, 60, density=0.1, dd_boost=0.5)
        b = rng.standard_normal(60)
        plain = krylov_solve(A, b, cfg_none)
        prec = krylov_solve(A, b, cfg_ilu)
        assert plain.converged and prec.converged
        assert prec.iters <= plain.iters


def test_block_jacobi_exact_on_block_diagonal():
    rng = np.random.default_rng(5)
    nb, bs = 7, 3
    blocks = rng.standard_normal((nb, bs, bs)) + 3.0 * np.eye(bs)
    dense = np.zeros((nb * bs, nb * bs))
    for i in range(nb):
        dense[i * bs:(i + 1) * bs, i * bs:(i + 1) * bs] = blocks[i]
    rows, cols = np.nonzero(dense)
    A = SparseMatrix.from_coo(rows, cols, dense[rows, cols], nb * bs)
    M = BlockJacobi(A, bs)
    b = rng.standard_normal(nb * bs)
    assert np.abs(M.apply(b) - np.linalg.solve(dense, b)).max() <= 1e-11


def test_block_jacobi_extraction_ignores_offblock():
    rng = np.random.default_rng(6)
    A, dense = random_sparse(rng, 12, density=0.4, dd_boost=2.0)
    M = BlockJacobi(A, 3)
    for i in range(4):
        blk = dense[i * 3:(i + 1) * 3, i * 3:(i + 1) * 3]
        assert np.allclose(M.inv[i], np.linalg.inv(blk), atol=1e-12)


def test_unknown_preconditioner_rejected():
    A = SparseMatrix.from_coo(np.array([0]), np.array([0]),
                              np.array([1.0]), 1)
    with pytest.raises(ValueError):
        make_preconditioner(A, "amg")


# ── Krylov ──────────────────────────────────────────────────────────────

@pytest.mark.parametrize("method", ["bicgstab", "gmres"])
@pytest.mark.parametrize("precond", ["none", "jacobi", "ilu0"])
def test_krylov_postcondition(method, precond):
    rng = np.random.default_rng(21)
    cfg = SolverConfig(method=method, preconditioner=precond,
                       rel_tol=1e-8, max_iters=400)
    for trial in range(5):
        A, dense = random_sparse(rng, 50, density=0.15, dd_boost=0.3)
        b = rng.standard_normal(50)
        res = krylov_solve(A, b, cfg)
        assert res.converged
        assert np.linalg.norm(b - dense @ res.x) \
            <= 1e-8 * np.linalg.norm(b) * (1 + 1e-12)


@pytest.mark.parametrize("method", ["bicgstab", "gmres"])
def test_exact_preconditioner_converges_fast(method):
    rng = np.random.default_rng(22)
    A, dense = random_sparse(rng, 40, density=0.2, dd_boost=0.2)
    inv = np.linalg.inv(dense)

    class Exact:
        def apply(self, r):
            return inv @ r

    b = rng.standard_normal(40)
    cfg = SolverConfig(method=method, preconditioner="none", rel_tol=1e-12,
                       max_iters=50)
    res = krylov_solve(A, b, cfg, M=Exact())
    assert res.converged and res.iters <= 2


def test_gmres_residual_monotone():
    rng = np.random.default_rng(23)
    A, dense = random_sparse(rng, 30, density=0.3, dd_boost=0.1)
    b = rng.standard_normal(30)
    prev = np.inf
    for k in range(1, 31):
        cfg = SolverConfig(method="gmres", preconditioner="none",
                           rel_tol=1e-14, max_iters=k, gmres_restart=30)
        res = krylov_solve(A, b, cfg)
        assert res.final_residual <= prev * (1 + 1e-10)
        prev = res.final_residual


def test_bicgstab_breakdown_reported():
    # skew coupling makes r_hat . A p vanish on the first step
    A = SparseMatrix.from_coo(np.array([0, 0, 1, 1]),
                              np.array([0, 1, 0, 1]),
                              np.array([0.0, 1.0, 1.0, 0.0]), 2)
    b = np.array([1.0, 0.0])
    cfg = SolverConfig(method="bicgstab", preconditioner="none",
                       rel_tol=1e-12, max_iters=10)
    res = krylov_solve(A, b, cfg)
    assert not res.converged
    assert "breakdown" in res.reason


def test_warm_start_zero_iterations():
    rng = np.random.default_rng(24)
    A, dense = random_sparse(rng, 20, density=0.3, dd_boost=1.0)
    x_true = rng.standard_normal(20)
    b = dense @ x_true
    cfg = SolverConfig(method="bicgstab", preconditioner="none",
                       rel_tol=1e-8)
    res = krylov_solve(A, b, cfg, x0=x_true.copy())
    assert res.converged and res.iters == 0


def test_diagonal_scaling_badly_scaled_system():
    rng = np.random.default_rng(25)
    n = 40
    base = rng.standard_normal((n, n)) * (rng.random((n, n)) < 0.2)
    np.fill_diagonal(base, np.abs(base).sum(axis=1) + 1.0)
    s = 10.0 ** rng.uniform(-6, 6, n)
    dense = np.diag(s) @ base @ np.diag(s)
    rows, cols = np.nonzero(dense)
    A = SparseMatrix.from_coo(rows, cols, dense[rows, cols], n)
    b = rng.standard_normal(n)
    cfg = SolverConfig(method="gmres", preconditioner="jacobi",
                       rel_tol=1e-11, max_iters=600, gmres_restart=40,
                       diagonal_scale=True)
    res = krylov_solve(A, b, cfg)
    assert res.converged
    x_true = np.linalg.solve(dense, b)
    assert np.linalg.norm(res.x - x_true) <= 1e-6 * np.linalg.norm(x_true)


def test_result_unpacks_as_tuple():
    res = KrylovResult(np.zeros(2), 3, True, 1e-9)
    x, iters, converged, final = res
    assert iters == 3 and converged and final == 1e-9


# ── Newton ──────────────────────────────────────────────────────────────

def circle_line_system():
    # root at (sqrt(2), sqrt(2))
    def F(u):
        return np.array([u[0] ** 2 + u[1] ** 2 - 4.0, u[0] - u[1]])

    def J(u):
        dense = np.array([[2.0 * u[0], 2.0 * u[1]], [1.0, -1.0]])
        rows, cols = np.nonzero(np.ones((2, 2)))
        return SparseMatrix.from_coo(rows, cols, dense[rows, cols], 2)

    return F, J


def test_newton_quadratic_convergence():
    F, J = circle_line_system()
    ncfg = NewtonConfig(rel_tol=1e-12, abs_tol=1e-14, max_iters=20)
    lcfg = SolverConfig(method="gmres", preconditioner="none",
                        rel_tol=1e-13, max_iters=50)
    res = newton_solve(F, J, np.array([3.0, 1.0]), ncfg, lcfg)
    assert res.converged and res.iters <= 8
    assert np.abs(res.u - np.sqrt(2.0)).max() <= 1e-10


def test_newton_zero_iterations_at_root():
    F, J = circle_line_system()
    r = np.sqrt(2.0)
    res = newton_solve(F, J, np.array([r, r]),
                       NewtonConfig(abs_tol=1e-10), SolverConfig())
    assert res.converged and res.iters == 0


def test_newton_reports_linear_failure():
    def F(u):
        # second equation inconsistent: rhs never in range(J)
        return np.array([u[0] ** 2, 1.0])

    def J(u):
        return SparseMatrix.from_coo(np.array([0, 0, 1, 1]),
                                     np.array([0, 1, 0, 1]),
                                     np.array([2.0 * u[0], 0.0, 0.0, 0.0]), 2)

    res = newton_solve(F, J, np.array([1.0, 0.0]),
                       NewtonConfig(rel_tol=1e-12, abs_tol=1e-14,
                                    max_iters=5),
                       SolverConfig(method="gmres", preconditioner="none",
                                    rel_tol=1e-12, max_iters=10))
    assert not res.converged
    assert "linear" in res.reason


def test_newton_step_tolerance_stop():
    F, J = circle_line_system()
    ncfg = NewtonConfig(rel_tol=1e-300, abs_tol=0.0, step_tol=1e-12,
                        max_iters=50)
    lcfg = SolverConfig(method="gmres", preconditioner="none",
                        rel_tol=1e-14, max_iters=50)
    res = newton_solve(F, J, np.array([3.0, 1.0]), ncfg, lcfg)
    assert res.converged and res.reason == "step tolerance"


def test_newton_jacobian_consistency_fd():
    # central differences approximate the analytic Jacobian
    F, J = circle_line_system()
    rng = np.random.default_rng(30)
    for _ in range(10):
        u = rng.uniform(0.5, 3.0, 2)
        dense = J(u).to_scipy().toarray()
        fd = np.empty((2, 2))
        eps = 1e-6
        for j in range(2):
            e = np.zeros(2)
            e[j] = eps
            fd[:, j] = (F(u + e) - F(u - e)) / (2 * eps)
        assert np.abs(dense - fd).max() <= 1e-5 * max(1.0,
                                                      np.abs(dense).max())
