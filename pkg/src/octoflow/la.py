"""CSR sparse matrices, preconditioned Krylov solvers, Newton driver.

Matrices keep sorted unique column indices and an explicit diagonal
entry in every row; the ILU(0) and Jacobi paths rely on both.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numba import njit


# ── matrix ──────────────────────────────────────────────────────────────

class SparseMatrix:
    """Square CSR matrix with sorted, duplicate-free column indices and
    an explicit (possibly zero) diagonal entry in every row."""

    def __init__(self, indptr, indices, data, n, copy=True, diag_idx=None):
        conv = np.array if copy else np.asarray
        self.indptr = conv(indptr, dtype=np.int64)
        self.indices = conv(indices, dtype=np.int64)
        self.data = conv(data, dtype=np.float64)
        self.n = int(n)
        # diag_idx may be shared by callers reusing one sparsity pattern
        self.diag_idx = (_diag_positions(self.indptr, self.indices, self.n)
                         if diag_idx is None
                         else conv(diag_idx, dtype=np.int64))

    @classmethod
    def from_coo(cls, rows, cols, vals, n):
        # zero diagonal entries appended so every row keeps one explicitly
        r = np.concatenate([np.asarray(rows, dtype=np.int64), np.arange(n)])
        c = np.concatenate([np.asarray(cols, dtype=np.int64), np.arange(n)])
        v = np.concatenate([np.asarray(vals, dtype=np.float64), np.zeros(n)])
        A = sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()
        A.sort_indices()
        return cls(A.indptr, A.indices, A.data, n, copy=False)

    @classmethod
    def from_scipy(cls, A):
        return cls.from_coo(*_scipy_to_coo(A), A.shape[0])

    def to_scipy(self):
        return sp.csr_matrix((self.data, self.indices, self.indptr),
                             shape=(self.n, self.n))

    def matvec(self, x):
        out = np.empty(self.n)
        _spmv(self.indptr, self.indices, self.data, np.asarray(x, float), out)
        return out

    def diagonal(self):
        return self.data[self.diag_idx]

    def scaled(self, s):
        """Symmetric scaling S A S with S = diag(s); same sparsity."""
        data = self.data * s[np.repeat(np.arange(self.n),
                                       np.diff(self.indptr))] * s[self.indices]
        return SparseMatrix(self.indptr, self.indices, data, self.n,
                            copy=False, diag_idx=self.diag_idx)


def _scipy_to_coo(A):
    A = A.tocoo()
    return A.row, A.col, A.data


def _diag_positions(indptr, indices, n):
    rows = np.repeat(np.arange(n), np.diff(indptr))
    hit = indices == rows
    counts = np.bincount(rows[hit], minlength=n)
    if not np.all(counts == 1):
        i = int(np.argmax(counts != 1))
        raise ValueError(f"row {i} lacks an explicit diagonal entry")
    return np.flatnonzero(hit)


@njit(cache=True)
def _spmv(indptr, indices, data, x, out):
    for i in range(len(out)):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * x[indices[k]]
        out[i] = acc


# ── preconditioners ─────────────────────────────────────────────────────

@njit(cache=True)
def _ilu0_numba(indptr, indices, data, diag_idx):
    """In-place ILU(0); returns index of first zero pivot or -1."""
    n = len(diag_idx)
    for i in range(n):
        row_lo, row_hi = indptr[i], indptr[i + 1]
        for kk in range(row_lo, row_hi):
            k = indices[kk]
            if k >= i:
                break
            piv = data[diag_idx[k]]
            if piv == 0.0:
                return k
            lik = data[kk] / piv
            data[kk] = lik
            # subtract lik * U(k, j) for j beyond k in row i
            uk_lo = diag_idx[k] + 1
            uk_hi = indptr[k + 1]
            jj = kk + 1
            for uu in range(uk_lo, uk_hi):
                j = indices[uu]
                while jj < row_hi and indices[jj] < j:
                    jj += 1
                if jj == row_hi:
                    break
                if indices[jj] == j:
                    data[jj] -= lik * data[uu]
        if data[diag_idx[i]] == 0.0:
            return i
    return -1


@njit(cache=True)
def _ilu0_solve(indptr, indices, data, diag_idx, b, out):
    n = len(out)
    # forward: L z = b with unit diagonal
    for i in range(n):
        acc = b[i]
        for k in range(indptr[i], diag_idx[i]):
            acc -= data[k] * out[indices[k]]
        out[i] = acc
    # backward: U x = z
    for i in range(n - 1, -1, -1):
        acc = out[i]
        for k in range(diag_idx[i] + 1, indptr[i + 1]):
            acc -= data[k] * out[indices[k]]
        out[i] = acc / data[diag_idx[i]]


class ILU0:
    """Zero-fill incomplete LU on the matrix sparsity pattern."""

    def __init__(self, A):
        self.indptr = A.indptr
        self.indices = A.indices
        self.diag_idx = A.diag_idx
        self.data = A.data.copy()
        bad = _ilu0_numba(self.indptr, self.indices, self.data, self.diag_idx)
        if bad >= 0:
            raise ZeroDivisionError(f"zero pivot in row {bad}")

    def apply(self, r):
        out = np.empty(len(r))
        _ilu0_solve(self.indptr, self.indices, self.data, self.diag_idx,
                    r, out)
        return out


class Jacobi:
    def __init__(self, A):
        d = A.diagonal().copy()
        d[d == 0.0] = 1.0
        self.inv_diag = 1.0 / d

    def apply(self, r):
        return self.inv_diag * r


class BlockJacobi:
    """Dense LU of the bs x bs diagonal blocks (node-interleaved dofs)."""

    def __init__(self, A, bs):
        if A.n % bs:
            raise ValueError("matrix size not a multiple of block size")
        nb = A.n // bs
        blocks = np.zeros((nb, bs, bs))
        _extract_blocks(A.indptr, A.indices, A.data, bs, blocks)
        self.inv = np.linalg.inv(blocks)
        self.bs = bs

    def apply(self, r):
        rb = r.reshape(-1, self.bs, 1)
        return (self.inv @ rb).reshape(-1)


@njit(cache=True)
def _extract_blocks(indptr, indices, data, bs, blocks):
    n = len(indptr) - 1
    for i in range(n):
        ib = i // bs
        il = i - ib * bs
        lo = ib * bs
        hi = lo + bs
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if lo <= j < hi:
                blocks[ib, il, j - lo] = data[k]


class Identity:
    def apply(self, r):
        return r


def make_preconditioner(A, name, block_size=1):
    """Build the named preconditioner; ILU(0) zero pivots fall back to
    Jacobi."""
    if name == "none":
        return Identity()
    if name == "jacobi":
        return Jacobi(A)
    if name == "ilu0":
        try:
            return ILU0(A)
        except ZeroDivisionError:
            return Jacobi(A)
    if name == "block_jacobi":
        try:
            return BlockJacobi(A, block_size)
        except np.linalg.LinAlgError:
            return Jacobi(A)
    raise ValueError(f"unknown preconditioner {name!r}")


# ── Krylov ──────────────────────────────────────────────────────────────

@dataclass
class SolverConfig:
    method: str = "bicgstab"
    preconditioner: str = "ilu0"
    rel_tol: float = 1e-7
    abs_tol: float = 0.0
    max_iters: int = 1000
    gmres_restart: int = 30
    diagonal_scale: bool = False
    block_size: int = 1


@dataclass
class NewtonConfig:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-12
    step_tol: float = 0.0
    max_iters: int = 25


class KrylovResult:
    def __init__(self, x, iters, converged, final_residual, reason=""):
        self.x = x
        self.iters = iters
        self.converged = converged
        self.final_residual = final_residual
        self.reason = reason

    def __iter__(self):
        return iter((self.x, self.iters, self.converged,
                     self.final_residual))


def krylov_solve(A, b, config, x0=None, M=None):
    """Solve A x = b; returns KrylovResult.  Convergence means the true
    residual satisfies ||b - A x|| <= max(rel_tol*||b||, abs_tol).  With
    diagonal_scale the criterion applies to the symmetrically scaled
    system S A S (S = |diag|^-1/2), whose residual norm weighs all dofs
    comparably when the diagonal spans many orders of magnitude."""
    if config.diagonal_scale:
        d = np.abs(A.diagonal())
        d[d == 0.0] = 1.0
        s = 1.0 / np.sqrt(d)
        As = A.scaled(s)
        bs_ = s * b
        xs0 = x0 / s if x0 is not None else None
        res = krylov_solve(As, bs_,
                           SolverConfig(config.method, config.preconditioner,
                                        config.rel_tol, config.abs_tol,
                                        config.max_iters,
                                        config.gmres_restart, False,
                                        config.block_size),
                           x0=xs0, M=M)
        return KrylovResult(s * res.x, res.iters, res.converged,
                            res.final_residual, res.reason)

    if M is None:
        M = make_preconditioner(A, config.preconditioner, config.block_size)
    tol = max(config.rel_tol * np.linalg.norm(b), config.abs_tol)
    if config.method == "bicgstab":
        x, iters, reason = _bicgstab(A, b, x0, M, tol, config.max_iters)
    elif config.method == "gmres":
        x, iters, reason = _gmres(A, b, x0, M, tol, config.max_iters,
                                  config.gmres_restart)
    else:
        raise ValueError(f"unknown Krylov method {config.method!r}")
    true = np.linalg.norm(b - A.matvec(x))
    return KrylovResult(x, iters, bool(true <= tol), true, reason)


def _bicgstab(A, b, x0, M, tol, max_iters):
    """Right-preconditioned BiCGStab."""
    x = np.zeros(A.n) if x0 is None else x0.astype(float).copy()
    r = b - A.matvec(x)
    if np.linalg.norm(r) <= tol:
        return x, 0, ""
    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros(A.n)
    p = np.zeros(A.n)
    tiny = np.finfo(float).tiny * 1e4
    for it in range(1, max_iters + 1):
        rho_new = r_hat @ r
        if abs(rho_new) < tiny or abs(omega) < tiny:
            return x, it - 1, "breakdown: rho or omega vanished"
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        p_hat = M.apply(p)
        v = A.matvec(p_hat)
        denom = r_hat @ v
        if abs(denom) < tiny:
            return x, it - 1, "breakdown: r_hat . v vanished"
        alpha = rho / denom
        s = r - alpha * v
        if np.linalg.norm(s) <= tol:
            x = x + alpha * p_hat
            return x, it, ""
        s_hat = M.apply(s)
        t = A.matvec(s_hat)
        tt = t @ t
        if tt < tiny:
            return x + alpha * p_hat, it, "breakdown: t vanished"
        omega = (t @ s) / tt
        x = x + alpha * p_hat + omega * s_hat
        r = s - omega * t
        if np.linalg.norm(r) <= tol:
            return x, it, ""
    return x, max_iters, "max iterations"


def _gmres(A, b, x0, M, tol, max_iters, restart):
    """Right-preconditioned GMRES with Givens rotations; the recurrence
    residual is monotone within each cycle."""
    x = np.zeros(A.n) if x0 is None else x0.astype(float).copy()
    total = 0
    while total < max_iters:
        r = b - A.matvec(x)
        beta = np.linalg.norm(r)
        if beta <= tol:
            return x, total, ""
        m = min(restart, max_iters - total)
        V = np.zeros((m + 1, A.n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        for j in range(m):
            w = A.matvec(M.apply(V[j]))
            for i in range(j + 1):
                H[i, j] = V[i] @ w
                w -= H[i, j] * V[i]
            h_next = np.linalg.norm(w)
            H[j + 1, j] = h_next
            if h_next > 0.0:
                V[j + 1] = w / h_next
            for i in range(j):
                h1 = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = h1
            rnorm = np.hypot(H[j, j], H[j + 1, j])
            if rnorm == 0.0:
                k = j
                break
            cs[j] = H[j, j] / rnorm
            sn[j] = H[j + 1, j] / rnorm
            H[j, j] = rnorm
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            k = j + 1
            total += 1
            if abs(g[j + 1]) <= tol or h_next == 0.0:
                break
        if k > 0:
            y = np.zeros(k)
            for i in range(k - 1, -1, -1):
                y[i] = (g[i] - H[i, i + 1:k] @ y[i + 1:k]) / H[i, i]
            x = x + M.apply(V[:k].T @ y)
        if np.linalg.norm(b - A.matvec(x)) <= tol:
            return x, total, ""
        if k == 0:
            return x, total, "breakdown: stalled Arnoldi"
    return x, total, "max iterations"


# ── Newton ──────────────────────────────────────────────────────────────

class NewtonResult:
    def __init__(self, u, iters, converged, final_norm, lin_iters, reason=""):
        self.u = u
        self.iters = iters
        self.converged = converged
        self.final_norm = final_norm
        self.lin_iters = lin_iters
        self.reason = reason

    def __iter__(self):
        return iter((self.u, self.iters, self.converged))


def newton_solve(residual_fn, jacobian_fn, u0, newton_config, linear_config,
                 precond_fn=None):
    """Full-step Newton.  Stops when ||F|| <= max(rel_tol*||F0||, abs_tol)
    or the update norm drops below step_tol.  precond_fn(A) may supply a
    reusable preconditioner for the linear solves."""
    u = np.asarray(u0, dtype=np.float64).copy()
    F = residual_fn(u)
    f0 = np.linalg.norm(F)
    target = max(newton_config.rel_tol * f0, newton_config.abs_tol)
    lin_total = 0
    fn = f0
    if f0 <= target:
        return NewtonResult(u, 0, True, f0, 0)
    for it in range(1, newton_config.max_iters + 1):
        A = jacobian_fn(u)
        M = precond_fn(A) if precond_fn is not None else None
        lin = krylov_solve(A, -F, linear_config, M=M)
        lin_total += lin.iters
        if not lin.converged:
            return NewtonResult(u, it - 1, False, np.linalg.norm(F),
                                lin_total,
                                f"linear solve failed: {lin.reason or 'tol'}"
                                f" (res {lin.final_residual:.3e})")
        u += lin.x
        F = residual_fn(u)
        fn = np.linalg.norm(F)
        if fn <= target:
            return NewtonResult(u, it, True, fn, lin_total)
        if np.linalg.norm(lin.x) <= newton_config.step_tol:
            return NewtonResult(u, it, True, fn, lin_total, "step tolerance")
    return NewtonResult(u, newton_config.max_iters, False, fn, lin_total,
                        "max iterations")
