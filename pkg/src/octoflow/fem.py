"""Multilinear reference elements, Gauss quadrature, generic assembly
with hanging-constraint elimination, and Dirichlet application.

Corner/shape ordering is tensor order with axis 0 fastest, matching
mesh.elem_to_node.  Cells are axis-aligned cubes, so the Jacobian is
diagonal and the VMS element metric is G = diag(4/h_i^2).
"""

import numpy as np
from numpy.polynomial.legendre import leggauss

from .tree import corner_offsets
from .la import SparseMatrix


class QuadratureRule:
    """Tensor-product Gauss rule on [-1,1]^d."""

    def __init__(self, points, weights, degree):
        self.points = points
        self.weights = weights
        self.degree = degree


def gauss_rule(npts, dim):
    """npts-point Gauss-Legendre rule per direction; exact for
    polynomials of degree 2*npts-1 in each variable."""
    x1, w1 = leggauss(npts)
    grids = np.meshgrid(*([x1] * dim), indexing="ij")
    # axis 0 fastest to match corner ordering
    pts = np.stack([g.reshape(-1, order="F") for g in grids], axis=1)
    ws = np.ones(npts ** dim)
    for g in np.meshgrid(*([w1] * dim), indexing="ij"):
        ws *= g.reshape(-1, order="F")
    return QuadratureRule(pts, ws, 2 * npts - 1)


def shape_eval(ref_point):
    """Shape values and reference gradients of the 2^d multilinear basis
    at one point of [-1,1]^d."""
    xi = np.asarray(ref_point, dtype=np.float64)
    dim = len(xi)
    signs = 2.0 * corner_offsets(dim) - 1.0  # (nen, d) in {-1,+1}
    factors = 0.5 * (1.0 + signs * xi[None, :])  # (nen, d)
    nen = 2 ** dim
    N = factors.prod(axis=1)
    dN = np.empty((nen, dim))
    for j in range(dim):
        rest = np.delete(factors, j, axis=1).prod(axis=1) if dim > 1 \
            else np.ones(nen)
        dN[:, j] = 0.5 * signs[:, j] * rest
    return N, dN


def shape_hessian_many(points):
    """Mixed second derivatives of the multilinear basis on the reference
    cell: (m, nen, d, d) with zero diagonal (pure second derivatives of
    multilinears vanish elementwise)."""
    pts = np.asarray(points, dtype=np.float64)
    m, dim = pts.shape
    nen = 2 ** dim
    signs = 2.0 * corner_offsets(dim) - 1.0
    out = np.zeros((m, nen, dim, dim))
    for q in range(m):
        factors = 0.5 * (1.0 + signs * pts[q][None, :])
        for i in range(dim):
            for j in range(i + 1, dim):
                keep = [k for k in range(dim) if k not in (i, j)]
                rest = factors[:, keep].prod(axis=1) if keep \
                    else np.ones(nen)
                val = 0.25 * signs[:, i] * signs[:, j] * rest
                out[q, :, i, j] = val
                out[q, :, j, i] = val
    return out


def shape_eval_many(points):
    """Vectorized shape_eval: (m, nen) values and (m, nen, d) gradients."""
    pts = np.asarray(points, dtype=np.float64)
    m, dim = pts.shape
    nen = 2 ** dim
    N = np.empty((m, nen))
    dN = np.empty((m, nen, dim))
    for q in range(m):
        N[q], dN[q] = shape_eval(pts[q])
    return N, dN


class ElementGeometry:
    """Axis-aligned cell geometry: origin, per-axis size, metric."""

    def __init__(self, origin, h):
        self.origin = np.asarray(origin, dtype=np.float64)
        self.h = np.asarray(h, dtype=np.float64)

    @property
    def G(self):
        return np.diag(4.0 / self.h ** 2)

    @property
    def detJ(self):
        return np.prod(self.h / 2.0)

    def to_physical(self, xi):
        return self.origin + (np.asarray(xi) + 1.0) * self.h / 2.0


class QuadPoint:
    """Per-quadrature-point data handed to assembly kernels: shape values
    N, physical gradients dN, integration weight w (already includes the
    Jacobian determinant), physical position x."""

    def __init__(self, N, dN, w, x):
        self.N = N
        self.dN = dN
        self.w = w
        self.x = x


def assemble(mesh, kernel, fields=(), ndof=1, nquad=2):
    """Assemble kernel contributions over all elements.

    kernel(geom, local_fields, qp) -> (local matrix, local vector) per
    quadrature point, with local dofs interleaved per corner slot.
    Hanging slots are resolved on gather and distributed on scatter.
    Either return may be None.
    """
    dim = mesh.dim
    nen = 2 ** dim
    rule = gauss_rule(nquad, dim)
    N_q, dN_q = shape_eval_many(rule.points)
    nn = mesh.nnodes
    ndofs_total = nn * ndof

    local_fields = [mesh.gather(np.asarray(f.values if hasattr(f, "values")
                                           else f)) for f in fields]
    gp = mesh.gather_indptr
    gnodes = mesh.gather_nodes
    gcoeffs = mesh.gather_coeffs

    rows, cols, vals = [], [], []
    vec = np.zeros(ndofs_total)
    hs = mesh.elem_h()
    origins = mesh.elem_origin()

    for e in range(mesh.nelems):
        h = np.full(dim, hs[e])
        geom = ElementGeometry(origins[e], h)
        detJ = geom.detJ
        loc_f = [lf[e] for lf in local_fields]
        Ae = np.zeros((nen * ndof, nen * ndof))
        be = np.zeros(nen * ndof)
        for q in range(len(rule.weights)):
            dN_phys = dN_q[q] * (2.0 / h)[None, :]
            qp = QuadPoint(N_q[q], dN_phys, rule.weights[q] * detJ,
                           geom.to_physical(rule.points[q]))
            mat, rhs = kernel(geom, loc_f, qp)
            if mat is not None:
                Ae += mat
            if rhs is not None:
                be += rhs
        # scatter with constraint distribution
        base = e * nen
        slot_masters = [(gnodes[gp[base + s]:gp[base + s + 1]],
                         gcoeffs[gp[base + s]:gp[base + s + 1]])
                        for s in range(nen)]
        for si in range(nen):
            ni, ci = slot_masters[si]
            for sj in range(nen):
                nj, cj = slot_masters[sj]
                block = Ae[si * ndof:(si + 1) * ndof, sj * ndof:(sj + 1) * ndof]
                if not block.any():
                    continue
                for a in range(ndof):
                    for b in range(ndof):
                        if block[a, b] == 0.0:
                            continue
                        w = np.outer(ci, cj) * block[a, b]
                        rows.append(np.repeat(ni * ndof + a, len(nj)))
                        cols.append(np.tile(nj * ndof + b, len(ni)))
                        vals.append(w.ravel())
            for a in range(ndof):
                np.add.at(vec, ni * ndof + a, ci * be[si * ndof + a])

    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
        vals = np.zeros(0)
    A = SparseMatrix.from_coo(rows, cols, vals, ndofs_total)
    return A, vec


def apply_dirichlet(system, bc, ndof=1, symmetric=False):
    """Constrain dofs given as (node id, component, value) triples.

    Rows become identity with the value on the right side; the symmetric
    variant also eliminates columns with a rhs correction.  Returns a new
    (matrix, vector) pair.
    """
    A, b = system
    if not bc:
        return A, b
    n = A.n
    nnodes = n // ndof
    dofs, values = [], []
    for node, comp, value in bc:
        if not 0 <= node < nnodes:
            raise ValueError(f"node id {node} not an independent node")
        if not 0 <= comp < ndof:
            raise ValueError(f"component {comp} out of range")
        dofs.append(node * ndof + comp)
        values.append(value)
    dofs = np.asarray(dofs, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    return apply_dirichlet_dofs(A, b, dofs, values, symmetric)


def apply_dirichlet_dofs(A, b, dofs, values, symmetric=False):
    """Dirichlet application on raw dof indices."""
    b = b.copy()
    if symmetric:
        g = np.zeros(A.n)
        g[dofs] = values
        b -= A.matvec(g)
    data = A.data.copy()
    is_bc = np.zeros(A.n, dtype=bool)
    is_bc[dofs] = True
    row_of = np.repeat(np.arange(A.n), np.diff(A.indptr))
    data[is_bc[row_of]] = 0.0
    if symmetric:
        data[is_bc[A.indices]] = 0.0
    data[A.diag_idx[dofs]] = 1.0
    b[dofs] = values
    return SparseMatrix(A.indptr, A.indices, data, A.n, copy=False), b
