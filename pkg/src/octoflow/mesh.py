"""FEM mesh on a balanced tree: node enumeration, hanging-node
constraints, boundary tags, and transfer between successive meshes.

Hanging corners are detected by matching corner points against the edge
midpoints (and, in 3D, face centers) of every retained element; lattice
parity makes each such match unambiguous.  Hanging slots carry no node
id: elements reference them as negative entries of elem_to_node, and
assembly distributes their rows/columns to the master nodes.
"""

import numpy as np

from .tree import (L_MAX, ELIMINATED, corner_offsets, is_balanced)

AXIS_TAGS = ("x_min", "x_max", "y_min", "y_max", "z_min", "z_max")


def _pack_points(pts, dim):
    """Collision-free uint64 key per lattice point.  3D points are
    packed on the level-20 lattice, which bounds 3D meshes at level 19
    (spot points live one level below the finest cells)."""
    pts = np.asarray(pts, dtype=np.int64)
    if dim == 2:
        return pts[:, 0].astype(np.uint64) | (pts[:, 1].astype(np.uint64) << np.uint64(32))
    shift = np.uint64(L_MAX - 20)
    if np.any(pts & np.int64((1 << (L_MAX - 20)) - 1)):
        raise ValueError("3D mesh points finer than level 20 lattice")
    p = pts.astype(np.uint64) >> shift
    return p[:, 0] | (p[:, 1] << np.uint64(21)) | (p[:, 2] << np.uint64(42))


def _unpack_points(keys, dim):
    """Inverse of _pack_points."""
    keys = np.asarray(keys, dtype=np.uint64)
    if dim == 2:
        out = np.stack([keys & np.uint64(0xFFFFFFFF),
                        keys >> np.uint64(32)], axis=1)
        return out.astype(np.int64)
    m = np.uint64((1 << 21) - 1)
    out = np.stack([keys & m, (keys >> np.uint64(21)) & m,
                    (keys >> np.uint64(42)) & m], axis=1)
    return out.astype(np.int64) << (L_MAX - 20)


def _entity_spots(dim):
    """Half-unit offsets of edge midpoints (and 3D face centers) within a
    reference cell, paired with the corner indices that master them."""
    offs = corner_offsets(dim)
    spots = []
    for axis in range(dim):
        others = [j for j in range(dim) if j != axis]
        for rest in corner_offsets(dim - 1) if dim > 1 else [()]:
            half = np.zeros(dim, dtype=np.int64)
            half[axis] = 1
            masters = []
            for c in range(2 ** dim):
                if all(offs[c, others[k]] == rest[k] for k in range(dim - 1)):
                    masters.append(c)
            for k, j in enumerate(others):
                half[j] = 2 * rest[k]
            spots.append((half.copy(), tuple(masters)))
    if dim == 3:
        for axis in range(3):
            for val in (0, 1):
                half = np.ones(3, dtype=np.int64)
                half[axis] = 2 * val
                masters = tuple(c for c in range(8) if offs[c, axis] == val)
                spots.append((half, masters))
    return spots


class NodalField:
    """Per-node scalar values bound to a mesh."""

    def __init__(self, mesh, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (mesh.nnodes,):
            raise ValueError("field length does not match mesh node count")
        self.mesh = mesh
        self.values = values


class Mesh:
    """Immutable FEM mesh over the retained leaves of a balanced tree."""

    def __init__(self, tree):
        if not is_balanced(tree):
            raise ValueError("tree is not 2:1 balanced")
        self.tree = tree
        self.dim = tree.dim
        ncorner = 2 ** self.dim
        ret = tree.retained()
        self.elem_leaf = ret
        self.elem_anchor = tree.anchors[ret]
        self.elem_level = tree.levels[ret]
        ne = len(ret)

        size = (np.int64(1) << (L_MAX - self.elem_level))
        offs = corner_offsets(self.dim)
        corners = (self.elem_anchor[:, None, :] +
                   offs[None, :, :] * size[:, None, None])  # (ne, 2^d, d)
        corner_keys = _pack_points(corners.reshape(-1, self.dim), self.dim)

        # spot map: every edge-midpoint / face-center point -> master corners
        entities = _entity_spots(self.dim)
        self._spot_masters = [m for _, m in entities]
        spot_keys = []
        for half, _ in entities:
            pts = self.elem_anchor + half[None, :] * (size // 2)[:, None]
            spot_keys.append(_pack_points(pts, self.dim))
        nspot_kinds = len(entities)
        spot_keys = np.concatenate(spot_keys)
        spot_owner = np.tile(np.arange(ne), nspot_kinds)
        spot_kind = np.repeat(np.arange(nspot_kinds), ne)

        # a corner point is hanging iff it coincides with some spot
        sk_sorted = np.sort(spot_keys)
        pos = np.searchsorted(sk_sorted, corner_keys)
        pos = np.minimum(pos, len(sk_sorted) - 1)
        hanging_flat = sk_sorted[pos] == corner_keys

        # independent nodes: id by first encounter in (element, corner) order
        indep_keys = corner_keys[~hanging_flat]
        uk, first_pos = np.unique(indep_keys, return_index=True)
        order = np.argsort(first_pos, kind="stable")
        id_of_uk = np.empty(len(uk), dtype=np.int64)
        id_of_uk[order] = np.arange(len(uk))
        nn = len(uk)
        self._point_key_sorted = uk
        self._point_key_id = id_of_uk

        node_lattice = np.empty((nn, self.dim), dtype=np.int64)
        flat_corners = corners.reshape(-1, self.dim)[~hanging_flat]
        node_lattice[id_of_uk[np.searchsorted(uk, indep_keys)]] = flat_corners
        self.node_lattice = node_lattice
        self.nodes = node_lattice * (tree.domain_scale / 2.0 ** L_MAX)

        # hanging slots: one per unique hanging point, resolved to masters
        hk = corner_keys[hanging_flat]
        hk_u, hk_first = np.unique(hk, return_index=True)
        horder = np.argsort(hk_first, kind="stable")
        slot_of_hk = np.empty(len(hk_u), dtype=np.int64)
        slot_of_hk[horder] = np.arange(len(hk_u))

        # owning spot for each unique hanging point (lattice parity makes
        # any duplicate matches identical)
        s_idx = np.searchsorted(sk_sorted, hk_u)
        sort_spot = np.argsort(spot_keys, kind="stable")
        owner = spot_owner[sort_spot][s_idx]
        kind = spot_kind[sort_spot][s_idx]

        corner_key_grid = corner_keys.reshape(ne, ncorner)
        resolved = {}

        def resolve(key):
            """Map a point key to {independent key: coefficient}."""
            if key in resolved:
                return resolved[key]
            j = np.searchsorted(uk, key)
            if j < len(uk) and uk[j] == key:
                resolved[key] = {key: 1.0}
                return resolved[key]
            h = np.searchsorted(hk_u, key)
            own, kd = owner[h], kind[h]
            out = {}
            share = 1.0 / len(self._spot_masters[kd])
            for c in self._spot_masters[kd]:
                for mk, mc in resolve(corner_key_grid[own, c]).items():
                    out[mk] = out.get(mk, 0.0) + share * mc
            resolved[key] = out
            return out

        self.hanging = []
        for h in horder:  # slot order = first-encounter order
            combo = resolve(hk_u[h])
            ids = id_of_uk[np.searchsorted(uk, np.array(sorted(combo)))]
            self.hanging.append([(int(i), combo[k])
                                 for i, k in zip(ids, sorted(combo))])
        self.hanging_lattice = _unpack_points(hk_u[horder], self.dim) \
            if len(hk_u) else np.zeros((0, self.dim), dtype=np.int64)

        e2n = np.empty(ne * ncorner, dtype=np.int64)
        e2n[~hanging_flat] = id_of_uk[np.searchsorted(uk, indep_keys)]
        e2n[hanging_flat] = -1 - slot_of_hk[np.searchsorted(hk_u, hk)]
        self.elem_to_node = e2n.reshape(ne, ncorner)

        self._build_gather()
        self._build_boundary_tags()

    # ── derived structure ──

    def _build_gather(self):
        """CSR map from (element, corner) slots to (node, coeff) pairs,
        with hanging slots expanded to their masters."""
        ne, ncorner = self.elem_to_node.shape
        indptr = [0]
        nodes, coeffs = [], []
        for row in self.elem_to_node.reshape(-1):
            if row >= 0:
                nodes.append(row)
                coeffs.append(1.0)
            else:
                for nid, c in self.hanging[-1 - row]:
                    nodes.append(nid)
                    coeffs.append(c)
            indptr.append(len(nodes))
        self.gather_indptr = np.array(indptr, dtype=np.int64)
        self.gather_nodes = np.array(nodes, dtype=np.int64)
        self.gather_coeffs = np.array(coeffs, dtype=np.float64)

    def _build_boundary_tags(self):
        top = np.int64(1) << L_MAX
        masks = {}
        for j in range(self.dim):
            masks[AXIS_TAGS[2 * j]] = self.node_lattice[:, j] == 0
            masks[AXIS_TAGS[2 * j + 1]] = self.node_lattice[:, j] == top
        ext = np.zeros(self.nnodes, dtype=bool)
        tree = self.tree
        elim = np.flatnonzero(tree.flags == ELIMINATED)
        if len(elim):
            e_size = np.int64(1) << (L_MAX - tree.levels[elim])
            e_lo = tree.anchors[elim]
            e_hi = e_lo + e_size[:, None]
            for j in range(self.dim):
                for side in (0, 1):
                    plane = e_hi[:, j] if side else e_lo[:, j]
                    on = self.node_lattice[:, j][None, :] == plane[:, None]
                    for k in range(self.dim):
                        if k == j:
                            continue
                        on &= (self.node_lattice[:, k][None, :] >= e_lo[:, k][:, None]) & \
                              (self.node_lattice[:, k][None, :] <= e_hi[:, k][:, None])
                    ext |= on.any(axis=0)
        masks["external"] = ext
        self.boundary_masks = masks

    # ── queries ──

    @property
    def nnodes(self):
        return len(self.nodes)

    @property
    def nelems(self):
        return len(self.elem_level)

    @property
    def constraints(self):
        """Hanging slot index -> list of (master node id, coefficient)."""
        return {h: list(m) for h, m in enumerate(self.hanging)}

    def elem_h(self):
        """Physical side length per element (cells are cubes)."""
        return self.tree.domain_scale * 0.5 ** self.elem_level.astype(np.float64)

    def elem_origin(self):
        return self.elem_anchor * (self.tree.domain_scale / 2.0 ** L_MAX)

    def gather(self, values):
        """(ne, 2^d) corner values of a nodal array, constraints applied."""
        vals = self.gather_coeffs * values[self.gather_nodes]
        out = np.add.reduceat(vals, self.gather_indptr[:-1])
        return out.reshape(self.nelems, -1)

    def locate_elem(self, lattice_points):
        """Element index containing each lattice point; points falling in
        eliminated leaves are nudged toward lower coordinates until a
        retained leaf contains them."""
        pts = np.asarray(lattice_points, dtype=np.int64)
        leaf = self.tree.locate(pts)
        leaf_to_elem = np.full(self.tree.nleaves, -1, dtype=np.int64)
        leaf_to_elem[self.elem_leaf] = np.arange(self.nelems)
        elem = leaf_to_elem[leaf]
        bad = np.flatnonzero(elem < 0)
        if len(bad):
            pts = pts.copy()
            for j in range(self.dim):
                pts[bad, j] -= 1
                elem[bad] = leaf_to_elem[self.tree.locate(pts[bad])]
                bad = bad[elem[bad] < 0]
                if not len(bad):
                    break
        if len(bad):
            raise ValueError("point lies in an eliminated region")
        return elem

    def eval_field(self, values, lattice_points):
        """Multilinear FE evaluation of a nodal array at lattice points."""
        pts = np.asarray(lattice_points, dtype=np.int64)
        elem = self.locate_elem(pts)
        size = (np.int64(1) << (L_MAX - self.elem_level[elem])).astype(np.float64)
        xi = 2.0 * (pts - self.elem_anchor[elem]) / size[:, None] - 1.0
        xi = np.clip(xi, -1.0, 1.0)
        corner_vals = self.gather(values)[elem]  # (m, 2^d)
        offs = corner_offsets(self.dim)
        out = np.zeros(len(pts))
        for c in range(2 ** self.dim):
            w = np.ones(len(pts))
            for j in range(self.dim):
                s = 2.0 * offs[c, j] - 1.0
                w *= 0.5 * (1.0 + s * xi[:, j])
            out += w * corner_vals[:, c]
        return out


def build_mesh(tree):
    """FEM mesh over the retained leaves of a 2:1-balanced tree."""
    return Mesh(tree)


def classify_boundary(mesh, tag):
    """Sorted independent node ids carrying the tag."""
    if tag not in mesh.boundary_masks:
        raise ValueError(f"unknown boundary tag {tag!r}")
    return np.flatnonzero(mesh.boundary_masks[tag])


def transfer_fields(old_mesh, new_mesh, fields):
    """Sample each old-mesh field at the new mesh's node points.

    Copies coincident nodes exactly, interpolates multilinearly under
    refinement, and injects child corner values under coarsening.
    """
    if old_mesh.tree.domain_scale != new_mesh.tree.domain_scale or \
       old_mesh.dim != new_mesh.dim:
        raise ValueError("meshes live on different root domains")
    out = []
    for f in fields:
        vals = f.values if isinstance(f, NodalField) else np.asarray(f)
        new_vals = old_mesh.eval_field(vals, new_mesh.node_lattice)
        out.append(NodalField(new_mesh, new_vals) if isinstance(f, NodalField)
                   else new_vals)
    return out
