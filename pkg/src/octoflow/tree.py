"""Linear quadtree/octree on a fixed integer lattice.

Octants live on a 2^L_MAX per-axis lattice; an octant at refinement level
``lv`` spans ``2^(L_MAX - lv)`` lattice units per axis.  The tree is stored
as flat arrays of leaf anchors/levels/flags kept in Morton (pre-order)
order, which makes point location a binary search and neighbor probes
vectorizable.
"""

import numpy as np

L_MAX = 31

INSIDE = 0
BOUNDARY_INTERSECTING = 1
ELIMINATED = 2

FLAG_NAMES = {INSIDE: "inside",
              BOUNDARY_INTERSECTING: "boundary_intersecting",
              ELIMINATED: "eliminated"}

# bit-spreading masks: place every bit of a 32-bit (2D) or 21-bit (3D)
# integer at stride dim
_MASKS_2D = ((16, 0x0000FFFF0000FFFF), (8, 0x00FF00FF00FF00FF),
             (4, 0x0F0F0F0F0F0F0F0F), (2, 0x3333333333333333),
             (1, 0x5555555555555555))
_MASKS_3D = ((32, 0x1F00000000FFFF), (16, 0x1F0000FF0000FF),
             (8, 0x100F00F00F00F00F), (4, 0x10C30C30C30C30C3),
             (2, 0x1249249249249249))


def _spread_bits(x, dim):
    """Spread the low bits of uint64 array x so consecutive bits land
    dim positions apart (x must fit 32 bits for dim=2, 21 bits for dim=3)."""
    x = x.astype(np.uint64)
    masks = _MASKS_2D if dim == 2 else _MASKS_3D
    for shift, mask in masks:
        x = (x | (x << np.uint64(shift))) & np.uint64(mask)
    return x


def _interleave(anchors, bits, dim):
    """Morton keys (uint64) for integer anchors given per-axis bit count.

    Axis 0 occupies the least significant position of each bit group.
    Requires dim*bits <= 63.
    """
    key = np.zeros(len(anchors), dtype=np.uint64)
    for j in range(dim):
        key |= _spread_bits(anchors[:, j].astype(np.uint64), dim) << np.uint64(j)
    return key


def corner_offsets(dim):
    """(2^d, d) array of unit corner offsets, axis 0 fastest."""
    c = np.arange(2 ** dim)
    return np.stack([(c >> j) & 1 for j in range(dim)], axis=1).astype(np.int64)


def morton_encode(anchor, level, dim):
    """Morton key of an octant: bit interleave of its anchor on the
    deepest (level L_MAX) lattice.  Keys order leaves in depth-first
    pre-order; an ancestor shares the key of its first descendant.

    Parameters
    ----------
    anchor : sequence of d ints, multiples of 2^(L_MAX - level)
    level : int in [0, L_MAX]
    dim : 2 or 3

    Returns
    -------
    int (python int; exceeds 64 bits for dim=3)
    """
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    if not 0 <= level <= L_MAX:
        raise ValueError(f"level {level} outside [0, {L_MAX}]")
    size = 1 << (L_MAX - level)
    key = 0
    for j, a in enumerate(anchor):
        a = int(a)
        if not 0 <= a < (1 << L_MAX):
            raise ValueError(f"anchor coordinate {a} outside lattice")
        if a % size:
            raise ValueError(f"anchor {tuple(anchor)} not aligned to level {level}")
        for b in range(L_MAX):
            key |= ((a >> b) & 1) << (b * dim + j)
    return key


def morton_decode(key, level, dim):
    """Inverse of morton_encode: recover the anchor of an octant at the
    given level.  Raises if the key is not valid for that level."""
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    if not 0 <= key < (1 << (dim * L_MAX)):
        raise ValueError("key outside lattice range")
    anchor = []
    for j in range(dim):
        a = 0
        for b in range(L_MAX):
            a |= ((key >> (b * dim + j)) & 1) << b
        anchor.append(a)
    size = 1 << (L_MAX - level)
    if any(a % size for a in anchor):
        raise ValueError(f"key {key} is not an octant anchor at level {level}")
    return tuple(anchor)


class Octant:
    """A single leaf: lattice anchor, level, retain flag."""

    __slots__ = ("anchor", "level", "retain_flag")

    def __init__(self, anchor, level, retain_flag=INSIDE):
        self.anchor = tuple(int(a) for a in anchor)
        self.level = int(level)
        self.retain_flag = int(retain_flag)

    def __repr__(self):
        return (f"Octant(anchor={self.anchor}, level={self.level}, "
                f"retain_flag={FLAG_NAMES[self.retain_flag]})")

    def __eq__(self, other):
        return (self.anchor == other.anchor and self.level == other.level
                and self.retain_flag == other.retain_flag)


class Tree:
    """Complete linear tree: Morton-sorted, non-overlapping leaves that
    tile the root cube.  Immutable after construction."""

    def __init__(self, anchors, levels, flags, dim, domain_scale=1.0,
                 validate=True):
        self.anchors = np.ascontiguousarray(anchors, dtype=np.int64)
        self.levels = np.ascontiguousarray(levels, dtype=np.int64)
        self.flags = np.ascontiguousarray(flags, dtype=np.int64)
        self.dim = int(dim)
        self.domain_scale = float(domain_scale)
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {dim}")
        n = len(self.levels)
        if self.anchors.shape != (n, self.dim) or self.flags.shape != (n,):
            raise ValueError("inconsistent leaf array shapes")
        # effective key depth: deepest level present (keys at this depth
        # fit uint64 for the tree sizes we build)
        self._eff = int(self.levels.max()) if n else 0
        if self.dim == 3 and self._eff > 21:
            raise ValueError("3D trees deeper than level 21 are unsupported")
        order = np.argsort(self._keys_at_eff(self.anchors), kind="stable")
        self.anchors = self.anchors[order]
        self.levels = self.levels[order]
        self.flags = self.flags[order]
        self._keys = self._keys_at_eff(self.anchors)
        if validate:
            self._validate()

    # ── key helpers ──

    def _keys_at_eff(self, anchors):
        shift = np.int64(L_MAX - self._eff)
        return _interleave(anchors >> shift, self._eff, self.dim)

    def _spans(self):
        # subtree width in effective-depth key units
        return np.uint64(1) << (np.uint64(self.dim) *
                                (np.uint64(self._eff) - self.levels.astype(np.uint64)))

    def _validate(self):
        size = np.int64(1) << (L_MAX - self.levels)
        if np.any(self.anchors % size[:, None]):
            raise ValueError("anchor not aligned to its level")
        if np.any(self.anchors < 0) or np.any(self.anchors + size[:, None] > (1 << L_MAX)):
            raise ValueError("leaf outside root cube")
        spans = self._spans()
        ends = self._keys + spans
        if len(self._keys) and (np.any(self._keys[1:] < ends[:-1]) or
                                int(ends[-1]) != 2 ** (self.dim * self._eff) or
                                int(self._keys[0]) != 0 or
                                int(np.sum(spans)) != 2 ** (self.dim * self._eff)):
            raise ValueError("leaves do not tile the root cube")

    # ── basic queries ──

    @property
    def nleaves(self):
        return len(self.levels)

    @property
    def leaves(self):
        """Leaves as Octant objects in Morton order."""
        return [Octant(self.anchors[i], self.levels[i], self.flags[i])
                for i in range(self.nleaves)]

    def retained(self):
        """Indices of non-eliminated leaves."""
        return np.flatnonzero(self.flags != ELIMINATED)

    def cell_sizes(self):
        """Physical side length per leaf."""
        return self.domain_scale * 0.5 ** self.levels.astype(np.float64)

    def physical_anchor(self, idx=None):
        a = self.anchors if idx is None else self.anchors[idx]
        return a * (self.domain_scale / 2.0 ** L_MAX)

    def locate(self, lattice_points):
        """Leaf index containing each lattice point (clamped to the cube)."""
        pts = np.clip(np.asarray(lattice_points, dtype=np.int64),
                      0, (1 << L_MAX) - 1)
        keys = self._keys_at_eff(pts)
        idx = np.searchsorted(self._keys, keys, side="right") - 1
        return idx

    def dump_text(self):
        """One leaf per line: level, anchor coords, retain flag name."""
        lines = []
        for i in range(self.nleaves):
            coords = " ".join(str(a) for a in self.anchors[i])
            lines.append(f"{self.levels[i]} {coords} {FLAG_NAMES[self.flags[i]]}")
        return "\n".join(lines) + ("\n" if lines else "")

    def __eq__(self, other):
        return (self.dim == other.dim
                and self.domain_scale == other.domain_scale
                and np.array_equal(self.anchors, other.anchors)
                and np.array_equal(self.levels, other.levels)
                and np.array_equal(self.flags, other.flags))


def _corner_points_physical(anchors, levels, dim, domain_scale, pull=0.0):
    """(n, 2^d, d) physical corner coordinates; pull>0 moves corners
    toward cell centers by that relative amount."""
    size = (np.int64(1) << (L_MAX - levels)).astype(np.float64)
    offs = corner_offsets(dim).astype(np.float64)
    corners = anchors[:, None, :].astype(np.float64) + offs[None, :, :] * size[:, None, None]
    if pull:
        centers = anchors.astype(np.float64) + 0.5 * size[:, None]
        corners = centers[:, None, :] + (1.0 - pull) * (corners - centers[:, None, :])
    return corners * (domain_scale / 2.0 ** L_MAX)


def refine_to_geometry(distance_fn, carve_fn, min_level, max_level, dim,
                       domain_scale=1.0):
    """Build a tree by recursive corner testing.

    A cell is split while below min_level, and up to max_level while the
    signed distance changes sign over its 2^d corners.  Cells whose
    corners (pulled slightly inward, so boundary-aligned carves classify
    cleanly) all fall outside the carve membership are marked eliminated
    and never split further.

    Parameters
    ----------
    distance_fn : callable (m, d) physical points -> (m,) signed distances
    carve_fn : callable (m, d) -> (m,) bool membership, or None
    min_level, max_level : int, 0 <= min <= max <= L_MAX
    dim : 2 or 3
    domain_scale : physical side of the root cube

    Returns
    -------
    Tree (unbalanced; run balance_2to1 before meshing)
    """
    if not 0 <= min_level <= max_level <= L_MAX:
        raise ValueError("need 0 <= min_level <= max_level <= L_MAX")
    ncorner = 2 ** dim
    offs = corner_offsets(dim)

    anchors = np.zeros((1, dim), dtype=np.int64)
    levels = np.zeros(1, dtype=np.int64)
    out_a, out_l, out_f = [], [], []

    while len(anchors):
        corners = _corner_points_physical(anchors, levels, dim, domain_scale)
        flat = corners.reshape(-1, dim)
        d = np.asarray(distance_fn(flat), dtype=np.float64).reshape(-1, ncorner)
        one_signed = (d.min(axis=1) > 0) | (d.max(axis=1) < 0)
        if carve_fn is not None:
            pulled = _corner_points_physical(anchors, levels, dim,
                                             domain_scale, pull=2e-9)
            member = np.asarray(carve_fn(pulled.reshape(-1, dim)),
                                dtype=bool).reshape(-1, ncorner)
            eliminated = ~member.any(axis=1)
            partial = member.any(axis=1) & ~member.all(axis=1)
        else:
            eliminated = np.zeros(len(anchors), dtype=bool)
            partial = eliminated
        flags = np.where(eliminated, ELIMINATED,
                         np.where(~one_signed | partial,
                                  BOUNDARY_INTERSECTING, INSIDE))

        # refinement is distance-driven; fully non-member cells stop once
        # min_level is reached (corner membership is exact for the convex
        # carves used here; sub-cell features may be missed by design)
        split = (levels < min_level) | \
                ((levels < max_level) & ~one_signed & ~eliminated)
        keep = ~split
        out_a.append(anchors[keep])
        out_l.append(levels[keep])
        out_f.append(flags[keep])

        parent_a = anchors[split]
        parent_l = levels[split]
        if len(parent_a):
            child_size = (np.int64(1) << (L_MAX - parent_l - 1))
            anchors = (parent_a[:, None, :] +
                       offs[None, :, :] * child_size[:, None, None]).reshape(-1, dim)
            levels = np.repeat(parent_l + 1, ncorner)
        else:
            anchors = np.zeros((0, dim), dtype=np.int64)
            levels = np.zeros(0, dtype=np.int64)

    return Tree(np.concatenate(out_a), np.concatenate(out_l),
                np.concatenate(out_f), dim, domain_scale)


def _carve_flags(anchors, levels, carve_fn, dim, domain_scale):
    """(eliminated, partial) membership masks from pulled-corner tests."""
    if carve_fn is None:
        z = np.zeros(len(anchors), dtype=bool)
        return z, z
    pulled = _corner_points_physical(anchors, levels, dim, domain_scale,
                                     pull=2e-9)
    member = np.asarray(carve_fn(pulled.reshape(-1, dim)),
                        dtype=bool).reshape(len(anchors), -1)
    return ~member.any(axis=1), member.any(axis=1) & ~member.all(axis=1)


def refine_to_band(distance_fn, band, carve_fn, min_level, max_level, dim,
                   domain_scale=1.0):
    """Build a tree resolving the band {|distance| <= band} at max_level.

    A cell is split while below min_level, and up to max_level while it
    may intersect the band: min over corners of |distance| is within
    band plus the cell half-diagonal.  The padding makes the test
    conservative for any 1-Lipschitz signed distance, so thin bands
    cannot slip between corner samples.  Carving follows
    refine_to_geometry.

    Returns an unbalanced Tree; run balance_2to1 before meshing.
    """
    if not 0 <= min_level <= max_level <= L_MAX:
        raise ValueError("need 0 <= min_level <= max_level <= L_MAX")
    ncorner = 2 ** dim
    offs = corner_offsets(dim)

    anchors = np.zeros((1, dim), dtype=np.int64)
    levels = np.zeros(1, dtype=np.int64)
    out_a, out_l, out_f = [], [], []

    while len(anchors):
        corners = _corner_points_physical(anchors, levels, dim, domain_scale)
        d = np.abs(np.asarray(distance_fn(corners.reshape(-1, dim)),
                              dtype=np.float64).reshape(-1, ncorner))
        h = domain_scale * 0.5 ** levels.astype(np.float64)
        near = d.min(axis=1) <= band + 0.5 * h * np.sqrt(dim)
        eliminated, partial = _carve_flags(anchors, levels, carve_fn, dim,
                                           domain_scale)
        flags = np.where(eliminated, ELIMINATED,
                         np.where(near | partial, BOUNDARY_INTERSECTING,
                                  INSIDE))
        split = (levels < min_level) | \
                ((levels < max_level) & near & ~eliminated)
        keep = ~split
        out_a.append(anchors[keep])
        out_l.append(levels[keep])
        out_f.append(flags[keep])

        parent_a = anchors[split]
        parent_l = levels[split]
        if len(parent_a):
            child_size = (np.int64(1) << (L_MAX - parent_l - 1))
            anchors = (parent_a[:, None, :] +
                       offs[None, :, :] * child_size[:, None, None]).reshape(-1, dim)
            levels = np.repeat(parent_l + 1, ncorner)
        else:
            anchors = np.zeros((0, dim), dtype=np.int64)
            levels = np.zeros(0, dtype=np.int64)

    return Tree(np.concatenate(out_a), np.concatenate(out_l),
                np.concatenate(out_f), dim, domain_scale)


def refine_to_points(points, targets, carve_fn, min_level, max_level, dim,
                     domain_scale=1.0):
    """Build a tree where the leaf containing each point reaches that
    point's target level.

    Targets are clipped to [min_level, max_level].  Points on cell
    boundaries bind the cell their lattice coordinate floors into.
    Carving follows refine_to_geometry.

    Returns an unbalanced Tree; run balance_2to1 before meshing.
    """
    if not 0 <= min_level <= max_level <= L_MAX:
        raise ValueError("need 0 <= min_level <= max_level <= L_MAX")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, dim)
    tgt = np.clip(np.asarray(targets, dtype=np.int64), min_level, max_level)
    ncorner = 2 ** dim
    offs = corner_offsets(dim)
    eff = max(int(max_level), 1)

    lat = np.clip((pts / domain_scale * 2.0 ** L_MAX).astype(np.int64),
                  0, (np.int64(1) << L_MAX) - 1)
    keys = _interleave(lat >> np.int64(L_MAX - eff), eff, dim)
    # per target level, a sorted key array for range counting
    by_level = {}
    for t in np.unique(tgt):
        by_level[int(t)] = np.sort(keys[tgt == t])

    anchors = np.zeros((1, dim), dtype=np.int64)
    levels = np.zeros(1, dtype=np.int64)
    out_a, out_l, out_f = [], [], []

    while len(anchors):
        lo = _interleave(anchors >> np.int64(L_MAX - eff), eff, dim)
        span = np.uint64(1) << (np.uint64(dim) *
                                (np.uint64(eff) - levels.astype(np.uint64)))
        deep = np.zeros(len(anchors), dtype=bool)
        for t, arr in by_level.items():
            cand = levels < t
            if not np.any(cand) or not len(arr):
                continue
            a = np.searchsorted(arr, lo[cand])
            b = np.searchsorted(arr, lo[cand] + span[cand])
            deep[cand] |= b > a
        eliminated, partial = _carve_flags(anchors, levels, carve_fn, dim,
                                           domain_scale)
        flags = np.where(eliminated, ELIMINATED,
                         np.where(deep | partial, BOUNDARY_INTERSECTING,
                                  INSIDE))
        split = (levels < min_level) | \
                ((levels < max_level) & deep & ~eliminated)
        keep = ~split
        out_a.append(anchors[keep])
        out_l.append(levels[keep])
        out_f.append(flags[keep])

        parent_a = anchors[split]
        parent_l = levels[split]
        if len(parent_a):
            child_size = (np.int64(1) << (L_MAX - parent_l - 1))
            anchors = (parent_a[:, None, :] +
                       offs[None, :, :] * child_size[:, None, None]).reshape(-1, dim)
            levels = np.repeat(parent_l + 1, ncorner)
        else:
            anchors = np.zeros((0, dim), dtype=np.int64)
            levels = np.zeros(0, dtype=np.int64)

    return Tree(np.concatenate(out_a), np.concatenate(out_l),
                np.concatenate(out_f), dim, domain_scale)


def _neighbor_offsets(dim):
    """Face offsets (2D and 3D) plus edge-diagonal offsets (3D only):
    the adjacency directions the 2:1 invariant covers."""
    offs = []
    for axis in range(dim):
        for sign in (-1, 1):
            o = [0] * dim
            o[axis] = sign
            offs.append(o)
    if dim == 3:
        for a1 in range(3):
            for a2 in range(a1 + 1, 3):
                for s1 in (-1, 1):
                    for s2 in (-1, 1):
                        o = [0, 0, 0]
                        o[a1], o[a2] = s1, s2
                        offs.append(o)
    return np.array(offs, dtype=np.int64)


def balance_2to1(tree):
    """Enforce the 2:1 level condition between face-adjacent (and, in 3D,
    edge-adjacent) retained leaves by splitting the coarser leaf, rippling
    to a fixed point.  Eliminated leaves are never split and impose no
    constraint.

    Returns a new Tree; the input is untouched.
    """
    anchors = tree.anchors.copy()
    levels = tree.levels.copy()
    flags = tree.flags.copy()
    dim = tree.dim
    offs = _neighbor_offsets(dim)
    child_offs = corner_offsets(dim)
    ncorner = 2 ** dim

    while True:
        t = Tree(anchors, levels, flags, dim, tree.domain_scale, validate=False)
        anchors, levels, flags = t.anchors, t.levels, t.flags
        ret = np.flatnonzero(flags != ELIMINATED)
        if not len(ret):
            break
        size = np.int64(1) << (L_MAX - levels[ret])
        centers = anchors[ret] + (size // 2)[:, None]
        # probe the center of the equal-size neighbor in every direction
        probes = centers[:, None, :] + offs[None, :, :] * size[:, None, None]
        in_dom = np.all((probes >= 0) & (probes < (1 << L_MAX)), axis=2)
        src, direc = np.nonzero(in_dom)
        found = t.locate(probes[src, direc])
        bad = (levels[found] < levels[ret[src]] - 1) & (flags[found] != ELIMINATED)
        to_split = np.unique(found[bad])
        if not len(to_split):
            return t
        keep = np.ones(len(levels), dtype=bool)
        keep[to_split] = False
        child_size = np.int64(1) << (L_MAX - levels[to_split] - 1)
        kids_a = (anchors[to_split][:, None, :] +
                  child_offs[None, :, :] * child_size[:, None, None]).reshape(-1, dim)
        kids_l = np.repeat(levels[to_split] + 1, ncorner)
        kids_f = np.repeat(flags[to_split], ncorner)
        anchors = np.concatenate([anchors[keep], kids_a])
        levels = np.concatenate([levels[keep], kids_l])
        flags = np.concatenate([flags[keep], kids_f])
    return Tree(anchors, levels, flags, dim, tree.domain_scale, validate=False)


def is_balanced(tree):
    """True when no retained leaf pair sharing a face (or 3D edge)
    differs by more than one level (single center-probe sweep)."""
    ret = tree.retained()
    if not len(ret):
        return True
    offs = _neighbor_offsets(tree.dim)
    size = np.int64(1) << (L_MAX - tree.levels[ret])
    centers = tree.anchors[ret] + (size // 2)[:, None]
    probes = centers[:, None, :] + offs[None, :, :] * size[:, None, None]
    in_dom = np.all((probes >= 0) & (probes < (1 << L_MAX)), axis=2)
    src, direc = np.nonzero(in_dom)
    found = tree.locate(probes[src, direc])
    bad = (tree.levels[found] < tree.levels[ret[src]] - 1) & \
          (tree.flags[found] != ELIMINATED)
    return not np.any(bad)


def _face_edge_geometry(dim, direction):
    """Split a direction id into (axes, signs): faces come first
    (2*dim ids, one axis), then in 3D the 12 edge diagonals (two axes)."""
    offs = _neighbor_offsets(dim)
    if not 0 <= direction < len(offs):
        raise ValueError(f"direction {direction} out of range for dim={dim}")
    o = offs[direction]
    axes = np.flatnonzero(o)
    return o, axes


def find_neighbors(tree, leaf, direction):
    """All retained leaves sharing the given face (or 3D edge) of `leaf`.

    Face ids are 2*axis + (0 for -, 1 for +); in 3D ids 6..17 are the
    edge diagonals.  Returns [] at the domain boundary or when only
    eliminated leaves lie across.
    """
    o, axes = _face_edge_geometry(tree.dim, direction)
    size = np.int64(1) << (L_MAX - leaf.level)
    lo = np.array(leaf.anchor, dtype=np.int64)
    hi = lo + size

    n_size = np.int64(1) << (L_MAX - tree.levels)
    n_lo = tree.anchors
    n_hi = n_lo + n_size[:, None]

    # leaves overlapping the box expanded one lattice unit across the
    # face (or, diagonally, across the edge)
    mask = np.ones(tree.nleaves, dtype=bool)
    for j in range(tree.dim):
        if j in axes:
            slab = hi[j] if o[j] > 0 else lo[j] - 1
            mask &= (n_lo[:, j] <= slab) & (n_hi[:, j] > slab)
        else:
            # positive-measure overlap along non-contact axes
            mask &= (n_lo[:, j] < hi[j]) & (n_hi[:, j] > lo[j])
    mask &= tree.flags != ELIMINATED
    idx = np.flatnonzero(mask)
    return [Octant(tree.anchors[i], tree.levels[i], tree.flags[i]) for i in idx]


class Partition:
    """Contiguous Morton-range partition of a tree's leaves."""

    def __init__(self, assignment, k, weights):
        self.assignment = np.asarray(assignment, dtype=np.int64)
        self.k = int(k)
        self.weights = np.asarray(weights, dtype=np.float64)


def partition_sfc(tree, k, weights=None):
    """Greedy prefix-sum split of the Morton-ordered leaves at targets
    i*(total/k).  Eliminated leaves get weight 0; a leaf straddling a
    target goes to the earlier part.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = tree.nleaves
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64).copy()
    if np.any(w < 0):
        raise ValueError("weights must be >= 0")
    w[tree.flags == ELIMINATED] = 0.0
    npos = int(np.count_nonzero(w > 0))
    if k > npos:
        raise ValueError(f"k={k} exceeds positive-weight leaf count {npos}")
    total = w.sum()
    targets = np.arange(1, k) * (total / k)
    before = np.concatenate([[0.0], np.cumsum(w)[:-1]])
    assignment = np.searchsorted(targets, before, side="right")
    return Partition(assignment, k, w)
