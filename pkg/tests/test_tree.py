import numpy as np
import pytest

from octoflow.tree import (L_MAX, INSIDE, BOUNDARY_INTERSECTING, ELIMINATED,
                           Octant, Tree, morton_encode, morton_decode,
                           corner_offsets, refine_to_geometry, balance_2to1,
                           find_neighbors, partition_sfc, _interleave,
                           _neighbor_offsets)
from oracles import (preorder_key, two_to_one_violations, geometric_neighbors,
                     random_tree, split_leaf as _split_leaf)


def uniform_tree(level, dim, scale=1.0):
    return refine_to_geometry(lambda p: np.ones(len(p)), None,
                              level, level, dim, scale)


# ── morton keys ──

def test_origin_key_is_zero():
    assert morton_encode((0, 0), L_MAX, 2) == 0
    assert morton_encode((0, 0, 0), L_MAX, 3) == 0


def test_children_of_root_increasing():
    half = 1 << (L_MAX - 1)
    keys = [morton_encode((x * half, y * half), 1, 2)
            for y in (0, 1) for x in (0, 1)]
    # generated in child order (x fastest); keys must strictly increase
    assert keys == sorted(keys) and len(set(keys)) == 4


def _random_octants(rng, n, dim, max_level):
    out = []
    for _ in range(n):
        lv = int(rng.integers(0, max_level + 1))
        size = 1 << (L_MAX - lv)
        a = rng.integers(0, 1 << lv, size=dim) * size
        out.append((tuple(int(x) for x in a), lv))
    return out


@pytest.mark.parametrize("dim", [2, 3])
def test_key_sort_matches_preorder_comparator(dim):
    rng = np.random.default_rng(7)
    octs = _random_octants(rng, 64, dim, 3)
    by_key = sorted(octs, key=lambda o: (morton_encode(o[0], o[1], dim), o[1]))
    by_cmp = sorted(octs, key=lambda o: preorder_key(o[0], o[1], dim))
    assert by_key == by_cmp


@pytest.mark.parametrize("dim", [2, 3])
def test_encode_decode_roundtrip(dim):
    rng = np.random.default_rng(11)
    for anchor, lv in _random_octants(rng, 50, dim, 8):
        key = morton_encode(anchor, lv, dim)
        assert morton_decode(key, lv, dim) == anchor


def test_encode_rejects_bad_input():
    with pytest.raises(ValueError):
        morton_encode((3,) * 2, 1, 2)          # misaligned for level 1
    with pytest.raises(ValueError):
        morton_encode((1 << L_MAX, 0), L_MAX, 2)
    with pytest.raises(ValueError):
        morton_encode((0, 0), L_MAX, 4)


@pytest.mark.parametrize("dim", [2, 3])
def test_vectorized_keys_match_scalar_encode(dim):
    rng = np.random.default_rng(3)
    octs = _random_octants(rng, 40, dim, 6)
    anchors = np.array([o[0] for o in octs], dtype=np.int64)
    eff = 6
    keys = _interleave(anchors >> (L_MAX - eff), eff, dim)
    slow = [morton_encode(o[0], o[1], dim) >> (dim * (L_MAX - eff)) for o in octs]
    assert np.array_equal(keys, np.array(slow, dtype=np.uint64))


# ── refine_to_geometry ──

def test_uniform_refine_counts():
    t = uniform_tree(2, 2)
    assert t.nleaves == 16
    assert np.all(t.levels == 2)
    assert np.all(t.flags == INSIDE)


def test_circle_corner_sign_oracle():
    def dist(p):
        return np.linalg.norm(p - 0.5, axis=1) - 0.25

    t = refine_to_geometry(dist, None, 2, 4, 2)
    offs = corner_offsets(2)
    for i in range(t.nleaves):
        size = 1 << (L_MAX - t.levels[i])
        corners = (t.anchors[i] + offs * size) / 2.0 ** L_MAX
        d = dist(corners)
        mixed = not (d.min() > 0 or d.max() < 0)
        if mixed:
            assert t.levels[i] == 4
            assert t.flags[i] == BOUNDARY_INTERSECTING
        else:
            assert t.levels[i] >= 2
    assert t.levels.max() == 4


def test_half_domain_carve():
    t = refine_to_geometry(lambda p: np.ones(len(p)),
                           lambda p: p[:, 0] <= 0.5, 1, 1, 2)
    assert t.nleaves == 4
    assert np.count_nonzero(t.flags == ELIMINATED) == 2
    elim_x = t.anchors[t.flags == ELIMINATED][:, 0]
    assert np.all(elim_x == (1 << (L_MAX - 1)))


def test_carve_coverage_monte_carlo():
    rng = np.random.default_rng(5)

    def member(p):
        return np.linalg.norm(p - 0.5, axis=1) <= 0.35

    t = refine_to_geometry(lambda p: np.linalg.norm(p - 0.5, axis=1) - 0.35,
                           member, 2, 8, 2)
    vol = np.sum((t.cell_sizes() ** 2)[t.flags != ELIMINATED])
    pts = rng.random((200000, 2))
    mc = member(pts).mean()
    assert abs(vol - mc) <= 0.02 * mc


# ── balance ──

def test_balance_uniform_is_identity():
    t = uniform_tree(3, 2)
    assert balance_2to1(t) == t


def test_balance_deep_leaf_splits_coarse_neighbors():
    t = uniform_tree(3, 2)
    mid = t.locate(np.array([[1 << (L_MAX - 1), 1 << (L_MAX - 1)]]))[0]
    t = _split_leaf(t, mid)                               # level 4 leaves
    t = _split_leaf(t, int(np.flatnonzero(t.levels == 4)[0]))  # one level 5
    b = balance_2to1(t)
    assert two_to_one_violations(b) == []
    assert b.levels.max() == 5
    assert np.count_nonzero(b.levels == 4) > 4  # coarse neighbors were split
    # refinement of input: every output leaf sits inside an input leaf
    out_idx = t.locate(b.anchors)
    assert np.all(b.levels >= t.levels[out_idx])


@pytest.mark.parametrize("dim,seeds", [(2, range(14)), (3, range(8))])
def test_balance_random_trees_oracle(dim, seeds):
    for seed in seeds:
        rng = np.random.default_rng(100 + seed)
        t = random_tree(rng, dim, max_level=5 if dim == 3 else 6)
        b = balance_2to1(t)
        assert two_to_one_violations(b) == [], f"seed {seed}"
        bb = balance_2to1(b)
        assert bb == b, f"idempotence, seed {seed}"
        # eliminated leaves pass through untouched
        ein = {(tuple(a), int(l)) for a, l in
               zip(t.anchors[t.flags == ELIMINATED], t.levels[t.flags == ELIMINATED])}
        eout = {(tuple(a), int(l)) for a, l in
                zip(b.anchors[b.flags == ELIMINATED], b.levels[b.flags == ELIMINATED])}
        assert ein == eout, f"seed {seed}"


# ── neighbors ──

def test_uniform_interior_neighbor():
    t = uniform_tree(2, 2)
    center = t.locate(np.array([[1 << (L_MAX - 2), 1 << (L_MAX - 2)]]))[0]
    leaf = Octant(t.anchors[center], t.levels[center], t.flags[center])
    nb = find_neighbors(t, leaf, direction=1)  # +x
    assert len(nb) == 1
    assert nb[0].level == leaf.level
    assert nb[0].anchor[0] == leaf.anchor[0] + (1 << (L_MAX - 2))


def test_boundary_neighbor_empty():
    t = uniform_tree(1, 2)
    leaf = Octant(t.anchors[0], t.levels[0], t.flags[0])
    assert find_neighbors(t, leaf, direction=0) == []  # -x at wall


@pytest.mark.parametrize("dim", [2, 3])
def test_neighbors_match_geometric_oracle(dim):
    rng = np.random.default_rng(42)
    t = balance_2to1(random_tree(rng, dim, max_level=4, p_elim=0.1))
    offs = _neighbor_offsets(dim)
    ret = t.retained()
    for i in ret[:: max(1, len(ret) // 30)]:
        leaf = Octant(t.anchors[i], t.levels[i], t.flags[i])
        for direction in range(len(offs)):
            got = find_neighbors(t, leaf, direction)
            want = geometric_neighbors(t, i, offs[direction])
            got_set = {(o.anchor, o.level) for o in got}
            want_set = {(tuple(t.anchors[j]), int(t.levels[j])) for j in want}
            assert got_set == want_set


# ── partition ──

def test_partition_uniform_16_k4():
    t = uniform_tree(2, 2)
    p = partition_sfc(t, 4)
    counts = np.bincount(p.assignment, minlength=4)
    assert list(counts) == [4, 4, 4, 4]


def test_partition_k1():
    t = uniform_tree(2, 2)
    p = partition_sfc(t, 1)
    assert np.all(p.assignment == 0)


def test_partition_random_weights_balance():
    rng = np.random.default_rng(9)
    t = uniform_tree(5, 2)
    w = rng.random(t.nleaves) * 3
    p = partition_sfc(t, 7, w)
    totals = np.bincount(p.assignment, weights=w, minlength=7)
    assert totals.max() <= w.sum() / 7 + w.max() + 1e-12
    # contiguous morton ranges
    assert np.all(np.diff(p.assignment) >= 0)


def test_partition_eliminated_weightless():
    rng = np.random.default_rng(21)
    t = random_tree(rng, 2, max_level=4, p_elim=0.3)
    p = partition_sfc(t, 2)
    assert np.all(p.weights[t.flags == ELIMINATED] == 0)


def test_partition_too_many_parts_raises():
    t = uniform_tree(1, 2)
    with pytest.raises(ValueError):
        partition_sfc(t, 5)


# ── misc ──

def test_dump_text_golden():
    t = refine_to_geometry(lambda p: np.ones(len(p)),
                           lambda p: p[:, 0] <= 0.5, 1, 1, 2)
    half = 1 << (L_MAX - 1)
    expected = (f"1 0 0 inside\n"
                f"1 {half} 0 eliminated\n"
                f"1 0 {half} inside\n"
                f"1 {half} {half} eliminated\n")
    assert t.dump_text() == expected


def test_locate_points():
    rng = np.random.default_rng(2)
    t = balance_2to1(random_tree(rng, 2, max_level=5, p_elim=0.0))
    pts = rng.integers(0, 1 << L_MAX, size=(200, 2))
    idx = t.locate(pts)
    size = np.int64(1) << (L_MAX - t.levels[idx])
    lo = t.anchors[idx]
    assert np.all(pts >= lo) and np.all(pts < lo + size[:, None])


def test_tree_rejects_overlap():
    half = 1 << (L_MAX - 1)
    anchors = np.array([[0, 0], [0, 0], [half, 0], [0, half], [half, half]])
    levels = np.array([1, 2, 1, 1, 1])
    with pytest.raises(ValueError):
        Tree(anchors, levels, np.zeros(5), 2)
