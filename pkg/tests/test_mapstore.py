from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from helpers import box_room, fill_box
from marsupex.mapstore import (EDGE, PLANAR, FeatureParams, MapBlock, MapMismatch, UnifiedMap,
                               block_hash, block_index, classify, decode_blocks, diff_blocks,
                               encode_blocks, extract_features, merge_blocks, scan_curvature, sync,
                               unhash)
from marsupex.worldsim import Pose, ScanPointCloud, SensorSpec, raycast_scan


def test_hash_pair_and_determinism():
    assert block_hash((0, 0, 0)) != block_hash((0, 0, 1))
    assert block_hash((3, -2, 7)) == block_hash((3, -2, 7))


def test_hash_exhaustive_small_cube():
    idx = list(itertools.product(range(-4, 5), repeat=3))
    hashes = {block_hash(i) for i in idx}
    assert len(hashes) == 729
    assert all(unhash(block_hash(i)) == i for i in idx)


def test_hash_rejects_out_of_range():
    with pytest.raises(ValueError):
        block_hash((2 ** 21, 0, 0))


def test_insert_single_point_block():
    m = UnifiedMap(block_edge=10.0)
    m.insert_points([[12.3, 0.1, 0.4]], [PLANAR])
    blk = m.blocks[block_hash((1, 0, 0))]
    assert len(blk.planar) == 1 and not blk.edge


def test_duplicate_insert_is_noop():
    m = UnifiedMap()
    assert m.insert_points([[1.0, 2.0, 3.0]], [EDGE])
    before = {h: (b.version, dict(b.edge)) for h, b in m.blocks.items()}
    assert not m.insert_points([[1.0, 2.0, 3.0]], [EDGE])
    assert before == {h: (b.version, dict(b.edge)) for h, b in m.blocks.items()}


def test_insert_counts_match_bucketing_oracle():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-25, 25, (1000, 3))
    m = UnifiedMap(block_edge=10.0, resolution=0.01)
    m.insert_points(pts, [PLANAR] * len(pts))
    got = {b.index: len(b.planar) for b in m.blocks.values()}
    assert got == oracles.bucket(np.round(pts * 1000) / 1000, 10.0)


def test_every_point_inside_its_block():
    rng = np.random.default_rng(1)
    m = UnifiedMap(block_edge=2.5)
    m.insert_points(rng.uniform(-9, 9, (2000, 3)), [EDGE, PLANAR] * 1000)
    for blk in m.blocks.values():
        for label in (EDGE, PLANAR):
            for p in blk.points(label):
                assert block_index(p, m.block_edge) == blk.index


def test_diff_identical_and_empty_remote():
    rng = np.random.default_rng(2)
    m = UnifiedMap(block_edge=2.0)
    m.insert_points(rng.uniform(0, 2, (40, 3)) + np.repeat(np.arange(5), 8)[:, None] * [2.0, 0, 0],
                    [PLANAR] * 40)
    assert len(m) == 5
    assert diff_blocks(m, m.summary()) == set()
    assert diff_blocks(m, {}) == set(m.blocks)


def test_diff_version_skew_matches_oracle():
    rng = np.random.default_rng(3)
    for _ in range(50):
        m = UnifiedMap(block_edge=1.0)
        m.insert_points(rng.uniform(-3, 3, (60, 3)), [EDGE] * 60)
        local = m.versions()
        remote = {h: v + int(rng.integers(-2, 3)) for h, v in local.items() if rng.random() < 0.8}
        remote[10 ** 9] = 1
        assert diff_blocks(m, remote) == oracles.stale_oracle(local, remote)


def test_diff_flags_equal_version_with_other_content():
    a, b = UnifiedMap(), UnifiedMap()
    a.insert_points([[1.0, 1.0, 1.0]], [EDGE])
    b.insert_points([[2.0, 2.0, 2.0]], [EDGE])
    assert a.versions() == b.versions()
    assert diff_blocks(a, b.summary()) == set(a.blocks)


def test_merge_rejects_mismatched_edge():
    a = UnifiedMap(block_edge=10.0)
    with pytest.raises(MapMismatch):
        a.merge_blocks([], block_edge=5.0)
    with pytest.raises(MapMismatch):
        diff_blocks(a, {}, remote_frame="aerial")


def test_merge_empty_is_identity():
    a = UnifiedMap()
    a.insert_points([[1.0, 2.0, 3.0]], [EDGE])
    before = a.point_set(), a.versions()
    merge_blocks(a, [])
    assert (a.point_set(), a.versions()) == before


def test_block_wire_roundtrip():
    rng = np.random.default_rng(4)
    m = UnifiedMap(block_edge=3.0)
    m.insert_points(rng.uniform(-6, 6, (300, 3)), [EDGE, PLANAR, PLANAR] * 100)
    data = encode_blocks(m.blocks.values())
    back = decode_blocks(data, m.resolution)
    assert encode_blocks(back) == data
    n = UnifiedMap(block_edge=3.0)
    n.merge_blocks(back)
    assert n.point_set() == m.point_set()


# -- merge algebra ---------------------------------------------------------------------

coords = st.floats(-6.0, 6.0, allow_nan=False).map(lambda v: round(v, 3))
labelled = st.lists(st.tuples(coords, coords, coords, st.sampled_from([EDGE, PLANAR])),
                    min_size=0, max_size=25)


def build(items, edge=2.0):
    m = UnifiedMap(block_edge=edge)
    if items:
        m.insert_points([i[:3] for i in items], [i[3] for i in items])
    return m


def blocks_of(items, edge=2.0):
    return list(build(items, edge).blocks.values())


def check_idempotent(base, inc):
    m = build(base)
    merge_blocks(m, blocks_of(inc))
    once = m.point_set(), m.all_points(EDGE), m.all_points(PLANAR)
    merge_blocks(m, blocks_of(inc))
    assert m.point_set() == once[0]
    assert np.array_equal(m.all_points(EDGE), once[1])
    assert np.array_equal(m.all_points(PLANAR), once[2])


def check_order_insensitive(base, a, b):
    m1, m2 = build(base), build(base)
    merge_blocks(merge_blocks(m1, blocks_of(a)), blocks_of(b))
    merge_blocks(merge_blocks(m2, blocks_of(b)), blocks_of(a))
    assert m1.point_set() == m2.point_set()
    assert np.array_equal(m1.all_points(EDGE), m2.all_points(EDGE))
    assert np.array_equal(m1.all_points(PLANAR), m2.all_points(PLANAR))


def check_sync_converges(a_items, b_items, shared, later):
    a, b = build(a_items + shared), build(shared + b_items)
    if later:
        sync(a, b)
        a.insert_points([i[:3] for i in later], [i[3] for i in later])
    sync(a, b)
    assert a.point_set() == b.point_set()
    assert np.array_equal(a.all_points(EDGE), b.all_points(EDGE))
    assert np.array_equal(a.all_points(PLANAR), b.all_points(PLANAR))
    assert diff_blocks(a, b.summary()) == set() == diff_blocks(b, a.summary())


@given(labelled, labelled)
def test_merge_idempotent(base, inc):
    check_idempotent(base, inc)


@given(labelled, labelled, labelled)
def test_merge_order_insensitive(base, a, b):
    check_order_insensitive(base, a, b)


@given(labelled, labelled, labelled, labelled)
@settings(max_examples=60)
def test_sync_converges(a_items, b_items, shared, later):
    check_sync_converges(a_items, b_items, shared, later)


def test_sync_resolves_same_key_conflict():
    a, b = UnifiedMap(), UnifiedMap()
    a.insert_points([[1.001, 1.0, 1.0]], [EDGE])
    b.insert_points([[1.002, 1.0, 1.0]], [EDGE])
    sync(a, b)
    assert np.array_equal(a.all_points(EDGE), b.all_points(EDGE))
    assert a.all_points(EDGE)[0, 0] == pytest.approx(1.001)


def test_negative_zero_is_not_a_distinct_point():
    a, b = build([(0.0, 0.0, 0.0, EDGE), (0.0, 0.0, -0.0, EDGE)]), build([(0.0, 0.0, -0.0, EDGE)])
    sync(a, b)
    assert diff_blocks(a, b.summary()) == set() == diff_blocks(b, a.summary())


# -- features --------------------------------------------------------------------------

def synthetic_scan(points, closed=False):
    pts = np.asarray(points, float)[None]
    hit = np.ones(pts.shape[:2], bool)
    dirs = pts / np.linalg.norm(pts, axis=-1, keepdims=True)
    return ScanPointCloud(dirs, hit, pts, np.linalg.norm(pts, axis=-1), 50.0, closed)


def test_flat_line_is_planar():
    pts = [[5.0, y, 0.0] for y in np.linspace(-3, 3, 25)]
    scan = synthetic_scan(pts)
    _, labels = extract_features(scan, Pose(0, 0, 0))
    assert labels and set(labels) == {PLANAR}
    assert len(labels) == 25 - 4          # the two points at each open end lack neighbours


def test_corner_is_edge():
    # corner 2 m out: curvature there is 1.125 / (16 * 4), well above the edge floor
    wall_a = [[2.0, y, 0.0] for y in np.arange(-3.0, 0.0, 0.25)]
    wall_b = [[2.0 - x, 0.0, 0.0] for x in np.arange(0.0, 1.76, 0.25)]
    pts = wall_a + wall_b
    scan = synthetic_scan(pts)
    curv = scan_curvature(scan)
    corner = len(wall_a)
    edge, planar = classify(curv)
    assert edge[0, corner]
    assert edge.sum() <= 3


def test_curvature_matches_scalar_oracle():
    g = box_room(40, 40, 12)
    fill_box(g, (4.0, 4.0, 0), (5.0, 5.0, 3))
    scan = raycast_scan(g, Pose(2.1, 2.3, 1.0, 0.4), SensorSpec())
    got = scan_curvature(scan, 4)
    want = oracles.curvature(scan.points, scan.hit, 4, closed=True)
    assert np.array_equal(np.isnan(got), np.isnan(want))
    ok = ~np.isnan(got)
    assert np.allclose(got[ok], want[ok], rtol=1e-10, atol=0)
    edge, planar = classify(got)
    edge_o, planar_o = classify(want)
    assert np.array_equal(edge, edge_o) and np.array_equal(planar, planar_o)
    assert not (edge & planar).any()


def test_feature_params_frame_sensor_vs_world():
    g = box_room(40, 40, 12)
    pose = Pose(3.1, 4.2, 1.0, 0.8)
    scan = raycast_scan(g, pose, SensorSpec())
    ps, ls = extract_features(scan, pose, FeatureParams(), frame="sensor")
    pw, lw = extract_features(scan, pose, FeatureParams(), frame="world")
    assert ls == lw
    assert np.allclose(pose.to_world(ps), pw)


def test_mapblock_copy_is_independent():
    b = MapBlock((0, 0, 0))
    b.edge[(1, 1, 1)] = (0.3, 0.3, 0.3)
    c = b.copy()
    c.edge.clear()
    assert b.edge
