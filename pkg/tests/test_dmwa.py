import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from driftwind.dmwa import (DmwaConfig, combine_vectors, dbscan, dmwa_scan,
                            mean_displacement, nested_track, ssd_match,
                            ssd_table)
from driftwind.gridstore import GridStack, OutOfDomainError

from oracles import brute_ssd, core_partition


def _translated_pair(shift, size=21, seed=0):
    """Frames where the second is the first moved by ``shift = (du, dv)``."""
    big = np.random.default_rng(seed).normal(size=(size + 20, size + 20))
    du, dv = shift
    a = big[10:10 + size, 10:10 + size]
    b = big[10 - dv:10 - dv + size, 10 - du:10 - du + size]
    return a, b


def test_exact_translation():
    a, b = _translated_pair((2, 1))
    stack = GridStack.from_array(np.stack([a, b]))
    assert tuple(ssd_match(stack, (10, 10), 0, 1, 5, 4)) == (2.0, 1.0)


def test_identical_frames_give_zero():
    a = np.random.default_rng(1).normal(size=(15, 15))
    stack = GridStack.from_array(np.stack([a, a]))
    assert tuple(ssd_match(stack, (7, 7), 0, 1, 3, 4)) == (0.0, 0.0)


def test_constant_frames_tie_break():
    stack = GridStack.from_array(np.ones((2, 15, 15)))
    assert tuple(ssd_match(stack, (7, 7), 0, 1, 3, 4)) == (0.0, 0.0)


def test_handcrafted_ssd_table():
    # template of ones; the to-frame holds a shifted copy (SSD 2.0) and a
    # worse candidate (SSD 5.0) elsewhere, with large values everywhere else
    frm = np.zeros((9, 9))
    frm[3:6, 3:6] = 1.0
    to = np.full((9, 9), 10.0)
    to[3:6, 4:7] = 1.0
    to[3, 4] = 1.0 + np.sqrt(2.0)       # SSD 2.0 at du=+1, dv=0
    table = ssd_table(frm, to, (4, 4), 3, 1)
    assert table[1, 2] == pytest.approx(2.0)
    # brute-force oracle agrees with the vectorized table minimizer
    assert brute_ssd(frm, to, (4, 4), 3, 1) == (1, 0)
    stack = GridStack.from_array(np.stack([frm, to]))
    assert tuple(ssd_match(stack, (4, 4), 0, 1, 3, 1)) == (1.0, 0.0)


def test_two_candidate_ssd():
    frm = np.zeros((11, 11))
    frm[4:7, 4:7] = np.arange(9.0).reshape(3, 3)
    to = np.full((11, 11), 50.0)
    patch = frm[4:7, 4:7]
    # candidate A at (du, dv) = (2, -1) with SSD 2.0
    to[3:6, 6:9] = patch
    to[3, 6] += 1.0
    to[3, 7] += 1.0
    # candidate B at (du, dv) = (-2, 2) with SSD 5.0
    to[6:9, 2:5] = patch
    to[6, 2] += 2.0
    to[6, 3] += 1.0
    table = ssd_table(frm, to, (5, 5), 3, 2)
    assert table[-1 + 2, 2 + 2] == pytest.approx(2.0)
    assert table[2 + 2, -2 + 2] == pytest.approx(5.0)
    stack = GridStack.from_array(np.stack([frm, to]))
    assert tuple(ssd_match(stack, (5, 5), 0, 1, 3, 2)) == (2.0, -1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 3), st.integers(0, 3))
def test_matches_brute_force(seed, inner_half, radius):
    rng = np.random.default_rng(seed)
    frames = rng.integers(0, 3, size=(2, 13, 13)).astype(float)
    inner = 2 * inner_half + 1
    stack = GridStack.from_array(frames)
    got = ssd_match(stack, (6, 6), 0, 1, inner, radius)
    assert tuple(got) == brute_ssd(frames[0], frames[1], (6, 6), inner, radius)


def test_out_of_bounds():
    stack = GridStack.from_array(np.zeros((2, 9, 9)))
    with pytest.raises(OutOfDomainError):
        ssd_match(stack, (2, 2), 0, 1, 3, 4)


def test_translation_equivariance():
    rng = np.random.default_rng(7)
    big = rng.normal(size=(40, 40))
    base_a, base_b = big[10:30, 10:30], big[9:29, 11:31]
    stack = GridStack.from_array(np.stack([base_a, base_b]))
    d0 = ssd_match(stack, (10, 10), 0, 1, 5, 4)
    shifted_b = big[9 - 2:29 - 2, 11 - 1:31 - 1]  # content moved by (1, 2) more
    d1 = ssd_match(GridStack.from_array(np.stack([base_a, shifted_b])), (10, 10),
                   0, 1, 5, 4)
    assert tuple(d1 - d0) == (1.0, 2.0)


def _three_frames(leg1, leg2, size=25, seed=3):
    big = np.random.default_rng(seed).normal(size=(size + 30, size + 30))
    o = 15
    f1 = big[o:o + size, o:o + size]
    du, dv = leg1
    f2 = big[o - dv:o - dv + size, o - du:o - du + size]
    du2, dv2 = leg1[0] + leg2[0], leg1[1] + leg2[1]
    f3 = big[o - dv2:o - dv2 + size, o - du2:o - du2 + size]
    return GridStack.from_array(np.stack([f1, f2, f3]))


@pytest.mark.parametrize("legs,expected", [
    (((1, 2), (2, 2)), (1.5, 2.0)),
    (((0, 0), (0, 0)), (0.0, 0.0)),
    (((-1, 0), (1, 0)), (0.0, 0.0)),
])
def test_mean_displacement(legs, expected):
    stack = _three_frames(*legs)
    got = mean_displacement(stack, (12, 12), 1, DmwaConfig(inner_size=5))
    assert tuple(got) == expected


def test_nested_identical_vectors():
    stack = _three_frames((1, 2), (2, 2))
    res = nested_track(stack, (12, 12), 1, DmwaConfig(outer_size=9, inner_size=5))
    assert tuple(res.displacement) == (1.5, 2.0)
    assert res.n_clusters == 1 and res.cluster_size == 25 and not res.fallback


def test_largest_cluster_rule():
    vecs = np.array([[1.0, 2.0]] * 100 + [[4.0, 4.0]] * 20)
    res = combine_vectors(vecs, 0.5, 4)
    assert tuple(res.displacement) == (1.0, 2.0)
    assert res.n_clusters == 2


def test_no_cluster_fallback():
    vecs = np.array([[0, 0], [3, 3], [6, 6]], dtype=float)
    res = combine_vectors(vecs, 0.5, 2)
    assert res.fallback and tuple(res.displacement) == (3.0, 3.0)


def _mixed_points():
    rng = np.random.default_rng(4)
    a = rng.normal((0, 0), 0.3, size=(30, 2))
    b = rng.normal((4, 4), 0.3, size=(15, 2))
    noise = rng.uniform(-6, 10, size=(10, 2))
    return np.round(np.vstack([a, b, noise]) * 2) / 2


def _partition(labels, core):
    groups = {}
    for p, lab in enumerate(labels):
        if core[p]:
            groups.setdefault(lab, set()).add(p)
    return {frozenset(g) for g in groups.values()}


def test_dbscan_matches_textbook_oracle():
    pts = _mixed_points()
    labels = dbscan(pts, 1.0, 4)
    ref_parts, core = core_partition(pts, 1.0, 4)
    assert _partition(labels, core) == ref_parts
    # noise: non-core points with no core neighbour
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    core = np.array(core)
    lonely = ~core & ~(d[:, core] <= 1.0).any(axis=1)
    assert np.array_equal(labels == -1, lonely)


@settings(max_examples=20, deadline=None)
@given(st.permutations(list(range(55))))
def test_dbscan_order_independent(perm):
    pts = _mixed_points()
    base = dbscan(pts, 1.0, 4)
    perm = np.array(perm)
    shuffled = dbscan(pts[perm], 1.0, 4)
    assert np.array_equal(shuffled, base[perm])


def test_dmwa_scan_half_integers():
    rng = np.random.default_rng(0)
    stack = GridStack.from_array(rng.normal(size=(3, 20, 20)))
    cfg = DmwaConfig(outer_size=7, inner_size=3, search_radius=4)
    wf = dmwa_scan(stack, config=cfg)
    vals = np.concatenate([wf.u_map[wf.valid_mask], wf.v_map[wf.valid_mask]])
    assert np.array_equal(vals * 2, np.round(vals * 2))
    assert np.all(np.abs(vals) <= 4)
    assert np.all(wf.var_u_map[wf.valid_mask] == 1.0)
    assert wf.method == "dmwa"
    # margin = inner half + radius
    assert wf.valid_mask[1, 5, 5] and not wf.valid_mask[1, 4, 5]


def test_dmwa_scan_nested_mode():
    stack = _three_frames((1, 1), (1, 1), size=24)
    cfg = DmwaConfig(outer_size=7, inner_size=3, search_radius=2, mode="nested")
    wf = dmwa_scan(stack, config=cfg, centers=[(12, 12)])
    assert (wf.u_map[1, 12, 12], wf.v_map[1, 12, 12]) == (1.0, 1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        DmwaConfig(outer_size=4)
    with pytest.raises(ValueError):
        DmwaConfig(outer_size=5, inner_size=7)
    with pytest.raises(ValueError):
        DmwaConfig(mode="other")
