import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_local_max, brute_merge, random_segment_list

from maskconver.heads import HeadOutputs
from maskconver.inference import (CenterPoint, Segment, nms_heatmap, panoptic_merge, predict_masks,
                                  select_centers)


def test_nms_single_spike():
    hm = np.zeros((1, 5, 5))
    hm[0, 2, 2] = 5.0
    out = nms_heatmap(hm)
    assert np.count_nonzero(out) == 1 and out[0, 2, 2] == 5.0


def test_nms_ramp_keeps_last():
    out = nms_heatmap(np.array([[[1.0, 2.0, 3.0, 4.0]]]))
    np.testing.assert_array_equal(out, [[[0, 0, 0, 4.0]]])


def test_nms_plateau_survives():
    hm = np.zeros((1, 4, 4))
    hm[0, 1, 1] = hm[0, 1, 2] = 0.7
    out = nms_heatmap(hm)
    assert out[0, 1, 1] == out[0, 1, 2] == 0.7


def test_nms_batched_input():
    rng = np.random.default_rng(0)
    hm = rng.random((2, 3, 6, 6))
    out = nms_heatmap(hm)
    for b in range(2):
        np.testing.assert_array_equal(out[b], brute_local_max(hm[b]))


def test_nms_matches_brute_force_on_random_maps():
    rng = np.random.default_rng(1)
    for i in range(100):
        c, h, w = rng.integers(1, 4), rng.integers(1, 9), rng.integers(1, 9)
        hm = rng.random((c, h, w))
        if i % 3 == 0:  # coarse values make ties and plateaus common
            hm = np.round(hm * 3) / 3
        np.testing.assert_array_equal(nms_heatmap(hm), brute_local_max(hm))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_nms_survivors_invariant_under_monotone_maps(seed):
    rng = np.random.default_rng(seed)
    hm = np.round(rng.random((2, 6, 7)), 2)
    keep = nms_heatmap(hm) > 0
    for f in (lambda v: v ** 3, lambda v: np.exp(4 * v), lambda v: 2 * v + 1):
        np.testing.assert_array_equal(nms_heatmap(f(hm)) > 0, keep)


def test_select_centers_threshold_and_k():
    hm = {3: np.zeros((2, 4, 4))}
    hm[3][0, 0, 0], hm[3][1, 2, 3], hm[3][0, 3, 3] = 0.9, 0.8, 0.7
    top2 = select_centers(hm, k=2)
    assert [(c.score, c.class_id, c.row, c.col) for c in top2] == [(0.9, 0, 0, 0), (0.8, 1, 2, 3)]
    assert select_centers({3: np.full((1, 2, 2), 0.1)}) == []
    assert select_centers(hm, k=0) == []


def test_select_centers_pools_levels():
    hm = {3: np.zeros((1, 4, 4)), 4: np.zeros((1, 2, 2))}
    hm[3][0, 1, 1] = 0.5
    hm[4][0, 0, 1] = 0.6
    got = select_centers(hm, k=10)
    assert [(c.level, c.score) for c in got] == [(4, 0.6), (3, 0.5)]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_select_centers_ranking_invariant(seed):
    rng = np.random.default_rng(seed)
    hm = {3: rng.random((2, 4, 4)), 4: rng.random((2, 2, 2))}
    k = int(rng.integers(1, 10))
    key = lambda cs: [(c.level, c.row, c.col, c.class_id) for c in cs]
    base = key(select_centers(hm, k, 0.0))
    moved = key(select_centers({lv: np.sqrt(v) for lv, v in hm.items()}, k, 0.0))
    assert moved == base


def _identity_outputs():
    # mask features with 2 channels; the generator is replaced below by an identity map
    mf = np.zeros((1, 2, 4, 4))
    mf[0, 0, :2] = 5.0
    mf[0, 1, 2:] = 5.0
    emb = {3: np.zeros((1, 2, 2, 2))}
    emb[3][0, :, 0, 0] = [1.0, 0.0]
    emb[3][0, :, 1, 1] = [0.0, 1.0]
    return HeadOutputs({3: np.zeros((1, 1, 2, 2))}, emb, mf)


def test_predict_masks_identity_generator(monkeypatch):
    from maskconver import inference
    monkeypatch.setattr(inference, "generate_mask_embeddings", lambda c, k, p: c)
    out = _identity_outputs()
    centers = [CenterPoint(3, 0, 0, 0, 0.9), CenterPoint(3, 1, 1, 0, 0.4)]
    stub = type("Stub", (), {"scope": lambda self, name: None})()
    segs = predict_masks(out, centers, generator=stub, use_class_embeddings=False)
    assert len(segs) == 2
    sig = lambda v: 1 / (1 + np.exp(-v))
    np.testing.assert_allclose(segs[0].soft_mask, sig(out.mask_features[0, 0]))
    np.testing.assert_allclose(segs[1].soft_mask, sig(out.mask_features[0, 1]))
    assert [s.score for s in segs] == [0.9, 0.4]
    assert predict_masks(out, [], generator=None) == []


def _merge(masks, scores, classes, isthing, thr=0.75):
    segs = [Segment(c, s, m, t) for m, s, c, t in zip(masks, scores, classes, isthing)]
    h, w = masks[0].shape if masks else (5, 5)
    return panoptic_merge(segs, h, w, thr)


def test_merge_single_disk():
    yy, xx = np.mgrid[0:9, 0:9]
    disk = ((yy - 4) ** 2 + (xx - 4) ** 2 <= 9).astype(float)
    p = _merge([disk], [1.0], [2], [True])
    np.testing.assert_array_equal(p.segment_id_map, disk.astype(np.uint16))
    assert p.segments == [{"id": 1, "class_id": 2, "isthing": True, "score": 1.0}]


def test_merge_duplicate_drops_lower_score():
    m = np.zeros((6, 6))
    m[1:4, 1:4] = 0.9
    p = _merge([m, m.copy()], [0.9, 0.8], [2, 3], [True, True])
    assert len(p.segments) == 1 and p.segments[0]["class_id"] == 2


def test_merge_stuff_union():
    a = np.zeros((4, 6))
    a[:, :2] = 1
    b = np.zeros((4, 6))
    b[:, 4:] = 1
    p = _merge([a, b], [0.6, 0.7], [1, 1], [False, False])
    assert len(p.segments) == 1 and p.segments[0]["score"] == 0.7
    np.testing.assert_array_equal(p.segment_id_map == 1, (a + b) > 0)


def test_merge_empty():
    p = panoptic_merge([], 3, 4)
    assert p.segments == [] and p.segment_id_map.shape == (3, 4) and not p.segment_id_map.any()


def test_merge_upsamples_to_output_size():
    m = np.ones((4, 4))
    p = panoptic_merge([Segment(2, 0.9, m, True)], 16, 16)
    assert p.segment_id_map.shape == (16, 16) and p.segment_id_map.all()


def test_merge_matches_brute_force_and_partitions():
    rng = np.random.default_rng(7)
    for _ in range(50):
        masks, scores, classes, isthing = random_segment_list(rng)
        p = _merge(masks, scores, classes, isthing)
        seg_map, records, survivors = brute_merge(masks, scores, classes, isthing)
        if masks:
            np.testing.assert_array_equal(p.segment_id_map, seg_map)
        assert p.segments == records
        p.validate()
        for _, _, kept, original in survivors:
            assert kept >= 0.75 * original
