import math

import numpy as np
import pytest
from conftest import l_shape_mask, make_label

from maskconver.training.targets import (assign_level, box_center, downsample_nearest, gaussian_radius,
                                         gaussian_sigma, mask_center, render_center_targets, snap)


def test_mask_center_examples():
    m = np.zeros((4, 4), bool)
    m[0:2, 0:2] = True
    assert mask_center(m) == (0.5, 0.5)
    l = np.zeros((2, 2), bool)
    l[0, 0] = l[1, 0] = l[1, 1] = True
    assert mask_center(l) == pytest.approx((2 / 3, 1 / 3))
    assert box_center(l) == (0.5, 0.5)


def test_ring_center_is_geometric_center():
    yy, xx = np.mgrid[0:41, 0:41]
    r2 = (yy - 20) ** 2 + (xx - 20) ** 2
    ring = (r2 <= 18 ** 2) & (r2 >= 12 ** 2)
    assert mask_center(ring) == pytest.approx((20.0, 20.0))
    assert not ring[20, 20]


def test_box_center_examples():
    assert box_center(np.ones((5, 5), bool)) == (2.0, 2.0)
    m = np.zeros((6, 6), bool)
    m[3, 4] = True
    assert box_center(m) == (3.0, 4.0)
    with pytest.raises(ValueError):
        box_center(np.zeros((2, 2), bool))


@pytest.mark.parametrize("area,level", [(1024, 3), (10000, 4), (63 ** 2, 3), (64 ** 2, 4), (128 ** 2, 5),
                                        (256 ** 2, 6), (512 ** 2, 7), (2000 ** 2, 7)])
def test_assign_level(area, level):
    assert assign_level(area) == level


def test_assign_level_single_scale():
    for area in (1, 5000, 10 ** 6):
        assert assign_level(area, (3,)) == 3


def test_gaussian_radius_reference():
    # CenterNet reference value for a 10 x 20 box
    h, w, o = 10.0, 20.0, 0.7
    r3 = (-2 * o * (h + w) + math.sqrt((2 * o * (h + w)) ** 2 - 4 * 4 * o * (o - 1) * w * h)) / 2
    assert gaussian_radius(h, w) <= r3 + 1e-12
    assert gaussian_sigma(11, 11) == 1.0
    assert gaussian_sigma(1, 1) == pytest.approx(1 / 3)


def test_snap_clamps():
    assert snap(0.0, 8, 16) == 0
    assert snap(7.4, 8, 16) == 0
    assert snap(7.6, 8, 16) == 1
    assert snap(500.0, 8, 16) == 15


def ring_label():
    yy, xx = np.mgrid[0:128, 0:128]
    r2 = (yy - 64) ** 2 + (xx - 64) ** 2
    ring = (r2 <= 44 ** 2) & (r2 >= 41 ** 2)
    return make_label([(1, ring)])


def test_single_instance_peak_and_sigma_one_falloff():
    t = render_center_targets(ring_label())
    c = next(c for c in t.centers if c.class_id == 1)
    assert c.level == 3
    hm = t.heatmaps[3][1]
    assert hm.max() == 1.0 and hm[c.row, c.col] == 1.0
    assert hm[c.row, c.col + 1] == pytest.approx(math.exp(-0.5), abs=1e-6)


def test_two_instances_combine_by_max():
    a = np.zeros((128, 128), bool)
    a[8:24, 8:24] = True
    b = np.zeros((128, 128), bool)
    b[90:110, 90:110] = True
    both = render_center_targets(make_label([(1, a), (1, b)])).heatmaps
    ha = render_center_targets(make_label([(1, a)])).heatmaps
    hb = render_center_targets(make_label([(1, b)])).heatmaps
    for lv in both:
        np.testing.assert_array_equal(both[lv][1], np.maximum(ha[lv][1], hb[lv][1]))


def test_stuff_gets_one_center_per_class():
    m = np.zeros((64, 64), bool)
    m[10:20, 10:20] = True
    label = make_label([(2, m)], shape=(64, 64), n_stuff=2, stuff_rows={1: (40, 64)})
    t = render_center_targets(label)
    assert sorted(c.class_id for c in t.centers) == [0, 1, 2]


def test_heatmap_values_in_unit_interval_with_exact_ones():
    t = render_center_targets(ring_label())
    for c in t.centers:
        assert t.heatmaps[c.level][c.class_id, c.row, c.col] == 1.0
    for hm in t.heatmaps.values():
        assert hm.min() >= 0 and hm.max() <= 1


def test_l_shape_mode_changes_cell(l_shape_label):
    m = l_shape_mask()
    assert mask_center(m) != box_center(m)
    cm = next(c for c in render_center_targets(l_shape_label, "mask").centers if c.class_id == 1)
    cb = next(c for c in render_center_targets(l_shape_label, "box").centers if c.class_id == 1)
    assert (cm.row, cm.col) != (cb.row, cb.col)


def test_symmetric_shape_mode_invariant():
    m = np.zeros((128, 128), bool)
    m[30:70, 50:90] = True
    label = make_label([(1, m)])
    a = render_center_targets(label, "mask")
    b = render_center_targets(label, "box")
    # the background stuff region is not symmetric, so compare the thing channel only
    for lv in a.heatmaps:
        np.testing.assert_array_equal(a.heatmaps[lv][1], b.heatmaps[lv][1])


def test_same_cell_same_class_keeps_larger_mask():
    big = np.zeros((64, 64), bool)
    big[20:44, 20:44] = True
    small = np.zeros((64, 64), bool)
    small[30:34, 30:34] = True
    label = make_label([(1, big), (1, small)], shape=(64, 64))
    things = [c for c in render_center_targets(label).centers if c.class_id == 1]
    assert len(things) == 2
    assert (things[0].row, things[0].col) == (things[1].row, things[1].col)
    keep = [c for c in things if c.supervise_mask]
    assert len(keep) == 1 and keep[0].area == int((big & ~small).sum())


def test_bad_center_mode():
    with pytest.raises(ValueError):
        render_center_targets(ring_label(), "corner")


def test_downsample_nearest_index_rule():
    m = np.arange(64).reshape(8, 8)
    out = downsample_nearest(m, 2, 2)
    np.testing.assert_array_equal(out, m[np.ix_([2, 6], [2, 6])])
    assert downsample_nearest(np.ones((128, 128)), 32, 32).shape == (32, 32)
