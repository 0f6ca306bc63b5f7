import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import bfs_distance
from objremove.imagecore import (NORMALIZED, UINT8, BoundingBox, ImageTensor, apply_hole, composite_back,
                                 denormalize, discount_map, downscale_mask, load_image, load_mask,
                                 mask_from_boxes, normalize, random_rect_hole, resize_bilinear, save_image,
                                 save_mask)


def u8(a):
    return ImageTensor(np.asarray(a, dtype=np.uint8), UINT8)


def nrm(a):
    return ImageTensor(np.asarray(a, dtype=np.float32), NORMALIZED)


# ---------------------------------------------------------------- ImageTensor


def test_image_tensor_rejects_bad_range_and_shape():
    with pytest.raises(ValueError):
        nrm(np.full((2, 2, 3), 1.5))
    with pytest.raises(ValueError):
        ImageTensor(np.zeros((2, 2, 3), dtype=np.float32), UINT8)
    with pytest.raises(ValueError):
        u8(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        ImageTensor(np.zeros((2, 2, 3), dtype=np.float32), "linear")


def test_bounding_box_validation():
    with pytest.raises(ValueError):
        BoundingBox(3, 0, 3, 2)
    with pytest.raises(ValueError):
        BoundingBox(-1, 0, 3, 2)
    with pytest.raises(ValueError):
        BoundingBox(0, 0, 11, 2).check_within(10, 10)
    assert BoundingBox(2, 2, 5, 6).area == 12


# ---------------------------------------------------------------- normalize / denormalize


def test_normalize_endpoints():
    assert np.all(normalize(u8(np.zeros((3, 4, 3)))).data == -1.0)
    assert np.all(normalize(u8(np.full((3, 4, 3), 255))).data == 1.0)


def test_denormalize_endpoints_and_clamp():
    assert np.all(denormalize(nrm(np.full((2, 2, 3), -1.0))).data == 0)
    assert np.all(denormalize(nrm(np.full((2, 2, 3), 1.0))).data == 255)
    # out-of-range values cannot be wrapped in a normalized ImageTensor; to_uint8 is the clamp
    from objremove.imagecore import to_uint8
    assert to_uint8(np.array([1.7])).tolist() == [255]


def test_round_trip_over_every_uint8_value():
    values = np.arange(256, dtype=np.uint8).reshape(16, 16, 1).repeat(3, axis=2)
    back = denormalize(normalize(u8(values))).data
    assert np.array_equal(back, values)


def test_range_tag_guarded():
    with pytest.raises(ValueError):
        normalize(nrm(np.zeros((1, 1, 3))))
    with pytest.raises(ValueError):
        denormalize(u8(np.zeros((1, 1, 3))))


@given(arrays(np.float32, (4, 5, 3), elements=st.floats(-1, 1, width=32)))
def test_normalize_denormalize_within_one_level(x):
    back = normalize(denormalize(nrm(x))).data
    assert np.max(np.abs(back - x)) <= 1 / 127.5 + 1e-6


# ---------------------------------------------------------------- apply_hole


def test_apply_hole_examples():
    rng = np.random.default_rng(0)
    x = nrm(rng.uniform(-1, 1, (6, 7, 3)))
    assert np.array_equal(apply_hole(x, np.ones((6, 7))).data, x.data)
    assert np.all(apply_hole(x, np.zeros((6, 7))).data == 1.0)
    m = np.ones((6, 7))
    m[2, 3] = 0
    out = apply_hole(x, m).data
    changed = np.any(out != x.data, axis=2)
    assert changed.sum() == 1 and changed[2, 3]
    assert np.all(out[2, 3] == 1.0)


def test_apply_hole_dim_mismatch():
    with pytest.raises(ValueError):
        apply_hole(nrm(np.zeros((4, 4, 3))), np.ones((4, 5)))


@given(st.integers(0, 2 ** 32 - 1))
def test_apply_hole_idempotent(seed):
    rng = np.random.default_rng(seed)
    x = nrm(rng.uniform(-1, 1, (5, 5, 3)))
    m = rng.integers(0, 2, (5, 5))
    once = apply_hole(x, m)
    assert np.array_equal(apply_hole(once, m).data, once.data)


# ---------------------------------------------------------------- mask_from_boxes


def test_mask_from_boxes_examples():
    assert np.all(mask_from_boxes([], 5, 6) == 1)
    assert np.all(mask_from_boxes([BoundingBox(0, 0, 6, 5)], 5, 6) == 0)
    assert (mask_from_boxes([BoundingBox(2, 2, 5, 6)], 10, 10, 0) == 0).sum() == 12


def test_mask_from_boxes_dilation_clamps():
    m = mask_from_boxes([BoundingBox(0, 0, 2, 2)], 10, 10, dilate=3)
    assert (m == 0).sum() == 25  # [0, 5) x [0, 5)


def _union_area(rects):
    """Inclusion-exclusion over all subsets of half-open rectangles."""
    from itertools import combinations
    total = 0
    for k in range(1, len(rects) + 1):
        for combo in combinations(rects, k):
            x0 = max(r[0] for r in combo)
            y0 = max(r[1] for r in combo)
            x1 = min(r[2] for r in combo)
            y1 = min(r[3] for r in combo)
            if x0 < x1 and y0 < y1:
                total += (-1) ** (k + 1) * (x1 - x0) * (y1 - y0)
    return total


def test_mask_from_boxes_matches_inclusion_exclusion():
    rng = np.random.default_rng(7)
    for _ in range(200):
        h, w = rng.integers(1, 16, 2)
        dilate = int(rng.integers(0, 3))
        boxes, rects = [], []
        for _ in range(rng.integers(0, 5)):
            x0, x1 = sorted(rng.choice(w + 1, 2, replace=False))
            y0, y1 = sorted(rng.choice(h + 1, 2, replace=False))
            boxes.append(BoundingBox(int(x0), int(y0), int(x1), int(y1)))
            rects.append((max(x0 - dilate, 0), max(y0 - dilate, 0), min(x1 + dilate, w), min(y1 + dilate, h)))
        mask = mask_from_boxes(boxes, int(h), int(w), dilate)
        assert (mask == 0).sum() == _union_area(rects)


# ---------------------------------------------------------------- random_rect_hole


def test_random_rect_hole_determinism_and_degenerate_range():
    a, _ = random_rect_hole(np.random.default_rng(5), 64, 48, 0.2, 0.6)
    b, _ = random_rect_hole(np.random.default_rng(5), 64, 48, 0.2, 0.6)
    assert np.array_equal(a, b)
    m, box = random_rect_hole(np.random.default_rng(0), 256, 256, 0.5, 0.5)
    assert (box.x1 - box.x0, box.y1 - box.y0) == (128, 128)
    assert (m == 0).sum() == 128 * 128


def test_random_rect_hole_bounds_audit():
    rng = np.random.default_rng(11)
    for _ in range(10_000):
        h, w = 37, 53
        _, box = random_rect_hole(rng, h, w, 0.25, 0.5)
        assert 0.25 * h <= box.y1 - box.y0 <= 0.5 * h
        assert 0.25 * w <= box.x1 - box.x0 <= 0.5 * w
        assert 0 <= box.x0 and box.x1 <= w and 0 <= box.y0 and box.y1 <= h


@pytest.mark.parametrize("lo,hi", [(0.0, 0.5), (0.6, 0.5), (0.5, 1.2), (0.41, 0.45)])
def test_random_rect_hole_infeasible(lo, hi):
    # 0.41..0.45 of 10 pixels admits no integer size
    with pytest.raises(ValueError):
        random_rect_hole(np.random.default_rng(0), 10, 10, lo, hi)


# ---------------------------------------------------------------- discount_map


def test_discount_map_examples():
    assert np.all(discount_map(np.ones((4, 4)), 0.9) == 1)
    m = np.zeros((6, 6))
    m[0, 0] = 1
    assert np.all(discount_map(m, 1.0) == 1)
    w = discount_map(np.array([[1, 0, 0, 0, 1]]), 0.9)
    np.testing.assert_allclose(w[0], [1, 0.9, 0.81, 0.9, 1], rtol=0, atol=1e-15)


def test_discount_map_matches_bfs_on_200_masks():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        h, w = rng.integers(1, 33, 2)
        mask = (rng.random((h, w)) < rng.uniform(0.02, 0.9)).astype(np.uint8)
        if not mask.any():
            mask[rng.integers(h), rng.integers(w)] = 1
        gamma = rng.uniform(0.5, 1.0)
        assert np.array_equal(discount_map(mask, gamma), gamma ** bfs_distance(mask).astype(np.float64))


def test_discount_map_rejects_all_missing():
    with pytest.raises(ValueError):
        discount_map(np.zeros((3, 3)))


@settings(max_examples=50)
@given(st.integers(0, 2 ** 32 - 1))
def test_discount_map_weights_in_unit_interval_and_one_on_known(seed):
    rng = np.random.default_rng(seed)
    mask = (rng.random((12, 9)) < 0.3).astype(np.uint8)
    mask[0, 0] = 1
    w = discount_map(mask, 0.95)
    assert np.all(w[mask == 1] == 1)
    assert np.all((w > 0) & (w <= 1))
    assert np.all(w[mask == 0] < 1)


# ---------------------------------------------------------------- resize_bilinear


def test_resize_bilinear_examples():
    x = nrm(np.random.default_rng(0).uniform(-1, 1, (5, 7, 3)))
    assert np.array_equal(resize_bilinear(x, 5, 7).data, x.data)
    c = u8(np.full((9, 4, 3), 77))
    for h, w in [(1, 1), (20, 3), (4, 9)]:
        assert np.all(resize_bilinear(c, h, w).data == 77)
    two = np.array([[0, 2], [4, 6]], dtype=np.float64)[..., None]
    from objremove.imagecore import resize_array
    assert resize_array(two, 1, 1)[0, 0, 0] == 3.0


def test_resize_matches_torch_half_pixel_bilinear():
    import torch
    import torch.nn.functional as F
    from objremove.imagecore import resize_array
    rng = np.random.default_rng(1)
    for h, w, oh, ow in [(8, 8, 3, 5), (5, 7, 12, 9), (16, 12, 4, 4)]:
        a = rng.normal(size=(h, w, 2))
        ref = F.interpolate(torch.as_tensor(a.transpose(2, 0, 1)[None]), size=(oh, ow), mode="bilinear",
                            align_corners=False)[0].numpy().transpose(1, 2, 0)
        np.testing.assert_allclose(resize_array(a, oh, ow), ref, atol=1e-12)


def test_downscale_mask_threshold():
    m = np.ones((4, 4), dtype=np.uint8)
    m[:, :2] = 0
    small = downscale_mask(m, 2, 2)
    assert small.tolist() == [[0, 1], [0, 1]]
    # exactly half known in each 2x2 cell -> stays known
    m = np.tile(np.array([[1, 0], [0, 1]], dtype=np.uint8), (2, 2))
    assert np.all(downscale_mask(m, 2, 2) == 1)


# ---------------------------------------------------------------- composite_back


def test_composite_back_examples_and_loop_oracle():
    rng = np.random.default_rng(3)
    a = u8(rng.integers(0, 256, (7, 6, 3)))
    b = u8(rng.integers(0, 256, (7, 6, 3)))
    assert np.array_equal(composite_back(a, b, np.ones((7, 6))).data, a.data)
    assert np.array_equal(composite_back(a, b, np.zeros((7, 6))).data, b.data)
    m = rng.integers(0, 2, (7, 6))
    out = composite_back(a, b, m).data
    for y in range(7):
        for x in range(6):
            expected = a.data[y, x] if m[y, x] == 1 else b.data[y, x]
            assert np.array_equal(out[y, x], expected)


def test_composite_back_dim_mismatch():
    with pytest.raises(ValueError):
        composite_back(u8(np.zeros((3, 3, 3))), u8(np.zeros((3, 4, 3))), np.ones((3, 3)))


# ---------------------------------------------------------------- I/O


def test_image_and_mask_files_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    img = u8(rng.integers(0, 256, (9, 11, 3)))
    assert np.array_equal(load_image(save_image(img, tmp_path / "a.png")).data, img.data)
    m = rng.integers(0, 2, (9, 11)).astype(np.uint8)
    assert np.array_equal(load_mask(save_mask(m, tmp_path / "m.png")), m)
