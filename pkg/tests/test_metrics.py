import csv
import math

import cv2
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from oracles import disk
from skinsynth.metrics import (
    ITA_LABELS, KULPA, MetricsError, MaskStats, center_crop_random, circularity, crop_bounds, dice,
    ingest_folder, ita, ita_category, ita_from_lab, lab_to_rgb, perimeter, relative_area,
    rgb_to_lab, trace_boundary,
)

masks = arrays(np.bool_, st.tuples(st.integers(3, 24), st.integers(3, 24)))


def _cv2_measures(mask):
    """Same perimeter estimator fed by OpenCV's contour tracer."""
    m = np.ascontiguousarray(mask.astype(np.uint8))
    contours, _ = cv2.findContours(m, cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE)
    area = per = 0.0
    for c in contours:
        pts = c[:, 0, ::-1].astype(float)  # (row, col)
        if len(pts) > 1:
            closed = np.vstack([pts, pts[:1]])
            step = np.abs(np.diff(closed, axis=0)).sum(axis=1)
            p_chain = KULPA * ((step == 1).sum() + math.sqrt(2) * (step == 2).sum())
            y, x = closed[:, 0], closed[:, 1]
            poly = 0.5 * abs(np.dot(x[:-1], y[1:]) - np.dot(x[1:], y[:-1]))
        else:
            p_chain = poly = 0.0
        area += poly + 0.5 * p_chain + math.pi / 4
        per += p_chain + math.pi
    return area, per


def test_disk_circularity():
    m = disk(128, 50)
    c = circularity(m)
    assert c == pytest.approx(1.0, abs=0.05)
    a, p = _cv2_measures(m)
    assert c == pytest.approx(4 * math.pi * a / p ** 2, rel=1e-12)


def test_boundary_matches_opencv():
    rng = np.random.default_rng(0)
    from scipy import ndimage
    for _ in range(50):
        m = ndimage.binary_opening(rng.random((30, 30)) < 0.6)
        lbl, n = ndimage.label(m, structure=np.ones((3, 3)))
        for i in range(1, n + 1):
            comp = ndimage.binary_fill_holes(lbl == i)
            ours = set(trace_boundary(comp))
            contours, _ = cv2.findContours(comp.astype(np.uint8), cv2.RETR_EXTERNAL,
                                           cv2.CHAIN_APPROX_NONE)
            theirs = {(int(r), int(c)) for ct in contours for c, r in ct[:, 0]}
            assert ours == theirs


def test_line_closed_form():
    n = 30
    m = np.zeros((5, 40), bool)
    m[2, 5:5 + n] = True
    k = KULPA * 2 * (n - 1)
    expected = 4 * math.pi * (0.5 * k + math.pi / 4) / (k + math.pi) ** 2
    assert circularity(m) == pytest.approx(expected, rel=1e-12)
    assert circularity(m) < 0.3


def test_small_shapes():
    one = np.zeros((5, 5), bool)
    one[2, 2] = True
    assert circularity(one) == pytest.approx(1.0)
    assert perimeter(one) == pytest.approx(math.pi)
    with pytest.raises(MetricsError):
        circularity(np.zeros((4, 4), bool))


@settings(max_examples=150, deadline=None)
@given(m=masks)
def test_circularity_bounded(m):
    if m.any():
        assert 0 < circularity(m) <= 1.05


@settings(max_examples=50, deadline=None)
@given(m=masks, dy=st.integers(0, 6), dx=st.integers(0, 6))
def test_circularity_translation_invariant(m, dy, dx):
    if not m.any():
        return
    big = np.zeros((m.shape[0] + 6, m.shape[1] + 6), bool)
    big[dy:dy + m.shape[0], dx:dx + m.shape[1]] = m
    assert circularity(big) == pytest.approx(circularity(m), rel=1e-12)


def test_relative_area_cases():
    assert relative_area(np.zeros((4, 4))) == 0.0
    assert relative_area(np.ones((4, 4))) == 1.0
    half = np.zeros((6, 6), bool)
    half[:, :3] = True
    assert relative_area(half) == 0.5


def test_dice_identities():
    a = np.zeros((20, 20), bool)
    a[:10, :10] = True
    assert dice(a, a) == 1.0
    b = np.zeros_like(a)
    b[10:, 10:] = True
    assert dice(a, b) == 0.0
    c = np.zeros_like(a)
    c[5:15, :10] = True
    assert a.sum() == c.sum() == 100 and np.logical_and(a, c).sum() == 50
    assert dice(a, c) == 0.5
    assert dice(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0
    with pytest.raises(MetricsError):
        dice(a, a[:5])


@settings(max_examples=100, deadline=None)
@given(a=arrays(np.bool_, (8, 8)), b=arrays(np.bool_, (8, 8)))
def test_dice_properties(a, b):
    d = dice(a, b)
    assert 0.0 <= d <= 1.0
    assert d == dice(b, a)
    if a.any():
        assert dice(a, a) == 1.0


def test_ita_reference_values():
    assert ita_from_lab(71.0, 19.0) == pytest.approx(math.degrees(math.atan(21 / 19)), abs=1e-12)
    assert ita_from_lab(71.0, 19.0) == pytest.approx(47.86, abs=0.01)
    for b in (0.1, 5.0, 40.0):
        assert ita_from_lab(50.0, b) == 0.0


def test_ita_from_image():
    rgb = lab_to_rgb(np.array([71.0, 3.0, 19.0]))
    img = np.broadcast_to(rgb, (8, 8, 3)).copy()
    assert ita(img) == pytest.approx(47.8624, abs=1e-3)
    mask = np.zeros((8, 8), bool)
    assert ita(img, mask) == ita(img)
    mask[:4] = True
    img[:4] = 0.0  # lesion pixels are ignored
    assert ita(img, mask) == pytest.approx(47.8624, abs=1e-3)
    with pytest.raises(MetricsError):
        ita(img, np.ones((8, 8), bool))


def test_lab_references():
    np.testing.assert_allclose(rgb_to_lab(np.array([1.0, 1.0, 1.0])), [100, 0, 0], atol=1e-4)
    np.testing.assert_allclose(rgb_to_lab(np.array([0.0, 0.0, 0.0])), [0, 0, 0], atol=1e-9)
    # sRGB red under D65 (widely tabulated)
    np.testing.assert_allclose(rgb_to_lab(np.array([255, 0, 0], np.uint8)), [53.24, 80.09, 67.20], atol=0.02)
    lab = rgb_to_lab(np.random.default_rng(0).uniform(size=(50, 3)))
    np.testing.assert_allclose(rgb_to_lab(lab_to_rgb(lab)), lab, atol=1e-8)


def test_ita_categories():
    assert ita_category(60.0) == "very_light"
    assert ita_category(19.0) == "dark_tan1"
    assert ita_category(5.0) == "dark_tan1"
    assert ita_category(41.0) == "intermediate"
    with pytest.raises(MetricsError):
        ita_category(float("nan"))


@settings(max_examples=200, deadline=None)
@given(a=st.floats(-90, 90), b=st.floats(-90, 90))
def test_ita_category_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    assert ITA_LABELS.index(ita_category(hi)) <= ITA_LABELS.index(ita_category(lo))


def test_crop():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 255, (64, 64, 3), dtype=np.uint8)
    mask = np.zeros((64, 64), np.uint8)
    mask[30:34, 30:34] = 1
    mask[0:3, 0:3] = 1
    assert crop_bounds(64, 0.0) == (0, 64)
    for _ in range(100):
        ci, cm, f = center_crop_random(img, mask, rng, return_fraction=True)
        off, size = crop_bounds(64, f)
        assert 0 <= f < 0.6 and ci.shape[:2] == cm.shape == (size, size)
        np.testing.assert_array_equal(ci, img[off:off + size, off:off + size])
        np.testing.assert_array_equal(cm, mask[off:off + size, off:off + size])
        assert cm[30 - off:34 - off, 30 - off:34 - off].all()
    ci, cm = center_crop_random(img, mask, np.random.default_rng(1), max_fraction=0.0)
    np.testing.assert_array_equal(ci, img)
    with pytest.raises(MetricsError):
        center_crop_random(img[:, :32], mask[:, :32], rng)


def test_mask_stats():
    s = MaskStats.of(disk(40, 10))
    assert s.area == disk(40, 10).sum() and 0.9 < s.circularity < 1.05
    assert math.isnan(MaskStats.of(np.zeros((4, 4))).circularity)


def test_ingest_folder(tmp_path):
    (tmp_path / "img").mkdir()
    (tmp_path / "msk").mkdir()
    skin = (lab_to_rgb(np.array([60.0, 10.0, 18.0])) * 255).round().astype(np.uint8)
    for i, suffix in enumerate(("", "_mask", "_segmentation")):
        img = np.broadcast_to(skin, (32, 32, 3)).copy()
        m = disk(32, 6 + i).astype(np.uint8) * 255
        Image.fromarray(img).save(tmp_path / "img" / f"a{i}.png")
        Image.fromarray(m).save(tmp_path / "msk" / f"a{i}{suffix}.png")
    Image.fromarray(np.zeros((32, 32, 3), np.uint8)).save(tmp_path / "img" / "orphan.jpg")
    rows = ingest_folder(tmp_path / "img", tmp_path / "msk", tmp_path / "out" / "r.csv")
    assert [r["image"] for r in rows] == ["a0.png", "a1.png", "a2.png"]
    with open(tmp_path / "out" / "r.csv") as f:
        back = list(csv.DictReader(f))
    assert len(back) == 3 and set(back[0]) == {"image", "mask", "ita", "category", "circularity",
                                               "relative_area"}
    L, _, b = rgb_to_lab(skin)  # the stored pixel is quantised
    assert float(back[0]["ita"]) == pytest.approx(math.degrees(math.atan2(L - 50, b)), abs=1e-4)
    assert float(back[0]["relative_area"]) == pytest.approx(disk(32, 6).mean(), abs=1e-6)
