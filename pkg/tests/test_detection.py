import sys
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from objremove.detection import (Detection, DetectionFormatError, DetectorSpec, detect, format_detections,
                                 iou, load_detections_sidecar, nms, parse_detections, select_targets,
                                 stub_detector)
from objremove.imagecore import BoundingBox

IMG = np.zeros((20, 30, 3), dtype=np.uint8)


def det(name="dog", conf=0.9, box=(0, 0, 4, 4), cid=16):
    return Detection(name, cid, conf, BoundingBox(*box))


boxes = st.tuples(st.integers(0, 10), st.integers(0, 10), st.integers(1, 8), st.integers(1, 8)).map(
    lambda t: BoundingBox(t[0], t[1], t[0] + t[2], t[1] + t[3]))


# ---------------------------------------------------------------- sidecar


def test_sidecar_empty_file(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text("")
    assert load_detections_sidecar(p) == []


def test_sidecar_one_line(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text('{"class_name": "dog", "class_id": 16, "confidence": 0.75, "box": [1, 2, 5, 9]}\n')
    assert load_detections_sidecar(p) == [Detection("dog", 16, 0.75, BoundingBox(1, 2, 5, 9))]


def test_sidecar_bad_confidence_names_line(tmp_path):
    p = tmp_path / "d.jsonl"
    good = '{"class_name": "dog", "class_id": 16, "confidence": 0.75, "box": [1, 2, 5, 9]}'
    bad = '{"class_name": "dog", "class_id": 16, "confidence": 1.5, "box": [1, 2, 5, 9]}'
    p.write_text(good + "\n" + bad + "\n")
    with pytest.raises(DetectionFormatError, match=r":2:"):
        load_detections_sidecar(p)


@pytest.mark.parametrize("line", [
    "not json",
    '{"class_name": "dog", "class_id": 16, "confidence": 0.5}',
    '{"class_name": "dog", "class_id": 16, "confidence": 0.5, "box": [1, 2, 5]}',
    '{"class_name": "dog", "class_id": 16, "confidence": 0.5, "box": [1.5, 2, 5, 6]}',
    '{"class_name": "dog", "class_id": -1, "confidence": 0.5, "box": [1, 2, 5, 6]}',
    '[1, 2]',
])
def test_malformed_lines_rejected(line):
    with pytest.raises(DetectionFormatError, match=r"src:1:"):
        parse_detections(line, source="src")


def test_format_parse_round_trip():
    dets = [det(), det("cat", 0.4, (2, 3, 9, 9), 15)]
    assert parse_detections(format_detections(dets)) == dets


# ---------------------------------------------------------------- stub / detect


def test_stub_detector():
    assert stub_detector(IMG, []) == []
    out = stub_detector(IMG, [BoundingBox(5, 5, 9, 9), (0, 0, 2, 2)])
    assert [d.box.as_tuple() for d in out] == [(5, 5, 9, 9), (0, 0, 2, 2)]
    assert all(d.confidence == 1.0 for d in out)
    with pytest.raises(ValueError):
        stub_detector(IMG, [BoundingBox(0, 0, 31, 5)])


def test_detect_sidecar_checks_frame(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text(format_detections([det(box=(0, 0, 40, 5))]))
    with pytest.raises(ValueError):
        detect(IMG, DetectorSpec(kind="sidecar", sidecar=str(p)))


def test_external_command_detector(tmp_path):
    script = tmp_path / "fake_detector.py"
    script.write_text("import json, sys\n"
                      "print(json.dumps({'class_name': 'dog', 'class_id': 16, 'confidence': 0.8,"
                      " 'box': [1, 1, 6, 6], 'path': sys.argv[1]}))\n")
    spec = DetectorSpec(kind="external-command", command=f"{sys.executable} {script}")
    out = detect(IMG, spec, image_path=tmp_path / "img.png")
    assert out == [det(conf=0.8, box=(1, 1, 6, 6))]


def test_external_command_failure(tmp_path):
    spec = DetectorSpec(kind="external-command", command=f"{sys.executable} -c 'import sys; sys.exit(3)'")
    with pytest.raises(RuntimeError, match="exited 3"):
        detect(IMG, spec, image_path="x.png")


def test_detector_spec_validation():
    with pytest.raises(ValueError):
        DetectorSpec(kind="yolo")
    with pytest.raises(ValueError):
        DetectorSpec(confidence_threshold=1.2)


# ---------------------------------------------------------------- iou


def test_iou_examples():
    a = BoundingBox(0, 0, 4, 4)
    assert iou(a, a) == 1.0
    assert iou(a, BoundingBox(4, 0, 8, 4)) == 0.0
    assert iou(a, BoundingBox(2, 0, 6, 4)) == pytest.approx(1 / 3, abs=1e-15)


@given(boxes, boxes)
def test_iou_symmetric_and_bounded(a, b):
    assert iou(a, b) == iou(b, a)
    assert 0.0 <= iou(a, b) <= 1.0
    assert iou(a, a) == 1.0


def test_iou_matches_pixel_count():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, b = (BoundingBox(*(lambda x, y: (x, y, x + int(rng.integers(1, 6)), y + int(rng.integers(1, 6))))(
            int(rng.integers(0, 8)), int(rng.integers(0, 8)))) for _ in range(2))
        ga = np.zeros((16, 16), bool)
        gb = np.zeros((16, 16), bool)
        ga[a.y0:a.y1, a.x0:a.x1] = True
        gb[b.y0:b.y1, b.x0:b.x1] = True
        assert iou(a, b) == pytest.approx((ga & gb).sum() / (ga | gb).sum(), abs=1e-12)


# ---------------------------------------------------------------- nms


def test_nms_examples():
    disjoint = [det(box=(0, 0, 2, 2)), det(box=(5, 5, 7, 7), conf=0.3)]
    assert set(nms(disjoint, 0.5)) == set(disjoint)
    a, b = det(conf=0.9), det(conf=0.8)
    assert nms([b, a], 0.5) == [a]


def test_nms_is_per_class():
    a, b = det(conf=0.9), det("cat", 0.8, cid=15)
    assert nms([a, b], 0.5) == [a, b]


def test_nms_tie_break_is_deterministic():
    a = det(conf=0.7, box=(0, 0, 4, 4))
    b = det(conf=0.7, box=(0, 0, 4, 5))
    assert nms([b, a], 0.5) == nms([a, b], 0.5) == [a]


def _greedy_fixed_point(ranked, subset, t):
    """A kept set is what greedy NMS returns iff every member survives all higher-ranked
    kept members of its class and every non-member is suppressed by one of them."""
    kept = set(subset)
    for i, d in enumerate(ranked):
        blockers = [k for k in ranked[:i] if k in kept and k.class_id == d.class_id and iou(k.box, d.box) >= t]
        if (d in kept) == bool(blockers):
            return False
    return True


def test_nms_matches_subset_oracle():
    rng = np.random.default_rng(42)
    for _ in range(300):
        n = int(rng.integers(0, 7))
        dets = []
        for _ in range(n):
            x, y = rng.integers(0, 6, 2)
            w, h = rng.integers(1, 6, 2)
            dets.append(Detection("dog" if rng.random() < 0.7 else "cat", int(rng.integers(0, 2)),
                                  float(rng.choice([0.3, 0.5, 0.9, rng.random()])),
                                  BoundingBox(int(x), int(y), int(x + w), int(y + h))))
        dets = list(dict.fromkeys(dets))
        t = float(rng.choice([0.0, 0.3, 0.5, 1.0, rng.random()]))
        ranked = sorted(dets, key=lambda d: (-d.confidence, d.class_id, d.box.as_tuple()))
        fixed = [set(s) for k in range(len(ranked) + 1) for s in combinations(ranked, k)
                 if _greedy_fixed_point(ranked, s, t)]
        assert len(fixed) == 1
        out = nms(dets, t)
        assert set(out) == fixed[0]
        assert nms(out, t) == out
        assert all(any(o is d for d in dets) for o in out)


# ---------------------------------------------------------------- select_targets


def test_select_targets_examples():
    spec = DetectorSpec()
    dog, cat = det("dog", 0.9), det("cat", 0.95, (10, 10, 14, 14), 15)
    assert select_targets([dog, cat], spec) == [dog]
    assert select_targets([], spec) == []
    assert select_targets([det("dog", 0.4)], spec) == []


def test_select_targets_threshold_inclusive_and_empty_allowlist():
    assert select_targets([det("dog", 0.5)], DetectorSpec()) == [det("dog", 0.5)]
    assert select_targets([det("dog", 0.9)], DetectorSpec(class_allowlist=[])) == []
