"""Target selection: detections from a sidecar file, an external command or a stub, then NMS."""
from __future__ import annotations

import json
import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

from .imagecore import BoundingBox


class DetectionFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Detection:
    class_name: str
    class_id: int
    confidence: float
    box: BoundingBox

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if self.class_id < 0:
            raise ValueError(f"negative class_id {self.class_id}")

    def to_record(self) -> dict:
        return {"class_name": self.class_name, "class_id": self.class_id,
                "confidence": self.confidence, "box": list(self.box.as_tuple())}


@dataclass
class DetectorSpec:
    kind: str = "stub"  # stub | sidecar | external-command
    class_allowlist: list = field(default_factory=lambda: ["dog"])
    confidence_threshold: float = 0.5
    nms_iou_threshold: float = 0.5
    boxes: list = field(default_factory=list)  # stub only
    sidecar: str | None = None
    command: str | None = None

    def __post_init__(self):
        if self.kind not in ("stub", "sidecar", "external-command"):
            raise ValueError(f"unknown detector kind {self.kind!r}")
        for name in ("confidence_threshold", "nms_iou_threshold"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


def parse_detection(record: dict) -> Detection:
    try:
        box = record["box"]
        if len(box) != 4 or not all(isinstance(v, int) and not isinstance(v, bool) for v in box):
            raise ValueError("box must be four integers")
        class_id = record["class_id"]
        if not isinstance(class_id, int) or isinstance(class_id, bool):
            raise ValueError("class_id must be an integer")
        return Detection(str(record["class_name"]), class_id,
                         float(record["confidence"]), BoundingBox(*box))
    except KeyError as exc:
        raise ValueError(f"missing field {exc.args[0]!r}") from None
    except TypeError as exc:
        raise ValueError(str(exc)) from None


def parse_detections(text: str, source: str = "<input>") -> list[Detection]:
    """Parse one JSON object per line; blank lines are ignored."""
    dets = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            if not isinstance(record, dict):
                raise ValueError("record is not an object")
            dets.append(parse_detection(record))
        except ValueError as exc:
            raise DetectionFormatError(f"{source}:{lineno}: {exc}") from None
    return dets


def format_detections(dets) -> str:
    return "".join(json.dumps(d.to_record()) + "\n" for d in dets)


def load_detections_sidecar(path) -> list[Detection]:
    path = Path(path)
    return parse_detections(path.read_text(), source=str(path))


def run_external_detector(command: str, image_path) -> list[Detection]:
    """Invoke ``<command> <image-path>`` and parse the detections it prints."""
    argv = shlex.split(command) + [str(image_path)]
    proc = subprocess.run(argv, capture_output=True, text=True, check=False)
    if proc.returncode != 0:
        raise RuntimeError(f"detector command exited {proc.returncode}: {proc.stderr.strip()}")
    return parse_detections(proc.stdout, source=command)


def stub_detector(img, fixed_boxes, class_name: str = "dog", class_id: int = 16) -> list[Detection]:
    height, width = img.shape[:2]
    dets = []
    for b in fixed_boxes:
        if not isinstance(b, BoundingBox):
            b = BoundingBox(*b)
        b.check_within(height, width)
        dets.append(Detection(class_name, class_id, 1.0, b))
    return dets


def detect(img, spec: DetectorSpec, image_path=None) -> list[Detection]:
    """Raw detections (before filtering) according to ``spec.kind``."""
    if spec.kind == "stub":
        dets = stub_detector(img, spec.boxes, class_name=(spec.class_allowlist or ["dog"])[0])
    elif spec.kind == "sidecar":
        if spec.sidecar is None:
            raise ValueError("sidecar detector needs a sidecar path")
        dets = load_detections_sidecar(spec.sidecar)
    else:
        if spec.command is None or image_path is None:
            raise ValueError("external-command detector needs a command and an image path")
        dets = run_external_detector(spec.command, image_path)
    height, width = img.shape[:2]
    for d in dets:
        d.box.check_within(height, width)
    return dets


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def _sort_key(d: Detection):
    return (-d.confidence, d.class_id, d.box.as_tuple())


def nms(dets, iou_threshold: float) -> list[Detection]:
    """Greedy per-class suppression; deterministic order (confidence, class_id, box)."""
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in [0, 1]")
    kept: list[Detection] = []
    for d in sorted(dets, key=_sort_key):
        if all(k.class_id != d.class_id or iou(k.box, d.box) < iou_threshold for k in kept):
            kept.append(d)
    return kept


def select_targets(dets, spec: DetectorSpec) -> list[Detection]:
    allowed = set(spec.class_allowlist)
    chosen = [d for d in dets if d.class_name in allowed and d.confidence >= spec.confidence_threshold]
    return nms(chosen, spec.nms_iou_threshold)
