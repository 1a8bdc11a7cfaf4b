"""Attack protocol runners: end-to-end detection, two-step
segmentation+recognition, and the pretrain/fine-tune transfer sequence.

MAS (mean attack seconds) times only the solver calls, never image I/O.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from PIL import Image

from .attackers import Classifier, DetectionBox, Detector, SegmenterAdapter
from .errors import ProtocolError
from .metrics import (
    attack_success,
    format_percent,
    iou,
    match_detections,
    mean_average_precision,
)


@dataclass
class EvalSample:
    """What a protocol runner needs from one CAPTCHA: pixels plus ground
    truth. Keep images pre-loaded; MAS timing must exclude I/O."""

    id: str
    image: np.ndarray
    placements: list
    prompt_order: list


@dataclass
class SampleOutcome:
    id: str
    success: bool
    n_chars: int
    n_correct_chars: int
    elapsed_seconds: float
    error: str | None = None


@dataclass
class AttackReport:
    kind: str
    dataset: str
    map_score: float | None
    asr: float
    scasr: float | None
    mas_seconds: float
    n_samples: int
    outcomes: list = field(default_factory=list)
    n_errors: int = 0
    finetune_size: int | None = None

    def summary_row(self):
        row = {"Datasets": self.dataset}
        if self.map_score is not None:
            row["mAP"] = f"{self.map_score:.3f}"
        if self.scasr is not None:
            row["SCASR/%"] = format_percent(self.scasr)
        row["ASR/%"] = format_percent(self.asr)
        row["MAS/s"] = f"{self.mas_seconds:.4f}"
        return row

    def to_json(self):
        blob = asdict(self)
        blob["outcomes"] = [asdict(o) for o in self.outcomes]
        return json.dumps(blob, sort_keys=True, ensure_ascii=False)


def render_table(rows: list[dict]) -> str:
    """Plain-text table in the attack-results layout."""
    if not rows:
        return "(no results)"
    cols = list(rows[0])
    widths = {c: max(len(c), *(len(str(r.get(c, ""))) for r in rows)) for c in cols}
    line = "  ".join(c.ljust(widths[c]) for c in cols)
    sep = "-" * len(line)
    body = ["  ".join(str(r.get(c, "")).ljust(widths[c]) for c in cols) for r in rows]
    return "\n".join([line, sep, *body])


def _iter_results(fn, samples, concurrency_safe, jobs):
    if jobs > 1 and concurrency_safe:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            yield from pool.map(fn, samples)
    else:
        yield from map(fn, samples)


def run_end_to_end(
    detector: Detector,
    samples,
    dataset_name: str = "dataset",
    conf_min: float = 0.40,
    iou_thresh: float = 0.5,
    jobs: int = 1,
) -> AttackReport:
    """Detect every test image, score per-sample attack success, aggregate
    mAP / ASR / MAS. A detector exception counts as a failed attack and is
    flagged on the outcome."""
    samples = list(samples)
    per_image = []
    outcomes = []

    def attack_one(sample):
        detector.bind_truth(sample)
        image = sample.image
        t0 = time.perf_counter()
        try:
            dets = detector.detect(image)
            elapsed = time.perf_counter() - t0
            error = None
        except Exception as exc:  # noqa: BLE001 - plugin code
            dets, elapsed, error = [], time.perf_counter() - t0, repr(exc)
        return sample, dets, elapsed, error

    for sample, dets, elapsed, error in _iter_results(
        attack_one, samples, detector.concurrency_safe, jobs
    ):
        per_image.append((dets, sample.placements))
        ok = error is None and attack_success(dets, sample.placements, conf_min, iou_thresh)
        confident = [d for d in dets if d.confidence > conf_min]
        tp = match_detections(confident, sample.placements, iou_thresh)[0]
        outcomes.append(
            SampleOutcome(
                id=sample.id, success=ok, n_chars=len(sample.placements),
                n_correct_chars=tp, elapsed_seconds=elapsed, error=error,
            )
        )

    return AttackReport(
        kind="e2e",
        dataset=dataset_name,
        map_score=mean_average_precision(per_image, iou_thresh=iou_thresh),
        asr=sum(o.success for o in outcomes) / len(outcomes),
        scasr=None,
        mas_seconds=float(np.mean([o.elapsed_seconds for o in outcomes])),
        n_samples=len(outcomes),
        outcomes=outcomes,
        n_errors=sum(o.error is not None for o in outcomes),
    )


def _crop_resized(image: np.ndarray, bbox, crop_size: int) -> np.ndarray:
    x, y, w, h = bbox
    side = image.shape[0]
    x0, y0 = int(max(0, np.floor(x))), int(max(0, np.floor(y)))
    x1, y1 = int(min(side, np.ceil(x + w))), int(min(side, np.ceil(y + h)))
    crop = image[y0:y1, x0:x1]
    if crop.size == 0:
        crop = np.zeros((1, 1, 3), dtype=image.dtype)
    return np.asarray(Image.fromarray(crop).resize((crop_size, crop_size), Image.BILINEAR))


def run_two_step(
    segmenter: Detector,
    classifier: Classifier,
    samples,
    dataset_name: str = "dataset",
    conf_min: float = 0.40,
    iou_thresh: float = 0.5,
    crop_size: int = 96,
    jobs: int = 1,
) -> AttackReport:
    """Segment class-agnostic character boxes, classify each crop (after
    normalising it to crop_size x crop_size), then score the labeled boxes
    like an end-to-end attack plus per-character SCASR."""
    samples = list(samples)
    outcomes = []
    char_outcomes = []
    per_image = []
    safe = segmenter.concurrency_safe and classifier.concurrency_safe

    def attack_one(sample):
        segmenter.bind_truth(sample)
        classifier.bind_truth(sample)
        image = sample.image
        t0 = time.perf_counter()
        try:
            seg_boxes = segmenter.detect(image)
            labeled = []
            for box in seg_boxes:
                crop = _crop_resized(image, box.bbox, crop_size)
                if hasattr(classifier, "classify_box"):
                    label, conf = classifier.classify_box(crop, box.bbox)
                else:
                    label, conf = classifier.classify(crop)
                if label:
                    labeled.append(
                        DetectionBox(bbox=box.bbox, label=label,
                                     confidence=min(box.confidence, conf))
                    )
            elapsed = time.perf_counter() - t0
            error = None
        except Exception as exc:  # noqa: BLE001 - plugin code
            labeled, elapsed, error = [], time.perf_counter() - t0, repr(exc)
        return sample, labeled, elapsed, error

    for sample, labeled, elapsed, error in _iter_results(attack_one, samples, safe, jobs):
        per_image.append((labeled, sample.placements))
        ok = error is None and attack_success(labeled, sample.placements, conf_min, iou_thresh)
        _, _, _, matches = match_detections(labeled, sample.placements, iou_thresh)
        matched_gt = {gi for _, gi in matches}
        correct = len(matched_gt)
        char_outcomes.extend(
            gi in matched_gt for gi in range(len(sample.placements))
        )
        outcomes.append(
            SampleOutcome(
                id=sample.id, success=ok, n_chars=len(sample.placements),
                n_correct_chars=correct, elapsed_seconds=elapsed, error=error,
            )
        )

    return AttackReport(
        kind="two-step",
        dataset=dataset_name,
        map_score=None,
        asr=sum(o.success for o in outcomes) / len(outcomes),
        scasr=sum(char_outcomes) / len(char_outcomes) if char_outcomes else 0.0,
        mas_seconds=float(np.mean([o.elapsed_seconds for o in outcomes])),
        n_samples=len(outcomes),
        outcomes=outcomes,
        n_errors=sum(o.error is not None for o in outcomes),
    )


class TrainableAttacker(Detector):
    """Transfer-protocol plugin contract."""

    def pretrain(self, samples) -> None:
        raise NotImplementedError

    def finetune(self, samples) -> None:
        raise NotImplementedError


def run_transfer_protocol(
    pretrain_set,
    finetune_pool,
    finetune_sizes,
    attack_samples,
    attacker_factory,
    dataset_name: str = "dataset",
    **run_kwargs,
) -> list[AttackReport]:
    """pretrain -> finetune(k) -> attack, once per requested fine-tune
    size. An empty size list runs the pretrain-only attack."""
    finetune_pool = list(finetune_pool)
    sizes = list(finetune_sizes)
    if any(k > len(finetune_pool) for k in sizes):
        raise ProtocolError("setup", f"finetune pool of {len(finetune_pool)} smaller than {max(sizes)}")

    reports = []
    for size in sizes or [None]:
        attacker = attacker_factory()
        try:
            attacker.pretrain(pretrain_set)
        except Exception as exc:  # noqa: BLE001
            raise ProtocolError("pretrain", repr(exc)) from exc
        if size is not None:
            try:
                attacker.finetune(finetune_pool[:size])
            except Exception as exc:  # noqa: BLE001
                raise ProtocolError(f"finetune[{size}]", repr(exc)) from exc
        report = run_end_to_end(attacker, attack_samples, dataset_name=dataset_name, **run_kwargs)
        report.finetune_size = 0 if size is None else size
        reports.append(report)
    return reports


def make_segmenter(detector: Detector) -> Detector:
    """Collapse a labeled detector into the single-'character'-class role."""
    return SegmenterAdapter(detector)
