"""Solver interfaces and the reference attackers used to verify the
evaluation harness without any trained model.

Real neural attackers plug in from out of tree: either through the
in-process registry (`register_detector` / `register_classifier`) or by
naming a module path on the CLI (``pkg.mod:factory``). The oracle
attackers peek at ground truth through ``bind_truth``, which protocol
runners call before each image — this backdoor exists purely so the
harness's upper/lower bounds are checkable.
"""

from __future__ import annotations

import importlib
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DetectionBox:
    bbox: tuple  # (x, y, w, h)
    label: str
    confidence: float

    def __post_init__(self):
        x, y, w, h = self.bbox
        if w <= 0 or h <= 0:
            raise ValueError(f"detection box must have positive area, got {self.bbox}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0,1], got {self.confidence}")


class Detector:
    """detect(image) -> list of DetectionBox, clipped to image bounds."""

    concurrency_safe = True

    def detect(self, image: np.ndarray) -> list:
        raise NotImplementedError

    def bind_truth(self, sample) -> None:  # pragma: no cover - optional hook
        pass


class Classifier:
    """classify(crop) -> (label, confidence)."""

    concurrency_safe = True

    def classify(self, crop: np.ndarray):
        raise NotImplementedError

    def bind_truth(self, sample) -> None:  # pragma: no cover - optional hook
        pass


def clip_box(bbox, side):
    x, y, w, h = bbox
    x0, y0 = max(0.0, x), max(0.0, y)
    x1, y1 = min(float(side), x + w), min(float(side), y + h)
    return (x0, y0, max(x1 - x0, 1e-3), max(y1 - y0, 1e-3))


class OracleDetector(Detector):
    """Perfect attacker: replays the ground truth at confidence 1.0."""

    concurrency_safe = False  # stateful via bind_truth

    def __init__(self):
        self._placements = []

    def bind_truth(self, sample):
        self._placements = sample.placements

    def detect(self, image):
        return [DetectionBox(bbox=p.bbox, label=p.glyph, confidence=1.0) for p in self._placements]


class RandomDetector(Detector):
    """Uniform random boxes and labels; the harness floor."""

    concurrency_safe = False  # owns an RNG stream

    def __init__(self, charset, n_boxes=(4, 6), seed=0):
        self.charset = list(charset)
        self.n_boxes = n_boxes
        self.rng = np.random.default_rng(seed)

    def detect(self, image):
        side = image.shape[0]
        out = []
        for _ in range(int(self.rng.integers(self.n_boxes[0], self.n_boxes[1] + 1))):
            w = float(self.rng.uniform(8, side / 2))
            h = float(self.rng.uniform(8, side / 2))
            x = float(self.rng.uniform(0, side - w))
            y = float(self.rng.uniform(0, side - h))
            label = self.charset[int(self.rng.integers(len(self.charset)))]
            conf = float(self.rng.uniform(0.4, 1.0))
            out.append(DetectionBox(bbox=clip_box((x, y, w, h), side), label=label, confidence=conf))
        return out


class NoisyOracle(Detector):
    """Ground truth degraded by configurable drop / shift / mislabel rates."""

    concurrency_safe = False

    def __init__(self, drop_rate=0.0, shift_px=0.0, mislabel_rate=0.0, charset=(), seed=0):
        self.drop_rate = drop_rate
        self.shift_px = shift_px
        self.mislabel_rate = mislabel_rate
        self.charset = list(charset)
        self.rng = np.random.default_rng(seed)
        self._placements = []

    def bind_truth(self, sample):
        self._placements = sample.placements

    def detect(self, image):
        side = image.shape[0]
        out = []
        for p in self._placements:
            if self.rng.random() < self.drop_rate:
                continue
            x, y, w, h = p.bbox
            if self.shift_px:
                x += float(self.rng.uniform(-self.shift_px, self.shift_px))
                y += float(self.rng.uniform(-self.shift_px, self.shift_px))
            label = p.glyph
            if self.mislabel_rate and self.rng.random() < self.mislabel_rate:
                others = [c for c in self.charset if c != p.glyph] or [p.glyph]
                label = others[int(self.rng.integers(len(others)))]
            conf = float(self.rng.uniform(0.6, 1.0))
            out.append(DetectionBox(bbox=clip_box((x, y, w, h), side), label=label, confidence=conf))
        return out


class SegmenterAdapter(Detector):
    """Wraps any detector into the single-class segmenter role."""

    CLASS = "character"

    def __init__(self, inner: Detector):
        self.inner = inner
        self.concurrency_safe = inner.concurrency_safe

    def bind_truth(self, sample):
        self.inner.bind_truth(sample)

    def detect(self, image):
        return [
            DetectionBox(bbox=d.bbox, label=self.CLASS, confidence=d.confidence)
            for d in self.inner.detect(image)
        ]


class OracleClassifier(Classifier):
    """Labels a crop with the glyph whose ground-truth box best overlaps
    the crop's source box (set via context by the two-step runner)."""

    concurrency_safe = False

    def __init__(self):
        self._lookup = {}

    def bind_truth(self, sample):
        self._lookup = {tuple(p.bbox): p.glyph for p in sample.placements}
        self._placements = sample.placements

    def classify_box(self, crop, source_box):
        from .metrics import iou

        best, best_v = None, 0.0
        for p in self._placements:
            v = iou(source_box, p.bbox)
            if v > best_v:
                best, best_v = p.glyph, v
        return (best if best is not None else "", 1.0)

    def classify(self, crop):
        # without a source box there is nothing to look up
        return ("", 1.0)


class CoinFlipClassifier(Classifier):
    """Correct with probability p, otherwise a random wrong glyph."""

    concurrency_safe = False

    def __init__(self, p_correct, charset, seed=0):
        self.p_correct = p_correct
        self.charset = list(charset)
        self.rng = np.random.default_rng(seed)
        self._placements = []

    def bind_truth(self, sample):
        self._placements = sample.placements

    def classify_box(self, crop, source_box):
        from .metrics import iou

        truth = ""
        best_v = 0.0
        for p in self._placements:
            v = iou(source_box, p.bbox)
            if v > best_v:
                truth, best_v = p.glyph, v
        if self.rng.random() < self.p_correct:
            return (truth, 1.0)
        wrong = [c for c in self.charset if c != truth] or [truth]
        return (wrong[int(self.rng.integers(len(wrong)))], 1.0)

    def classify(self, crop):
        return ("", 1.0)


_DETECTOR_REGISTRY = {}
_CLASSIFIER_REGISTRY = {}


def register_detector(name, factory):
    _DETECTOR_REGISTRY[name] = factory


def register_classifier(name, factory):
    _CLASSIFIER_REGISTRY[name] = factory


register_detector("oracle", lambda **kw: OracleDetector())
register_detector("random", lambda **kw: RandomDetector(**kw))
register_detector("noisy-oracle", lambda **kw: NoisyOracle(**kw))
register_classifier("oracle", lambda **kw: OracleClassifier())


def _parse_plugin_spec(spec: str):
    name, _, argstr = spec.partition("@")
    kwargs = {}
    if argstr:
        for part in argstr.split(","):
            k, _, v = part.partition("=")
            try:
                kwargs[k] = float(v) if "." in v or "e" in v.lower() else int(v)
            except ValueError:
                kwargs[k] = v
    return name, kwargs


def load_detector(spec: str, **extra) -> Detector:
    """Resolve 'oracle', 'noisy-oracle@drop_rate=0.3', or 'pkg.mod:factory'."""
    name, kwargs = _parse_plugin_spec(spec)
    kwargs.update(extra)
    if name in _DETECTOR_REGISTRY:
        return _DETECTOR_REGISTRY[name](**kwargs)
    if ":" in name:
        mod, _, attr = name.partition(":")
        return getattr(importlib.import_module(mod), attr)(**kwargs)
    raise KeyError(f"unknown detector plugin {name!r}")


def load_classifier(spec: str, **extra) -> Classifier:
    name, kwargs = _parse_plugin_spec(spec)
    kwargs.update(extra)
    if name in _CLASSIFIER_REGISTRY:
        return _CLASSIFIER_REGISTRY[name](**kwargs)
    if ":" in name:
        mod, _, attr = name.partition(":")
        return getattr(importlib.import_module(mod), attr)(**kwargs)
    raise KeyError(f"unknown classifier plugin {name!r}")
