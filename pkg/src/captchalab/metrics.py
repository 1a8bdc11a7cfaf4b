"""Detection-attack metrics: IoU, greedy matching, precision/recall,
mean average precision, and the CAPTCHA success rates.

Average precision is the area under the precision envelope of the
ranked-detection P-R curve (all-point interpolation, not 11-point), and is
computed in exact rational arithmetic before the final float conversion so
results are bit-comparable across implementations.

Boxes are (x, y, w, h) with a top-left origin.
"""

from __future__ import annotations

from fractions import Fraction

from .errors import EvaluationError

Box = tuple[float, float, float, float]


def iou(a: Box, b: Box) -> float:
    """Intersection-over-union of two positive-area boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        raise ValueError(f"degenerate box: {a} / {b}")
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union


def _det_order_key(det):
    # Total order: confidence descending, then box coordinates and label
    # ascending, so equal-confidence permutations cannot change results.
    return (-det.confidence, det.bbox, str(det.label))


def match_detections(dets, gts, iou_thresh: float = 0.5):
    """Greedy one-to-one matching of detections against ground truth.

    Detections are visited in descending confidence; each becomes a TP iff
    its label matches a still-unmatched ground-truth placement with
    IoU > iou_thresh (best IoU wins), otherwise an FP. Unmatched ground
    truths are FNs.

    Returns (tp, fp, fn, matches) with matches as (det_index, gt_index)
    pairs in the caller's orderings.
    """
    if not 0.0 < iou_thresh < 1.0:
        raise ValueError(f"iou_thresh must be in (0,1), got {iou_thresh}")
    order = sorted(range(len(dets)), key=lambda i: _det_order_key(dets[i]))
    taken = [False] * len(gts)
    matches = []
    for di in order:
        det = dets[di]
        best, best_iou = -1, iou_thresh
        for gi, gt in enumerate(gts):
            if taken[gi] or gt.glyph != det.label:
                continue
            v = iou(det.bbox, gt.bbox)
            if v > best_iou:
                best, best_iou = gi, v
        if best >= 0:
            taken[best] = True
            matches.append((di, best))
    tp = len(matches)
    return tp, len(dets) - tp, len(gts) - tp, matches


def precision_recall(tp: int, fp: int, fn: int) -> tuple[float, float]:
    """Precision and recall with the 1.0-on-empty-denominator convention."""
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be nonnegative")
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    return precision, recall


def average_precision(ranked_hits: list[bool], n_gt: int) -> Fraction:
    """Area under the precision envelope for one class.

    ranked_hits[k] says whether the k-th ranked detection was a TP; n_gt
    is the number of ground-truth instances of the class.
    """
    if n_gt == 0:
        raise EvaluationError("average_precision needs at least one ground truth")
    precisions, recalls = [], []
    tp = 0
    for k, hit in enumerate(ranked_hits, start=1):
        tp += bool(hit)
        precisions.append(Fraction(tp, k))
        recalls.append(Fraction(tp, n_gt))
    # precision envelope: running max from the right
    for i in range(len(precisions) - 2, -1, -1):
        precisions[i] = max(precisions[i], precisions[i + 1])
    ap = Fraction(0)
    prev_r = Fraction(0)
    for p, r in zip(precisions, recalls):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r
    return ap


def mean_average_precision(per_image, class_set=None, iou_thresh: float = 0.5) -> float:
    """mAP over classes that have at least one ground-truth instance.

    per_image is a list of (detections, ground_truths) pairs. Detections
    of each class are ranked by confidence across the whole set, matched
    greedily one-to-one per image, then AP is the envelope area.
    """
    classes = set(class_set) if class_set is not None else set()
    n_gt: dict = {}
    for _, gts in per_image:
        for gt in gts:
            n_gt[gt.glyph] = n_gt.get(gt.glyph, 0) + 1
            classes.add(gt.glyph)
    if not n_gt:
        raise EvaluationError("no ground truth in the evaluation set")
    for dets, _ in per_image:
        classes.update(d.label for d in dets)

    aps = []
    for cls in sorted(c for c in classes if n_gt.get(c, 0) > 0):
        ranked = sorted(
            (
                (img_i, di)
                for img_i, (dets, _) in enumerate(per_image)
                for di, d in enumerate(dets)
                if d.label == cls
            ),
            key=lambda pair: (_det_order_key(per_image[pair[0]][0][pair[1]]), pair[0]),
        )
        taken = {img_i: [False] * len(gts) for img_i, (_, gts) in enumerate(per_image)}
        hits = []
        for img_i, di in ranked:
            dets, gts = per_image[img_i]
            det = dets[di]
            best, best_iou = -1, iou_thresh
            for gi, gt in enumerate(gts):
                if taken[img_i][gi] or gt.glyph != cls:
                    continue
                v = iou(det.bbox, gt.bbox)
                if v > best_iou:
                    best, best_iou = gi, v
            if best >= 0:
                taken[img_i][best] = True
                hits.append(True)
            else:
                hits.append(False)
        aps.append(average_precision(hits, n_gt[cls]))
    return float(sum(aps) / len(aps))


def attack_success(dets, placements, conf_min: float = 0.40, iou_thresh: float = 0.5) -> bool:
    """True iff every prompted character is covered one-to-one by a
    detection with the right label, confidence above conf_min, and
    IoU above iou_thresh."""
    confident = [d for d in dets if d.confidence > conf_min]
    _, _, fn, _ = match_detections(confident, placements, iou_thresh)
    return fn == 0


def asr(outcomes) -> float:
    """Attack success rate: successful attacks over attempts."""
    outcomes = list(outcomes)
    if not outcomes:
        raise ValueError("asr needs at least one outcome")
    return sum(map(bool, outcomes)) / len(outcomes)


def scasr(char_outcomes) -> float:
    """Single-character success rate: correct characters over all characters."""
    char_outcomes = list(char_outcomes)
    if not char_outcomes:
        raise ValueError("scasr needs at least one character outcome")
    return sum(map(bool, char_outcomes)) / len(char_outcomes)


def format_percent(value: float, decimals: int = 1) -> str:
    """0.156 -> '15.6', matching the reporting tables."""
    return f"{value * 100:.{decimals}f}"
