"""COCO-style average precision over two metric families.

Region tasks (gates, polygons) match detections to ground truth by polygon
IoU over thresholds 0.50 to 0.95 in steps of 0.05. Point tasks use L1
distance instead, over thresholds 0.10 down to 0.01; a full line is one
detection whose score is the sum of its eight order-aligned point distances.

The matching protocol is greedy in confidence order: walk detections from
most to least confident (ties broken by image id then insertion index, so
aggregation is deterministic), assign each to the best-scoring unmatched
ground truth of the same image that satisfies the threshold, and mark
everything else a false positive. AP is the exact area under the monotone
precision envelope of the resulting PR curve, no fixed-point sampling.

Images with no ground truth and no detections are vacuously perfect (AP 1.0
when the whole dataset is empty); detections on empty images count as false
positives globally. Detections whose geometry cannot be scored (too few
vertices, wrong line length) are kept as automatic false positives and
tallied in the report's malformed count.
"""

import dataclasses
import json
import pathlib

import numpy as np

from polyseq import geometry
from polyseq import svgplot
from polyseq.geometry import RASTER_RESOLUTION, DegeneratePolygonError

IOU_THRESHOLDS = tuple(np.arange(50, 100, 5) / 100.0)  # 0.50 ... 0.95
L1_THRESHOLDS = tuple(np.arange(10, 0, -1) / 100.0)  # 0.10 ... 0.01
LINE_POINTS = 8


@dataclasses.dataclass
class Detection:
    image_id: int
    verts: np.ndarray  # (k, 2) normalized coordinates
    confidence: float

    def __post_init__(self):
        self.verts = np.asarray(self.verts, dtype=np.float64)
        if self.verts.ndim != 2 or self.verts.shape[1] != 2:
            raise ValueError(f"verts must be (k, 2), got {self.verts.shape}")
        c = float(self.confidence)
        if not np.isfinite(c) or not 0.0 <= c <= 1.0:
            raise ValueError(f"confidence must be finite in [0, 1], got {c}")
        self.confidence = c


@dataclasses.dataclass
class EvalReport:
    task: str
    thresholds: tuple
    ap_per_threshold: dict  # threshold -> AP
    mean_ap: float  # arithmetic mean over thresholds
    curves: dict  # threshold -> (recalls, precisions), one point per detection
    counts: dict  # threshold -> {"tp": int, "fp": int, "fn": int}
    malformed: int
    n_gt: int
    n_detections: int


def line_score(pred_points, gt_points, threshold):
    """Pass iff the sum of order-aligned point L1 distances is within the
    threshold. Wrong-length predictions always fail."""
    pred = np.asarray(pred_points, dtype=np.float64)
    gt = np.asarray(gt_points, dtype=np.float64)
    if pred.shape != (LINE_POINTS, 2) or gt.shape != (LINE_POINTS, 2):
        return False
    return float(np.abs(pred - gt).sum()) <= float(threshold)


def average_precision(recalls, precisions):
    """Exact area under the monotone (non-increasing) precision envelope."""
    if len(recalls) == 0:
        return 0.0
    env = np.maximum.accumulate(np.asarray(precisions)[::-1])[::-1]
    r = np.asarray(recalls)
    prev = np.concatenate([[0.0], r[:-1]])
    return float(np.sum((r - prev) * env))


def _pair_scores(dets, gts_by_image, scorer):
    """Score every detection against every same-image ground truth.

    Returns (scores per detection: array over that image's GTs, malformed
    count). Unscorable pairs stay NaN, which both acceptance directions
    reject, so malformed detections are unconditional false positives."""
    malformed = 0
    rows = []
    for det in dets:
        gts = gts_by_image.get(det.image_id, [])
        row = np.full(len(gts), np.nan)
        for j, gt in enumerate(gts):
            row[j] = scorer(det.verts, gt)
        if np.isnan(row).any():
            malformed += 1
        rows.append(row)
    return rows, malformed


def _greedy_flags(order, dets, score_rows, accepts, better, n_gt_by_image):
    """One threshold's confidence-ordered matching; True = true positive."""
    taken = {img: np.zeros(n, dtype=bool) for img, n in n_gt_by_image.items()}
    flags = np.zeros(len(order), dtype=bool)
    for pos, i in enumerate(order):
        det = dets[i]
        row = score_rows[i]
        free = taken.get(det.image_id)
        best = -1
        for j in range(len(row)):
            if free is None or free[j] or not accepts(row[j]):
                continue
            if best < 0 or better(row[j], row[best]):
                best = j
        if best >= 0:
            free[best] = True
            flags[pos] = True
    return flags


def _evaluate(dets, gts_by_image, task, thresholds, scorer, higher_better):
    n_gt_by_image = {img: len(g) for img, g in gts_by_image.items()}
    n_gt = sum(n_gt_by_image.values())
    order = sorted(
        range(len(dets)),
        key=lambda i: (-dets[i].confidence, dets[i].image_id, i),
    )
    score_rows, malformed = _pair_scores(dets, gts_by_image, scorer)

    ap_per, curves, counts = {}, {}, {}
    for thr in thresholds:
        if higher_better:
            accepts = lambda s: s >= thr
            better = lambda a, b: a > b
        else:
            accepts = lambda s: s <= thr
            better = lambda a, b: a < b
        flags = _greedy_flags(order, dets, score_rows, accepts, better,
                              n_gt_by_image)
        tp_cum = np.cumsum(flags)
        fp_cum = np.cumsum(~flags)
        if len(flags):
            precisions = tp_cum / (tp_cum + fp_cum)
            recalls = tp_cum / n_gt if n_gt else np.zeros(len(flags))
        else:
            precisions = np.zeros(0)
            recalls = np.zeros(0)
        if n_gt == 0:
            ap = 1.0 if not dets else 0.0
        else:
            ap = average_precision(recalls, precisions)
        ap_per[float(thr)] = ap
        curves[float(thr)] = (recalls, precisions)
        tp = int(tp_cum[-1]) if len(flags) else 0
        counts[float(thr)] = {
            "tp": tp,
            "fp": len(flags) - tp,
            "fn": n_gt - tp,
        }
    mean_ap = float(np.mean(list(ap_per.values())))
    return EvalReport(
        task=task,
        thresholds=tuple(float(t) for t in thresholds),
        ap_per_threshold=ap_per,
        mean_ap=mean_ap,
        curves=curves,
        counts=counts,
        malformed=malformed,
        n_gt=n_gt,
        n_detections=len(dets),
    )


def _iou_scorer(resolution):
    def score(verts, gt):
        try:
            return geometry.iou(verts, np.asarray(gt, dtype=np.float64),
                                resolution=resolution)
        except DegeneratePolygonError:
            return np.nan

    return score


def _point_scorer(verts, gt):
    g = np.asarray(gt, dtype=np.float64).reshape(-1)
    v = verts.reshape(-1)
    if v.shape != g.shape:
        return np.nan
    return float(np.abs(v - g).sum())


def _line_scorer(verts, gt):
    g = np.asarray(gt, dtype=np.float64)
    if verts.shape != (LINE_POINTS, 2) or g.shape != (LINE_POINTS, 2):
        return np.nan
    return float(np.abs(verts - g).sum())


def ap_at_iou(detections, gts_by_image, iou_threshold,
              resolution=RASTER_RESOLUTION):
    """Single-threshold region AP."""
    report = _evaluate(detections, gts_by_image, "region", (iou_threshold,),
                       _iou_scorer(resolution), higher_better=True)
    return report.ap_per_threshold[float(iou_threshold)]


def map_iou(detections, gts_by_image, task="gates",
            thresholds=IOU_THRESHOLDS, resolution=RASTER_RESOLUTION):
    """mAP over the ten IoU thresholds (gates and polygons)."""
    return _evaluate(detections, gts_by_image, task, thresholds,
                     _iou_scorer(resolution), higher_better=True)


def map_l1_points(detections, gts_by_image, thresholds=L1_THRESHOLDS):
    """mAP over the ten descending L1 thresholds (points)."""
    return _evaluate(detections, gts_by_image, "points", thresholds,
                     _point_scorer, higher_better=False)


def map_l1_lines(detections, gts_by_image, thresholds=L1_THRESHOLDS):
    """mAP for whole lines: match rule is the summed 8-point L1 distance."""
    return _evaluate(detections, gts_by_image, "line", thresholds,
                     _line_scorer, higher_better=False)


def evaluate(detections, gts_by_image, task, resolution=RASTER_RESOLUTION):
    """Task-appropriate report: region IoU for gates/polygons, point L1 for
    points, summed line L1 for lines."""
    if task in ("gates", "polygons"):
        return map_iou(detections, gts_by_image, task, resolution=resolution)
    if task == "points":
        return map_l1_points(detections, gts_by_image)
    if task == "line":
        return map_l1_lines(detections, gts_by_image)
    raise ValueError(f"unknown task {task!r}")


# ---- model-output adapters --------------------------------------------------


def detections_from_parallel(pred, image_id, task):
    """Expand one parallel prediction into ranked detections.

    Every query becomes a detection with confidence p(object); AP ranking
    handles the no-object tail. The line task instead builds one 8-point
    detection from the eight most confident queries, ordered along the
    bottom-left to top-right diagonal (ascending x - y), confidence being
    their mean.
    """
    dets = []
    if task == "line":
        conf = pred.confidence
        if len(conf) < LINE_POINTS:
            return []
        top = np.sort(np.argsort(-conf, kind="stable")[:LINE_POINTS])
        pts = np.asarray(pred.coords)[top]
        order = np.argsort(pts[:, 0] - pts[:, 1], kind="stable")
        dets.append(Detection(image_id, pts[order],
                              float(conf[top].mean())))
        return dets
    for q in range(len(pred.confidence)):
        verts = pred.coords[q]
        verts = np.asarray(verts, dtype=np.float64)
        if task == "gates":
            verts = verts.reshape(4, 2)
        elif task == "points":
            verts = verts.reshape(1, 2)
        dets.append(Detection(image_id, verts, float(pred.confidence[q])))
    return dets


def detections_from_ar(objects, confidences, image_id):
    """Wrap a decoded sentence's objects (already salvage-filtered)."""
    return [
        Detection(image_id, np.asarray(v, dtype=np.float64),
                  float(np.clip(c, 0.0, 1.0)))
        for v, c in zip(objects, confidences)
    ]


def gts_from_scenes(scenes):
    """Ground-truth map keyed by scene index."""
    return {s.index: [np.asarray(v, dtype=np.float64) for v in s.labels]
            for s in scenes}


# ---- artifact emission -------------------------------------------------------


def emit_curves(report, out_dir, stem="pr"):
    """Write {stem}_curves.csv, {stem}_summary.json and {stem}_curves.svg.

    CSV columns threshold,recall,precision,ap with one row per detection per
    threshold; floats use repr so re-parsing is exact and re-emission is
    byte-identical. Returns the three paths.
    """
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{stem}_curves.csv"
    lines = ["threshold,recall,precision,ap"]
    for thr in report.thresholds:
        recalls, precisions = report.curves[thr]
        ap = report.ap_per_threshold[thr]
        for r, p in zip(recalls, precisions):
            lines.append(f"{thr!r},{float(r)!r},{float(p)!r},{ap!r}")
    csv_path.write_text("\n".join(lines) + "\n")

    summary = {
        "task": report.task,
        "mAP": report.mean_ap,
        "per_threshold": {f"{thr:.2f}": report.ap_per_threshold[thr]
                          for thr in report.thresholds},
        "counts": {f"{thr:.2f}": report.counts[thr]
                   for thr in report.thresholds},
        "malformed": report.malformed,
        "n_gt": report.n_gt,
        "n_detections": report.n_detections,
    }
    json_path = out / f"{stem}_summary.json"
    json_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

    series = []
    for thr in report.thresholds:
        recalls, precisions = report.curves[thr]
        xs = np.concatenate([[0.0], recalls])
        ys = np.concatenate([[1.0], precisions])
        series.append((f"t={thr:.2f}", xs, ys))
    svg_path = out / f"{stem}_curves.svg"
    svgplot.line_plot(
        series, svg_path,
        title=f"{report.task} precision-recall (mAP {report.mean_ap:.3f})",
        xlabel="recall", ylabel="precision", xlim=(0, 1), ylim=(0, 1.05),
    )
    return csv_path, json_path, svg_path
