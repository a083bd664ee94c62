"""Restoration and detection metrics: PSNR, SSIM, IoU/GIoU, AP and mAP.

Boxes are (x1, y1, x2, y2) with x1 < x2 and y1 < y2 in continuous pixel
coordinates. Average precision ranks detections by confidence (ties keep
input order), greedily matches each to the unmatched ground-truth box of
highest overlap, and integrates the precision-recall curve over all recall
increments using the precision attained before each increment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Detection",
    "GroundTruthBox",
    "SsimParams",
    "MeanApResult",
    "psnr",
    "ssim",
    "iou",
    "giou",
    "average_precision",
    "mean_ap",
    "DEFAULT_MAP_THRESHOLDS",
    "parse_detections",
    "parse_ground_truth",
    "format_detections",
    "format_ground_truth",
]

PSNR_CAP_DB = 99.0

DEFAULT_MAP_THRESHOLDS = tuple(round(0.50 + 0.05 * k, 2) for k in range(10))

# ITU BT.601 luminance weights for color -> gray reduction.
_LUMA = (0.299, 0.587, 0.114)

Box = tuple[float, float, float, float]


def _check_box(box, name: str = "box") -> Box:
    x1, y1, x2, y2 = (float(v) for v in box)
    if not (x1 < x2 and y1 < y2):
        raise ValueError(f"{name} is degenerate: {(x1, y1, x2, y2)}")
    return (x1, y1, x2, y2)


@dataclass(frozen=True)
class Detection:
    box: Box
    class_id: int
    confidence: float

    def __post_init__(self):
        object.__setattr__(self, "box", _check_box(self.box))
        object.__setattr__(self, "class_id", int(self.class_id))
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        object.__setattr__(self, "confidence", float(self.confidence))


@dataclass(frozen=True)
class GroundTruthBox:
    box: Box
    class_id: int

    def __post_init__(self):
        object.__setattr__(self, "box", _check_box(self.box))
        object.__setattr__(self, "class_id", int(self.class_id))


@dataclass(frozen=True)
class SsimParams:
    """Windowed-SSIM constants: 11x11 Gaussian, sigma 1.5, unit exponents."""

    window: int = 11
    sigma: float = 1.5
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    dynamic_range: float = 255.0
    k1: float = 0.01
    k2: float = 0.03

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2

    @property
    def c3(self) -> float:
        return self.c2 / 2.0


def _to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 3:
        return img[..., 0] * _LUMA[0] + img[..., 1] * _LUMA[1] + img[..., 2] * _LUMA[2]
    if img.ndim == 3 and img.shape[2] == 1:
        return img[..., 0]
    raise ValueError(f"expected gray or 3-channel image, got shape {img.shape}")


def psnr(x: np.ndarray, y: np.ndarray, bits: int = 8) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 for (near-)identical images."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    peak_sq = float((2 ** bits - 1) ** 2)
    return min(10.0 * math.log10(peak_sq / mse), PSNR_CAP_DB)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    ax = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _window_moments(img: np.ndarray, kern: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(weighted window mean, weighted window mean of squares)."""
    size = kern.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(img, (size, size))
    mu = np.tensordot(view, kern, axes=((2, 3), (0, 1)))
    m2 = np.tensordot(view * view, kern, axes=((2, 3), (0, 1)))
    return mu, m2


def ssim(x: np.ndarray, y: np.ndarray, params: SsimParams | None = None) -> float:
    """Mean windowed structural similarity.

    Color images are reduced to the BT.601 luminance channel; the value is
    the mean over every full stride-1 window of the luminance / contrast /
    structure product.
    """
    p = params or SsimParams()
    gx = _to_gray(x)
    gy = _to_gray(y)
    if gx.shape != gy.shape:
        raise ValueError(f"shape mismatch: {gx.shape} vs {gy.shape}")
    if min(gx.shape) < p.window:
        raise ValueError(f"image must be at least {p.window} pixels on each side")
    kern = _gaussian_kernel(p.window, p.sigma)
    mu_x, m2_x = _window_moments(gx, kern)
    mu_y, m2_y = _window_moments(gy, kern)
    view_xy = (np.lib.stride_tricks.sliding_window_view(gx, kern.shape)
               * np.lib.stride_tricks.sliding_window_view(gy, kern.shape))
    m_xy = np.tensordot(view_xy, kern, axes=((2, 3), (0, 1)))
    var_x = np.maximum(m2_x - mu_x ** 2, 0.0)
    var_y = np.maximum(m2_y - mu_y ** 2, 0.0)
    sig_x = np.sqrt(var_x)
    sig_y = np.sqrt(var_y)
    cov = m_xy - mu_x * mu_y
    lum = (2.0 * mu_x * mu_y + p.c1) / (mu_x ** 2 + mu_y ** 2 + p.c1)
    con = (2.0 * sig_x * sig_y + p.c2) / (var_x + var_y + p.c2)
    stru = (cov + p.c3) / (sig_x * sig_y + p.c3)
    for term, expo in ((lum, p.alpha), (con, p.beta), (stru, p.gamma)):
        if expo != 1.0:
            np.power(term, expo, out=term)
    return float(np.mean(lum * con * stru))


def _intersection(a: Box, b: Box) -> float:
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    return w * h if (w > 0.0 and h > 0.0) else 0.0


def _area(box: Box) -> float:
    return (box[2] - box[0]) * (box[3] - box[1])


def iou(a, b) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    a = _check_box(a, "a")
    b = _check_box(b, "b")
    inter = _intersection(a, b)
    union = _area(a) + _area(b) - inter
    return inter / union


def giou(a, b) -> float:
    """Generalized IoU: IoU minus the hull's empty fraction, in [-1, 1]."""
    a = _check_box(a, "a")
    b = _check_box(b, "b")
    inter = _intersection(a, b)
    union = _area(a) + _area(b) - inter
    hull = ((max(a[2], b[2]) - min(a[0], b[0]))
            * (max(a[3], b[3]) - min(a[1], b[1])))
    return inter / union - (hull - union) / hull


def _match_flags(dets: list[Detection], gts: list[GroundTruthBox],
                 class_id: int, iou_thr: float) -> tuple[list[bool], int]:
    """Confidence-ranked TP/FP flags for one class, plus its ground-truth count."""
    if not 0.0 < iou_thr <= 1.0:
        raise ValueError("IoU threshold must lie in (0, 1]")
    cls_dets = [d for d in dets if d.class_id == class_id]
    cls_gts = [g for g in gts if g.class_id == class_id]
    order = sorted(range(len(cls_dets)), key=lambda i: -cls_dets[i].confidence)
    matched = [False] * len(cls_gts)
    flags: list[bool] = []
    for i in order:
        det = cls_dets[i]
        best_iou = 0.0
        best_j = -1
        for j, gt in enumerate(cls_gts):
            if matched[j]:
                continue
            v = iou(det.box, gt.box)
            if v > best_iou:
                best_iou = v
                best_j = j
        if best_j >= 0 and best_iou >= iou_thr:
            matched[best_j] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags, len(cls_gts)


def _ap_from_flags(flags: list[bool], n_gt: int) -> float:
    if n_gt == 0:
        return 1.0 if not flags else 0.0
    ap = 0.0
    tp = fp = 0
    recall_prev = 0.0
    precision_prev = 1.0
    for is_tp in flags:
        if is_tp:
            tp += 1
        else:
            fp += 1
        recall = tp / n_gt
        ap += (recall - recall_prev) * precision_prev
        recall_prev = recall
        precision_prev = tp / (tp + fp)
    return ap


def average_precision(dets: list[Detection], gts: list[GroundTruthBox],
                      class_id: int, iou_thr: float) -> float:
    """All-point AP for one class at one IoU threshold.

    Empty ground truth yields 1 with no detections and 0 otherwise.
    """
    flags, n_gt = _match_flags(dets, gts, class_id, iou_thr)
    return _ap_from_flags(flags, n_gt)


@dataclass(frozen=True)
class MeanApResult:
    map50: float
    map75: float
    map_mean: float


def mean_ap(dets: list[Detection], gts: list[GroundTruthBox],
            thresholds=DEFAULT_MAP_THRESHOLDS) -> MeanApResult:
    """Class-mean AP at 0.50, at 0.75, and averaged over the threshold grid.

    The class set is inferred from the ground truth; with no ground truth at
    all the result mirrors the per-class convention (1 with no detections,
    0 otherwise).
    """
    thresholds = tuple(thresholds)
    if not thresholds:
        raise ValueError("threshold grid must be nonempty")
    classes = sorted({g.class_id for g in gts})
    if not classes:
        value = 1.0 if not dets else 0.0
        return MeanApResult(value, value, value)

    def class_mean(thr: float) -> float:
        return sum(average_precision(dets, gts, c, thr) for c in classes) / len(classes)

    grid_mean = sum(class_mean(t) for t in thresholds) / len(thresholds)
    return MeanApResult(map50=class_mean(0.50), map75=class_mean(0.75),
                        map_mean=grid_mean)


def parse_detections(text: str) -> list[Detection]:
    """One detection per line: ``class_id x1 y1 x2 y2 confidence``."""
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ValueError(f"detection line {lineno} needs 6 fields: {line!r}")
        cid, x1, y1, x2, y2, conf = parts
        out.append(Detection(box=(float(x1), float(y1), float(x2), float(y2)),
                             class_id=int(cid), confidence=float(conf)))
    return out


def parse_ground_truth(text: str) -> list[GroundTruthBox]:
    """One box per line: ``class_id x1 y1 x2 y2``."""
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"ground-truth line {lineno} needs 5 fields: {line!r}")
        cid, x1, y1, x2, y2 = parts
        out.append(GroundTruthBox(box=(float(x1), float(y1), float(x2), float(y2)),
                                  class_id=int(cid)))
    return out


def format_detections(dets: list[Detection]) -> str:
    return "".join(
        f"{d.class_id} {d.box[0]!r} {d.box[1]!r} {d.box[2]!r} {d.box[3]!r} "
        f"{d.confidence!r}\n" for d in dets)


def format_ground_truth(gts: list[GroundTruthBox]) -> str:
    return "".join(
        f"{g.class_id} {g.box[0]!r} {g.box[1]!r} {g.box[2]!r} {g.box[3]!r}\n"
        for g in gts)
