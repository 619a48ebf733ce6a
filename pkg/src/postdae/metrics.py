"""Dice, Hausdorff, dataset aggregation and paired significance testing."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, stats

from .raster import LabelMask


class InsufficientDataError(ValueError):
    """Too few non-zero paired differences for a signed-rank test."""


def _check_pair(a: LabelMask, b: LabelMask):
    if a.shape != b.shape:
        raise ValueError(f"mask dimensions differ: {a.shape} vs {b.shape}")


def dice(a: LabelMask, b: LabelMask, cls: int) -> float:
    """2|A∩B| / (|A|+|B|) for the pixels of class ``cls``; 1.0 if both are empty."""
    _check_pair(a, b)
    ia = a.labels == cls
    ib = b.labels == cls
    total = int(ia.sum()) + int(ib.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((ia & ib).sum()) / total


def _directed_sq(src: np.ndarray, dst: np.ndarray) -> int:
    """max over src pixels of the squared distance to the nearest dst pixel."""
    _, (iy, ix) = ndimage.distance_transform_edt(~dst, return_indices=True)
    ys, xs = np.nonzero(src)
    dy = ys - iy[ys, xs]
    dx = xs - ix[ys, xs]
    return int(np.max(dy * dy + dx * dx))


def hausdorff(a: LabelMask, b: LabelMask, cls: int) -> float:
    """Symmetric Hausdorff distance in pixels between the class-``cls`` pixel sets.

    One empty set gives the canvas diagonal; two empty sets give 0.
    """
    _check_pair(a, b)
    ia = a.labels == cls
    ib = b.labels == cls
    ea, eb = not ia.any(), not ib.any()
    if ea and eb:
        return 0.0
    if ea or eb:
        h, w = a.shape
        return math.sqrt(h * h + w * w)
    d2 = max(_directed_sq(ia, ib), _directed_sq(ib, ia))
    return math.sqrt(d2)


def foreground_dice(a: LabelMask, b: LabelMask) -> float:
    return float(np.mean([dice(a, b, c) for c in range(1, a.num_classes)]))


def foreground_hausdorff(a: LabelMask, b: LabelMask) -> float:
    return float(np.mean([hausdorff(a, b, c) for c in range(1, a.num_classes)]))


@dataclass
class MetricsRecord:
    sample_id: str
    dice: dict
    hausdorff: dict

    @property
    def mean_dice(self) -> float:
        return float(np.mean([v for c, v in self.dice.items() if c != 0]))

    @property
    def mean_hausdorff(self) -> float:
        return float(np.mean([v for c, v in self.hausdorff.items() if c != 0]))


def evaluate_pair(pred: LabelMask, gt: LabelMask, sample_id: str = "") -> MetricsRecord:
    if pred.num_classes != gt.num_classes:
        raise ValueError("prediction and ground truth have different class counts")
    classes = range(gt.num_classes)
    return MetricsRecord(
        sample_id,
        {c: dice(pred, gt, c) for c in classes},
        {c: hausdorff(pred, gt, c) for c in classes},
    )


def _mean_std(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    # a single sample has no spread estimate; report 0 by convention
    std = float(v.std(ddof=1)) if len(v) > 1 else 0.0
    return float(v.mean()), std


def aggregate(records) -> dict:
    """Mean and (n-1) standard deviation of foreground-mean Dice and HD."""
    dice_mean, dice_std = _mean_std([r.mean_dice for r in records])
    hd_mean, hd_std = _mean_std([r.mean_hausdorff for r in records])
    return {
        "n": len(records),
        "dice_mean": dice_mean,
        "dice_std": dice_std,
        "hd_mean": hd_mean,
        "hd_std": hd_std,
    }


def evaluate_pairs(predictions, ground_truths, sample_ids=None):
    """Per-sample records plus the dataset aggregate."""
    if len(predictions) != len(ground_truths):
        raise ValueError(
            f"{len(predictions)} predictions but {len(ground_truths)} ground truths"
        )
    if len(predictions) == 0:
        raise ValueError("nothing to evaluate")
    if sample_ids is None:
        sample_ids = [str(i) for i in range(len(predictions))]
    records = [evaluate_pair(p, g, s) for p, g, s in zip(predictions, ground_truths, sample_ids)]
    return records, aggregate(records)


# -- Wilcoxon signed-rank -----------------------------------------------------------

EXACT_MAX_N = 20


def _signed_rank_setup(x, y):
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    if d.ndim != 1:
        raise ValueError("paired samples must be 1-D")
    d = d[d != 0]
    if len(d) < 5:
        raise InsufficientDataError(
            f"need at least 5 non-zero paired differences, got {len(d)}"
        )
    ranks = stats.rankdata(np.abs(d))
    return d, ranks


def _exact_pvalue(ranks: np.ndarray, t_plus: float) -> float:
    # Midranks are multiples of 1/2, so doubled ranks are integers and the
    # null distribution of 2*T+ is a subset-sum count over them.
    r2 = np.rint(2 * ranks).astype(np.int64)
    total = int(r2.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in r2:
        counts[r:] = counts[r:] + counts[: total + 1 - r].copy()
    t2 = int(round(2 * t_plus))
    n_total = 2 ** len(r2)
    lower = sum(counts[: t2 + 1])
    upper = sum(counts[t2:])
    return float(min(1.0, 2.0 * min(lower, upper) / n_total))


def _normal_pvalue(ranks: np.ndarray, t_plus: float) -> float:
    n = len(ranks)
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - (tie_counts**3 - tie_counts).sum() / 48.0
    if var <= 0:
        return 1.0
    z = (t_plus - mean) / math.sqrt(var)
    return float(min(1.0, 2.0 * stats.norm.sf(abs(z))))


def wilcoxon_signed_rank(x, y) -> float:
    """Two-sided p-value of the Wilcoxon signed-rank test.

    Zero differences are dropped. The null distribution is enumerated
    exactly for up to 20 pairs (midranks for ties); larger samples use the
    normal approximation with tie-corrected variance.
    """
    d, ranks = _signed_rank_setup(x, y)
    t_plus = float(ranks[d > 0].sum())
    if len(d) <= EXACT_MAX_N:
        return _exact_pvalue(ranks, t_plus)
    return _normal_pvalue(ranks, t_plus)


@dataclass
class ComparisonReport:
    methods: list
    summary: dict  # method -> aggregate dict
    pvalues: dict = field(default_factory=dict)  # (metric, a, b) -> p or None
    alpha: float = 0.05
    n_comparisons: int = 1

    @property
    def threshold(self) -> float:
        return self.alpha / self.n_comparisons

    def significant(self, metric: str, a: str, b: str) -> bool:
        p = self.pvalues.get((metric, a, b))
        return p is not None and p < self.threshold

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "methods": list(self.methods),
            "summary": self.summary,
            "alpha": self.alpha,
            "n_comparisons": self.n_comparisons,
            "bonferroni_threshold": self.threshold,
            "comparisons": [
                {
                    "metric": metric,
                    "a": a,
                    "b": b,
                    "p_value": p,
                    "significant": self.significant(metric, a, b),
                }
                for (metric, a, b), p in self.pvalues.items()
            ],
        }


def compare_methods(results: dict, alpha: float = 0.05, n_comparisons: int | None = None) -> ComparisonReport:
    """Pairwise Wilcoxon tests between methods on per-sample Dice and HD.

    ``results`` maps method name to an aligned list of MetricsRecord. The
    Bonferroni denominator defaults to the number of method pairs.
    """
    methods = list(results)
    lengths = {len(v) for v in results.values()}
    if len(lengths) > 1:
        raise ValueError("all methods must be evaluated on the same samples")
    summary = {m: aggregate(results[m]) for m in methods}
    pairs = list(itertools.combinations(methods, 2))
    report = ComparisonReport(
        methods, summary, alpha=alpha, n_comparisons=n_comparisons or max(1, len(pairs))
    )
    for a, b in pairs:
        for metric, getter in (("dice", "mean_dice"), ("hd", "mean_hausdorff")):
            xa = [getattr(r, getter) for r in results[a]]
            xb = [getattr(r, getter) for r in results[b]]
            try:
                p = wilcoxon_signed_rank(xa, xb)
            except InsufficientDataError:
                p = None
            report.pvalues[(metric, a, b)] = p
    return report
