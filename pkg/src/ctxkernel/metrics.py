"""Multi-label annotation metrics over decision-score matrices.

Two protocols: sample/concept mean F-scores plus mean average precision on
one hand, and top-n keyword recall/precision with the count of keywords
recovered at least once on the other.  All rates are percentages.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import BadValue, NoPositives, NonFinite, ShapeMismatch


def _validate(scores: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if scores.ndim != 2:
        raise ShapeMismatch(f"scores must be 2-d (samples x concepts), got {scores.shape}")
    if scores.shape != truth.shape:
        raise ShapeMismatch(f"scores {scores.shape} vs truth {truth.shape}")
    if scores.shape[0] == 0:
        raise BadValue("metrics need at least one sample")
    if not np.isfinite(scores).all():
        raise NonFinite("scores contain non-finite values")
    if not np.isin(truth, (-1.0, 1.0)).all():
        raise BadValue("ground truth must consist of +1/-1 entries")
    return scores, truth


def _f1(tp: np.ndarray, fp: np.ndarray, fn: np.ndarray) -> np.ndarray:
    """Set-overlap F1 with the empty-vs-empty case defined as 1."""
    tp, fp, fn = (np.asarray(v, dtype=np.float64) for v in (tp, fp, fn))
    denom = 2 * tp + fp + fn
    out = np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1.0), 1.0)
    return out


def mf_scores(
    scores: np.ndarray, truth: np.ndarray, threshold: float = 0.0
) -> tuple[float, float]:
    """Mean F1 over samples and over concepts, at a fixed score threshold.

    A concept is predicted for a sample iff its score exceeds the threshold.
    Comparing an empty prediction set with an empty truth set scores 1;
    empty against nonempty scores 0.
    """
    scores, truth = _validate(scores, truth)
    pred = scores > threshold
    true = truth > 0
    tp = (pred & true).sum(axis=1)
    fp = (pred & ~true).sum(axis=1)
    fn = (~pred & true).sum(axis=1)
    mf_s = float(_f1(tp, fp, fn).mean()) * 100.0
    tp_c = (pred & true).sum(axis=0)
    fp_c = (pred & ~true).sum(axis=0)
    fn_c = (~pred & true).sum(axis=0)
    mf_c = float(_f1(tp_c, fp_c, fn_c).mean()) * 100.0
    return mf_s, mf_c


def average_precision(scores: np.ndarray, truth: np.ndarray) -> float:
    """Non-interpolated AP of one concept's ranking, in [0, 1].

    Samples are ranked by descending score; equal scores rank the lower
    sample index first.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if scores.shape != truth.shape or scores.ndim != 1:
        raise ShapeMismatch(f"need matching vectors, got {scores.shape} and {truth.shape}")
    pos = truth > 0
    if not pos.any():
        raise NoPositives("concept has no positive test samples")
    order = np.argsort(-scores, kind="stable")
    hits = pos[order]
    ranks = np.flatnonzero(hits) + 1
    precision_at = np.cumsum(hits)[ranks - 1] / ranks
    return float(precision_at.mean())


def map_score(scores: np.ndarray, truth: np.ndarray) -> float:
    """Mean over concepts of average precision, as a percentage.

    Concepts without any positive sample are skipped with a warning and
    excluded from the mean; if none remain the metric is undefined.
    """
    scores, truth = _validate(scores, truth)
    aps = []
    for k in range(scores.shape[1]):
        if not (truth[:, k] > 0).any():
            warnings.warn(f"concept {k} has no positive samples; skipped in mAP", stacklevel=2)
            continue
        aps.append(average_precision(scores[:, k], truth[:, k]))
    if not aps:
        raise NoPositives("no concept has a positive test sample")
    return float(np.mean(aps)) * 100.0


def corel_metrics(
    scores: np.ndarray,
    truth: np.ndarray,
    top_n: int = 5,
    include_absent: bool = False,
) -> tuple[float, float, float, int]:
    """Top-n keyword annotation quality: (R, P, F, N+).

    Every sample is annotated with its top_n scoring keywords (ties go to
    the lower keyword index).  Per keyword, recall divides correct
    assignments by the keyword's true count and precision by its assignment
    count (0 when never assigned).  R and P average over keywords, F is
    their harmonic mean, and N+ counts keywords with nonzero recall.

    Keywords absent from the ground truth contribute recall 0 and are
    excluded from the R/P means unless ``include_absent`` is set.
    """
    scores, truth = _validate(scores, truth)
    N, K = scores.shape
    if not 1 <= top_n <= K:
        raise BadValue(f"top_n must be in [1, {K}], got {top_n}")
    assigned = np.zeros((N, K), dtype=bool)
    for i in range(N):
        order = np.argsort(-scores[i], kind="stable")
        assigned[i, order[:top_n]] = True
    true = truth > 0
    correct = (assigned & true).sum(axis=0)
    true_count = true.sum(axis=0)
    assigned_count = assigned.sum(axis=0)
    recall = np.where(true_count > 0, correct / np.maximum(true_count, 1), 0.0)
    precision = np.where(assigned_count > 0, correct / np.maximum(assigned_count, 1), 0.0)
    keep = np.ones(K, dtype=bool) if include_absent else true_count > 0
    if not keep.any():
        raise NoPositives("ground truth contains no keyword at all")
    r = float(recall[keep].mean()) * 100.0
    p = float(precision[keep].mean()) * 100.0
    f = 0.0 if r + p == 0 else 2 * r * p / (r + p)
    n_plus = int((recall > 0).sum())
    return r, p, f, n_plus


@dataclass(frozen=True)
class ImageclefReport:
    mf_s: float
    mf_c: float
    map: float

    def as_keyvalues(self) -> str:
        return f"mf_s {self.mf_s:.17g}\nmf_c {self.mf_c:.17g}\nmap {self.map:.17g}\n"

    def as_text(self) -> str:
        rows = [("MF-S", self.mf_s), ("MF-C", self.mf_c), ("mAP", self.map)]
        return "\n".join(f"{name:<6} {value:8.2f}" for name, value in rows) + "\n"


@dataclass(frozen=True)
class CorelReport:
    recall: float
    precision: float
    f_score: float
    n_plus: int

    def as_keyvalues(self) -> str:
        return (
            f"recall {self.recall:.17g}\nprecision {self.precision:.17g}\n"
            f"f_score {self.f_score:.17g}\nn_plus {self.n_plus}\n"
        )

    def as_text(self) -> str:
        rows = [("R", self.recall), ("P", self.precision), ("F", self.f_score)]
        body = "\n".join(f"{name:<6} {value:8.2f}" for name, value in rows)
        return body + f"\n{'N+':<6} {self.n_plus:8d}\n"


def evaluate(
    scores: np.ndarray, truth: np.ndarray, protocol: str = "imageclef", top_n: int = 5
) -> ImageclefReport | CorelReport:
    """Run one protocol's full metric set over a score matrix."""
    if protocol == "imageclef":
        mf_s, mf_c = mf_scores(scores, truth)
        return ImageclefReport(mf_s=mf_s, mf_c=mf_c, map=map_score(scores, truth))
    if protocol == "corel":
        r, p, f, n_plus = corel_metrics(scores, truth, top_n=top_n)
        return CorelReport(recall=r, precision=p, f_score=f, n_plus=n_plus)
    raise BadValue(f"protocol must be imageclef or corel, got {protocol!r}")
