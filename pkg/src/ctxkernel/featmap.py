"""Context-free explicit kernel maps used as the depth-0 cell representation.

Three kinds:
  linear  identity map, dot(map(x), map(x')) = x . x'
  poly2   flattened outer product, dot = (x . x')^2
  hi      decimal-to-unary code, dot = sum_i min(q_i, q'_i) on the
          quantization lattice (histogram intersection)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, ImageSample
from .errors import BadValue, NegativeInput, OutOfRange

KINDS = ("linear", "poly2", "hi")


@dataclass(frozen=True)
class InitMapKind:
    kind: str = "linear"
    levels: int = 16  # hi only
    max_value: float | None = None  # hi only; None = derive from the training split

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise BadValue(f"unknown init map kind {self.kind!r}, expected one of {KINDS}")
        if self.kind == "hi":
            if self.levels < 1:
                raise BadValue("hi levels must be >= 1")
            if self.max_value is not None and self.max_value <= 0:
                raise BadValue("hi max_value must be positive")

    def mapped_dim(self, d0: int) -> int:
        if self.kind == "linear":
            return d0
        if self.kind == "poly2":
            return d0 * d0
        return d0 * self.levels


def map_linear(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def map_poly2(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.outer(x, x).ravel()


def map_hi(x: np.ndarray, levels: int, max_value: float) -> np.ndarray:
    """Quantize to [0, levels] (round half away from zero) and unary-encode."""
    x = np.asarray(x, dtype=np.float64)
    if (x < 0).any():
        raise NegativeInput("hi map requires nonnegative inputs")
    if (x > max_value).any():
        raise OutOfRange(f"hi map input exceeds max_value {max_value}")
    # inputs are nonnegative, so floor(v + 0.5) rounds half away from zero
    q = np.clip(np.floor(x * levels / max_value + 0.5), 0, levels)
    return (np.arange(1, levels + 1)[None, :] <= q[:, None]).astype(np.float64).ravel()


def resolve_hi_max(dataset: Dataset) -> float:
    """Default hi ceiling: the max feature value over the training split."""
    train = dataset.subset("train")
    if not train:
        raise BadValue("hi max_value is 'auto' but the dataset has no training samples")
    m = max(float(s.features.max()) for s in train)
    if m <= 0:
        raise BadValue("hi max_value could not be derived: training features are all <= 0")
    return m


def _map_columns(features: np.ndarray, kind: InitMapKind, max_value: float | None) -> np.ndarray:
    if kind.kind == "linear":
        return np.asarray(features, dtype=np.float64).copy()
    if kind.kind == "poly2":
        return np.stack([map_poly2(features[:, j]) for j in range(features.shape[1])], axis=1)
    return np.stack(
        [map_hi(features[:, j], kind.levels, max_value) for j in range(features.shape[1])], axis=1
    )


def init_maps(
    samples: list[ImageSample] | Dataset,
    kind: InitMapKind,
    l2_normalize: bool = False,
    max_value: float | None = None,
) -> list[np.ndarray]:
    """Apply the chosen map to every cell column of every sample.

    ``l2_normalize`` rescales each raw cell column to unit length before
    mapping (zero columns are left alone).  For hi, ``max_value`` falls back
    to the kind's own setting; resolve 'auto' with resolve_hi_max first.
    """
    if isinstance(samples, Dataset):
        samples = samples.samples
    if kind.kind == "hi":
        if max_value is None:
            max_value = kind.max_value
        if max_value is None:
            raise BadValue("hi map needs a concrete max_value (resolve 'auto' first)")
    out = []
    for s in samples:
        feats = s.features
        if l2_normalize:
            norms = np.linalg.norm(feats, axis=0, keepdims=True)
            feats = np.divide(feats, norms, out=feats.copy(), where=norms > 0)
        out.append(_map_columns(feats, kind, max_value))
    return out
