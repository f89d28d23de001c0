"""Cell grids, typed neighborhood systems, and dataset ingestion.

An image is a W x H lattice of cells, row-major indexed: cell i sits at
(row, col) = (i // W, i % W).  Each cell carries a raw feature vector of
dimension d0; an image is the d0 x n matrix of its cell columns plus a
K-vector of +/-1 concept labels.

Neighborhoods are typed by direction (above, below, left, right), strictly
axis-aligned with offset at most ``radius`` along the relevant axis and zero
along the other one.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadValue,
    DimensionMismatch,
    LabelArity,
    MissingFile,
    ShapeMismatch,
)

DIRECTIONS = ("above", "below", "left", "right")

FEATURE_MAGIC = b"CKNF"


@dataclass(frozen=True)
class GridSpec:
    """A W x H cell lattice, row-major indexed."""

    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise BadValue(f"grid sides must be positive, got {self.width}x{self.height}")

    @property
    def n(self) -> int:
        return self.width * self.height

    def cell_rc(self, i: int) -> tuple[int, int]:
        return i // self.width, i % self.width

    def cell_index(self, row: int, col: int) -> int:
        return row * self.width + col


@dataclass(frozen=True)
class NeighborhoodSystem:
    """Boolean adjacency masks, one n x n matrix per direction."""

    grid: GridSpec
    radius: int
    masks: np.ndarray  # (C, n, n) bool

    @property
    def C(self) -> int:
        return self.masks.shape[0]

    @property
    def n(self) -> int:
        return self.grid.n


def build_neighborhood(grid: GridSpec, r: int) -> NeighborhoodSystem:
    """Enumerate the four direction masks of a grid at radius ``r``.

    masks[c][x][x'] is true iff cell x' lies in direction c of cell x within
    axis distance r; the off-axis offset must be exactly 0.  A 1x1 grid has
    all-false masks.
    """
    if r < 1:
        raise BadValue(f"radius must be >= 1, got {r}")
    W, n = grid.width, grid.n
    rows, cols = np.divmod(np.arange(n), W)
    drow = rows[:, None] - rows[None, :]  # positive: x' is above x
    dcol = cols[:, None] - cols[None, :]  # positive: x' is left of x
    same_col = dcol == 0
    same_row = drow == 0
    masks = np.stack(
        [
            same_col & (drow >= 1) & (drow <= r),  # above
            same_col & (drow <= -1) & (drow >= -r),  # below
            same_row & (dcol >= 1) & (dcol <= r),  # left
            same_row & (dcol <= -1) & (dcol >= -r),  # right
        ]
    )
    return NeighborhoodSystem(grid=grid, radius=r, masks=masks)


@dataclass
class ImageSample:
    id: str
    features: np.ndarray  # (d0, n) float64
    labels: np.ndarray  # (K,) values in {+1, -1}


@dataclass
class Dataset:
    grid: GridSpec
    d0: int
    concept_names: tuple[str, ...]
    samples: list[ImageSample] = field(default_factory=list)
    splits: list[str] = field(default_factory=list)  # "train" | "test" per sample

    @property
    def K(self) -> int:
        return len(self.concept_names)

    @property
    def n(self) -> int:
        return self.grid.n

    def indices(self, split: str) -> list[int]:
        return [i for i, s in enumerate(self.splits) if s == split]

    def subset(self, split: str) -> list[ImageSample]:
        return [self.samples[i] for i in self.indices(split)]

    def labels_matrix(self, split: str | None = None) -> np.ndarray:
        samples = self.samples if split is None else self.subset(split)
        if not samples:
            return np.zeros((0, self.K))
        return np.stack([s.labels for s in samples])


def write_feature_file(path: str | Path, features: np.ndarray) -> None:
    """Binary cell-feature matrix: magic, u64 rows, u64 cols, f64 column-major."""
    arr = np.ascontiguousarray(features, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatch(f"feature matrix must be 2-D, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes(order="F"))


def read_feature_file(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"feature file not found: {path}")
    blob = path.read_bytes()
    if blob[:4] != FEATURE_MAGIC:
        raise BadValue(f"{path}: bad magic {blob[:4]!r}, expected {FEATURE_MAGIC!r}")
    rows, cols = struct.unpack("<QQ", blob[4:20])
    expect = 20 + rows * cols * 8
    if len(blob) != expect:
        raise DimensionMismatch(f"{path}: file size {len(blob)} != expected {expect} for {rows}x{cols}")
    flat = np.frombuffer(blob[20:], dtype="<f8")
    return flat.reshape((rows, cols), order="F").copy()


def _parse_labels(token: str, K: int, where: str) -> np.ndarray:
    if len(token) != K:
        raise LabelArity(f"{where}: label string {token!r} has length {len(token)}, expected {K}")
    out = np.empty(K)
    for i, ch in enumerate(token):
        if ch == "+":
            out[i] = 1.0
        elif ch == "-":
            out[i] = -1.0
        else:
            raise BadValue(f"{where}: label characters must be '+' or '-', got {ch!r}")
    return out


def load_dataset(manifest_path: str | Path) -> Dataset:
    """Parse a manifest and load every referenced feature file.

    Manifest grammar (line-oriented, '#' starts a comment):
        grid W H
        d0 D
        concepts name1,name2,...
        sample <id> <split> <feature_file> <label_string>
    Feature paths are resolved relative to the manifest directory.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise MissingFile(f"manifest not found: {manifest_path}")
    base = manifest_path.parent
    grid: GridSpec | None = None
    d0: int | None = None
    concepts: tuple[str, ...] | None = None
    samples: list[ImageSample] = []
    splits: list[str] = []

    for lineno, raw in enumerate(manifest_path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{manifest_path}:{lineno}"
        parts = line.split()
        kind = parts[0]
        if kind == "grid":
            if len(parts) != 3:
                raise BadValue(f"{where}: expected 'grid W H'")
            grid = GridSpec(int(parts[1]), int(parts[2]))
        elif kind == "d0":
            if len(parts) != 2:
                raise BadValue(f"{where}: expected 'd0 D'")
            d0 = int(parts[1])
            if d0 < 1:
                raise BadValue(f"{where}: d0 must be positive")
        elif kind == "concepts":
            if len(parts) != 2:
                raise BadValue(f"{where}: expected 'concepts a,b,...'")
            concepts = tuple(parts[1].split(","))
        elif kind == "sample":
            if len(parts) != 5:
                raise BadValue(f"{where}: expected 'sample <id> <split> <file> <labels>'")
            if grid is None or d0 is None or concepts is None:
                raise BadValue(f"{where}: sample line before grid/d0/concepts headers")
            sid, split, fname, labtok = parts[1:]
            if split not in ("train", "test"):
                raise BadValue(f"{where}: split must be train or test, got {split!r}")
            feats = read_feature_file(base / fname)
            if feats.shape != (d0, grid.n):
                raise DimensionMismatch(
                    f"{where}: {fname} has shape {feats.shape}, expected ({d0}, {grid.n})"
                )
            if not np.isfinite(feats).all():
                raise BadValue(f"{where}: {fname} contains non-finite features")
            labels = _parse_labels(labtok, len(concepts), where)
            samples.append(ImageSample(id=sid, features=feats, labels=labels))
            splits.append(split)
        else:
            raise BadValue(f"{where}: unknown directive {kind!r}")

    if grid is None or d0 is None or concepts is None:
        raise BadValue(f"{manifest_path}: missing grid/d0/concepts headers")
    return Dataset(grid=grid, d0=d0, concept_names=concepts, samples=samples, splits=splits)


def save_dataset(dataset: Dataset, manifest_path: str | Path, feature_dir: str | None = None) -> None:
    """Write a dataset back to the on-disk format (bit-exact round trip)."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    subdir = feature_dir or "features"
    (base / subdir).mkdir(parents=True, exist_ok=True)
    lines = [
        f"grid {dataset.grid.width} {dataset.grid.height}",
        f"d0 {dataset.d0}",
        "concepts " + ",".join(dataset.concept_names),
    ]
    for sample, split in zip(dataset.samples, dataset.splits):
        fname = f"{subdir}/{sample.id}.cknf"
        write_feature_file(base / fname, sample.features)
        labtok = "".join("+" if v > 0 else "-" for v in sample.labels)
        lines.append(f"sample {sample.id} {split} {fname} {labtok}")
    manifest_path.write_text("\n".join(lines) + "\n")
