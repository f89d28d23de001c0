"""Shared dataset builders for the test suite."""

from __future__ import annotations

import logging

import numpy as np
import pytest

from ctxkernel import Dataset, GridSpec, ImageSample


@pytest.fixture(autouse=True)
def _pristine_package_logger():
    """Undo CLI logging setup (handler + propagate=False) after every test.

    The command-line entry point configures the package logger in place, so
    tests that invoke it in-process would otherwise leak that state into
    later tests that capture log records through propagation.
    """
    yield
    logger = logging.getLogger("ctxkernel")
    logger.handlers.clear()
    logger.setLevel(logging.NOTSET)
    logger.propagate = True


def marker_dataset(
    seed: int = 0,
    n_images: int = 200,
    width: int = 3,
    height: int = 3,
    d0: int = 4,
    scale: float = 1.0,
    filler: float = 0.3,
    noise: float = 0.0,
) -> Dataset:
    """Content-identical, context-opposite two-class images.

    Every image holds the same multiset of cell features: one marker of each
    of two kinds placed side by side in a random row position, the rest a
    constant filler vector.  Class 0 puts marker A left of marker B, class 1
    the reverse, so only spatial arrangement separates the classes.  Half
    the images (even indices) are class 0; the first half of the list is the
    training split.
    """
    rng = np.random.default_rng(seed)
    n = width * height
    mark_a = np.zeros(d0)
    mark_a[0] = scale
    mark_b = np.zeros(d0)
    mark_b[1] = scale
    fill = np.zeros(d0)
    fill[2] = scale * filler
    samples: list[ImageSample] = []
    splits: list[str] = []
    for i in range(n_images):
        cls = i % 2
        row = rng.integers(0, height)
        col = rng.integers(0, width - 1)
        left = row * width + col
        right = left + 1
        X = np.tile(fill[:, None], (1, n))
        if cls == 0:
            X[:, left], X[:, right] = mark_a, mark_b
        else:
            X[:, left], X[:, right] = mark_b, mark_a
        if noise > 0:
            X = X + noise * scale * rng.standard_normal((d0, n))
        labels = np.array([1.0, -1.0]) if cls == 0 else np.array([-1.0, 1.0])
        samples.append(ImageSample(id=f"img{i:03d}", features=X, labels=labels))
        splits.append("train" if i < n_images // 2 else "test")
    return Dataset(
        grid=GridSpec(width, height),
        d0=d0,
        concept_names=("a_left_of_b", "b_left_of_a"),
        samples=samples,
        splits=splits,
    )


def random_dataset(
    seed: int = 0,
    n_images: int = 6,
    width: int = 3,
    height: int = 3,
    d0: int = 4,
    K: int = 2,
    train_fraction: float = 1.0,
    nonnegative: bool = True,
) -> Dataset:
    """Random features and labels; every concept gets at least one of each sign."""
    rng = np.random.default_rng(seed)
    n = width * height
    samples: list[ImageSample] = []
    splits: list[str] = []
    labels = np.where(rng.random((n_images, K)) < 0.5, 1.0, -1.0)
    if n_images >= 2:
        labels[0] = 1.0
        labels[1] = -1.0
    for i in range(n_images):
        feats = rng.standard_normal((d0, n))
        if nonnegative:
            feats = np.abs(feats)
        samples.append(ImageSample(id=f"r{i:03d}", features=feats, labels=labels[i].copy()))
        splits.append("train" if i < int(np.ceil(train_fraction * n_images)) else "test")
    names = tuple(f"c{k}" for k in range(K))
    return Dataset(grid=GridSpec(width, height), d0=d0, concept_names=names,
                   samples=samples, splits=splits)
