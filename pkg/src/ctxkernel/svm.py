"""Multi-class one-vs-rest hinge-loss SVM on pooled maps.

The binary sub-problem per concept k (no bias term) is

    min_w  1/2 ||w||^2 + C_k sum_p max(0, 1 - Y_k^p w . phi_p)

solved in the dual by coordinate descent with shrinking, stopping on the
duality gap.  The primal is always recovered through w = sum_p Y alpha phi
so the stored weights satisfy the dual identity bit-for-bit.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadValue,
    DimensionMismatch,
    NonFinite,
    NoPositives,
    ShapeMismatch,
    SingleClass,
)

MODEL_MAGIC = b"CKSV"
ENSEMBLE_MAGIC = b"CKSE"


@dataclass(frozen=True)
class SvmConfig:
    cost: float = 0.03  # uniform C_k default
    costs: tuple[float, ...] | None = None  # optional per-concept override
    tol: float = 1e-10  # duality gap at termination
    max_passes: int = 20000

    def __post_init__(self) -> None:
        if self.cost <= 0:
            raise BadValue(f"svm cost must be positive, got {self.cost}")
        if self.costs is not None and any(c <= 0 for c in self.costs):
            raise BadValue("all per-concept costs must be positive")
        if self.tol <= 0:
            raise BadValue("svm tolerance must be positive")

    def resolve_costs(self, K: int) -> np.ndarray:
        if self.costs is None:
            return np.full(K, self.cost)
        if len(self.costs) != K:
            raise BadValue(f"got {len(self.costs)} per-concept costs for {K} concepts")
        return np.asarray(self.costs, dtype=np.float64)


@dataclass
class SvmModel:
    """Per-concept primal weights (K x D) plus optional dual coefficients."""

    weights: np.ndarray
    costs: np.ndarray
    duals: list[np.ndarray] | None = None

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


@dataclass
class EnsembleModel:
    """Unbalanced-data protocol: per-concept mean over single-concept members."""

    members: list[SvmModel]
    member_indices: list[np.ndarray]  # training subset of each member
    seed: int

    def __post_init__(self) -> None:
        if len(self.members) < 1:
            raise BadValue("ensemble needs at least one member")


def primal_from_dual(duals: np.ndarray, labels: np.ndarray, features: np.ndarray) -> np.ndarray:
    """w = sum_p Y^p alpha^p phi_p, evaluated literally."""
    duals = np.asarray(duals, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or duals.shape != (features.shape[0],) or labels.shape != duals.shape:
        raise ShapeMismatch(
            f"inconsistent shapes: duals {duals.shape}, labels {labels.shape}, features {features.shape}"
        )
    return features.T @ (duals * labels)


def train_dual(
    features: np.ndarray,
    labels: np.ndarray,
    cost: float,
    config: SvmConfig | None = None,
    rng: np.random.Generator | None = None,
    warm_alpha: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve one binary hinge-loss sub-problem; returns (alpha, w).

    LIBLINEAR-style dual coordinate descent: random permutation per pass,
    projected-gradient shrinking of bounded coordinates, termination on the
    duality gap.  The gap is checked before any pass so a warm start at the
    optimum returns immediately with unchanged duals.
    """
    config = config or SvmConfig()
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ShapeMismatch(f"features {X.shape} vs labels {y.shape}")
    if not np.isfinite(X).all() or not np.isfinite(y).all():
        raise NonFinite("training data contains non-finite values")
    if (y > 0).all() or (y < 0).all():
        raise SingleClass("labels are all identical; need both classes")
    if cost <= 0:
        raise BadValue(f"cost must be positive, got {cost}")
    rng = rng or np.random.default_rng(0)
    N = X.shape[0]
    alpha = np.zeros(N) if warm_alpha is None else np.clip(warm_alpha, 0.0, cost)
    q_diag = np.einsum("ij,ij->i", X, X)
    # an all-zero row contributes a constant hinge of 1; its dual optimum is
    # the upper bound, which cancels that constant in the gap
    alpha[q_diag == 0.0] = cost
    w = primal_from_dual(alpha, y, X)
    active = np.arange(N)
    pg_max_bar, pg_min_bar = np.inf, -np.inf
    for _ in range(config.max_passes):
        margins = 1.0 - y * (X @ w)
        primal = 0.5 * (w @ w) + cost * np.maximum(margins, 0.0).sum()
        dual = alpha.sum() - 0.5 * (w @ w)
        if primal - dual <= config.tol:
            break
        pg_max, pg_min = -np.inf, np.inf
        keep = []
        for i in rng.permutation(active):
            if q_diag[i] <= 0.0:
                continue
            g = y[i] * (X[i] @ w) - 1.0
            pg = g
            if alpha[i] == 0.0:
                if g > pg_max_bar:
                    continue  # shrink: stuck at the lower bound
                pg = min(g, 0.0)
            elif alpha[i] == cost:
                if g < pg_min_bar:
                    continue  # shrink: stuck at the upper bound
                pg = max(g, 0.0)
            keep.append(i)
            pg_max = max(pg_max, pg)
            pg_min = min(pg_min, pg)
            if pg != 0.0:
                old = alpha[i]
                new = min(max(old - g / q_diag[i], 0.0), cost)
                if new != old:
                    alpha[i] = new
                    w += (new - old) * y[i] * X[i]
        if not keep or pg_max - pg_min < 1e-12:
            # active set exhausted at this precision: restore everything
            active = np.arange(N)
            pg_max_bar, pg_min_bar = np.inf, -np.inf
        else:
            active = np.array(keep)
            pg_max_bar = pg_max if pg_max > 0 else np.inf
            pg_min_bar = pg_min if pg_min < 0 else -np.inf
    w = primal_from_dual(alpha, y, X)
    return alpha, w


def train_multiclass(
    features: np.ndarray,
    labels: np.ndarray,
    config: SvmConfig,
    rng_for_concept,
    warm: SvmModel | None = None,
) -> SvmModel:
    """One-vs-rest training over all K concepts.

    ``rng_for_concept(k)`` supplies the solver's permutation stream so that
    a given concept sees the same stream regardless of training order.
    """
    X = np.asarray(features, dtype=np.float64)
    Y = np.asarray(labels, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] != X.shape[0]:
        raise ShapeMismatch(f"labels {Y.shape} vs features {X.shape}")
    K = Y.shape[1]
    costs = config.resolve_costs(K)
    weights = np.zeros((K, X.shape[1]))
    duals: list[np.ndarray] = []
    for k in range(K):
        warm_alpha = warm.duals[k] if warm is not None and warm.duals is not None else None
        alpha, w = train_dual(X, Y[:, k], costs[k], config, rng_for_concept(k), warm_alpha)
        weights[k] = w
        duals.append(alpha)
    return SvmModel(weights=weights, costs=costs, duals=duals)


def decision_scores(model: SvmModel, features: np.ndarray) -> np.ndarray:
    """Per-concept scores, always computed one concept at a time.

    The per-concept matvec keeps scores bit-identical between a K-concept
    model and K single-concept models holding the same weight rows.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.shape[1] != model.dim:
        raise ShapeMismatch(f"features dim {X.shape[1]} != model dim {model.dim}")
    out = np.empty((X.shape[0], model.K))
    for k in range(model.K):
        out[:, k] = X @ model.weights[k]
    return out


def hinge_loss(
    model: SvmModel,
    features: np.ndarray,
    labels: np.ndarray,
    config: SvmConfig | None = None,
) -> float:
    """Total objective: sum_k 1/2 ||w_k||^2 + C_k sum_p max(0, 1 - Y w.phi)."""
    Y = np.asarray(labels, dtype=np.float64)
    scores = decision_scores(model, features)
    if Y.shape != scores.shape:
        raise ShapeMismatch(f"labels {Y.shape} vs scores {scores.shape}")
    costs = config.resolve_costs(model.K) if config is not None else model.costs
    margins = np.maximum(1.0 - Y * scores, 0.0)
    return float(0.5 * (model.weights**2).sum() + (costs * margins.sum(axis=0)).sum())


def loss_gradient_wrt_maps(
    model: SvmModel,
    features: np.ndarray,
    labels: np.ndarray,
    config: SvmConfig | None = None,
) -> np.ndarray:
    """Per-sample gradient of the hinge objective w.r.t. the pooled maps.

    Row p is -sum_k C_k Y_k^p w_k on the concepts whose margin is active;
    the kink (margin exactly 1) counts as active.
    """
    Y = np.asarray(labels, dtype=np.float64)
    scores = decision_scores(model, features)
    if Y.shape != scores.shape:
        raise ShapeMismatch(f"labels {Y.shape} vs scores {scores.shape}")
    costs = config.resolve_costs(model.K) if config is not None else model.costs
    active = (1.0 - Y * scores) >= 0.0
    return -(active * Y * costs[None, :]) @ model.weights


def train_ensemble(
    features: np.ndarray,
    labels: np.ndarray,
    members: int = 10,
    neg_ratio: float = 3.0,
    seed: int = 0,
    config: SvmConfig | None = None,
    cost: float | None = None,
) -> EnsembleModel:
    """Per-concept unbalanced protocol: each member sees all positives plus a
    seeded random negative subset of ceil(neg_ratio * |positives|)."""
    config = config or SvmConfig()
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if members < 1:
        raise BadValue("ensemble needs at least one member")
    pos = np.flatnonzero(y > 0)
    neg = np.flatnonzero(y < 0)
    if pos.size == 0:
        raise NoPositives("concept has no positive training samples")
    want = int(np.ceil(neg_ratio * pos.size))
    if want > neg.size:
        warnings.warn(
            f"negative subset truncated: wanted {want}, only {neg.size} available",
            stacklevel=2,
        )
        want = neg.size
    member_cost = cost if cost is not None else config.cost
    out_members: list[SvmModel] = []
    out_indices: list[np.ndarray] = []
    for m in range(members):
        rng = np.random.default_rng(np.random.SeedSequence([seed, m]))
        subset = np.sort(np.concatenate([pos, rng.choice(neg, size=want, replace=False)]))
        alpha, w = train_dual(
            X[subset], y[subset], member_cost, config, np.random.default_rng(np.random.SeedSequence([seed, m, 1]))
        )
        out_members.append(SvmModel(weights=w[None, :], costs=np.array([member_cost]), duals=[alpha]))
        out_indices.append(subset)
    return EnsembleModel(members=out_members, member_indices=out_indices, seed=seed)


def ensemble_scores(ensemble: EnsembleModel, features: np.ndarray) -> np.ndarray:
    """Mean member score per sample."""
    acc = np.zeros(np.asarray(features).shape[0])
    for member in ensemble.members:
        acc += decision_scores(member, features)[:, 0]
    return acc / len(ensemble.members)


def save_model(model: SvmModel, path: str | Path) -> None:
    """Binary layout: magic, u64 K, u64 D, K f64 costs, K*D f64 weights (LE)."""
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<QQ", model.K, model.dim))
        fh.write(np.ascontiguousarray(model.costs, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.weights, dtype="<f8").tobytes())


def load_model(path: str | Path) -> SvmModel:
    blob = Path(path).read_bytes()
    if blob[:4] != MODEL_MAGIC:
        raise BadValue(f"{path}: bad model magic {blob[:4]!r}")
    K, D = struct.unpack("<QQ", blob[4:20])
    expect = 20 + K * 8 + K * D * 8
    if len(blob) != expect:
        raise DimensionMismatch(f"{path}: size {len(blob)} != expected {expect}")
    costs = np.frombuffer(blob[20 : 20 + K * 8], dtype="<f8").copy()
    weights = np.frombuffer(blob[20 + K * 8 :], dtype="<f8").reshape(K, D).copy()
    return SvmModel(weights=weights, costs=costs)


def save_ensembles(ensembles: list[EnsembleModel], dim: int, path: str | Path) -> None:
    """All per-concept ensembles in one file: per member, cost then weights."""
    with open(path, "wb") as fh:
        fh.write(ENSEMBLE_MAGIC)
        fh.write(struct.pack("<QQ", len(ensembles), dim))
        for ens in ensembles:
            fh.write(struct.pack("<QQ", len(ens.members), ens.seed))
            for member in ens.members:
                fh.write(np.ascontiguousarray(member.costs, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(member.weights, dtype="<f8").tobytes())


def load_ensembles(path: str | Path) -> list[EnsembleModel]:
    blob = Path(path).read_bytes()
    if blob[:4] != ENSEMBLE_MAGIC:
        raise BadValue(f"{path}: bad ensemble magic {blob[:4]!r}")
    K, D = struct.unpack("<QQ", blob[4:20])
    off = 20
    out: list[EnsembleModel] = []
    for _ in range(K):
        members_n, seed = struct.unpack("<QQ", blob[off : off + 16])
        off += 16
        members = []
        for _ in range(members_n):
            cost = np.frombuffer(blob[off : off + 8], dtype="<f8").copy()
            off += 8
            w = np.frombuffer(blob[off : off + D * 8], dtype="<f8").reshape(1, D).copy()
            off += D * 8
            members.append(SvmModel(weights=w, costs=cost))
        out.append(EnsembleModel(members=members, member_indices=[], seed=seed))
    if off != len(blob):
        raise DimensionMismatch(f"{path}: trailing bytes after ensemble payload")
    return out
