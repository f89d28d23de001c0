"""Alternating end-to-end optimization of context tensors and SVM weights.

Each alternation fixes the context tensors {P_c}, retrains the per-concept
SVMs on the pooled maps, then fixes the SVM weights and takes gradient
steps on the tensors over their masked support.  Training stops when the
relative change of both parameter sets falls below a tolerance, or when the
alternation budget runs out.  Stationary training shares one tensor block
across layers; classwise training refines one stack per concept starting
from a trained global stack.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .context import (
    VARIANTS,
    ClasswiseContext,
    ContextParams,
    backward,
    build_params,
    classwise_from_global,
    export_context,
    forward,
    gram_iterates,
    import_context,
    max_gamma,
    normalized_context,
    relative_error,
)
from .data import Dataset, ImageSample, build_neighborhood
from .errors import (
    BadValue,
    CheckpointMismatch,
    DivergenceDetected,
    MissingFile,
    NonFinite,
    NoPositives,
)
from .featmap import KINDS, InitMapKind, init_maps, resolve_hi_max
from .svm import (
    SvmConfig,
    SvmModel,
    decision_scores,
    hinge_loss,
    load_model,
    loss_gradient_wrt_maps,
    save_model,
    train_dual,
)

log = logging.getLogger("ctxkernel")

TRAIN_VARIANTS = VARIANTS + ("classwise",)


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-keyed generator so every consumer owns an independent stream."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *(int(k) for k in key)]))


@dataclass(frozen=True)
class FeatureSpec:
    """Everything needed to turn raw cell features into initial maps."""

    init_map: str = "linear"
    levels: int = 16
    max_value: float | None = None  # resolved hi ceiling (train-split max)
    l2_normalize: bool = False
    mean_pool: bool = False

    def __post_init__(self) -> None:
        if self.init_map not in KINDS:
            raise BadValue(f"init map must be one of {KINDS}, got {self.init_map!r}")
        if self.levels < 1:
            raise BadValue(f"hi levels must be >= 1, got {self.levels}")


def resolve_feature_spec(spec: FeatureSpec, dataset: Dataset) -> FeatureSpec:
    """Pin the hi ceiling to the training split when it is still unset."""
    if spec.init_map == "hi" and spec.max_value is None:
        return replace(spec, max_value=resolve_hi_max(dataset))
    return spec


def initial_maps(samples: list[ImageSample] | Dataset, spec: FeatureSpec) -> list[np.ndarray]:
    kind = InitMapKind(spec.init_map, levels=spec.levels, max_value=spec.max_value)
    return init_maps(samples, kind, l2_normalize=spec.l2_normalize, max_value=spec.max_value)


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "layerwise"
    depth: int = 3
    radius: int = 1
    init_map: str = "linear"
    levels: int = 16
    l2_normalize: bool = False
    mean_pool: bool = False
    gamma: float | None = None  # explicit override; else gamma_factor * max_gamma
    gamma_factor: float = 0.9
    learning_rate: float = 1e-3
    decay: float = 0.98
    clip_norm: float = 10.0
    p_steps: int = 1
    max_alternations: int = 100
    stop_tol: float = 1e-4
    svm: SvmConfig = field(default_factory=SvmConfig)
    seed: int = 0
    threads: int = 1

    def __post_init__(self) -> None:
        if self.variant not in TRAIN_VARIANTS:
            raise BadValue(f"variant must be one of {TRAIN_VARIANTS}, got {self.variant!r}")
        if self.depth < 1:
            raise BadValue(f"depth must be >= 1, got {self.depth}")
        if self.radius < 1:
            raise BadValue(f"radius must be >= 1, got {self.radius}")
        if self.init_map not in KINDS:
            raise BadValue(f"init map must be one of {KINDS}, got {self.init_map!r}")
        if self.levels < 1:
            raise BadValue(f"hi levels must be >= 1, got {self.levels}")
        # learning_rate 0 is allowed as the documented degenerate no-update run
        if self.learning_rate < 0:
            raise BadValue(f"learning rate must be >= 0, got {self.learning_rate}")
        if not 0 < self.decay <= 1:
            raise BadValue(f"decay must be in (0, 1], got {self.decay}")
        if self.clip_norm <= 0:
            raise BadValue(f"clip norm must be positive, got {self.clip_norm}")
        if self.p_steps < 1:
            raise BadValue(f"p_steps must be >= 1, got {self.p_steps}")
        if self.max_alternations < 1:
            raise BadValue(f"max alternations must be >= 1, got {self.max_alternations}")
        if self.stop_tol < 0:
            raise BadValue(f"stop tolerance must be >= 0, got {self.stop_tol}")
        if self.gamma is not None and self.gamma < 0:
            raise BadValue(f"gamma must be >= 0, got {self.gamma}")
        if self.gamma_factor <= 0:
            raise BadValue(f"gamma factor must be positive, got {self.gamma_factor}")
        if self.seed < 0:
            raise BadValue(f"seed must be >= 0, got {self.seed}")
        if self.threads < 1:
            raise BadValue(f"threads must be >= 1, got {self.threads}")

    def feature_spec(self) -> FeatureSpec:
        return FeatureSpec(
            init_map=self.init_map,
            levels=self.levels,
            l2_normalize=self.l2_normalize,
            mean_pool=self.mean_pool,
        )


@dataclass
class TrainState:
    """Final parameters plus the per-alternation diagnostics."""

    params: ContextParams | ClasswiseContext
    model: SvmModel
    features: FeatureSpec
    loss_history: list[float] = field(default_factory=list)
    re_history: list[float] = field(default_factory=list)
    dp_history: list[float] = field(default_factory=list)
    dw_history: list[float] = field(default_factory=list)
    stopped_at: int | None = None

    @property
    def alternations(self) -> int:
        return len(self.loss_history)


def _check_positives(dataset: Dataset, Y: np.ndarray) -> None:
    for k, name in enumerate(dataset.concept_names):
        if not (Y[:, k] > 0).any():
            raise NoPositives(f"concept {name!r} has no positive training samples")


def _pooled_matrix(phi0: list[np.ndarray], params: ContextParams, mean_pool: bool):
    """Forward every image; returns (stacks, pooled matrix N x D)."""
    stacks = []
    pooled = []
    for p0 in phi0:
        stack, pool = forward(p0, params, mean_pool=mean_pool)
        stacks.append(stack)
        pooled.append(pool)
    return stacks, np.stack(pooled)


def pooled_maps(
    phi0: list[np.ndarray], params: ContextParams, mean_pool: bool = False
) -> np.ndarray:
    """N x D matrix of pooled final-layer maps for a batch of initial maps."""
    _, pooled = _pooled_matrix(phi0, params, mean_pool)
    return pooled


def _grad_over_samples(
    stacks: list[list[np.ndarray]],
    grad_pooled: np.ndarray,
    params: ContextParams,
    threads: int,
) -> np.ndarray:
    """Sum of per-sample tensor gradients, reduced in a fixed order.

    Chunks are contiguous and summed by chunk index, so the result does not
    depend on thread scheduling.
    """
    N = len(stacks)

    def chunk(lo: int, hi: int) -> np.ndarray:
        acc = np.zeros_like(params.tensors)
        for p in range(lo, hi):
            acc += backward(stacks[p], grad_pooled[p], params)
        return acc

    if threads <= 1 or N < 2 * threads:
        return chunk(0, N)
    bounds = np.linspace(0, N, threads + 1).astype(int)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(chunk, bounds[:-1], bounds[1:]))
    total = np.zeros_like(params.tensors)
    for part in parts:
        total += part
    return total


def _probe_re(probe_gram: np.ndarray, params: ContextParams) -> float:
    """Mean relative error between successive gram iterates on one image."""
    Ks = gram_iterates(probe_gram, params)
    if len(Ks) < 2:
        return 0.0
    errs = [relative_error(Ks[t], Ks[t - 1]) for t in range(1, len(Ks))]
    return float(np.mean(errs))


def _step_params(
    params: ContextParams,
    phi0: list[np.ndarray],
    model: SvmModel,
    Y: np.ndarray,
    config: TrainConfig,
    eta: float,
    mean_pool: bool,
    stacks: list[list[np.ndarray]],
    pooled: np.ndarray,
) -> float:
    """Run config.p_steps clipped descent steps; returns sum of step norms^2."""
    step_sq = 0.0
    for s in range(config.p_steps):
        if s > 0:
            stacks, pooled = _pooled_matrix(phi0, params, mean_pool)
        grad_pooled = loss_gradient_wrt_maps(model, pooled, Y)
        grad = _grad_over_samples(stacks, grad_pooled, params, config.threads)
        gnorm = float(np.sqrt((grad**2).sum()))
        scale = min(1.0, config.clip_norm / max(gnorm, 1e-30))
        delta = (-eta * scale) * grad
        params.apply_step(delta)
        step_sq += float((delta**2).sum())
        if params.variant == "stationary":
            # shared storage: every layer must alias the same block
            assert all(params.layer(t) is params.tensors for t in range(params.depth))
    return step_sq


def _log_alternation(alt: int, loss: float, dp: float, dw: float) -> None:
    log.info("alt %d loss %.6e dP %.6e dW %.6e", alt, loss, dp, dw)


def _check_loss(loss: float, history: list[float], alt: int) -> None:
    if not math.isfinite(loss):
        raise NonFinite(f"objective is not finite at alternation {alt}")
    if history and loss > 10.0 * history[0]:
        raise DivergenceDetected(
            f"objective {loss:.6g} at alternation {alt} exceeds 10x the initial {history[0]:.6g}"
        )


def alternate(dataset: Dataset, config: TrainConfig) -> TrainState:
    """The global alternating loop (layerwise or stationary tensors)."""
    if config.variant == "classwise":
        raise BadValue("classwise training needs a warm global context; use train_classwise")
    spec = resolve_feature_spec(config.feature_spec(), dataset)
    phi0 = initial_maps(dataset.subset("train"), spec)
    if not phi0:
        raise BadValue("training split is empty")
    Y = dataset.labels_matrix("train")
    _check_positives(dataset, Y)
    support = build_neighborhood(dataset.grid, config.radius)
    params = build_params(
        support,
        config.depth,
        variant=config.variant,
        gamma=config.gamma,
        gamma_factor=config.gamma_factor,
    )
    K = dataset.K
    costs = config.svm.resolve_costs(K)
    probe_gram = phi0[0].T @ phi0[0]
    state = TrainState(params=params, model=SvmModel(np.zeros((K, 1)), costs), features=spec)
    duals: list[np.ndarray | None] = [None] * K
    prev_w: np.ndarray | None = None
    prev_dp = math.inf
    for alt in range(1, config.max_alternations + 1):
        stacks, pooled = _pooled_matrix(phi0, params, spec.mean_pool)
        weights = np.zeros((K, pooled.shape[1]))
        for k in range(K):
            alpha, w = train_dual(
                pooled, Y[:, k], costs[k], config.svm, rng_stream(config.seed, 1, k), duals[k]
            )
            duals[k] = alpha
            weights[k] = w
        model = SvmModel(weights=weights, costs=costs, duals=list(duals))
        loss = hinge_loss(model, pooled, Y)
        _check_loss(loss, state.loss_history, alt)
        re = _probe_re(probe_gram, params)
        dw = (
            math.inf
            if prev_w is None
            else float(np.linalg.norm(weights - prev_w)) / max(float(np.linalg.norm(prev_w)), 1e-30)
        )
        state.loss_history.append(loss)
        state.re_history.append(re)
        state.dw_history.append(dw)
        prev_w = weights.copy()
        state.model = model
        if alt >= 2 and max(prev_dp, dw) < config.stop_tol:
            state.stopped_at = alt
            state.dp_history.append(prev_dp)
            _log_alternation(alt, loss, prev_dp, dw)
            break
        if alt == config.max_alternations:
            state.dp_history.append(prev_dp)
            _log_alternation(alt, loss, prev_dp, dw)
            break
        p_norm = max(float(np.linalg.norm(params.tensors)), 1e-30)
        eta = config.learning_rate * config.decay ** (alt - 1)
        step_sq = _step_params(
            params, phi0, model, Y, config, eta, spec.mean_pool, stacks, pooled
        )
        prev_dp = math.sqrt(step_sq) / p_norm
        state.dp_history.append(prev_dp)
        _log_alternation(alt, loss, prev_dp, dw)
    return state


def train_stationary(dataset: Dataset, config: TrainConfig) -> TrainState:
    """Alternating loop with one tensor block shared by every layer."""
    return alternate(dataset, replace(config, variant="stationary"))


def train_classwise(
    dataset: Dataset,
    config: TrainConfig,
    warm: ContextParams,
    warm_models: SvmModel | None = None,
) -> TrainState:
    """Per-concept refinement of K context stacks warm-started from ``warm``.

    Each concept keeps its own stack, updated only by its own share of the
    loss gradient, and its SVM is trained on its own pooled maps.  With
    ``warm_models`` supplied and a budget of one alternation, the returned
    state reproduces the warm model bit-for-bit (the solver resolves the
    warm duals without taking a pass, and no tensor step is applied).
    """
    if not isinstance(warm, ContextParams):
        raise BadValue("warm start must be a trained global ContextParams")
    if warm.n != dataset.grid.n:
        raise BadValue(
            f"warm context covers {warm.n} cells but the dataset grid has {dataset.grid.n}"
        )
    spec = resolve_feature_spec(config.feature_spec(), dataset)
    phi0 = initial_maps(dataset.subset("train"), spec)
    if not phi0:
        raise BadValue("training split is empty")
    Y = dataset.labels_matrix("train")
    _check_positives(dataset, Y)
    K = dataset.K
    ctx = classwise_from_global(warm, K)
    costs = config.svm.resolve_costs(K)
    probe_gram = phi0[0].T @ phi0[0]
    state = TrainState(params=ctx, model=SvmModel(np.zeros((K, 1)), costs), features=spec)
    duals: list[np.ndarray | None] = [None] * K
    if warm_models is not None and warm_models.duals is not None:
        duals = [warm_models.duals[k].copy() for k in range(K)]
    prev_w: np.ndarray | None = None
    prev_dp = math.inf
    for alt in range(1, config.max_alternations + 1):
        stacks_k, pooled_k = [], []
        for k in range(K):
            stacks, pooled = _pooled_matrix(phi0, ctx.stacks[k], spec.mean_pool)
            stacks_k.append(stacks)
            pooled_k.append(pooled)
        weights = np.zeros((K, pooled_k[0].shape[1]))
        for k in range(K):
            alpha, w = train_dual(
                pooled_k[k], Y[:, k], costs[k], config.svm, rng_stream(config.seed, 1, k), duals[k]
            )
            duals[k] = alpha
            weights[k] = w
        model = SvmModel(weights=weights, costs=costs, duals=list(duals))
        loss = 0.0
        for k in range(K):
            view = SvmModel(weights=weights[k : k + 1], costs=costs[k : k + 1])
            loss += hinge_loss(view, pooled_k[k], Y[:, k : k + 1])
        _check_loss(loss, state.loss_history, alt)
        re = float(np.mean([_probe_re(probe_gram, ctx.stacks[k]) for k in range(K)]))
        flat = weights.ravel()
        dw = (
            math.inf
            if prev_w is None
            else float(np.linalg.norm(flat - prev_w)) / max(float(np.linalg.norm(prev_w)), 1e-30)
        )
        state.loss_history.append(loss)
        state.re_history.append(re)
        state.dw_history.append(dw)
        prev_w = flat.copy()
        state.model = model
        if alt >= 2 and max(prev_dp, dw) < config.stop_tol:
            state.stopped_at = alt
            state.dp_history.append(prev_dp)
            _log_alternation(alt, loss, prev_dp, dw)
            break
        if alt == config.max_alternations:
            state.dp_history.append(prev_dp)
            _log_alternation(alt, loss, prev_dp, dw)
            break
        p_norm = max(
            math.sqrt(sum(float((s.tensors**2).sum()) for s in ctx.stacks)), 1e-30
        )
        eta = config.learning_rate * config.decay ** (alt - 1)
        step_sq = 0.0
        for k in range(K):
            view = SvmModel(weights=weights[k : k + 1], costs=costs[k : k + 1])
            step_sq += _step_params(
                ctx.stacks[k],
                phi0,
                view,
                Y[:, k : k + 1],
                config,
                eta,
                spec.mean_pool,
                stacks_k[k],
                pooled_k[k],
            )
        prev_dp = math.sqrt(step_sq) / p_norm
        state.dp_history.append(prev_dp)
        _log_alternation(alt, loss, prev_dp, dw)
    return state


def train(dataset: Dataset, config: TrainConfig) -> TrainState:
    """Variant dispatch; classwise runs a global layerwise phase first."""
    if config.variant == "classwise":
        global_state = alternate(dataset, replace(config, variant="layerwise"))
        return train_classwise(dataset, config, global_state.params, global_state.model)
    return alternate(dataset, config)


def state_scores(
    params: ContextParams | ClasswiseContext,
    model: SvmModel,
    phi0: list[np.ndarray],
    mean_pool: bool = False,
) -> np.ndarray:
    """Decision scores for a batch of initial maps under either context kind.

    Scores are always a per-concept matvec over that concept's pooled maps,
    so a classwise state whose stacks all equal the global stack reproduces
    the global scores exactly.
    """
    if isinstance(params, ClasswiseContext):
        if params.K != model.K:
            raise CheckpointMismatch(
                f"context has {params.K} class stacks but the model has {model.K} concepts"
            )
        out = np.empty((len(phi0), model.K))
        for k in range(model.K):
            _, pooled = _pooled_matrix(phi0, params.stacks[k], mean_pool)
            out[:, k] = pooled @ model.weights[k]
        return out
    _, pooled = _pooled_matrix(phi0, params, mean_pool)
    return decision_scores(model, pooled)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass(frozen=True)
class GradcheckReport:
    variant: str
    gamma: float
    entries_checked: int
    max_rel_error: float

    def passed(self, threshold: float = 1e-5) -> bool:
        return self.max_rel_error <= threshold


def _frozen_weights(
    rng: np.random.Generator,
    pooled_fn,
    Y: np.ndarray,
    dim: int,
    clearance: float = 0.05,
    tries: int = 50,
) -> np.ndarray:
    """Random frozen weights whose margins sit away from the hinge kink."""
    K = Y.shape[1]
    weights = rng.standard_normal((K, dim)) * 0.2
    for _ in range(tries):
        scores = pooled_fn(weights)
        if np.abs(1.0 - Y * scores).min() >= clearance:
            break
        weights = rng.standard_normal((K, dim)) * 0.2
    return weights


def _fd_loss(pooled: np.ndarray, Y: np.ndarray, weights: np.ndarray, costs: np.ndarray) -> float:
    loss = 0.5 * float((weights**2).sum())
    for k in range(Y.shape[1]):
        margins = np.maximum(1.0 - Y[:, k] * (pooled @ weights[k]), 0.0)
        loss += costs[k] * float(margins.sum())
    return loss


def _perturbed_stack(
    support, depth: int, variant: str, rng: np.random.Generator, gamma: float | None,
    gamma_factor: float, noise: float = 0.3,
) -> ContextParams:
    """A random instance: normalized tensors plus masked noise per block."""
    base = normalized_context(support)
    if variant == "stationary":
        tensors = (base + noise * rng.standard_normal(base.shape)) * support.masks
    else:
        tensors = np.stack(
            [(base + noise * rng.standard_normal(base.shape)) * support.masks for _ in range(depth)]
        )
    if gamma is None:
        blocks = tensors if variant != "stationary" else tensors[None]
        bound = min(max_gamma(None, b) for b in blocks)
        gamma = 0.0 if math.isinf(bound) else gamma_factor * bound
    return ContextParams(variant=variant, gamma=gamma, depth=depth, support=support, tensors=tensors)


def gradcheck(dataset: Dataset, config: TrainConfig, h: float = 1e-5) -> GradcheckReport:
    """Compare analytic tensor gradients against central finite differences.

    Works on a small instance only; weights are frozen at random values with
    every margin kept clear of the hinge kink so the loss is differentiable
    along the probed directions.
    """
    if dataset.grid.n > 9:
        raise BadValue(f"gradient check needs n <= 9 cells, got {dataset.grid.n}")
    if config.depth > 3:
        raise BadValue(f"gradient check needs depth <= 3, got {config.depth}")
    spec = resolve_feature_spec(config.feature_spec(), dataset)
    samples = dataset.subset("train")[:6] or dataset.samples[:6]
    phi0 = initial_maps(samples, spec)
    if not phi0:
        raise BadValue("gradient check needs at least one sample")
    if phi0[0].shape[0] > 6:
        raise BadValue(f"gradient check needs mapped dimension <= 6, got {phi0[0].shape[0]}")
    Y = np.stack([s.labels for s in samples]).astype(np.float64)
    K = Y.shape[1]
    costs = config.svm.resolve_costs(K)
    support = build_neighborhood(dataset.grid, config.radius)
    rng = rng_stream(config.seed, 3)
    n_classes = K if config.variant == "classwise" else 1
    inner = "layerwise" if config.variant == "classwise" else config.variant
    stacks = [
        _perturbed_stack(support, config.depth, inner, rng, config.gamma, config.gamma_factor)
        for _ in range(n_classes)
    ]
    dim = None
    pooled_for = []
    for stack in stacks:
        _, pooled = _pooled_matrix(phi0, stack, spec.mean_pool)
        pooled_for.append(pooled)
        dim = pooled.shape[1]

    if config.variant == "classwise":
        def score_fn(weights):
            return np.stack([pooled_for[k] @ weights[k] for k in range(K)], axis=1)
    else:
        def score_fn(weights):
            return pooled_for[0] @ weights.T

    weights = _frozen_weights(rng, score_fn, Y, dim)

    max_rel = 0.0
    entries = 0
    for ci, stack in enumerate(stacks):
        if config.variant == "classwise":
            view_w, view_y, view_c = weights[ci : ci + 1], Y[:, ci : ci + 1], costs[ci : ci + 1]
        else:
            view_w, view_y, view_c = weights, Y, costs
        model = SvmModel(weights=view_w, costs=view_c)
        sample_stacks, pooled = _pooled_matrix(phi0, stack, spec.mean_pool)
        grad_pooled = loss_gradient_wrt_maps(model, pooled, view_y)
        analytic = _grad_over_samples(sample_stacks, grad_pooled, stack, config.threads)

        def loss_at(params: ContextParams) -> float:
            _, pooled_p = _pooled_matrix(phi0, params, spec.mean_pool)
            return _fd_loss(pooled_p, view_y, view_w, view_c)

        flat_index = np.nonzero(
            stack.support.masks if stack.variant == "stationary" else
            np.broadcast_to(stack.support.masks, stack.tensors.shape)
        )
        for idx in zip(*flat_index):
            probe = stack.copy()
            probe.tensors[idx] += h
            up = loss_at(probe)
            probe.tensors[idx] -= 2 * h
            down = loss_at(probe)
            numeric = (up - down) / (2 * h)
            a = float(analytic[idx])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            max_rel = max(max_rel, rel)
            entries += 1
    return GradcheckReport(
        variant=config.variant,
        gamma=stacks[0].gamma,
        entries_checked=entries,
        max_rel_error=max_rel,
    )


# ---------------------------------------------------------------------------
# checkpoints


def _format_meta_value(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def save_checkpoint(state: TrainState, directory: str | Path) -> None:
    """Write context.txt, model.bin, history.txt and meta.txt into a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    export_context(state.params, directory / "context.txt")
    save_model(state.model, directory / "model.bin")
    lines = []
    for i in range(state.alternations):
        vals = (
            state.loss_history[i],
            state.re_history[i],
            state.dp_history[i],
            state.dw_history[i],
        )
        lines.append(f"{i + 1} " + " ".join(f"{v:.17g}" for v in vals))
    (directory / "history.txt").write_text("\n".join(lines) + ("\n" if lines else ""))
    spec = state.features
    meta = {
        "variant": state.params.variant,
        "init_map": spec.init_map,
        "levels": spec.levels,
        "max_value": spec.max_value,
        "l2_normalize": spec.l2_normalize,
        "mean_pool": spec.mean_pool,
        "stopped_at": state.stopped_at,
        "alternations": state.alternations,
    }
    (directory / "meta.txt").write_text(
        "".join(f"{k} {_format_meta_value(v)}\n" for k, v in meta.items())
    )


def load_checkpoint(directory: str | Path) -> TrainState:
    directory = Path(directory)
    for name in ("context.txt", "model.bin", "meta.txt", "history.txt"):
        if not (directory / name).exists():
            raise MissingFile(f"checkpoint is missing {name} in {directory}")
    params = import_context(directory / "context.txt")
    model = load_model(directory / "model.bin")
    meta: dict[str, str] = {}
    for line in (directory / "meta.txt").read_text().splitlines():
        if line.strip():
            key, _, value = line.partition(" ")
            meta[key] = value.strip()
    if meta.get("variant") != params.variant:
        raise CheckpointMismatch(
            f"meta variant {meta.get('variant')!r} disagrees with context {params.variant!r}"
        )
    if isinstance(params, ClasswiseContext) and params.K != model.K:
        raise CheckpointMismatch(
            f"context has {params.K} class stacks but the model has {model.K} concepts"
        )
    spec = FeatureSpec(
        init_map=meta.get("init_map", "linear"),
        levels=int(meta.get("levels", "16")),
        max_value=None if meta.get("max_value", "none") == "none" else float(meta["max_value"]),
        l2_normalize=meta.get("l2_normalize", "false") == "true",
        mean_pool=meta.get("mean_pool", "false") == "true",
    )
    state = TrainState(params=params, model=model, features=spec)
    for line in (directory / "history.txt").read_text().splitlines():
        if not line.strip():
            continue
        _, loss, re, dp, dw = line.split()
        state.loss_history.append(float(loss))
        state.re_history.append(float(re))
        state.dp_history.append(float(dp))
        state.dw_history.append(float(dw))
    stopped = meta.get("stopped_at", "none")
    state.stopped_at = None if stopped == "none" else int(stopped)
    return state
