"""The deep context network over cell grids.

Forward recursion on explicit maps (per image, column x = cell x):

    Phi(0) given, and Phi(t+1) stacks Phi(0) over C blocks
    sqrt(gamma) * Phi(t) @ P_c^T, one per direction c.

Equivalently on gram matrices:

    K(0) = S,   K(t+1) = S + gamma * sum_c P_c K(t) P_c^T

and Phi(T)^T Phi(T) = K(T) holds exactly (map/gram equivalence).  The
learnable tensors P_c live on the fixed neighborhood support; gamma is a
fixed hyperparameter bounded at construction by ``max_gamma``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import DIRECTIONS, GridSpec, NeighborhoodSystem, build_neighborhood
from .errors import BadValue, ShapeMismatch, StateMismatch

VARIANTS = ("layerwise", "stationary")


def map_dimension(d0p: int, C: int, T: int) -> int:
    """D_T = d0' * sum_{i=0..T} C^i."""
    return d0p * sum(C**i for i in range(T + 1))


def normalized_context(support: NeighborhoodSystem) -> np.ndarray:
    """Row-normalized masks: each cell spreads unit weight over its neighbors."""
    P = support.masks.astype(np.float64)
    sums = P.sum(axis=2, keepdims=True)
    return np.divide(P, sums, out=P, where=sums > 0)


def max_gamma(S: np.ndarray | None, tensors) -> float:
    """Largest context weight with a convergence guarantee for the recursion.

    Returns 1 / sum_c(||P_c||_1 * ||P_c||_inf), a sufficient bound for the
    fixed-point map X -> S + gamma * sum_c P_c X P_c^T to be a Frobenius
    contraction.  The bound depends only on the context tensors; ``S`` is
    accepted for interface symmetry and shape validation.  All-zero tensors
    make any gamma admissible: +inf sentinel.
    """
    P = np.asarray(tensors, dtype=np.float64)
    if P.ndim != 3 or P.shape[1] != P.shape[2]:
        raise ShapeMismatch(f"context tensors must be (C, n, n), got {P.shape}")
    if S is not None:
        S = np.asarray(S)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ShapeMismatch(f"gram matrix must be square, got {S.shape}")
    total = 0.0
    for Pc in P:
        if not Pc.any():
            continue
        col_sum = np.abs(Pc).sum(axis=0).max()  # ||P_c||_1
        row_sum = np.abs(Pc).sum(axis=1).max()  # ||P_c||_inf
        total += col_sum * row_sum
    if total == 0.0:
        return math.inf
    return 1.0 / total


@dataclass
class ContextParams:
    """Learnable context matrices for one stack (layerwise or stationary).

    layerwise: tensors has shape (T, C, n, n), one parameter set per layer.
    stationary: tensors has shape (C, n, n), shared by every layer, so all
    layer instances are the same array and stay bit-identical by construction.
    """

    variant: str
    gamma: float
    depth: int
    support: NeighborhoodSystem
    tensors: np.ndarray

    @property
    def C(self) -> int:
        return self.support.C

    @property
    def n(self) -> int:
        return self.support.n

    def layer(self, t: int) -> np.ndarray:
        """The (C, n, n) parameter block used by layer t."""
        if not 0 <= t < self.depth:
            raise BadValue(f"layer index {t} outside depth {self.depth}")
        return self.tensors if self.variant == "stationary" else self.tensors[t]

    def copy(self) -> "ContextParams":
        return replace(self, tensors=self.tensors.copy())

    def apply_step(self, delta: np.ndarray) -> None:
        """In-place update; off-support entries stay exactly zero."""
        if delta.shape != self.tensors.shape:
            raise ShapeMismatch(f"step shape {delta.shape} != tensors {self.tensors.shape}")
        self.tensors += delta
        self.tensors *= self.support.masks if self.variant == "stationary" else self.support.masks[None]


def build_params(
    support: NeighborhoodSystem,
    depth: int,
    variant: str = "layerwise",
    gamma: float | None = None,
    gamma_factor: float = 0.9,
    tensors: np.ndarray | None = None,
) -> ContextParams:
    """Validated constructor: normalized initial tensors, gamma <= max_gamma.

    With gamma=None the weight is gamma_factor * max_gamma of the initial
    tensors (0 when the grid has no neighbors at all).
    """
    if variant not in VARIANTS:
        raise BadValue(f"variant must be one of {VARIANTS}, got {variant!r}")
    if depth < 1:
        raise BadValue(f"depth must be >= 1, got {depth}")
    base = normalized_context(support) if tensors is None else np.asarray(tensors, np.float64)
    if base.shape != (support.C, support.n, support.n):
        raise ShapeMismatch(f"tensors shape {base.shape} != ({support.C}, {support.n}, {support.n})")
    if ((base != 0) & ~support.masks).any():
        raise BadValue("context tensors have nonzero entries outside the neighborhood support")
    bound = max_gamma(None, base)
    if gamma is None:
        gamma = 0.0 if math.isinf(bound) else gamma_factor * bound
    if gamma < 0:
        raise BadValue(f"gamma must be nonnegative, got {gamma}")
    if gamma > bound * (1 + 1e-12):
        raise BadValue(f"gamma {gamma} exceeds max_gamma {bound}")
    full = base if variant == "stationary" else np.broadcast_to(base, (depth,) + base.shape).copy()
    return ContextParams(variant=variant, gamma=gamma, depth=depth, support=support, tensors=full)


@dataclass
class ClasswiseContext:
    """K independent context stacks, one per concept (variant 'classwise')."""

    stacks: list[ContextParams]

    variant: str = field(default="classwise", init=False)

    @property
    def K(self) -> int:
        return len(self.stacks)

    @property
    def gamma(self) -> float:
        return self.stacks[0].gamma

    @property
    def depth(self) -> int:
        return self.stacks[0].depth

    @property
    def support(self) -> NeighborhoodSystem:
        return self.stacks[0].support

    def copy(self) -> "ClasswiseContext":
        return ClasswiseContext(stacks=[s.copy() for s in self.stacks])


def classwise_from_global(params: ContextParams, K: int) -> ClasswiseContext:
    """Warm start: every class stack begins as a copy of the global params."""
    return ClasswiseContext(stacks=[params.copy() for _ in range(K)])


def forward_layer(phi_t: np.ndarray, phi0: np.ndarray, params: ContextParams, t: int) -> np.ndarray:
    """One recursion step: stack phi0 over sqrt(gamma) * phi_t @ P_c^T per direction."""
    if phi_t.shape[1] != params.n or phi0.shape[1] != params.n:
        raise ShapeMismatch(
            f"cell count mismatch: maps have {phi_t.shape[1]} columns, grid has {params.n}"
        )
    sg = math.sqrt(params.gamma)
    P = params.layer(t)
    blocks = [phi0]
    for c in range(params.C):
        blocks.append(sg * (phi_t @ P[c].T))
    return np.concatenate(blocks, axis=0)


def forward(
    phi0: np.ndarray, params: ContextParams, T: int | None = None, mean_pool: bool = False
) -> tuple[list[np.ndarray], np.ndarray]:
    """Run the full recursion; returns (layer stack, pooled map).

    The stack holds Phi(0)..Phi(T); the pooled map is the row-sum of Phi(T)
    over cells (divided by n when mean_pool is set).
    """
    if T is None:
        T = params.depth
    if T < 1:
        raise BadValue(f"depth must be >= 1, got {T}")
    if T > params.depth:
        raise BadValue(f"requested depth {T} exceeds params depth {params.depth}")
    stack = [np.asarray(phi0, dtype=np.float64)]
    for t in range(T):
        stack.append(forward_layer(stack[-1], stack[0], params, t))
    pooled = stack[-1].sum(axis=1)
    if mean_pool:
        pooled = pooled / params.n
    return stack, pooled


def gram_recursion(S: np.ndarray, params: ContextParams, T: int | None = None) -> np.ndarray:
    """Closed-form kernel recursion K(t+1) = S + gamma * sum_c P_c K(t) P_c^T.

    ``S`` may cover the cells of several images stacked on one index set; the
    per-grid P matrices are then applied block-diagonally (cross-image cells
    are never neighbors).
    """
    Ks = gram_iterates(S, params, T)
    return Ks[-1]


def gram_iterates(S: np.ndarray, params: ContextParams, T: int | None = None) -> list[np.ndarray]:
    """All iterates K(0)..K(T) of the gram recursion."""
    if T is None:
        T = params.depth
    S = np.asarray(S, dtype=np.float64)
    n = params.n
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ShapeMismatch(f"gram matrix must be square, got {S.shape}")
    if S.shape[0] % n != 0:
        raise ShapeMismatch(f"gram side {S.shape[0]} is not a multiple of the cell count {n}")
    blocks = S.shape[0] // n
    Ks = [S]
    for t in range(T):
        acc = S.copy()
        P = params.layer(t)
        K_prev = Ks[-1]
        for c in range(params.C):
            Pc = P[c] if blocks == 1 else np.kron(np.eye(blocks), P[c])
            acc += params.gamma * (Pc @ K_prev @ Pc.T)
        Ks.append(acc)
    return Ks


def relative_error(K_t: np.ndarray, K_prev: np.ndarray) -> float:
    """Mean over cell pairs of |K_t - K_prev| / |K_t + K_prev|.

    Pairs whose denominator is below 1e-30 contribute 0.
    """
    K_t = np.asarray(K_t, dtype=np.float64)
    K_prev = np.asarray(K_prev, dtype=np.float64)
    if K_t.shape != K_prev.shape:
        raise ShapeMismatch(f"shape mismatch {K_t.shape} vs {K_prev.shape}")
    num = np.abs(K_t - K_prev)
    den = np.abs(K_t + K_prev)
    ratio = np.where(den < 1e-30, 0.0, num / np.where(den < 1e-30, 1.0, den))
    return float(ratio.mean())


def backward(stack: list[np.ndarray], grad_pooled: np.ndarray, params: ContextParams) -> np.ndarray:
    """Exact gradient of (grad_pooled . pooled map) w.r.t. the context tensors.

    Per layer the incoming gradient G_{t+1} splits into the top d0' rows
    (Phi(0) is fixed, nothing accumulates) and C direction blocks G_c; then
    dE/dP_c^{(t)} += sqrt(gamma) * G_c^T @ Phi(t) and the gradient passed
    down is sum_c sqrt(gamma) * G_c @ P_c.  Stationary tensors receive the
    sum over their layer instances.  Output is masked to the support.
    """
    T = len(stack) - 1
    if T != params.depth:
        raise StateMismatch(f"stack depth {T} != params depth {params.depth}")
    n = params.n
    d0p = stack[0].shape[0]
    for t, phi in enumerate(stack):
        D_t = map_dimension(d0p, params.C, t)
        if phi.shape != (D_t, n):
            raise StateMismatch(f"layer {t} has shape {phi.shape}, expected ({D_t}, {n})")
    grad_pooled = np.asarray(grad_pooled, dtype=np.float64)
    if grad_pooled.shape != (stack[-1].shape[0],):
        raise StateMismatch(
            f"pooled gradient has shape {grad_pooled.shape}, expected ({stack[-1].shape[0]},)"
        )
    sg = math.sqrt(params.gamma)
    # pooling is a row-sum, so every cell column receives the same gradient
    G = np.repeat(grad_pooled[:, None], n, axis=1)
    out = np.zeros_like(params.tensors)
    for t in range(T - 1, -1, -1):
        phi_t = stack[t]
        D_t = phi_t.shape[0]
        P = params.layer(t)
        G_next = np.zeros((D_t, n))
        offset = d0p
        for c in range(params.C):
            G_c = G[offset : offset + D_t]
            gP = sg * (G_c.T @ phi_t)
            if params.variant == "stationary":
                out[c] += gP
            else:
                out[t, c] += gP
            G_next += sg * (G_c @ P[c])
            offset += D_t
        G = G_next
    out *= params.support.masks if params.variant == "stationary" else params.support.masks[None]
    return out


def _format_weight(w: float) -> str:
    return f"{w:.17g}"


def export_context(params: ContextParams | ClasswiseContext, path: str | Path) -> None:
    """Write the direction-tagged weighted edge list of the context tensors.

    Header lines carry grid, C, r, gamma, T, variant (and classes for the
    classwise case); each nonzero entry becomes one line
    ``ctx <variant> <layer|shared> [class] <x> <x'> <dir> <weight>`` with 17
    significant digits, so import reproduces the tensors bit-exactly.
    """
    lines: list[str] = []
    support = params.support
    lines.append(f"grid {support.grid.width} {support.grid.height}")
    lines.append(f"C {support.C}")
    lines.append(f"r {support.radius}")
    lines.append(f"gamma {_format_weight(params.gamma)}")
    lines.append(f"T {params.depth}")
    lines.append(f"variant {params.variant}")

    def emit(stack: ContextParams, class_tag: str | None) -> None:
        tag = params.variant
        layers = [("shared", stack.tensors)] if stack.variant == "stationary" else [
            (str(t), stack.tensors[t]) for t in range(stack.depth)
        ]
        for layer_tag, block in layers:
            for c in range(stack.C):
                xs, xps = np.nonzero(block[c])
                for x, xp in zip(xs, xps):
                    fields = ["ctx", tag, layer_tag]
                    if class_tag is not None:
                        fields.append(class_tag)
                    fields += [str(x), str(xp), DIRECTIONS[c], _format_weight(block[c][x, xp])]
                    lines.append(" ".join(fields))

    if isinstance(params, ClasswiseContext):
        lines.insert(6, f"classes {params.K}")
        lines.insert(7, f"inner {params.stacks[0].variant}")
        for k, stack in enumerate(params.stacks):
            emit(stack, str(k))
    else:
        emit(params, None)
    Path(path).write_text("\n".join(lines) + "\n")


def import_context(path: str | Path) -> ContextParams | ClasswiseContext:
    """Rebuild context params from an export file (bit-exact round trip)."""
    path = Path(path)
    header: dict[str, str] = {}
    edges: list[list[str]] = []
    for raw in path.read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "ctx":
            edges.append(parts[1:])
        else:
            header[parts[0]] = " ".join(parts[1:])
    try:
        grid = GridSpec(*(int(v) for v in header["grid"].split()))
        r = int(header["r"])
        gamma = float(header["gamma"])
        T = int(header["T"])
        variant = header["variant"]
    except KeyError as exc:
        raise BadValue(f"{path}: missing header line {exc}") from exc
    support = build_neighborhood(grid, r)
    dir_index = {name: i for i, name in enumerate(DIRECTIONS)}

    def new_stack(inner: str) -> ContextParams:
        shape = (support.C, support.n, support.n)
        if inner == "layerwise":
            shape = (T,) + shape
        return ContextParams(
            variant=inner, gamma=gamma, depth=T, support=support, tensors=np.zeros(shape)
        )

    if variant == "classwise":
        if "classes" not in header:
            raise BadValue(f"{path}: missing header line 'classes'")
        K = int(header["classes"])
        inner = header.get("inner", "layerwise")
        stacks = [new_stack(inner) for _ in range(K)]
        for tag, layer_tag, class_tag, x, xp, dname, w in edges:
            stack = stacks[int(class_tag)]
            c = dir_index[dname]
            target = stack.tensors if layer_tag == "shared" else stack.tensors[int(layer_tag)]
            target[c, int(x), int(xp)] = float(w)
        out: ContextParams | ClasswiseContext = ClasswiseContext(stacks=stacks)
    else:
        out = new_stack(variant)
        for tag, layer_tag, x, xp, dname, w in edges:
            c = dir_index[dname]
            target = out.tensors if layer_tag == "shared" else out.tensors[int(layer_tag)]
            target[c, int(x), int(xp)] = float(w)
    # imported weights must respect the support
    stacks = out.stacks if isinstance(out, ClasswiseContext) else [out]
    for stack in stacks:
        masks = stack.support.masks if stack.variant == "stationary" else stack.support.masks[None]
        if ((stack.tensors != 0) & ~masks).any():
            raise BadValue(f"{path}: edge outside the neighborhood support")
    return out
