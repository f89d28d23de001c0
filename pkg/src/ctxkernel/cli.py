"""Command-line entry point for dataset checks, training and evaluation.

Subcommands: validate, train, eval, export-context, gradcheck.  All inputs
come from a flat key-value config file; a handful of flags override single
keys.  Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
failure.  Set ``CTXKERNEL_LOG`` to debug/info/warning/error for verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, apply_overrides, parse_config
from .context import export_context, map_dimension, max_gamma, normalized_context
from .data import Dataset, build_neighborhood, load_dataset
from .errors import BadValue, CheckpointMismatch, ConfigError, CtxKernelError, UsageError
from .featmap import KINDS, InitMapKind
from .metrics import evaluate
from .svm import ensemble_scores, load_ensembles, save_ensembles, train_ensemble
from .trainer import (
    TRAIN_VARIANTS,
    TrainState,
    gradcheck,
    initial_maps,
    load_checkpoint,
    pooled_maps,
    save_checkpoint,
    state_scores,
    train,
)

log = logging.getLogger("ctxkernel")

_LOG_LEVELS = {
    "debug": logging.DEBUG,
    "info": logging.INFO,
    "warning": logging.WARNING,
    "error": logging.ERROR,
}


def _setup_logging() -> None:
    level = _LOG_LEVELS.get(os.environ.get("CTXKERNEL_LOG", "info").lower(), logging.INFO)
    log.setLevel(level)
    if not log.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(message)s"))
        log.addHandler(handler)
    log.propagate = False


class _Parser(argparse.ArgumentParser):
    """Argument errors surface as usage errors (exit code 1), not SystemExit."""

    def error(self, message: str):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ctxkernel", description=__doc__, add_help=True)
    parser.add_argument(
        "command",
        choices=("validate", "train", "eval", "export-context", "gradcheck"),
        help="what to run",
    )
    parser.add_argument("--config", required=True, help="flat key-value config file")
    parser.add_argument("--threads", type=int, help="worker pool size (default: all cores)")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--variant", choices=TRAIN_VARIANTS, help="context variant override")
    parser.add_argument("--depth", type=int, help="network depth override")
    parser.add_argument("--radius", type=int, help="neighborhood radius override")
    parser.add_argument("--init-map", dest="init_map", choices=KINDS, help="initial map override")
    parser.add_argument(
        "--gamma-factor", dest="gamma_factor", type=float, help="context weight safety factor"
    )
    parser.add_argument(
        "--protocol", choices=("imageclef", "corel"), help="evaluation protocol override"
    )
    parser.add_argument("--ensemble", choices=("on", "off"), help="unbalanced-data ensembles")
    return parser


def _load_run_dataset(config: RunConfig) -> Dataset:
    if not config.manifest:
        raise ConfigError("config key 'manifest' is required")
    return load_dataset(config.manifest)


def _resolve_threads(config: RunConfig) -> int:
    if config.threads is not None:
        return config.threads
    return os.cpu_count() or 1


def cmd_validate(config: RunConfig) -> int:
    dataset = _load_run_dataset(config)
    support = build_neighborhood(dataset.grid, config.radius)
    kind = InitMapKind(config.init_map, levels=config.levels, max_value=config.hi_max)
    d0p = kind.mapped_dim(dataset.d0)
    dim = map_dimension(d0p, support.C, config.depth)
    bound = max_gamma(None, normalized_context(support))
    gamma = config.gamma if config.gamma is not None else (
        0.0 if bound == float("inf") else config.gamma_factor * bound
    )
    lines = [
        f"samples {len(dataset.samples)}",
        f"train {len(dataset.indices('train'))}",
        f"test {len(dataset.indices('test'))}",
        f"grid {dataset.grid.width}x{dataset.grid.height}",
        f"cells {dataset.grid.n}",
        f"d0 {dataset.d0}",
        f"concepts {dataset.K} {','.join(dataset.concept_names)}",
        f"directions {support.C}",
        f"radius {config.radius}",
        f"init_map {config.init_map}",
        f"mapped_dim {d0p}",
        f"depth {config.depth}",
        f"map_dimension {dim}",
        f"max_gamma {bound:.6g}",
        f"gamma {gamma:.6g}",
    ]
    print("\n".join(lines))
    return 0


def _fit_ensembles(dataset: Dataset, state: TrainState, config: RunConfig, threads: int):
    """Post-hoc unbalanced protocol on the final maps, one ensemble per concept."""
    samples = dataset.subset("train")
    phi0 = initial_maps(samples, state.features)
    Y = dataset.labels_matrix("train")
    costs = state.model.costs
    ensembles = []
    for k in range(dataset.K):
        params_k = state.params.stacks[k] if hasattr(state.params, "stacks") else state.params
        pooled = pooled_maps(phi0, params_k, state.features.mean_pool)
        seed_k = int(np.random.SeedSequence([config.seed, 4, k]).generate_state(1)[0])
        ensembles.append(
            train_ensemble(
                pooled,
                Y[:, k],
                members=config.ensemble_members,
                neg_ratio=config.ensemble_neg_ratio,
                seed=seed_k,
                cost=float(costs[k]),
            )
        )
    return ensembles


def cmd_train(config: RunConfig, threads: int) -> int:
    dataset = _load_run_dataset(config)
    train_config = config.train_config(threads)
    state = train(dataset, train_config)
    ck_dir = config.checkpoint_dir()
    save_checkpoint(state, ck_dir)
    if config.ensemble:
        ensembles = _fit_ensembles(dataset, state, config, threads)
        save_ensembles(ensembles, state.model.dim, ck_dir / "ensemble.bin")
    if config.figures:
        from .figures import render_context_figure, render_training_figure

        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        render_training_figure(state, out / "training.png")
        render_context_figure(state.params, out / "context.png")
    stopped = state.stopped_at if state.stopped_at is not None else "budget"
    print(f"checkpoint {ck_dir}")
    print(
        f"alternations {state.alternations} stop {stopped} "
        f"loss {state.loss_history[-1]:.6e}"
    )
    return 0


def _eval_scores(dataset: Dataset, state: TrainState, config: RunConfig) -> np.ndarray:
    samples = dataset.subset(config.eval_split)
    if not samples:
        raise BadValue(f"split {config.eval_split!r} has no samples")
    phi0 = initial_maps(samples, state.features)
    d0p = phi0[0].shape[0]
    support = state.params.support
    expected = map_dimension(d0p, support.C, state.params.depth)
    if expected != state.model.dim:
        raise CheckpointMismatch(
            f"dataset maps to dimension {expected} but the model expects {state.model.dim}"
        )
    ens_path = config.checkpoint_dir() / "ensemble.bin"
    if ens_path.exists():
        ensembles = load_ensembles(ens_path)
        if len(ensembles) != state.model.K:
            raise CheckpointMismatch(
                f"{len(ensembles)} ensembles for {state.model.K} concepts"
            )
        scores = np.empty((len(samples), state.model.K))
        for k in range(state.model.K):
            params_k = state.params.stacks[k] if hasattr(state.params, "stacks") else state.params
            pooled = pooled_maps(phi0, params_k, state.features.mean_pool)
            scores[:, k] = ensemble_scores(ensembles[k], pooled)
        return scores
    return state_scores(state.params, state.model, phi0, state.features.mean_pool)


def cmd_eval(config: RunConfig) -> int:
    dataset = _load_run_dataset(config)
    state = load_checkpoint(config.checkpoint_dir())
    if state.model.K != dataset.K:
        raise CheckpointMismatch(
            f"checkpoint has {state.model.K} concepts, dataset has {dataset.K}"
        )
    scores = _eval_scores(dataset, state, config)
    truth = dataset.labels_matrix(config.eval_split)
    report = evaluate(scores, truth, protocol=config.protocol, top_n=config.top_n)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.as_text())
    (out / "report.kv").write_text(report.as_keyvalues())
    ids = [s.id for s in dataset.subset(config.eval_split)]
    score_lines = ["# id " + " ".join(dataset.concept_names)]
    for sid, row in zip(ids, scores):
        score_lines.append(sid + " " + " ".join(f"{v:.17g}" for v in row))
    (out / "scores.txt").write_text("\n".join(score_lines) + "\n")
    if config.figures:
        from .figures import render_metric_figure

        render_metric_figure(report, out / "metrics.png")
    sys.stdout.write(report.as_text())
    return 0


def cmd_export_context(config: RunConfig) -> int:
    state = load_checkpoint(config.checkpoint_dir())
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "context_export.txt"
    export_context(state.params, target)
    print(f"context {target}")
    return 0


def cmd_gradcheck(config: RunConfig, threads: int) -> int:
    dataset = _load_run_dataset(config)
    report = gradcheck(dataset, config.train_config(threads))
    print(
        f"gradcheck variant {report.variant} gamma {report.gamma:.6g} "
        f"entries {report.entries_checked} max_rel_error {report.max_rel_error:.6e}"
    )
    return 0


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _setup_logging()
        config = parse_config(args.config)
        overrides: dict[str, object] = {
            "threads": args.threads,
            "seed": args.seed,
            "variant": args.variant,
            "depth": args.depth,
            "radius": args.radius,
            "init_map": args.init_map,
            "gamma_factor": args.gamma_factor,
            "protocol": args.protocol,
        }
        if args.ensemble is not None:
            overrides["ensemble"] = args.ensemble == "on"
        config = apply_overrides(config, overrides)
        threads = _resolve_threads(config)
        if args.command == "validate":
            return cmd_validate(config)
        if args.command == "train":
            return cmd_train(config, threads)
        if args.command == "eval":
            return cmd_eval(config)
        if args.command == "export-context":
            return cmd_export_context(config)
        return cmd_gradcheck(config, threads)
    except CtxKernelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
