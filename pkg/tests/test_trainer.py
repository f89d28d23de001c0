"""Tests for the alternating trainer, gradient checker, and checkpoints."""

import logging
import math
import re
from dataclasses import replace

import numpy as np
import pytest
from conftest import marker_dataset, random_dataset

from ctxkernel import (
    BadValue,
    CheckpointMismatch,
    ClasswiseContext,
    ContextParams,
    Dataset,
    DivergenceDetected,
    FeatureSpec,
    GridSpec,
    MissingFile,
    NoPositives,
    SvmConfig,
    SvmModel,
    TrainConfig,
    TrainState,
    alternate,
    build_neighborhood,
    build_params,
    classwise_from_global,
    gradcheck,
    initial_maps,
    load_checkpoint,
    pooled_maps,
    save_checkpoint,
    state_scores,
    train,
    train_classwise,
    train_stationary,
)
from ctxkernel.trainer import rng_stream

LOG_LINE = re.compile(
    r"^alt \d+ loss \d\.\d{6}e[+-]\d{2,3}"
    r" dP (inf|\d\.\d{6}e[+-]\d{2,3})"
    r" dW (inf|\d\.\d{6}e[+-]\d{2,3})$"
)


class TestRngStream:
    def test_keyed_streams_are_reproducible_and_distinct(self):
        a = rng_stream(0, 1, 5).random(4)
        b = rng_stream(0, 1, 5).random(4)
        c = rng_stream(0, 1, 6).random(4)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)


class TestTrainConfig:
    def test_defaults_are_valid(self):
        config = TrainConfig()
        assert config.variant == "layerwise"
        assert config.depth == 3
        spec = config.feature_spec()
        assert spec == FeatureSpec()

    def test_zero_learning_rate_is_allowed(self):
        assert TrainConfig(learning_rate=0.0).learning_rate == 0.0

    def test_validation(self):
        for kwargs in (
            {"variant": "recurrent"},
            {"depth": 0},
            {"radius": 0},
            {"init_map": "rbf"},
            {"levels": 0},
            {"learning_rate": -1.0},
            {"decay": 0.0},
            {"decay": 1.5},
            {"clip_norm": 0.0},
            {"p_steps": 0},
            {"max_alternations": 0},
            {"stop_tol": -1e-3},
            {"gamma": -0.5},
            {"gamma_factor": 0.0},
            {"seed": -1},
            {"threads": 0},
        ):
            with pytest.raises(BadValue):
                TrainConfig(**kwargs)


class TestAlternate:
    def test_zero_gamma_stops_after_two_identical_alternations(self):
        dataset = marker_dataset(0, n_images=16)
        state = alternate(dataset, TrainConfig(gamma=0.0, max_alternations=50))
        assert state.stopped_at == 2
        assert state.alternations == 2
        assert state.loss_history[0] == state.loss_history[1]
        assert state.dp_history == [0.0, 0.0]
        assert state.dw_history[0] == math.inf
        assert state.dw_history[1] == 0.0

    def test_zero_learning_rate_is_idempotent_after_first_alternation(self):
        dataset = marker_dataset(0, n_images=16)
        state = alternate(dataset, TrainConfig(learning_rate=0.0, max_alternations=50))
        assert state.stopped_at == 2
        assert state.loss_history[0] == state.loss_history[1]
        initial = build_params(
            build_neighborhood(dataset.grid, 1), 3, variant="layerwise"
        )
        np.testing.assert_array_equal(state.params.tensors, initial.tensors)

    def test_loss_does_not_increase(self):
        dataset = marker_dataset(0, n_images=24)
        state = alternate(dataset, TrainConfig(max_alternations=8, stop_tol=0.0))
        losses = state.loss_history
        assert len(losses) == 8
        for a, b in zip(losses, losses[1:]):
            assert b <= a + 1e-9

    def test_tensors_stay_on_support(self):
        dataset = marker_dataset(0, n_images=16)
        state = alternate(dataset, TrainConfig(max_alternations=5, stop_tol=0.0))
        params = state.params
        off = ~np.broadcast_to(params.support.masks[None], params.tensors.shape)
        np.testing.assert_array_equal(params.tensors[off], 0.0)

    def test_single_alternation_budget_takes_no_step(self):
        dataset = marker_dataset(0, n_images=16)
        state = alternate(dataset, TrainConfig(max_alternations=1))
        assert state.alternations == 1
        assert state.stopped_at is None
        initial = build_params(build_neighborhood(dataset.grid, 1), 3)
        np.testing.assert_array_equal(state.params.tensors, initial.tensors)
        assert state.dp_history == [math.inf]

    def test_history_lengths_match(self):
        dataset = marker_dataset(0, n_images=16)
        state = alternate(dataset, TrainConfig(max_alternations=4, stop_tol=0.0))
        n = state.alternations
        assert n == 4
        assert len(state.re_history) == n
        assert len(state.dp_history) == n
        assert len(state.dw_history) == n

    def test_log_lines_per_alternation(self, caplog):
        dataset = marker_dataset(0, n_images=16)
        with caplog.at_level(logging.INFO, logger="ctxkernel"):
            alternate(dataset, TrainConfig(max_alternations=3, stop_tol=0.0))
        lines = [r.getMessage() for r in caplog.records if r.name == "ctxkernel"]
        assert len(lines) == 3
        for line in lines:
            assert LOG_LINE.match(line), line
        assert lines[0].endswith("dW inf")

    def test_threaded_gradients_match_serial(self):
        dataset = marker_dataset(0, n_images=24)
        base = TrainConfig(max_alternations=4, stop_tol=0.0)
        serial = alternate(dataset, base)
        threaded = alternate(dataset, replace(base, threads=2))
        np.testing.assert_allclose(
            serial.loss_history, threaded.loss_history, rtol=1e-9, atol=1e-12
        )
        np.testing.assert_allclose(
            serial.params.tensors, threaded.params.tensors, rtol=1e-9, atol=1e-12
        )

    def test_divergence_is_detected(self):
        dataset = marker_dataset(0, n_images=24)
        config = TrainConfig(
            max_alternations=10,
            stop_tol=0.0,
            learning_rate=1e4,
            svm=SvmConfig(cost=10.0),
        )
        with pytest.raises(DivergenceDetected):
            alternate(dataset, config)

    def test_rejects_classwise_variant(self):
        with pytest.raises(BadValue):
            alternate(marker_dataset(0, n_images=8), TrainConfig(variant="classwise"))

    def test_rejects_empty_training_split(self):
        dataset = random_dataset(0, n_images=4, train_fraction=0.0)
        with pytest.raises(BadValue):
            alternate(dataset, TrainConfig())

    def test_rejects_concept_without_positives(self):
        dataset = random_dataset(0, n_images=6)
        for sample in dataset.samples:
            sample.labels[0] = -1.0
        with pytest.raises(NoPositives):
            alternate(dataset, TrainConfig())


class TestStationary:
    def test_shares_one_block_across_layers(self):
        dataset = marker_dataset(0, n_images=16)
        state = train_stationary(dataset, TrainConfig(max_alternations=4, stop_tol=0.0))
        params = state.params
        assert params.variant == "stationary"
        assert params.tensors.ndim == 3
        assert params.layer(0) is params.layer(2)

    def test_depth_one_matches_layerwise_exactly(self):
        dataset = random_dataset(2, n_images=8)
        base = TrainConfig(depth=1, max_alternations=4, stop_tol=0.0)
        layerwise = alternate(dataset, base)
        stationary = alternate(dataset, replace(base, variant="stationary"))
        assert stationary.loss_history == layerwise.loss_history
        np.testing.assert_array_equal(stationary.params.tensors, layerwise.params.tensors[0])

    def test_dispatcher_wraps_alternate(self):
        dataset = marker_dataset(0, n_images=8)
        state = train_stationary(dataset, TrainConfig(max_alternations=1))
        assert state.params.variant == "stationary"


class TestClasswise:
    def test_single_budget_with_warm_models_reproduces_global_state(self):
        dataset = marker_dataset(0, n_images=40)
        config = TrainConfig(max_alternations=5, stop_tol=0.0)
        global_state = alternate(dataset, config)
        cw = train_classwise(
            dataset,
            replace(config, variant="classwise", max_alternations=1),
            warm=global_state.params,
            warm_models=global_state.model,
        )
        assert cw.alternations == 1
        assert cw.stopped_at is None
        np.testing.assert_array_equal(cw.model.weights, global_state.model.weights)
        for stack in cw.params.stacks:
            np.testing.assert_array_equal(stack.tensors, global_state.params.tensors)
        phi0 = initial_maps(dataset.subset("test"), cw.features)
        np.testing.assert_array_equal(
            state_scores(cw.params, cw.model, phi0),
            state_scores(global_state.params, global_state.model, phi0),
        )

    def test_single_concept_refinement_matches_global_trajectory(self):
        dataset = random_dataset(1, n_images=8, K=1)
        config = TrainConfig(max_alternations=4, stop_tol=0.0)
        global_state = alternate(dataset, config)
        warm = build_params(build_neighborhood(dataset.grid, config.radius), config.depth)
        cw = train_classwise(dataset, replace(config, variant="classwise"), warm=warm)
        assert cw.loss_history == global_state.loss_history
        np.testing.assert_array_equal(
            cw.params.stacks[0].tensors, global_state.params.tensors
        )

    def test_unequal_costs_make_stacks_diverge(self):
        dataset = marker_dataset(0, n_images=40)
        config = TrainConfig(
            variant="classwise",
            max_alternations=6,
            stop_tol=0.0,
            svm=SvmConfig(costs=(0.03, 0.09)),
        )
        warm = build_params(build_neighborhood(dataset.grid, 1), config.depth)
        cw = train_classwise(dataset, config, warm=warm)
        d = float(np.linalg.norm(cw.params.stacks[0].tensors - cw.params.stacks[1].tensors))
        assert d > 0.0
        assert not np.array_equal(cw.params.stacks[0].tensors, cw.params.stacks[1].tensors)

    def test_warm_start_type_and_grid_validation(self):
        dataset = marker_dataset(0, n_images=8)
        config = TrainConfig(variant="classwise", max_alternations=1)
        good = build_params(build_neighborhood(dataset.grid, 1), config.depth)
        with pytest.raises(BadValue):
            train_classwise(dataset, config, warm=classwise_from_global(good, 2))
        mismatched = build_params(build_neighborhood(GridSpec(2, 2), 1), config.depth)
        with pytest.raises(BadValue):
            train_classwise(dataset, config, warm=mismatched)

    def test_dispatcher_runs_global_phase_then_refines(self):
        dataset = marker_dataset(0, n_images=16)
        state = train(dataset, TrainConfig(variant="classwise", max_alternations=3, stop_tol=0.0))
        assert isinstance(state.params, ClasswiseContext)
        assert state.params.K == 2
        assert state.alternations == 3
        assert state.model.K == 2


class TestStateScores:
    def test_global_scores_match_pooled_matvec(self):
        dataset = marker_dataset(0, n_images=16)
        state = alternate(dataset, TrainConfig(max_alternations=2, stop_tol=0.0))
        phi0 = initial_maps(dataset.subset("test"), state.features)
        scores = state_scores(state.params, state.model, phi0)
        pooled = pooled_maps(phi0, state.params)
        for k in range(state.model.K):
            np.testing.assert_array_equal(scores[:, k], pooled @ state.model.weights[k])

    def test_identical_class_stacks_reproduce_global_scores(self):
        dataset = marker_dataset(0, n_images=16)
        state = alternate(dataset, TrainConfig(max_alternations=2, stop_tol=0.0))
        phi0 = initial_maps(dataset.subset("test"), state.features)
        ctx = classwise_from_global(state.params, state.model.K)
        np.testing.assert_array_equal(
            state_scores(ctx, state.model, phi0),
            state_scores(state.params, state.model, phi0),
        )

    def test_class_count_mismatch_raises(self):
        params = build_params(build_neighborhood(GridSpec(2, 2), 1), 2)
        ctx = classwise_from_global(params, 2)
        model = SvmModel(weights=np.zeros((1, 4)), costs=np.array([0.03]))
        with pytest.raises(CheckpointMismatch):
            state_scores(ctx, model, [np.zeros((1, 4))])


class TestGradcheck:
    def test_layerwise_passes(self):
        report = gradcheck(random_dataset(0), TrainConfig(depth=2))
        assert report.variant == "layerwise"
        assert report.entries_checked == 48
        assert report.passed()
        assert report.max_rel_error <= 1e-5

    def test_stationary_passes(self):
        report = gradcheck(random_dataset(0), TrainConfig(variant="stationary", depth=2))
        assert report.entries_checked == 24
        assert report.passed()

    def test_classwise_passes(self):
        report = gradcheck(random_dataset(0), TrainConfig(variant="classwise", depth=2))
        assert report.entries_checked == 96
        assert report.passed()

    def test_zero_gamma_gives_zero_error(self):
        report = gradcheck(random_dataset(0), TrainConfig(depth=2, gamma=0.0))
        assert report.gamma == 0.0
        assert report.max_rel_error == 0.0

    def test_explicit_gamma_is_used(self):
        report = gradcheck(random_dataset(0), TrainConfig(depth=2, gamma=0.05))
        assert report.gamma == 0.05

    def test_preconditions(self):
        with pytest.raises(BadValue):
            gradcheck(random_dataset(0, width=4, height=3), TrainConfig())
        with pytest.raises(BadValue):
            gradcheck(random_dataset(0), TrainConfig(depth=4))
        with pytest.raises(BadValue):
            gradcheck(random_dataset(0, d0=7), TrainConfig(depth=2))
        empty = Dataset(grid=GridSpec(2, 2), d0=2, concept_names=("a",))
        with pytest.raises(BadValue):
            gradcheck(empty, TrainConfig(depth=2))


class TestCheckpoints:
    def test_round_trip_global(self, tmp_path):
        dataset = marker_dataset(0, n_images=16)
        state = alternate(dataset, TrainConfig(max_alternations=3, stop_tol=0.0))
        save_checkpoint(state, tmp_path / "ckpt")
        loaded = load_checkpoint(tmp_path / "ckpt")
        np.testing.assert_array_equal(loaded.params.tensors, state.params.tensors)
        assert loaded.params.gamma == state.params.gamma
        np.testing.assert_array_equal(loaded.model.weights, state.model.weights)
        np.testing.assert_array_equal(loaded.model.costs, state.model.costs)
        assert loaded.loss_history == state.loss_history
        assert loaded.re_history == state.re_history
        assert loaded.dp_history == state.dp_history
        assert loaded.dw_history == state.dw_history
        assert loaded.stopped_at == state.stopped_at
        assert loaded.features == state.features

    def test_round_trip_classwise(self, tmp_path):
        dataset = marker_dataset(0, n_images=16)
        state = train(dataset, TrainConfig(variant="classwise", max_alternations=2, stop_tol=0.0))
        save_checkpoint(state, tmp_path / "ckpt")
        loaded = load_checkpoint(tmp_path / "ckpt")
        assert isinstance(loaded.params, ClasswiseContext)
        for got, want in zip(loaded.params.stacks, state.params.stacks):
            np.testing.assert_array_equal(got.tensors, want.tensors)
        np.testing.assert_array_equal(loaded.model.weights, state.model.weights)

    def test_infinite_history_values_round_trip(self, tmp_path):
        dataset = marker_dataset(0, n_images=16)
        state = alternate(dataset, TrainConfig(max_alternations=1))
        save_checkpoint(state, tmp_path / "ckpt")
        loaded = load_checkpoint(tmp_path / "ckpt")
        assert loaded.dw_history == [math.inf]
        assert loaded.dp_history == [math.inf]

    def test_missing_file(self, tmp_path):
        dataset = marker_dataset(0, n_images=16)
        state = alternate(dataset, TrainConfig(max_alternations=1))
        save_checkpoint(state, tmp_path / "ckpt")
        (tmp_path / "ckpt" / "model.bin").unlink()
        with pytest.raises(MissingFile):
            load_checkpoint(tmp_path / "ckpt")

    def test_variant_disagreement(self, tmp_path):
        dataset = marker_dataset(0, n_images=16)
        state = alternate(dataset, TrainConfig(max_alternations=1))
        save_checkpoint(state, tmp_path / "ckpt")
        meta = (tmp_path / "ckpt" / "meta.txt").read_text()
        (tmp_path / "ckpt" / "meta.txt").write_text(
            meta.replace("variant layerwise", "variant stationary")
        )
        with pytest.raises(CheckpointMismatch):
            load_checkpoint(tmp_path / "ckpt")

    def test_class_count_disagreement(self, tmp_path):
        params = build_params(build_neighborhood(GridSpec(2, 2), 1), 2)
        ctx = classwise_from_global(params, 2)
        model = SvmModel(weights=np.zeros((2, 8)), costs=np.full(2, 0.03))
        state = TrainState(params=ctx, model=model, features=FeatureSpec())
        save_checkpoint(state, tmp_path / "ckpt")
        from ctxkernel import save_model

        save_model(SvmModel(weights=np.zeros((1, 8)), costs=np.array([0.03])),
                   tmp_path / "ckpt" / "model.bin")
        with pytest.raises(CheckpointMismatch):
            load_checkpoint(tmp_path / "ckpt")
