"""Self-training orchestration tests on a tiny deterministic corpus."""

import numpy as np
import pytest

from clickseg.annotate import ABSENT, PROPAGATED, SEED, PseudoLabels
from clickseg.config import SynthScalars, TrainConfig, spawn_seeds
from clickseg.errors import ValidationError
from clickseg.selftrain import (
    SelfTrainState,
    annotate_bundles,
    prepare_bundle,
    report_csv,
    run,
    run_fully_supervised,
    run_iteration,
    update_pseudo_labels,
)
from clickseg.supervoxel import PartitionParams
from clickseg.synth import SynthSpec, generate_scene


def tiny_cfg(**kw):
    defaults = dict(
        epochs=4,
        batch_size=64,
        hidden_width=16,
        embed_dim=8,
        relation_steps=4,
        samples_per_category=4,
        self_train_iterations=2,
        mean_field_iterations=2,
        k_neighbors=6,
        partition=PartitionParams(k_neighbors=6, min_size=4, max_size=60),
    )
    defaults.update(kw)
    return TrainConfig(**defaults)


def tiny_scenes(count, base_seed=60):
    scalars = SynthScalars(points_scale=0.12)
    return [generate_scene(SynthSpec(seed=base_seed + i, scalars=scalars)) for i in range(count)]


def seeds_fixture():
    return PseudoLabels(
        labels=np.array([2, -1, -1, 0], np.int32),
        confidence=np.array([1.0, 0.0, 0.0, 1.0]),
        provenance=np.array([SEED, ABSENT, ABSENT, SEED], np.uint8),
    )


class TestUpdatePseudoLabels:
    def test_confident_prediction_passes_gate(self):
        seeds = seeds_fixture()
        q = np.array([[0.1, 0.1, 0.8], [0.95, 0.05, 0.0], [0.2, 0.5, 0.3], [0.9, 0.1, 0.0]])
        out = update_pseudo_labels(q, 0.9, seeds)
        assert out.labels[1] == 0
        assert out.provenance[1] == PROPAGATED
        assert out.confidence[1] == pytest.approx(0.95)

    def test_below_gate_is_absent(self):
        seeds = seeds_fixture()
        q = np.array([[0.1, 0.1, 0.8], [0.85, 0.15, 0.0], [0.2, 0.5, 0.3], [0.9, 0.1, 0.0]])
        out = update_pseudo_labels(q, 0.9, seeds)
        assert out.labels[1] == -1
        assert out.provenance[1] == ABSENT

    def test_seed_survives_contradicting_marginal(self):
        seeds = seeds_fixture()
        q = np.array([[0.99, 0.01, 0.0]] * 4)
        out = update_pseudo_labels(q, 0.9, seeds)
        assert out.labels[0] == 2
        assert out.provenance[0] == SEED
        assert out.confidence[0] == 1.0

    def test_impossible_threshold_keeps_only_seeds(self):
        seeds = seeds_fixture()
        q = np.full((4, 3), 1 / 3)
        q[:, 0] = 1.0
        q[:, 1:] = 0.0
        out = update_pseudo_labels(q, 1.0 + 1e-9, seeds)
        np.testing.assert_array_equal(out.labels, seeds.labels)
        np.testing.assert_array_equal(out.provenance, seeds.provenance)

    def test_stale_propagated_entries_not_carried(self):
        # the input "seeds" carry one PROPAGATED entry; rebuilding must drop it
        prev = PseudoLabels(
            labels=np.array([2, 1, -1], np.int32),
            confidence=np.array([1.0, 0.92, 0.0]),
            provenance=np.array([SEED, PROPAGATED, ABSENT], np.uint8),
        )
        q = np.full((3, 3), 1 / 3)
        out = update_pseudo_labels(q, 0.9, prev)
        assert out.labels.tolist() == [2, -1, -1]


@pytest.fixture(scope="module")
def corpus():
    cfg = tiny_cfg()
    bundles = [prepare_bundle(s, cfg) for s in tiny_scenes(3)]
    bundles, _ = annotate_bundles(bundles, cfg, seed=5)
    return cfg, bundles


class TestRunIteration:

    def test_seed_immutability_and_gate_soundness(self, corpus):
        cfg, bundles = corpus
        state = SelfTrainState(iteration=0, labels=[b.seeds for b in bundles])
        for t, child in enumerate(spawn_seeds(77, 3)):
            state = run_iteration(state, bundles, 6, cfg, child)
            for labels, bundle in zip(state.labels, bundles):
                seed_idx = bundle.seeds.provenance == SEED
                np.testing.assert_array_equal(
                    labels.labels[seed_idx], bundle.seeds.labels[seed_idx]
                )
                np.testing.assert_array_equal(labels.provenance[seed_idx], SEED)
                prop = labels.provenance == PROPAGATED
                assert np.all(labels.confidence[prop] >= cfg.confidence_threshold)

    def test_iteration_counter_and_history(self, corpus):
        cfg, bundles = corpus
        state = SelfTrainState(iteration=0, labels=[b.seeds for b in bundles])
        state = run_iteration(state, bundles, 6, cfg, 123)
        assert state.iteration == 1
        assert len(state.history) == 1
        assert state.history[0].iteration == 1
        assert 0 <= state.history[0].coverage <= 1


class TestRun:
    def test_reproducible_reports(self):
        scenes = tiny_scenes(4)
        cfg = tiny_cfg()
        a = run(cfg, scenes[:3], scenes[3:], seed=9)
        b = run(cfg, scenes[:3], scenes[3:], seed=9)
        assert report_csv(a.history) == report_csv(b.history)
        np.testing.assert_array_equal(a.final_labels[0].labels, b.final_labels[0].labels)

    def test_single_iteration_run(self):
        scenes = tiny_scenes(3)
        cfg = tiny_cfg(self_train_iterations=1)
        result = run(cfg, scenes[:2], scenes[2:], seed=4)
        assert len(result.history) == 1
        assert result.history[0].iteration == 1
        assert result.history[0].miou is not None

    def test_zero_iterations_is_seed_trained_baseline(self):
        scenes = tiny_scenes(3)
        cfg = tiny_cfg(self_train_iterations=0)
        result = run(cfg, scenes[:2], scenes[2:], seed=4)
        assert len(result.history) == 1
        row = result.history[0]
        assert row.iteration == 0
        # coverage equals the seed coverage: nothing was propagated
        seed_cov = sum(l.labeled_mask.sum() for l in result.final_labels) / sum(
            len(l) for l in result.final_labels
        )
        assert row.coverage == pytest.approx(seed_cov)
        assert all((l.provenance != PROPAGATED).all() for l in result.final_labels)

    def test_no_training_scenes_rejected(self):
        with pytest.raises(ValidationError):
            run(tiny_cfg(), [], [], seed=0)

    def test_coverage_logged_every_iteration(self):
        scenes = tiny_scenes(3)
        cfg = tiny_cfg(self_train_iterations=3)
        result = run(cfg, scenes[:2], scenes[2:], seed=11)
        assert [r.iteration for r in result.history] == [1, 2, 3]
        assert all(r.coverage >= 0 for r in result.history)

    def test_early_stop_on_coverage_plateau(self):
        scenes = tiny_scenes(3)
        cfg = tiny_cfg(self_train_iterations=5, early_stop_min_delta=1.0)
        result = run(cfg, scenes[:2], scenes[2:], seed=11)
        # delta of 100% coverage can never be met, so it stops after round 2
        assert len(result.history) == 2


class TestFullSupervision:
    def test_run_fully_supervised(self):
        scenes = tiny_scenes(3)
        cfg = tiny_cfg()
        result = run_fully_supervised(cfg, scenes[:2], scenes[2:], seed=3)
        assert result.history[0].coverage == 1.0
        assert result.history[0].miou is not None
        assert result.relation is None


class TestReportCsv:
    def test_format(self):
        from clickseg.selftrain import IterationMetrics

        rows = [
            IterationMetrics(iteration=1, coverage=0.5, loss_unary=0.25, loss_relation=0.125, miou=0.75),
            IterationMetrics(iteration=2, coverage=0.75, loss_unary=0.2),
        ]
        text = report_csv(rows)
        lines = text.splitlines()
        assert lines[0] == "iteration,coverage,train_loss_unary,train_loss_relation,miou"
        assert lines[1] == "1,0.500000,0.250000,0.125000,0.750000"
        assert lines[2] == "2,0.750000,0.200000,,"
        assert text.endswith("\n")
