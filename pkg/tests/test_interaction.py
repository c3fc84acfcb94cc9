"""
测试滤波器构建、逐时间步交互循环与 InteractionEngine
"""

import numpy as np
import pytest

from core.basis import BasisFamily, select_basis
from core.data_model import Ensemble, GaussianBelief, Observation
from core.errors import DataError, EnsembleSizeError
from core.filter_builder import FilterBuilder
from core.interaction_engine import InteractionEngine, run_interaction
from core.model_config import RunConfig
from core.priors import DemonstrationCorpus, estimate_measurement_noise
from core.simulator import (
    ScenarioSpec,
    generate_corpus,
    generate_demo,
    generate_stream,
    observations_from_demo,
    observed_ticks,
)
from core.state_manager import FilterKind, ParticleState


def _observation(model, tick, value=0.0):
    mask = model.layout.observed_mask
    return Observation(np.where(mask, value, np.nan), mask, tick)


class TestFilterBuilder:
    @pytest.mark.parametrize("kind, state_type", [
        ("bip", GaussianBelief),
        ("ebip", Ensemble),
        ("pf", ParticleState),
    ])
    def test_initial_state_type(self, toy_model, toy_training, kind, state_type):
        corpus, noise = toy_training
        setup = FilterBuilder(RunConfig(filter_kind=kind)).build(corpus, toy_model, noise, np.random.default_rng(0))
        assert isinstance(setup.initial_state, state_type)
        assert setup.kind == FilterKind.parse(kind)

    def test_ebip_minus_uses_gmm_and_falls_back(self, toy_model, toy_training):
        corpus, noise = toy_training
        setup = FilterBuilder(RunConfig(filter_kind="ebip_minus")).build(
            corpus, toy_model, noise, np.random.default_rng(0)
        )
        assert setup.prior_mode == "gmm"
        assert setup.ensemble_size == 80
        assert setup.fallback_used
        assert setup.initial_state.size == 80

    def test_direct_ensemble_too_large(self, toy_model, toy_training):
        corpus, noise = toy_training
        with pytest.raises(EnsembleSizeError):
            FilterBuilder(RunConfig(ensemble_size=corpus.size + 1)).build(
                corpus, toy_model, noise, np.random.default_rng(0)
            )

    def test_noise_shape_checked(self, toy_model, toy_training):
        corpus, _ = toy_training
        with pytest.raises(DataError):
            FilterBuilder(RunConfig()).build(corpus, toy_model, np.ones(3), np.random.default_rng(0))

    def test_velocity_spread_floors_gaussian_prior(self, toy_model, toy_training):
        corpus, noise = toy_training
        velocity = np.mean(corpus.reciprocal_lengths)
        setup = FilterBuilder(RunConfig(filter_kind="bip", velocity_spread=1.0)).build(
            corpus, toy_model, noise, np.random.default_rng(0)
        )
        assert setup.initial_state.covariance[1, 1] == pytest.approx(velocity ** 2)
        assert setup.initial_state.phase_velocity == pytest.approx(velocity)

    def test_velocity_spread_widens_ensemble(self, toy_model, toy_training):
        corpus, noise = toy_training
        narrow = FilterBuilder(RunConfig(velocity_spread=0.0)).build(corpus, toy_model, noise, np.random.default_rng(0))
        wide = FilterBuilder(RunConfig(velocity_spread=0.45)).build(corpus, toy_model, noise, np.random.default_rng(0))

        np.testing.assert_allclose(np.sort(narrow.initial_state.members[:, 1]), np.sort(corpus.reciprocal_lengths))
        velocities = wide.initial_state.members[:, 1]
        assert velocities.mean() == pytest.approx(np.mean(corpus.reciprocal_lengths))
        assert np.std(velocities, ddof=1) > np.std(corpus.reciprocal_lengths, ddof=1)
        assert np.all(velocities > 0.0)
        np.testing.assert_array_equal(wide.initial_state.weights, narrow.initial_state.weights)


class TestRunInteraction:
    @pytest.mark.parametrize("kind", ["bip", "ebip", "pf"])
    def test_empty_stream_uses_prior_velocity(self, toy_model, toy_training, kind):
        corpus, noise = toy_training
        outputs = list(run_interaction(corpus, toy_model, noise, [], RunConfig(filter_kind=kind)))
        expected = int(round(1.0 / np.mean(corpus.reciprocal_lengths)))
        assert len(outputs) == expected
        assert [o.tick for o in outputs] == list(range(expected))
        assert not any(o.measured for o in outputs)

    def test_horizon_and_gaps(self, toy_model, toy_training):
        corpus, noise = toy_training
        stream = [_observation(toy_model, 0), _observation(toy_model, 3)]
        outputs = list(run_interaction(corpus, toy_model, noise, stream, RunConfig(), horizon=6))
        assert [o.tick for o in outputs] == [0, 1, 2, 3, 4, 5]
        assert [o.measured for o in outputs] == [True, False, False, True, False, False]

    def test_horizon_never_truncates_observations(self, toy_model, toy_training):
        corpus, noise = toy_training
        stream = [_observation(toy_model, t) for t in range(8)]
        outputs = list(run_interaction(corpus, toy_model, noise, stream, RunConfig(), horizon=3))
        assert len(outputs) == 8

    def test_ticks_must_increase(self, toy_model, toy_training):
        corpus, noise = toy_training
        stream = [_observation(toy_model, 0), _observation(toy_model, 2), _observation(toy_model, 2)]
        with pytest.raises(DataError) as info:
            list(run_interaction(corpus, toy_model, noise, stream, RunConfig()))
        assert info.value.tick == 2

    def test_dimension_mismatch(self, toy_model, toy_training):
        corpus, noise = toy_training
        bad = Observation([0.0, 0.0], [True, True], 0)
        with pytest.raises(DataError):
            list(run_interaction(corpus, toy_model, noise, [bad], RunConfig()))

    @pytest.mark.parametrize("kind", ["bip", "ebip", "ebip_minus", "pf"])
    def test_deterministic(self, toy_model, toy_training, scenario, kind):
        corpus, noise = toy_training
        stream, _ = generate_stream(scenario, seed=99, observed_fraction=0.5)
        config = RunConfig(filter_kind=kind, seed=5, process_noise=1e-7)
        first = [o.to_record().to_dict() for o in run_interaction(corpus, toy_model, noise, stream, config)]
        second = [o.to_record().to_dict() for o in run_interaction(corpus, toy_model, noise, stream, config)]
        assert first == second

    def test_phase_advances_without_observations(self, toy_model, toy_training):
        corpus, noise = toy_training
        config = RunConfig(filter_kind="bip", process_noise=0.0)
        outputs = list(run_interaction(corpus, toy_model, noise, [], config, horizon=10))
        velocity = np.mean(corpus.reciprocal_lengths)
        np.testing.assert_allclose([o.belief.phase for o in outputs], np.arange(10) * velocity, atol=1e-12)


class TestInteractionEngine:
    def test_run_summary(self, toy_model, toy_training, scenario):
        corpus, noise = toy_training
        stream, truth = generate_stream(scenario, seed=3, observed_fraction=0.25)
        engine = InteractionEngine(corpus, toy_model, noise, RunConfig(seed=1))
        steps = []
        engine.set_callbacks(step_callback=steps.append)
        result = engine.run(stream, horizon=truth.duration)

        assert result["success"]
        assert len(result["outputs"]) == truth.duration
        assert result["session"]["measured_ticks"] == sum(o.has_measurement for o in stream)
        assert result["session"]["status"] == "completed"
        assert steps

    def test_matches_generator(self, toy_model, toy_training, scenario):
        corpus, noise = toy_training
        stream, _ = generate_stream(scenario, seed=3, observed_fraction=0.3)
        config = RunConfig(seed=4)
        engine_records = [o.to_record().to_dict() for o in InteractionEngine(corpus, toy_model, noise, config).run(stream)["outputs"]]
        loop_records = [o.to_record().to_dict() for o in run_interaction(corpus, toy_model, noise, stream, config)]
        assert engine_records == loop_records

    def test_errors_reported(self, toy_model, toy_training):
        corpus, noise = toy_training
        errors = []
        engine = InteractionEngine(corpus, toy_model, noise, RunConfig())
        engine.set_callbacks(error_callback=errors.append)
        stream = [_observation(toy_model, 1), _observation(toy_model, 0)]
        with pytest.raises(DataError):
            engine.run(stream)
        assert errors
        assert engine.state_manager.get_session_summary()["status"] == "failed"


@pytest.mark.slow
def test_ebip_tracks_phase_on_held_out_demo():
    scenario = ScenarioSpec()
    demos = generate_corpus(scenario, 30, seed=21)
    model = select_basis(demos, [BasisFamily.gaussian(8)])
    corpus = DemonstrationCorpus.from_demonstrations(demos, model)
    noise = estimate_measurement_noise(demos, model, corpus.weights)

    passed = 0
    for seed in range(10):
        stream, truth = generate_stream(scenario, seed=1000 + seed, observed_fraction=0.5)
        outputs = list(run_interaction(corpus, model, noise, stream, RunConfig(seed=seed)))
        last = outputs[-1]
        if abs(last.belief.phase - last.tick / truth.duration) < 0.1:
            passed += 1
    assert passed >= 8


@pytest.mark.slow
def test_more_observations_reduce_robot_error():
    scenario = ScenarioSpec()
    demos = generate_corpus(scenario, 30, seed=5)
    model = select_basis(demos, [BasisFamily.gaussian(8)])
    corpus = DemonstrationCorpus.from_demonstrations(demos, model)
    noise = estimate_measurement_noise(demos, model, corpus.weights)
    controlled = model.layout.controlled_mask

    errors = {0: [], 1: []}
    for seed in range(10):
        _, truth = generate_stream(scenario, seed=2000 + seed)
        for index, count in enumerate((0, int(0.8 * truth.duration))):
            stream = observations_from_demo(truth, scenario, count)
            outputs = list(run_interaction(corpus, model, noise, stream, RunConfig(seed=seed), horizon=truth.duration))
            error = outputs[-1].y_hat[controlled] - truth.samples[controlled, -1]
            errors[index].append(np.mean(error ** 2))
    assert np.mean(errors[1]) < np.mean(errors[0])


@pytest.fixture(scope="module")
def replay_training():
    scenario = ScenarioSpec()
    demos = generate_corpus(scenario, 30, seed=21)
    model = select_basis(demos, [BasisFamily.gaussian(8)])
    corpus = DemonstrationCorpus.from_demonstrations(demos, model)
    noise = estimate_measurement_noise(demos, model, corpus.weights)
    return scenario, demos, model, corpus, noise


@pytest.mark.slow
@pytest.mark.parametrize("time_scale", [0.5, 1.0, 2.0])
def test_phase_and_speed_on_rescaled_demos(replay_training, time_scale):
    """50 个留出示教：观测 50% 后 φ̇ 误差 < 10%，25% 之后 φ 与 t/T 相差 < 0.05"""
    scenario, _, model, corpus, noise = replay_training

    speed_passed = phase_passed = 0
    for seed in range(50):
        demo = generate_demo(scenario, 3000 + seed, time_scale)
        quarter = observed_ticks(demo.duration, 0.25)
        stream = observations_from_demo(demo, scenario, observed_ticks(demo.duration, 0.5))
        outputs = list(run_interaction(corpus, model, noise, stream, RunConfig(seed=seed)))

        truth = 1.0 / demo.duration
        if abs(outputs[-1].belief.phase_velocity - truth) < 0.1 * truth:
            speed_passed += 1
        if all(abs(o.belief.phase - o.tick * truth) < 0.05 for o in outputs[quarter:]):
            phase_passed += 1
    assert speed_passed >= 40
    assert phase_passed >= 40


@pytest.mark.slow
def test_phase_monotone_on_clean_replay(replay_training):
    _, demos, model, corpus, noise = replay_training
    for index, demo in enumerate(demos[:3]):
        stream = observations_from_demo(demo, None, demo.duration)
        outputs = list(run_interaction(corpus, model, noise, stream, RunConfig(seed=index)))
        phases = np.array([o.belief.phase for o in outputs])

        assert np.all(np.diff(phases) >= -1e-3)
        quarter = observed_ticks(demo.duration, 0.25)
        np.testing.assert_allclose(phases[quarter:], np.arange(quarter, demo.duration) / demo.duration, atol=0.05)
