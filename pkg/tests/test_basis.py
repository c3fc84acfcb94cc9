"""
测试基函数分解、拟合、BIC 选择与观测雅可比
"""

import numpy as np
import pytest
from scipy.integrate import trapezoid

from core.basis import (
    BasisFamily,
    BasisKind,
    BasisModel,
    basis_derivative,
    compute_phase,
    default_candidates,
    evaluate_basis,
    fit_demonstration,
    fit_weights,
    observation_jacobian,
    observe,
    select_basis,
)
from core.data_model import Demonstration
from core.errors import ConfigurationError, DataError, InvalidDurationError, SingularFitError


def test_compute_phase_bounds():
    assert compute_phase(0, 120) == 0.0
    assert compute_phase(120, 120) == 1.0
    assert compute_phase(30, 120) == pytest.approx(0.25)


def test_compute_phase_errors():
    with pytest.raises(InvalidDurationError):
        compute_phase(0, 0)
    with pytest.raises(DataError):
        compute_phase(121, 120)


def test_single_gaussian_basis():
    family = BasisFamily.gaussian(1)
    assert family.centers == (0.5,)
    assert family.width == 1.0
    assert family.evaluate(0.5)[0, 0] == pytest.approx(1.0)


def test_gaussian_default_width():
    family = BasisFamily.gaussian(5)
    assert family.width == pytest.approx(0.25)
    np.testing.assert_allclose(family.centers, [0.0, 0.25, 0.5, 0.75, 1.0])


def test_family_validation():
    with pytest.raises(ConfigurationError):
        BasisFamily(BasisKind.GAUSSIAN_RBF, 2, (0.5, 0.2), 0.1)
    with pytest.raises(ConfigurationError):
        BasisFamily.polynomial(-1)


def test_shorthand_from_dict():
    family = BasisFamily.from_dict({"kind": "gaussian_rbf", "count": 4})
    assert family == BasisFamily.gaussian(4)
    assert BasisFamily.from_dict({"kind": "polynomial", "degree": 2}).count == 3


def test_fit_recovers_polynomial():
    phases = np.arange(50) / 50.0
    values = 1.0 + 2.0 * phases - 3.0 * phases ** 2
    weights = fit_weights(values, phases, BasisFamily.polynomial(2), ridge=0.0)
    np.testing.assert_allclose(weights, [1.0, 2.0, -3.0], atol=1e-8)


def test_rank_deficient_fit_without_ridge():
    phases = np.array([0.0, 0.5, 1.0])
    with pytest.raises(SingularFitError):
        fit_weights(np.ones(3), phases, BasisFamily.polynomial(5), ridge=0.0)
    # 加入岭参数后可以求解
    assert fit_weights(np.ones(3), phases, BasisFamily.polynomial(5), ridge=1e-6).shape == (6,)


@pytest.mark.parametrize("family", [
    BasisFamily.gaussian(7),
    BasisFamily.polynomial(4),
    BasisFamily.sigmoid(6),
])
def test_jacobian_matches_finite_differences(family, pair_layout):
    model = BasisModel(pair_layout, (family, family))
    rng = np.random.default_rng(5)
    step = 1e-6
    for _ in range(50):
        state = np.concatenate(([rng.uniform(0.05, 0.95), rng.uniform(0.005, 0.02)],
                                rng.standard_normal(model.weight_dimension)))
        jacobian = observation_jacobian(state, model)

        numeric = np.empty_like(jacobian)
        for j in range(state.shape[0]):
            forward, backward = state.copy(), state.copy()
            forward[j] += step
            backward[j] -= step
            numeric[:, j] = (observe(forward, model) - observe(backward, model)) / (2 * step)

        scale = max(1.0, float(np.max(np.abs(numeric))))
        np.testing.assert_allclose(jacobian, numeric, atol=1e-4 * scale)
        assert np.all(jacobian[:, 1] == 0.0)


def test_model_layout_and_blocks(pair_layout):
    model = BasisModel(pair_layout, (BasisFamily.gaussian(3), BasisFamily.polynomial(1)))
    assert model.weight_dimension == 5
    assert model.offsets == [0, 3]
    assert model.block(1) == slice(3, 5)
    assert model.basis_matrix(0.3).shape == (2, 5)
    assert BasisModel.from_dict(model.to_dict()) == model


def test_model_requires_family_per_dof(pair_layout):
    with pytest.raises(ConfigurationError):
        BasisModel(pair_layout, (BasisFamily.gaussian(3),))


def test_observe_members_uses_each_phase(pair_layout):
    model = BasisModel(pair_layout, (BasisFamily.polynomial(1), BasisFamily.polynomial(1)))
    phases = np.array([0.0, 0.5])
    weights = np.array([[1.0, 2.0, 0.0, 1.0], [1.0, 2.0, 0.0, 1.0]])
    np.testing.assert_allclose(model.observe_members(phases, weights), [[1.0, 0.0], [2.0, 0.5]])


def _cubic_demos(layout, count=4):
    rng = np.random.default_rng(0)
    demos = []
    for _ in range(count):
        duration = int(rng.integers(60, 90))
        phi = np.arange(duration) / duration
        a, b = rng.uniform(0.5, 1.5, 2)
        demos.append(Demonstration(layout, np.vstack((a * phi ** 3 - phi, b * phi ** 2 + 0.3))))
    return demos


def test_bic_prefers_exact_low_order(pair_layout):
    demos = _cubic_demos(pair_layout)
    model = select_basis(demos, [BasisFamily.gaussian(8), BasisFamily.polynomial(3)])
    assert all(f == BasisFamily.polynomial(3) for f in model.families)


def test_single_candidate_selected_everywhere(pair_layout):
    demos = _cubic_demos(pair_layout)
    model = select_basis(demos, [BasisFamily.sigmoid(5)])
    assert all(f == BasisFamily.sigmoid(5) for f in model.families)


def test_default_candidates_cover_three_families():
    kinds = {f.kind for f in default_candidates()}
    assert kinds == set(BasisKind)


def test_rbf_values_at_phase_zero():
    family = BasisFamily.gaussian(3, width=0.25)
    np.testing.assert_allclose(evaluate_basis(family, 0.0), [1.0, np.exp(-2.0), np.exp(-8.0)], rtol=1e-12)


def test_rbf_derivative_vanishes_at_center():
    family = BasisFamily.gaussian(5)
    for index, center in enumerate(family.centers):
        assert basis_derivative(family, center)[index] == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("family", [
    BasisFamily.gaussian(7),
    BasisFamily.polynomial(4),
    BasisFamily.sigmoid(6),
])
def test_derivative_integrates_back(family):
    phases = np.linspace(0.0, 1.0, 10_000)
    integral = trapezoid(family.derivative(phases), phases, axis=0)
    np.testing.assert_allclose(integral, evaluate_basis(family, 1.0) - evaluate_basis(family, 0.0), atol=1e-4)


def test_observe_is_linear_in_weights(pair_layout):
    model = BasisModel(pair_layout, (BasisFamily.gaussian(5), BasisFamily.sigmoid(4)))
    rng = np.random.default_rng(8)
    w1, w2 = rng.standard_normal((2, model.weight_dimension))
    alpha, beta = 0.7, -2.5
    for phase in (0.0, 0.35, 1.05):
        combined = observe(np.concatenate(([phase, 0.01], alpha * w1 + beta * w2)), model)
        expected = (alpha * observe(np.concatenate(([phase, 0.01], w1)), model)
                    + beta * observe(np.concatenate(([phase, 0.01], w2)), model))
        np.testing.assert_allclose(combined, expected, atol=1e-12)


def test_fit_invariant_to_uniform_time_stretch(pair_layout):
    model = BasisModel(pair_layout, (BasisFamily.gaussian(6), BasisFamily.polynomial(3)))
    true_weights = np.random.default_rng(4).standard_normal(model.weight_dimension)

    fitted = []
    for duration in (60, 120):
        phases = np.arange(duration) / duration
        demo = Demonstration(pair_layout, model.reconstruct(phases, true_weights))
        fitted.append(fit_demonstration(demo, model, ridge=0.0))
    np.testing.assert_allclose(fitted[0], fitted[1], atol=1e-6)
    np.testing.assert_allclose(fitted[0], true_weights, atol=1e-6)


def test_equal_residuals_prefer_fewer_weights(pair_layout):
    # 两个候选都能精确拟合二次曲线，RSS 落在同一个下限上
    rng = np.random.default_rng(1)
    demos = []
    for duration in (70, 85, 90):
        phi = np.arange(duration) / duration
        a, b = rng.uniform(0.5, 1.5, 2)
        demos.append(Demonstration(pair_layout, 100.0 * np.vstack((a * phi ** 2 - phi, b * phi ** 2 + 0.3))))
    model = select_basis(demos, [BasisFamily.polynomial(7), BasisFamily.polynomial(2)], ridge=0.0)
    assert all(f == BasisFamily.polynomial(2) for f in model.families)
