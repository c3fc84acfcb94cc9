"""
递归贝叶斯滤波
在相位增广状态上的 EKF (BIP)、集合卡尔曼滤波 (eBIP / eBIP⁻) 与粒子滤波，以及轨迹预测
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
from filterpy.common import Q_discrete_white_noise
from scipy.special import logsumexp

from .basis import BasisModel, observation_jacobian, observe
from .data_model import (
    PHASE_DIMS,
    Ensemble,
    GaussianBelief,
    Observation,
    ensemble_moments,
    symmetrize,
    weighted_moments,
)
from .errors import (
    ConfigurationError,
    CovarianceUndefinedError,
    DataError,
    SingularUpdateError,
    WeightCollapseError,
)
from .priors import RandomSource, as_generator
from .state_manager import FilterState, ParticleState

# 新息协方差分解失败时逐级增加的对角抖动
JITTER_LEVELS = (0.0, 1e-12, 1e-10, 1e-8, 1e-6)

# 粒子似然使用的测量方差下限
PF_VARIANCE_FLOOR = 1e-9

# 预测相位的截断范围
PHASE_LIMIT = 1.1


@dataclass(frozen=True)
class TransitionModel:
    """
    恒速相位模型

    φ ← φ + Δt·φ̇，其余状态不变；过程噪声只作用在 (φ, φ̇) 块，为离散白噪声形式。
    """
    time_delta: float = 1.0
    process_noise: float = 1e-8

    def __post_init__(self):
        if not self.time_delta > 0:
            raise ConfigurationError(f"Δt 必须 > 0: {self.time_delta}")
        if self.process_noise < 0:
            raise ConfigurationError(f"过程噪声强度必须 >= 0: {self.process_noise}")

    def matrix(self, dimension: int) -> np.ndarray:
        """G"""
        transition = np.eye(dimension)
        transition[0, 1] = self.time_delta
        return transition

    def phase_noise(self) -> np.ndarray:
        """Q 的 2×2 相位块"""
        if self.process_noise == 0.0:
            return np.zeros((PHASE_DIMS, PHASE_DIMS))
        return Q_discrete_white_noise(dim=PHASE_DIMS, dt=self.time_delta, var=self.process_noise)

    def noise(self, dimension: int) -> np.ndarray:
        """Q"""
        covariance = np.zeros((dimension, dimension))
        covariance[:PHASE_DIMS, :PHASE_DIMS] = self.phase_noise()
        return covariance


def noise_diagonal(noise: np.ndarray) -> np.ndarray:
    """R 可以是 D×D 对角矩阵或长度为 D 的向量"""
    noise = np.asarray(noise, dtype=float)
    if noise.ndim == 2:
        noise = np.diag(noise)
    if np.any(noise < 0):
        raise DataError("测量噪声方差不能为负")
    return noise


def _solve_spd(matrix: np.ndarray, rhs: np.ndarray, tick: Optional[int] = None) -> np.ndarray:
    """对称正定求解；分解失败时逐级加对角抖动，仍失败则抛出 SingularUpdateError"""
    scale = max(1.0, float(np.mean(np.abs(np.diag(matrix)))))
    identity = np.eye(matrix.shape[0])
    for jitter in JITTER_LEVELS:
        try:
            factor = scipy.linalg.cho_factor(matrix + jitter * scale * identity, check_finite=True)
            return scipy.linalg.cho_solve(factor, rhs)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
            continue
    with np.errstate(all="ignore"):
        condition = float(np.linalg.cond(matrix)) if np.isfinite(matrix).all() else float("inf")
    raise SingularUpdateError("新息协方差 S 无法分解", condition, tick)


# EKF (BIP)

def ekf_predict(belief: GaussianBelief, transition: TransitionModel) -> GaussianBelief:
    """μ ← Gμ；Σ ← GΣGᵀ + Q"""
    dim = belief.dimension
    g = transition.matrix(dim)
    covariance = g @ belief.covariance @ g.T + transition.noise(dim)
    return GaussianBelief(g @ belief.mean, symmetrize(covariance))


def ekf_update(
    belief: GaussianBelief,
    observation: Observation,
    model: BasisModel,
    noise: np.ndarray,
) -> GaussianBelief:
    """
    EKF 更新，H 在预测均值处求值

    只使用 mask 为 True 的维度；mask 全为 False 时原样返回。
    """
    mask = observation.mask
    if not mask.any():
        return belief

    r = noise_diagonal(noise)[mask]
    jacobian = observation_jacobian(belief.mean, model)[mask]
    innovation = observation.values[mask] - observe(belief.mean, model)[mask]

    cross = jacobian @ belief.covariance
    innovation_cov = symmetrize(cross @ jacobian.T) + np.diag(r)
    gain = _solve_spd(innovation_cov, cross, observation.tick).T

    mean = belief.mean + gain @ innovation
    covariance = belief.covariance - gain @ cross
    return GaussianBelief(mean, symmetrize(covariance))


# 集合卡尔曼滤波 (eBIP)

def enkf_predict(ensemble: Ensemble, transition: TransitionModel, seed: RandomSource = None) -> Ensemble:
    """每个成员 x ← Gx + η，η ∼ N(0, Q)；Q = 0 时不消耗随机数"""
    members = np.array(ensemble.members)
    members[:, 0] += transition.time_delta * members[:, 1]
    if transition.process_noise > 0.0:
        rng = as_generator(seed)
        members[:, :PHASE_DIMS] += rng.multivariate_normal(
            np.zeros(PHASE_DIMS), transition.phase_noise(), size=ensemble.size, method="eigh"
        )
    return Ensemble(members)


def enkf_update(
    ensemble: Ensemble,
    observation: Observation,
    model: BasisModel,
    noise: np.ndarray,
    seed: RandomSource = None,
) -> Ensemble:
    """
    扰动观测的集合卡尔曼更新

    h 直接作用在每个成员上，不做线性化：
    S = (HA)(HA)ᵀ/(E-1) + R，K = A(HA)ᵀ S⁻¹/(E-1)，X ← X + K(ỹ − HX)，ỹ = y + ε，ε ∼ N(0, R)。
    """
    size = ensemble.size
    if size < 2:
        raise CovarianceUndefinedError(f"集合卡尔曼更新需要 E >= 2，当前 {size}", observation.tick)
    mask = observation.mask
    if not mask.any():
        return ensemble

    rng = as_generator(seed)
    r = noise_diagonal(noise)[mask]
    members = ensemble.members
    predicted = model.observe_members(ensemble.phases, ensemble.weights)[:, mask]

    deviation = members - members.mean(axis=0)
    projected = predicted - predicted.mean(axis=0)
    innovation_cov = symmetrize(projected.T @ projected) / (size - 1.0) + np.diag(r)

    perturbed = observation.values[mask][None, :] + rng.standard_normal(predicted.shape) * np.sqrt(r)
    innovations = perturbed - predicted

    # (HA) S⁻¹ (ỹ − HX)ᵀ 为 E×E，整体代价 O(E²n)
    weights = projected @ _solve_spd(innovation_cov, innovations.T, observation.tick)
    updated = members + weights.T @ deviation / (size - 1.0)
    return Ensemble(updated)


def inflate_ensemble(ensemble: Ensemble, factor: float) -> Ensemble:
    """乘性协方差膨胀：偏差按 √factor 放大"""
    if factor <= 0:
        raise ConfigurationError(f"膨胀系数必须 > 0: {factor}")
    if factor == 1.0:
        return ensemble
    mean = ensemble.mean()
    return Ensemble(mean + np.sqrt(factor) * (ensemble.members - mean))


# 粒子滤波

def effective_sample_size(weights: np.ndarray) -> float:
    """ESS = 1/Σw²"""
    weights = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(weights ** 2))


def systematic_resample(weights: np.ndarray, seed: RandomSource = None) -> np.ndarray:
    """系统重采样，返回被选中成员的下标"""
    rng = as_generator(seed)
    weights = np.asarray(weights, dtype=float)
    count = weights.shape[0]
    positions = (np.arange(count) + rng.random()) / count
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    indices = np.searchsorted(cumulative, positions, side="right")
    return np.minimum(indices, count - 1)


def pf_reweight(
    state: ParticleState,
    observation: Observation,
    model: BasisModel,
    noise: np.ndarray,
    seed: RandomSource = None,
) -> ParticleState:
    """
    按高斯似然 N(y; h(x), R) 在对数域重新加权，ESS < E/2 时系统重采样

    R 与集合卡尔曼滤波相同，仅在这里设置方差下限以避免除零。
    """
    mask = observation.mask
    if not mask.any():
        return ParticleState(state.members, state.weights)

    members = state.members
    r = np.maximum(noise_diagonal(noise)[mask], PF_VARIANCE_FLOOR)
    predicted = model.observe_members(members.phases, members.weights)[:, mask]
    residual = observation.values[mask][None, :] - predicted
    log_likelihood = -0.5 * np.sum(residual ** 2 / r + np.log(2.0 * np.pi * r), axis=1)

    with np.errstate(divide="ignore"):
        log_weights = np.log(state.weights) + log_likelihood
    peak = float(np.max(log_weights))
    if not np.isfinite(peak):
        raise WeightCollapseError("所有粒子的似然都为零", float(np.max(log_likelihood)), observation.tick)

    weights = np.exp(log_weights - logsumexp(log_weights))
    weights = weights / weights.sum()

    if effective_sample_size(weights) < members.size / 2.0:
        indices = systematic_resample(weights, seed)
        return ParticleState(Ensemble(members.members[indices]), np.full(members.size, 1.0 / members.size), True)
    return ParticleState(members, weights)


def pf_step(
    state: ParticleState,
    observation: Optional[Observation],
    model: BasisModel,
    noise: np.ndarray,
    transition: TransitionModel,
    seed: RandomSource = None,
) -> ParticleState:
    """传播（与 enkf_predict 相同）后重新加权；先抽取传播噪声，再抽取重采样随机数"""
    rng = as_generator(seed)
    propagated = ParticleState(enkf_predict(state.members, transition, rng), state.weights)
    if observation is None:
        return propagated
    return pf_reweight(propagated, observation, model, noise, rng)


# 置信度与轨迹

def state_moments(state: FilterState) -> GaussianBelief:
    """三种滤波状态统一转为均值与协方差（集合为更新后的样本矩）"""
    if isinstance(state, GaussianBelief):
        return state
    if isinstance(state, ParticleState):
        return weighted_moments(state.members.members, state.weights)
    if isinstance(state, Ensemble):
        return ensemble_moments(state)
    raise DataError(f"未知的滤波状态类型: {type(state).__name__}")


def state_mean(state: FilterState) -> np.ndarray:
    if isinstance(state, GaussianBelief):
        return state.mean
    if isinstance(state, ParticleState):
        return state.weights @ state.members.members
    if isinstance(state, Ensemble):
        return state.mean()
    raise DataError(f"未知的滤波状态类型: {type(state).__name__}")


def predict_trajectory(state: FilterState, model: BasisModel, phases: Union[float, Sequence[float]]) -> np.ndarray:
    """在置信度均值的权重下，于各相位处求 h，形状 D × len(phases)"""
    weights = state_mean(state)[PHASE_DIMS:]
    return model.reconstruct(np.atleast_1d(np.asarray(phases, dtype=float)), weights)


def predict_trajectory_distribution(
    state: FilterState,
    model: BasisModel,
    phases: Union[float, Sequence[float]],
) -> Tuple[np.ndarray, np.ndarray]:
    """
    预测轨迹的均值与逐维方差，均为 D × len(phases)

    集合与粒子把每个成员投影到 h 上；EKF 使用 Φ Σ_ww Φᵀ 的对角线。
    """
    phases = np.atleast_1d(np.asarray(phases, dtype=float))
    mean = predict_trajectory(state, model, phases)
    variance = np.zeros_like(mean)

    if isinstance(state, GaussianBelief):
        covariance = state.weight_covariance
        for i, phase in enumerate(phases):
            basis = model.basis_matrix(phase)
            variance[:, i] = np.einsum("db,bc,dc->d", basis, covariance, basis)
        return mean, np.maximum(variance, 0.0)

    if isinstance(state, ParticleState):
        members, probabilities = state.members, state.weights
    else:
        members, probabilities = state, None
        if members.size < 2:
            return mean, variance

    for i, phase in enumerate(phases):
        projected = model.observe_members(np.full(members.size, phase), members.weights)
        if probabilities is None:
            variance[:, i] = projected.var(axis=0, ddof=1)
        else:
            centred = projected - probabilities @ projected
            variance[:, i] = probabilities @ (centred ** 2)
    return mean, variance


def forecast_phase(state: FilterState, ticks_ahead: float) -> float:
    """φ + k·φ̇，截断到 [0, 1.1]"""
    mean = state_mean(state)
    return float(np.clip(mean[0] + ticks_ahead * mean[1], 0.0, PHASE_LIMIT))
