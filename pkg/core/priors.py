"""
先验构造
从示教中构造初始置信度：高斯先验 (BIP)、GMM 先验 (eBIP⁻)、直接采样集合 (eBIP)，以及闭式测量噪声 R
"""

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.mixture import GaussianMixture

from utils.debug_logger import get_debug_logger
from .basis import BasisModel, fit_demonstration
from .data_model import Demonstration, Ensemble, GaussianBelief, ModalityLayout, check_layout, symmetrize
from .errors import (
    ConfigurationError,
    DataError,
    EnsembleSizeError,
    InsufficientDataError,
    NonPsdPriorError,
)

RandomSource = Union[int, np.random.Generator, None]

DIRECT_MODE = "direct"
GMM_MODE = "gmm"


def as_generator(seed: RandomSource) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True, eq=False)
class DemonstrationCorpus:
    """
    训练语料：N 次示教的拟合权重与倒数时长

    weights 按行存放 (N × B)，第 i 行对应 l_i = 1/T_i。
    """
    layout: ModalityLayout
    weights: np.ndarray
    reciprocal_lengths: np.ndarray

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float)
        lengths = np.array(self.reciprocal_lengths, dtype=float).ravel()
        if weights.ndim != 2:
            raise DataError(f"权重矩阵必须是二维的: {weights.shape}")
        if weights.shape[0] != lengths.shape[0]:
            raise DataError(f"权重行数 {weights.shape[0]} 与时长数量 {lengths.shape[0]} 不一致")
        if np.any(lengths <= 0):
            raise DataError("倒数时长必须全部为正")
        weights.setflags(write=False)
        lengths.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "reciprocal_lengths", lengths)

    @classmethod
    def from_demonstrations(
        cls,
        demos: Sequence[Demonstration],
        model: BasisModel,
        ridge: float = 1e-8,
    ) -> "DemonstrationCorpus":
        if not demos:
            raise InsufficientDataError("语料中没有示教")
        rows = [fit_demonstration(demo, model, ridge) for demo in demos]
        lengths = [1.0 / demo.duration for demo in demos]
        return cls(model.layout, np.vstack(rows), np.asarray(lengths))

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])

    @property
    def weight_dimension(self) -> int:
        return int(self.weights.shape[1])

    @property
    def durations(self) -> np.ndarray:
        return np.rint(1.0 / self.reciprocal_lengths).astype(int)

    @property
    def W(self) -> np.ndarray:
        """B × N 视图"""
        return self.weights.T

    def subset(self, indices: Sequence[int]) -> "DemonstrationCorpus":
        indices = np.asarray(indices, dtype=int)
        return DemonstrationCorpus(self.layout, self.weights[indices], self.reciprocal_lengths[indices])


def _velocity_variance(corpus: DemonstrationCorpus) -> float:
    if corpus.size < 2:
        return 0.0
    return float(np.var(corpus.reciprocal_lengths, ddof=1))


def build_gaussian_prior(corpus: DemonstrationCorpus, phase_variance: float = 1e-6,
                         velocity_spread: float = 0.0) -> GaussianBelief:
    """
    BIP 高斯先验

    μ₀ = [0, mean(l), mean(W)]；Σ₀ 为块对角：Var(φ) = phase_variance，
    Var(φ̇) = max(var(l), (velocity_spread·mean(l))²)，
    权重块为 W 的样本协方差，相位与权重之间没有初始相关。
    """
    if corpus.size < 2:
        raise InsufficientDataError(f"高斯先验至少需要 2 次示教，当前 {corpus.size}")
    if phase_variance < 0:
        raise ConfigurationError("相位方差必须 >= 0")
    if velocity_spread < 0:
        raise ConfigurationError("相位速度相对标准差下限必须 >= 0")

    mean = np.concatenate(([0.0, float(np.mean(corpus.reciprocal_lengths))], corpus.weights.mean(axis=0)))
    dim = mean.shape[0]
    covariance = np.zeros((dim, dim))
    covariance[0, 0] = phase_variance
    covariance[1, 1] = max(_velocity_variance(corpus), (velocity_spread * mean[1]) ** 2)
    covariance[2:, 2:] = np.atleast_2d(np.cov(corpus.weights, rowvar=False, ddof=1))
    return GaussianBelief(mean, symmetrize(covariance))


@dataclass(frozen=True, eq=False)
class GmmPrior:
    """权重空间上的高斯混合 Σ_k α_k N(μ_k, Σ_k)"""
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    bic: float = float("nan")
    fallback: bool = False

    def __post_init__(self):
        alphas = np.array(self.weights, dtype=float).ravel()
        means = np.atleast_2d(np.array(self.means, dtype=float))
        covs = np.array(self.covariances, dtype=float)
        if covs.ndim == 2:
            covs = covs[None, :, :]
        k, b = means.shape
        if alphas.shape != (k,) or covs.shape != (k, b, b):
            raise DataError(f"GMM 参数形状不一致: α{alphas.shape} μ{means.shape} Σ{covs.shape}")
        if np.any(alphas < 0) or abs(alphas.sum() - 1.0) > 1e-9:
            raise DataError("GMM 混合权重必须非负且和为 1")
        object.__setattr__(self, "weights", alphas)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)

    @property
    def n_components(self) -> int:
        return int(self.weights.shape[0])

    @property
    def dimension(self) -> int:
        return int(self.means.shape[1])

    def sample(self, count: int, rng: RandomSource = None) -> np.ndarray:
        """抽取 count 组权重，形状 count × B"""
        rng = as_generator(rng)
        labels = rng.choice(self.n_components, size=count, p=self.weights)
        samples = np.empty((count, self.dimension))
        for k in range(self.n_components):
            chosen = np.flatnonzero(labels == k)
            if chosen.size:
                samples[chosen] = rng.multivariate_normal(
                    self.means[k], self.covariances[k], size=chosen.size, method="eigh"
                )
        return samples


def _check_psd(covariances: np.ndarray, tolerance: float) -> None:
    for k, cov in enumerate(covariances):
        eigenvalues = np.linalg.eigvalsh(symmetrize(cov))
        largest = max(float(np.max(np.abs(eigenvalues))), 1e-300)
        if eigenvalues.min() <= tolerance * largest:
            raise NonPsdPriorError(
                f"GMM 分量 {k} 的协方差不是正定的 (min eig={eigenvalues.min():.3e}, max={largest:.3e})"
            )


def fit_gmm(
    corpus: DemonstrationCorpus,
    k_candidates: Sequence[int] = (1, 2, 3),
    seed: Optional[int] = 0,
    reg_covar: float = 0.0,
    psd_tolerance: float = 1e-10,
) -> GmmPrior:
    """
    EM 拟合权重空间上的 GMM，并用 BIC 选择分量数

    初始化为 k-means++，收敛阈值 1e-6，最多 200 次迭代。协方差不正定的候选会被丢弃，
    所有候选都不正定时抛出 NonPsdPriorError。
    """
    if corpus.size < 2:
        raise InsufficientDataError(f"GMM 至少需要 2 次示教，当前 {corpus.size}")
    candidates = sorted({int(k) for k in k_candidates if 1 <= int(k) <= corpus.size})
    if not candidates:
        raise ConfigurationError(f"没有可用的分量数候选 (N={corpus.size}): {list(k_candidates)}")

    data = corpus.weights
    best = None
    failure = None
    for k in candidates:
        mixture = GaussianMixture(
            n_components=k,
            covariance_type="full",
            tol=1e-6,
            max_iter=200,
            init_params="k-means++",
            reg_covar=reg_covar,
            random_state=seed,
        )
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                mixture.fit(data)
            _check_psd(mixture.covariances_, psd_tolerance)
        except ValueError as e:
            failure = NonPsdPriorError(f"K={k} 的 EM 拟合失败，协方差不可分解: {e}")
            continue
        except NonPsdPriorError as e:
            failure = NonPsdPriorError(f"K={k}: {e.message}")
            continue

        score = float(mixture.bic(data))
        if best is None or score < best[0]:
            best = (score, mixture)

    if best is None:
        raise failure

    score, mixture = best
    covariances = mixture.covariances_
    if mixture.n_components == 1:
        # 单分量与回退先验一致：无偏样本协方差 (1/(N-1))
        covariances = covariances * (corpus.size / (corpus.size - 1))
    get_debug_logger().log_decision(
        "gmm_components",
        f"BIC over K={candidates}",
        f"K={mixture.n_components}",
        {"bic": score},
    )
    return GmmPrior(mixture.weights_ / mixture.weights_.sum(), mixture.means_, covariances, bic=score)


def fit_gmm_with_fallback(
    corpus: DemonstrationCorpus,
    k_candidates: Sequence[int] = (1, 2, 3),
    seed: Optional[int] = 0,
    reg_covar: float = 0.0,
    psd_tolerance: float = 1e-10,
) -> GmmPrior:
    """EM 产生非正定协方差时回退为单个高斯（W 的样本均值与样本协方差）"""
    try:
        return fit_gmm(corpus, k_candidates, seed, reg_covar, psd_tolerance)
    except NonPsdPriorError as e:
        get_debug_logger().log_decision(
            "gmm_fallback",
            e.message[:80],
            "single_gaussian",
            {"N": corpus.size, "B": corpus.weight_dimension},
        )
        gaussian = build_gaussian_prior(corpus)
        return GmmPrior(np.ones(1), gaussian.weight_mean[None, :], gaussian.weight_covariance[None, :, :], fallback=True)


def sample_ensemble(
    corpus: DemonstrationCorpus,
    size: int,
    mode: str = DIRECT_MODE,
    seed: RandomSource = None,
    gmm: Optional[GmmPrior] = None,
    with_replacement: bool = False,
) -> Ensemble:
    """
    初始集合，每个成员为 [0, φ̇, w]

    direct: 无放回地均匀抽取示教，成员为 [0, 1/T_i, w_i]；E 不能超过 N。
    gmm: 权重从 GMM 抽取，φ̇ ∼ N(mean(l), var(l))。
    """
    rng = as_generator(seed)
    size = int(size)

    if mode == DIRECT_MODE:
        if size < 1:
            raise EnsembleSizeError(f"集合大小必须 >= 1: {size}")
        if size > corpus.size and not with_replacement:
            raise EnsembleSizeError(
                f"直接采样的集合大小 E={size} 超过示教数量 N={corpus.size}，请改用 gmm 模式"
            )
        indices = rng.choice(corpus.size, size=size, replace=with_replacement)
        velocities = corpus.reciprocal_lengths[indices]
        weights = corpus.weights[indices]

    elif mode == GMM_MODE:
        if size < 2:
            raise EnsembleSizeError(f"gmm 模式的集合大小必须 >= 2: {size}")
        if gmm is None:
            gmm = fit_gmm_with_fallback(corpus, seed=int(rng.integers(2**31 - 1)))
        if gmm.dimension != corpus.weight_dimension:
            raise DataError(f"GMM 维度 {gmm.dimension} 与语料权重维度 {corpus.weight_dimension} 不一致")
        weights = gmm.sample(size, rng)
        mean_velocity = float(np.mean(corpus.reciprocal_lengths))
        velocities = rng.normal(mean_velocity, np.sqrt(_velocity_variance(corpus)), size=size)
        # 相位速度必须为正
        velocities = np.maximum(velocities, 1e-3 * mean_velocity)

    else:
        raise ConfigurationError(f"未知的先验模式: {mode}")

    members = np.column_stack((np.zeros(size), velocities, weights))
    return Ensemble(members)


def widen_velocity(ensemble: Ensemble, spread: float, seed: RandomSource = None) -> Ensemble:
    """
    把集合 φ̇ 的相对标准差补到 spread

    已经足够分散时原样返回；否则乘上对数正态抖动，再整体缩放使 φ̇ 的均值不变，
    所有成员的 φ̇ 保持为正。
    """
    if spread < 0:
        raise ConfigurationError("相位速度相对标准差下限必须 >= 0")
    velocities = ensemble.members[:, 1]
    if spread == 0 or ensemble.size < 2:
        return ensemble

    mean_velocity = float(np.mean(velocities))
    missing = (spread * mean_velocity) ** 2 - float(np.var(velocities, ddof=1))
    if missing <= 0:
        return ensemble

    jitter = as_generator(seed).standard_normal(ensemble.size)
    jitter -= jitter.mean()
    jitter /= max(float(np.std(jitter, ddof=1)), 1e-12)
    members = ensemble.members.copy()
    widened = velocities * np.exp(np.sqrt(missing) / mean_velocity * jitter)
    members[:, 1] = widened * (mean_velocity / widened.mean())
    return Ensemble(members)


def estimate_measurement_noise(
    demos: Sequence[Demonstration],
    model: BasisModel,
    weights: Union[np.ndarray, Sequence[np.ndarray]],
) -> np.ndarray:
    """
    闭式测量噪声 R（对角）

    R_dd = (1/N) Σ_i (1/T_i) Σ_t (y_t − h([φ(t), w_i]))²
    """
    if not demos:
        raise InsufficientDataError("估计测量噪声至少需要一次示教")
    weights = np.atleast_2d(np.asarray(weights, dtype=float))
    if weights.shape[0] != len(demos):
        raise DataError(f"权重数量 {weights.shape[0]} 与示教数量 {len(demos)} 不一致")

    total = np.zeros(model.dof_count)
    for demo, w in zip(demos, weights):
        check_layout(model.layout, demo.layout, "示教")
        residual = demo.samples - model.reconstruct(demo.phases, w)
        total += np.mean(residual ** 2, axis=1)
    return np.diag(total / len(demos))

