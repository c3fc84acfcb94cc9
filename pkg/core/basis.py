"""
基函数空间
每个自由度的基函数分解、最小二乘拟合、BIC 模型选择，以及观测函数 h 与其雅可比矩阵
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
from scipy.special import expit

from utils.debug_logger import get_debug_logger
from .data_model import PHASE_DIMS, Demonstration, LatentState, ModalityLayout, check_layout
from .errors import ConfigurationError, DataError, InvalidDurationError, SingularFitError

# 相当于“数值上完全拟合”的残差下限（相对于信号方差）
_RSS_RELATIVE_FLOOR = 1e-12


class BasisKind(Enum):
    """基函数族"""
    GAUSSIAN_RBF = "gaussian_rbf"
    POLYNOMIAL = "polynomial"
    SIGMOID = "sigmoid"


@dataclass(frozen=True)
class BasisFamily:
    """
    单个自由度的基函数族

    gaussian_rbf 与 sigmoid 使用 centers/width（相位单位）；polynomial 的阶数为 count - 1。
    """
    kind: BasisKind
    count: int
    centers: Tuple[float, ...] = ()
    width: float = 0.0

    def __post_init__(self):
        if not isinstance(self.kind, BasisKind):
            object.__setattr__(self, "kind", BasisKind(self.kind))
        object.__setattr__(self, "centers", tuple(float(c) for c in self.centers))
        if int(self.count) < 1:
            raise ConfigurationError("基函数数量必须 >= 1")

        if self.kind == BasisKind.POLYNOMIAL:
            if self.centers:
                raise ConfigurationError("多项式基不使用中心点")
            return

        if len(self.centers) != self.count:
            raise ConfigurationError(f"{self.kind.value} 需要 {self.count} 个中心点，实际 {len(self.centers)}")
        if not self.width > 0:
            raise ConfigurationError(f"{self.kind.value} 的宽度/斜率参数必须 > 0")
        centers = np.asarray(self.centers)
        if np.any(centers < 0.0) or np.any(centers > 1.0):
            raise ConfigurationError("基函数中心必须位于 [0, 1]")
        if self.kind == BasisKind.GAUSSIAN_RBF and np.any(np.diff(centers) <= 0):
            raise ConfigurationError("高斯基的中心必须严格递增")

    # 构造方法
    @classmethod
    def gaussian(cls, count: int, width: Optional[float] = None) -> "BasisFamily":
        """中心在 [0,1] 上均匀分布，默认 σ = 1/(B-1)"""
        centers, default_width = _uniform_centers(count)
        return cls(BasisKind.GAUSSIAN_RBF, count, centers, width or default_width)

    @classmethod
    def polynomial(cls, degree: int) -> "BasisFamily":
        if degree < 0:
            raise ConfigurationError("多项式阶数必须 >= 0")
        return cls(BasisKind.POLYNOMIAL, degree + 1)

    @classmethod
    def sigmoid(cls, count: int, width: Optional[float] = None) -> "BasisFamily":
        centers, default_width = _uniform_centers(count)
        return cls(BasisKind.SIGMOID, count, centers, width or default_width)

    @property
    def degree(self) -> int:
        return self.count - 1

    def evaluate(self, phases: Union[float, np.ndarray]) -> np.ndarray:
        """基函数在各相位处的取值，形状 (len(phases), B^d)"""
        phi = np.atleast_1d(np.asarray(phases, dtype=float))[:, None]

        if self.kind == BasisKind.POLYNOMIAL:
            return phi ** np.arange(self.count)

        centers = np.asarray(self.centers)[None, :]
        if self.kind == BasisKind.GAUSSIAN_RBF:
            return np.exp(-((phi - centers) ** 2) / (2.0 * self.width ** 2))
        return expit((phi - centers) / self.width)

    def derivative(self, phases: Union[float, np.ndarray]) -> np.ndarray:
        """基函数对相位的解析导数"""
        phi = np.atleast_1d(np.asarray(phases, dtype=float))[:, None]

        if self.kind == BasisKind.POLYNOMIAL:
            powers = np.arange(self.count)
            lowered = np.maximum(powers - 1, 0)
            return powers * phi ** lowered

        centers = np.asarray(self.centers)[None, :]
        if self.kind == BasisKind.GAUSSIAN_RBF:
            values = np.exp(-((phi - centers) ** 2) / (2.0 * self.width ** 2))
            return -(phi - centers) / self.width ** 2 * values
        values = expit((phi - centers) / self.width)
        return values * (1.0 - values) / self.width

    def to_dict(self) -> Dict:
        data = {"kind": self.kind.value, "count": self.count}
        if self.kind != BasisKind.POLYNOMIAL:
            data["centers"] = list(self.centers)
            data["width"] = self.width
        return data

    @classmethod
    def from_dict(cls, data: Mapping) -> "BasisFamily":
        """支持完整参数，也支持只给出 kind/count（或 degree）的简写"""
        kind = BasisKind(data["kind"])
        if kind == BasisKind.POLYNOMIAL:
            if "degree" in data:
                return cls.polynomial(int(data["degree"]))
            return cls(kind, int(data["count"]))
        count = int(data["count"])
        if "centers" in data:
            return cls(kind, count, tuple(data["centers"]), float(data["width"]))
        if kind == BasisKind.GAUSSIAN_RBF:
            return cls.gaussian(count, data.get("width"))
        return cls.sigmoid(count, data.get("width"))

    def describe(self) -> str:
        if self.kind == BasisKind.POLYNOMIAL:
            return f"polynomial(deg={self.degree})"
        return f"{self.kind.value}(B={self.count}, σ={self.width:.4g})"


def _uniform_centers(count: int) -> Tuple[Tuple[float, ...], float]:
    if count < 1:
        raise ConfigurationError("基函数数量必须 >= 1")
    if count == 1:
        return (0.5,), 1.0
    return tuple(np.linspace(0.0, 1.0, count)), 1.0 / (count - 1)


@dataclass(frozen=True)
class BasisModel:
    """与模态布局对齐的逐自由度基函数族，权重按自由度顺序连续存放"""
    layout: ModalityLayout
    families: Tuple[BasisFamily, ...]

    def __post_init__(self):
        object.__setattr__(self, "families", tuple(self.families))
        if len(self.families) != self.layout.total_dofs:
            raise ConfigurationError(
                f"基函数族数量 {len(self.families)} 与自由度数量 {self.layout.total_dofs} 不一致"
            )

    @property
    def dof_count(self) -> int:
        return len(self.families)

    @property
    def block_sizes(self) -> List[int]:
        return [f.count for f in self.families]

    @property
    def offsets(self) -> List[int]:
        """每个自由度权重块的起始位置"""
        return [0] + list(np.cumsum(self.block_sizes)[:-1].astype(int))

    @property
    def weight_dimension(self) -> int:
        return int(sum(self.block_sizes))

    @property
    def state_dimension(self) -> int:
        return PHASE_DIMS + self.weight_dimension

    def block(self, dof: int) -> slice:
        start = self.offsets[dof]
        return slice(start, start + self.families[dof].count)

    def basis_matrix(self, phase: float) -> np.ndarray:
        """块对角基矩阵，形状 D × B"""
        matrix = np.zeros((self.dof_count, self.weight_dimension))
        for dof, family in enumerate(self.families):
            matrix[dof, self.block(dof)] = family.evaluate(phase)[0]
        return matrix

    def reconstruct(self, phases: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """给定一组权重，在多个相位处重建轨迹，形状 D × len(phases)"""
        phases = np.atleast_1d(np.asarray(phases, dtype=float))
        weights = np.asarray(weights, dtype=float)
        result = np.empty((self.dof_count, phases.shape[0]))
        for dof, family in enumerate(self.families):
            result[dof] = family.evaluate(phases) @ weights[self.block(dof)]
        return result

    def observe_members(self, phases: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """
        逐成员应用观测函数 h

        phases 形状 (E,)，weights 形状 (E, B)，返回 (E, D)。每个成员使用自己的相位。
        """
        phases = np.asarray(phases, dtype=float)
        result = np.empty((phases.shape[0], self.dof_count))
        for dof, family in enumerate(self.families):
            result[:, dof] = np.einsum("eb,eb->e", family.evaluate(phases), weights[:, self.block(dof)])
        return result

    def to_dict(self) -> Dict:
        return {
            "layout": self.layout.to_dict(),
            "families": [f.to_dict() for f in self.families],
            "offsets": [int(o) for o in self.offsets],
            "weight_dimension": self.weight_dimension,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "BasisModel":
        model = cls(
            ModalityLayout.from_dict(data["layout"]),
            tuple(BasisFamily.from_dict(f) for f in data["families"]),
        )
        if "offsets" in data and [int(o) for o in data["offsets"]] != model.offsets:
            raise DataError("模型文件中的权重块偏移与基函数族不一致")
        return model


def compute_phase(t: float, total_ticks: float) -> float:
    """线性插值的相对相位 φ = t/T"""
    if total_ticks <= 0:
        raise InvalidDurationError(f"总时长必须为正: {total_ticks}")
    if t < 0 or t > total_ticks:
        raise DataError(f"时间步 {t} 超出 [0, {total_ticks}]")
    return float(t) / float(total_ticks)


def evaluate_basis(family: BasisFamily, phase: float) -> np.ndarray:
    return family.evaluate(phase)[0]


def basis_derivative(family: BasisFamily, phase: float) -> np.ndarray:
    return family.derivative(phase)[0]


def fit_weights(values: np.ndarray, phases: np.ndarray, family: BasisFamily, ridge: float = 1e-8) -> np.ndarray:
    """
    岭回归最小二乘：w = argmin ‖y − Φw‖² + λ‖w‖²

    λ = 0 且设计矩阵秩亏时抛出 SingularFitError。
    """
    values = np.asarray(values, dtype=float).ravel()
    phases = np.asarray(phases, dtype=float).ravel()
    if values.shape != phases.shape:
        raise DataError("信号与相位长度不一致")
    if ridge < 0:
        raise ConfigurationError("岭参数必须 >= 0")

    design = family.evaluate(phases)
    if ridge == 0.0 and np.linalg.matrix_rank(design) < family.count:
        raise SingularFitError(
            f"{family.describe()} 在 {len(values)} 个样本上的正规矩阵秩亏，请设置 ridge > 0"
        )

    normal = design.T @ design + ridge * np.eye(family.count)
    rhs = design.T @ values
    try:
        factor = scipy.linalg.cho_factor(normal)
        return scipy.linalg.cho_solve(factor, rhs)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise SingularFitError(f"{family.describe()} 拟合失败: {e}，请设置 ridge > 0")


def fit_demonstration(demo: Demonstration, model: BasisModel, ridge: float = 1e-8) -> np.ndarray:
    """对一次示教逐自由度拟合，返回拼接后的 B 维权重"""
    check_layout(model.layout, demo.layout, "示教")
    phases = demo.phases
    weights = np.empty(model.weight_dimension)
    for dof, family in enumerate(model.families):
        try:
            weights[model.block(dof)] = fit_weights(demo.samples[dof], phases, family, ridge)
        except SingularFitError as e:
            name = model.layout.dof_names()[dof]
            raise SingularFitError(f"自由度 {name}: {e.message}")
    return weights


def _residual_sum(demos: Sequence[Demonstration], dof: int, family: BasisFamily, ridge: float) -> Tuple[float, int]:
    rss = 0.0
    n = 0
    for demo in demos:
        phases = demo.phases
        signal = demo.samples[dof]
        w = fit_weights(signal, phases, family, ridge)
        residual = signal - family.evaluate(phases) @ w
        rss += float(residual @ residual)
        n += signal.shape[0]
    return rss, n


def bic_score(rss: float, n: int, parameters: int) -> float:
    """高斯对数似然近似下的 BIC = n·ln(RSS/n) + B·ln(n)"""
    return n * np.log(rss / n) + parameters * np.log(n)


CandidateSpec = Union[Sequence[BasisFamily], Sequence[Sequence[BasisFamily]]]


def expand_candidates(layout: ModalityLayout, candidates: CandidateSpec) -> List[List[BasisFamily]]:
    """候选集可以是所有自由度共享的一组，也可以是逐自由度的列表"""
    candidates = list(candidates)
    if not candidates:
        raise ConfigurationError("候选基函数列表为空")
    if isinstance(candidates[0], BasisFamily):
        return [list(candidates) for _ in range(layout.total_dofs)]
    if len(candidates) != layout.total_dofs:
        raise ConfigurationError(f"需要 {layout.total_dofs} 组候选基函数，实际 {len(candidates)}")
    return [list(c) for c in candidates]


def select_basis(
    demos: Sequence[Demonstration],
    candidates: CandidateSpec,
    ridge: float = 1e-8,
) -> BasisModel:
    """
    逐自由度用 BIC 选择基函数族

    平分时依次按更小的 B^d、候选列表顺序决定。
    """
    if not demos:
        raise DataError("至少需要一个示教")
    layout = demos[0].layout
    for demo in demos[1:]:
        check_layout(layout, demo.layout, "示教")
    per_dof = expand_candidates(layout, candidates)

    chosen = []
    for dof, options in enumerate(per_dof):
        if not options:
            raise ConfigurationError(f"自由度 {layout.dof_names()[dof]} 没有候选基函数")
        signal_var = float(np.mean([np.var(d.samples[dof]) for d in demos]))
        ranked = []
        for order, family in enumerate(options):
            rss, n = _residual_sum(demos, dof, family, ridge)
            floor = n * _RSS_RELATIVE_FLOOR * max(signal_var, _RSS_RELATIVE_FLOOR)
            score = bic_score(max(rss, floor), n, family.count)
            ranked.append((score, family.count, order, family))
        ranked.sort(key=lambda item: item[:3])
        chosen.append(ranked[0][3])
        get_debug_logger().log_decision(
            "basis",
            f"{layout.dof_names()[dof]}: {len(options)} 个候选",
            f"{ranked[0][3].kind.value}({ranked[0][3].count})",
            {"bic": ranked[0][0]},
        )

    return BasisModel(layout, tuple(chosen))


StateLike = Union[LatentState, np.ndarray, Sequence[float]]


def _split_state(state: StateLike, model: BasisModel) -> Tuple[float, np.ndarray]:
    """接受 LatentState 或 [φ, φ̇, w] 向量（滤波器内部的状态不一定满足 φ̇ > 0）"""
    if isinstance(state, LatentState):
        phase, weights = state.phase, state.weights
    else:
        vector = np.asarray(state, dtype=float).ravel()
        phase, weights = float(vector[0]), vector[PHASE_DIMS:]
    if weights.shape[0] != model.weight_dimension:
        raise DataError(f"状态权重维度 {weights.shape[0]} 与模型 {model.weight_dimension} 不一致")
    return phase, weights


def observe(state: StateLike, model: BasisModel) -> np.ndarray:
    """y^d = Φ_φ^d · w^d"""
    phase, weights = _split_state(state, model)
    return model.reconstruct(np.array([phase]), weights)[:, 0]


def observation_jacobian(state: StateLike, model: BasisModel) -> np.ndarray:
    """
    H = ∂h/∂s，形状 D × (2+B)

    第 0 列为 ∂(Φ_φ w^d)/∂φ，第 1 列（φ̇）恒为 0，其余为块对角的 Φ_φ^d。
    """
    phase, weights = _split_state(state, model)
    jacobian = np.zeros((model.dof_count, model.state_dimension))
    for dof, family in enumerate(model.families):
        block = model.block(dof)
        jacobian[dof, 0] = family.derivative(phase)[0] @ weights[block]
        jacobian[dof, PHASE_DIMS + block.start:PHASE_DIMS + block.stop] = family.evaluate(phase)[0]
    return jacobian


def default_candidates() -> List[BasisFamily]:
    """默认候选集：多项式、高斯与 Sigmoid 三类"""
    return [
        BasisFamily.polynomial(3),
        BasisFamily.polynomial(5),
        BasisFamily.gaussian(8),
        BasisFamily.gaussian(12),
        BasisFamily.gaussian(16),
        BasisFamily.sigmoid(8),
        BasisFamily.sigmoid(12),
    ]
