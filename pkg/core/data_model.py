"""
领域数据模型
模态布局、示教、观测、潜在状态、集合与高斯置信度，供所有模块共享
"""

import hashlib
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Tuple

import numpy as np
import orjson

from .errors import CovarianceUndefinedError, DataError, LayoutMismatchError

# 状态向量中相位系统所占的维数 [φ, φ̇]
PHASE_DIMS = 2

SYMMETRY_TOLERANCE = 1e-9


class ModalityRole(Enum):
    """自由度角色"""
    OBSERVED = "observed"
    CONTROLLED = "controlled"


@dataclass(frozen=True)
class Modality:
    """单个传感器模态"""
    name: str
    dof_count: int
    role: ModalityRole

    def __post_init__(self):
        if not self.name:
            raise DataError("模态名称不能为空")
        if int(self.dof_count) < 1:
            raise DataError(f"模态 {self.name} 的自由度必须 >= 1")
        if not isinstance(self.role, ModalityRole):
            object.__setattr__(self, "role", ModalityRole(self.role))


@dataclass(frozen=True)
class ModalityLayout:
    """有序模态列表，D = ΣD^d"""
    modalities: Tuple[Modality, ...]

    def __post_init__(self):
        object.__setattr__(self, "modalities", tuple(self.modalities))
        names = [m.name for m in self.modalities]
        if len(set(names)) != len(names):
            raise DataError(f"模态名称重复: {names}")
        roles = {m.role for m in self.modalities}
        if ModalityRole.OBSERVED not in roles or ModalityRole.CONTROLLED not in roles:
            raise DataError("布局至少需要一个观测自由度和一个受控自由度")

    @property
    def total_dofs(self) -> int:
        return sum(m.dof_count for m in self.modalities)

    @property
    def names(self) -> List[str]:
        return [m.name for m in self.modalities]

    def modality(self, name: str) -> Modality:
        for m in self.modalities:
            if m.name == name:
                return m
        raise LayoutMismatchError(f"布局中没有模态 '{name}'")

    def dof_slice(self, name: str) -> slice:
        """模态在 D 维向量中的连续区间"""
        start = 0
        for m in self.modalities:
            if m.name == name:
                return slice(start, start + m.dof_count)
            start += m.dof_count
        raise LayoutMismatchError(f"布局中没有模态 '{name}'")

    def dof_names(self) -> List[str]:
        result = []
        for m in self.modalities:
            result.extend(f"{m.name}_{i}" for i in range(m.dof_count))
        return result

    def role_mask(self, role: ModalityRole) -> np.ndarray:
        mask = np.zeros(self.total_dofs, dtype=bool)
        for m in self.modalities:
            if m.role == role:
                mask[self.dof_slice(m.name)] = True
        return mask

    @property
    def observed_mask(self) -> np.ndarray:
        return self.role_mask(ModalityRole.OBSERVED)

    @property
    def controlled_mask(self) -> np.ndarray:
        return self.role_mask(ModalityRole.CONTROLLED)

    def subset_mask(self, names: Iterable[str]) -> np.ndarray:
        """指定模态集合对应的布尔掩码"""
        mask = np.zeros(self.total_dofs, dtype=bool)
        for name in names:
            mask[self.dof_slice(name)] = True
        return mask

    def to_dict(self) -> Dict:
        return {
            "modalities": [
                {"name": m.name, "dof_count": m.dof_count, "role": m.role.value}
                for m in self.modalities
            ]
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "ModalityLayout":
        return cls(tuple(
            Modality(item["name"], int(item["dof_count"]), ModalityRole(item["role"]))
            for item in data["modalities"]
        ))

    def layout_hash(self) -> str:
        """布局指纹，用于校验文件之间的一致性"""
        payload = orjson.dumps(self.to_dict(), option=orjson.OPT_SORT_KEYS)
        return hashlib.sha1(payload).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class Demonstration:
    """一次示教：D 行 × T 列的多模态时间序列"""
    layout: ModalityLayout
    samples: np.ndarray
    sample_rate: float = 60.0

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float)
        if samples.ndim != 2 or samples.shape[0] != self.layout.total_dofs:
            raise DataError(
                f"示教数据形状 {samples.shape} 与布局维度 {self.layout.total_dofs} 不一致"
            )
        if samples.shape[1] < 2:
            raise DataError("示教至少需要两个时间步")
        if np.isnan(samples).any():
            raise DataError("训练示教不能包含 NaN")
        if self.sample_rate <= 0:
            raise DataError("采样频率必须为正")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> int:
        return int(self.samples.shape[1])

    @property
    def phases(self) -> np.ndarray:
        """每一列对应的相位 t/T"""
        return np.arange(self.duration, dtype=float) / self.duration

    def modality_samples(self, name: str) -> np.ndarray:
        return self.samples[self.layout.dof_slice(name), :]


@dataclass(frozen=True, eq=False)
class Observation:
    """单个时间步的观测；mask 为 False 的维度会被所有使用方忽略"""
    values: np.ndarray
    mask: np.ndarray
    tick: int = 0

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        mask = np.array(self.mask, dtype=bool)
        if values.shape != mask.shape or values.ndim != 1:
            raise DataError("观测值与掩码的维度不一致")
        if np.isnan(values[mask]).any():
            raise DataError(f"时间步 {self.tick} 的有效观测中包含 NaN")
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])

    @property
    def has_measurement(self) -> bool:
        return bool(self.mask.any())


@dataclass(frozen=True, eq=False)
class LatentState:
    """增广状态 s = [φ, φ̇, w]"""
    phase: float
    phase_velocity: float
    weights: np.ndarray

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float).ravel()
        if not self.phase_velocity > 0:
            raise DataError(f"相位速度必须为正: {self.phase_velocity}")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "phase", float(self.phase))
        object.__setattr__(self, "phase_velocity", float(self.phase_velocity))

    def to_vector(self) -> np.ndarray:
        return np.concatenate(([self.phase, self.phase_velocity], self.weights))


@dataclass(frozen=True, eq=False)
class Ensemble:
    """E × (2+B) 的集合矩阵，每行是一个潜在状态"""
    members: np.ndarray

    def __post_init__(self):
        members = np.array(self.members, dtype=float)
        if members.ndim != 2 or members.shape[0] < 1 or members.shape[1] < PHASE_DIMS:
            raise DataError(f"集合矩阵形状无效: {members.shape}")
        if not np.isfinite(members[:, 0]).all():
            raise DataError("集合成员的相位必须有限")
        members.setflags(write=False)
        object.__setattr__(self, "members", members)

    @property
    def size(self) -> int:
        return int(self.members.shape[0])

    @property
    def state_dimension(self) -> int:
        return int(self.members.shape[1])

    @property
    def phases(self) -> np.ndarray:
        return self.members[:, 0]

    @property
    def weights(self) -> np.ndarray:
        return self.members[:, PHASE_DIMS:]

    def mean(self) -> np.ndarray:
        return self.members.mean(axis=0)


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """高斯置信度 N(μ, Σ)"""
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).ravel()
        cov = np.array(self.covariance, dtype=float)
        n = mean.shape[0]
        if cov.shape != (n, n):
            raise DataError(f"协方差形状 {cov.shape} 与均值维度 {n} 不一致")
        scale = max(1.0, float(np.max(np.abs(cov))) if cov.size else 1.0)
        if np.max(np.abs(cov - cov.T), initial=0.0) > SYMMETRY_TOLERANCE * scale:
            raise DataError("协方差矩阵不对称")
        if np.min(np.diag(cov), initial=0.0) < -SYMMETRY_TOLERANCE * scale:
            raise DataError("协方差对角线出现负值")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dimension(self) -> int:
        return int(self.mean.shape[0])

    @property
    def phase(self) -> float:
        return float(self.mean[0])

    @property
    def phase_velocity(self) -> float:
        return float(self.mean[1])

    @property
    def phase_variance(self) -> float:
        return float(self.covariance[0, 0])

    @property
    def weight_mean(self) -> np.ndarray:
        return self.mean[PHASE_DIMS:]

    @property
    def weight_covariance(self) -> np.ndarray:
        return self.covariance[PHASE_DIMS:, PHASE_DIMS:]


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def ensemble_moments(ensemble: Ensemble, inflation: float = 1.0) -> GaussianBelief:
    """
    集合的样本均值与样本协方差

    Σ = (1/(E-1)) A Aᵀ，A 为成员相对均值的偏差；inflation 为可选的协方差放大系数。
    """
    size = ensemble.size
    if size < 2:
        raise CovarianceUndefinedError(f"集合成员数为 {size}，样本协方差未定义（需要 E >= 2）")

    mean = ensemble.members.mean(axis=0)
    deviation = ensemble.members - mean
    covariance = deviation.T @ deviation / (size - 1.0)
    if inflation != 1.0:
        covariance = covariance * inflation
    return GaussianBelief(mean, symmetrize(covariance))


def weighted_moments(members: np.ndarray, weights: np.ndarray) -> GaussianBelief:
    """带权样本的均值与（可靠性权重）无偏协方差"""
    weights = np.asarray(weights, dtype=float)
    mean = weights @ members
    deviation = members - mean
    denominator = 1.0 - float(np.sum(weights ** 2))
    if denominator <= 1e-12:
        denominator = 1.0
    covariance = (deviation * weights[:, None]).T @ deviation / denominator
    return GaussianBelief(mean, symmetrize(covariance))


def check_layout(expected: ModalityLayout, actual: ModalityLayout, what: str = "数据") -> None:
    if expected != actual:
        raise LayoutMismatchError(
            f"{what}的模态布局与模型不一致: {actual.names} vs {expected.names}"
        )
