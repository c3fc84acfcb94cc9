"""
状态管理器
滤波器种类、滤波状态变体，以及单次交互会话的逐时间步记录和统计
"""

from dataclasses import dataclass, asdict, field
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional, Union

import numpy as np

from .data_model import Ensemble, GaussianBelief
from .errors import ConfigurationError, DataError

# 粒子权重归一化容差
WEIGHT_SUM_TOLERANCE = 1e-9


class FilterKind(Enum):
    """滤波器种类"""
    BIP = "bip"                 # EKF，高斯先验
    EBIP = "ebip"               # 集合卡尔曼，直接采样示教
    EBIP_MINUS = "ebip_minus"   # 集合卡尔曼，GMM 先验
    PF = "pf"                   # 粒子滤波，直接采样示教

    @classmethod
    def parse(cls, value: Union[str, "FilterKind"]) -> "FilterKind":
        if isinstance(value, FilterKind):
            return value
        try:
            return cls(str(value).lower().replace("-", "_"))
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ConfigurationError(f"未知的滤波器种类 '{value}'，可选: {choices}")

    @property
    def uses_ensemble(self) -> bool:
        return self != FilterKind.BIP

    @property
    def default_prior_mode(self) -> str:
        return "gmm" if self == FilterKind.EBIP_MINUS else "direct"


class SessionStatus(Enum):
    """会话状态枚举"""
    INITIALIZING = "initializing"
    FILTERING = "filtering"
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass(frozen=True, eq=False)
class ParticleState:
    """带权粒子集合，权重非负且和为 1"""
    members: Ensemble
    weights: np.ndarray
    resampled: bool = False

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float).ravel()
        if weights.shape[0] != self.members.size:
            raise DataError(f"粒子权重数量 {weights.shape[0]} 与成员数量 {self.members.size} 不一致")
        if np.any(weights < 0) or not np.isfinite(weights).all():
            raise DataError("粒子权重必须非负且有限")
        if abs(weights.sum() - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise DataError(f"粒子权重之和为 {weights.sum():.12f}，应为 1")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, members: Ensemble) -> "ParticleState":
        return cls(members, np.full(members.size, 1.0 / members.size))

    @property
    def size(self) -> int:
        return self.members.size


FilterState = Union[GaussianBelief, Ensemble, ParticleState]


@dataclass
class TickRecord:
    """单个时间步的输出"""
    tick: int
    phase_mean: float
    phase_var: float
    y_hat: np.ndarray
    measured: bool = False
    duration: float = 0.0
    resampled: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tick": int(self.tick),
            "phase_mean": float(self.phase_mean),
            "phase_var": float(self.phase_var),
            "y_hat": [float(v) for v in self.y_hat],
        }


@dataclass
class SessionProgress:
    """会话进度数据类"""
    session_id: str
    filter_kind: FilterKind
    status: SessionStatus
    ensemble_size: Optional[int]
    start_time: datetime
    current_tick: int = -1
    measured_ticks: int = 0
    error_message: str = ""
    records: List[TickRecord] = field(default_factory=list)


class StateManager:
    """交互会话状态管理器"""

    def __init__(self):
        self.current_session: Optional[SessionProgress] = None
        self.session_history: List[SessionProgress] = []

        # 统计信息
        self.statistics = {
            "total_sessions": 0,
            "successful_sessions": 0,
            "total_ticks": 0,
            "total_updates": 0,
            "resample_count": 0,
            "session_start_time": datetime.now()
        }

    # 会话管理
    def start_session(self, filter_kind: FilterKind, ensemble_size: Optional[int] = None,
                      session_id: Optional[str] = None) -> str:
        """开始新的交互会话"""
        if session_id is None:
            session_id = f"session_{self.statistics['total_sessions'] + 1:04d}"

        self.current_session = SessionProgress(
            session_id=session_id,
            filter_kind=filter_kind,
            status=SessionStatus.INITIALIZING,
            ensemble_size=ensemble_size,
            start_time=datetime.now(),
        )
        self.statistics["total_sessions"] += 1
        return session_id

    def record_tick(self, record: TickRecord):
        """记录一个时间步的输出"""
        if not self.current_session:
            return

        session = self.current_session
        session.status = SessionStatus.FILTERING
        session.current_tick = record.tick
        session.records.append(record)
        self.statistics["total_ticks"] += 1
        if record.measured:
            session.measured_ticks += 1
            self.statistics["total_updates"] += 1
        if record.resampled:
            self.statistics["resample_count"] += 1

    def complete_session(self):
        """完成当前会话"""
        if not self.current_session:
            return
        self.current_session.status = SessionStatus.COMPLETED
        self.statistics["successful_sessions"] += 1
        self.session_history.append(self.current_session)

    def fail_session(self, error_message: str):
        """会话失败"""
        if not self.current_session:
            return
        self.current_session.status = SessionStatus.FAILED
        self.current_session.error_message = error_message
        self.session_history.append(self.current_session)

    # 统计和监控
    def get_latency_distribution(self) -> Dict[str, float]:
        """当前会话中带观测时间步的更新耗时分布（秒）"""
        if not self.current_session:
            return {}
        durations = np.array([r.duration for r in self.current_session.records if r.measured])
        if durations.size == 0:
            return {"count": 0}
        return {
            "count": int(durations.size),
            "mean": float(durations.mean()),
            "median": float(np.median(durations)),
            "p95": float(np.percentile(durations, 95)),
            "max": float(durations.max()),
        }

    def get_session_statistics(self) -> Dict[str, Any]:
        """获取会话统计信息"""
        session_duration = (datetime.now() - self.statistics["session_start_time"]).total_seconds()
        return {
            **self.statistics,
            "session_start_time": self.statistics["session_start_time"].isoformat(),
            "session_duration": session_duration,
            "current_session_status": self.current_session.status.value if self.current_session else None,
        }

    def get_session_summary(self) -> Dict[str, Any]:
        """获取当前会话摘要"""
        if not self.current_session:
            return {}

        session = self.current_session
        return {
            "session_id": session.session_id,
            "filter_kind": session.filter_kind.value,
            "status": session.status.value,
            "ensemble_size": session.ensemble_size,
            "ticks": len(session.records),
            "measured_ticks": session.measured_ticks,
            "elapsed_time": (datetime.now() - session.start_time).total_seconds(),
            "latency": self.get_latency_distribution(),
            "error_message": session.error_message,
        }

    # 数据导出
    def export_session_data(self) -> Dict[str, Any]:
        """导出会话数据"""
        exported = []
        for session in self.session_history:
            data = asdict(session)
            data["filter_kind"] = session.filter_kind.value
            data["status"] = session.status.value
            data["start_time"] = session.start_time.isoformat()
            data["records"] = [r.to_dict() for r in session.records]
            exported.append(data)
        return {
            "sessions": exported,
            "statistics": self.get_session_statistics(),
            "export_timestamp": datetime.now().isoformat()
        }
