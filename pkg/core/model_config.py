"""
运行配置管理
一次训练、推理、评估或基准测试所需的全部参数，支持 .env / EBIP_* 环境变量覆盖
"""

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from dotenv import load_dotenv

from .errors import ConfigurationError, EnsembleSizeError
from .state_manager import FilterKind

# GMM 先验下的默认集合大小
DEFAULT_GMM_ENSEMBLE_SIZE = 80

PRIOR_MODES = ("direct", "gmm")

# 环境变量 → 字段
ENV_FIELDS = {
    "EBIP_SEED": ("seed", int),
    "EBIP_FILTER": ("filter_kind", str),
    "EBIP_ENSEMBLE_SIZE": ("ensemble_size", int),
    "EBIP_PROCESS_NOISE": ("process_noise", float),
    "EBIP_VELOCITY_SPREAD": ("velocity_spread", float),
    "EBIP_RIDGE": ("ridge", float),
    "EBIP_WORKERS": ("workers", int),
    "EBIP_DEBUG": ("debug", lambda v: v.strip().lower() in ("1", "true", "yes", "on")),
    "EBIP_DEBUG_DIR": ("debug_dir", str),
}


@dataclass
class RunConfig:
    """运行配置类"""

    seed: int = 0
    filter_kind: FilterKind = FilterKind.EBIP

    # None: 直接采样时取训练示教数量，GMM 先验时取 80
    ensemble_size: Optional[int] = None

    # 过程噪声强度 q（每个时间步），φ̇ 每步的随机游走方差为 q
    process_noise: float = 1e-8
    ridge: float = 1e-8
    prior_mode: Optional[str] = None
    with_replacement: bool = False
    inflation: float = 1.0
    phase_variance: float = 1e-6
    # 初始 φ̇ 的相对标准差下限
    velocity_spread: float = 0.35
    time_delta: float = 1.0

    # GMM 先验
    gmm_components: Tuple[int, ...] = (1, 2, 3)
    gmm_reg_covar: float = 0.0
    psd_tolerance: float = 1e-10

    # 输出的时间步数，None 表示由观测与先验相位速度决定
    horizon: Optional[int] = None
    workers: int = 1
    verbose: bool = False
    debug: bool = False
    debug_dir: str = "debug_logs"

    paths: Dict[str, Path] = field(default_factory=dict)

    def __post_init__(self):
        """后处理与校验"""
        self.filter_kind = FilterKind.parse(self.filter_kind)
        self.gmm_components = tuple(int(k) for k in self.gmm_components)
        self.paths = {name: Path(p) for name, p in self.paths.items() if p is not None}

        if self.ensemble_size is not None and self.ensemble_size < 2:
            raise EnsembleSizeError(f"集合大小必须 >= 2: {self.ensemble_size}")
        if self.prior_mode is not None and self.prior_mode not in PRIOR_MODES:
            raise ConfigurationError(f"未知的先验模式 '{self.prior_mode}'，可选: {', '.join(PRIOR_MODES)}")
        if self.process_noise < 0:
            raise ConfigurationError("过程噪声强度必须 >= 0")
        if self.ridge < 0:
            raise ConfigurationError("岭参数必须 >= 0")
        if self.inflation <= 0:
            raise ConfigurationError("膨胀系数必须 > 0")
        if self.phase_variance < 0:
            raise ConfigurationError("相位方差必须 >= 0")
        if self.velocity_spread < 0:
            raise ConfigurationError("相位速度相对标准差下限必须 >= 0")
        if not self.time_delta > 0:
            raise ConfigurationError("Δt 必须 > 0")
        if not self.gmm_components or min(self.gmm_components) < 1:
            raise ConfigurationError("GMM 分量数候选必须为正整数")
        if self.horizon is not None and self.horizon < 1:
            raise ConfigurationError("输出时间步数必须 >= 1")
        if self.workers < 1:
            raise ConfigurationError("workers 必须 >= 1")

    @classmethod
    def from_env(cls, env_file: Optional[str] = None, **overrides) -> "RunConfig":
        """读取 .env 与 EBIP_* 环境变量，再应用显式参数"""
        load_dotenv(env_file, override=False)
        values: Dict[str, Any] = {}
        for variable, (name, convert) in ENV_FIELDS.items():
            raw = os.getenv(variable)
            if raw is None or raw == "":
                continue
            try:
                values[name] = convert(raw)
            except ValueError:
                raise ConfigurationError(f"环境变量 {variable}={raw!r} 无法解析")
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def from_args(cls, args: Any, base: Optional["RunConfig"] = None) -> "RunConfig":
        """用命令行参数覆盖配置，命令行中为 None 的参数不生效"""
        config = base or cls.from_env()
        known = {f.name for f in fields(cls)}
        updates = {
            name: value for name, value in vars(args).items()
            if name in known and name != "paths" and value is not None
        }
        paths = dict(config.paths)
        for name in ("corpus", "model", "stream", "scenario", "candidates", "out"):
            value = getattr(args, name, None)
            if value is not None:
                paths[name] = Path(value)
        return replace(config, **updates, paths=paths)

    @classmethod
    def get_default_config(cls) -> "RunConfig":
        """获取默认配置"""
        return cls()

    @property
    def resolved_prior_mode(self) -> str:
        return self.prior_mode or self.filter_kind.default_prior_mode

    def resolve_ensemble_size(self, training_size: int) -> int:
        """实际使用的集合大小"""
        if self.ensemble_size is not None:
            return self.ensemble_size
        if self.resolved_prior_mode == "gmm":
            return DEFAULT_GMM_ENSEMBLE_SIZE
        return training_size

    def validate_paths(self, *names: str):
        """所有引用的输入路径必须存在"""
        for name in names or tuple(self.paths):
            path = self.paths.get(name)
            if path is None:
                raise ConfigurationError(f"缺少路径参数: {name}")
            if name != "out" and not path.exists():
                raise ConfigurationError(f"路径不存在: {path}")

    def with_overrides(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data["filter_kind"] = self.filter_kind.value
        data["gmm_components"] = list(self.gmm_components)
        data["paths"] = {k: str(v) for k, v in self.paths.items()}
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


# 全局配置实例
run_config = RunConfig.get_default_config()


def set_run_config(config: Optional[RunConfig]):
    """设置当前运行配置"""
    global run_config
    run_config = config or RunConfig.get_default_config()


def get_run_config() -> RunConfig:
    """获取当前运行配置"""
    return run_config
