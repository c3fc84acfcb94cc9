"""
合成交互生成器
默认场景 toy-throw：姿态、IMU、压力、球（释放前被遮挡）四类观测模态与机器人关节受控模态
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from .data_model import Demonstration, Modality, ModalityLayout, ModalityRole, Observation
from .errors import ConfigurationError, DataError

TOY_THROW = "toy-throw"

# 球在释放后的软化斜坡宽度与压力阶跃斜率（相位单位）
BALL_RAMP_WIDTH = 0.02
PRESSURE_SLOPE = 0.06

# floor(fraction·T) 的舍入容差
_FRACTION_EPS = 1e-9


def toy_throw_layout() -> ModalityLayout:
    return ModalityLayout((
        Modality("pose", 2, ModalityRole.OBSERVED),
        Modality("imu", 2, ModalityRole.OBSERVED),
        Modality("pressure", 1, ModalityRole.OBSERVED),
        Modality("ball", 3, ModalityRole.OBSERVED),
        Modality("robot", 4, ModalityRole.CONTROLLED),
    ))


@dataclass(frozen=True)
class ScenarioSpec:
    """合成场景参数"""
    name: str = TOY_THROW
    layout: ModalityLayout = field(default_factory=toy_throw_layout)
    duration_range: Tuple[int, int] = (80, 160)
    parameter_ranges: Mapping[str, Tuple[float, float]] = field(default_factory=lambda: {
        "amplitude": (0.8, 1.2),
        "target_offset": (-0.5, 0.5),
    })
    release_phase: float = 0.43
    noise_std: Mapping[str, float] = field(default_factory=lambda: {
        "pose": 0.01,
        "imu": 0.02,
        "pressure": 0.01,
        "ball": 0.01,
        "robot": 0.0,
    })
    occlusions: Mapping[str, Tuple[Tuple[float, float], ...]] = field(default_factory=lambda: {
        "ball": ((0.0, 0.43),),
    })
    sample_rate: float = 60.0

    def __post_init__(self):
        if self.name != TOY_THROW:
            raise ConfigurationError(f"未知的场景: {self.name}")
        if self.layout != toy_throw_layout():
            raise ConfigurationError("toy-throw 场景的模态布局是固定的")
        low, high = self.duration_range
        if not 2 <= low <= high:
            raise ConfigurationError(f"时长范围无效: {self.duration_range}")
        for key in ("amplitude", "target_offset"):
            if key not in self.parameter_ranges:
                raise ConfigurationError(f"缺少任务参数范围: {key}")
            lo, hi = self.parameter_ranges[key]
            if lo > hi:
                raise ConfigurationError(f"任务参数 {key} 的范围无效: {(lo, hi)}")
        if not 0.0 < self.release_phase < 1.0:
            raise ConfigurationError("释放相位必须位于 (0, 1)")
        for name, std in self.noise_std.items():
            self.layout.modality(name)
            if std < 0:
                raise ConfigurationError(f"模态 {name} 的噪声标准差必须 >= 0")
        for name, windows in self.occlusions.items():
            self.layout.modality(name)
            for start, end in windows:
                if not 0.0 <= start <= end <= 1.0:
                    raise ConfigurationError(f"模态 {name} 的遮挡区间无效: {(start, end)}")

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "duration_range": list(self.duration_range),
            "parameter_ranges": {k: list(v) for k, v in self.parameter_ranges.items()},
            "release_phase": self.release_phase,
            "noise_std": dict(self.noise_std),
            "occlusions": {k: [list(w) for w in v] for k, v in self.occlusions.items()},
            "sample_rate": self.sample_rate,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ScenarioSpec":
        """未给出的字段使用默认值"""
        defaults = cls()
        return cls(
            name=data.get("name", defaults.name),
            duration_range=tuple(int(v) for v in data.get("duration_range", defaults.duration_range)),
            parameter_ranges={
                **defaults.parameter_ranges,
                **{k: tuple(float(x) for x in v) for k, v in data.get("parameter_ranges", {}).items()},
            },
            release_phase=float(data.get("release_phase", defaults.release_phase)),
            noise_std={**defaults.noise_std, **{k: float(v) for k, v in data.get("noise_std", {}).items()}},
            occlusions={
                k: tuple(tuple(float(x) for x in w) for w in v)
                for k, v in data.get("occlusions", {k: v for k, v in defaults.occlusions.items()}).items()
            },
            sample_rate=float(data.get("sample_rate", defaults.sample_rate)),
        )

    def with_noise(self, std: float) -> "ScenarioSpec":
        """所有模态使用同一个噪声标准差"""
        return ScenarioSpec(
            self.name, self.layout, self.duration_range, self.parameter_ranges,
            self.release_phase, {name: std for name in self.layout.names}, self.occlusions, self.sample_rate,
        )

    def occlusion_mask(self, phase: float) -> np.ndarray:
        """该相位下未被遮挡的自由度（区间两端都包含在遮挡内）"""
        visible = np.ones(self.layout.total_dofs, dtype=bool)
        for name, windows in self.occlusions.items():
            if any(start <= phase <= end for start, end in windows):
                visible[self.layout.dof_slice(name)] = False
        return visible


@dataclass(frozen=True)
class TaskParameters:
    """潜在任务参数 θ"""
    amplitude: float
    target_offset: float
    release_phase: float


def _softplus_ramp(phases: np.ndarray, start: float) -> np.ndarray:
    return BALL_RAMP_WIDTH * np.logaddexp(0.0, (phases - start) / BALL_RAMP_WIDTH)


def robot_targets(theta: TaskParameters) -> np.ndarray:
    """每个关节的终值 c_k(θ)"""
    a, o = theta.amplitude, theta.target_offset
    return np.array([a * (1.0 + o), o, a - 1.0 + 0.5 * o, 0.5 * (a + o)])


def underlying_signals(phases: np.ndarray, theta: TaskParameters) -> np.ndarray:
    """无噪声的 12 维信号，形状 12 × len(phases)"""
    phi = np.asarray(phases, dtype=float)
    a, o, r = theta.amplitude, theta.target_offset, theta.release_phase

    warped = phi + 0.1 * o * np.sin(np.pi * phi)
    warp_rate = 1.0 + 0.1 * o * np.pi * np.cos(np.pi * phi)

    pose = np.vstack((a * np.sin(2.0 * np.pi * warped), a * np.cos(np.pi * warped)))
    imu = np.vstack((
        a * np.cos(2.0 * np.pi * warped) * warp_rate,
        -a * np.sin(np.pi * warped) * warp_rate,
    ))
    pressure = expit((phi - r) / PRESSURE_SLOPE)[None, :]

    ramp = _softplus_ramp(phi, r)
    ball = np.vstack((
        1.5 * (1.0 + o) * ramp,
        0.5 * a + a * (1.2 * ramp - 1.5 * ramp ** 2),
        0.3 * o * ramp,
    ))

    smoothstep = 3.0 * phi ** 2 - 2.0 * phi ** 3
    robot = robot_targets(theta)[:, None] * smoothstep[None, :]
    return np.vstack((pose, imu, pressure, ball, robot))


def sample_task(scenario: ScenarioSpec, rng: np.random.Generator) -> Tuple[int, TaskParameters]:
    low, high = scenario.duration_range
    duration = int(rng.integers(low, high + 1))
    amplitude = float(rng.uniform(*scenario.parameter_ranges["amplitude"]))
    offset = float(rng.uniform(*scenario.parameter_ranges["target_offset"]))
    return duration, TaskParameters(amplitude, offset, scenario.release_phase)


def generate_demo(
    scenario: Optional[ScenarioSpec] = None,
    seed: Union[int, np.random.SeedSequence, None] = 0,
    time_scale: float = 1.0,
) -> Demonstration:
    """
    生成一次示教

    time_scale 按比例拉伸时长（2.0 表示慢一倍），任务参数与相位上的形状保持不变。
    """
    scenario = scenario or ScenarioSpec()
    if not time_scale > 0:
        raise ConfigurationError(f"时间缩放必须 > 0: {time_scale}")
    rng = np.random.default_rng(seed)
    duration, theta = sample_task(scenario, rng)
    duration = max(2, int(round(duration * time_scale)))

    phases = np.arange(duration, dtype=float) / duration
    samples = underlying_signals(phases, theta)

    std = np.zeros(scenario.layout.total_dofs)
    for name, value in scenario.noise_std.items():
        std[scenario.layout.dof_slice(name)] = value
    samples = samples + rng.standard_normal(samples.shape) * std[:, None]
    return Demonstration(scenario.layout, samples, scenario.sample_rate)


def observed_ticks(duration: int, observed_fraction: float) -> int:
    """⌊fraction·T⌋"""
    if not 0.0 <= observed_fraction <= 1.0:
        raise DataError(f"观测比例必须位于 [0, 1]: {observed_fraction}")
    return min(duration, int(math.floor(observed_fraction * duration + _FRACTION_EPS)))


def observations_from_demo(
    demo: Demonstration,
    scenario: Optional[ScenarioSpec],
    count: int,
    subset: Optional[Iterable[str]] = None,
) -> List[Observation]:
    """
    把示教的前 count 列转成观测流

    受控模态、遮挡区间内的模态（scenario 为 None 时不遮挡）以及 subset 之外的模态 mask 为 False，对应值为 NaN。
    """
    layout = demo.layout
    allowed = layout.observed_mask
    if subset is not None:
        allowed = allowed & layout.subset_mask(subset)

    stream = []
    for tick in range(count):
        mask = allowed if scenario is None else allowed & scenario.occlusion_mask(tick / demo.duration)
        values = np.where(mask, demo.samples[:, tick], np.nan)
        stream.append(Observation(values, mask, tick))
    return stream


def generate_stream(
    scenario: Optional[ScenarioSpec] = None,
    seed: Optional[int] = 0,
    observed_fraction: float = 1.0,
    time_scale: float = 1.0,
    subset: Optional[Sequence[str]] = None,
) -> Tuple[List[Observation], Demonstration]:
    """前 ⌊fraction·T⌋ 个时间步的观测与完整的真值示教"""
    scenario = scenario or ScenarioSpec()
    demo = generate_demo(scenario, seed, time_scale)
    count = observed_ticks(demo.duration, observed_fraction)
    return observations_from_demo(demo, scenario, count, subset), demo


def generate_corpus(scenario: Optional[ScenarioSpec], count: int, seed: Optional[int] = 0) -> List[Demonstration]:
    """count 次示教，第 i 次使用由 (seed, i) 派生的种子"""
    scenario = scenario or ScenarioSpec()
    seeds = np.random.SeedSequence(seed).spawn(count)
    return [generate_demo(scenario, s) for s in seeds]
