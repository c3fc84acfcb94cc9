"""
运行时间基准
单次预测+更新的耗时随状态维度的缩放（对数-对数斜率）、随集合大小的变化，以及整段观测的滤波耗时
"""

import time
import timeit
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from utils.debug_logger import get_debug_logger
from .basis import BasisFamily, BasisModel, select_basis
from .data_model import Ensemble, GaussianBelief, Modality, ModalityLayout, ModalityRole, Observation
from .errors import ConfigurationError, EnsembleSizeError
from .filters import (
    TransitionModel,
    ekf_predict,
    ekf_update,
    enkf_predict,
    enkf_update,
    pf_reweight,
    pf_step,
)
from .interaction_engine import run_interaction
from .model_config import RunConfig
from .priors import DemonstrationCorpus, estimate_measurement_noise
from .simulator import ScenarioSpec, generate_corpus, generate_demo, observations_from_demo
from .state_manager import FilterKind, ParticleState

MIN_SCALING_POINTS = 4

# 单批耗时至少为时钟分辨率的 100 倍
RESOLUTION_FACTOR = 100.0

WARMUP_FRACTION = 0.1

SYNTHETIC_DOFS = 4


def _timer_resolution() -> float:
    return time.get_clock_info("perf_counter").resolution


@dataclass
class TimingResult:
    """一组重复测量的统计"""
    median: float
    repeats: int
    number: int
    samples: List[float] = field(default_factory=list)


def measure(func, trials: int = 20) -> TimingResult:
    """
    timeit 风格的重复测量

    每批调用 number 次，number 从 1 开始翻倍直到单批耗时不低于时钟分辨率的 100 倍；
    丢弃前 10% 的批次作为预热，返回单次调用耗时的中位数。
    """
    if trials < 2:
        raise ConfigurationError(f"重复次数必须 >= 2: {trials}")
    timer = timeit.Timer(func, timer=time.perf_counter)
    threshold = RESOLUTION_FACTOR * _timer_resolution()

    number = 1
    while timer.timeit(number) < threshold:
        number *= 2

    samples = [t / number for t in timer.repeat(repeat=trials, number=number)]
    warmup = int(np.ceil(WARMUP_FRACTION * trials))
    kept = samples[warmup:]
    return TimingResult(float(np.median(kept)), trials, number, kept)


def synthetic_model(weight_dimension: int) -> BasisModel:
    """2 个观测 + 2 个受控自由度，weight_dimension 个高斯基权重尽量均分"""
    if weight_dimension < SYNTHETIC_DOFS:
        raise ConfigurationError(f"维度必须 >= {SYNTHETIC_DOFS}: {weight_dimension}")
    layout = ModalityLayout((
        Modality("observed", 2, ModalityRole.OBSERVED),
        Modality("controlled", 2, ModalityRole.CONTROLLED),
    ))
    counts = [len(block) for block in np.array_split(np.arange(weight_dimension), SYNTHETIC_DOFS)]
    return BasisModel(layout, tuple(BasisFamily.gaussian(c) for c in counts))


@dataclass
class SyntheticProblem:
    model: BasisModel
    belief: GaussianBelief
    ensemble: Ensemble
    observation: Observation
    noise: np.ndarray


def synthetic_problem(weight_dimension: int, ensemble_size: int, seed: int = 0) -> SyntheticProblem:
    """给定维度的合成置信度、集合与一条观测"""
    rng = np.random.default_rng(seed)
    model = synthetic_model(weight_dimension)
    n = model.state_dimension

    members = np.column_stack((
        rng.uniform(0.2, 0.3, ensemble_size),
        rng.uniform(0.009, 0.011, ensemble_size),
        rng.standard_normal((ensemble_size, weight_dimension)),
    ))
    factor = rng.standard_normal((n, n)) / np.sqrt(n)
    covariance = factor @ factor.T + 1e-3 * np.eye(n)
    belief = GaussianBelief(members.mean(axis=0), 0.5 * (covariance + covariance.T))

    mask = model.layout.observed_mask
    values = np.where(mask, rng.standard_normal(model.dof_count), np.nan)
    return SyntheticProblem(model, belief, Ensemble(members), Observation(values, mask, 1), np.full(model.dof_count, 0.01))


def _step_function(method: FilterKind, problem: SyntheticProblem, transition: TransitionModel, seed: int):
    rng = np.random.default_rng(seed)
    if method == FilterKind.BIP:
        return lambda: ekf_update(ekf_predict(problem.belief, transition), problem.observation, problem.model, problem.noise)
    if method == FilterKind.PF:
        particles = ParticleState.uniform(problem.ensemble)
        return lambda: pf_step(particles, problem.observation, problem.model, problem.noise, transition, rng)
    return lambda: enkf_update(
        enkf_predict(problem.ensemble, transition, rng), problem.observation, problem.model, problem.noise, rng
    )


def _update_function(method: FilterKind, problem: SyntheticProblem, seed: int):
    rng = np.random.default_rng(seed)
    if method == FilterKind.PF:
        particles = ParticleState.uniform(problem.ensemble)
        return lambda: pf_reweight(particles, problem.observation, problem.model, problem.noise, rng)
    return lambda: enkf_update(problem.ensemble, problem.observation, problem.model, problem.noise, rng)


@dataclass
class ScalingReport:
    """耗时随维度缩放的报告"""
    method: str
    ensemble_size: int
    dims: List[int]
    medians: List[float]
    repetitions: List[int]
    slope: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "ensemble_size": self.ensemble_size,
            "dims": self.dims,
            "median_seconds": self.medians,
            "calls_per_batch": self.repetitions,
            "loglog_slope": self.slope,
        }


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """log(y) 对 log(x) 的最小二乘斜率"""
    return float(np.polyfit(np.log(np.asarray(xs, dtype=float)), np.log(np.asarray(ys, dtype=float)), 1)[0])


def runtime_benchmark(
    dims: Sequence[int],
    ensemble_size: int = 80,
    method: Union[str, FilterKind] = FilterKind.EBIP,
    trials: int = 20,
    seed: int = 0,
    process_noise: float = 1e-8,
) -> ScalingReport:
    """
    单次预测+更新的中位耗时随维度 n（权重维度）的变化，并拟合对数-对数斜率

    dims 必须严格递增且至少 4 个点。
    """
    kind = FilterKind.parse(method)
    dims = [int(d) for d in dims]
    if len(dims) < MIN_SCALING_POINTS:
        raise ConfigurationError(f"斜率拟合至少需要 {MIN_SCALING_POINTS} 个维度，当前 {len(dims)}")
    if any(b <= a for a, b in zip(dims, dims[1:])):
        raise ConfigurationError(f"维度必须严格递增: {dims}")
    if kind.uses_ensemble and ensemble_size < 2:
        raise EnsembleSizeError(f"集合大小必须 >= 2: {ensemble_size}")

    transition = TransitionModel(1.0, process_noise)
    medians, repetitions = [], []
    for dim in dims:
        problem = synthetic_problem(dim, ensemble_size, seed)
        timing = measure(_step_function(kind, problem, transition, seed), trials)
        medians.append(timing.median)
        repetitions.append(timing.number)

    report = ScalingReport(kind.value, ensemble_size, dims, medians, repetitions, loglog_slope(dims, medians))
    get_debug_logger().log_benchmark(f"runtime_{kind.value}", report.to_dict())
    return report


def ensemble_size_benchmark(
    dim: int,
    ensemble_sizes: Sequence[int],
    method: Union[str, FilterKind] = FilterKind.EBIP,
    trials: int = 20,
    seed: int = 0,
) -> Dict[int, float]:
    """
    固定维度下，单次更新的中位耗时随集合大小的变化

    只计更新步骤：集合卡尔曼更新中 E×E 的权重矩阵乘偏差矩阵是 O(E²n) 的部分。
    """
    kind = FilterKind.parse(method)
    if not kind.uses_ensemble:
        raise ConfigurationError("集合大小基准只适用于基于集合的方法")
    result = {}
    for size in ensemble_sizes:
        if size < 2:
            raise EnsembleSizeError(f"集合大小必须 >= 2: {size}")
        problem = synthetic_problem(dim, int(size), seed)
        result[int(size)] = measure(_update_function(kind, problem, seed), trials).median
    get_debug_logger().log_benchmark(f"ensemble_{kind.value}", {str(k): v for k, v in result.items()})
    return result


def sequence_length_benchmark(
    lengths: Sequence[int],
    methods: Sequence[Union[str, FilterKind]] = (FilterKind.BIP, FilterKind.EBIP, FilterKind.PF),
    training_size: int = 30,
    seed: int = 0,
    config: Optional[RunConfig] = None,
    candidates: Optional[Sequence[BasisFamily]] = None,
) -> Dict[str, List[float]]:
    """
    对长度不同的观测序列，每种方法完成整段滤波的总耗时（秒）

    训练语料与留出示教都来自 toy-throw 场景，留出示教的时长不短于最长的序列。
    """
    lengths = [int(n) for n in lengths]
    if not lengths or min(lengths) < 1:
        raise ConfigurationError(f"序列长度必须为正: {lengths}")
    config = config or RunConfig()
    scenario = ScenarioSpec()
    demos = generate_corpus(scenario, training_size, seed)
    model = select_basis(demos, candidates or [BasisFamily.gaussian(8)], config.ridge)
    corpus = DemonstrationCorpus.from_demonstrations(demos, model, config.ridge)
    noise = estimate_measurement_noise(demos, model, corpus.weights)

    longest = max(lengths)
    held_out_scenario = ScenarioSpec(duration_range=(longest, longest))
    held_out = generate_demo(held_out_scenario, seed + 1)

    result: Dict[str, List[float]] = {}
    for method in methods:
        kind = FilterKind.parse(method)
        method_config = config.with_overrides(filter_kind=kind, seed=seed)
        timings = []
        for length in lengths:
            stream = observations_from_demo(held_out, scenario, length)
            started = time.perf_counter()
            for _ in run_interaction(corpus, model, noise, stream, method_config):
                pass
            timings.append(time.perf_counter() - started)
        result[kind.value] = timings

    get_debug_logger().log_benchmark("sequence_length", {"lengths": lengths, **result})
    return result
