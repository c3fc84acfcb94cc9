"""
交叉验证评估
k 折评估（方法 × 模态子集 × 观测比例）、Mann-Whitney U 检验，以及精度/耗时随集合大小的变化
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
from scipy.stats import PermutationMethod, mannwhitneyu

from utils.debug_logger import get_debug_logger
from .basis import BasisModel
from .data_model import Demonstration, Observation, check_layout
from .errors import ConfigurationError, InsufficientDataError, LayoutMismatchError
from .filter_builder import FilterBuilder
from .filters import forecast_phase, predict_trajectory
from .interaction_engine import run_interaction
from .model_config import RunConfig, get_run_config
from .priors import DemonstrationCorpus, estimate_measurement_noise
from .simulator import ScenarioSpec, observations_from_demo, observed_ticks
from .state_manager import FilterKind

DEFAULT_FRACTIONS = (0.43, 0.82)
DEFAULT_TARGET_MODALITY = "ball"

# 报告中突出显示的集合大小
HIGHLIGHTED_ENSEMBLE_SIZE = 80

# 精确检验的最大样本量
EXACT_TEST_LIMIT = 20
PERMUTATION_RESAMPLES = 9999


class Predictor(Protocol):
    """可被评估的预测器：给定训练语料与观测，给出终止时间步的 D 维预测"""
    name: str

    def predict_terminal(self, train: DemonstrationCorpus, model: BasisModel, noise: np.ndarray,
                         observations: Sequence[Observation], terminal_tick: int,
                         rng: np.random.Generator) -> np.ndarray:
        ...


class PerfectPredictor:
    """评估框架自检用：按第一条观测找到对应的真值示教并直接返回真值"""

    name = "perfect"

    def __init__(self, demos: Sequence[Demonstration]):
        self.demos = list(demos)

    def predict_terminal(self, train, model, noise, observations, terminal_tick, rng) -> np.ndarray:
        first = next((o for o in observations if o.has_measurement), None)
        if first is None:
            raise InsufficientDataError("完美预测器需要至少一条有效观测来定位示教")
        for demo in self.demos:
            column = demo.samples[:, first.tick]
            if np.array_equal(column[first.mask], first.values[first.mask]):
                return demo.samples[:, terminal_tick]
        raise InsufficientDataError("完美预测器没有找到匹配的示教")


MethodSpec = Union[str, FilterKind, Predictor]


@dataclass
class CellResult:
    """一个评估单元 (方法 × 模态子集 × 观测比例)"""
    method: str
    subset: Tuple[str, ...]
    fraction: float
    joint_mse_folds: List[float] = field(default_factory=list)
    target_mae_folds: List[float] = field(default_factory=list)
    latencies: List[float] = field(default_factory=list)

    @staticmethod
    def _standard_error(values: Sequence[float]) -> float:
        if len(values) < 2:
            return 0.0
        return float(np.std(values, ddof=1) / np.sqrt(len(values)))

    @property
    def joint_mse_mean(self) -> float:
        return float(np.mean(self.joint_mse_folds))

    @property
    def joint_mse_se(self) -> float:
        return self._standard_error(self.joint_mse_folds)

    @property
    def target_mae_mean(self) -> float:
        return float(np.mean(self.target_mae_folds)) if self.target_mae_folds else float("nan")

    @property
    def target_mae_se(self) -> float:
        return self._standard_error(self.target_mae_folds)

    def latency_summary(self) -> Dict[str, float]:
        if not self.latencies:
            return {"count": 0}
        values = np.asarray(self.latencies)
        return {
            "count": int(values.size),
            "median": float(np.median(values)),
            "mean": float(values.mean()),
            "p95": float(np.percentile(values, 95)),
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "subset": list(self.subset),
            "fraction": self.fraction,
            "joint_mse": {"mean": self.joint_mse_mean, "se": self.joint_mse_se, "folds": self.joint_mse_folds},
            "target_mae": {"mean": self.target_mae_mean, "se": self.target_mae_se, "folds": self.target_mae_folds},
            "latency": self.latency_summary(),
        }


@dataclass
class InferenceReport:
    """评估报告"""
    cells: List[CellResult]
    folds: int
    seed: int
    demonstrations: int
    fold_sizes: List[int]
    target_modality: str = DEFAULT_TARGET_MODALITY

    def cell(self, method: str, subset: Sequence[str], fraction: float) -> CellResult:
        for cell in self.cells:
            if cell.method == method and cell.subset == tuple(subset) and abs(cell.fraction - fraction) < 1e-12:
                return cell
        raise KeyError(f"报告中没有单元 {method} / {'+'.join(subset)} / {fraction}")

    @property
    def methods(self) -> List[str]:
        return list(dict.fromkeys(c.method for c in self.cells))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "folds": self.folds,
            "seed": self.seed,
            "demonstrations": self.demonstrations,
            "fold_sizes": self.fold_sizes,
            "target_modality": self.target_modality,
            "joint_metric": "mean squared error over controlled channels at the terminal tick (mean across channels)",
            "target_metric": f"mean absolute error over '{self.target_modality}' channels at the terminal tick",
            "cells": [c.to_dict() for c in self.cells],
        }


def _method_name(method: MethodSpec) -> str:
    if isinstance(method, FilterKind):
        return method.value
    if isinstance(method, str):
        return FilterKind.parse(method).value
    return method.name


def _filter_terminal_predictions(
    kind: FilterKind,
    train: DemonstrationCorpus,
    model: BasisModel,
    noise: np.ndarray,
    observations: Sequence[Observation],
    checkpoints: Sequence[int],
    terminal_tick: int,
    config: RunConfig,
    rng: np.random.Generator,
) -> Tuple[Dict[int, np.ndarray], List[float]]:
    """
    一次运行到最大观测数，在每个检查点（已观测数）处截取状态并外推到终止时间步

    终止相位 φ_T = φ̂ + φ̇̂·((T−1) − t_last)，截断到 [0, 1.1]。
    """
    method_config = config.with_overrides(filter_kind=kind)
    setup = FilterBuilder(method_config).build(train, model, noise, rng)

    states = {}
    latencies = []
    if 0 in checkpoints:
        states[0] = (setup.initial_state, 0)

    wanted = {count - 1: count for count in checkpoints if count > 0}
    stream = run_interaction(train, model, noise, observations, method_config, setup=setup, rng=rng) if wanted else ()
    for output in stream:
        if output.measured:
            latencies.append(output.duration)
        if output.tick in wanted:
            states[wanted[output.tick]] = (output.state, output.tick)

    predictions = {}
    for count, (state, last_tick) in states.items():
        phase = forecast_phase(state, terminal_tick - last_tick)
        predictions[count] = predict_trajectory(state, model, phase)[:, 0]
    return predictions, latencies


def _validate_subsets(layout, subsets: Sequence[Sequence[str]]) -> List[Tuple[str, ...]]:
    result = []
    for subset in subsets:
        subset = tuple(subset)
        if not subset:
            raise ConfigurationError("模态子集不能为空")
        for name in subset:
            try:
                layout.modality(name)
            except LayoutMismatchError:
                raise ConfigurationError(f"模态子集中的 '{name}' 不在布局 {layout.names} 中")
        result.append(subset)
    return result


def kfold_evaluate(
    demos: Sequence[Demonstration],
    model: BasisModel,
    methods: Sequence[MethodSpec],
    subsets: Optional[Sequence[Sequence[str]]] = None,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    folds: int = 10,
    seed: int = 0,
    config: Optional[RunConfig] = None,
    scenario: Optional[ScenarioSpec] = None,
    target_modality: str = DEFAULT_TARGET_MODALITY,
) -> InferenceReport:
    """
    k 折交叉验证

    示教先随机打乱再分成 k 折；每折用其余 k−1 折训练先验与 R，对留出的示教在各观测比例处
    推理（子集之外的模态 mask 为 False），与真值比较终止时间步上的误差。
    同一 seed 下结果可复现，随机数按 (seed, 折, 子集, 示教) 派生，不同方法之间成对。
    """
    config = config or get_run_config()
    demos = list(demos)
    if folds < 2:
        raise ConfigurationError(f"折数必须 >= 2: {folds}")
    if len(demos) < folds:
        raise InsufficientDataError(f"示教数量 {len(demos)} 少于折数 {folds}")
    if not methods:
        raise ConfigurationError("至少需要一个评估方法")
    for demo in demos:
        check_layout(model.layout, demo.layout, "示教")
    layout = model.layout
    subsets = _validate_subsets(layout, subsets or [tuple(m.name for m in layout.modalities)])
    fractions = [float(f) for f in fractions]
    if not fractions or any(not 0.0 <= f <= 1.0 for f in fractions):
        raise ConfigurationError(f"观测比例必须位于 [0, 1]: {fractions}")
    try:
        target_mask = layout.subset_mask([target_modality])
    except LayoutMismatchError:
        target_mask = np.zeros(layout.total_dofs, dtype=bool)
    controlled = layout.controlled_mask

    corpus = DemonstrationCorpus.from_demonstrations(demos, model, config.ridge)
    order = np.random.default_rng(seed).permutation(len(demos))
    test_folds = [np.sort(f) for f in np.array_split(order, folds)]
    names = [_method_name(m) for m in methods]
    logger = get_debug_logger()

    def run_fold(fold: int, method: MethodSpec, subset_index: int) -> Dict[float, Tuple[float, float, List[float]]]:
        test_indices = test_folds[fold]
        train_indices = np.setdiff1d(np.arange(len(demos)), test_indices)
        train = corpus.subset(train_indices)
        train_demos = [demos[i] for i in train_indices]
        noise = estimate_measurement_noise(train_demos, model, train.weights)

        joint = {f: [] for f in fractions}
        target = {f: [] for f in fractions}
        latencies = {f: [] for f in fractions}
        for demo_index in test_indices:
            demo = demos[demo_index]
            rng = np.random.default_rng([seed, fold, subset_index, int(demo_index)])
            counts = {f: observed_ticks(demo.duration, f) for f in fractions}
            stream = observations_from_demo(demo, scenario, max(counts.values()), subsets[subset_index])
            terminal = demo.duration - 1

            if isinstance(method, (str, FilterKind)):
                predictions, lat = _filter_terminal_predictions(
                    FilterKind.parse(method), train, model, noise, stream,
                    sorted(set(counts.values())), terminal, config, rng,
                )
            else:
                predictions = {
                    c: np.asarray(method.predict_terminal(train, model, noise, stream[:c], terminal, rng))
                    for c in sorted(set(counts.values()))
                }
                lat = []

            truth = demo.samples[:, terminal]
            for f in fractions:
                error = predictions[counts[f]] - truth
                joint[f].append(float(np.mean(error[controlled] ** 2)))
                if target_mask.any():
                    target[f].append(float(np.mean(np.abs(error[target_mask]))))
                latencies[f].extend(lat)

        return {
            f: (float(np.mean(joint[f])), float(np.mean(target[f])) if target[f] else None, latencies[f])
            for f in fractions
        }

    tasks = [
        (fold, m_index, s_index)
        for m_index in range(len(methods))
        for s_index in range(len(subsets))
        for fold in range(folds)
    ]
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(lambda t: run_fold(t[0], methods[t[1]], t[2]), tasks))
    else:
        results = [run_fold(fold, methods[m], s) for fold, m, s in tasks]

    cells: Dict[Tuple[int, int, float], CellResult] = {}
    for (fold, m_index, s_index), result in zip(tasks, results):
        for f, (joint_mse, target_mae, lat) in result.items():
            key = (m_index, s_index, f)
            if key not in cells:
                cells[key] = CellResult(names[m_index], subsets[s_index], f)
            cells[key].joint_mse_folds.append(joint_mse)
            if target_mae is not None:
                cells[key].target_mae_folds.append(target_mae)
            cells[key].latencies.extend(lat)

    ordered = [cells[(m, s, f)] for m in range(len(methods)) for s in range(len(subsets)) for f in fractions]
    for cell in ordered:
        logger.log_evaluation(cell.method, cell.subset, cell.fraction, cell.to_dict())

    return InferenceReport(
        cells=ordered,
        folds=folds,
        seed=seed,
        demonstrations=len(demos),
        fold_sizes=[int(f.size) for f in test_folds],
        target_modality=target_modality,
    )


def mann_whitney_u(sample_a: Sequence[float], sample_b: Sequence[float], seed: int = 0) -> Tuple[float, float]:
    """
    双侧 Mann-Whitney U 检验，返回 (sample_a 的 U, p)

    两组样本量都不超过 20 时：没有并列值用精确分布，有并列值用置换分布（组合数不超过 9999 时
    完全枚举，否则按 seed 抽样）。更大的样本用带并列校正的正态近似。
    两组全部取值相同时 p = 1。
    """
    a = np.asarray(sample_a, dtype=float).ravel()
    b = np.asarray(sample_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise InsufficientDataError("两组样本都不能为空")

    combined = np.concatenate((a, b))
    if np.all(combined == combined[0]):
        return a.size * b.size / 2.0, 1.0

    has_ties = np.unique(combined).size < combined.size
    if max(a.size, b.size) > EXACT_TEST_LIMIT:
        method = "asymptotic"
    elif has_ties:
        method = PermutationMethod(n_resamples=PERMUTATION_RESAMPLES, random_state=seed)
    else:
        method = "exact"
    result = mannwhitneyu(a, b, alternative="two-sided", method=method)
    return float(result.statistic), float(min(1.0, result.pvalue))


@dataclass
class CurvePoint:
    """精度/耗时随集合大小变化的一个点"""
    ensemble_size: int
    joint_mse: float
    joint_mse_se: float
    target_mae: float
    latency_median: float
    highlighted: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "ensemble_size": self.ensemble_size,
            "joint_mse": self.joint_mse,
            "joint_mse_se": self.joint_mse_se,
            "target_mae": self.target_mae,
            "latency_median": self.latency_median,
            "highlighted": self.highlighted,
        }


def accuracy_vs_ensemble(
    demos: Sequence[Demonstration],
    model: BasisModel,
    ensemble_sizes: Sequence[int],
    seed: int = 0,
    config: Optional[RunConfig] = None,
    method: Union[str, FilterKind] = FilterKind.EBIP,
    fraction: float = 0.82,
    folds: int = 10,
    scenario: Optional[ScenarioSpec] = None,
    subset: Optional[Sequence[str]] = None,
) -> List[CurvePoint]:
    """对每个集合大小运行一次 kfold_evaluate，E = 80 在报告中突出显示"""
    config = config or get_run_config()
    kind = FilterKind.parse(method)
    if not ensemble_sizes:
        raise ConfigurationError("集合大小列表为空")

    points = []
    for size in ensemble_sizes:
        sized = config.with_overrides(filter_kind=kind, ensemble_size=int(size))
        report = kfold_evaluate(
            demos, model, [kind], [subset] if subset else None, [fraction], folds, seed, sized, scenario
        )
        cell = report.cells[0]
        latency = cell.latency_summary()
        points.append(CurvePoint(
            ensemble_size=int(size),
            joint_mse=cell.joint_mse_mean,
            joint_mse_se=cell.joint_mse_se,
            target_mae=cell.target_mae_mean,
            latency_median=latency.get("median", float("nan")),
            highlighted=int(size) == HIGHLIGHTED_ENSEMBLE_SIZE,
        ))
    return points
