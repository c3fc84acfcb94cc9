"""
交互推理引擎
初始化 → (预测 → 有观测时更新 → 输出矩与 ŷ) 循环，直到观测流结束
"""

import time
import traceback
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional

import numpy as np

from utils.debug_logger import get_debug_logger
from .basis import BasisModel
from .data_model import GaussianBelief, Observation
from .errors import DataError, EbipError
from .filter_builder import FilterBuilder, FilterSetup
from .filters import predict_trajectory, state_mean, state_moments
from .model_config import RunConfig, get_run_config
from .priors import DemonstrationCorpus
from .state_manager import FilterState, ParticleState, StateManager, TickRecord


@dataclass
class InteractionOutput:
    """单个时间步的输出：更新后的矩与 ŷ = h(μ)"""
    tick: int
    belief: GaussianBelief
    y_hat: np.ndarray
    state: FilterState
    measured: bool = False
    duration: float = 0.0

    @property
    def resampled(self) -> bool:
        return isinstance(self.state, ParticleState) and self.state.resampled

    def to_record(self) -> TickRecord:
        return TickRecord(
            tick=self.tick,
            phase_mean=self.belief.phase,
            phase_var=self.belief.phase_variance,
            y_hat=self.y_hat,
            measured=self.measured,
            duration=self.duration,
            resampled=self.resampled,
        )


def _emit(setup: FilterSetup, state: FilterState, tick: int, measured: bool, duration: float) -> InteractionOutput:
    moments = state_moments(state)
    y_hat = predict_trajectory(state, setup.step.model, moments.phase)[:, 0]
    return InteractionOutput(tick, moments, y_hat, state, measured, duration)


def _tagged(error: EbipError, tick: int) -> EbipError:
    return error if error.tick is not None else error.with_tick(tick)


def run_interaction(
    corpus: DemonstrationCorpus,
    model: BasisModel,
    noise: np.ndarray,
    observations: Iterable[Observation],
    config: Optional[RunConfig] = None,
    horizon: Optional[int] = None,
    setup: Optional[FilterSetup] = None,
    rng: Optional[np.random.Generator] = None,
) -> Iterator[InteractionOutput]:
    """
    逐时间步运行滤波器

    滤波器从 tick 0、φ = 0 开始；处理 tick t 之前，对每个经过的时间步做一次预测，
    因此 tick 0 的观测不经过预测直接更新。没有观测的时间步只做预测。
    输出 tick 0 … H-1，H = max(horizon, 最后观测 tick + 1)；没有观测也没有 horizon 时 H = round(1/φ̇₀)。
    同一配置与输入下输出逐位相同。已构建好的 setup 必须与构建它时使用的 rng 一起传入。
    """
    config = config or get_run_config()
    horizon = horizon if horizon is not None else config.horizon
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if setup is None:
        setup = FilterBuilder(config).build(corpus, model, noise, rng)
    step = setup.step
    state = setup.initial_state

    tick = 0
    emitted = False
    seen_any = False

    def advance(current: FilterState, at_tick: int) -> FilterState:
        try:
            return step.predict(current, rng)
        except EbipError as e:
            raise _tagged(e, at_tick)

    for observation in observations:
        if observation.dimension != model.dof_count:
            raise DataError(f"观测维度 {observation.dimension} 与模型 {model.dof_count} 不一致", observation.tick)
        if observation.tick < tick or (observation.tick == tick and emitted):
            raise DataError("观测流的时间步必须严格递增", observation.tick)
        seen_any = True

        if emitted:
            tick += 1
            state = advance(state, tick)
            emitted = False
        while tick < observation.tick:
            yield _emit(setup, state, tick, False, 0.0)
            tick += 1
            state = advance(state, tick)

        started = time.perf_counter()
        if observation.has_measurement:
            try:
                state = step.update(state, observation, rng)
            except EbipError as e:
                raise _tagged(e, tick)
        duration = time.perf_counter() - started
        yield _emit(setup, state, tick, observation.has_measurement, duration)
        emitted = True

    if horizon is not None:
        total = max(int(horizon), tick + 1 if seen_any else 0)
    elif seen_any:
        total = tick + 1
    else:
        total = max(1, int(round(1.0 / state_mean(state)[1])))

    while (tick + 1 if emitted else tick) < total:
        if emitted:
            tick += 1
            state = advance(state, tick)
        yield _emit(setup, state, tick, False, 0.0)
        emitted = True


class InteractionEngine:
    """交互推理引擎核心"""

    def __init__(self, corpus: DemonstrationCorpus, model: BasisModel, noise: np.ndarray,
                 config: Optional[RunConfig] = None):
        self.corpus = corpus
        self.model = model
        self.noise = np.asarray(noise, dtype=float)
        self.config = config or get_run_config()

        self.state_manager = StateManager()
        self.debug_logger = get_debug_logger()

        # 进度回调函数
        self.progress_callback: Optional[Callable] = None
        self.step_callback: Optional[Callable] = None
        self.error_callback: Optional[Callable] = None

        if self.config.verbose:
            print(f"🤖 滤波配置:")
            print(f"  滤波器: {self.config.filter_kind.value}")
            print(f"  先验模式: {self.config.resolved_prior_mode}")
            print(f"  训练示教: {corpus.size}，权重维度: {corpus.weight_dimension}")

    def set_callbacks(self, progress_callback=None, step_callback=None, error_callback=None):
        """设置回调函数"""
        if progress_callback:
            self.progress_callback = progress_callback
        if step_callback:
            self.step_callback = step_callback
        if error_callback:
            self.error_callback = error_callback

    def run(self, observations: Iterable[Observation], horizon: Optional[int] = None) -> Dict[str, Any]:
        """
        执行一次完整的交互

        Returns:
            结果字典：outputs（逐时间步输出）、session（会话摘要）、statistics
        """
        self.debug_logger.log_filter_step(
            "interaction_start",
            "running",
            data={
                "filter_kind": self.config.filter_kind.value,
                "seed": self.config.seed,
                "horizon": horizon,
            }
        )

        rng = np.random.default_rng(self.config.seed)
        setup = FilterBuilder(self.config).build(self.corpus, self.model, self.noise, rng)
        self.state_manager.start_session(setup.kind, setup.ensemble_size)
        self._notify_step(f"初始化完成: {setup.kind.value}, 先验 {setup.prior_mode}")

        outputs: List[InteractionOutput] = []
        try:
            stream = run_interaction(
                self.corpus, self.model, self.noise, observations, self.config, horizon, setup=setup, rng=rng
            )
            for output in stream:
                outputs.append(output)
                self.state_manager.record_tick(output.to_record())
                if output.measured:
                    self.debug_logger.log_filter_step(
                        "update",
                        "completed",
                        tick=output.tick,
                        data={"phase": output.belief.phase},
                        duration=output.duration,
                    )
                if output.resampled:
                    self.debug_logger.log_decision(
                        "resample", f"tick {output.tick}: ESS < E/2", "systematic"
                    )
                self._notify_progress(f"tick {output.tick}", output.tick)

        except EbipError as e:
            error_msg = f"交互过程中发生错误: {e}"
            self.state_manager.fail_session(error_msg)
            self.debug_logger.log_error(
                error_type=type(e).__name__,
                error_message=error_msg,
                context={"tick": e.tick, "filter_kind": self.config.filter_kind.value},
                stacktrace=traceback.format_exc()
            )
            self._notify_error(error_msg)
            raise

        self.state_manager.complete_session()
        summary = self.state_manager.get_session_summary()
        self.debug_logger.log_filter_step(
            "interaction_complete",
            "completed",
            data={"ticks": len(outputs), "measured": summary.get("measured_ticks", 0)}
        )
        return {
            "success": True,
            "outputs": outputs,
            "session": summary,
            "statistics": self.state_manager.get_session_statistics(),
        }

    def _notify_progress(self, message: str, tick: int):
        """通知进度更新"""
        if self.progress_callback:
            self.progress_callback(message, tick)

    def _notify_step(self, message: str):
        """通知步骤更新"""
        if self.step_callback:
            self.step_callback(message)
        if self.config.verbose:
            print(f"🔄 {message}")

    def _notify_error(self, message: str):
        """通知错误"""
        if self.error_callback:
            self.error_callback(message)
        if self.config.verbose:
            print(f"❌ {message}")
