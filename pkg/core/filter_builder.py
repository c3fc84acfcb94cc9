"""
滤波器构建器
根据运行配置与训练语料构造初始置信度，并把预测/更新步骤分派到对应的滤波器
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from utils.debug_logger import get_debug_logger
from .basis import BasisModel
from .data_model import Ensemble, Observation, check_layout
from .errors import ConfigurationError, DataError
from .filters import (
    TransitionModel,
    ekf_predict,
    ekf_update,
    enkf_predict,
    enkf_update,
    inflate_ensemble,
    pf_reweight,
)
from .model_config import RunConfig
from .priors import (
    DIRECT_MODE,
    GMM_MODE,
    DemonstrationCorpus,
    GmmPrior,
    build_gaussian_prior,
    fit_gmm_with_fallback,
    sample_ensemble,
    widen_velocity,
)
from .state_manager import FilterKind, FilterState, ParticleState


class RecursiveFilter:
    """一种滤波器的预测与更新步骤"""

    def __init__(self, kind: FilterKind, model: BasisModel, noise: np.ndarray,
                 transition: TransitionModel, inflation: float = 1.0):
        self.kind = kind
        self.model = model
        self.noise = np.asarray(noise, dtype=float)
        self.transition = transition
        self.inflation = inflation

        if self.noise.shape not in ((model.dof_count,), (model.dof_count, model.dof_count)):
            raise DataError(f"测量噪声形状 {self.noise.shape} 与自由度数量 {model.dof_count} 不一致")

    def predict(self, state: FilterState, rng: np.random.Generator) -> FilterState:
        if self.kind == FilterKind.BIP:
            return ekf_predict(state, self.transition)
        if self.kind == FilterKind.PF:
            return ParticleState(enkf_predict(state.members, self.transition, rng), state.weights)
        predicted = enkf_predict(state, self.transition, rng)
        return inflate_ensemble(predicted, self.inflation)

    def update(self, state: FilterState, observation: Observation, rng: np.random.Generator) -> FilterState:
        if self.kind == FilterKind.BIP:
            return ekf_update(state, observation, self.model, self.noise)
        if self.kind == FilterKind.PF:
            return pf_reweight(state, observation, self.model, self.noise, rng)
        return enkf_update(state, observation, self.model, self.noise, rng)


@dataclass
class FilterSetup:
    """构建结果"""
    kind: FilterKind
    initial_state: FilterState
    step: RecursiveFilter
    prior_mode: str
    ensemble_size: Optional[int] = None
    gmm: Optional[GmmPrior] = None

    @property
    def fallback_used(self) -> bool:
        return bool(self.gmm is not None and self.gmm.fallback)


class FilterBuilder:
    """根据配置构建滤波器"""

    def __init__(self, config: RunConfig):
        self.config = config
        self.debug_logger = get_debug_logger()

    def transition_model(self) -> TransitionModel:
        return TransitionModel(self.config.time_delta, self.config.process_noise)

    def build(self, corpus: DemonstrationCorpus, model: BasisModel, noise: np.ndarray,
              rng: np.random.Generator) -> FilterSetup:
        """构造初始状态（相位为 0）与步骤函数"""
        check_layout(model.layout, corpus.layout, "语料")
        if corpus.weight_dimension != model.weight_dimension:
            raise DataError(
                f"语料权重维度 {corpus.weight_dimension} 与模型 {model.weight_dimension} 不一致"
            )

        kind = self.config.filter_kind
        step = RecursiveFilter(kind, model, noise, self.transition_model(), self.config.inflation)

        if kind == FilterKind.BIP:
            belief = build_gaussian_prior(corpus, self.config.phase_variance, self.config.velocity_spread)
            self.debug_logger.log_decision("prior", "filter=bip", "gaussian", {"N": corpus.size})
            return FilterSetup(kind, belief, step, "gaussian")

        prior_mode = self.config.resolved_prior_mode
        size = self.config.resolve_ensemble_size(corpus.size)
        gmm = None
        if prior_mode == GMM_MODE:
            gmm = fit_gmm_with_fallback(
                corpus,
                self.config.gmm_components,
                seed=int(rng.integers(2**31 - 1)),
                reg_covar=self.config.gmm_reg_covar,
                psd_tolerance=self.config.psd_tolerance,
            )
        elif prior_mode != DIRECT_MODE:
            raise ConfigurationError(f"未知的先验模式: {prior_mode}")

        ensemble: Ensemble = sample_ensemble(
            corpus, size, prior_mode, rng, gmm=gmm, with_replacement=self.config.with_replacement
        )
        ensemble = widen_velocity(ensemble, self.config.velocity_spread, rng)
        self.debug_logger.log_decision(
            "prior",
            f"filter={kind.value}, mode={prior_mode}",
            f"E={size}",
            {"N": corpus.size, "fallback": bool(gmm is not None and gmm.fallback)},
        )

        state: FilterState = ParticleState.uniform(ensemble) if kind == FilterKind.PF else ensemble
        return FilterSetup(kind, state, step, prior_mode, size, gmm)
