"""
eBIP Core Module
集合贝叶斯交互基元核心模块
"""

from .basis import BasisFamily, BasisModel, select_basis
from .data_model import Demonstration, Ensemble, GaussianBelief, ModalityLayout, Observation
from .errors import EbipError
from .filter_builder import FilterBuilder
from .interaction_engine import InteractionEngine, run_interaction
from .model_config import RunConfig
from .priors import DemonstrationCorpus
from .state_manager import FilterKind, StateManager

__all__ = [
    "BasisFamily",
    "BasisModel",
    "select_basis",
    "Demonstration",
    "Ensemble",
    "GaussianBelief",
    "ModalityLayout",
    "Observation",
    "EbipError",
    "FilterBuilder",
    "InteractionEngine",
    "run_interaction",
    "RunConfig",
    "DemonstrationCorpus",
    "FilterKind",
    "StateManager",
]
