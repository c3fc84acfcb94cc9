"""
测试公共设施
把仓库根目录加入 sys.path，注册 slow 标记，并提供小规模的 toy-throw 语料
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.basis import BasisFamily, BasisModel, select_basis  # noqa: E402
from core.data_model import Modality, ModalityLayout, ModalityRole  # noqa: E402
from core.priors import DemonstrationCorpus, estimate_measurement_noise  # noqa: E402
from core.simulator import ScenarioSpec, generate_corpus  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: 蒙特卡洛或计时类的验收测试")


@pytest.fixture(scope="session")
def scenario():
    return ScenarioSpec()


@pytest.fixture(scope="session")
def toy_demos(scenario):
    return generate_corpus(scenario, 12, seed=7)


@pytest.fixture(scope="session")
def toy_model(toy_demos):
    return select_basis(toy_demos, [BasisFamily.gaussian(6)])


@pytest.fixture(scope="session")
def toy_training(toy_demos, toy_model):
    """(corpus, R) 由全部 12 次示教训练"""
    corpus = DemonstrationCorpus.from_demonstrations(toy_demos, toy_model)
    noise = estimate_measurement_noise(toy_demos, toy_model, corpus.weights)
    return corpus, noise


@pytest.fixture
def pair_layout():
    """一个观测自由度加一个受控自由度"""
    return ModalityLayout((
        Modality("human", 1, ModalityRole.OBSERVED),
        Modality("robot", 1, ModalityRole.CONTROLLED),
    ))


@pytest.fixture
def constant_model(pair_layout):
    """常数基：h(s) = w，观测模型是线性的"""
    return BasisModel(pair_layout, (BasisFamily.polynomial(0), BasisFamily.polynomial(0)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
