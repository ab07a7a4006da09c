import textwrap

import numpy as np
import pytest

from stepsim.engine import prox_calculus as pc
from stepsim.engine.models import (
    QuadraticProxSgd,
    QueueChainSpec,
    kernel_prox_sgd,
    kernel_queue,
)
from stepsim.engine.setvalued import QueueMeanField

CANONICAL_LAMBDA = [0.1, 0.2]
CANONICAL_ETA = [0.5, 0.8]
CANONICAL_MEAN = [2.0, -0.3]
CANONICAL_RHO = 0.5


@pytest.fixture
def canonical_field():
    """Two prioritized queues with load 0.45"""
    return QueueMeanField(lambda_=CANONICAL_LAMBDA, eta=CANONICAL_ETA)


@pytest.fixture
def queue_kernel(canonical_field):
    return kernel_queue(QueueChainSpec(field=canonical_field))


@pytest.fixture
def canonical_problem():
    """Noiseless l1-regularized quadratic, minimizer (1.5, 0)"""
    r = pc.ConvexFunctionSpec.weighted_l1(CANONICAL_RHO)
    return QuadraticProxSgd(CANONICAL_MEAN, 0.0, r)


@pytest.fixture
def noisy_problem():
    r = pc.ConvexFunctionSpec.weighted_l1(CANONICAL_RHO)
    return QuadraticProxSgd(CANONICAL_MEAN, 1.0, r)


@pytest.fixture
def prox_kernel(noisy_problem):
    return kernel_prox_sgd(noisy_problem)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def write_config(tmp_path):
    """Write an INI experiment file and return its path"""

    def _write(text: str, name: str = "experiment.ini"):
        path = tmp_path / name
        path.write_text(textwrap.dedent(text).lstrip(), encoding="utf-8")
        return path

    return _write


@pytest.fixture
def out_dir(tmp_path):
    return tmp_path / "results"
