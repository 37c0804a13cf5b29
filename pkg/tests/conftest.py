"""Shared fixtures: small seeded model/encoder pairs used across the suite."""

import numpy as np
import pytest

from specrl.models import (CostModel, FeatureSpec, ModelConfig, StateEncoder,
                           SyntheticLM)


@pytest.fixture(scope="session")
def small_config():
    return ModelConfig(seed=7, vocab_size=16, context_order=2,
                       draft_noise=0.3, eos_prob=0.01)


@pytest.fixture(scope="session")
def small_lm(small_config):
    return SyntheticLM(small_config)


@pytest.fixture(scope="session")
def regime_config():
    """Two-block model: block 0 has flat (hard) rows, block 1 peaked (easy)."""
    return ModelConfig(seed=7, vocab_size=32, context_order=2, blocks=2,
                       block_alphas=(0.05, 6.0), block_coupling=1.0,
                       regime_schedule=((0, 0.05), (1, 0.7)), eos_prob=0.004)


@pytest.fixture(scope="session")
def regime_lm(regime_config):
    return SyntheticLM(regime_config)


@pytest.fixture(scope="session")
def encoder(regime_config):
    return StateEncoder(regime_config, FeatureSpec())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cost():
    return CostModel()
