from __future__ import annotations

import pytest

from ambisense.encoder import TrainConfig, train
from ambisense.syngen import ScenarioScript, build_corpus, generate_scenario

MEDICATION_STEPS = ("teeth", "hand_wash", "pour_water", "eat")


@pytest.fixture(scope="session")
def corpus():
    return build_corpus(50, 42)


@pytest.fixture(scope="session")
def trained(corpus):
    return train(corpus.train, TrainConfig())


@pytest.fixture(scope="session")
def model(trained):
    return trained.params


@pytest.fixture(scope="session")
def medication_trace():
    return generate_scenario(ScenarioScript(tuple((s, 4.0) for s in MEDICATION_STEPS), seed=0))
