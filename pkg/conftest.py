"""
Shared fixtures for the flex test suite
"""
import pytest

from modules.config import GenSpec, ModelConfig
from modules.kg_store import KnowledgeGraph, Vocabulary


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the long acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long end-to-end runs, enabled with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


TOY_TRIPLES = [
    ("USA", "Religion", "Christianity"),
    ("USA", "Religion", "Hinduism"),
    ("SunnyDeol", "Religion", "Hinduism"),
    ("SunnyDeol", "Citizen", "India"),
    ("India", "Religion", "Hinduism"),
    ("Christianity", "-Religion", "USA"),
    ("Hinduism", "-Religion", "USA"),
    ("Hinduism", "-Religion", "SunnyDeol"),
    ("Hinduism", "-Religion", "India"),
]


def build_kg(triples) -> KnowledgeGraph:
    entities, relations = Vocabulary(), Vocabulary()
    ids = [(entities.add(h), relations.add(r), entities.add(t)) for h, r, t in triples]
    return KnowledgeGraph(entities, relations, ids)


@pytest.fixture
def toy_kg() -> KnowledgeGraph:
    """Hand-built 5-entity graph"""
    return build_kg(TOY_TRIPLES)


@pytest.fixture
def tiny_config() -> ModelConfig:
    return ModelConfig(dim=4, hidden=6, batch_size=8, negatives=3, steps=20, log_every=5, seed=1)


@pytest.fixture(scope="session")
def small_spec() -> GenSpec:
    return GenSpec(
        n_entities=40, n_relations=4,
        train_edges=240, valid_edges=40, test_edges=40,
        train_queries=12, eval_queries=3, negation_ratio=0.5,
        train_structures=["1p", "2p", "2i", "2in"],
        eval_structures=["1p", "2p", "2i", "2in", "2u"],
        answer_cap=20, seed=3,
    )


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory, small_spec):
    """(data_dir, splits, records) for a generated dataset shared by the session"""
    from modules.dataset_gen import generate_dataset

    data_dir = tmp_path_factory.mktemp("data")
    splits, records = generate_dataset(small_spec, data_dir)
    return data_dir, splits, records
