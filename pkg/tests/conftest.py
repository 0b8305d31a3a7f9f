import pytest

from helpers import CHAIN_HP, chain_kg, colored_chain_kg, tiny_kg


@pytest.fixture(scope="session")
def chain():
    return chain_kg()


@pytest.fixture(scope="session")
def colored_chain():
    return colored_chain_kg()


@pytest.fixture(scope="session")
def tiny():
    return tiny_kg()


@pytest.fixture(scope="session")
def chain_model(chain):
    from kgxbench import kge

    return kge.train(chain, kge.TRANSLATIONAL, CHAIN_HP)
