import pytest

from otsforge.vocab import default_vocab


@pytest.fixture(scope="session")
def vocab():
    return default_vocab()
