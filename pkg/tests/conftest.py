import warnings

import pytest

from mfopf.cases import load_case57, load_bundled_profile, two_terminal_case

warnings.filterwarnings("ignore", category=RuntimeWarning)


@pytest.fixture(scope="session")
def case57():
    return load_case57()


@pytest.fixture(scope="session")
def profile24():
    return load_bundled_profile()


@pytest.fixture(scope="session")
def twoterm():
    return two_terminal_case()
