import pytest

from model import ModelConfig
from tensor import Rng, finite_audit_enabled, get_precision, set_finite_audit, set_precision


@pytest.fixture(autouse=True)
def float64_with_audit():
    """Every test runs in 64-bit with the finite audit on; commands that switch either are undone afterwards."""
    previous = get_precision(), finite_audit_enabled()
    set_precision('float64')
    set_finite_audit(True)
    yield
    set_precision(previous[0])
    set_finite_audit(previous[1])


@pytest.fixture
def rng() -> Rng:
    return Rng(1234)


@pytest.fixture
def toy() -> ModelConfig:
    return ModelConfig.toy()
