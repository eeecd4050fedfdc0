import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oatproto.hlpsl import parse_hlpsl
from oatproto.registry import CksRegistry
from oatproto.term import Password

from helpers import FIXTURES


@pytest.fixture(scope="session")
def oat_source() -> str:
    return (FIXTURES / "oat.hlpsl").read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def oat_model(oat_source):
    return parse_hlpsl(oat_source, "fixtures/oat.hlpsl")


@pytest.fixture(scope="session")
def nspk_model():
    return parse_hlpsl((FIXTURES / "nspk.hlpsl").read_text(), "fixtures/nspk.hlpsl")


@pytest.fixture(scope="session")
def nsl_model():
    return parse_hlpsl((FIXTURES / "nsl.hlpsl").read_text(), "fixtures/nsl.hlpsl")


@pytest.fixture()
def registry():
    reg = CksRegistry(seed=7)
    reg.provision("dev1", "a", Password("a"))
    return reg
