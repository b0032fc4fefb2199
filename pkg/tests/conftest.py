import random

import pytest

from tessera.keys import AppIdentity, generate_device_identity


@pytest.fixture(scope="session")
def device():
    return generate_device_identity(2048)


@pytest.fixture(scope="session")
def other_device():
    return generate_device_identity(2048)


@pytest.fixture
def app_id():
    return AppIdentity(b"-----BEGIN CERTIFICATE-----\nlegit-app\n-----END CERTIFICATE-----\n")


@pytest.fixture
def rng():
    return random.Random(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
