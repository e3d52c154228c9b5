import os

import pytest
from hypothesis import HealthCheck, settings

from randclip.envelope import build_hutch_envelope

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# criterion number -> one-line verdict, filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE


_ENVELOPES = {}


@pytest.fixture(scope="session")
def hutch_envelope():
    """Default-parameter Hutch envelopes, built once per (k, d) per session."""

    def get(k, d):
        if (k, d) not in _ENVELOPES:
            _ENVELOPES[k, d] = build_hutch_envelope(k, d)
        return _ENVELOPES[k, d]

    return get
