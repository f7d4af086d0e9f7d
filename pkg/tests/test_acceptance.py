"""Acceptance criteria 1-10, each at its stated tolerance.

Every test prints one pass/fail line for its criterion (shown even when
pytest captures output).
"""

import pytest

from dampflow.acceptance import TITLES, AcceptanceSuite


@pytest.fixture(scope="session")
def suite(tmp_path_factory):
    return AcceptanceSuite(tmp_path_factory.mktemp("acceptance"))


@pytest.mark.parametrize("number", sorted(TITLES), ids=lambda n: f"criterion_{n:02d}")
def test_criterion(suite, number, capsys):
    outcome = getattr(suite, f"criterion_{number}")()
    with capsys.disabled():
        print("\n" + outcome.line())
    assert outcome.passed, outcome.line()
