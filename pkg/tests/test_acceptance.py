"""Acceptance gate: every criterion at its stated tolerance.

Each criterion prints one pass/fail line; the CLI `check` subcommand runs
the same list.  The long-running entries (mass-positivity at 10^6
particles, the epsilon ladder at 128^2) dominate the suite runtime.
"""

import pytest

from kinflow.acceptance import ALL_CRITERIA


@pytest.mark.parametrize("criterion", ALL_CRITERIA,
                         ids=[fn.__name__.replace("criterion_", "") for fn in ALL_CRITERIA])
def test_criterion(criterion):
    result = criterion()
    print(result.line())
    assert result.passed, result.line()
