"""Every acceptance criterion at its pinned tolerance, one pass/fail line each."""

import pytest

from patient_queues import acceptance


@pytest.mark.parametrize("number", sorted(acceptance.CRITERIA))
def test_criterion(number, capsys):
    res = acceptance.run(number)
    with capsys.disabled():
        print("\n" + res.line())
    assert res.passed, res.line()
