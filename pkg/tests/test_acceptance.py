"""Every acceptance criterion at its stated tolerance, one pass/fail line each.

The lines are also collected into the terminal summary ("acceptance criteria").
"""
import time

import pytest

from zvonkin_lab import acceptance

from .conftest import ACCEPTANCE_LINES

_SUITE = {"elapsed": 0.0}


def _record(res):
    _SUITE["elapsed"] += res.elapsed
    line = res.line()
    ACCEPTANCE_LINES.append(line)
    print(line)
    failed = [name for name, ok in res.checks.items() if not ok]
    assert res.passed, f"criterion {res.number} failed checks: {failed}; metrics: {res.metrics}"


@pytest.mark.parametrize("number", range(1, 10))
def test_criterion(number):
    _record(acceptance.CRITERIA[number]())


def test_criterion_10():
    t0 = time.perf_counter()
    res = acceptance.criterion_10()
    # suite runtime = the criteria above plus this one
    total = _SUITE["elapsed"] + (time.perf_counter() - t0)
    res.metrics["suite_elapsed"] = total
    res.checks["suite < 15 min"] = total < 900.0
    _record(res)
