"""Acceptance battery at full budgets: one PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines print even
when output capture is on.
"""

import pytest

from stripwalk.validation import CHECKS, Context, run_check

# wall-clock limits in seconds, per criterion
TIME_LIMITS = {1: 60, 2: 30, 3: 60, 4: 120, 5: 180, 6: 120, 7: 120, 8: 180, 9: 60, 10: 60, 11: 30}
MASTER_SEED = 0


@pytest.fixture(scope="module")
def ctx():
    # shared so the speed and CLT estimates are reused by criteria 4 to 6
    return Context("full", MASTER_SEED)


@pytest.mark.parametrize("criterion", sorted(CHECKS))
def test_criterion(criterion, ctx, capsys):
    row = run_check(criterion, ctx)
    within = row.seconds <= TIME_LIMITS[criterion]
    tag = "PASS" if row.passed and within else "FAIL"
    line = row.line().replace("[PASS]", f"[{tag}]").replace("[FAIL]", f"[{tag}]")
    if not within:
        line += f" over time limit {TIME_LIMITS[criterion]}s"
    with capsys.disabled():
        print(f"\n{line}" + (f"\n    {row.detail}" if row.detail else ""))
    assert row.passed, row.line() + (f" {row.detail}" if row.detail else "")
    assert within, f"took {row.seconds:.1f}s, limit {TIME_LIMITS[criterion]}s"
