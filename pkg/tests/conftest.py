import time

SESSION_START = time.monotonic()
SUITE_BUDGET_SECONDS = 300.0


def pytest_sessionfinish(session, exitstatus):
    elapsed = time.monotonic() - SESSION_START
    ok = elapsed < SUITE_BUDGET_SECONDS
    print(
        f"\nACCEPTANCE 12 {'PASS' if ok else 'FAIL'}: "
        f"suite wall time {elapsed:.1f}s (budget {SUITE_BUDGET_SECONDS:.0f}s)"
    )
    if not ok:
        session.exitstatus = 1
