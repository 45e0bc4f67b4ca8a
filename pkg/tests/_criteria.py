"""Verdict ledger shared by the acceptance checks.

Each acceptance test wraps its body in `criterion(...)`, which records a
single PASS or FAIL line. conftest prints the collected lines in a summary
section at the end of the run so the per-criterion verdicts are visible in
one place regardless of pytest verbosity.
"""

from contextlib import contextmanager

LINES: list = []


@contextmanager
def criterion(num: int, label: str):
    try:
        yield
    except BaseException:
        LINES.append(f"criterion {num:02d} FAIL  {label}")
        raise
    else:
        LINES.append(f"criterion {num:02d} PASS  {label}")
