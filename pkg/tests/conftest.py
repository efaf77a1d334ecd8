"""Shared acceptance bookkeeping: one pass/fail line per criterion at the end of the session."""

from collections import defaultdict

ACCEPTANCE = defaultdict(list)


def record(criterion: int, ok: bool, detail: str, score: float = 0.0) -> None:
    """Log one check; with several checks per criterion the summary shows the highest ``score``."""
    ACCEPTANCE[criterion].append((bool(ok), detail, score))
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(ACCEPTANCE):
        entries = ACCEPTANCE[criterion]
        ok = all(e[0] for e in entries)
        pool = [e for e in entries if not e[0]] or entries
        worst = max(pool, key=lambda e: e[2])[1]
        count = f" ({sum(e[0] for e in entries)}/{len(entries)} checks, worst shown)" if len(entries) > 1 else ""
        terminalreporter.write_line(f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {worst}{count}")
