import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number, title, ok, dt, limit, notes in sorted(results):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {dt:7.2f} s (limit {limit} s)  {title}"
        tr.write_line(line + (f"  [{notes}]" if notes else ""))
