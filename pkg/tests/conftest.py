import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_RESULTS: list[tuple[str, bool, float, str]] = []


def record_acceptance(name: str, ok: bool, elapsed: float, detail: str = "") -> None:
    ACCEPTANCE_RESULTS.append((name, ok, elapsed, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, ok, elapsed, detail in ACCEPTANCE_RESULTS:
        status = "PASS" if ok else "FAIL"
        line = f"{status}  {name}  ({elapsed:.1f}s)"
        if detail:
            line += f"  {detail}"
        terminalreporter.write_line(line)
