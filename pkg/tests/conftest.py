import pytest

ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def record_criterion():
    """Store the one-line outcome of an acceptance criterion for the terminal summary."""
    def record(number: int, checks, note: str = ""):
        ok = all(c.passed for c in checks)
        detail = "; ".join(f"{c.name}={c.value:.4g} ({c.relation} {c.threshold:g})" for c in checks)
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}{('  ' + note) if note else ''}"
        ACCEPTANCE[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
