import sys
from pathlib import Path

# lets test modules import the shared reference implementations in oracles.py
sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split("] ")[1].split(".")[0])):
            terminalreporter.write_line(line)
