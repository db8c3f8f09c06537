import random
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


def marker_dataset(n=32, seed=0, positives=None, marker="strcpy(buf, src);"):
    """Tiny C functions whose label is the presence of a marker call."""
    rng = random.Random(seed)
    positives = n // 2 if positives is None else positives
    out = []
    for i in range(n):
        vulnerable = i < positives
        stmts = [
            f"    x{rng.randrange(9)} = x{rng.randrange(9)} + {rng.randrange(99)};\n"
            for _ in range(rng.randrange(1, 4))
        ]
        line = f"    {marker}\n" if vulnerable else "    strlen(buf);\n"
        stmts.insert(rng.randrange(len(stmts) + 1), line)
        src = f"int f{i}(char *buf, char *src) {{\n{''.join(stmts)}    return 0;\n}}"
        out.append((src.encode(), int(vulnerable)))
    rng.shuffle(out)
    return out


@pytest.fixture
def fixtures_dir():
    return FIXTURES


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdicts, one line per criterion, at the end of the run."""
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results, key=lambda k: int(k)):
        terminalreporter.write_line(results[key])
