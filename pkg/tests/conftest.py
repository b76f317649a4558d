import os
import textwrap

import pytest

ACCEPTANCE = {}

# small, fast network used by CLI and determinism tests: short blocking window
FAST_TOML = textwrap.dedent("""
    [network]
    master_seed = 11
    pulses_per_client = 4000000
    epoch_target_bits = 768

    [hub]
    blocking_time = 5.0

    [link]
    fiber_length = 25.0

    [[clients]]
    id = 1
    name = "alice"

    [[clients]]
    id = 2
    name = "bob"

    [[clients]]
    id = 3
    name = "charlie"
""")


@pytest.fixture
def fast_config(tmp_path):
    path = tmp_path / "fast.toml"
    path.write_text(FAST_TOML)
    return str(path)


@pytest.fixture
def record_criterion():
    def record(number: int, title: str, passed: bool, detail: str = "") -> None:
        ACCEPTANCE[number] = (title, passed, detail)
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        print(line)
        assert passed, line
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if passed else 'FAIL'}: {title}"
                                    + (f" ({detail})" if detail else ""))


def pytest_collection_modifyitems(config, items):
    if os.environ.get("NQC_SKIP_SLOW"):
        skip = pytest.mark.skip(reason="NQC_SKIP_SLOW set")
        for item in items:
            if "slow" in item.keywords:
                item.add_marker(skip)
