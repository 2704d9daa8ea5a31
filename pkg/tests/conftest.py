import pytest

_RESULTS: list[tuple[int, str, bool, str]] = []


class Criterion:
    """Records one acceptance verdict; a test that errors before calling
    :meth:`verdict` is recorded as FAIL."""

    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.recorded = False

    def verdict(self, passed: bool, detail: str) -> None:
        _RESULTS.append((self.number, self.title, bool(passed), detail))
        self.recorded = True
        line = f"criterion {self.number} {'PASS' if passed else 'FAIL'}: {self.title} ({detail})"
        print(line)
        assert passed, line


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    c = Criterion(*marker.args)
    yield c
    if not c.recorded:
        _RESULTS.append((c.number, c.title, False, "raised before a verdict"))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_RESULTS):
        terminalreporter.write_line(f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} ({detail})")
