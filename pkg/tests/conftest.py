import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

_criterion_lines = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_criterion_lines] = []


@pytest.fixture
def criterion_log(request):
    """List of ``criterion N (title): PASS|FAIL`` lines shown in the terminal summary."""
    return request.config.stash[_criterion_lines]


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_criterion_lines, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
