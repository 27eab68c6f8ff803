import hypothesis
import numpy as np
import pytest

from scratchgan.synthetic import TopicGrammar, make_desk_corpus

hypothesis.settings.register_profile("default", max_examples=30, deadline=None)
hypothesis.settings.load_profile("default")


@pytest.fixture(scope="session")
def desk_paths(tmp_path_factory):
    return make_desk_corpus(tmp_path_factory.mktemp("desk"), n_train=2000, n_valid=400, seed=0)


@pytest.fixture(scope="session")
def grammar():
    return TopicGrammar()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Records one pass/fail line per acceptance criterion and fails the test on a miss."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number: int, ok: bool, detail: str) -> None:
        lines.append((number, f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"))
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
