import numpy as np
import pytest

from tcig.backends.registry import default_toy_backends
from tcig.backends.toy import ToySegmenter
from tcig.core import ClassVocabulary, LossWeights, SegMask, default_vocabulary

ACCEPTANCE_MARK = "acceptance"


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "acceptance(name): marks a test as one acceptance criterion; the "
        "terminal summary prints one pass/fail line per criterion",
    )
    config._acceptance_results = {}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    marker_name = getattr(report, "_acceptance_name", None)
    if marker_name is None:
        return
    results = getattr(report.config, "_acceptance_results", None)
    if results is not None:
        results[marker_name] = report.outcome


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker(ACCEPTANCE_MARK)
    if marker and marker.args:
        report._acceptance_name = marker.args[0]
        report.config = item.config


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_acceptance_results", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(results):
        outcome = results[name]
        tag = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{tag}] {name}")


@pytest.fixture(scope="session")
def vocab() -> ClassVocabulary:
    return default_vocabulary()


@pytest.fixture(scope="session")
def person_vocab() -> ClassVocabulary:
    base = default_vocabulary()
    pairs = [(e.name, e.color) for e in base.entries]
    pairs.append(("person", (0.7, 0.5, 0.3)))
    return ClassVocabulary.from_pairs(pairs)


@pytest.fixture(scope="session")
def backends(vocab):
    """Standard desk-scale bundle: 24x24, 4 blobs, one full-coverage guide."""
    return default_toy_backends(vocab)


@pytest.fixture(scope="session")
def small_backends(vocab):
    """Tiny bundle for finite-difference work: 16x16, 2 blobs, latent_dim 16."""
    return default_toy_backends(vocab, width=16, height=16, blobs=2)


@pytest.fixture(scope="session")
def square_target(vocab) -> SegMask:
    """The calibrated single-square task: class 1 square on 24x24."""
    ids = np.zeros((24, 24), dtype=np.uint8)
    ids[6:18, 6:18] = 1
    return SegMask.from_class_ids(ids, vocab.num_classes)


@pytest.fixture(scope="session")
def small_target(vocab) -> SegMask:
    ids = np.zeros((16, 16), dtype=np.uint8)
    ids[4:12, 4:12] = 1
    return SegMask.from_class_ids(ids, vocab.num_classes)


@pytest.fixture
def guided_weights() -> LossWeights:
    return LossWeights(1.0, (5.0,))


@pytest.fixture(scope="session")
def eval_segmenter(vocab) -> ToySegmenter:
    return ToySegmenter(vocab)


def random_hard_mask(rng: np.random.Generator, num_classes: int,
                     height: int, width: int) -> SegMask:
    ids = rng.integers(0, num_classes, size=(height, width))
    return SegMask.from_class_ids(ids, num_classes)
