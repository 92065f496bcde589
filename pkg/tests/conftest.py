"""Shared fixtures and the acceptance-criteria summary hook."""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from gaftrader import classifier as clf
from gaftrader import gaf, patterns

_ACCEPTANCE: list[tuple[int, str, str]] = []


@pytest.fixture
def criterion():
    """Context manager recording one PASS/FAIL line per acceptance criterion."""

    @contextmanager
    def run(number: int, name: str):
        try:
            yield
        except BaseException:
            _ACCEPTANCE.append((number, name, "FAIL"))
            raise
        _ACCEPTANCE.append((number, name, "PASS"))

    return run


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for num, name, status in sorted(_ACCEPTANCE):
            terminalreporter.write_line(f"ACCEPTANCE {num} {name}: {status}")


def _corpus_arrays(total: int, seed: int):
    pairs = patterns.generate_corpus(total, seed=seed)
    tensors = gaf.encode_windows([w for w, _ in pairs])
    labels = np.array([int(c) for _, c in pairs])
    return tensors, labels


@pytest.fixture(scope="session")
def corpus8000():
    return _corpus_arrays(8000, seed=42)


@pytest.fixture(scope="session")
def trained_classifier(corpus8000):
    """The full-size classifier plus its wall-clock training time."""
    tensors, labels = corpus8000
    start = time.perf_counter()
    model = clf.train_classifier(
        tensors, labels, clf.ClassifierConfig(epochs=30, batch_size=32,
                                              learning_rate=1e-3, seed=42)
    )
    elapsed = time.perf_counter() - start
    return model, elapsed


@pytest.fixture(scope="session")
def small_classifier(tmp_path_factory):
    """A quick-to-train classifier checkpoint for CLI-level tests."""
    tensors, labels = _corpus_arrays(900, seed=42)
    model = clf.train_classifier(
        tensors, labels, clf.ClassifierConfig(epochs=6, seed=42)
    )
    path = tmp_path_factory.mktemp("ckpt") / "cnn.npz"
    clf.save_classifier(model, path)
    return model, str(path)
