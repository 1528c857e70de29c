import numpy as np
import pytest

from landmark_post.embed_store import EmbeddingMatrix


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x.astype(np.float32)


def matrix(rows, prefix="x", ids=None):
    rows = np.asarray(rows, dtype=np.float32)
    if ids is None:
        ids = [f"{prefix}{i}" for i in range(rows.shape[0])]
    return EmbeddingMatrix(ids, rows)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_acceptance = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, outcome in _acceptance.items():
        name = nodeid.split("::")[-1]
        verdict = "PASS" if outcome == "passed" else outcome.upper()
        terminalreporter.write_line(f"{verdict:7s} {name}")
