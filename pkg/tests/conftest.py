from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from icpviz._accel import HAVE_NUMBA

REPO = Path(__file__).resolve().parent.parent
SCENES = REPO / "scenes"

BACKENDS = ["numpy"] + (["numba"] if HAVE_NUMBA else [])


def brute_knn(points: np.ndarray, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Linear-scan oracle: rank by (squared distance, index)."""
    diff = queries[:, None, :] - points[None, :, :]
    d2 = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
    idx = np.broadcast_to(np.arange(len(points)), d2.shape)
    order = np.lexsort((idx, d2), axis=-1)[:, :k]
    return order, np.take_along_axis(d2, order, axis=1)


def random_rotation(rng: np.random.Generator):
    from icpviz.geometry import RigidTransform

    q = rng.normal(size=4)
    return RigidTransform(q / np.linalg.norm(q), rng.normal(size=3))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture(params=BACKENDS)
def backend(request) -> str:
    return request.param


# acceptance report: tests marked ``criterion("...")`` get one PASS/FAIL/SKIP line at the end
_CRITERIA: list[tuple[str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.skipped):
        status = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
        _CRITERIA.append((status, marker.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for status, name in _CRITERIA:
        terminalreporter.write_line(f"{status:4s}  {name}")
