import numpy as np
import pytest

from cla.data import RegimeSpec, generate_synthetic_regimes

# nodeid -> (criterion number, title, outcomes)
_CRITERIA: dict[str, tuple[int, str, list[str]]] = {}
_DETAILS: dict[int, list[str]] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _CRITERIA[item.nodeid] = (m.args[0], m.args[1], [])


def pytest_runtest_logreport(report):
    entry = _CRITERIA.get(report.nodeid)
    if entry is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        entry[2].append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    by_number: dict[int, tuple[str, list[str]]] = {}
    for number, title, outcomes in _CRITERIA.values():
        _, seen = by_number.setdefault(number, (title, []))
        seen.extend(outcomes)
    terminalreporter.section("acceptance criteria")
    for number in sorted(by_number):
        title, outcomes = by_number[number]
        if not outcomes:
            status = "NOT RUN"
        elif all(o == "passed" for o in outcomes):
            status = "PASS"
        else:
            status = "FAIL"
        detail = "; ".join(_DETAILS.get(number, []))
        terminalreporter.write_line(f"criterion {number:2d}: {status:7s} {title}" + (f" [{detail}]" if detail else ""))


@pytest.fixture
def measured(request):
    """Attach a measured value to the acceptance summary line of this test's criterion."""
    marker = request.node.get_closest_marker("criterion")

    def note(text):
        if marker is not None:
            _DETAILS.setdefault(marker.args[0], []).append(text)

    return note


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def regime_panel(sequence, length, seed, n_securities=100, n_features=8, noise_sd=0.1, shift=1.0):
    spec = RegimeSpec(
        n_regimes=max(sequence) + 1,
        regime_length=length,
        regime_sequence=list(sequence),
        n_securities=n_securities,
        n_features=n_features,
        seed=seed,
        noise_sd=noise_sd,
        feature_shift=shift,
    )
    dataset, boundaries = generate_synthetic_regimes(spec)
    return spec, dataset, boundaries
