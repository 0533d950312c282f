import pytest

CRITERIA = {
    1: "fit_cox equals grid-search maximiser of the hand-evaluated partial likelihood",
    2: "score and Hessian equal finite differences",
    3: "estimand recovery and CI coverage at HR 0.771",
    4: "placebo test size under the null",
    5: "decomposition identity and simulated rate ratio",
    6: "matching equals brute-force reference",
    7: "FE-OLS equals dummy-variable OLS",
    8: "invariance suite",
    9: "log-log parallelism flag discrimination",
    10: "CLI determinism",
}

_results: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _results.setdefault(marker.args[0], []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        outcomes = _results[n]
        status = "PASS" if all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {CRITERIA.get(n, '')}")
