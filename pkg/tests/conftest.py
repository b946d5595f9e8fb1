import time

import numpy as np
import pytest

from prefreward.cohort import FULL_FEATURES, Cohort, SynthConfig, Trajectory, fit_split_and_scaler, generate_synthetic_cohort

COV = {"age": 60.0, "sofa_baseline": 6, "elixhauser": 3, "lactate": 2.0, "shock_index": 0.8, "mech_vent_baseline": False}


def make_traj(tid="t0", T=3, *, states=None, iv=None, vaso=None, tqs=3, confidence=0.8, died=False,
              vaso_on=None, vent=None, rrt=None, alive=None, map_=None, discharge="home", covariates=None,
              sofa_components=None, split=None, n_features=len(FULL_FEATURES)):
    if alive is None:
        alive = np.ones(T, bool)
        if died:
            alive[-1] = False
    vaso = np.zeros(T, int) if vaso is None else np.asarray(vaso)
    return Trajectory(
        id=tid,
        states=np.zeros((T, n_features)) if states is None else states,
        iv_bins=np.zeros(T, int) if iv is None else iv,
        vaso_bins=vaso,
        mortality=died,
        tqs=tqs,
        confidence=confidence,
        vasopressor_on=(vaso > 0) if vaso_on is None else vaso_on,
        mech_vent=np.zeros(T, bool) if vent is None else vent,
        rrt=np.zeros(T, bool) if rrt is None else rrt,
        alive=alive,
        map=np.full(T, 80.0) if map_ is None else map_,
        covariates=dict(COV) if covariates is None else covariates,
        discharge_category=("death" if died else discharge),
        sofa_components=sofa_components,
        split=split,
    )


@pytest.fixture(scope="session")
def small_cohort():
    return fit_split_and_scaler(generate_synthetic_cohort(SynthConfig(n=80), seed=3), 0.8, seed=3)


@pytest.fixture(scope="session")
def toy_feature_cohort():
    """Four trajectories over two features with a fitted scaler."""
    names = ("f0", "f1")
    rng = np.random.default_rng(0)
    trajs = []
    for i, (tqs, conf) in enumerate([(5, 0.9), (4, 0.7), (2, 0.8), (1, 0.6)]):
        T = 2 + i
        trajs.append(make_traj(f"k{i}", T, states=rng.normal(size=(T, 2)), iv=rng.integers(0, 5, T),
                               vaso=rng.integers(0, 5, T), tqs=tqs, confidence=conf, n_features=2))
    return fit_split_and_scaler(Cohort(tuple(trajs), names), 0.75, seed=0)


# acceptance reporting: one line per criterion in the terminal summary
SUITE_BUDGET_S = 600.0


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, summary): numbered acceptance criterion")
    config._acceptance = {}
    config._suite_start = time.perf_counter()


@pytest.fixture
def detail(request):
    """Attach a short measurement string to the acceptance line of this test."""
    def set_detail(text):
        request.node.acceptance_detail = text
    return set_detail


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    number, summary = marker.args
    item.config._acceptance[number] = [summary, rep.passed, getattr(item, "acceptance_detail", "")]


def pytest_sessionfinish(session, exitstatus):
    cfg = session.config
    cfg._suite_elapsed = time.perf_counter() - cfg._suite_start
    results = getattr(cfg, "_acceptance", {})
    if 10 in results and cfg._suite_elapsed > SUITE_BUDGET_S:
        results[10][1] = False
        results[10][2] += f"; suite took {cfg._suite_elapsed:.0f} s > {SUITE_BUDGET_S:.0f} s"
        session.exitstatus = pytest.ExitCode.TESTS_FAILED


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_acceptance", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        summary, passed, text = results[number]
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {summary}"
        terminalreporter.write_line(line + (f"  [{text}]" if text else ""))
    if 10 in results:
        terminalreporter.write_line(f"suite runtime: {config._suite_elapsed:.0f} s (budget {SUITE_BUDGET_S:.0f} s)")
