import dataclasses
import math

import numpy as np
import pytest

from conftest import general_config, mixed_period_config
from wncs.capacity_mdp import constant_policy, synthesize
from wncs.model import ContinuousPlant, SystemConfig
from wncs.simulator import (empirical_dropout, exact_mean_square, lag1_autocorrelation,
                            mean_square, replay, simulate, stability_diagnostic,
                            write_diagnostic_csv, write_trace_csv)


@pytest.fixture(scope="module")
def design():
    return synthesize(general_config())


@pytest.fixture(scope="module")
def traces(design):
    return simulate(design.config, design, 200, 1000, seed=7)


def test_bit_identical_reruns(design):
    a = simulate(design.config, design, 60, 50, seed=123)
    b = simulate(design.config, design, 60, 50, seed=123)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.u, b.u)
    assert np.array_equal(a.gamma, b.gamma)
    c = simulate(design.config, design, 60, 50, seed=124)
    assert not np.array_equal(a.gamma, c.gamma)


def test_runs_are_independent_streams(design):
    # run r of a larger ensemble equals run r of a smaller one
    small = simulate(design.config, design, 30, 5, seed=9)
    big = simulate(design.config, design, 30, 20, seed=9)
    assert np.array_equal(small.gamma, big.gamma[:5])


def test_zero_frames(design):
    t = simulate(design.config, design, 0, 4, seed=1, x0=(1.0, 2.0, 3.0))
    assert t.x.shape == (4, 3, 1) and t.u.shape == (4, 3, 0)
    assert np.array_equal(t.x[:, :, 0], np.tile([1.0, 2.0, 3.0], (4, 1)))


def test_config_mismatch_rejected(design):
    with pytest.raises(ValueError):
        simulate(design.config.with_channel((0.9, 0.9, 0.9)), design, 5, 1, seed=0)


def test_replay_reproduces_states(traces, design):
    for i, ctrl in enumerate(design.controllers):
        for r in (0, 17, 999):
            x = replay(ctrl.plant.a_bar, ctrl.plant.b_bar, traces.x[r, i, 0],
                       traces.u[r, i], traces.gamma[r, i])
            assert np.allclose(x, traces.x[r, i], rtol=1e-12, atol=0)


def test_perfect_channel_delivers_everything():
    cfg = SystemConfig((ContinuousPlant(0.5),) * 3, (1.0,) * 3, (4,) * 3, 0.01)
    d = synthesize(cfg)
    t = simulate(cfg, d, 40, 20, seed=3)
    assert t.gamma.min() == 1
    assert all(e.estimate == 0.0 for e in empirical_dropout(t))


def test_never_delivered_flow_grows_geometrically(design):
    starve = dataclasses.replace(design, policy=constant_policy(design.mdp, 2))
    t = simulate(design.config, starve, 80, 30, seed=5)
    assert t.gamma[:, 0].max() == 0 and t.gamma[:, 1].max() == 0
    a = design.controllers[0].plant.a_bar
    ms = mean_square(t)[0]
    assert np.allclose(ms, a ** (2 * np.arange(81)), rtol=1e-12)
    diag = stability_diagnostic(t)
    assert diag[0].verdict == "not-decaying"


def test_zero_state_is_decaying(design):
    t = simulate(design.config, design, 60, 10, seed=0, x0=(0.0, 0.0, 0.0))
    diag = stability_diagnostic(t)
    assert all(d.verdict == "decaying" and d.note for d in diag)


def test_short_horizon_inconclusive(design):
    t = simulate(design.config, design, 20, 10, seed=0)
    assert all(d.verdict == "inconclusive" for d in stability_diagnostic(t))


def test_three_plant_design_decays(traces):
    assert [d.verdict for d in stability_diagnostic(traces, 0.99)] == ["decaying"] * 3


def test_three_plant_mean_square_small_at_frame_200(traces):
    ms = mean_square(traces)
    assert np.all(ms[:, 199] < 1e-2 * ms[:, 0])


# Exact E[x^2] at frame 200 under the automatic design margin (work-conserving
# scheduler, so flow 1 beats its target); second-moment oracle.
# The ensemble mean sits far below it: the moment is carried by rare long outages.
THREE_PLANT_EXACT_MS_200 = (0.000762, 0.01915, 0.000921)


def test_three_plant_exact_second_moment(design):
    exact = exact_mean_square(design, 200)
    assert np.allclose(exact[:, 199], THREE_PLANT_EXACT_MS_200, rtol=0.02)
    assert np.all(np.diff(np.log(exact[:, 100:]), axis=1) < 0)


def test_exact_mean_square_matches_monte_carlo_early(design):
    t = simulate(design.config, design, 10, 20000, seed=11)
    exact = exact_mean_square(design, 10)
    sq = t.x ** 2
    se = sq.std(axis=0, ddof=1) / math.sqrt(t.runs)
    assert np.all(np.abs(sq.mean(axis=0) - exact) <= 5 * se + 1e-12)


def test_dropout_within_four_standard_errors(design, traces):
    for e in empirical_dropout(traces):
        exact = 1.0 - design.delivery[e.subsystem][0]
        assert not e.inconclusive
        assert abs(e.estimate - exact) < 4 * e.std_error


def test_dropout_insufficient_samples_flagged(design):
    t = simulate(design.config, design, 5, 3, seed=2)
    assert all(e.inconclusive for e in empirical_dropout(t))


def test_deliveries_uncorrelated_across_frames(traces):
    for i in range(traces.n):
        r, pairs = lag1_autocorrelation(traces, i)
        assert abs(r) < 4 / math.sqrt(pairs)


def test_heterogeneous_windows():
    cfg = mixed_period_config()
    d = synthesize(cfg)
    t = simulate(cfg, d, 120, 400, seed=4)
    est = empirical_dropout(t)
    assert [e.window for e in est] == [0, 1, 2, 3, 4, 5, 0, 1, 2, 0, 1]
    for e in est:
        exact = 1.0 - d.delivery[e.subsystem][e.window or 0]
        assert abs(e.estimate - exact) <= 4 * e.std_error + 1e-12
    assert all(x.verdict == "decaying" for x in stability_diagnostic(t))


def test_trace_csv(tmp_path, design):
    t = simulate(design.config, design, 2, 2, seed=0)
    path = tmp_path / "t.csv"
    write_trace_csv(t, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "run,frame,subsystem,x,u,gamma"
    assert len(lines) == 1 + 2 * 3 * 3
    assert lines[1].startswith("0,1,1,1,")
    assert lines[-1].endswith(",,") and lines[-1].startswith("1,3,3,")
    row = lines[4].split(",")
    assert float(row[3]) == t.x[0, 0, 1]


def test_diagnostic_csv(tmp_path, traces):
    diags = stability_diagnostic(traces)
    path = tmp_path / "d.csv"
    write_diagnostic_csv(diags, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "frame,subsystem,mean_square"
    assert len(lines) == 1 + 201 * 3
    assert float(lines[1].split(",")[2]) == 1.0
