import numpy as np
import pytest

from swarmcap.core import ModelParams, SwarmState
from swarmcap.errors import InvalidParams
from swarmcap.markov import build_generator, exact_throughput
from swarmcap.sim import (
    InitialCondition,
    SimConfig,
    Simulator,
    event_log,
    estimate_throughput,
    one_club_size,
    replicate_throughput,
    simulate,
    transient_time_to_leave_one_club,
    transient_time_to_one_club,
)


def test_config_validation():
    p = ModelParams(2, 3, 1.0, 1.0)
    with pytest.raises(InvalidParams):
        SimConfig(p, horizon=10, warmup=10)
    with pytest.raises(InvalidParams):
        SimConfig(p, horizon=10, replications=0)
    with pytest.raises(InvalidParams):
        SimConfig(p, horizon=10, initial_condition=SwarmState.from_mapping(2, {(): 4})).initial_state()
    with pytest.raises(InvalidParams):
        estimate_throughput(SimConfig(p, horizon=10, replications=1))


def test_initial_conditions():
    p = ModelParams(3, 15, 1.0, 1.0)
    assert SimConfig(p, 1).initial_state().tolist() == [15, 0, 0, 0, 0, 0, 0]
    x = SimConfig(p, 1, initial_condition="ONE_CLUB").initial_state()
    assert x[0b011] == 14 and x[0] == 1
    assert one_club_size(x, 3) == 14


def test_one_club_follows_rarest_block():
    x = np.zeros(7, dtype=int)
    x[0b101] = 6  # missing block 2
    x[0b011] = 2  # missing block 3
    assert one_club_size(x, 3) == 6
    x[0b110] = 9  # block 1 now best replicated? replicas (8, 11, 15): rarest is block 1
    assert one_club_size(x, 3) == 9


def test_frozen_seed_event_log():
    config = SimConfig(ModelParams(3, 10, 1.0, 1.0, publisher_policy="MDP_RFB"), horizon=100, seed=42)
    a = event_log(simulate(config, record=True))
    b = event_log(simulate(config, record=True))
    assert a == b and len(a) > 0
    other = event_log(simulate(SimConfig(config.params, horizon=100, seed=43), record=True))
    assert other != a


def test_population_is_conserved_along_a_trajectory():
    p = ModelParams(3, 12, 0.5, 1.0, gamma=2.0)
    sim = Simulator(p)
    traj = simulate(SimConfig(p, horizon=200, seed=3), record=True, simulator=sim)
    x = SimConfig(p, 1).initial_state().copy()
    for _, e in traj.log:
        x += sim.delta[e]
        assert x.min() >= 0 and x.sum() == 12
    assert np.array_equal(x, traj.final_state)


def test_single_block_departures_are_poisson():
    p = ModelParams(1, 5, 1.0, 3.0)
    traj = simulate(SimConfig(p, horizon=1e4, seed=9))
    assert abs(traj.departures - 1e4) <= 3 * np.sqrt(1e4)


def test_ci_shrinks_with_replications():
    p = ModelParams(1, 2, 1.0, 1.0)
    reps = np.array([16, 64, 256, 1024])
    widths = [estimate_throughput(SimConfig(p, horizon=50, replications=int(r), seed=1)).ci_halfwidth for r in reps]
    slope = np.polyfit(np.log(reps), np.log(widths), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.12)


def test_small_swarm_matches_exact():
    p = ModelParams(2, 3, 1.0, 1.0)
    est = estimate_throughput(SimConfig(p, horizon=1e4, warmup=100, replications=30, seed=5))
    assert abs(est.mean - exact_throughput(p)) <= est.ci_halfwidth


@pytest.mark.parametrize("pub", ["RP_RUB", "RP_RFB", "MDP_RFB"])
def test_total_event_rate_equals_generator_diagonal(pub):
    p = ModelParams(3, 6, 0.7, 1.1, 0.6, publisher_policy=pub)
    Q = build_generator(p, lumped=False, reachable_only=False)
    diag = -Q.diagonal
    sim = Simulator(p)
    rng = np.random.default_rng(0)
    for i in rng.integers(0, Q.dimension, size=1000):
        assert sim.rates(Q.states[i].astype(np.int64)).sum() == pytest.approx(diag[i], rel=1e-12, abs=1e-15)


def test_parallel_replications_match_serial():
    config = SimConfig(ModelParams(2, 4, 1.0, 1.0), horizon=200, replications=4, seed=7)
    assert np.array_equal(replicate_throughput(config), replicate_throughput(config, n_jobs=2))


def test_trivial_thresholds():
    p = ModelParams(3, 15, 1.0, 1.0)
    entry = transient_time_to_one_club(SimConfig(p, 50, replications=5), fraction=0.0)
    assert (entry.samples == 0).all() and not entry.censored.any()
    leave = transient_time_to_leave_one_club(SimConfig(p, 50, replications=5, initial_condition="ONE_CLUB"), fraction=1.0)
    assert (leave.samples == 0).all()


def test_censoring_and_cdf_shape():
    p = ModelParams(3, 15, 0.5, 1.0)
    res = transient_time_to_one_club(SimConfig(p, 5.0, replications=50, seed=2), grid=np.linspace(0, 5, 11))
    assert res.censored.any()
    assert (res.samples[res.censored] == 5.0).all()
    assert res.replications == 50
    assert np.all(np.diff(res.cdf) >= 0) and 0 <= res.cdf.min() and res.cdf.max() <= 1
    assert res.cdf[-1] == pytest.approx(np.mean(~res.censored))


def test_transient_metrics_check_initial_condition():
    p = ModelParams(3, 15, 0.5, 1.0)
    with pytest.raises(InvalidParams):
        transient_time_to_one_club(SimConfig(p, 5.0, initial_condition=InitialCondition.ONE_CLUB))
    with pytest.raises(InvalidParams):
        transient_time_to_leave_one_club(SimConfig(p, 5.0))


@pytest.mark.parametrize("U,expected", [(0.5, 25.0), (1.0, 50.0)])
def test_departures_by_fifty(U, expected):
    p = ModelParams(3, 15, U, 1.0)
    sim = Simulator(p)
    config = SimConfig(p, horizon=50, replications=200, seed=4)
    mean = np.mean([simulate(config, r, simulator=sim).departures for r in range(200)])
    assert mean == pytest.approx(expected, rel=0.2)


def test_most_deprived_leaves_one_club_sooner():
    grid = np.arange(0, 201, 10.0)
    cdfs = {}
    for pub in ("RP_RUB", "MDP_RFB"):
        config = SimConfig(ModelParams(3, 15, 0.5, 1.0, publisher_policy=pub), 200, seed=8, replications=1000,
                           initial_condition="ONE_CLUB")
        cdfs[pub] = transient_time_to_leave_one_club(config, grid=grid).cdf
    assert np.all(cdfs["MDP_RFB"] >= cdfs["RP_RUB"] - 0.03)
    assert cdfs["MDP_RFB"].sum() > cdfs["RP_RUB"].sum()


@pytest.mark.slow
def test_throughput_curve_rises_peaks_and_settles():
    # exact values up to N=30, simulation for the large-population plateau
    base = dict(K=3, U=1.0, mu=0.5, publisher_policy="MDP_RFB")
    rising = [exact_throughput(ModelParams(N=N, **base)) for N in (2, 10, 30)]
    assert rising[0] < rising[1] < rising[2]
    plateau = estimate_throughput(SimConfig(ModelParams(N=200, **base), 1500.0, 11, 300.0, 5))
    assert rising[2] >= plateau.mean - plateau.ci_halfwidth
    assert plateau.mean > rising[0]
