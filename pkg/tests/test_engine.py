import math
from unittest.mock import MagicMock

import numpy as np
import pytest

from relaynet.analysis.oracle import stationary_mean_hitting, torus_oracle
from relaynet.models import SchemeParams
from relaynet.network.geometry import build_configuration
from relaynet.network.protocol import EVENT_COLUMNS
from relaynet.sim import engine
from relaynet.sim.engine import TrialResult, resolve_budget, run_trial

PARAMS = SchemeParams(p_delta=0.3, alpha=0.1, delta=0.5)


@pytest.fixture
def atypical_config():
    rng = np.random.default_rng(5)
    poles = np.array([0.0, 0.0, 1.0]) + 0.01 * rng.standard_normal((144, 3))
    return build_configuration(
        poles, rng.uniform(0, 2 * math.pi, 144), 0.5, np.arange(144).reshape(-1, 2), band_low=0.5, band_high=1.01
    )


@pytest.fixture
def small_trial():
    return run_trial(PARAMS, 16, seed=21, slots=4_000, warmup=1_000)


@pytest.mark.parametrize(
    "n,slots,warmup,expected",
    [
        (64, None, None, (200_000, 40_000)),
        (4096, None, None, (math.ceil(50 * 4096 * math.log(4096)), int(0.2 * math.ceil(50 * 4096 * math.log(4096))))),
        (64, 1_000, None, (1_000, 200)),
        (64, 1_000, 0, (1_000, 0)),
    ],
)
def test_resolve_budget(n, slots, warmup, expected):
    assert resolve_budget(n, slots, warmup) == expected


def test_resolve_budget_rejects_long_warmup():
    with pytest.raises(ValueError):
        resolve_budget(64, 100, 100)


def test_trial_result_throughput(small_trial):
    measured = small_trial.slots_run - small_trial.warmup
    np.testing.assert_array_equal(small_trial.per_pair_throughput, small_trial.delivered / measured)
    assert small_trial.min_throughput == small_trial.per_pair_throughput.min()
    assert small_trial.typical
    assert len(small_trial.delivered) == 8


def test_trial_result_delays(small_trial):
    assert small_trial.delay.size == small_trial.delivered.sum()
    assert (small_trial.delay >= 1).all()
    assert (small_trial.direct_delays == 1).all()
    assert small_trial.relayed_delays.size > 0
    assert small_trial.mean_relayed_delay == pytest.approx(small_trial.relayed_delays.mean())
    pair_total = sum(small_trial.pair_delays(p).size for p in range(8))
    assert pair_total == small_trial.delay.size
    assert small_trial.pair_delays(0, relayed=True).size + small_trial.pair_delays(0, relayed=False).size == (
        small_trial.pair_delays(0).size
    )


def test_trial_result_counters(small_trial):
    assert small_trial.created >= small_trial.delivered.sum() + small_trial.in_flight
    assert small_trial.potential_departures <= small_trial.meeting_slots
    assert 0 <= small_trial.departure_given_meeting <= 1
    assert small_trial.max_queue_length >= 1
    assert small_trial.events is None


def test_trial_summary(small_trial):
    summary = small_trial.summary()
    assert summary["n"] == 16
    assert summary["slots"] == 4_000
    assert summary["warmup"] == 1_000
    assert summary["min_tput"] == small_trial.min_throughput
    assert summary["relayed_packets"] + summary["direct_packets"] == summary["delivered"]
    assert set(summary["queue_stats"]) == {"max_length", "mean_backlog", "backlog_growth", "stable"}


def test_trial_result_rejects_inconsistent_throughput(small_trial):
    fields = small_trial.model_dump()
    fields["per_pair_throughput"] = fields["per_pair_throughput"] * 2 + 1
    with pytest.raises(ValueError):
        TrialResult(**fields)


def test_run_trial_is_deterministic(small_trial):
    again = run_trial(PARAMS, 16, seed=21, slots=4_000, warmup=1_000)
    np.testing.assert_array_equal(again.delivered, small_trial.delivered)
    np.testing.assert_array_equal(again.delay, small_trial.delay)
    assert again.summary()["created"] == small_trial.summary()["created"]


def test_run_trial_depends_on_trial_id(small_trial):
    other = run_trial(PARAMS, 16, seed=21, slots=4_000, warmup=1_000, trial=1)
    assert not np.array_equal(other.delay, small_trial.delay)


def test_run_trial_event_log():
    result = run_trial(PARAMS, 16, seed=3, slots=300, warmup=0, log_events=True)
    assert result.events.columns.tolist() == EVENT_COLUMNS
    successes = result.events[result.events["outcome"] == "success"]
    assert set(successes["subslot"]) <= {"A", "B"}
    assert (result.events["slot"] < 300).all()


def test_run_trial_falls_back_on_atypical_networks(monkeypatch, atypical_config):
    monkeypatch.setattr(engine, "sample_configuration", lambda *args, **kwargs: atypical_config)
    result = run_trial(PARAMS, 144, seed=1, slots=720, warmup=0)
    assert not result.typical
    np.testing.assert_allclose(result.per_pair_throughput, 10 / 720)
    assert (result.delay == 1).all()
    assert result.direct_fraction == 1.0
    assert result.in_flight == 0
    assert math.isnan(result.mean_relayed_delay)


def test_run_trial_aligns_default_warmup_to_round_robin(monkeypatch, atypical_config):
    monkeypatch.setattr(engine, "sample_configuration", lambda *args, **kwargs: atypical_config)
    result = run_trial(PARAMS, 144, seed=1, slots=1_000)
    assert result.warmup == 208
    assert (result.slots_run - result.warmup) % 72 == 0
    np.testing.assert_allclose(result.per_pair_throughput, 2 / 144)


def test_run_trial_keeps_explicit_warmup_on_atypical_networks(monkeypatch, atypical_config):
    monkeypatch.setattr(engine, "sample_configuration", lambda *args, **kwargs: atypical_config)
    assert run_trial(PARAMS, 144, seed=1, slots=1_000, warmup=200).warmup == 200


@pytest.mark.parametrize(
    "first,second,growth,stable",
    [(100.0, 110.0, 1.1, True), (100.0, 200.0, 2.0, False), (0.0, 5.0, math.inf, False)],
)
def test_backlog_growth(small_trial, first, second, growth, stable):
    result = small_trial.model_copy(update={"backlog_first_half": first, "backlog_second_half": second})
    assert result.backlog_growth == pytest.approx(growth)
    assert result.stable is stable


def test_backlog_growth_of_empty_network_is_undefined(small_trial):
    result = small_trial.model_copy(update={"backlog_first_half": 0.0, "backlog_second_half": 0.0})
    assert math.isnan(result.backlog_growth)
    assert result.stable


def test_backlog_halves_average_to_mean_backlog(small_trial):
    assert small_trial.backlog_first_half > 0
    halves = (small_trial.backlog_first_half + small_trial.backlog_second_half) / 2
    assert small_trial.mean_backlog == pytest.approx(halves)


def test_run_trial_warns_on_growing_backlog(monkeypatch):
    monkeypatch.setattr(engine, "BACKLOG_GROWTH_LIMIT", 0.0)
    mock_logger = MagicMock()
    monkeypatch.setattr(engine, "logger", mock_logger)
    result = run_trial(PARAMS, 16, seed=21, slots=2_000, warmup=500)
    assert not result.stable
    mock_logger.warning.assert_called_once()
    assert "unstable" in mock_logger.warning.call_args.args[0]


@pytest.fixture(scope="module")
def default_trial_64():
    return run_trial(SchemeParams(), 64, seed=1)


@pytest.mark.slow
def test_relay_queues_are_stable_at_default_parameters(default_trial_64):
    assert default_trial_64.stable
    assert default_trial_64.backlog_growth < 1.2
    assert default_trial_64.in_flight < 2 * default_trial_64.mean_backlog


@pytest.mark.slow
def test_relayed_delay_is_order_n_log_n(default_trial_64):
    nlogn = 64 * math.log(64)
    assert default_trial_64.mean_relayed_delay >= 0.5 * stationary_mean_hitting(torus_oracle(8), 0)
    assert default_trial_64.mean_relayed_delay / nlogn < 10
    assert default_trial_64.min_throughput > 0


@pytest.mark.slow
def test_relayed_delay_is_insensitive_to_longer_warmup(default_trial_64):
    longer = run_trial(SchemeParams(), 64, seed=1, warmup=80_000)
    assert longer.mean_relayed_delay == pytest.approx(default_trial_64.mean_relayed_delay, rel=0.05)
