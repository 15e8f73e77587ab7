import numpy as np
import pytest

from relaynet.analysis.oracle import return_time_moments, torus_oracle
from relaynet.analysis.queues import (
    BernoulliSpec,
    RenewalSpec,
    ThinnedRenewalSpec,
    event_slots,
    fifo_departures,
    geometric_moments,
    kingman_bound,
    meeting_streams,
    q4_analysis,
    renewal_spec,
    run_fifo,
    simulate_queue,
    simulate_tandem,
    thinned_renewal_moments,
)
from relaynet.exceptions import InstabilityError
from relaynet.models import MomentSummary
from relaynet.utils import derive_rng


def constant_gaps(gap):
    return lambda size, rng: np.full(size, gap)


def test_geometric_moments():
    moments = geometric_moments(0.5)
    assert moments.mean == 2.0
    assert moments.second_moment == 6.0
    assert moments.source == "closed-form"
    with pytest.raises(ValueError):
        geometric_moments(0.0)


def test_thinned_renewal_moments_without_thinning():
    moments = thinned_renewal_moments(16.0, 400.0, 1.0)
    assert moments.mean == pytest.approx(16.0)
    assert moments.second_moment == pytest.approx(400.0)


def test_thinned_renewal_moments_constant_gaps():
    # c * Geometric(p): mean c / p, second moment c^2 (2 - p) / p^2
    c, p = 3.0, 0.25
    moments = thinned_renewal_moments(c, c**2, p)
    assert moments.mean == pytest.approx(c / p)
    assert moments.second_moment == pytest.approx(c**2 * (2 - p) / p**2)


def test_kingman_bound():
    bound = kingman_bound(geometric_moments(0.5), geometric_moments(1.0))
    assert bound == pytest.approx(2.0)


def test_kingman_bound_unstable():
    with pytest.raises(InstabilityError):
        kingman_bound(geometric_moments(0.5), geometric_moments(0.25))


def test_q4_analysis():
    n, EZ, EZ2 = 16, 16.0, 600.0
    rate = 2 / (3 * n)
    result = q4_analysis(n, EZ, EZ2)
    assert result.E_A == pytest.approx(rate * EZ)
    assert result.E_A2 == pytest.approx(rate * EZ + rate**2 * (EZ2 - EZ))
    assert result.P_Q_positive == result.E_A
    expected_q = (result.E_A + result.E_A2 - 2 * result.E_A**2) / (2 * (1 - result.E_A))
    assert result.E_Q == pytest.approx(expected_q)
    assert result.E_Qtilde_upper == pytest.approx(expected_q + rate * EZ2 / EZ)
    assert result.E_D4_upper == pytest.approx(1.5 * n * result.E_Qtilde_upper)


def test_q4_analysis_unstable():
    with pytest.raises(InstabilityError):
        q4_analysis(4, 6.0, 40.0)


def test_fifo_departures():
    arrivals = np.array([0, 0, 3])
    services = np.array([0, 1, 2, 5])
    np.testing.assert_array_equal(fifo_departures(arrivals, services), [0, 1, 3])
    np.testing.assert_array_equal(fifo_departures(np.array([0, 0, 0]), np.array([1, 2])), [0, 1, -1])
    assert fifo_departures(np.array([], dtype=np.int64), services).size == 0


def test_run_fifo_trace():
    result = run_fifo(np.array([0, 0, 3]), np.array([0, 1, 2, 5]), 6)
    np.testing.assert_array_equal(result.departure_slots, [0, 1, 5])
    np.testing.assert_array_equal(result.delays, [1, 2, 3])
    np.testing.assert_array_equal(result.trace.lengths, [2, 1, 0, 1, 1, 1])
    np.testing.assert_array_equal(result.trace.sampled, [2, 1, 0, 1])
    np.testing.assert_array_equal(result.trace.arrivals_between, [2, 0, 0, 1])
    assert result.trace.recursion_holds()
    assert result.p_busy == 0.75
    assert result.mean_delay == 2.0


def test_run_fifo_without_services():
    result = run_fifo(np.array([1, 2]), np.array([], dtype=np.int64), 4)
    np.testing.assert_array_equal(result.departure_slots, [-1, -1])
    np.testing.assert_array_equal(result.trace.lengths, [0, 1, 2, 2])
    assert np.isnan(result.mean_delay)


def test_event_slots_bernoulli():
    slots = event_slots(BernoulliSpec(p=0.2), 50_000, np.random.default_rng(0))
    assert len(slots) / 50_000 == pytest.approx(0.2, abs=0.01)
    assert (np.diff(slots) > 0).all()


def test_event_slots_renewal():
    np.testing.assert_array_equal(event_slots(RenewalSpec(sampler=constant_gaps(3)), 10, np.random.default_rng(0)), [3, 6, 9])


def test_event_slots_thinned():
    spec = ThinnedRenewalSpec(sampler=constant_gaps(2), keep=0.5)
    slots = event_slots(spec, 40_000, np.random.default_rng(1))
    assert len(slots) == pytest.approx(10_000, rel=0.05)
    assert (slots % 2 == 0).all()


def test_event_slots_rejects_non_positive_gaps():
    with pytest.raises(ValueError):
        event_slots(RenewalSpec(sampler=constant_gaps(0)), 10, np.random.default_rng(0))


def test_renewal_spec():
    assert isinstance(renewal_spec(4), RenewalSpec)
    thinned = renewal_spec(4, keep=0.5)
    assert isinstance(thinned, ThinnedRenewalSpec)
    assert thinned.keep == 0.5


def test_simulate_queue_is_fifo_and_stable():
    result = simulate_queue(BernoulliSpec(p=0.1), BernoulliSpec(p=0.3), 100_000, np.random.default_rng(2))
    assert result.arrival_rate == pytest.approx(0.1, abs=0.01)
    departed = result.departure_slots[result.delivered]
    assert (np.diff(departed) > 0).all()
    assert (result.delays >= 1).all()
    assert result.trace.recursion_holds()
    assert result.mean_arrivals == pytest.approx(1 / 3, abs=0.03)


def test_meeting_streams():
    sr, rd = meeting_streams(4, 20_000, np.random.default_rng(0))
    # two walks on Z_4 sit together at index 0 in 1/16 of the slots
    assert len(sr) / 20_000 == pytest.approx(1 / 16, abs=0.01)
    assert len(rd) / 20_000 == pytest.approx(1 / 16, abs=0.01)


def test_simulate_tandem_dominates_relay_queue():
    tandem = simulate_tandem(16, 200_000, np.random.default_rng(3))
    np.testing.assert_array_equal(tandem.q2.arrival_slots, tandem.q3.arrival_slots)
    np.testing.assert_array_equal(tandem.q4.arrival_slots, tandem.q3.trace.service_slots)
    assert tandem.dummy_packets >= 0
    assert tandem.dominance_holds()
    assert tandem.tandem_delays.size > 0


def test_q4_closed_forms_against_simulation():
    n = 16
    exact = return_time_moments(torus_oracle(4), 0)
    analysis = q4_analysis(n, exact.mean, exact.second_moment)
    result = simulate_queue(BernoulliSpec(p=2 / (3 * n)), renewal_spec(4), 400_000, np.random.default_rng(4))
    assert result.mean_arrivals == pytest.approx(analysis.E_A, rel=0.05)
    assert result.p_busy == pytest.approx(analysis.P_Q_positive, rel=0.08)
    assert result.mean_delay <= 1.2 * analysis.E_D4_upper


@pytest.mark.slow
def test_q3_delay_below_kingman_bound():
    n = 64
    exact = return_time_moments(torus_oracle(8), 0)
    interarrival = thinned_renewal_moments(exact.mean, exact.second_moment, 0.5)
    bound = kingman_bound(interarrival, geometric_moments(2 / (3 * n)))
    below = 0
    for t in range(100):
        tandem = simulate_tandem(n, 2_000_000, derive_rng(9, t, "queue"))
        assert tandem.dominance_holds()
        below += tandem.q3.mean_delay <= bound
    assert below >= 95


@pytest.mark.slow
def test_q4_closed_forms_at_n_64():
    n = 64
    exact = return_time_moments(torus_oracle(8), 0)
    analysis = q4_analysis(n, exact.mean, exact.second_moment)
    assert analysis.E_A == pytest.approx(2 / 3)
    result = simulate_queue(BernoulliSpec(p=2 / (3 * n)), renewal_spec(8), 10_000_000, np.random.default_rng(64))
    assert result.p_busy == pytest.approx(analysis.P_Q_positive, rel=0.05)
    assert result.mean_arrivals == pytest.approx(analysis.E_A, rel=0.02)
    assert result.mean_sampled_length == pytest.approx(analysis.E_Q, rel=0.1)
    # Little: time-average occupancy equals arrival rate times mean delay
    assert result.time_average_length == pytest.approx(result.arrival_rate * result.mean_delay, rel=0.01)


def test_moment_summary_rejects_jensen_violation():
    with pytest.raises(ValueError):
        MomentSummary(mean=3.0, second_moment=4.0)
