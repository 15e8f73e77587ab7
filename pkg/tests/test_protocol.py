import math

import numpy as np
import pytest

from relaynet.exceptions import ConservationError
from relaynet.models import SchemeParams
from relaynet.network.geometry import build_configuration, pairwise_geodesic, sample_configuration
from relaynet.network.mobility import NodePositions, NodeStreams, init_positions, neighbor_matrix
from relaynet.network.protocol import (
    EVENT_COLUMNS,
    NetworkState,
    Packet,
    RelayQueueBank,
    TransmissionAttempt,
    activation_lower_bound,
    resolve_interference,
    run_fallback_slot,
    run_slot,
    run_subslot_A,
    run_subslot_B,
)
from relaynet.utils import derive_rng

PARAMS = SchemeParams(p_delta=0.5, alpha=0.5, delta=0.5)


class ScriptedRng:
    """Returns queued arrays from `random` and the first option from `choice`."""

    def __init__(self, draws):
        self.draws = list(draws)

    def random(self, size):
        out = np.asarray(self.draws.pop(0), dtype=float)
        assert out.shape == (size,)
        return out

    def choice(self, options):
        return options[0]


@pytest.fixture
def config16():
    return sample_configuration(16, 0.5, derive_rng(11, 0, "geometry"))


@pytest.fixture
def atypical_config():
    rng = np.random.default_rng(5)
    poles = np.array([0.0, 0.0, 1.0]) + 0.01 * rng.standard_normal((144, 3))
    return build_configuration(
        poles, rng.uniform(0, 2 * math.pi, 144), 0.5, np.arange(144).reshape(-1, 2), band_low=0.5, band_high=1.01
    )


def isolate(config, a, b):
    """Positions where a and b meet and b is the only neighbour of a."""
    m = config.m
    pos = np.array([(config.nearest[k, a] + 1) % m if k not in (a, b) else 0 for k in range(config.n)])
    pos[a] = config.nearest[a, b]
    pos[b] = config.nearest[b, a]
    positions = NodePositions(pos=pos, m=m)
    neighbors = neighbor_matrix(config, positions)
    neighbors_a = set(np.flatnonzero(neighbors[a]).tolist())
    assert neighbors_a == {b}
    return positions


def place(state, positions):
    state.positions = positions
    state.neighbors = neighbor_matrix(state.config, positions)


def only(size, index):
    mask = np.ones(size)
    mask[index] = 0.0
    return mask


def test_packet_delay_and_relayed():
    packet = Packet(pair_id=0, seq=0, depart_source_slot=10)
    assert packet.delay is None
    assert not packet.relayed
    packet.relay_id = 4
    packet.deliver_slot = 10
    assert packet.delay == 1
    assert packet.relayed


def test_transmission_attempt_rejects_self_loop():
    with pytest.raises(ValueError):
        TransmissionAttempt(tx=2, rx=2, kind="direct", pair=0)


def test_relay_queue_bank_is_fifo():
    bank = RelayQueueBank(np.array([0, 0, 1, 1, 2, 2]))
    packets = [Packet(pair_id=1, seq=k, depart_source_slot=k) for k in range(3)]
    for packet in packets:
        bank.enqueue(4, packet)
    assert bank.length(4, 1) == 3
    assert bank.total() == 3
    assert bank.max_length == 3
    assert bank.head(4, 1) is packets[0]
    assert [bank.pop(4, 1).seq for _ in range(3)] == [0, 1, 2]
    assert bank.head(4, 1) is None
    assert bank.total() == 0
    assert bank.length(0, 2) == 0


def test_relay_queue_bank_rejects_own_pair():
    bank = RelayQueueBank(np.array([0, 0, 1, 1]))
    with pytest.raises(ValueError):
        bank.enqueue(2, Packet(pair_id=1, seq=0, depart_source_slot=0))


@pytest.mark.parametrize("p,k,expected", [(0.3, 0, 0.21), (0.5, 1, 0.0625), (0.5, 3, 0.5**5 / 4)])
def test_activation_lower_bound(p, k, expected):
    assert activation_lower_bound(p, k) == pytest.approx(expected)


def brute_force_interference(attempts, config, positions, delta):
    coords = config.position_coords(positions.pos)
    transmitters = {a.tx for a in attempts}
    winners = []
    for a in attempts:
        if a.rx in transmitters:
            continue
        own = pairwise_geodesic(coords[a.tx], coords[a.rx])[0, 0]
        others = [pairwise_geodesic(coords[b.tx], coords[a.rx])[0, 0] for b in attempts if b is not a]
        if all(d >= (1 + delta) * own for d in others):
            winners.append(a)
    return winners


@pytest.mark.parametrize("seed", range(5))
def test_resolve_interference_matches_guard_zone_rule(config16, seed):
    rng = np.random.default_rng(seed)
    positions = NodePositions(pos=rng.integers(0, 4, 16), m=4)
    transmitters = rng.choice(16, size=6, replace=False)
    attempts = []
    for tx in transmitters:
        rx = int(rng.choice([k for k in range(16) if k != tx]))
        attempts.append(TransmissionAttempt(tx=int(tx), rx=rx, kind="direct", pair=int(config16.pair_of[tx])))
    expected = brute_force_interference(attempts, config16, positions, 0.5)
    assert resolve_interference(attempts, config16, positions, 0.5) == expected

    shuffled = [attempts[k] for k in rng.permutation(len(attempts))]
    won = resolve_interference(shuffled, config16, positions, 0.5)
    assert set(map(id, won)) == set(map(id, expected))


def test_resolve_interference_half_duplex(config16):
    positions = NodePositions(pos=np.zeros(16, dtype=np.int64), m=4)
    a = TransmissionAttempt(tx=0, rx=1, kind="source-to-relay", pair=int(config16.pair_of[0]))
    b = TransmissionAttempt(tx=1, rx=2, kind="source-to-relay", pair=int(config16.pair_of[1]))
    assert a not in resolve_interference([a, b], config16, positions, 0.5)
    assert resolve_interference([a], config16, positions, 0.5) == [a]
    assert resolve_interference([], config16, positions, 0.5) == []


def test_subslot_A_direct_delivery(config16):
    pair = 0
    source, destination = (int(x) for x in config16.sd_pairs[pair])
    state = NetworkState(config16, isolate(config16, source, destination), log_events=True)
    successes = run_subslot_A(state, config16, PARAMS, ScriptedRng([only(8, pair), np.zeros(8)]))
    assert len(successes) == 1
    assert successes[0].kind == "direct"
    assert successes[0].packet.delay == 1
    assert state.deliveries == [(pair, 0, 1, False)]
    assert state.bank.total() == 0
    assert state.events_frame().columns.tolist() == EVENT_COLUMNS


def test_subslot_A_then_B_relays_a_packet(config16):
    pair = 1
    source, destination = (int(x) for x in config16.sd_pairs[pair])
    relay = next(k for k in range(16) if config16.pair_of[k] != pair)
    state = NetworkState(config16, isolate(config16, source, relay))

    successes = run_subslot_A(state, config16, PARAMS, ScriptedRng([only(8, pair), np.zeros(8)]))
    assert len(successes) == 1
    packet = successes[0].packet
    assert successes[0].kind == "source-to-relay"
    assert packet.relay_id == relay
    assert packet.arrive_relay_slot == 0
    assert state.bank.length(relay, pair) == 1

    state.slot = 6
    place(state, isolate(config16, relay, destination))
    forwarded = run_subslot_B(state, config16, PARAMS, ScriptedRng([only(16, relay)]))
    assert len(forwarded) == 1
    assert forwarded[0].packet is packet
    assert packet.delay == 7
    assert state.deliveries == [(pair, 6, 7, True)]
    assert state.potential_departures == 1
    assert state.meeting_slots >= 1
    state.check_conservation()


def test_subslot_B_empty_queue_is_a_potential_departure(config16):
    pair = 2
    destination = int(config16.sd_pairs[pair, 1])
    relay = next(k for k in range(16) if config16.pair_of[k] != pair)
    state = NetworkState(config16, isolate(config16, relay, destination))
    forwarded = run_subslot_B(state, config16, PARAMS, ScriptedRng([only(16, relay)]))
    assert len(forwarded) == 1
    assert forwarded[0].packet is None
    assert state.potential_departures == 1
    assert state.deliveries == []


def test_subslot_B_source_meeting_own_destination_only_interferes(config16):
    pair = 3
    source, destination = (int(x) for x in config16.sd_pairs[pair])
    state = NetworkState(config16, isolate(config16, source, destination), log_events=True)
    other_meetings = int((state.neighbors[:, config16.destinations] & state.foreign).sum())
    forwarded = run_subslot_B(state, config16, PARAMS, ScriptedRng([only(16, source)]))
    assert len(forwarded) == 1
    assert forwarded[0].tx == source
    assert forwarded[0].packet is None
    assert state.potential_departures == 0
    assert state.meeting_slots == other_meetings
    assert not state.foreign[source, pair]
    assert state.deliveries == []
    assert state.events_frame()["kind"].tolist() == ["relay-forward"]


def test_subslot_A_without_neighbours_does_nothing(config16):
    state = NetworkState(config16, isolate(config16, 0, 1))
    lonely = [k for k in config16.sources if not state.neighbors[k].any()]
    active = np.ones(8)
    active[[config16.pair_of[k] for k in lonely]] = 0.0
    assert run_subslot_A(state, config16, PARAMS, ScriptedRng([active, np.zeros(8)])) == []
    assert state.created.sum() == 0


def test_check_conservation_detects_lost_packets(config16):
    state = NetworkState(config16, isolate(config16, 0, 1))
    state.check_conservation()
    state.created[0] += 1
    with pytest.raises(ConservationError):
        state.check_conservation()


def test_fallback_slot_round_robin(atypical_config):
    assert not atypical_config.typical
    state = NetworkState(atypical_config, init_positions(144, np.random.default_rng(0)))
    for slot in range(144):
        state.slot = slot
        (packet,) = run_fallback_slot(state, atypical_config, slot)
        assert packet.pair_id == slot % 72
        assert packet.delay == 1
    assert (state.delivered == 2).all()


def test_run_slot_conserves_packets_and_keeps_fifo(config16):
    streams = NodeStreams(1, 0, 16)
    state = NetworkState(config16, init_positions(16, streams), log_events=True)
    rng = derive_rng(1, 0, "protocol")
    for _ in range(3_000):
        run_slot(state, PARAMS, streams, rng)
    assert state.slot == 3_000
    assert state.created.sum() == state.delivered.sum() + state.bank.total()
    assert state.potential_departures <= state.meeting_slots

    events = state.events_frame()
    forwarded = events[(events["subslot"] == "B") & (events["outcome"] == "success") & (events["seq"] != "")]
    for _, group in forwarded.groupby(["tx", "pair"]):
        seqs = group["seq"].astype(int).to_numpy()
        assert (np.diff(seqs) > 0).all()
    for pair, _, delay, relayed in state.deliveries:
        assert delay >= 1
        if not relayed:
            assert delay == 1


def test_run_slot_uses_fallback_when_atypical(atypical_config):
    rng = np.random.default_rng(0)
    state = NetworkState(atypical_config, init_positions(144, rng))
    for _ in range(72):
        run_slot(state, PARAMS, rng, rng)
    assert (state.delivered == 1).all()
    assert state.bank.total() == 0
