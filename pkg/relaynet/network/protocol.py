"""
Two-phase relay scheme.

Sub-slot A: active sources hand fresh packets to a randomly chosen neighbour
(the relay). Sub-slot B: active nodes that meet destinations forward the head
of the matching relay queue. All transmissions of a sub-slot are checked
together against the guard-zone interference rule. Atypical configurations
fall back to round-robin direct transmission.
"""

from collections import deque
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
import pandas as pd
from loguru import logger

from relaynet.exceptions import ConservationError
from relaynet.models import SchemeParams
from relaynet.network.geometry import Configuration, pairwise_geodesic
from relaynet.network.mobility import NodePositions, NodeStreams, neighbor_matrix, step

AttemptKind = Literal["source-to-relay", "relay-forward", "direct"]

EVENT_COLUMNS = ["slot", "subslot", "tx", "rx", "kind", "pair", "seq", "outcome"]


@dataclass(slots=True)
class Packet:
    pair_id: int
    seq: int
    depart_source_slot: int
    arrive_relay_slot: Optional[int] = None
    deliver_slot: Optional[int] = None
    relay_id: Optional[int] = None

    @property
    def delay(self) -> Optional[int]:
        if self.deliver_slot is None:
            return None
        return self.deliver_slot - self.depart_source_slot + 1

    @property
    def relayed(self) -> bool:
        return self.relay_id is not None


@dataclass(slots=True, frozen=True)
class TransmissionAttempt:
    tx: int
    rx: int
    kind: AttemptKind
    pair: int
    # None is a new-packet marker in sub-slot A and an empty queue in sub-slot B
    packet: Optional[Packet] = None

    def __post_init__(self):
        if self.tx == self.rx:
            raise ValueError("a node cannot transmit to itself")


class RelayQueueBank:
    """Per-(relay, pair) FIFO queues of packets waiting for their destination."""

    def __init__(self, pair_of: np.ndarray):
        self.pair_of = pair_of
        self.queues: dict[tuple[int, int], deque[Packet]] = {}
        self.max_length = 0
        self._total = 0

    def enqueue(self, relay: int, packet: Packet):
        if self.pair_of[relay] == packet.pair_id:
            raise ValueError(f"node {relay} cannot relay packets of its own pair {packet.pair_id}")
        queue = self.queues.setdefault((relay, packet.pair_id), deque())
        queue.append(packet)
        self._total += 1
        self.max_length = max(self.max_length, len(queue))

    def head(self, relay: int, pair: int) -> Optional[Packet]:
        queue = self.queues.get((relay, pair))
        return queue[0] if queue else None

    def pop(self, relay: int, pair: int) -> Packet:
        packet = self.queues[(relay, pair)].popleft()
        self._total -= 1
        return packet

    def length(self, relay: int, pair: int) -> int:
        return len(self.queues.get((relay, pair), ()))

    def total(self) -> int:
        return self._total


class NetworkState:
    """
    Mutable per-trial state: node positions, relay queues, packet counters and
    the delivery record.
    """

    def __init__(
        self,
        config: Configuration,
        positions: NodePositions,
        log_events: bool = False,
    ):
        self.config = config
        self.positions = positions
        self.pair_of = config.pair_of
        self.foreign = self.pair_of[:, None] != np.arange(len(config.sd_pairs))[None, :]
        self.bank = RelayQueueBank(self.pair_of)
        self.slot = 0
        pairs = len(config.sd_pairs)
        self.created = np.zeros(pairs, dtype=np.int64)
        self.delivered = np.zeros(pairs, dtype=np.int64)
        # (pair, deliver_slot, delay, relayed)
        self.deliveries: list[tuple[int, int, int, bool]] = []
        self.meeting_slots = 0
        self.potential_departures = 0
        self.log_events = log_events
        self.events: list[tuple] = []
        self.neighbors = neighbor_matrix(config, positions)

    def move(self, rng: np.random.Generator | NodeStreams):
        self.positions = step(self.positions, rng)
        self.neighbors = neighbor_matrix(self.config, self.positions)

    def new_packet(self, pair: int) -> Packet:
        packet = Packet(pair_id=pair, seq=int(self.created[pair]), depart_source_slot=self.slot)
        self.created[pair] += 1
        return packet

    def deliver(self, packet: Packet):
        packet.deliver_slot = self.slot
        self.delivered[packet.pair_id] += 1
        self.deliveries.append((packet.pair_id, self.slot, packet.delay, packet.relayed))

    def record(self, subslot: str, attempt: TransmissionAttempt, seq: Optional[int], success: bool):
        if self.log_events:
            self.events.append(
                (self.slot, subslot, attempt.tx, attempt.rx, attempt.kind, attempt.pair,
                 "" if seq is None else seq, "success" if success else "fail")
            )

    def check_conservation(self):
        created = int(self.created.sum())
        accounted = self.bank.total() + int(self.delivered.sum())
        if created != accounted:
            raise ConservationError(
                f"slot {self.slot}: {created} packets created but {accounted} queued or delivered"
            )

    def events_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.events, columns=EVENT_COLUMNS)


def activation_lower_bound(p_delta: float, k: int) -> float:
    """
    Probability that a relay competing with k other transmitters in its disk is
    the only one active and picks the right destination among k + 1.
    """
    return p_delta * (1 - p_delta) ** (k + 1) / (k + 1)


def resolve_interference(
    attempts: list[TransmissionAttempt],
    config: Configuration,
    positions: NodePositions,
    delta: float,
) -> list[TransmissionAttempt]:
    """
    Applies the guard-zone rule to all attempts of one sub-slot at once.

    Attempt i -> j succeeds iff every other transmitter k satisfies
    d(k, j) >= (1 + delta) * d(i, j) and j is not itself transmitting.
    The result does not depend on the order of `attempts`.
    """
    if not attempts:
        return []
    tx = np.array([a.tx for a in attempts])
    rx = np.array([a.rx for a in attempts])
    coords = config.position_coords(positions.pos)
    dist = pairwise_geodesic(coords[tx], coords[rx])  # dist[k, a] = d(tx_k, rx_a)
    required = (1 + delta) * np.diag(dist)
    np.fill_diagonal(dist, np.inf)
    clear = (dist >= required[None, :]).all(axis=0)
    # half duplex: a transmitting node cannot receive
    clear &= ~np.isin(rx, tx)
    return [a for a, ok in zip(attempts, clear) if ok]


def run_subslot_A(
    state: NetworkState,
    config: Configuration,
    params: SchemeParams,
    rng: np.random.Generator,
) -> list[TransmissionAttempt]:
    sources = config.sources
    destinations = config.destinations
    active = rng.random(len(sources)) < params.p_delta
    willing = rng.random(len(sources)) < params.alpha
    has_neighbor = state.neighbors[sources].any(axis=1)

    attempts = []
    for pair in np.flatnonzero(active & willing & has_neighbor):
        source = int(sources[pair])
        relay = int(rng.choice(np.flatnonzero(state.neighbors[source])))
        kind = "direct" if relay == destinations[pair] else "source-to-relay"
        attempts.append(TransmissionAttempt(tx=source, rx=relay, kind=kind, pair=int(pair)))

    successes = resolve_interference(attempts, config, state.positions, params.delta)
    won = set(id(a) for a in successes)
    successful = []
    for attempt in attempts:
        if id(attempt) not in won:
            state.record("A", attempt, None, False)
            continue
        packet = state.new_packet(attempt.pair)
        if attempt.kind == "direct":
            state.deliver(packet)
        else:
            packet.arrive_relay_slot = state.slot
            packet.relay_id = attempt.rx
            state.bank.enqueue(attempt.rx, packet)
        state.record("A", attempt, packet.seq, True)
        successful.append(
            TransmissionAttempt(tx=attempt.tx, rx=attempt.rx, kind=attempt.kind, pair=attempt.pair, packet=packet)
        )
    return successful


def run_subslot_B(
    state: NetworkState,
    config: Configuration,
    params: SchemeParams,
    rng: np.random.Generator,
) -> list[TransmissionAttempt]:
    """
    Relay sub-slot: every active node next to at least one destination picks one such pair
    uniformly and forwards the head of its queue for that pair, or an empty packet.

    A source next to its own destination takes part like any other node and occupies the
    channel, but it is never counted as a meeting or a potential departure.
    """
    destinations = config.destinations
    pair_of = state.pair_of
    to_destination = state.neighbors[:, destinations]  # (n, pairs)
    active = rng.random(config.n) < params.p_delta

    # relay-destination meetings with the relay outside the pair
    state.meeting_slots += int((to_destination & state.foreign).sum())

    attempts = []
    for node in np.flatnonzero(active & to_destination.any(axis=1)):
        pair = int(rng.choice(np.flatnonzero(to_destination[node])))
        attempts.append(
            TransmissionAttempt(
                tx=int(node),
                rx=int(destinations[pair]),
                kind="relay-forward",
                pair=pair,
                packet=state.bank.head(int(node), pair),
            )
        )

    successes = resolve_interference(attempts, config, state.positions, params.delta)
    won = set(id(a) for a in successes)
    successful = []
    for attempt in attempts:
        success = id(attempt) in won
        if success:
            successful.append(attempt)
            if pair_of[attempt.tx] != attempt.pair:
                state.potential_departures += 1
            if attempt.packet is not None:
                state.deliver(state.bank.pop(attempt.tx, attempt.pair))
        state.record("B", attempt, None if attempt.packet is None else attempt.packet.seq, success)
    return successful


def run_fallback_slot(state: NetworkState, config: Configuration, slot: int) -> list[Packet]:
    """Round-robin direct transmission: pair (slot mod n/2) delivers one packet with delay 1."""
    pair = slot % len(config.sd_pairs)
    packet = state.new_packet(pair)
    state.deliver(packet)
    source, destination = (int(x) for x in config.sd_pairs[pair])
    state.record("A", TransmissionAttempt(tx=source, rx=destination, kind="direct", pair=pair), packet.seq, True)
    return [packet]


def run_slot(
    state: NetworkState,
    params: SchemeParams,
    mobility: np.random.Generator | NodeStreams,
    rng: np.random.Generator,
):
    """One slot: every node moves, then sub-slot A, then sub-slot B, then the conservation check."""
    config = state.config
    state.move(mobility)
    if config.typical:
        run_subslot_A(state, config, params, rng)
        run_subslot_B(state, config, params, rng)
    else:
        run_fallback_slot(state, config, state.slot)
    state.check_conservation()
    state.slot += 1
    if state.slot % 100_000 == 0:
        logger.debug(f"slot {state.slot}: {state.bank.total()} packets queued at relays")
