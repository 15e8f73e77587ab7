"""
Slot-synchronous FIFO queues driven by arrival and potential-departure
(service) event streams, the relay-queue tandem built from them, and the
closed-form bounds they are compared against.

Within a slot arrivals come first, then service, so a packet can leave in the
slot it arrived in and its delay is departure slot - arrival slot + 1.
"""

import math
from typing import Callable, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from relaynet.exceptions import InstabilityError
from relaynet.models import MomentSummary, Q4Analysis
from relaynet.network.mobility import NodePositions, intermeeting_times, trajectory

Sampler = Callable[[int, np.random.Generator], np.ndarray]


class BernoulliSpec(BaseModel):
    kind: Literal["bernoulli"] = "bernoulli"
    p: float = Field(..., ge=0.0, le=1.0)


class RenewalSpec(BaseModel):
    """Events separated by i.i.d. gaps drawn from `sampler(size, rng)`."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: Literal["renewal"] = "renewal"
    sampler: Sampler


class ThinnedRenewalSpec(RenewalSpec):
    kind: Literal["thinned-renewal"] = "thinned-renewal"
    keep: float = Field(..., gt=0.0, le=1.0)


EventSpec = Union[BernoulliSpec, RenewalSpec, ThinnedRenewalSpec]


class QueueTrace(BaseModel):
    """
    Per-slot queue lengths and the chain sampled at potential departures.

    `lengths[t]` counts packets present when slot t is served (after that
    slot's arrivals). `sampled[i]` is the length at the i-th potential
    departure and `arrivals_between[i]` the arrivals in
    (service_slots[i-1], service_slots[i]].
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    lengths: np.ndarray
    service_slots: np.ndarray
    sampled: np.ndarray
    arrivals_between: np.ndarray

    @property
    def busy(self) -> np.ndarray:
        return self.sampled > 0

    def recursion_holds(self) -> bool:
        """Q_{i+1} = Q_i - 1{Q_i > 0} + A_{i+1} on every step."""
        q = self.sampled.astype(np.int64)
        if len(q) < 2:
            return True
        return bool(np.array_equal(q[1:], q[:-1] - (q[:-1] > 0) + self.arrivals_between[1:]))


class QueueResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    slots: int
    arrival_slots: np.ndarray
    departure_slots: np.ndarray  # per arrival, -1 when still queued at the end
    trace: QueueTrace

    @property
    def delivered(self) -> np.ndarray:
        return self.departure_slots >= 0

    @property
    def delays(self) -> np.ndarray:
        mask = self.delivered
        return self.departure_slots[mask] - self.arrival_slots[mask] + 1

    @property
    def mean_delay(self) -> float:
        delays = self.delays
        return float(delays.mean()) if delays.size else math.nan

    @property
    def arrival_rate(self) -> float:
        return len(self.arrival_slots) / self.slots

    @property
    def time_average_length(self) -> float:
        return float(self.trace.lengths.mean())

    @property
    def p_busy(self) -> float:
        return float(self.trace.busy.mean()) if self.trace.sampled.size else math.nan

    @property
    def mean_sampled_length(self) -> float:
        return float(self.trace.sampled.mean()) if self.trace.sampled.size else math.nan

    @property
    def mean_arrivals(self) -> float:
        return float(self.trace.arrivals_between[1:].mean()) if self.trace.sampled.size > 1 else math.nan

    @property
    def mean_arrivals_squared(self) -> float:
        a = self.trace.arrivals_between[1:].astype(float)
        return float((a**2).mean()) if a.size else math.nan


class TandemResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    q2: QueueResult
    q3: QueueResult
    q4: QueueResult
    tandem_departures: np.ndarray  # per Q2/Q3 arrival, -1 if not through Q4
    dummy_packets: int

    @property
    def tandem_delays(self) -> np.ndarray:
        mask = self.tandem_departures >= 0
        return self.tandem_departures[mask] - self.q3.arrival_slots[mask] + 1

    def dominance_holds(self) -> bool:
        """Every packet through Q3 then Q4 leaves no earlier than through Q2."""
        both = (self.tandem_departures >= 0) & self.q2.delivered
        return bool(np.all(self.tandem_departures[both] >= self.q2.departure_slots[both])) and bool(
            np.all(self.q2.delivered[self.tandem_departures >= 0])
        )


def geometric_moments(p: float) -> MomentSummary:
    """Moments of a Geometric(p) number of slots on {1, 2, ...}."""
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    return MomentSummary(mean=1.0 / p, second_moment=(2.0 - p) / p**2, source="closed-form")


def thinned_renewal_moments(EZ: float, EZ2: float, keep: float) -> MomentSummary:
    """
    Moments of Z_1 + ... + Z_G with G ~ Geometric(keep) independent of the
    i.i.d. gaps Z, the gap between kept events of a renewal stream.
    """
    if not 0 < keep <= 1:
        raise ValueError("keep must lie in (0, 1]")
    var_z = EZ2 - EZ**2
    mean_g = 1.0 / keep
    var_g = (1.0 - keep) / keep**2
    mean = mean_g * EZ
    var = mean_g * var_z + var_g * EZ**2
    return MomentSummary(mean=mean, second_moment=var + mean**2, source="closed-form")


def kingman_bound(interarrival: MomentSummary, service: MomentSummary) -> float:
    """
    Kingman's GI/G/1 bound on the mean waiting time plus the mean service
    time, i.e. an upper bound on the mean delay.
    """
    rho = service.mean / interarrival.mean
    if rho >= 1:
        raise InstabilityError(f"queue is unstable: load {rho:.4g} >= 1")
    lam = 1.0 / interarrival.mean
    return lam * (interarrival.variance + service.variance) / (2.0 * (1.0 - rho)) + service.mean


def q4_analysis(n: int, EZ: float, EZ2: float) -> Q4Analysis:
    """
    Closed forms for the queue fed by Bernoulli(2/(3n)) arrivals and served
    at the relay-destination meetings (gaps Z with moments EZ, EZ2).

    Arrivals between two services are Binomial(Z, 2/(3n)), so
    E[A] = 2 EZ / (3n) and E[A^2] = 2 EZ / (3n) + 4 (EZ2 - EZ) / (9 n^2).
    Squaring Q' = Q - 1{Q>0} + A gives
    E[Q] = (E[A] + E[A^2] - 2 E[A]^2) / (2 (1 - E[A])), and Little's law at
    rate 2/(3n) turns the time-average length bound into a delay bound.
    """
    rate = 2.0 / (3.0 * n)
    E_A = rate * EZ
    if E_A >= 1:
        raise InstabilityError(f"mean arrivals per service {E_A:.4g} >= 1")
    E_A2 = rate * EZ + rate**2 * (EZ2 - EZ)
    E_Q = (E_A + E_A2 - 2.0 * E_A**2) / (2.0 * (1.0 - E_A))
    E_Qtilde_upper = E_Q + rate * EZ2 / EZ
    return Q4Analysis(
        n=n,
        E_A=E_A,
        E_A2=E_A2,
        P_Q_positive=E_A,
        E_Q=E_Q,
        E_Qtilde_upper=E_Qtilde_upper,
        E_D4_upper=E_Qtilde_upper / rate,
    )


def intermeeting_sampler(m: int, kind: str = "natural-product") -> Sampler:
    """Sampler of inter-meeting gaps for RenewalSpec."""

    def sample(size: int, rng: np.random.Generator) -> np.ndarray:
        return intermeeting_times(m, size, rng, kind)

    return sample


def event_slots(spec: EventSpec, slots: int, rng: np.random.Generator) -> np.ndarray:
    """Sorted slots in [0, slots) at which the event stream fires."""
    if isinstance(spec, BernoulliSpec):
        return np.flatnonzero(rng.random(slots) < spec.p)
    times = []
    elapsed = 0
    while elapsed < slots:
        gaps = np.asarray(spec.sampler(max(64, slots // 64), rng), dtype=np.int64)
        if gaps.size == 0 or gaps.min() < 1:
            raise ValueError("renewal gaps must be positive integers")
        block = elapsed + np.cumsum(gaps)
        times.append(block)
        elapsed = int(block[-1])
    events = np.concatenate(times)
    events = events[events < slots]
    if isinstance(spec, ThinnedRenewalSpec):
        events = events[rng.random(len(events)) < spec.keep]
    return events


def fifo_departures(arrival_slots: np.ndarray, service_slots: np.ndarray) -> np.ndarray:
    """
    Index into `service_slots` at which each arrival leaves a FIFO queue, or
    -1 if it is still waiting when the services run out.

    Packet k leaves at the first service not before its arrival and after the
    service used by packet k - 1: idx_k = max(s_k, idx_{k-1} + 1) with s_k the
    first service slot >= a_k, which unrolls to k + cummax(s_k - k).
    """
    if arrival_slots.size == 0:
        return np.empty(0, dtype=np.int64)
    first = np.searchsorted(service_slots, arrival_slots, side="left")
    k = np.arange(len(arrival_slots))
    idx = k + np.maximum.accumulate(first - k)
    return np.where(idx < len(service_slots), idx, -1)


def run_fifo(arrival_slots: np.ndarray, service_slots: np.ndarray, slots: int) -> QueueResult:
    """FIFO single-server queue for given arrival and potential-departure slots."""
    arrival_slots = np.asarray(arrival_slots, dtype=np.int64)
    service_slots = np.asarray(service_slots, dtype=np.int64)
    idx = fifo_departures(arrival_slots, service_slots)
    departures = np.where(idx >= 0, service_slots[np.maximum(idx, 0)] if service_slots.size else -1, -1)

    arrived = np.cumsum(np.bincount(arrival_slots, minlength=slots)[:slots])
    left = np.cumsum(np.bincount(departures[departures >= 0], minlength=slots)[:slots])
    left_before = np.concatenate([[0], left[:-1]])
    lengths = (arrived - left_before).astype(np.int32)

    sampled = lengths[service_slots] if service_slots.size else np.empty(0, dtype=np.int32)
    arrived_by_service = arrived[service_slots] if service_slots.size else np.empty(0, dtype=np.int64)
    arrivals_between = np.diff(arrived_by_service, prepend=0)

    trace = QueueTrace(
        lengths=lengths,
        service_slots=service_slots,
        sampled=sampled,
        arrivals_between=arrivals_between,
    )
    return QueueResult(slots=slots, arrival_slots=arrival_slots, departure_slots=departures, trace=trace)


def simulate_queue(arrival: EventSpec, service: EventSpec, slots: int, rng: np.random.Generator) -> QueueResult:
    """
    Simulates a slot-synchronous FIFO queue.

    Parameters
    ----------
    arrival : EventSpec
        Arrival stream (Bernoulli, renewal or thinned renewal).
    service : EventSpec
        Potential-departure stream.
    slots : int
        Horizon.
    rng : np.random.Generator
        Drives both streams, arrivals first.

    Returns
    -------
    QueueResult
    """
    arrivals = event_slots(arrival, slots, rng)
    services = event_slots(service, slots, rng)
    return run_fifo(arrivals, services, slots)


def meeting_streams(m: int, slots: int, rng: np.random.Generator, offset: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """
    Meeting slots of a source-relay and a relay-destination pair sharing the relay.

    Nodes S, R, D walk on Z_m. S meets R when both sit at index 0; R meets
    D when R is at `offset` and D at 0, so with a non-zero offset R needs at
    least `offset` steps between the two kinds of meeting.
    """
    start = NodePositions(pos=rng.integers(0, m, size=3), m=m)
    path = trajectory(start, slots, rng)
    s, r, d = path[:, 0], path[:, 1], path[:, 2]
    sr = np.flatnonzero((s == 0) & (r == 0))
    rd = np.flatnonzero((r == offset % m) & (d == 0))
    return sr, rd


def simulate_tandem(
    n: int,
    slots: int,
    rng: np.random.Generator,
    keep: float = 0.5,
    offset: int = 0,
) -> TandemResult:
    """
    Runs the relay queue Q2 and its tandem upper bound Q3 -> Q4 on shared streams.

    Q2 and Q3 see the same arrivals (source-relay meetings kept with
    probability `keep`). Q2 is served at relay-destination meetings. Q3 is
    served by Bernoulli(2/(3n)) slots and every one of them feeds Q4, with
    a dummy packet when Q3 is empty. Q4 is served at the relay-destination
    meetings.
    """
    m = math.isqrt(n)
    sr, rd = meeting_streams(m, slots, rng, offset)
    arrivals = sr[rng.random(len(sr)) < keep]
    bernoulli = np.flatnonzero(rng.random(slots) < 2.0 / (3.0 * n))

    q2 = run_fifo(arrivals, rd, slots)
    q3 = run_fifo(arrivals, bernoulli, slots)
    q4 = run_fifo(bernoulli, rd, slots)

    # the packet leaving Q3 at bernoulli[j] is arrival j of Q4
    q3_idx = fifo_departures(arrivals, bernoulli)
    tandem = np.full(len(arrivals), -1, dtype=np.int64)
    through_q3 = q3_idx >= 0
    tandem[through_q3] = q4.departure_slots[q3_idx[through_q3]]
    dummies = len(bernoulli) - int(through_q3.sum())
    return TandemResult(q2=q2, q3=q3, q4=q4, tandem_departures=tandem, dummy_packets=dummies)


def renewal_spec(m: int, kind: str = "natural-product", keep: float = 1.0) -> RenewalSpec:
    sampler = intermeeting_sampler(m, kind)
    if keep < 1.0:
        return ThinnedRenewalSpec(sampler=sampler, keep=keep)
    return RenewalSpec(sampler=sampler)

