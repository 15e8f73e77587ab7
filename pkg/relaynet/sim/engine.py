from typing import Optional

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict, model_validator
from tqdm import tqdm

from relaynet.config import BACKLOG_GROWTH_LIMIT, MIN_SLOTS, SLOTS_PER_NLOGN, WARMUP_FRACTION, defaults
from relaynet.models import SchemeParams
from relaynet.network.geometry import sample_configuration
from relaynet.network.mobility import NodeStreams, init_positions
from relaynet.network.protocol import NetworkState, run_slot
from relaynet.utils import default_slots, derive_rng


class TrialResult(BaseModel):
    """
    Outcome of one simulated network.

    Delay samples are kept as three aligned arrays (pair, delay, relayed) over
    the packets delivered after the warmup.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    n: int
    seed: int
    trial: int
    typical: bool
    slots_run: int
    warmup: int
    delivered: np.ndarray
    per_pair_throughput: np.ndarray
    delay_pair: np.ndarray
    delay: np.ndarray
    delay_relayed: np.ndarray
    created: int
    in_flight: int
    max_queue_length: int
    mean_backlog: float
    backlog_first_half: float = 0.0
    backlog_second_half: float = 0.0
    meeting_slots: int
    potential_departures: int
    events: Optional[pd.DataFrame] = None

    @model_validator(mode="after")
    def _check_throughput(self) -> "TrialResult":
        if not self.slots_run > self.warmup >= 0:
            raise ValueError("need slots_run > warmup >= 0")
        expected = self.delivered / (self.slots_run - self.warmup)
        if not np.array_equal(self.per_pair_throughput, expected):
            raise ValueError("per_pair_throughput must equal delivered / (slots_run - warmup)")
        return self

    @property
    def min_throughput(self) -> float:
        return float(self.per_pair_throughput.min())

    @property
    def relayed_delays(self) -> np.ndarray:
        return self.delay[self.delay_relayed]

    @property
    def direct_delays(self) -> np.ndarray:
        return self.delay[~self.delay_relayed]

    @property
    def mean_relayed_delay(self) -> float:
        d = self.relayed_delays
        return float(d.mean()) if d.size else float("nan")

    @property
    def mean_delay(self) -> float:
        return float(self.delay.mean()) if self.delay.size else float("nan")

    @property
    def direct_fraction(self) -> float:
        return float((~self.delay_relayed).mean()) if self.delay.size else float("nan")

    @property
    def backlog_growth(self) -> float:
        """Mean relay backlog over the second half of the measured window divided by the first half."""
        if self.backlog_first_half == 0:
            return float("nan") if self.backlog_second_half == 0 else float("inf")
        return self.backlog_second_half / self.backlog_first_half

    @property
    def stable(self) -> bool:
        # a backlog that keeps growing means some relay queue is served slower than it is fed
        return not self.backlog_growth > BACKLOG_GROWTH_LIMIT

    @property
    def departure_given_meeting(self) -> float:
        if self.meeting_slots == 0:
            return float("nan")
        return self.potential_departures / self.meeting_slots

    def pair_delays(self, pair: int, relayed: Optional[bool] = None) -> np.ndarray:
        mask = self.delay_pair == pair
        if relayed is not None:
            mask &= self.delay_relayed == relayed
        return self.delay[mask]

    def summary(self) -> dict:
        return {
            "n": self.n,
            "seed": self.seed,
            "trial": self.trial,
            "typical": self.typical,
            "slots": self.slots_run,
            "warmup": self.warmup,
            "min_tput": self.min_throughput,
            "mean_tput": float(self.per_pair_throughput.mean()),
            "per_pair_throughput": self.per_pair_throughput,
            "delivered": int(self.delivered.sum()),
            "created": self.created,
            "in_flight": self.in_flight,
            "mean_delay": self.mean_delay,
            "mean_relayed_delay": self.mean_relayed_delay,
            "relayed_packets": int(self.delay_relayed.sum()),
            "direct_packets": int((~self.delay_relayed).sum()),
            "direct_fraction": self.direct_fraction,
            "queue_stats": {
                "max_length": self.max_queue_length,
                "mean_backlog": self.mean_backlog,
                "backlog_growth": self.backlog_growth,
                "stable": self.stable,
            },
            "potential_departures": {
                "meeting_slots": self.meeting_slots,
                "departures": self.potential_departures,
                "p_departure_given_meeting": self.departure_given_meeting,
            },
        }


def resolve_budget(n: int, slots: Optional[int], warmup: Optional[int]) -> tuple[int, int]:
    """Default slot budget max(2e5, 50 n ln n) and a 20% warmup."""
    slots = slots if slots is not None else default_slots(n, MIN_SLOTS, SLOTS_PER_NLOGN)
    warmup = warmup if warmup is not None else int(WARMUP_FRACTION * slots)
    if not slots > warmup >= 0:
        raise ValueError("need slots > warmup >= 0")
    return slots, warmup


def run_trial(
    params: SchemeParams,
    n: int,
    seed: int,
    slots: Optional[int] = None,
    warmup: Optional[int] = None,
    trial: int = 0,
    band_low: float = defaults["band_low"],
    band_high: float = defaults["band_high"],
    log_events: bool = False,
    progress: bool = False,
) -> TrialResult:
    """
    Simulates one random network end to end.

    Parameters
    ----------
    params : SchemeParams
        Relay policy parameters; `params.delta` also sets the disk radius.
    n : int
        Number of nodes, an even perfect square.
    seed : int
        Master seed. Geometry, mobility (one stream per node) and protocol
        draws use separate derived streams for `trial`.
    slots, warmup : int, optional
        Run length and the number of initial slots excluded from statistics.
        On an atypical network a default warmup is stretched so the measured
        window holds whole round-robin cycles of n/2 slots, which makes every
        pair's throughput exactly 2/n.
    trial : int
        Trial id folded into the derived streams.
    band_low, band_high : float
        Typicality band multipliers.
    log_events : bool
        Keep a per-transmission event log.
    progress : bool
        Show a progress bar over slots.

    Returns
    -------
    TrialResult
    """
    default_warmup = warmup is None
    slots, warmup = resolve_budget(n, slots, warmup)
    config = sample_configuration(n, params.delta, derive_rng(seed, trial, "geometry"), band_low, band_high)
    if default_warmup and not config.typical:
        warmup += (slots - warmup) % (n // 2)
    streams = NodeStreams(seed, trial, n)
    protocol_rng = derive_rng(seed, trial, "protocol")
    state = NetworkState(config, init_positions(n, streams), log_events=log_events)
    logger.info(f"Trial {trial} n={n} seed={seed}: {slots} slots, typical={config.typical}")

    halfway = warmup + (slots - warmup) // 2
    backlog = np.zeros(2, dtype=np.int64)
    for t in tqdm(range(slots), desc=f"n={n} trial {trial}", disable=not progress, leave=False):
        if t == warmup:
            delivered_at_warmup = state.delivered.copy()
            meetings_at_warmup = state.meeting_slots
            departures_at_warmup = state.potential_departures
        run_slot(state, params, streams, protocol_rng)
        if t >= warmup:
            backlog[int(t >= halfway)] += state.bank.total()

    records = np.array(state.deliveries, dtype=np.int64).reshape(-1, 4)
    records = records[records[:, 1] >= warmup]
    delivered = state.delivered - delivered_at_warmup
    measured = slots - warmup

    result = TrialResult(
        n=n,
        seed=seed,
        trial=trial,
        typical=config.typical,
        slots_run=slots,
        warmup=warmup,
        delivered=delivered,
        per_pair_throughput=delivered / measured,
        delay_pair=records[:, 0],
        delay=records[:, 2],
        delay_relayed=records[:, 3].astype(bool),
        created=int(state.created.sum()),
        in_flight=state.bank.total(),
        max_queue_length=state.bank.max_length,
        mean_backlog=float(backlog.sum()) / measured,
        backlog_first_half=float(backlog[0]) / max(halfway - warmup, 1),
        backlog_second_half=float(backlog[1]) / (slots - halfway),
        meeting_slots=state.meeting_slots - meetings_at_warmup,
        potential_departures=state.potential_departures - departures_at_warmup,
        events=state.events_frame() if log_events else None,
    )
    if not result.stable:
        logger.warning(
            f"Trial {trial} n={n}: relay backlog grew {result.backlog_growth:.3g}x between the halves of the run, "
            f"queues look unstable at alpha={params.alpha}"
        )
    logger.debug(
        f"Trial {trial} n={n}: min throughput {result.min_throughput:.4g}, "
        f"mean relayed delay {result.mean_relayed_delay:.4g}, {result.in_flight} in flight"
    )
    return result
