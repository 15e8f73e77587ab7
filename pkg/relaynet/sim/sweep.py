import concurrent.futures
import math
from functools import partial
from typing import Callable, Optional

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict, field_validator
from tqdm import tqdm

from relaynet.analysis.utils import band_ratio, confidence_half_width
from relaynet.config import MIN_SLOTS, SLOTS_PER_NLOGN, WARMUP_FRACTION, defaults
from relaynet.exceptions import DegenerateInputError
from relaynet.models import ScalingEstimate, SchemeParams
from relaynet.sim.engine import TrialResult, run_trial
from relaynet.utils import default_slots, is_even_perfect_square

# trials of different n get disjoint stream ids: n * TRIAL_STRIDE + trial
TRIAL_STRIDE = 1_000_000

CSV_COLUMNS = ["n", "trials", "slots", "min_tput_x_n", "ci", "mean_delay", "delay_norm", "ci"]


class SweepRow(BaseModel):
    n: int
    trials: int
    slots: int
    typical_fraction: float
    min_tput: float
    min_tput_x_n: float
    min_tput_x_n_ci: float
    mean_delay: float
    mean_delay_ci: float
    delay_norm: float
    delay_norm_ci: float
    min_tput_typical: float
    mean_delay_mixed: float
    direct_fraction: float
    p_departure_given_meeting: float


class SweepTable(BaseModel):
    model_config = ConfigDict(frozen=True)

    rows: list[SweepRow]

    @field_validator("rows")
    @classmethod
    def _sorted_by_n(cls, v: list[SweepRow]) -> list[SweepRow]:
        return sorted(v, key=lambda row: row.n)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.model_dump() for row in self.rows])

    def to_csv_frame(self) -> pd.DataFrame:
        """The published table, with two columns both labelled `ci`."""
        df = self.to_frame()[["n", "trials", "slots", "min_tput_x_n", "min_tput_x_n_ci", "mean_delay", "delay_norm", "delay_norm_ci"]]
        df.columns = CSV_COLUMNS
        return df

    def to_json(self) -> dict:
        return {"rows": [row.model_dump() for row in self.rows]}


def _nanmean(values) -> float:
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    return float(x.mean()) if x.size else math.nan


def aggregate(n: int, results: list[TrialResult]) -> SweepRow:
    """Reduces the trials of one n to a table row; relayed delays only for mean_delay."""
    nlogn = n * math.log(n)
    min_tput = [r.min_throughput for r in results]
    relayed = [r.mean_relayed_delay for r in results]
    typical = [r for r in results if r.typical]
    return SweepRow(
        n=n,
        trials=len(results),
        slots=results[0].slots_run,
        typical_fraction=len(typical) / len(results),
        min_tput=_nanmean(min_tput),
        min_tput_x_n=_nanmean(min_tput) * n,
        min_tput_x_n_ci=confidence_half_width(min_tput) * n,
        mean_delay=_nanmean(relayed),
        mean_delay_ci=confidence_half_width(relayed),
        delay_norm=_nanmean(relayed) / nlogn,
        delay_norm_ci=confidence_half_width(relayed) / nlogn,
        min_tput_typical=_nanmean([r.min_throughput for r in typical]),
        mean_delay_mixed=_nanmean([r.mean_delay for r in results]),
        direct_fraction=_nanmean([r.direct_fraction for r in results]),
        p_departure_given_meeting=_nanmean([r.departure_given_meeting for r in results]),
    )


def _run_job(job: tuple, params: SchemeParams, seed: int, band_low: float, band_high: float) -> TrialResult:
    n, trial, slots, warmup = job
    return run_trial(params, n, seed, slots, warmup, trial=trial, band_low=band_low, band_high=band_high)


def run_sweep_trials(
    params: SchemeParams,
    n_list: list[int],
    trials_per_n: int,
    slots_rule: Optional[Callable[[int], int]] = None,
    seed: int = defaults["seed"],
    warmup_fraction: float = WARMUP_FRACTION,
    band_low: float = defaults["band_low"],
    band_high: float = defaults["band_high"],
    workers: int = 1,
    progress: bool = True,
) -> list[TrialResult]:
    bad = [n for n in n_list if not is_even_perfect_square(n)]
    if bad:
        raise ValueError(f"n must be an even perfect square, got {bad}")
    slots_rule = slots_rule or partial(default_slots, min_slots=MIN_SLOTS, per_nlogn=SLOTS_PER_NLOGN)
    sizes = sorted(set(n_list))
    jobs = []
    for n in sizes:
        slots = slots_rule(n)
        warmup = int(warmup_fraction * slots)
        jobs += [(n, n * TRIAL_STRIDE + t, slots, warmup) for t in range(trials_per_n)]
    logger.info(f"Sweeping n={sizes} with {trials_per_n} trials each ({len(jobs)} trials, {workers} workers)")

    run = partial(_run_job, params=params, seed=seed, band_low=band_low, band_high=band_high)
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as executor:
            # map keeps job order whatever the completion order
            return list(tqdm(executor.map(run, jobs), total=len(jobs), desc="trials", disable=not progress))
    return [run(job) for job in tqdm(jobs, desc="trials", disable=not progress)]


def tabulate(results: list[TrialResult]) -> SweepTable:
    sizes = sorted({r.n for r in results})
    rows = []
    for n in sizes:
        rows.append(aggregate(n, sorted((r for r in results if r.n == n), key=lambda r: r.trial)))
    return SweepTable(rows=rows)


def sweep(
    params: SchemeParams,
    n_list: list[int],
    trials_per_n: int,
    slots_rule: Optional[Callable[[int], int]] = None,
    seed: int = defaults["seed"],
    warmup_fraction: float = WARMUP_FRACTION,
    band_low: float = defaults["band_low"],
    band_high: float = defaults["band_high"],
    workers: int = 1,
    progress: bool = True,
) -> SweepTable:
    """
    Runs `trials_per_n` trials for every n and aggregates them into a SweepTable.

    Parameters
    ----------
    params : SchemeParams
        Relay policy parameters.
    n_list : list[int]
        Network sizes, each an even perfect square.
    trials_per_n : int
        Independent trials per size.
    slots_rule : Callable[[int], int], optional
        Slots per trial as a function of n, by default max(2e5, 50 n ln n).
    seed : int
        Master seed; trial t of size n uses stream id n * TRIAL_STRIDE + t.
    warmup_fraction : float
        Share of slots excluded from statistics.
    band_low, band_high : float
        Typicality band multipliers.
    workers : int
        Processes to run trials in; results are reduced in (n, trial) order.
    progress : bool
        Show a progress bar over trials.

    Returns
    -------
    SweepTable
    """
    results = run_sweep_trials(
        params, n_list, trials_per_n, slots_rule, seed, warmup_fraction, band_low, band_high, workers, progress
    )
    return tabulate(results)


def estimate_scaling(table: SweepTable | pd.DataFrame) -> ScalingEstimate:
    """
    Band ratios of the throughput and normalised delay columns and the
    least-squares slope of log(mean_delay) against log(n).
    """
    df = table.to_frame() if isinstance(table, SweepTable) else table
    df = df.sort_values("n")
    if df["n"].nunique() < 3:
        raise DegenerateInputError(f"need at least 3 distinct n to estimate scaling, got {df['n'].nunique()}")
    exponent = np.polyfit(np.log(df["n"].to_numpy(float)), np.log(df["mean_delay"].to_numpy(float)), 1)[0]
    return ScalingEstimate(
        throughput_band_ratio=band_ratio(df["min_tput"]),
        throughput_x_n_band_ratio=band_ratio(df["min_tput_x_n"]),
        delay_band_ratio=band_ratio(df["delay_norm"]),
        fitted_exponent=float(exponent),
    )
