from typing import Any, Optional

import pandas as pd
from hamilton.function_modifiers import parameterize, source, value
from loguru import logger

from relaynet.analysis.utils import summary_stats_table
from relaynet.config import WARMUP_FRACTION, outputs
from relaynet.models import ScalingEstimate, SchemeParams
from relaynet.sim.engine import TrialResult
from relaynet.sim.sweep import SweepTable, estimate_scaling, run_sweep_trials, tabulate
from relaynet.utils import is_even_perfect_square, save_data


def n_values(n_list: list[int]) -> list[int]:
    bad = [n for n in n_list if not is_even_perfect_square(n)]
    if bad:
        raise ValueError(f"n must be an even perfect square, got {bad}")
    return sorted(set(n_list))


def scheme_params(p_delta: float, alpha: float, delta: float) -> SchemeParams:
    return SchemeParams(p_delta=p_delta, alpha=alpha, delta=delta)


def trial_results(
    scheme_params: SchemeParams,
    n_values: list[int],
    trials: int,
    seed: int,
    band_low: float,
    band_high: float,
    slots: Optional[int] = None,
    workers: int = 1,
) -> list[TrialResult]:
    """All trials of the sweep, in (n, trial) order. A fixed `slots` overrides the n-dependent budget."""
    slots_rule = (lambda n: slots) if slots is not None else None
    return run_sweep_trials(
        scheme_params,
        n_values,
        trials,
        slots_rule=slots_rule,
        seed=seed,
        warmup_fraction=WARMUP_FRACTION,
        band_low=band_low,
        band_high=band_high,
        workers=workers,
    )


def trial_frame(trial_results: list[TrialResult]) -> pd.DataFrame:
    """One row per trial, in (n, trial) order."""
    rows = []
    for result in trial_results:
        summary = result.summary()
        rows.append(
            {
                "n": result.n,
                "trial": result.trial,
                "typical": result.typical,
                "slots": result.slots_run,
                "min_tput": summary["min_tput"],
                "mean_tput": summary["mean_tput"],
                "mean_relayed_delay": summary["mean_relayed_delay"],
                "mean_delay": summary["mean_delay"],
                "direct_fraction": summary["direct_fraction"],
                "in_flight": result.in_flight,
                "max_queue_length": result.max_queue_length,
                "backlog_growth": result.backlog_growth,
            }
        )
    return pd.DataFrame(rows)


def delay_summary(trial_frame: pd.DataFrame) -> pd.DataFrame:
    return summary_stats_table(trial_frame, "mean_relayed_delay", grouping_var="n")


def sweep_table(trial_results: list[TrialResult]) -> SweepTable:
    return tabulate(trial_results)


def sweep_frame(sweep_table: SweepTable) -> pd.DataFrame:
    return sweep_table.to_csv_frame()


def sweep_json(sweep_table: SweepTable) -> dict:
    return sweep_table.to_json()


def scaling_estimate(sweep_table: SweepTable) -> ScalingEstimate:
    estimate = estimate_scaling(sweep_table)
    logger.info(
        f"Throughput band ratio {estimate.throughput_band_ratio:.3g}, delay band ratio "
        f"{estimate.delay_band_ratio:.3g}, delay exponent {estimate.fitted_exponent:.3g}"
    )
    return estimate


# save the nodes


@parameterize(
    save_sweep_csv=dict(payload=source("sweep_frame"), output_key=value("sweep_table")),
    save_sweep_json=dict(payload=source("sweep_json"), output_key=value("sweep_table_json")),
    save_trials=dict(payload=source("trial_frame"), output_key=value("trials")),
    save_delay_summary=dict(payload=source("delay_summary"), output_key=value("delay_summary")),
)
def save_sweep(payload: Any, output_key: str) -> Any:
    """Saver for the sweep tables."""
    logger.info(f"Saving sweep → {output_key}")
    save_data(payload, outputs[output_key])
    return payload
