import math

import numpy as np
import pandas as pd
from hamilton.function_modifiers import parameterize, source, value
from loguru import logger

from relaynet.analysis.oracle import return_time_moments, torus_oracle
from relaynet.analysis.queues import (
    BernoulliSpec,
    QueueResult,
    TandemResult,
    geometric_moments,
    kingman_bound,
    q4_analysis,
    renewal_spec,
    simulate_queue,
    simulate_tandem,
    thinned_renewal_moments,
)
from relaynet.config import outputs
from relaynet.models import MomentSummary, Q4Analysis
from relaynet.utils import derive_rng, save_data

# source-relay meetings turn into arrivals with this probability
ARRIVAL_KEEP = 0.5


def intermeeting_oracle(n: int, kind: str) -> MomentSummary:
    """Exact E[Z] and E[Z^2] of the inter-meeting time of two nodes."""
    return return_time_moments(torus_oracle(math.isqrt(n), kind), 0)


def q4_expected(n: int, intermeeting_oracle: MomentSummary) -> Q4Analysis:
    return q4_analysis(n, intermeeting_oracle.mean, intermeeting_oracle.second_moment)


def q3_bound(n: int, intermeeting_oracle: MomentSummary) -> float:
    interarrival = thinned_renewal_moments(intermeeting_oracle.mean, intermeeting_oracle.second_moment, ARRIVAL_KEEP)
    service = geometric_moments(2.0 / (3.0 * n))
    return kingman_bound(interarrival, service)


def tandem_run(n: int, queue_slots: int, seed: int) -> TandemResult:
    return simulate_tandem(n, queue_slots, derive_rng(seed, 0, "queue"), keep=ARRIVAL_KEEP)


def q4_simulated(n: int, kind: str, queue_slots: int, seed: int) -> QueueResult:
    """Bernoulli(2/(3n)) arrivals served at renewal inter-meeting gaps."""
    arrival = BernoulliSpec(p=2.0 / (3.0 * n))
    service = renewal_spec(math.isqrt(n), kind)
    return simulate_queue(arrival, service, queue_slots, derive_rng(seed, 1, "queue"))


def q3_simulated(tandem_run: TandemResult) -> QueueResult:
    return tandem_run.q3


def queue_comparison(
    n: int,
    q4_expected: Q4Analysis,
    q3_bound: float,
    q4_simulated: QueueResult,
    q3_simulated: QueueResult,
    tandem_run: TandemResult,
) -> pd.DataFrame:
    """Analytic values next to their simulated counterparts."""
    rows = [
        ("E_A", q4_expected.E_A, q4_simulated.mean_arrivals),
        ("E_A2", q4_expected.E_A2, q4_simulated.mean_arrivals_squared),
        ("P_Q_positive", q4_expected.P_Q_positive, q4_simulated.p_busy),
        ("E_Q", q4_expected.E_Q, q4_simulated.mean_sampled_length),
        ("E_Qtilde", q4_expected.E_Qtilde_upper, q4_simulated.time_average_length),
        ("D4", q4_expected.E_D4_upper, q4_simulated.mean_delay),
        ("D3", q3_bound, q3_simulated.mean_delay),
        ("D2", np.nan, tandem_run.q2.mean_delay),
        ("D3_plus_D4", np.nan, float(tandem_run.tandem_delays.mean()) if tandem_run.tandem_delays.size else np.nan),
    ]
    df = pd.DataFrame(rows, columns=["quantity", "analytic", "simulated"])
    df.insert(0, "n", n)
    df["ratio"] = df["simulated"] / df["analytic"]
    if not tandem_run.dominance_holds():
        logger.error("Tandem delays fall below the relay-queue delays on some packets")
    return df


# save the nodes


@parameterize(
    save_queue_comparison=dict(df=source("queue_comparison"), output_key=value("queue_comparison")),
)
def save_queue_table(df: pd.DataFrame, output_key: str) -> pd.DataFrame:
    """Saver for the queue comparison table."""
    logger.info(f"Saving queue comparison → {output_key}")
    save_data(df, outputs[output_key])
    return df
