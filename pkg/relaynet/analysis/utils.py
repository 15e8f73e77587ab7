import math

import numpy as np
import pandas as pd
from scipy import stats


def confidence_half_width(values, level: float = 0.95) -> float:
    """
    Half-width of the normal-approximation confidence interval for the mean.

    Parameters
    ----------
    values : array-like
        Per-trial estimates.
    level : float, optional
        Two-sided confidence level, by default 0.95 (z = 1.96).

    Returns
    -------
    float
        z * std / sqrt(count), or 0.0 with fewer than two finite values.
    """
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    if x.size < 2:
        return 0.0
    z = stats.norm.ppf(0.5 + level / 2.0)
    return float(z * x.std(ddof=1) / math.sqrt(x.size))


def summary_stats_table(df: pd.DataFrame, summary_var: str, grouping_var: str = None, level: float = 0.95) -> pd.DataFrame:
    """
    Calculate summary statistics for a given variable in a DataFrame.

    Parameters
    ----------
    df : pd.DataFrame
        DataFrame to calculate summary statistics from
    summary_var : str
        Variable to calculate summary statistics for
    grouping_var : str, optional
        Grouping variable to group summary statistics by, by default None
    level : float, optional
        Confidence level of the reported half-width, by default 0.95

    Returns
    -------
    pd.DataFrame
        DataFrame with mean, standard deviation, minimum, maximum, confidence half-width and count,
        sorted by the grouping variable.
    """
    agg = dict(
        mean="mean",
        std_dev="std",
        minimum="min",
        maximum="max",
        ci=lambda x: confidence_half_width(x, level),
        count="count",
    )
    if grouping_var:
        summary = df.groupby(grouping_var)[summary_var].agg(**agg).reset_index()
        summary = summary.sort_values(grouping_var).reset_index(drop=True)
    else:
        # one group holding every row
        summary = df.groupby(np.zeros(len(df), dtype=int))[summary_var].agg(**agg).reset_index(drop=True)
    summary["count"] = summary["count"].astype(int)
    return summary


def band_ratio(values) -> float:
    """max / min of a positive column, inf when the minimum is not positive."""
    x = np.asarray(values, dtype=float)
    lo = x.min()
    return float(x.max() / lo) if lo > 0 else math.inf
