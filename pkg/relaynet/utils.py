import json
import math
import sys
from pathlib import Path

import numpy as np
import pandas as pd
from loguru import logger
from tqdm import tqdm

# Tags folded into every derived seed so streams for different purposes never collide
PURPOSE_TAGS = {
    "geometry": 0,
    "mobility": 1,
    "protocol": 2,
    "queue": 3,
    "survey": 4,
}

FLOAT_FORMAT = "%.9g"


def save_data(payload: pd.DataFrame | dict | list, metadata: dict):
    """
    Saves a result payload to a file based on the file type.

    Parameters
    ----------
    payload : pd.DataFrame | dict | list
        The table or JSON-like record to be saved. Dicts and lists can only be
        written as "json".
    metadata : dict
        A dictionary containing "path" and "type" keys. The path is the location
        where the data should be saved, and the type is one of "csv" or "json".

    Returns
    -------
    None
    """
    path = Path(metadata["path"])
    file_type = metadata["type"]
    path.parent.mkdir(parents=True, exist_ok=True)

    if file_type == "csv":
        if not isinstance(payload, pd.DataFrame):
            raise ValueError("Only DataFrames can be saved as csv")
        path.write_text(to_csv_text(payload))
    elif file_type == "json":
        path.write_text(to_json_text(payload))
    else:
        raise ValueError(f"Invalid file type: {file_type}")

    logger.info(f"Data saved to {path}")


def load_data(metadata: dict) -> pd.DataFrame:
    """
    Loads a pandas DataFrame from a file based on the file type.

    Parameters
    ----------
    metadata : dict
        A dictionary containing "path" and "type" keys. The type is one of
        "csv" or "json".

    Returns
    -------
    pd.DataFrame
        The loaded DataFrame.
    """
    path = metadata["path"]
    filetype = metadata["type"]
    logger.info(f"Loading data from {path}")

    if filetype == "csv":
        return pd.read_csv(path)
    elif filetype == "json":
        with open(path) as f:
            data = json.load(f)
        if isinstance(data, dict):
            data = data.get("rows", [data])
        return pd.DataFrame(data)
    else:
        raise ValueError(f"Invalid file type: {filetype}")


def to_csv_text(df: pd.DataFrame) -> str:
    return df.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def to_json_text(payload) -> str:
    if isinstance(payload, pd.DataFrame):
        payload = {"rows": payload.to_dict(orient="records")}
    return json.dumps(round_floats(payload), indent=2) + "\n"


def round_floats(obj):
    """
    Recursively converts numpy scalars to Python types and rounds floats to 9
    significant digits. NaN and infinities become None.

    Examples
    --------
    >>> round_floats({"a": np.float64(1 / 3), "b": [np.int64(2)]})
    {'a': 0.333333333, 'b': [2]}
    """
    if isinstance(obj, dict):
        return {str(k): round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [round_floats(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None
        return float(f"{x:.9g}")
    return obj


def derive_seed_sequence(master_seed: int, trial: int, purpose: str, node: int | None = None) -> np.random.SeedSequence:
    """
    Derives an independent seed sequence from (master seed, trial, purpose, node).

    The tuple is hashed by numpy's SeedSequence, so streams for different
    trials, purposes or nodes are statistically independent and any one of
    them can be regenerated on its own.

    Parameters
    ----------
    master_seed : int
        The single 64-bit master seed of the run.
    trial : int
        Trial id within the run.
    purpose : str
        One of the keys of PURPOSE_TAGS.
    node : int, optional
        Node id for per-node substreams.

    Returns
    -------
    np.random.SeedSequence
    """
    if purpose not in PURPOSE_TAGS:
        raise ValueError(f"Invalid purpose: {purpose}")
    key = (int(trial), PURPOSE_TAGS[purpose]) if node is None else (int(trial), PURPOSE_TAGS[purpose], int(node))
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)


def derive_rng(master_seed: int, trial: int, purpose: str, node: int | None = None) -> np.random.Generator:
    return np.random.default_rng(derive_seed_sequence(master_seed, trial, purpose, node))


def is_even_perfect_square(n: int) -> bool:
    if n < 4 or n % 2:
        return False
    root = math.isqrt(n)
    return root * root == n


def default_slots(n: int, min_slots: int, per_nlogn: int) -> int:
    """Slot budget max(min_slots, per_nlogn * n * ln n)."""
    return max(min_slots, int(math.ceil(per_nlogn * n * math.log(n))))


LOG_FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function} - {message}"


def _replace_log_sinks(sink, **options):
    for handler_id in list(logger._core.handlers.keys()):
        logger.remove(handler_id)
    logger.add(sink, **options)


def stop_logging_to_console(filename: str, mode: str = "a", level: str = "INFO"):
    """
    Sends all relaynet log records to a file instead of stderr.

    Used by the ``--log-file`` option, so that long sweeps keep a record of
    resampled poles, atypical networks and unstable relay queues while stdout
    carries only the CSV or JSON payload.

    Parameters
    ----------
    filename : str
        Log file path, normally a name under ``LOGS``.
    mode : str, optional
        "a" (default) appends to an earlier run's log, "w" starts it afresh.
    level : str, optional
        Lowest level written. Pass "DEBUG" to include per-trial summaries.
    """
    _replace_log_sinks(filename, format=LOG_FILE_FORMAT, level=level, catch=True, mode=mode)


def resume_logging_to_console(level: str = "INFO"):
    """Restores the stderr sink that writes above any running tqdm bars."""
    _replace_log_sinks(lambda msg: tqdm.write(msg, end="", file=sys.stderr), colorize=True, level=level)

