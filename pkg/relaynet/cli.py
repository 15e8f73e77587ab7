"""
Command-line entry point.

    relaynet <subcommand> [--config FILE] [--key value ...]

Settings come from the catalog defaults, then the `key = value` config file,
then the RELAYNET_SEED environment variable (seed only), then flags.
"""

import argparse
import math
import os
import sys
from pathlib import Path
from typing import Optional

import pandas as pd
from loguru import logger
from pydantic import ValidationError

from relaynet.analysis.oracle import oracle_summary, return_time_moments, torus_oracle
from relaynet.config import LOGS, SEED_ENV_VAR, outputs
from relaynet.exceptions import ConfigurationError, RelayNetError
from relaynet.models import RunConfig
from relaynet.network.geometry import chernoff_deviation, expected_disk_count, sample_configuration
from relaynet.network.mobility import sample_intermeeting
from relaynet.pipelines.runner import run_pipeline
from relaynet.sim.engine import TrialResult, run_trial
from relaynet.sim.sweep import estimate_scaling
from relaynet.utils import derive_rng, resume_logging_to_console, save_data, stop_logging_to_console, to_csv_text, to_json_text

SUBCOMMANDS = ("simulate", "sweep", "moments", "oracle", "typical", "queues")

# flag name -> (type, help); every flag maps onto a RunConfig field
FLAGS = {
    "n": (int, "number of nodes, an even perfect square"),
    "delta": (float, "guard-zone parameter"),
    "p-delta": (float, "activation probability"),
    "alpha": (float, "source transmit probability"),
    "seed": (int, "64-bit master seed"),
    "trials": (int, "trials (per n for sweep, configurations for typical)"),
    "slots": (int, "slots per trial"),
    "warmup": (int, "slots excluded from statistics"),
    "band-low": (float, "lower typicality band multiplier"),
    "band-high": (float, "upper typicality band multiplier"),
    "out": (str, "output file, stdout when omitted"),
    "format": (str, "csv or json"),
    "events-path": (str, "event log file"),
    "m": (int, "torus side for moments and oracle"),
    "kind": (str, "natural-product or simple-2d"),
    "samples": (int, "inter-meeting samples"),
    "n-list": (str, "comma separated network sizes for sweep"),
    "queue-slots": (int, "slots of the queue simulations"),
    "workers": (int, "processes for sweep trials"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="key = value settings file")
    common.add_argument("--log-file", type=str, default=None, help="send log lines to this file under logs/")
    for flag, (kind, help_text) in FLAGS.items():
        # suppressed defaults so only flags actually given override the file
        common.add_argument(f"--{flag}", type=kind, default=argparse.SUPPRESS, help=help_text)
    common.add_argument("--log-events", action="store_true", default=argparse.SUPPRESS, help="write the event log")

    parser = argparse.ArgumentParser(prog="relaynet", description="Two-hop relay network simulator and exact oracles")
    subparsers = parser.add_subparsers(dest="subcommand")
    for name in SUBCOMMANDS:
        subparsers.add_parser(name, parents=[common])
    return parser


def read_config_file(path: Path) -> dict:
    """Parses UTF-8 `key = value` lines; `#` starts a comment."""
    values = {}
    for number, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {number} is not of the form key = value", key=line)
        key, val = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"line {number} has an empty key", key=line)
        values[key.replace("-", "_")] = val
    return values


def parse_config(path: Optional[Path] = None, overrides: Optional[dict] = None) -> RunConfig:
    """
    Builds a validated RunConfig.

    Parameters
    ----------
    path : Path, optional
        Settings file of `key = value` lines.
    overrides : dict, optional
        Values from command-line flags; they win over everything else.

    Returns
    -------
    RunConfig

    Raises
    ------
    ConfigurationError
        On unreadable files, unknown keys, malformed values or violated
        constraints, naming the offending key.
    """
    values = {}
    if path is not None:
        try:
            values.update(read_config_file(path))
        except OSError as e:
            raise ConfigurationError(f"cannot read config file: {e}", key="config") from e
    env_seed = os.getenv(SEED_ENV_VAR)
    if env_seed:
        values["seed"] = env_seed
    for key, val in (overrides or {}).items():
        values[key.replace("-", "_")] = val
    if "out" in values:
        values["out_path"] = values.pop("out")
    try:
        return RunConfig.model_validate(values)
    except ValidationError as e:
        error = e.errors()[0]
        message = error["msg"].removeprefix("Value error, ")
        # model-level checks have no location, their messages start with the field name
        key = ".".join(str(part) for part in error["loc"]) or message.split()[0]
        raise ConfigurationError(message, key=key) from e


def trial_frame(result: TrialResult) -> pd.DataFrame:
    rows = []
    for pair, throughput in enumerate(result.per_pair_throughput):
        relayed = result.pair_delays(pair, relayed=True)
        rows.append(
            {
                "pair": pair,
                "delivered": int(result.delivered[pair]),
                "throughput": throughput,
                "relayed_packets": int(relayed.size),
                "direct_packets": int(result.pair_delays(pair, relayed=False).size),
                "mean_relayed_delay": float(relayed.mean()) if relayed.size else math.nan,
            }
        )
    return pd.DataFrame(rows)


def simulate(config: RunConfig):
    result = run_trial(
        config.scheme_params(),
        config.n,
        config.seed,
        config.slots,
        config.warmup,
        band_low=config.band_low,
        band_high=config.band_high,
        log_events=config.log_events,
        progress=True,
    )
    if config.log_events:
        events_meta = {**outputs["events"], **({"path": config.events_path} if config.events_path else {})}
        save_data(result.events, events_meta)
    return trial_frame(result) if config.format == "csv" else result.summary()


def sweep(config: RunConfig):
    inputs = {
        "n_list": config.n_list,
        "trials": config.trials,
        "seed": config.seed,
        "p_delta": config.p_delta,
        "alpha": config.alpha,
        "delta": config.delta,
        "band_low": config.band_low,
        "band_high": config.band_high,
        "workers": config.workers,
    }
    if config.slots is not None:
        inputs["slots"] = config.slots
    table = run_pipeline("sweep", inputs, override_nodes=["sweep_table"])["sweep_table"]
    if config.format == "csv":
        return table.to_csv_frame()
    payload = table.to_json()
    if len(table.rows) >= 3:
        payload["scaling"] = estimate_scaling(table).model_dump()
    return payload


def moments(config: RunConfig):
    estimate = sample_intermeeting(config.m, config.samples, derive_rng(config.seed, 0, "survey"), config.kind)
    exact = return_time_moments(torus_oracle(config.m, config.kind), 0)
    payload = {
        **estimate.model_dump(),
        "n": config.m**2,
        "oracle": {"mean": exact.mean, "second_moment": exact.second_moment},
    }
    if config.format == "csv":
        flat = {k: v for k, v in payload.items() if k != "oracle"}
        flat.update(oracle_mean=exact.mean, oracle_second_moment=exact.second_moment)
        return pd.DataFrame([flat])
    return payload


def oracle(config: RunConfig):
    payload = oracle_summary(config.m, config.kind)
    if config.format == "csv":
        flat = {k: v for k, v in payload.items() if k != "ratios"} | payload["ratios"]
        return pd.DataFrame([flat])
    return payload


def typical(config: RunConfig):
    """Typicality frequency over `trials` sampled configurations."""
    rows = []
    for trial in range(config.trials):
        network = sample_configuration(
            config.n, config.delta, derive_rng(config.seed, trial, "geometry"), config.band_low, config.band_high
        )
        lo, hi, mean = network.summary()["counts"]
        rows.append({"trial": trial, "typical": network.typical, "count_min": lo, "count_max": hi, "count_mean": mean})
    df = pd.DataFrame(rows)
    if config.format == "csv":
        return df
    mu = expected_disk_count(config.n, config.delta)
    return {
        "n": config.n,
        "delta": config.delta,
        "seed": config.seed,
        "trials": config.trials,
        "band": [config.band_low, config.band_high],
        "expected_count": mu,
        "chernoff_deviation": chernoff_deviation(mu, config.n),
        "typical_fraction": float(df["typical"].mean()),
        "counts": [float(df["count_min"].min()), float(df["count_max"].max()), float(df["count_mean"].mean())],
    }


def queues(config: RunConfig):
    inputs = {"n": config.n, "kind": config.kind, "queue_slots": config.queue_slots, "seed": config.seed}
    return run_pipeline("queues", inputs, override_nodes=["queue_comparison"])["queue_comparison"]


HANDLERS = {
    "simulate": simulate,
    "sweep": sweep,
    "moments": moments,
    "oracle": oracle,
    "typical": typical,
    "queues": queues,
}


def emit(payload, config: RunConfig):
    """Writes a result to `out_path`, or to stdout when none is set."""
    if config.format == "csv" and not isinstance(payload, pd.DataFrame):
        payload = pd.DataFrame(payload.get("rows", [payload]))
    if config.out_path is not None:
        save_data(payload, {"path": config.out_path, "type": config.format})
        return
    sys.stdout.write(to_csv_text(payload) if config.format == "csv" else to_json_text(payload))
    sys.stdout.flush()


def dispatch(subcommand: str, config: RunConfig) -> int:
    if subcommand not in HANDLERS:
        build_parser().print_usage(sys.stderr)
        return 2
    emit(HANDLERS[subcommand](config), config)
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = vars(parser.parse_args(argv))
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    subcommand = args.pop("subcommand", None)
    if subcommand is None:
        parser.print_usage(sys.stderr)
        return 2
    config_path = args.pop("config")
    log_file = args.pop("log_file")
    if log_file:
        stop_logging_to_console(str(LOGS / log_file))

    try:
        return dispatch(subcommand, parse_config(config_path, args))
    except ConfigurationError as e:
        logger.error(f"Invalid configuration: {e.message}")
        return 2
    except RelayNetError as e:
        logger.error(f"{subcommand} failed: {e.message}")
        return 1
    except Exception as e:
        logger.exception(f"{subcommand} failed: {e}")
        return 1
    finally:
        if log_file:
            resume_logging_to_console()


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
