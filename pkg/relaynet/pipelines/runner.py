from typing import Optional

from hamilton import driver
from loguru import logger

from relaynet.config import defaults
from relaynet.pipelines import queue_pipeline, sweep_pipeline

# Pipeline configurations
pipeline_configs = {
    "sweep": {
        "module": sweep_pipeline,
        "default_nodes": [
            "save_sweep_csv",
            "save_sweep_json",
            "save_trials",
            "save_delay_summary",
            "scaling_estimate",
        ],
        "default_inputs": {
            "n_list": defaults["n_list"],
            "trials": defaults["trials"],
            "seed": defaults["seed"],
            "p_delta": defaults["p_delta"],
            "alpha": defaults["alpha"],
            "delta": defaults["delta"],
            "band_low": defaults["band_low"],
            "band_high": defaults["band_high"],
            "workers": defaults["workers"],
        },
    },
    "queues": {
        "module": queue_pipeline,
        "default_nodes": [
            "save_queue_comparison",
        ],
        "default_inputs": {
            "n": defaults["n"],
            "kind": defaults["kind"],
            "queue_slots": defaults["queue_slots"],
            "seed": defaults["seed"],
        },
    },
}


def run_pipeline(pipeline_name: str, inputs: Optional[dict] = None, override_nodes: Optional[list[str]] = None) -> dict:
    """
    Executes a pipeline's target nodes and returns their values.

    Parameters
    ----------
    pipeline_name : str
        Key of `pipeline_configs`.
    inputs : dict, optional
        Values overriding the pipeline's default inputs.
    override_nodes : list[str], optional
        Nodes to compute instead of the default (saving) nodes.

    Returns
    -------
    dict
        Node name to value.
    """
    if pipeline_name not in pipeline_configs:
        raise ValueError(f"Unknown pipeline: {pipeline_name}")
    pipeline_config = pipeline_configs[pipeline_name]
    inputs = {**pipeline_config["default_inputs"], **(inputs or {})}
    target_nodes = override_nodes or pipeline_config["default_nodes"]

    logger.info(f"Running pipeline: {pipeline_name.upper()}")
    pipeline_driver = driver.Builder().with_modules(pipeline_config["module"]).build()
    results = pipeline_driver.execute(final_vars=target_nodes, inputs=inputs)

    completed_nodes = [node for node in target_nodes if node in results]
    if completed_nodes:
        logger.info(f"Completed: {', '.join(completed_nodes)}")
    logger.info(f"Finished pipeline: {pipeline_name.upper()}")
    return results
