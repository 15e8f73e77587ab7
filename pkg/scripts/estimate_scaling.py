import sys

from loguru import logger

from relaynet.config import outputs
from relaynet.sim.sweep import estimate_scaling
from relaynet.utils import load_data, to_json_text


def main(args):
    # re-reads a saved sweep, e.g. after merging tables from separate runs
    metadata = outputs["sweep_table_json"]
    if len(args) > 1:
        metadata = {"path": args[1], "type": "json"}
    table = load_data(metadata)
    logger.info(f"Estimating scaling from {len(table)} sweep rows")
    sys.stdout.write(to_json_text(estimate_scaling(table).model_dump()))


if __name__ == "__main__":
    main(sys.argv)
