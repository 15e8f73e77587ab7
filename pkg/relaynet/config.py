from pathlib import Path
from dotenv import load_dotenv
from loguru import logger
import math
import sys
import yaml

# Load environment variables from .env file if it exists
load_dotenv()

# Paths
PROJ_ROOT = Path(__file__).resolve().parents[1]
logger.debug(f"PROJ_ROOT path is: {PROJ_ROOT}")

CONFIG = PROJ_ROOT / "config"
OUTPUT_DIR = PROJ_ROOT / "output"
TABLES_DIR = OUTPUT_DIR / "tables"
EVENTS_DIR = OUTPUT_DIR / "events"
LOGS = PROJ_ROOT / "logs"

# Verify that all the directories exist
for path in [OUTPUT_DIR, TABLES_DIR, EVENTS_DIR, LOGS]:
    if not path.exists():
        logger.debug(f"Creating directory {path}")
        path.mkdir(parents=True, exist_ok=True)

# Defaults and output catalog
with open(CONFIG / "catalog.yaml") as f:
    catalog = yaml.safe_load(f)
    defaults = catalog["defaults"]
    outputs = catalog["outputs"]

for name in outputs:
    outputs[name]["path"] = PROJ_ROOT / Path(outputs[name]["path"])

# Seed override (the only setting read from the environment)
SEED_ENV_VAR = "RELAYNET_SEED"

# Geometry constants: the sphere has unit area
SPHERE_RADIUS = 1.0 / (2.0 * math.sqrt(math.pi))
UNIT_TOL = 1e-12

# Simulation budget
MIN_SLOTS = 200_000
SLOTS_PER_NLOGN = 50
WARMUP_FRACTION = 0.2
# second-half over first-half mean relay backlog above which a trial is flagged unstable
BACKLOG_GROWTH_LIMIT = 1.2
DENSE_SOLVE_MAX_M = 32
WALK_KINDS = ("natural-product", "simple-2d")


try:
    from tqdm import tqdm

    # Remove all handlers
    for handler_id in list(logger._core.handlers.keys()):
        logger.remove(handler_id)

    # Add new logger, stdout is reserved for result payloads
    logger.add(lambda msg: tqdm.write(msg, end="", file=sys.stderr), colorize=True, level="INFO")
except ModuleNotFoundError:
    logger.warning("Module tqdm not found")
