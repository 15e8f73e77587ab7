"""
Natural random walks of the nodes on their lattice tori and neighbour queries.

Each node moves independently on Z_m (m = sqrt(n)): it stays, steps back or
steps forward with probability 1/3 each.
"""

import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from relaynet.config import WALK_KINDS
from relaynet.exceptions import ConfigurationError
from relaynet.models import IntermeetingEstimate
from relaynet.network.geometry import Configuration
from relaynet.utils import derive_seed_sequence

# joint moves of two independent natural walks vs. a simple walk on the 2-D torus
JOINT_MOVES = {
    "natural-product": np.array([(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)]),
    "simple-2d": np.array([(1, 0), (-1, 0), (0, 1), (0, -1)]),
}

TRAJECTORY_CHUNK = 1 << 14
MEETING_CHUNK = 1 << 20


class NodePositions(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    pos: np.ndarray
    m: int = Field(..., ge=2)
    t: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _in_range(self) -> "NodePositions":
        if self.pos.size and (self.pos.min() < 0 or self.pos.max() >= self.m):
            raise ValueError(f"lattice indices must lie in [0, {self.m})")
        return self

    @property
    def n(self) -> int:
        return len(self.pos)


class MeetingSample(BaseModel):
    model_config = ConfigDict(frozen=True)

    tau: int = Field(..., ge=1)
    pair: tuple[int, int]


class NodeStreams:
    """
    One independent random stream per node.

    Streams are derived from (master seed, trial, node), so the walk of a node
    does not depend on how many other nodes exist or how fast they are
    consumed. Moves are drawn in blocks to keep per-slot overhead low.
    """

    def __init__(self, master_seed: int, trial: int, n: int, block: int = 4096):
        self.n = n
        self.block = block
        self.generators = [
            np.random.default_rng(derive_seed_sequence(master_seed, trial, "mobility", node)) for node in range(n)
        ]
        self._buffer = np.empty((0, n), dtype=np.int8)
        self._cursor = 0

    def initial(self, m: int) -> np.ndarray:
        return np.array([g.integers(0, m) for g in self.generators], dtype=np.int64)

    def moves(self) -> np.ndarray:
        if self._cursor >= len(self._buffer):
            self._buffer = np.stack(
                [g.integers(-1, 2, size=self.block, dtype=np.int8) for g in self.generators], axis=1
            )
            self._cursor = 0
        row = self._buffer[self._cursor]
        self._cursor += 1
        return row


def _side(n: int) -> int:
    m = math.isqrt(n)
    if m * m != n:
        raise ConfigurationError("n must be a perfect square", key="n")
    return m


def init_positions(n: int, rng: np.random.Generator | NodeStreams) -> NodePositions:
    m = _side(n)
    if isinstance(rng, NodeStreams):
        pos = rng.initial(m)
    else:
        pos = rng.integers(0, m, size=n)
    return NodePositions(pos=pos, m=m, t=0)


def step(positions: NodePositions, rng: np.random.Generator | NodeStreams) -> NodePositions:
    """Moves every node by -1, 0 or +1 (mod m), each with probability 1/3."""
    if isinstance(rng, NodeStreams):
        moves = rng.moves()
    else:
        moves = rng.integers(-1, 2, size=positions.n)
    pos = np.mod(positions.pos + moves, positions.m)
    return NodePositions.model_construct(pos=pos, m=positions.m, t=positions.t + 1)


def trajectory(positions: NodePositions, slots: int, rng: np.random.Generator) -> np.ndarray:
    """
    Positions after each of the next `slots` steps, shape (slots, n).

    Equivalent to calling `step` repeatedly with the same generator draws
    laid out row by row.
    """
    out = np.empty((slots, positions.n), dtype=np.int32)
    current = positions.pos.astype(np.int64)
    for start in range(0, slots, TRAJECTORY_CHUNK):
        size = min(TRAJECTORY_CHUNK, slots - start)
        moves = rng.integers(-1, 2, size=(size, positions.n))
        block = np.mod(current + np.cumsum(moves, axis=0), positions.m)
        out[start : start + size] = block
        current = block[-1]
    return out


def are_neighbors(config: Configuration, positions: NodePositions, i: int, j: int) -> bool:
    if i == j:
        raise ValueError("a node is not its own neighbour")
    return bool(positions.pos[i] == config.nearest[i, j] and positions.pos[j] == config.nearest[j, i])


def neighbor_matrix(config: Configuration, positions: NodePositions) -> np.ndarray:
    """Symmetric boolean (n, n) matrix of current neighbour relations."""
    at_meeting_point = config.nearest == positions.pos[:, None]
    return at_meeting_point & at_meeting_point.T


def neighbors_of(config: Configuration, positions: NodePositions, i: int) -> list[int]:
    row = (config.nearest[i] == positions.pos[i]) & (config.nearest[:, i] == positions.pos)
    row[i] = False
    return np.flatnonzero(row).tolist()


def meetings(config: Configuration, path: np.ndarray, i: int, j: int) -> list[MeetingSample]:
    """Inter-meeting times of nodes i and j along a trajectory from `trajectory`."""
    together = (path[:, i] == config.nearest[i, j]) & (path[:, j] == config.nearest[j, i])
    slots = np.flatnonzero(together)
    return [MeetingSample(tau=int(tau), pair=(i, j)) for tau in np.diff(slots)]


def intermeeting_times(
    m: int, samples: int, rng: np.random.Generator, kind: str = "natural-product"
) -> np.ndarray:
    """
    Successive return times of the joint walk of two nodes to their meeting state.

    The pair starts at the meeting state, so every sample is a full
    inter-meeting time. The meeting state is taken as the origin of the m x m
    torus, which is no loss of generality by translation invariance.

    Parameters
    ----------
    m : int
        Side of the torus (sqrt(n)).
    samples : int
        Number of inter-meeting times to return.
    rng : np.random.Generator
        Source of the moves.
    kind : str
        "natural-product" (two independent natural walks, the simulator's
        mobility) or "simple-2d" (simple random walk on the 2-D torus).

    Returns
    -------
    np.ndarray
        int64 array of length `samples`.
    """
    if kind not in WALK_KINDS:
        raise ValueError(f"Invalid walk kind: {kind}")
    if m < 2 or samples < 1:
        raise ValueError("need m >= 2 and samples >= 1")
    moves = JOINT_MOVES[kind]
    out = []
    collected = 0
    state = np.zeros(2, dtype=np.int64)
    elapsed = 0  # slots since the last meeting
    while collected < samples:
        draws = moves[rng.integers(0, len(moves), size=MEETING_CHUNK)]
        path = np.mod(state + np.cumsum(draws, axis=0), m)
        hits = np.flatnonzero((path[:, 0] == 0) & (path[:, 1] == 0)) + 1
        if hits.size:
            taus = np.diff(hits, prepend=0)
            taus[0] += elapsed
            out.append(taus)
            collected += len(taus)
            elapsed = MEETING_CHUNK - hits[-1]
        else:
            elapsed += MEETING_CHUNK
        state = path[-1]
    return np.concatenate(out)[:samples].astype(np.int64)


def sample_intermeeting(
    m: int, samples: int, rng: np.random.Generator, kind: str = "natural-product"
) -> IntermeetingEstimate:
    """Sample mean and second moment of the inter-meeting time, with standard errors."""
    taus = intermeeting_times(m, samples, rng, kind).astype(float)
    squares = taus**2
    scale = math.sqrt(len(taus))
    spread = taus.std(ddof=1) if len(taus) > 1 else 0.0
    square_spread = squares.std(ddof=1) if len(taus) > 1 else 0.0
    return IntermeetingEstimate(
        m=m,
        kind=kind,
        samples=len(taus),
        mean=float(taus.mean()),
        second_moment=float(squares.mean()),
        mean_se=float(spread / scale),
        second_moment_se=float(square_spread / scale),
    )
