"""
Exact hitting-time and return-time computations for the joint walk of two
nodes, seen as a Markov chain on the m x m discrete torus.
"""

import math
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from loguru import logger
from scipy.linalg import solve
from scipy.sparse.linalg import cg

from relaynet.config import DENSE_SOLVE_MAX_M, WALK_KINDS
from relaynet.exceptions import SingularChainError
from relaynet.models import MomentSummary
from relaynet.network.mobility import JOINT_MOVES

RESIDUAL_TOL = 1e-9
KAC_TOL = 1e-6

State = int | tuple[int, int]


class TorusChainOracle:
    """
    Transition structure of the joint walk on Z_m x Z_m.

    "natural-product" is the product of two natural walks (9 moves, 1/9 each);
    "simple-2d" is the simple random walk (4 moves, 1/4 each). Both are doubly
    stochastic, so the stationary distribution is uniform.
    """

    def __init__(self, m: int, kind: str = "natural-product"):
        if m < 2:
            raise ValueError("the torus side m must be at least 2")
        if kind not in WALK_KINDS:
            raise ValueError(f"Invalid walk kind: {kind}")
        self.m = m
        self.kind = kind
        self.n = m * m
        self.P = self._transition_matrix()
        self._hitting: dict[int, np.ndarray] = {}

    def _transition_matrix(self) -> sp.csr_matrix:
        moves = JOINT_MOVES[self.kind]
        states = np.arange(self.n)
        x, y = np.divmod(states, self.m)
        rows = np.repeat(states, len(moves))
        cols = (np.mod(x[:, None] + moves[:, 0], self.m) * self.m + np.mod(y[:, None] + moves[:, 1], self.m)).ravel()
        data = np.full(len(rows), 1.0 / len(moves))
        # coo -> csr sums duplicate entries (m = 2 folds +1 and -1 together)
        return sp.coo_matrix((data, (rows, cols)), shape=(self.n, self.n)).tocsr()

    def index(self, state: State) -> int:
        if isinstance(state, tuple):
            x, y = state
            state = (x % self.m) * self.m + (y % self.m)
        if not 0 <= state < self.n:
            raise ValueError(f"state {state} outside [0, {self.n})")
        return int(state)

    @property
    def stationary(self) -> np.ndarray:
        return np.full(self.n, 1.0 / self.n)


@lru_cache(maxsize=16)
def torus_oracle(m: int, kind: str = "natural-product") -> TorusChainOracle:
    return TorusChainOracle(m, kind)


def _solve_restricted(oracle: TorusChainOracle, target: int, rhs: np.ndarray) -> np.ndarray:
    """
    Solves (I - P) u = rhs on all states except `target`, with u(target) = 0.
    """
    n = oracle.n
    if oracle.m <= DENSE_SOLVE_MAX_M:
        A = np.eye(n) - oracle.P.toarray()
        A[target, :] = 0.0
        A[target, target] = 1.0
        b = rhs.copy()
        b[target] = 0.0
        u = solve(A, b)
        residual = np.linalg.norm(A @ u - b) / max(np.linalg.norm(b), 1.0)
    else:
        keep = np.flatnonzero(np.arange(n) != target)
        A = (sp.identity(n, format="csr") - oracle.P)[keep][:, keep]
        b = rhs[keep]
        # the restricted matrix is symmetric positive definite
        solution, info = cg(A, b, rtol=1e-13, maxiter=50 * n)
        if info != 0:
            logger.warning(f"conjugate gradient stopped with info={info} for m={oracle.m}")
        u = np.zeros(n)
        u[keep] = solution
        residual = np.linalg.norm(A @ solution - b) / max(np.linalg.norm(b), 1.0)
    if not np.isfinite(residual) or residual >= RESIDUAL_TOL:
        raise SingularChainError(f"hitting-time system for m={oracle.m} has relative residual {residual:.3g}")
    return u


def hitting_times(oracle: TorusChainOracle, target: State) -> np.ndarray:
    """
    Expected time to hit `target` from every state.

    Parameters
    ----------
    oracle : TorusChainOracle
        The chain.
    target : int | tuple[int, int]
        Target state, as an index or torus coordinates.

    Returns
    -------
    np.ndarray
        h with h[target] = 0 and h[x] = 1 + sum_y P(x, y) h[y] elsewhere.
    """
    t = oracle.index(target)
    if t not in oracle._hitting:
        oracle._hitting[t] = _solve_restricted(oracle, t, np.ones(oracle.n))
    return oracle._hitting[t]


def mean_return_time(oracle: TorusChainOracle, state: State) -> float:
    """Kac: the mean return time to a state is 1 / pi(state) = n."""
    s = oracle.index(state)
    kac = 1.0 / oracle.stationary[s]
    first_step = 1.0 + float(oracle.P[s].toarray().ravel() @ hitting_times(oracle, s))
    if abs(first_step - kac) > KAC_TOL * kac:
        logger.error(f"mean return time mismatch for m={oracle.m}: Kac {kac} vs first-step {first_step}")
    return kac


def stationary_mean_hitting(oracle: TorusChainOracle, target: State) -> float:
    """E_pi[T_target] with pi uniform."""
    return float(oracle.stationary @ hitting_times(oracle, target))


def return_time_second_moment(oracle: TorusChainOracle, state: State) -> float:
    # Kac's formula for the second moment
    return (2.0 * stationary_mean_hitting(oracle, state) + 1.0) / oracle.stationary[oracle.index(state)]


def second_moment_linear_solve(oracle: TorusChainOracle, state: State) -> float:
    """
    E[T^2] of the return time via the first-step recursion
    g(x) = 1 + 2 sum_y P(x, y) h(y) + sum_y P(x, y) g(y), g(state) = 0.
    """
    s = oracle.index(state)
    h = hitting_times(oracle, s)
    Ph = oracle.P @ h
    g = _solve_restricted(oracle, s, 1.0 + 2.0 * Ph)
    row = oracle.P[s].toarray().ravel()
    return float(row @ (1.0 + 2.0 * h + g))


def return_time_distribution(oracle: TorusChainOracle, state: State, depth: int) -> np.ndarray:
    """
    P(T = t) for t = 1..depth of the first return time to `state`, by
    propagating the mass that has not yet returned.
    """
    s = oracle.index(state)
    PT = oracle.P.T.tocsr()
    mass = np.zeros(oracle.n)
    mass[s] = 1.0
    out = np.empty(depth)
    for t in range(depth):
        mass = PT @ mass
        out[t] = mass[s]
        mass[s] = 0.0
    return out


def return_time_moments(oracle: TorusChainOracle, state: State = 0) -> MomentSummary:
    return MomentSummary(
        mean=mean_return_time(oracle, state),
        second_moment=return_time_second_moment(oracle, state),
        source="oracle",
    )


def oracle_summary(m: int, kind: str = "natural-product") -> dict:
    """Mean return time, E_pi[T_0] and Kac second moment with their scale ratios."""
    oracle = torus_oracle(m, kind)
    n = oracle.n
    mean_return = mean_return_time(oracle, 0)
    e_pi = stationary_mean_hitting(oracle, 0)
    second = return_time_second_moment(oracle, 0)
    nlogn = n * math.log(n)
    return {
        "m": m,
        "n": n,
        "kind": kind,
        "mean_return": mean_return,
        "E_pi_T0": e_pi,
        "second_moment": second,
        "ratios": {
            "mean_over_n": mean_return / n,
            "Epi_over_nlogn": e_pi / nlogn,
            "m2_over_n2logn": second / (n * nlogn),
        },
    }
