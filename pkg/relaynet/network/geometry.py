"""
Random network configurations on the unit-area sphere.

Every node owns a great circle with sqrt(n) equidistant lattice points. For each
pair of nodes one of the two intersections of their circles is chosen as the
meeting point z_ij, and the pair are neighbours when both sit on the lattice
points of their circles closest to z_ij.
"""

import math
from typing import Optional

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from relaynet.config import SPHERE_RADIUS, UNIT_TOL, defaults
from relaynet.exceptions import ConfigurationError
from relaynet.utils import is_even_perfect_square

R = SPHERE_RADIUS
E_X = np.array([1.0, 0.0, 0.0])
E_Z = np.array([0.0, 0.0, 1.0])

# rows of the (pairs x n) dot-product block evaluated at once when counting disk crossings
COUNT_CHUNK = 8192


class SpherePoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    coords: tuple[float, float, float]

    @field_validator("coords")
    @classmethod
    def _on_sphere(cls, v: tuple[float, float, float]) -> tuple[float, float, float]:
        norm = math.sqrt(sum(c * c for c in v))
        if abs(norm - R) > UNIT_TOL:
            raise ValueError(f"point is not on the sphere: |coords| = {norm}")
        return v

    @classmethod
    def from_vector(cls, v: np.ndarray) -> "SpherePoint":
        v = np.asarray(v, dtype=float)
        return cls(coords=tuple(float(c) for c in R * v / np.linalg.norm(v)))

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.coords)


class GreatCircle(BaseModel):
    """A node's track: pole, phase of lattice point 0 and the in-plane frame."""

    model_config = ConfigDict(frozen=True)

    pole: tuple[float, float, float]
    phase: float = Field(..., ge=0.0, lt=2 * math.pi)
    frame: tuple[tuple[float, float, float], tuple[float, float, float]]
    m: int = Field(..., ge=2)

    @model_validator(mode="after")
    def _orthonormal(self) -> "GreatCircle":
        p, u, v = (np.array(x) for x in (self.pole, *self.frame))
        checks = [
            abs(np.dot(p, p) - 1.0),
            abs(np.dot(u, u) - 1.0),
            abs(np.dot(v, v) - 1.0),
            abs(np.dot(p, u)),
            abs(np.dot(p, v)),
            abs(np.dot(u, v)),
        ]
        if max(checks) > UNIT_TOL:
            raise ValueError("pole and frame must be orthonormal")
        return self


class PairGeometry(BaseModel):
    model_config = ConfigDict(frozen=True)

    pair: tuple[int, int]
    z: SpherePoint
    a: int
    b: int
    disk_radius: float

    @property
    def disk_center(self) -> SpherePoint:
        return self.z


class TypicalityReport(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    counts: np.ndarray
    expected: float
    band_low: float
    band_high: float
    typical: bool

    @property
    def count_summary(self) -> list[float]:
        values = self.counts[np.triu_indices(self.counts.shape[0], 1)]
        if values.size == 0:
            return [0.0, 0.0, 0.0]
        return [float(values.min()), float(values.max()), float(values.mean())]


class Configuration(BaseModel):
    """
    Immutable random network instance.

    Arrays are indexed by node id. `nearest[i, j]` is the lattice index on
    circle i closest to z_ij, so the pair (a_ij, b_ij) is
    (nearest[i, j], nearest[j, i]).
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    n: int
    delta: float
    poles: np.ndarray  # (n, 3) unit vectors
    phases: np.ndarray  # (n,)
    frames: np.ndarray  # (n, 2, 3)
    z: np.ndarray  # (n, n, 3), symmetric, zero diagonal
    nearest: np.ndarray  # (n, n) int
    lattice: np.ndarray  # (n, m, 3) lattice point coordinates
    sd_pairs: np.ndarray  # (n/2, 2) rows of (source, destination)
    typical: bool
    typicality_counts: np.ndarray  # (n, n) symmetric, -1 on the diagonal
    band_low: float
    band_high: float

    @model_validator(mode="after")
    def _check_shape(self) -> "Configuration":
        if not is_even_perfect_square(self.n):
            raise ValueError("n must be an even perfect square")
        nodes = np.sort(self.sd_pairs.ravel())
        if not np.array_equal(nodes, np.arange(self.n)):
            raise ValueError("sd_pairs must partition the node set")
        for arr in (self.poles, self.phases, self.frames, self.z, self.nearest, self.lattice,
                    self.sd_pairs, self.typicality_counts):
            arr.setflags(write=False)
        return self

    @property
    def m(self) -> int:
        return math.isqrt(self.n)

    @property
    def disk_radius(self) -> float:
        return disk_radius(self.n, self.delta)

    @property
    def sources(self) -> np.ndarray:
        return self.sd_pairs[:, 0]

    @property
    def destinations(self) -> np.ndarray:
        return self.sd_pairs[:, 1]

    @property
    def pair_of(self) -> np.ndarray:
        out = np.empty(self.n, dtype=np.int64)
        out[self.sd_pairs[:, 0]] = np.arange(len(self.sd_pairs))
        out[self.sd_pairs[:, 1]] = np.arange(len(self.sd_pairs))
        return out

    @property
    def is_destination(self) -> np.ndarray:
        out = np.zeros(self.n, dtype=bool)
        out[self.sd_pairs[:, 1]] = True
        return out

    def circle(self, i: int) -> GreatCircle:
        return GreatCircle(
            pole=tuple(self.poles[i]),
            phase=float(self.phases[i]),
            frame=(tuple(self.frames[i, 0]), tuple(self.frames[i, 1])),
            m=self.m,
        )

    def pair(self, i: int, j: int) -> PairGeometry:
        if i == j:
            raise ValueError("a pair needs two distinct nodes")
        return PairGeometry(
            pair=(min(i, j), max(i, j)),
            z=SpherePoint.from_vector(self.z[i, j]),
            a=int(self.nearest[i, j]),
            b=int(self.nearest[j, i]),
            disk_radius=self.disk_radius,
        )

    def position_coords(self, pos: np.ndarray) -> np.ndarray:
        """Coordinates (n, 3) of every node given lattice indices `pos`."""
        return self.lattice[np.arange(self.n), pos]

    def summary(self, seed: Optional[int] = None) -> dict:
        values = self.typicality_counts[np.triu_indices(self.n, 1)]
        return {
            "n": self.n,
            "delta": self.delta,
            "seed": seed,
            "typical": self.typical,
            "counts": [float(values.min()), float(values.max()), float(values.mean())],
        }


def disk_radius(n: int, delta: float) -> float:
    """Geodesic radius (2 + delta) * sqrt(pi / n) of the disks C_ij."""
    return (2.0 + delta) * math.sqrt(math.pi / n)


def band_hit_probability(n: int, delta: float) -> float:
    """
    Probability that a uniformly random great circle crosses a disk C_ij.

    The circle crosses a disk of geodesic radius R iff its pole lies in the
    equatorial band of half-width R around the disk centre, whose area
    fraction is sin(R / r). Radii beyond a quarter circumference saturate.
    """
    return math.sin(min(disk_radius(n, delta) / R, math.pi / 2))


def expected_disk_count(n: int, delta: float) -> float:
    return (n - 2) * band_hit_probability(n, delta)


def chernoff_deviation(expected: float, n: int) -> float:
    """Relative deviation at which the two-sided Chernoff bound on a disk count is 1/n^3."""
    return math.sqrt(2.0 * (math.log(2.0) + 3.0 * math.log(n)) / expected)


def frame_from_pole(pole: np.ndarray) -> np.ndarray:
    """
    Orthonormal basis (2, 3) of the plane perpendicular to `pole`.

    Uses e_z as the reference vector unless the pole is within 1e-9 of it,
    then e_x.
    """
    pole = np.asarray(pole, dtype=float)
    ref = E_X if abs(float(np.dot(pole, E_Z))) > 1 - 1e-9 else E_Z
    u = np.cross(pole, ref)
    u /= np.linalg.norm(u)
    v = np.cross(pole, u)
    v /= np.linalg.norm(v)
    return np.stack([u, v])


def lattice_position(circle: GreatCircle, k: int) -> SpherePoint:
    if not 0 <= k < circle.m:
        raise ValueError(f"lattice index {k} outside [0, {circle.m})")
    theta = circle.phase + 2 * math.pi * k / circle.m
    u, v = (np.array(x) for x in circle.frame)
    return SpherePoint.from_vector(math.cos(theta) * u + math.sin(theta) * v)


def geodesic_distance(p: SpherePoint | np.ndarray, q: SpherePoint | np.ndarray) -> float:
    p = p.vector if isinstance(p, SpherePoint) else np.asarray(p, dtype=float)
    q = q.vector if isinstance(q, SpherePoint) else np.asarray(q, dtype=float)
    return float(R * math.atan2(np.linalg.norm(np.cross(p, q)), float(np.dot(p, q))))


def pairwise_geodesic(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Geodesic distances between rows of P (k, 3) and rows of Q (l, 3), shape (k, l)."""
    P = np.atleast_2d(P)
    Q = np.atleast_2d(Q)
    dots = P @ Q.T
    cross = np.linalg.norm(np.cross(P[:, None, :], Q[None, :, :]), axis=-1)
    return R * np.arctan2(cross, dots)


def circle_intersects_disk(circle: GreatCircle, center: SpherePoint, radius_geodesic: float) -> bool:
    pole = SpherePoint.from_vector(np.array(circle.pole))
    return abs(geodesic_distance(pole, center) - 0.5 * math.pi * R) <= radius_geodesic


def intersection_points(circle_i: GreatCircle, circle_j: GreatCircle) -> tuple[SpherePoint, SpherePoint]:
    """The two antipodal points where two distinct great circles meet."""
    d = np.cross(np.array(circle_i.pole), np.array(circle_j.pole))
    norm = np.linalg.norm(d)
    if norm < UNIT_TOL:
        raise ValueError("coincident great circles have no isolated intersection")
    return SpherePoint.from_vector(d), SpherePoint.from_vector(-d)


def sample_poles(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform poles (normalized 3-D Gaussians), resampling any that coincide with an earlier one."""
    poles = rng.standard_normal((n, 3))
    poles /= np.linalg.norm(poles, axis=1, keepdims=True)
    while True:
        dots = np.abs(poles @ poles.T)
        np.fill_diagonal(dots, 0.0)
        clash = np.argwhere(np.triu(dots > 1 - UNIT_TOL))
        if clash.size == 0:
            return poles
        for j in np.unique(clash[:, 1]):
            logger.warning(f"Pole of node {j} coincides with an earlier pole, resampling")
            v = rng.standard_normal(3)
            poles[j] = v / np.linalg.norm(v)


def disk_counts(poles: np.ndarray, z: np.ndarray, n: int, delta: float) -> np.ndarray:
    """
    Number of circles k outside {i, j} crossing each disk C_ij.

    Returns a symmetric (n, n) integer matrix with -1 on the diagonal.
    """
    threshold = band_hit_probability(n, delta)
    iu, ju = np.triu_indices(n, 1)
    counts = np.full((n, n), -1, dtype=np.int64)
    for start in range(0, len(iu), COUNT_CHUNK):
        i = iu[start : start + COUNT_CHUNK]
        j = ju[start : start + COUNT_CHUNK]
        centres = z[i, j] / R
        hits = np.abs(centres @ poles.T) <= threshold + 1e-12
        rows = np.arange(len(i))
        c = hits.sum(axis=1) - hits[rows, i] - hits[rows, j]
        counts[i, j] = c
        counts[j, i] = c
    return counts


def _evaluate_band(counts: np.ndarray, n: int, delta: float, band_low: float, band_high: float) -> tuple[float, bool]:
    mu = expected_disk_count(n, delta)
    values = counts[np.triu_indices(n, 1)]
    typical = bool(np.all((values >= band_low * mu) & (values <= band_high * mu)))
    return mu, typical


def typicality_report(config: Configuration, band_low: float, band_high: float) -> TypicalityReport:
    if not 0 < band_low < band_high:
        raise ValueError("band multipliers must satisfy 0 < band_low < band_high")
    counts = disk_counts(config.poles, config.z, config.n, config.delta)
    mu, typical = _evaluate_band(counts, config.n, config.delta, band_low, band_high)
    return TypicalityReport(counts=counts, expected=mu, band_low=band_low, band_high=band_high, typical=typical)


def build_configuration(
    poles: np.ndarray,
    phases: np.ndarray,
    delta: float,
    sd_pairs: np.ndarray,
    signs: Optional[np.ndarray] = None,
    band_low: float = defaults["band_low"],
    band_high: float = defaults["band_high"],
) -> Configuration:
    """
    Assembles a Configuration from explicit poles, phases and S-D pairs.

    Parameters
    ----------
    poles : np.ndarray
        (n, 3) pole directions, normalized here.
    phases : np.ndarray
        (n,) angular offset of lattice point 0 on each circle.
    delta : float
        Guard-zone parameter, also sets the disk radius.
    sd_pairs : np.ndarray
        (n/2, 2) rows of (source, destination).
    signs : np.ndarray, optional
        (n, n) matrix of +1/-1 choosing which intersection is z_ij (only the
        upper triangle is read). Defaults to +1 everywhere.

    Returns
    -------
    Configuration
    """
    poles = np.asarray(poles, dtype=float)
    n = poles.shape[0]
    if not is_even_perfect_square(n):
        raise ConfigurationError("n must be an even perfect square", key="n")
    if delta <= 0:
        raise ConfigurationError("delta must be positive", key="delta")
    m = math.isqrt(n)
    poles = poles / np.linalg.norm(poles, axis=1, keepdims=True)
    phases = np.mod(np.asarray(phases, dtype=float), 2 * math.pi)
    frames = np.stack([frame_from_pole(p) for p in poles])

    # intersections: z_ij = +/- r * (p_i x p_j) / |p_i x p_j|
    cross = np.cross(poles[:, None, :], poles[None, :, :])
    norms = np.linalg.norm(cross, axis=-1)
    coincident = norms < UNIT_TOL
    np.fill_diagonal(coincident, False)
    if coincident.any():
        logger.warning(f"{int(coincident.sum()) // 2} coincident circle pairs, using lattice point 0 as their meeting point")
    safe = np.where(norms[..., None] < UNIT_TOL, 1.0, norms[..., None])
    z = R * cross / safe
    if signs is not None:
        upper = np.triu(np.asarray(signs, dtype=float), 1)
        s = upper - upper.T
        np.fill_diagonal(s, 1.0)
        z = z * s[..., None]
    # cross is antisymmetric, force z_ji = z_ij
    iu = np.triu_indices(n, 1)
    z[(iu[1], iu[0])] = z[iu]
    z[np.arange(n), np.arange(n)] = 0.0

    angles = phases[:, None] + 2 * math.pi * np.arange(m)[None, :] / m
    lattice = R * (np.cos(angles)[..., None] * frames[:, None, 0, :] + np.sin(angles)[..., None] * frames[:, None, 1, :])
    for i, j in np.argwhere(np.triu(coincident)):
        z[i, j] = z[j, i] = lattice[i, 0]

    # nearest lattice index on circle i to z_ij
    along_u = np.einsum("ijk,ik->ij", z, frames[:, 0, :])
    along_v = np.einsum("ijk,ik->ij", z, frames[:, 1, :])
    phi = np.arctan2(along_v, along_u)
    nearest = np.mod(np.rint((phi - phases[:, None]) * m / (2 * math.pi)), m).astype(np.int64)
    np.fill_diagonal(nearest, -1)

    counts = disk_counts(poles, z, n, delta)
    _, typical = _evaluate_band(counts, n, delta, band_low, band_high)

    return Configuration(
        n=n,
        delta=delta,
        poles=poles,
        phases=phases,
        frames=frames,
        z=z,
        nearest=nearest,
        lattice=lattice,
        sd_pairs=np.asarray(sd_pairs, dtype=np.int64),
        typical=typical,
        typicality_counts=counts,
        band_low=band_low,
        band_high=band_high,
    )


def sample_configuration(
    n: int,
    delta: float,
    rng: np.random.Generator,
    band_low: float = defaults["band_low"],
    band_high: float = defaults["band_high"],
) -> Configuration:
    """
    Samples a random network: uniform poles, uniform lattice phases, an
    equiprobable choice of z_ij per pair and a uniform perfect matching into
    (source, destination) pairs.
    """
    if not is_even_perfect_square(n):
        raise ConfigurationError("n must be an even perfect square", key="n")
    poles = sample_poles(n, rng)
    phases = rng.uniform(0.0, 2 * math.pi, size=n)
    signs = np.where(rng.integers(0, 2, size=(n, n)) == 1, 1.0, -1.0)
    sd_pairs = rng.permutation(n).reshape(-1, 2)
    config = build_configuration(poles, phases, delta, sd_pairs, signs, band_low, band_high)
    if not config.typical:
        logger.warning(f"Sampled an atypical configuration with n={n}, delta={delta}")
    return config
