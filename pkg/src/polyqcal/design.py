"""Prior distributions and maximin Latin hypercube designs.

The priors are independent normals on the 11 log-rates (variance 5
around the model's log-medians), inverse-chi laws on the two
measurement-error levels, and the initial-level laws declared by the
network.  Designs live on the central prior hypercube given by the
marginal equi-tailed intervals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.spatial.distance import pdist

from .netmodel import ReactionNetwork

LOG_RATE_VARIANCE = 5.0


@dataclass(frozen=True)
class InvChi:
    """Law of 1/sqrt(X) with X ~ Gamma(shape, rate)."""

    shape: float
    rate: float

    def logpdf(self, s: float) -> float:
        if s <= 0.0:
            return -math.inf
        a, b = self.shape, self.rate
        return (math.log(2.0) + a * math.log(b) - math.lgamma(a)
                - (2.0 * a + 1.0) * math.log(s) - b / (s * s))

    def sample(self, rng: np.random.Generator) -> float:
        x = rng.gamma(shape=self.shape, scale=1.0 / self.rate)
        return 1.0 / math.sqrt(x)

    def quantile(self, q: float) -> float:
        """q-quantile of sigma; the upper 1% point is quantile(0.99)."""
        x = stats.gamma.ppf(1.0 - q, a=self.shape, scale=1.0 / self.rate)
        return 1.0 / math.sqrt(x)


@dataclass(frozen=True)
class Hypercube:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("bounds must be 1-D arrays of equal length")
        if not np.all(lo < hi):
            raise ValueError("lower bounds must be strictly below upper bounds")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.all((pts >= self.lower) & (pts <= self.upper), axis=1)

    def from_unit(self, unit: np.ndarray) -> np.ndarray:
        return self.lower + np.asarray(unit) * (self.upper - self.lower)

    def to_unit(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.lower) / (self.upper - self.lower)


@dataclass(frozen=True)
class PriorSpec:
    """Joint prior over (theta, sigma_D, sigma_I)."""

    log_medians: np.ndarray
    log_variance: float = LOG_RATE_VARIANCE
    sigma_d: InvChi = InvChi(2.0, 0.12)
    sigma_i: InvChi = InvChi(0.75, 0.05)

    def __post_init__(self):
        object.__setattr__(self, "log_medians",
                           np.asarray(self.log_medians, dtype=float))

    @classmethod
    def from_network(cls, network: ReactionNetwork, **kwargs) -> "PriorSpec":
        return cls(log_medians=np.array(network.theta_log_medians()), **kwargs)

    @property
    def n_theta(self) -> int:
        return self.log_medians.size

    def theta_logpdf(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        z2 = np.sum((theta - self.log_medians) ** 2) / self.log_variance
        return -0.5 * (z2 + self.n_theta * math.log(2.0 * math.pi * self.log_variance))

    def logpdf(self, theta, sigma_d: float, sigma_i: float) -> float:
        if sigma_d <= 0.0 or sigma_i <= 0.0:
            return -math.inf
        return (self.theta_logpdf(theta)
                + self.sigma_d.logpdf(sigma_d)
                + self.sigma_i.logpdf(sigma_i))

    def sample(self, rng: np.random.Generator):
        theta = self.log_medians + math.sqrt(self.log_variance) * rng.standard_normal(self.n_theta)
        return theta, self.sigma_d.sample(rng), self.sigma_i.sample(rng)

    def sample_theta(self, rng: np.random.Generator) -> np.ndarray:
        return self.log_medians + math.sqrt(self.log_variance) * rng.standard_normal(self.n_theta)


def prior_hypercube(priors: PriorSpec, coverage: float = 0.99) -> Hypercube:
    """Central hypercube of the log-rate prior: per-dimension equi-tailed
    intervals holding ``coverage`` marginal mass."""
    if not 0.0 < coverage < 1.0:
        if coverage == 0.0:
            eps = 1e-12  # degenerate limit, kept usable for tests
            return Hypercube(priors.log_medians - eps, priors.log_medians + eps)
        raise ValueError("coverage must lie in (0, 1)")
    z = stats.norm.ppf(0.5 + coverage / 2.0)
    half = z * math.sqrt(priors.log_variance)
    return Hypercube(priors.log_medians - half, priors.log_medians + half)


def prior_logpdf(priors: PriorSpec, theta, sigma_d: float, sigma_i: float) -> float:
    return priors.logpdf(theta, sigma_d, sigma_i)


def sample_prior(priors: PriorSpec, rng: np.random.Generator):
    return priors.sample(rng)


# --- Latin hypercube designs -------------------------------------------------

@dataclass
class DesignMatrix:
    """Maximin-optimised Latin hypercube on a target cube.

    ``unit`` holds the design in [0,1]^d; ``points`` is the affine image
    in ``cube``.  The Latin property is exact in both frames.
    """

    unit: np.ndarray
    cube: Hypercube
    score: float = float("nan")       # min inter-point distance, unit frame
    init_score: float = float("nan")  # same, for the random initialisation
    restarts: int = 0
    iterations: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def points(self) -> np.ndarray:
        return self.cube.from_unit(self.unit)

    @property
    def n_points(self) -> int:
        return self.unit.shape[0]


def is_latin(unit: np.ndarray) -> bool:
    """Each column occupies every bin [k/n, (k+1)/n) exactly once."""
    n = unit.shape[0]
    bins = np.floor(unit * n).astype(int)
    bins = np.clip(bins, 0, n - 1)
    return all(np.array_equal(np.sort(bins[:, j]), np.arange(n))
               for j in range(unit.shape[1]))


def random_lhd(n_points: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Jittered Latin hypercube in the unit cube."""
    u = rng.random((n_points, dim))
    out = np.empty((n_points, dim))
    for j in range(dim):
        perm = rng.permutation(n_points)
        out[:, j] = (perm + u[:, j]) / n_points
    return out


def min_distance(unit: np.ndarray, chunk: int = 2048) -> float:
    """Minimum pairwise Euclidean distance, chunked to bound memory."""
    n = unit.shape[0]
    if n <= chunk:
        return float(pdist(unit).min())
    best = np.inf
    for lo in range(0, n, chunk):
        block = unit[lo:lo + chunk]
        d2 = (np.sum(block ** 2, axis=1)[:, None]
              + np.sum(unit[lo:] ** 2, axis=1)[None, :]
              - 2.0 * (block @ unit[lo:].T))
        rows = np.arange(block.shape[0])
        d2[rows, rows] = np.inf
        best = min(best, float(d2.min()))
    return math.sqrt(max(best, 0.0))


def lhd_maximin(n_points: int, cube: Hypercube, restarts: int = 50,
                iterations: int = 10_000,
                rng: np.random.Generator | None = None,
                seed: int | None = None) -> DesignMatrix:
    """Best-of-restarts greedy swap optimisation of the minimum
    inter-point distance.

    Swaps exchange one coordinate between two rows, which preserves the
    Latin property.  A swap is accepted only if the smallest distance
    involving the two touched rows strictly increases; untouched pairs
    are unchanged, so the global minimum distance never decreases and
    the returned design scores at least its own random initialisation.
    Ties between restarts resolve to the earliest restart.
    """
    if n_points < 2:
        raise ValueError("a design needs at least 2 points")
    if rng is None:
        rng = np.random.default_rng(seed)
    dim = cube.dim

    best_unit = None
    best_score = -math.inf
    best_init = math.nan
    for _restart in range(max(1, restarts)):
        unit = random_lhd(n_points, dim, rng)
        init_score = min_distance(unit)
        # approximate location of the bottleneck pair, used to bias proposals
        hot = _argmin_pair(unit)
        for _it in range(iterations):
            j = int(rng.integers(dim))
            if rng.random() < 0.5:
                i1 = hot[int(rng.integers(2))]
                i2 = int(rng.integers(n_points))
                if i2 == i1:
                    continue
            else:
                i1, i2 = (int(x) for x in rng.choice(n_points, size=2, replace=False))
            old_touched = min(_row_sqdist(unit, i1).min(), _row_sqdist(unit, i2).min())
            o1, o2 = unit[i1, j], unit[i2, j]
            unit[i1, j], unit[i2, j] = o2, o1
            r1 = _row_sqdist(unit, i1)
            r2 = _row_sqdist(unit, i2)
            new_touched = min(r1.min(), r2.min())
            if new_touched > old_touched:
                if int(np.argmin(r1)) != i2 and r1.min() <= r2.min():
                    hot = (i1, int(np.argmin(r1)))
                else:
                    hot = (i2, int(np.argmin(r2)))
            else:
                unit[i1, j], unit[i2, j] = o1, o2
        score = min_distance(unit)
        if score > best_score:
            best_unit = unit
            best_score = score
            best_init = init_score
    return DesignMatrix(unit=best_unit, cube=cube, score=best_score,
                        init_score=best_init, restarts=restarts,
                        iterations=iterations)


def _argmin_pair(unit: np.ndarray) -> tuple[int, int]:
    n = unit.shape[0]
    best = (0, 1)
    best_d = np.inf
    for i in range(n):
        r = _row_sqdist(unit, i)
        k = int(np.argmin(r))
        if r[k] < best_d:
            best_d = r[k]
            best = (i, k)
    return best


def _row_sqdist(unit: np.ndarray, i: int) -> np.ndarray:
    diff = unit - unit[i]
    r = np.einsum("ij,ij->i", diff, diff)
    r[i] = np.inf
    return r
