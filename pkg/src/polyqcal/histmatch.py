"""Wave-based history matching.

Each wave designs points on the prior hypercube, filters them against
the data before and after simulation, and refits the per-output
emulators on everything that survives.  Filtering uses the
implausibility measure: the absolute standardized residual between an
observation and its emulator prediction, with observation error,
emulator variance and sampling variance all in the denominator.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngmod
from .data import Observation
from .design import Hypercube, PriorSpec, lhd_maximin, prior_hypercube
from .emulator import GPModel, eexpit, fit_gp
from .netmodel import CompiledNetwork
from .ssa import (BatchEstimate, EstimateFailure, OutputKey, SimulationError,
                  batch_estimate)

logger = logging.getLogger(__name__)

STATUS_ADMITTED = "admitted"
STATUS_PROPORTION = "filtered-by-proportion"
STATUS_PREDICTION = "filtered-by-prediction"
STATUS_IMPLAUSIBILITY = "filtered-by-implausibility"
STATUS_FAILED = "filtered-by-failure"

# keeps rng streams of distinct waves disjoint without a registry
_WAVE_STRIDE = 10_000_000


@dataclass(frozen=True)
class WaveConfig:
    """Knobs of the wave procedure; defaults are desk scale."""

    n_points: int = 2000
    n_reps: int = 250
    admissible: tuple[float, float] = (0.01, 0.99)
    threshold: float = 3.0
    sigma_death: float = 0.58
    sigma_inclusion: float | None = None  # None: upper 1% of the sigma_I prior
    n_waves: int = 1
    coverage: float = 0.99
    lhd_restarts: int = 4
    lhd_iterations: int = 2000
    gp_iterations: int = 4000
    pop_cap: int = 10_000_000
    max_events: int = 20_000_000
    workers: int | None = None
    min_train: int = 13

    def __post_init__(self):
        lo, hi = self.admissible
        if not (0.0 <= lo < hi <= 1.0):
            raise ValueError("admissible range must satisfy 0 <= lo < hi <= 1")
        if self.threshold <= 0:
            raise ValueError("implausibility threshold must be positive")


def paper_scale(config: WaveConfig) -> WaveConfig:
    return replace(config, n_points=10_000, n_reps=1000,
                   lhd_restarts=50, lhd_iterations=10_000,
                   max_events=1_000_000_000)


@dataclass
class WavePoint:
    index: int              # unique across waves; seeds the point's streams
    theta: np.ndarray
    origin: str             # "wave0" | "wave1" | ... | "carried"
    status: str
    estimate: BatchEstimate | None = None
    implausibility: float = math.nan
    note: str = ""


@dataclass
class WaveState:
    wave_index: int
    cube: Hypercube
    points: list[WavePoint]
    gps: dict[OutputKey, GPModel]
    config: WaveConfig
    observations: tuple[Observation, ...]
    root_seed: int
    meta: dict = field(default_factory=dict)

    def admitted(self) -> list[WavePoint]:
        return [p for p in self.points if p.status == STATUS_ADMITTED]

    def status_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for p in self.points:
            out[p.status] = out.get(p.status, 0) + 1
        return out


class WaveError(RuntimeError):
    pass


# --- implausibility ----------------------------------------------------------

def implausibility(y: float, m_star, v_star, sigma: float, n: int):
    """|y - m*| / sqrt(sigma^2 + v* + 1/[n p*(1-p*)]), p* = eexpit(m*, n)."""
    m_star = np.asarray(m_star, dtype=float)
    v_star = np.asarray(v_star, dtype=float)
    p = np.asarray(eexpit(m_star, n))
    denom = np.sqrt(sigma ** 2 + v_star + 1.0 / (n * p * (1.0 - p)))
    out = np.abs(y - m_star) / denom
    if out.ndim == 0:
        return float(out)
    return out


def sigma_for(key: OutputKey, config: WaveConfig, priors: PriorSpec) -> float:
    if key.observable == "death":
        return config.sigma_death
    if config.sigma_inclusion is not None:
        return config.sigma_inclusion
    return priors.sigma_i.quantile(0.99)


def max_implausibility(thetas: np.ndarray, gps: dict[OutputKey, GPModel],
                       observations: tuple[Observation, ...],
                       config: WaveConfig, priors: PriorSpec,
                       n: int) -> np.ndarray:
    """I(theta) = max over data points of the per-observation measure.

    Both experimental repeats of each output count as separate data
    points; the maximum is over all of them.
    """
    thetas = np.atleast_2d(thetas)
    best = np.zeros(len(thetas))
    by_key: dict[OutputKey, list[Observation]] = {}
    for obs in observations:
        by_key.setdefault(obs.output, []).append(obs)
    for key, obs_list in by_key.items():
        gp = gps[key]
        pred = gp.predict(thetas)
        sigma = sigma_for(key, config, priors)
        for obs in obs_list:
            vals = implausibility(obs.y, pred.mean, pred.var, sigma, n)
            np.maximum(best, vals, out=best)
    return best


# --- simulation plumbing -------------------------------------------------------

def _estimate_point(compiled: CompiledNetwork, point: WavePoint,
                    outputs: tuple[OutputKey, ...], config: WaveConfig,
                    root_seed: int) -> None:
    try:
        point.estimate = batch_estimate(
            compiled, point.theta, config.n_reps, root_seed, outputs,
            design_index=point.index, pop_cap=config.pop_cap,
            max_events=config.max_events)
    except (EstimateFailure, SimulationError) as exc:
        point.status = STATUS_FAILED
        point.note = str(exc)


def _simulate_points(compiled, points, outputs, config, root_seed) -> None:
    todo = [p for p in points if p.estimate is None and p.status == STATUS_ADMITTED]
    if config.workers and config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            list(pool.map(
                lambda p: _estimate_point(compiled, p, outputs, config, root_seed),
                todo))
    else:
        for p in todo:
            _estimate_point(compiled, p, outputs, config, root_seed)


def _apply_proportion_filter(points, config: WaveConfig) -> None:
    # "outside the range" is strict: boundary values stay admitted, and
    # a (0, 1) range disables the filter entirely
    lo, hi = config.admissible
    for p in points:
        if p.status != STATUS_ADMITTED or p.estimate is None:
            continue
        if np.any(p.estimate.p_hat < lo) or np.any(p.estimate.p_hat > hi):
            p.status = STATUS_PROPORTION


def _fit_wave_gps(points, outputs, cube: Hypercube, config: WaveConfig,
                  root_seed: int, wave_index: int) -> dict[OutputKey, GPModel]:
    admitted = [p for p in points if p.status == STATUS_ADMITTED]
    if len(admitted) < config.min_train:
        raise WaveError(
            f"only {len(admitted)} admitted points; at least {config.min_train} "
            f"needed to fit the linear mean (relax the filters or enlarge the design)")
    design = np.array([p.theta for p in admitted])
    gps: dict[OutputKey, GPModel] = {}

    def fit_one(j_key):
        j, key = j_key
        y = np.array([p.estimate.elogit[j] for p in admitted])
        noise = np.array([p.estimate.sampling_var[j] for p in admitted])
        rng = rngmod.substream(root_seed, rngmod.DOMAIN_GP, wave_index, j)
        return key, fit_gp(design, y, noise, cube.lower, cube.upper, rng,
                           include_noise=True, label=key.label(),
                           train_reps=config.n_reps,
                           iterations=config.gp_iterations)

    items = list(enumerate(outputs))
    if config.workers and config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            for key, gp in pool.map(fit_one, items):
                gps[key] = gp
    else:
        for key, gp in map(fit_one, items):
            gps[key] = gp
    return gps


# --- waves ---------------------------------------------------------------------

def run_wave0(compiled: CompiledNetwork, priors: PriorSpec,
              observations: tuple[Observation, ...],
              outputs: tuple[OutputKey, ...],
              config: WaveConfig, root_seed: int) -> WaveState:
    """Design on the prior hypercube, simulate everywhere, drop extreme
    proportions, fit the first emulator set."""
    cube = prior_hypercube(priors, config.coverage)
    rng = rngmod.substream(root_seed, rngmod.DOMAIN_DESIGN, 0)
    design = lhd_maximin(config.n_points, cube, restarts=config.lhd_restarts,
                         iterations=config.lhd_iterations, rng=rng)
    points = [WavePoint(index=i, theta=design.points[i], origin="wave0",
                        status=STATUS_ADMITTED)
              for i in range(config.n_points)]
    logger.info("wave 0: simulating %d design points", len(points))
    _simulate_points(compiled, points, outputs, config, root_seed)
    _apply_proportion_filter(points, config)
    gps = _fit_wave_gps(points, outputs, cube, config, root_seed, wave_index=0)
    state = WaveState(wave_index=0, cube=cube, points=points, gps=gps,
                      config=config, observations=observations,
                      root_seed=root_seed,
                      meta={"design_score": design.score,
                            "design_init_score": design.init_score})
    logger.info("wave 0 statuses: %s", state.status_counts())
    return state


def run_wave_k(compiled: CompiledNetwork, priors: PriorSpec,
               prev: WaveState, config: WaveConfig,
               root_seed: int) -> WaveState:
    """One refinement wave.

    Fresh design points are screened by the previous emulators twice:
    first on the predicted probability scale, then (with the carried-over
    survivors added) on implausibility.  Only then is simulation spent,
    and the new emulators are fitted to the union.
    """
    k = prev.wave_index + 1
    cube = prev.cube
    outputs = tuple(prev.gps.keys())
    rng = rngmod.substream(root_seed, rngmod.DOMAIN_DESIGN, k)
    design = lhd_maximin(config.n_points, cube, restarts=config.lhd_restarts,
                         iterations=config.lhd_iterations, rng=rng)
    fresh = [WavePoint(index=k * _WAVE_STRIDE + i, theta=design.points[i],
                       origin=f"wave{k}", status=STATUS_ADMITTED)
             for i in range(config.n_points)]

    # stage 1: predicted-probability admissibility on fresh points
    lo, hi = config.admissible
    thetas = np.array([p.theta for p in fresh])
    bad = np.zeros(len(fresh), dtype=bool)
    for key, gp in prev.gps.items():
        pred = gp.predict(thetas)
        p = np.asarray(eexpit(pred.mean, config.n_reps, clamp=False))
        bad |= (p < lo) | (p > hi)
    for flag, p in zip(bad, fresh):
        if flag:
            p.status = STATUS_PREDICTION

    # stage 2: carry over the previous wave's training points
    carried = [WavePoint(index=p.index, theta=p.theta, origin="carried",
                         status=STATUS_ADMITTED, estimate=p.estimate)
               for p in prev.admitted()]

    # stage 3: implausibility under the previous emulators
    pool = [p for p in fresh if p.status == STATUS_ADMITTED] + carried
    if pool:
        thetas = np.array([p.theta for p in pool])
        imp = max_implausibility(thetas, prev.gps, prev.observations,
                                 config, priors, config.n_reps)
        for val, p in zip(imp, pool):
            p.implausibility = float(val)
            if val > config.threshold:
                p.status = STATUS_IMPLAUSIBILITY

    survivors = [p for p in pool if p.status == STATUS_ADMITTED]
    if not survivors:
        raise WaveError(
            f"wave {k} filtered out every point; relax the implausibility "
            f"threshold (currently {config.threshold}) or the admissibility range")

    # stage 4: simulate the fresh survivors and re-apply the proportion rule
    logger.info("wave %d: simulating %d fresh points (%d carried over)",
                k, sum(1 for p in survivors if p.estimate is None), len(carried))
    _simulate_points(compiled, survivors, outputs, config, root_seed)
    _apply_proportion_filter(survivors, config)

    points = fresh + carried
    gps = _fit_wave_gps(points, outputs, cube, config, root_seed, wave_index=k)
    state = WaveState(wave_index=k, cube=cube, points=points, gps=gps,
                      config=config, observations=prev.observations,
                      root_seed=root_seed,
                      meta={"design_score": design.score,
                            "design_init_score": design.init_score})
    logger.info("wave %d statuses: %s", k, state.status_counts())
    return state


def run_waves(compiled: CompiledNetwork, priors: PriorSpec,
              observations: tuple[Observation, ...],
              outputs: tuple[OutputKey, ...],
              config: WaveConfig, root_seed: int) -> list[WaveState]:
    """Wave 0 plus config.n_waves refinement waves; returns all states."""
    states = [run_wave0(compiled, priors, observations, outputs, config, root_seed)]
    for _ in range(config.n_waves):
        states.append(run_wave_k(compiled, priors, states[-1], config, root_seed))
    return states


# --- persistence helpers --------------------------------------------------------

def ledger_rows(state: WaveState) -> list[dict]:
    """Flat per-point rows for the wave ledger CSV."""
    rows = []
    for p in state.points:
        row = {
            "wave": state.wave_index,
            "point": p.index,
            "origin": p.origin,
            "status": p.status,
            "implausibility": p.implausibility,
            "note": p.note,
        }
        for j, v in enumerate(p.theta):
            row[f"theta{j + 1}"] = repr(float(v))
        if p.estimate is not None:
            for key, ph, el, sv in zip(p.estimate.outputs, p.estimate.p_hat,
                                       p.estimate.elogit, p.estimate.sampling_var):
                row[f"p_{key.label()}"] = repr(float(ph))
                row[f"elogit_{key.label()}"] = repr(float(el))
                row[f"var_{key.label()}"] = repr(float(sv))
        rows.append(row)
    return rows
