"""Posterior sampling over (theta, sigma_D, sigma_I) with an emulated
likelihood.

Each observation is normal around its emulator's predictive mean with a
three-part variance: measurement error, emulator variance, and the
sampling variance of the empirical logit the emulator was trained on.
The sampler is adaptive random-walk Metropolis; adaptation is confined
to warm-up so the retained draws target the exact posterior.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .data import Observation
from .design import PriorSpec
from .emulator import GPModel, eexpit
from .ssa import OutputKey

PARAM_NAMES = tuple(f"theta{j}" for j in range(1, 12)) + ("sigma_D", "sigma_I")


class CalibrationError(RuntimeError):
    pass


@dataclass
class LikelihoodModel:
    """Emulated observation model for the full data set."""

    gps: dict[OutputKey, GPModel]
    observations: tuple[Observation, ...]
    n: int  # replicate count behind the training logits

    def __post_init__(self):
        missing = [o.output.label() for o in self.observations
                   if o.output not in self.gps]
        if missing:
            raise CalibrationError(
                f"no emulator for observations: {sorted(set(missing))}")
        self._keys = list(self.gps.keys())
        self._obs_by_key = {}
        for obs in self.observations:
            self._obs_by_key.setdefault(obs.output, []).append(obs)

    def log_likelihood(self, theta: np.ndarray, sigma_d: float, sigma_i: float) -> float:
        """Sum of independent normal log-densities over all observations."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        total = 0.0
        for key in self._keys:
            obs_list = self._obs_by_key.get(key)
            if not obs_list:
                continue
            gp = self.gps[key]
            pred = gp.predict(theta)
            m = float(pred.mean[0])
            v = float(pred.var[0])
            if not (math.isfinite(m) and math.isfinite(v)):
                raise CalibrationError(
                    f"non-finite emulator prediction from {key.label()}")
            p = eexpit(m, self.n)
            sampling = 1.0 / (self.n * p * (1.0 - p))
            sigma = sigma_d if key.observable == "death" else sigma_i
            var = sigma * sigma + v + sampling
            for obs in obs_list:
                resid = obs.y - m
                total += -0.5 * (resid * resid / var + math.log(2.0 * math.pi * var))
        return total


def log_posterior(theta, sigma_d: float, sigma_i: float,
                  model: LikelihoodModel, priors: PriorSpec) -> float:
    """Unnormalised log posterior; -inf outside the support."""
    if sigma_d <= 0.0 or sigma_i <= 0.0:
        return -math.inf
    lp = priors.logpdf(theta, sigma_d, sigma_i)
    if not math.isfinite(lp):
        return lp
    return lp + model.log_likelihood(theta, sigma_d, sigma_i)


@dataclass(frozen=True)
class MCMCConfig:
    """Chain protocol; desk scale by default."""

    chains: int = 3
    iterations: int = 20_000
    warmup: int | None = None          # default: half
    target_kept: int = 1000            # post-thinning draws per chain
    target_accept: float = 0.234
    init_retries: int = 50

    @property
    def warmup_iters(self) -> int:
        return self.iterations // 2 if self.warmup is None else self.warmup

    def thin(self) -> int:
        kept = self.iterations - self.warmup_iters
        return max(1, kept // self.target_kept)


def paper_scale_mcmc(config: MCMCConfig) -> MCMCConfig:
    return MCMCConfig(chains=3, iterations=100_000, warmup=50_000,
                      target_kept=1000, target_accept=config.target_accept)


@dataclass
class PosteriorDraws:
    """Thinned post-warm-up draws: (chains, kept, dim)."""

    draws: np.ndarray
    names: tuple[str, ...]
    warmup: int
    thin: int
    root_seed: int
    config: MCMCConfig
    accept_rates: tuple[float, ...] = ()
    meta: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    def flat(self) -> np.ndarray:
        if self.draws.size == 0:
            dim = self.draws.shape[-1] if self.draws.ndim == 3 else 0
            return np.empty((0, dim))
        return self.draws.reshape(-1, self.draws.shape[-1])


class TargetDensity:
    """Callable log-density with an initial-point sampler.

    run_mcmc() samples any such target; the calibration target is built
    by make_target(), and tests can pass analytic densities directly.
    """

    def __init__(self, logpdf, dim: int, init, names: tuple[str, ...] | None = None):
        self.logpdf = logpdf
        self.dim = dim
        self.init = init
        self.names = names or tuple(f"x{i}" for i in range(dim))


def make_target(model: LikelihoodModel, priors: PriorSpec) -> TargetDensity:
    """Posterior over x = (theta_1..11, log sigma_D, log sigma_I).

    The sigmas are sampled on the log scale with the Jacobian included,
    which keeps the chain away from the positivity boundary.
    """
    d = priors.n_theta

    def logpdf(x: np.ndarray) -> float:
        theta = x[:d]
        log_sd, log_si = x[d], x[d + 1]
        if abs(log_sd) > 40.0 or abs(log_si) > 40.0:
            return -math.inf
        sd, si = math.exp(log_sd), math.exp(log_si)
        lp = log_posterior(theta, sd, si, model, priors)
        return lp + log_sd + log_si

    def init(rng: np.random.Generator) -> np.ndarray:
        theta, sd, si = priors.sample(rng)
        return np.concatenate([theta, [math.log(sd), math.log(si)]])

    names = tuple(f"theta{j}" for j in range(1, d + 1)) + ("sigma_D", "sigma_I")
    return TargetDensity(logpdf, d + 2, init, names)


def transform_draws(draws: PosteriorDraws) -> PosteriorDraws:
    """Map (.., log sigma_D, log sigma_I) columns back to sigma scale."""
    out = draws.draws.copy()
    out[..., -2:] = np.exp(out[..., -2:])
    return PosteriorDraws(draws=out, names=draws.names, warmup=draws.warmup,
                          thin=draws.thin, root_seed=draws.root_seed,
                          config=draws.config, accept_rates=draws.accept_rates,
                          meta=dict(draws.meta, scale="sigma"))


def _run_chain(target: TargetDensity, config: MCMCConfig, root_seed: int,
               chain_index: int):
    rng = rngmod.substream(root_seed, rngmod.DOMAIN_MCMC, chain_index)
    x = target.init(rng)
    lp = target.logpdf(x)
    retries = 0
    while not math.isfinite(lp):
        retries += 1
        if retries > config.init_retries:
            raise CalibrationError(
                "could not find a finite-density initial point "
                f"after {config.init_retries} prior draws")
        x = target.init(rng)
        lp = target.logpdf(x)

    dim = target.dim
    warmup = config.warmup_iters
    thin = config.thin()
    kept_len = (config.iterations - warmup) // thin
    kept = np.empty((kept_len, dim))

    scale = 2.38 / math.sqrt(dim)
    chol = np.eye(dim)
    history = np.empty((warmup, dim)) if warmup else None
    accepts = 0
    window = 0
    kept_i = 0
    for it in range(config.iterations):
        step = scale * (chol @ rng.standard_normal(dim))
        prop = x + step
        lp_prop = target.logpdf(prop)
        if math.log(rng.random()) < lp_prop - lp:
            x, lp = prop, lp_prop
            accepts += 1
            window += 1
        if it < warmup:
            history[it] = x
            if (it + 1) % 100 == 0:
                rate = window / 100.0
                scale *= math.exp(0.8 * (rate - config.target_accept))
                window = 0
            # proposal covariance learned twice during warm-up, then frozen
            if it + 1 in (warmup // 2, (3 * warmup) // 4) and it + 1 >= 4 * dim:
                lo_idx = (it + 1) // 2
                cov = np.atleast_2d(np.cov(history[lo_idx: it + 1].T))
                cov += 1e-10 * np.eye(dim)
                try:
                    chol = np.linalg.cholesky(cov)
                    scale = 2.38 / math.sqrt(dim)
                except np.linalg.LinAlgError:
                    pass
        else:
            j = it - warmup
            if (j + 1) % thin == 0 and kept_i < kept_len:
                kept[kept_i] = x
                kept_i += 1
    return kept[:kept_i], accepts / config.iterations


def run_mcmc(target: TargetDensity, config: MCMCConfig, root_seed: int,
             workers: int | None = None) -> PosteriorDraws:
    """Sample the target with config.chains independent chains.

    Chains use disjoint rng streams keyed by (root seed, chain index),
    so results are reproducible regardless of scheduling, and adaptation
    (proposal scale and covariance) is frozen after warm-up.
    """
    if config.chains < 2:
        raise ValueError("at least 2 chains are required for diagnostics")
    idx = list(range(config.chains))
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda c: _run_chain(target, config, root_seed, c), idx))
    else:
        results = [_run_chain(target, config, root_seed, c) for c in idx]
    draws = np.stack([r[0] for r in results])
    rates = tuple(float(r[1]) for r in results)
    return PosteriorDraws(draws=draws, names=target.names,
                          warmup=config.warmup_iters, thin=config.thin(),
                          root_seed=root_seed, config=config,
                          accept_rates=rates)


# --- convergence diagnostics ---------------------------------------------------

@dataclass
class ChainDiagnostics:
    names: tuple[str, ...]
    rhat: np.ndarray
    ess: np.ndarray
    mcse: np.ndarray
    posterior_sd: np.ndarray

    def max_rhat(self) -> float:
        return float(np.max(self.rhat))

    def ok(self, rhat_limit: float = 1.1, ess_fraction: float = 0.1,
           mcse_fraction: float = 0.1, total: int | None = None) -> bool:
        n_total = total if total is not None else None
        checks = [np.all(self.rhat < rhat_limit),
                  np.all(self.mcse < mcse_fraction * self.posterior_sd)]
        if n_total is not None:
            checks.append(np.all(self.ess > ess_fraction * n_total))
        return bool(np.all(checks))


def rhat(chains: np.ndarray, split: bool = True) -> float:
    """Potential scale reduction for one parameter.

    With identical within-group variance the statistic is exactly 1;
    zero within-chain variance with distinct means reports +inf.
    ``split`` halves each chain first, which also flags trending chains.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2:
        raise ValueError("expected (chains, draws)")
    if split:
        half = x.shape[1] // 2
        x = np.concatenate([x[:, :half], x[:, half: 2 * half]], axis=0)
    means = x.mean(axis=1)
    within = float(np.mean(np.var(x, axis=1, ddof=1)))
    between = float(np.var(means, ddof=1))
    if between == 0.0:
        return 1.0
    if within == 0.0:
        return math.inf
    return math.sqrt(1.0 + between / within)


def _autocorr_time(chain: np.ndarray) -> float:
    """Integrated autocorrelation time by Geyer's initial positive sequence."""
    n = len(chain)
    x = chain - chain.mean()
    var = float(x @ x) / n
    if var == 0.0 or n < 4:
        return 1.0
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, n=m)
    acov = np.fft.irfft(f * np.conjugate(f))[:n].real / n
    rho = acov / var
    tau = 1.0
    t = 1
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair <= 0.0:
            break
        tau += 2.0 * pair
        t += 2
    return max(tau, 1.0)


def effective_sample_size(chains: np.ndarray) -> float:
    """ESS across chains for one parameter, capped at the draw count."""
    x = np.asarray(chains, dtype=float)
    taus = [_autocorr_time(c) for c in x]
    total = x.shape[0] * x.shape[1]
    return min(total / float(np.mean(taus)), float(total))


def diagnostics(draws: PosteriorDraws) -> ChainDiagnostics:
    """Split R-hat, autocorrelation ESS and MCSE for every parameter."""
    x = draws.draws
    if x.shape[0] < 2 or x.shape[1] < 10:
        raise ValueError("diagnostics need >= 2 chains of >= 10 retained draws")
    dim = x.shape[2]
    rh = np.array([rhat(x[:, :, j]) for j in range(dim)])
    ess = np.array([effective_sample_size(x[:, :, j]) for j in range(dim)])
    sd = x.reshape(-1, dim).std(axis=0, ddof=1)
    mcse = sd / np.sqrt(ess)
    return ChainDiagnostics(names=draws.names, rhat=rh, ess=ess, mcse=mcse,
                            posterior_sd=sd)
