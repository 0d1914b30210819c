"""Gaussian-process emulators for empirical-logit outputs.

One emulator per time-condition output maps the 11 log-rates to the
empirical logit of a proportion.  The mean is a least-squares linear
predictor, the covariance is squared exponential with per-dimension
inverse length-scales, and the known sampling variance of each training
logit is added to the Gram diagonal so the fit does not interpolate
simulation noise.  Hyperparameters are plugged in at their posterior
mean, estimated by random-walk MCMC over the marginal posterior.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, solve_triangular

logger = logging.getLogger(__name__)

JITTER = 1e-10
CLAMP = 1e-6


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class MeanModel:
    """Linear predictor beta0 + sum_i beta_i * x_i."""

    beta0: float
    slopes: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return self.beta0 + x @ self.slopes


def fit_mean(design: np.ndarray, y: np.ndarray) -> MeanModel:
    """Least-squares fit of the linear mean; raises on rank deficiency.

    Requires more points than coefficients so the residual process is
    identifiable.
    """
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = design.shape
    if n < d + 2:
        raise FitError(f"need at least {d + 2} training points to fit the mean, got {n}")
    x = np.column_stack([np.ones(n), design])
    coef, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
    if rank < d + 1:
        # name an offending column for the error message
        bad = _rank_deficient_column(x)
        raise FitError(f"design is rank deficient (column {bad} is collinear)")
    return MeanModel(beta0=float(coef[0]), slopes=coef[1:])


def _rank_deficient_column(x: np.ndarray) -> int:
    for j in range(1, x.shape[1]):
        sub = x[:, [k for k in range(x.shape[1]) if k != j]]
        if np.linalg.matrix_rank(sub) == np.linalg.matrix_rank(x):
            return j - 1
    return -1


@dataclass(frozen=True)
class Kernel:
    """Squared-exponential covariance a * exp(-sum r_k^2 dx_k^2)."""

    amplitude: float
    inv_lengths: np.ndarray

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        same = a is b
        a = np.atleast_2d(a)
        b = a if same else np.atleast_2d(b)
        aw = a * self.inv_lengths
        bw = aw if same else b * self.inv_lengths
        d2 = (np.sum(aw ** 2, axis=1)[:, None]
              + np.sum(bw ** 2, axis=1)[None, :]
              - 2.0 * aw @ bw.T)
        np.maximum(d2, 0.0, out=d2)
        if same:
            np.fill_diagonal(d2, 0.0)  # K(x, x) = a exactly
        return self.amplitude * np.exp(-d2)


@dataclass
class Prediction:
    mean: np.ndarray
    var: np.ndarray


@dataclass
class HyperFit:
    """Posterior summary of (a, r) with the audit trace."""

    amplitude: float
    inv_lengths: np.ndarray
    trace: np.ndarray          # (iterations, 1 + d) log-scale samples
    accept_rate: float
    warmup: int


class GPModel:
    """Fitted emulator for one output.

    Inputs are standardised to the unit hypercube internally; the map
    (lo, hi) is stored so predictions accept raw log-rate vectors.
    """

    def __init__(self, design: np.ndarray, y: np.ndarray, noise: np.ndarray,
                 lo: np.ndarray, hi: np.ndarray, mean: MeanModel,
                 kernel: Kernel, include_noise: bool = True,
                 label: str = "", train_reps: int = 0,
                 meta: dict | None = None):
        self.design = np.asarray(design, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.noise = np.asarray(noise, dtype=float)
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.mean = mean
        self.kernel = kernel
        self.include_noise = include_noise
        self.label = label
        self.train_reps = train_reps
        self.meta = dict(meta or {})
        self.clamp_count = 0
        self._factorise()

    # -- fitting ------------------------------------------------------------
    def _standardise(self, theta: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(theta) - self.lo) / (self.hi - self.lo)

    def _factorise(self) -> None:
        z = self._standardise(self.design)
        k = self.kernel(z, z)
        diag = np.full(len(z), JITTER * self.kernel.amplitude)
        if self.include_noise:
            diag = diag + self.noise
        k[np.diag_indices_from(k)] += diag
        self._z = z
        self._chol = cholesky(k, lower=True)
        resid = self.y - self.mean.predict(z)
        self._alpha = cho_solve((self._chol, True), resid)

    @property
    def n_train(self) -> int:
        return len(self.y)

    def predict(self, theta: np.ndarray) -> Prediction:
        """Predictive mean and variance of the latent logit at theta.

        Deterministic given the fitted model; negative round-off
        variances clamp to zero (counted on clamp_count).
        """
        z = self._standardise(theta)
        kstar = self.kernel(z, self._z)
        m = self.mean.predict(z) + kstar @ self._alpha
        v = self.kernel.amplitude - np.sum(
            solve_triangular(self._chol, kstar.T, lower=True) ** 2, axis=0)
        neg = v < 0.0
        if np.any(neg):
            self.clamp_count += int(neg.sum())
            logger.debug("clamped %d negative predictive variances (%s)",
                         int(neg.sum()), self.label)
            v = np.where(neg, 0.0, v)
        return Prediction(mean=m, var=v)

    # -- persistence ----------------------------------------------------------
    def to_dict(self) -> dict:
        payload = {
            "label": self.label,
            "design": self.design.tolist(),
            "y": self.y.tolist(),
            "noise": self.noise.tolist(),
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "beta0": self.mean.beta0,
            "slopes": self.mean.slopes.tolist(),
            "amplitude": self.kernel.amplitude,
            "inv_lengths": self.kernel.inv_lengths.tolist(),
            "include_noise": self.include_noise,
            "train_reps": self.train_reps,
            "meta": self.meta,
        }
        body = json.dumps(payload, sort_keys=True)
        payload["content_hash"] = hashlib.sha256(body.encode()).hexdigest()
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> "GPModel":
        expected = payload.get("content_hash")
        if expected is not None:
            body = {k: v for k, v in payload.items() if k != "content_hash"}
            digest = hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()
            if digest != expected:
                raise FitError("emulator artifact failed its content-hash check")
        return cls(
            design=np.array(payload["design"]), y=np.array(payload["y"]),
            noise=np.array(payload["noise"]), lo=np.array(payload["lo"]),
            hi=np.array(payload["hi"]),
            mean=MeanModel(payload["beta0"], np.array(payload["slopes"])),
            kernel=Kernel(payload["amplitude"], np.array(payload["inv_lengths"])),
            include_noise=payload["include_noise"], label=payload["label"],
            train_reps=payload["train_reps"], meta=payload.get("meta", {}),
        )

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path: str) -> "GPModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# --- hyperparameter posterior -------------------------------------------------

HYPER_PRIOR_SD = 10.0  # weak log-normal prior on a and each r


def _marginal_loglik(log_params: np.ndarray, z: np.ndarray, resid: np.ndarray,
                     noise: np.ndarray | None) -> float:
    a = math.exp(log_params[0])
    r = np.exp(log_params[1:])
    kern = Kernel(a, r)
    k = kern(z, z)
    diag = np.full(len(z), JITTER * a)
    if noise is not None:
        diag = diag + noise
    k[np.diag_indices_from(k)] += diag
    try:
        c, low = cho_factor(k, lower=True)
    except np.linalg.LinAlgError:
        return -math.inf
    half_logdet = float(np.sum(np.log(np.diag(c))))
    quad = float(resid @ cho_solve((c, low), resid))
    return -0.5 * quad - half_logdet - 0.5 * len(z) * math.log(2.0 * math.pi)


def _hyper_logpost(log_params: np.ndarray, z, resid, noise) -> float:
    lp = -0.5 * float(np.sum((log_params / HYPER_PRIOR_SD) ** 2))
    ll = _marginal_loglik(log_params, z, resid, noise)
    return lp + ll


def fit_hyperparams(z: np.ndarray, resid: np.ndarray, noise: np.ndarray | None,
                    rng: np.random.Generator, iterations: int = 4000,
                    warmup: int | None = None) -> HyperFit:
    """Posterior mean of (log a, log r) by adaptive random-walk MCMC.

    The proposal scale adapts toward a 0.234 acceptance rate during
    warm-up only.  Raises FitError when the likelihood is non-finite at
    every attempted initialisation (e.g. duplicated rows with zero
    noise).
    """
    n, d = z.shape
    if n < 2:
        raise FitError("hyperparameter fitting needs at least 2 training points")
    if warmup is None:
        warmup = iterations // 2

    var0 = float(np.var(resid))
    x = np.zeros(1 + d)
    x[0] = math.log(max(var0, 1e-8))
    lp = _hyper_logpost(x, z, resid, noise)
    tries = 0
    while not math.isfinite(lp):
        tries += 1
        if tries > 20:
            raise FitError("non-finite hyperparameter likelihood at initialisation")
        x = rng.normal(0.0, 1.0, size=1 + d)
        lp = _hyper_logpost(x, z, resid, noise)

    scale = 0.2
    trace = np.empty((iterations, 1 + d))
    accepts = 0
    window_accepts = 0
    for it in range(iterations):
        prop = x + scale * rng.standard_normal(1 + d)
        lp_prop = _hyper_logpost(prop, z, resid, noise)
        if math.log(rng.random()) < lp_prop - lp:
            x, lp = prop, lp_prop
            accepts += 1
            window_accepts += 1
        trace[it] = x
        if it < warmup and (it + 1) % 50 == 0:
            rate = window_accepts / 50.0
            scale *= math.exp(0.6 * (rate - 0.234))
            window_accepts = 0
    kept = trace[warmup:]
    post_mean = kept.mean(axis=0)
    return HyperFit(
        amplitude=float(math.exp(post_mean[0])),
        inv_lengths=np.exp(post_mean[1:]),
        trace=trace,
        accept_rate=accepts / iterations,
        warmup=warmup,
    )


def fit_gp(design: np.ndarray, y: np.ndarray, noise: np.ndarray | None,
           lo: np.ndarray, hi: np.ndarray, rng: np.random.Generator,
           include_noise: bool = True, label: str = "",
           train_reps: int = 0, iterations: int = 4000,
           keep_trace: bool = False) -> GPModel:
    """Full fit: least-squares mean, then plug-in kernel hyperparameters."""
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    z = (design - lo) / (hi - lo)
    mean = fit_mean(z, y)
    resid = y - mean.predict(z)
    noise_arr = np.asarray(noise, dtype=float) if noise is not None else None
    hyper = fit_hyperparams(z, resid, noise_arr if include_noise else None,
                            rng, iterations=iterations)
    # a thinned trace rides along in the artifact for audit
    stride = max(1, len(hyper.trace) // 200)
    gp = GPModel(
        design=design, y=y,
        noise=noise_arr if noise_arr is not None else np.zeros(len(y)),
        lo=lo, hi=hi, mean=mean,
        kernel=Kernel(hyper.amplitude, hyper.inv_lengths),
        include_noise=include_noise, label=label, train_reps=train_reps,
        meta={"accept_rate": hyper.accept_rate, "iterations": iterations,
              "trace_stride": stride,
              "trace": hyper.trace[::stride].tolist()},
    )
    if keep_trace:
        gp.meta["trace"] = hyper.trace.tolist()
        gp.meta["trace_stride"] = 1
    gp.hyper_trace = hyper.trace
    return gp


# --- probability-scale transform ---------------------------------------------

def eexpit(m: float | np.ndarray, n: int, clamp: bool = True):
    """Inverse of the empirical logit on the probability scale.

    Maps an emulated mean back to (-0.5/n, 1 + 0.5/n); by default the
    result is clamped into [1e-6, 1 - 1e-6] for use inside sampling
    variances.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    m = np.asarray(m, dtype=float)
    c = 0.5 / n
    sig = 1.0 / (1.0 + np.exp(-m))
    p = (1.0 + c) * sig - c * (1.0 - sig)
    if clamp:
        clamped = np.clip(p, CLAMP, 1.0 - CLAMP)
        n_clamped = int(np.sum(clamped != p))
        if n_clamped:
            logger.debug("eexpit clamped %d values", n_clamped)
        p = clamped
    if p.ndim == 0:
        return float(p)
    return p
