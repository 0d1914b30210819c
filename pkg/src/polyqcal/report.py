"""Emulator validation, posterior-predictive checks and figure emission.

Validation holds the emulators to account on an independent design:
individual prediction errors should look standard normal, and their
probability integral transforms uniform.  Posterior-predictive bands
re-run the simulator at posterior draws and overlay the observed data.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import rng as rngmod
from . import svg
from .calibrate import PosteriorDraws
from .data import Observation
from .design import PriorSpec
from .emulator import GPModel
from .histmatch import WaveConfig, WaveState, run_waves
from .netmodel import CompiledNetwork
from .ssa import EstimateFailure, OutputKey, SimulationError, batch_estimate


def ipe(x_true, mean, var, sampling_var=None):
    """Individual prediction error: standardized held-out residual.

    With sampling_var given, the denominator includes the sampling
    variance of the validation logit (the default pipeline behaviour);
    otherwise it is the raw emulator standard deviation.
    """
    var = np.asarray(var, dtype=float)
    if sampling_var is not None:
        var = var + np.asarray(sampling_var, dtype=float)
    return (np.asarray(x_true, dtype=float) - np.asarray(mean, dtype=float)) / np.sqrt(var)


def pit(d):
    """Probability integral transform: standard normal CDF of the IPE."""
    return stats.norm.cdf(d)


@dataclass
class EmulatorValidation:
    output: OutputKey
    ipes: np.ndarray
    pits: np.ndarray
    frac_within2: float
    ks_stat: float
    quartiles: tuple[float, float, float]


@dataclass
class ValidationReport:
    per_emulator: list[EmulatorValidation]
    include_sampling: bool
    n_points: int

    def worst_fraction(self) -> float:
        return min(v.frac_within2 for v in self.per_emulator)

    def fractions(self) -> dict[str, float]:
        return {v.output.label(): v.frac_within2 for v in self.per_emulator}


def build_validation_design(compiled: CompiledNetwork, priors: PriorSpec,
                            observations: tuple[Observation, ...],
                            outputs: tuple[OutputKey, ...],
                            config: WaveConfig, root_seed: int) -> WaveState:
    """Independent admitted design by repeating the wave procedure with
    fresh seeds; the admitted points carry their simulated outputs."""
    vroot = int(rngmod.substream(root_seed, rngmod.DOMAIN_VALIDATE).integers(2 ** 62))
    states = run_waves(compiled, priors, observations, outputs, config, vroot)
    return states[-1]


def validate_emulators(gps: dict[OutputKey, GPModel], validation: WaveState,
                       include_sampling: bool = True) -> ValidationReport:
    """IPE/PIT suites for every emulator on the validation design."""
    admitted = validation.admitted()
    if not admitted:
        raise ValueError("validation design has no admitted points")
    thetas = np.array([p.theta for p in admitted])
    outputs = admitted[0].estimate.outputs
    out_index = {key: j for j, key in enumerate(outputs)}
    per = []
    for key, gp in gps.items():
        j = out_index[key]
        x_true = np.array([p.estimate.elogit[j] for p in admitted])
        svar = np.array([p.estimate.sampling_var[j] for p in admitted])
        pred = gp.predict(thetas)
        d = ipe(x_true, pred.mean, pred.var, svar if include_sampling else None)
        u = pit(d)
        ks = float(stats.kstest(u, "uniform").statistic)
        q1, med, q3 = np.percentile(d, [25, 50, 75])
        per.append(EmulatorValidation(
            output=key, ipes=d, pits=u,
            frac_within2=float(np.mean(np.abs(d) < 2.0)),
            ks_stat=ks, quartiles=(float(q1), float(med), float(q3))))
    return ValidationReport(per_emulator=per, include_sampling=include_sampling,
                            n_points=len(admitted))


# --- posterior predictive -----------------------------------------------------

@dataclass
class PredictiveBand:
    output: OutputKey
    mean: float
    lower: float
    upper: float
    observed: tuple[float, ...]  # logit-scale data for this output
    samples: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)


def posterior_predictive(draws: PosteriorDraws, compiled: CompiledNetwork,
                         outputs: tuple[OutputKey, ...],
                         observations: tuple[Observation, ...],
                         root_seed: int, n_draws: int = 200, n_reps: int = 250,
                         pop_cap: int = 10_000_000,
                         max_events: int = 20_000_000,
                         coverage: float = 0.95,
                         workers: int | None = None) -> list[PredictiveBand]:
    """95% predictive bands on the logit scale, data overlaid.

    Draws are on the sigma scale (use transform_draws first).  Evenly
    spaced posterior draws are re-simulated with n_reps replicates, and
    observation noise is added with that draw's own sigma.
    """
    flat = draws.flat()
    n_theta = flat.shape[1] - 2
    take = np.linspace(0, len(flat) - 1, min(n_draws, len(flat))).astype(int)
    noise_rng = rngmod.substream(root_seed, rngmod.DOMAIN_PREDICT, 0)
    samples: dict[OutputKey, list[float]] = {k: [] for k in outputs}
    skipped = 0

    def run_one(si_draw):
        s, row = si_draw
        theta = row[:n_theta]
        try:
            return s, batch_estimate(
                compiled, theta, n_reps, root_seed, outputs,
                design_index=s, pop_cap=pop_cap, max_events=max_events,
                workers=None)
        except (EstimateFailure, SimulationError):
            return s, None

    items = [(int(s), flat[s]) for s in take]
    if workers and workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, items))
    else:
        results = [run_one(it) for it in items]

    for (s, row), (_, est) in zip(items, results):
        if est is None:
            skipped += 1
            continue
        sigma_d, sigma_i = row[-2], row[-1]
        eps = noise_rng.standard_normal(len(outputs))
        for j, key in enumerate(outputs):
            sigma = sigma_d if key.observable == "death" else sigma_i
            samples[key].append(float(est.elogit[j] + sigma * eps[j]))

    alpha = (1.0 - coverage) / 2.0
    bands = []
    obs_by_key: dict[OutputKey, list[float]] = {k: [] for k in outputs}
    for obs in observations:
        if obs.output in obs_by_key:
            obs_by_key[obs.output].append(obs.y)
    for key in outputs:
        vals = np.array(samples[key])
        if len(vals) == 0:
            raise RuntimeError("every posterior-predictive draw failed to simulate")
        lo, hi = np.quantile(vals, [alpha, 1.0 - alpha])
        bands.append(PredictiveBand(
            output=key, mean=float(vals.mean()), lower=float(lo),
            upper=float(hi), observed=tuple(obs_by_key[key]), samples=vals))
    return bands


def band_coverage(bands: list[PredictiveBand]) -> tuple[int, int]:
    """(number of observations inside their band, total observations)."""
    inside = total = 0
    for b in bands:
        for y in b.observed:
            total += 1
            if b.lower <= y <= b.upper:
                inside += 1
    return inside, total


# --- figure and table emission ---------------------------------------------------

def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def render_posterior_histograms(draws: PosteriorDraws, priors: PriorSpec,
                                outdir: str, bins: int = 40,
                                stem: str = "posterior") -> list[str]:
    """Histogram grid of the marginal posteriors with prior curves
    overlaid; a CSV twin carries the bin counts."""
    os.makedirs(outdir, exist_ok=True)
    svg_path = os.path.join(outdir, f"{stem}.svg")
    csv_path = os.path.join(outdir, f"{stem}.csv")
    flat = draws.flat()
    if flat.size == 0:
        svg.placeholder(svg_path, "posterior histograms")
        _write_csv(csv_path, ["parameter", "bin_left", "bin_right", "count"], [])
        return [svg_path, csv_path]

    dim = flat.shape[1]
    cols = 4
    rows_n = (dim + cols - 1) // cols
    panel_w, panel_h, margin = 190, 130, 46
    canvas = svg.Canvas(cols * (panel_w + margin) + margin,
                        rows_n * (panel_h + margin + 24) + margin)
    csv_rows: list[list] = []
    for j in range(dim):
        name = draws.names[j]
        values = flat[:, j]
        if name.startswith("sigma"):
            values = np.log(values)
            label = f"log {name}"
        else:
            label = name
        lo, hi = float(values.min()), float(values.max())
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
        for b in range(bins):
            csv_rows.append([name, repr(float(edges[b])), repr(float(edges[b + 1])),
                             int(counts[b])])
        r, c = divmod(j, cols)
        x0 = margin + c * (panel_w + margin)
        y0 = margin + r * (panel_h + margin + 24)
        density = counts / max(counts.sum(), 1) / np.diff(edges)
        prior_x = np.linspace(lo, hi, 80)
        prior_y = _prior_density(name, j, prior_x, priors)
        ymax = max(float(density.max()), float(prior_y.max()) if prior_y is not None else 0.0)
        ax = svg.Axes(canvas, x0, y0, panel_w, panel_h, (lo, hi), (0, ymax * 1.08 or 1.0))
        ax.frame(title=label)
        ax.xticks([lo, (lo + hi) / 2, hi])
        for b in range(bins):
            h = density[b]
            ax_x = ax.px(float(edges[b]))
            ax_w = ax.px(float(edges[b + 1])) - ax_x
            ax_y = ax.py(float(h))
            canvas.rect(ax_x, ax_y, ax_w, ax.py(0) - ax_y, fill="#7aa6d2")
        if prior_y is not None:
            canvas.polyline([(ax.px(float(x)), ax.py(float(y)))
                             for x, y in zip(prior_x, prior_y)])
    canvas.save(svg_path)
    _write_csv(csv_path, ["parameter", "bin_left", "bin_right", "count"], csv_rows)
    return [svg_path, csv_path]


def _prior_density(name: str, j: int, x: np.ndarray, priors: PriorSpec):
    if name.startswith("theta") and j < priors.n_theta:
        mu = priors.log_medians[j]
        return stats.norm.pdf(x, mu, math.sqrt(priors.log_variance))
    if name == "sigma_D":
        return np.array([math.exp(priors.sigma_d.logpdf(math.exp(v)) + v) for v in x])
    if name == "sigma_I":
        return np.array([math.exp(priors.sigma_i.logpdf(math.exp(v)) + v) for v in x])
    return None


def render_ipe_boxplots(report: ValidationReport, outdir: str,
                        stem: str = "validation") -> list[str]:
    """Per-emulator IPE boxplots with standard-normal reference lines."""
    os.makedirs(outdir, exist_ok=True)
    svg_path = os.path.join(outdir, f"{stem}.svg")
    csv_path = os.path.join(outdir, f"{stem}.csv")
    if not report.per_emulator:
        svg.placeholder(svg_path, "emulator validation")
        _write_csv(csv_path, ["emulator", "n", "frac_within2", "ks_stat",
                              "q1", "median", "q3"], [])
        return [svg_path, csv_path]
    per = report.per_emulator
    width = max(560, 24 * len(per) + 120)
    canvas = svg.Canvas(width, 360)
    all_vals = np.concatenate([v.ipes for v in per])
    lim = max(3.0, float(np.percentile(np.abs(all_vals), 99.5)) + 0.5)
    ax = svg.Axes(canvas, 60, 30, width - 100, 280, (-0.5, len(per) - 0.5), (-lim, lim))
    ax.frame(title="individual prediction errors by emulator", ylabel="IPE")
    ax.yticks([-lim, -2, 0, 2, lim])
    for ref, dash in ((stats.norm.ppf(0.975), None), (-stats.norm.ppf(0.975), None),
                      (stats.norm.ppf(0.75), "4,3"), (-stats.norm.ppf(0.75), "4,3"),
                      (0.0, "2,2")):
        y = ax.py(ref)
        canvas.line(ax.x0, y, ax.x0 + ax.w, y, stroke="#b03030", width=0.8, dash=dash)
    rows = []
    for i, v in enumerate(per):
        q1, med, q3 = v.quartiles
        w1, w9 = np.percentile(v.ipes, [2.5, 97.5])
        cx = ax.px(i)
        half = ax.w / len(per) * 0.3
        canvas.line(cx, ax.py(float(w1)), cx, ax.py(float(w9)), stroke="#555", width=0.8)
        canvas.rect(cx - half, ax.py(q3), 2 * half, ax.py(q1) - ax.py(q3),
                    fill="#9ec2e0", stroke="#336")
        canvas.line(cx - half, ax.py(med), cx + half, ax.py(med), stroke="#113", width=1.2)
        canvas.text(cx, ax.y0 + ax.h + 14, v.output.label(), size=6, anchor="middle")
        rows.append([v.output.label(), len(v.ipes), repr(v.frac_within2),
                     repr(v.ks_stat), repr(q1), repr(med), repr(q3)])
    canvas.save(svg_path)
    _write_csv(csv_path, ["emulator", "n", "frac_within2", "ks_stat",
                          "q1", "median", "q3"], rows)
    return [svg_path, csv_path]


def render_predictive_bands(bands: list[PredictiveBand],
                            outdir: str, stem: str = "predictive") -> list[str]:
    """Per-condition panels: band, mean line and observed crosses,
    logit scale."""
    os.makedirs(outdir, exist_ok=True)
    svg_path = os.path.join(outdir, f"{stem}.svg")
    csv_path = os.path.join(outdir, f"{stem}.csv")
    if not bands:
        svg.placeholder(svg_path, "posterior predictive")
        _write_csv(csv_path, ["observable", "condition", "time_h", "mean",
                              "lower", "upper", "observed"], [])
        return [svg_path, csv_path]
    panels: dict[tuple[str, str], list[PredictiveBand]] = {}
    for b in bands:
        panels.setdefault((b.output.observable, b.output.condition), []).append(b)
    cols = 3
    keys = sorted(panels.keys())
    rows_n = (len(keys) + cols - 1) // cols
    pw, ph, margin = 210, 150, 52
    canvas = svg.Canvas(cols * (pw + margin) + margin, rows_n * (ph + margin + 20) + margin)
    csv_rows = []
    for idx, pkey in enumerate(keys):
        group = sorted(panels[pkey], key=lambda b: b.output.time)
        xs = [b.output.time_h for b in group]
        lo = min(min(b.lower for b in group),
                 min((min(b.observed) for b in group if b.observed), default=0.0)) - 0.5
        hi = max(max(b.upper for b in group),
                 max((max(b.observed) for b in group if b.observed), default=0.0)) + 0.5
        r, c = divmod(idx, cols)
        x0 = margin + c * (pw + margin)
        y0 = margin + r * (ph + margin + 20)
        ax = svg.Axes(canvas, x0, y0, pw, ph, (min(xs) - 2, max(xs) + 2), (lo, hi))
        ax.frame(title=f"{pkey[0]}, condition {pkey[1]}", xlabel="hours",
                 ylabel="logit")
        ax.xticks(xs, fmt="{:.0f}")
        ax.yticks([lo, (lo + hi) / 2, hi], fmt="{:.1f}")
        poly = ([(ax.px(b.output.time_h), ax.py(b.upper)) for b in group]
                + [(ax.px(b.output.time_h), ax.py(b.lower)) for b in reversed(group)])
        canvas.polygon(poly)
        canvas.polyline([(ax.px(b.output.time_h), ax.py(b.mean)) for b in group],
                        stroke="#336", width=1.4)
        for b in group:
            for y in b.observed:
                canvas.cross(ax.px(b.output.time_h), ax.py(y))
            csv_rows.append([b.output.observable, b.output.condition,
                             repr(b.output.time_h), repr(b.mean), repr(b.lower),
                             repr(b.upper), ";".join(repr(v) for v in b.observed)])
    canvas.save(svg_path)
    _write_csv(csv_path, ["observable", "condition", "time_h", "mean",
                          "lower", "upper", "observed"], csv_rows)
    return [svg_path, csv_path]


def load_predictive_csv(path: str) -> list[PredictiveBand]:
    """Round-trip parse of the predictive-band CSV."""
    bands = []
    with open(path, encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            obs = tuple(float(v) for v in row["observed"].split(";") if v)
            bands.append(PredictiveBand(
                output=OutputKey(row["observable"], row["condition"],
                                 float(row["time_h"]) * 3600.0),
                mean=float(row["mean"]), lower=float(row["lower"]),
                upper=float(row["upper"]), observed=obs))
    return bands
