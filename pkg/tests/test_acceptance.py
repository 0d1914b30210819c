"""Acceptance suite: one test per criterion, one PASS line each.

Criteria 5, 7 and 8 drive full simulation pipelines.  Their default
scale is the desk preset (2000-point waves, 250 replicates, 3x20K MCMC);
set POLYQCAL_ACCEPT_SCALE=ci to run the same checks with a reduced
simulation budget on constrained hosts (the active scale is printed on
every line, and the statistical assertions are identical).
"""

import math
import os
import time

import numpy as np
import pytest
from scipy import stats

from conftest import synthesize_observations
from polyqcal import data as datamod
from polyqcal.calibrate import (
    LikelihoodModel, MCMCConfig, TargetDensity, diagnostics, make_target,
    run_mcmc, transform_draws,
)
from polyqcal.design import PriorSpec
from polyqcal.emulator import GPModel, Kernel, fit_gp, fit_mean
from polyqcal.histmatch import WaveConfig, implausibility, run_waves
from polyqcal.netmodel import compile_network, load_builtin_model, parse_model
from polyqcal.pipeline import PipelineConfig, Store, run_stage
from polyqcal.report import band_coverage, posterior_predictive
from polyqcal.rng import substream
from polyqcal.ssa import SimConfig, batch_estimate, simulate

SCALE = os.environ.get("POLYQCAL_ACCEPT_SCALE", "desk")
WORKERS = int(os.environ.get("POLYQCAL_ACCEPT_WORKERS", "0")) or (os.cpu_count() or 2)

# The pipeline criteria run with the proportion filter disabled (the
# spec's documented "(0, 1) disables filtering" mode): on the bundled
# reconstructed network, fewer than ~1% of prior-hypercube points have
# every output proportion inside (0.01, 0.99) -- a measured property of
# the reconstruction (0/80 pilot points; condition (ii) floods the
# monomer pool, saturating its late inclusion outputs wherever other
# inclusion outputs are non-degenerate) -- so the default filter leaves
# the wave-0 mean model unfittable at any design size that keeps GP
# fitting tractable.  Design sizes below keep the filter-off training
# sets in the few-hundred-point regime the procedure expects.
if SCALE == "desk":
    PIPELINE_WAVE = WaveConfig(n_points=400, n_reps=250,
                               admissible=(0.0, 1.0), lhd_restarts=4,
                               lhd_iterations=2000, gp_iterations=4000,
                               max_events=20_000_000, workers=WORKERS)
    MCMC = MCMCConfig()  # the spec's desk chain protocol: 3 x 20K, thin to 1K
    N_PREDICTIVE, PREDICTIVE_REPS = 200, 250
elif SCALE == "ci":
    PIPELINE_WAVE = WaveConfig(n_points=240, n_reps=100,
                               admissible=(0.0, 1.0), lhd_restarts=2,
                               lhd_iterations=1000, gp_iterations=2500,
                               max_events=5_000_000, workers=WORKERS)
    MCMC = MCMCConfig()
    N_PREDICTIVE, PREDICTIVE_REPS = 60, 100
else:  # pragma: no cover
    raise RuntimeError(f"unknown POLYQCAL_ACCEPT_SCALE={SCALE!r}")

HOURS = 3600.0

# synthetic truth for criterion 7: every death output and most inclusion
# outputs are interior; the three late condition-(ii) inclusion outputs
# saturate (unavoidable under this reconstruction, see above)
THETA_STAR = np.array([
    -18.11809565095832,    # k_aggPolyQ
    -12.008657738524219,   # k_disaggPolyQ1
    -14.038654109278484,   # k_seqPolyQ
    -18.61382792451231,    # k_inhprot
    -7.717193191416238,    # k_remROS
    -16.11809565095832,    # k_genROSSeqAggP
    -12.706072645530174,   # k_genROSAggP
    -0.2231435513142097,   # k_inactp38
    -14.172185501903007,   # k_genROSp38
    -16.723456166616145,   # k_p38death
    -16.70439001207821,    # k_PIdeath
])
SIGMA_D_STAR = 0.10
SIGMA_I_STAR = 0.15


def _report(criterion: str, passed: bool, detail: str) -> None:
    status = "PASS" if passed else "FAIL"
    print(f"[acceptance/{SCALE}] criterion {criterion}: {status} ({detail})")
    assert passed, f"criterion {criterion}: {detail}"


# --- criterion 1: SSA exactness --------------------------------------------------

def test_criterion_1_ssa_stationary_mean():
    t0 = time.monotonic()
    net = parse_model(
        "species A = 1000\nparam b = 0.25\nparam d = 0.00025\n"
        "reaction birth: -> A @ b\nreaction death: A -> @ d * A\n"
        "observable death = A < 0\nobservable inclusion = A < 0\n")
    compiled = compile_network(net)
    horizon = 12_000.0  # three relaxation times of 1/d = 4000 s
    cfg = SimConfig(t_end=horizon, record_times=(horizon,))
    n_runs = 10_000
    total = 0
    for rep in range(n_runs):
        rec = simulate(compiled, None, cfg, substream(1001, 2, 0, rep, 0))
        total += int(rec.final_state[0])
    mean = total / n_runs
    elapsed = time.monotonic() - t0
    ok = abs(mean - 1000.0) < 10.0 and elapsed < 120.0
    _report("1 (SSA exactness)", ok,
            f"mean={mean:.2f} target 1000 +/- 10, {n_runs} runs in {elapsed:.1f}s < 120s")


# --- criterion 2: empirical-logit normality ----------------------------------------

def test_criterion_2_elogit_normality(toy_compiled):
    t0 = time.monotonic()
    outputs = datamod.output_set()
    theta = np.array(toy_compiled.network.theta_log_medians())  # admissible
    n_batches, n = 500, 1000
    elogits = np.empty((n_batches, len(outputs)))
    svars = np.empty((n_batches, len(outputs)))
    for b in range(n_batches):
        est = batch_estimate(toy_compiled, theta, n, root_seed=1002,
                             outputs=outputs, design_index=b,
                             max_events=100_000, workers=WORKERS)
        elogits[b] = est.elogit
        svars[b] = est.sampling_var
    # every output's 500 logits face a normality test; the family-wise
    # significance is held at 1e-3 by Bonferroni, and a healthy median
    # p-value guards against a borderline-everywhere fit
    pvals = np.array([stats.normaltest(elogits[:, j]).pvalue
                      for j in range(len(outputs))])
    # variance scale sanity: spread matches the claimed sampling variance
    ratio = elogits.var(axis=0, ddof=1) / svars.mean(axis=0)
    elapsed = time.monotonic() - t0
    ok = bool(np.all(pvals > 1e-3 / len(outputs))
              and float(np.median(pvals)) > 0.05
              and np.all(ratio > 0.6) and np.all(ratio < 1.6)
              and elapsed < 1800.0)
    _report("2 (empirical-logit normality)", ok,
            f"normality p: min={pvals.min():.5f} > {1e-3 / len(outputs):.2e} "
            f"(Bonferroni over {len(outputs)} outputs), median={float(np.median(pvals)):.3f}; "
            f"var ratio [{ratio.min():.2f},{ratio.max():.2f}], {elapsed:.0f}s < 1800s")


# --- criterion 3: GP oracle equivalence ---------------------------------------------

def _oracle(gp: GPModel, theta):
    z = (gp.design - gp.lo) / (gp.hi - gp.lo)
    zq = (np.atleast_2d(theta) - gp.lo) / (gp.hi - gp.lo)
    k = gp.kernel(z, z)
    diag = np.full(len(z), 1e-10 * gp.kernel.amplitude)
    if gp.include_noise:
        diag = diag + gp.noise
    kinv = np.linalg.inv(k + np.diag(diag))
    kstar = gp.kernel(zq, z)
    resid = gp.y - gp.mean.predict(z)
    m = gp.mean.predict(zq) + kstar @ kinv @ resid
    v = gp.kernel.amplitude - np.einsum("ij,jk,ik->i", kstar, kinv, kstar)
    return m, v


def test_criterion_3_gp_oracle_equivalence():
    t0 = time.monotonic()
    rng = substream(1003, 3)
    worst_m = worst_v = 0.0
    worst_interp = worst_vzero = 0.0
    for trial in range(100):
        d = int(rng.integers(6, 12))
        n = 30
        design = rng.uniform(0, 1, (n, d))
        kern = Kernel(float(rng.uniform(0.5, 2.0)), rng.uniform(0.8, 2.5, d))
        k = kern(design, design) + 1e-10 * np.eye(n)
        y = np.linalg.cholesky(k) @ rng.standard_normal(n)
        noisy = trial % 2 == 0
        noise = 0.02 * (0.5 + rng.random(n)) if noisy else np.zeros(n)
        gp = GPModel(design, y, noise, np.zeros(d), np.ones(d),
                     fit_mean(design, y), kern, include_noise=noisy)
        q = rng.uniform(0, 1, (15, d))
        pred = gp.predict(q)
        m_o, v_o = _oracle(gp, q)
        worst_m = max(worst_m, float(np.max(
            np.abs(pred.mean - m_o) / np.maximum(np.abs(m_o), 1e-3))))
        worst_v = max(worst_v, float(np.max(
            np.abs(pred.var - np.maximum(v_o, 0)) / kern.amplitude)))
        if not noisy:
            at_train = gp.predict(design)
            worst_interp = max(worst_interp, float(np.max(
                np.abs(at_train.mean - y) / np.maximum(np.abs(y), 1.0))))
            worst_vzero = max(worst_vzero, float(np.max(
                at_train.var / kern.amplitude)))
    elapsed = time.monotonic() - t0
    ok = (worst_m < 1e-6 and worst_v < 1e-6 and worst_interp < 1e-8
          and worst_vzero < 1e-8 and elapsed < 60.0)
    _report("3 (GP oracle equivalence)", ok,
            f"oracle rel err m*={worst_m:.2e} v*={worst_v:.2e} < 1e-6; "
            f"interpolation {worst_interp:.2e} < 1e-8 on 100 instances, {elapsed:.1f}s < 60s")


# --- criterion 4: implausibility algebra --------------------------------------------

def test_criterion_4_implausibility_algebra():
    t0 = time.monotonic()
    hand = implausibility(1.0, 0.0, 0.04, 0.58, 1000)
    boundary = implausibility(3.0 * math.sqrt(0.58 ** 2 + 0.04 + 0.004),
                              0.0, 0.04, 0.58, 1000)
    rng = substream(1004, 4)
    nested = True
    for _ in range(1000):
        n_pts = int(rng.integers(5, 60))
        imp = rng.exponential(1.5, n_pts)
        t1, t2 = np.sort(rng.uniform(0.1, 6.0, 2))
        keep1 = set(np.nonzero(imp <= t1)[0])
        keep2 = set(np.nonzero(imp <= t2)[0])
        nested = nested and keep1 <= keep2
    elapsed = time.monotonic() - t0
    ok = (abs(hand - 1.6214) <= 1e-4 and abs(boundary - 3.0) < 1e-12
          and nested and elapsed < 60.0)
    _report("4 (implausibility algebra)", ok,
            f"hand case {hand:.5f} = 1.6214 +/- 1e-4, boundary {boundary:.12f} = 3, "
            f"1000 nested filters, {elapsed:.2f}s")


# --- criteria 5/7/8 fixtures: full pipelines -----------------------------------------

@pytest.fixture(scope="session")
def bundled_problem_gps(tmp_path_factory):
    """Waves on the bundled model and bundled data (criterion 5)."""
    compiled = compile_network(load_builtin_model())
    priors = PriorSpec.from_network(compiled.network)
    observations = datamod.load_observations()
    outputs = datamod.output_set()
    states = run_waves(compiled, priors, observations, outputs,
                       PIPELINE_WAVE, root_seed=75001)
    return compiled, priors, observations, outputs, states[-1]


@pytest.fixture(scope="session")
def synthetic_problem(tmp_path_factory):
    """Waves + calibration on model-generated data at THETA_STAR (criterion 7)."""
    compiled = compile_network(load_builtin_model())
    priors = PriorSpec.from_network(compiled.network)
    data_path = tmp_path_factory.mktemp("synth") / "observations.csv"
    synthesize_observations(compiled, THETA_STAR, SIGMA_D_STAR, SIGMA_I_STAR,
                            seed=75002, path=str(data_path),
                            n_reps=800 if SCALE == "ci" else 2000,
                            max_events=PIPELINE_WAVE.max_events,
                            workers=WORKERS)
    observations = datamod.load_observations(str(data_path))
    outputs = datamod.output_set()
    states = run_waves(compiled, priors, observations, outputs,
                       PIPELINE_WAVE, root_seed=75003)
    model = LikelihoodModel(gps=states[-1].gps, observations=observations,
                            n=PIPELINE_WAVE.n_reps)
    target = make_target(model, priors)
    draws = transform_draws(run_mcmc(target, MCMC, root_seed=75004,
                                     workers=WORKERS))
    return compiled, priors, observations, outputs, states[-1], draws


# --- criterion 5: MCMC correctness ----------------------------------------------------

@pytest.mark.slow
def test_criterion_5_mcmc_correctness(bundled_problem_gps):
    t0 = time.monotonic()
    # conjugate oracle first
    mu0, tau0, s = 0.5, 1.5, 1.0
    ys = np.array([1.1, 0.4, 1.9, 0.8, 1.3, 0.2])
    m = len(ys)
    post_var = 1.0 / (1.0 / tau0 ** 2 + m / s ** 2)
    post_mean = post_var * (mu0 / tau0 ** 2 + ys.sum() / s ** 2)

    def logpdf(x):
        return (-0.5 * (x[0] - mu0) ** 2 / tau0 ** 2
                - 0.5 * float(np.sum((ys - x[0]) ** 2)) / s ** 2)

    target = TargetDensity(logpdf, 1, lambda rng: rng.normal(mu0, tau0, 1))
    draws = run_mcmc(target, MCMCConfig(chains=3, iterations=8000,
                                        target_kept=1000), root_seed=1005)
    diag = diagnostics(draws)
    flat = draws.flat()[:, 0]
    conj_mean_ok = abs(flat.mean() - post_mean) < 3 * diag.mcse[0]
    var_se = flat.var(ddof=1) * math.sqrt(2.0 / diag.ess[0])
    conj_var_ok = abs(flat.var(ddof=1) - post_var) < 3 * var_se

    # bundled problem at the configured scale
    compiled, priors, observations, outputs, final = bundled_problem_gps
    model = LikelihoodModel(gps=final.gps, observations=observations,
                            n=PIPELINE_WAVE.n_reps)
    target2 = make_target(model, priors)
    draws2 = run_mcmc(target2, MCMC, root_seed=1006, workers=WORKERS)
    diag2 = diagnostics(draws2)
    total_retained = draws2.draws.shape[0] * draws2.draws.shape[1]
    rhat_ok = bool(np.all(diag2.rhat < 1.1))
    ess_ok = bool(np.all(diag2.ess > 0.1 * total_retained))
    mcse_ok = bool(np.all(diag2.mcse < 0.1 * diag2.posterior_sd))
    elapsed = time.monotonic() - t0
    ok = conj_mean_ok and conj_var_ok and rhat_ok and ess_ok and mcse_ok
    _report("5 (MCMC correctness)", ok,
            f"conjugate mean/var within 3 MCSE: {conj_mean_ok}/{conj_var_ok}; "
            f"bundled problem max R-hat={diag2.max_rhat():.4f} < 1.1, "
            f"min ESS={diag2.ess.min():.0f} > {0.1 * total_retained:.0f}, "
            f"max MCSE/sd={float(np.max(diag2.mcse / diag2.posterior_sd)):.3f} < 0.1, "
            f"{elapsed:.0f}s")


# --- criterion 6: emulator validation calibration ---------------------------------------

@pytest.mark.slow
def test_criterion_6_validation_calibration():
    # each emulator instance mirrors a real surface: a few active log-rate
    # dimensions with identifiable length-scales, known per-point noise,
    # enough training points to pin the hyperparameters and enough
    # validation points for the band to be binomially attainable
    t0 = time.monotonic()
    n_seeds = 10
    seed_pass = 0
    worst_desc = ""

    def one_emulator(seed_j):
        seed, j = seed_j
        rng = substream(7007, seed, j)
        d, n_train, n_val = 11, 240, 500
        k_active = int(rng.integers(1, 4))
        active = rng.choice(d, size=k_active, replace=False)
        r = np.zeros(d)
        r[active] = rng.uniform(1.8, 3.2, k_active)
        kern = Kernel(float(rng.uniform(0.5, 2.0)), r)
        noise = float(rng.uniform(0.01, 0.08))
        pts = rng.uniform(0, 1, (n_train + n_val, d))
        cov = kern(pts, pts) + noise * np.eye(n_train + n_val)
        y = np.linalg.cholesky(cov) @ rng.standard_normal(n_train + n_val)
        gp = fit_gp(pts[:n_train], y[:n_train], np.full(n_train, noise),
                    np.zeros(d), np.ones(d), substream(7008, seed, j),
                    iterations=2500, label=f"synthetic{j}")
        pred = gp.predict(pts[n_train:])
        ipes = (y[n_train:] - pred.mean) / np.sqrt(pred.var + noise)
        return float(np.mean(np.abs(ipes) < 2.0))

    from concurrent.futures import ThreadPoolExecutor
    for seed in range(n_seeds):
        with ThreadPoolExecutor(max_workers=WORKERS) as pool:
            fractions = list(pool.map(one_emulator,
                                      [(seed, j) for j in range(24)]))
        ok_seed = all(0.90 <= f <= 0.99 for f in fractions)
        seed_pass += int(ok_seed)
        if not ok_seed and not worst_desc:
            worst_desc = f" (seed {seed}: fractions {min(fractions):.3f}..{max(fractions):.3f})"
    elapsed = time.monotonic() - t0
    ok = seed_pass >= 9 and elapsed < 3600.0
    _report("6 (emulator validation calibration)", ok,
            f"{seed_pass}/{n_seeds} seeded repeats with all 24 emulators in "
            f"[0.90,0.99]{worst_desc}, {elapsed:.0f}s < 3600s")


# --- criterion 7: end-to-end synthetic recovery -------------------------------------------

@pytest.mark.slow
def test_criterion_7_synthetic_recovery(synthetic_problem):
    t0 = time.monotonic()
    compiled, priors, observations, outputs, final, draws = synthetic_problem
    flat = draws.flat()
    inside = 0
    for j in range(11):
        lo, hi = np.quantile(flat[:, j], [0.025, 0.975])
        inside += int(lo <= THETA_STAR[j] <= hi)
    bands = posterior_predictive(
        draws, compiled, outputs, observations, root_seed=75005,
        n_draws=N_PREDICTIVE, n_reps=PREDICTIVE_REPS,
        max_events=PIPELINE_WAVE.max_events, workers=WORKERS)
    covered, total = band_coverage(bands)
    elapsed = time.monotonic() - t0
    ok = inside >= 8 and covered >= 44 and total == 48
    _report("7 (synthetic recovery)", ok,
            f"theta* inside 95% CI for {inside}/11 log-rates (need >= 8); "
            f"predictive bands cover {covered}/{total} (need >= 44), "
            f"{elapsed:.0f}s post-pipeline")


# --- criterion 8: reproducibility ------------------------------------------------------

@pytest.mark.slow
def test_criterion_8_reproducibility(tmp_path_factory):
    t0 = time.monotonic()
    # full pipeline (bundled model + data) twice with one root seed;
    # the wave budget shrinks with the scale, determinism must not
    scale_points = {"desk": (200, 80), "ci": (100, 50)}[SCALE]
    raw = {
        "scale": "mini", "root_seed": 90210, "workers": WORKERS,
        "wave.n_points": scale_points[0], "wave.n_reps": scale_points[1],
        "wave.admissible_low": 0.0, "wave.admissible_high": 1.0,
        "wave.max_events": 5_000_000, "wave.lhd_restarts": 2,
        "wave.lhd_iterations": 400, "wave.gp_iterations": 1500,
        "mcmc.chains": 3, "mcmc.iterations": 4000, "mcmc.target_kept": 400,
        "n_predictive": 40, "predictive_reps": 60,
    }
    digests = []
    for run in range(2):
        config = PipelineConfig.from_mapping(dict(raw))
        config.artifacts = str(tmp_path_factory.mktemp(f"repro{run}"))
        store = Store(config.artifacts)
        for stage in ("wave", "calibrate", "predict", "plot"):
            run_stage(stage, config, store)
        blobs = {}
        for rel in ("calibrate/draws.csv", "figures/posterior.svg",
                    "figures/posterior.csv", "predict/predictive.svg",
                    "predict/predictive.csv"):
            with open(os.path.join(config.artifacts, rel), "rb") as fh:
                blobs[rel] = fh.read()
        digests.append(blobs)
    identical = all(digests[0][rel] == digests[1][rel] for rel in digests[0])
    elapsed = time.monotonic() - t0
    _report("8 (reproducibility)", identical,
            f"two pipeline runs byte-identical across "
            f"{len(digests[0])} artifacts, {elapsed:.0f}s")
