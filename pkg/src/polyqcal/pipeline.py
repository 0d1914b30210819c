"""End-to-end pipeline: configuration, stages, artifacts and manifests.

Every stage is deterministic given (config, root seed) and writes a
manifest recording the SHA-256 of its outputs plus a digest of the
configuration that produced them.  Re-running an up-to-date stage is a
no-op; consuming a tampered artifact is refused unless forced.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__, calibrate as cal, data as datamod, design, histmatch, report
from . import rng as rngmod
from .emulator import GPModel
from .netmodel import compile_network, load_builtin_model, parse_model
from .ssa import batch_estimate

logger = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    pass


# --- configuration -------------------------------------------------------------

_SCALES = ("mini", "desk", "paper")


@dataclass
class PipelineConfig:
    """All pipeline knobs; scale presets fill defaults, explicit keys win."""

    artifacts: str = "artifacts"
    model_path: str | None = None      # None: bundled PolyQ model
    data_path: str | None = None       # None: bundled observations
    scale: str = "desk"
    root_seed: int = 20240811
    workers: int | None = None
    wave: histmatch.WaveConfig = field(default_factory=histmatch.WaveConfig)
    mcmc: cal.MCMCConfig = field(default_factory=cal.MCMCConfig)
    n_predictive: int = 200
    predictive_reps: int = 250
    validation_include_sampling: bool = True

    @classmethod
    def from_mapping(cls, raw: dict) -> "PipelineConfig":
        scale = str(raw.get("scale", "desk"))
        if scale not in _SCALES:
            raise PipelineError(f"unknown scale preset {scale!r}; expected one of {_SCALES}")
        cfg = cls(scale=scale)
        cfg = _apply_scale(cfg, scale)
        direct = {"artifacts": str, "model_path": str, "data_path": str,
                  "root_seed": int, "workers": int, "n_predictive": int,
                  "predictive_reps": int, "validation_include_sampling": bool}
        for key, conv in direct.items():
            if key in raw:
                setattr(cfg, key, conv(raw[key]))
        wave_kwargs = {}
        for key in ("n_points", "n_reps", "threshold", "sigma_death",
                    "sigma_inclusion", "n_waves", "coverage", "lhd_restarts",
                    "lhd_iterations", "gp_iterations", "pop_cap", "max_events",
                    "min_train"):
            if f"wave.{key}" in raw:
                wave_kwargs[key] = raw[f"wave.{key}"]
        if "wave.admissible_low" in raw or "wave.admissible_high" in raw:
            lo = raw.get("wave.admissible_low", cfg.wave.admissible[0])
            hi = raw.get("wave.admissible_high", cfg.wave.admissible[1])
            wave_kwargs["admissible"] = (float(lo), float(hi))
        if wave_kwargs:
            cfg.wave = replace(cfg.wave, **wave_kwargs)
        mcmc_kwargs = {}
        for key in ("chains", "iterations", "warmup", "target_kept", "target_accept"):
            if f"mcmc.{key}" in raw:
                mcmc_kwargs[key] = raw[f"mcmc.{key}"]
        if mcmc_kwargs:
            cfg.mcmc = replace(cfg.mcmc, **mcmc_kwargs)
        if cfg.workers:
            cfg.wave = replace(cfg.wave, workers=cfg.workers)
        return cfg

    @classmethod
    def from_file(cls, path: str) -> "PipelineConfig":
        return cls.from_mapping(parse_config_file(path))

    def digest(self, *sections: str) -> str:
        payload = {"version": __version__, "root_seed": self.root_seed,
                   "scale": self.scale, "model_path": self.model_path,
                   "data_path": self.data_path}
        if "wave" in sections:
            payload["wave"] = _jsonable(self.wave)
        if "mcmc" in sections:
            payload["mcmc"] = _jsonable(self.mcmc)
        if "predict" in sections:
            payload["predict"] = [self.n_predictive, self.predictive_reps]
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _jsonable(obj) -> dict:
    out = {}
    for key, value in vars(obj).items():
        if isinstance(value, tuple):
            out[key] = list(value)
        else:
            out[key] = value
    return out


def _apply_scale(cfg: PipelineConfig, scale: str) -> PipelineConfig:
    if scale == "desk":
        cfg.wave = histmatch.WaveConfig()
        cfg.mcmc = cal.MCMCConfig()
    elif scale == "paper":
        cfg.wave = histmatch.paper_scale(histmatch.WaveConfig())
        cfg.mcmc = cal.paper_scale_mcmc(cal.MCMCConfig())
    elif scale == "mini":
        cfg.wave = replace(histmatch.WaveConfig(), n_points=80, n_reps=40,
                           lhd_restarts=2, lhd_iterations=300,
                           gp_iterations=1200, max_events=5_000_000,
                           min_train=13)
        cfg.mcmc = cal.MCMCConfig(chains=3, iterations=4000, target_kept=500)
        cfg.n_predictive = 40
        cfg.predictive_reps = 40
    return cfg


def parse_config_file(path: str) -> dict:
    """Flat key-value config: ``key = value`` lines, ``[section]`` headers
    prefixing keys with ``section.``, ``#`` comments.  Values parse as
    int, float, true/false, or string (optionally quoted)."""
    out: dict = {}
    section = ""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if stripped.startswith("[") and stripped.endswith("]"):
                section = stripped[1:-1].strip()
                continue
            if "=" not in stripped:
                raise PipelineError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = stripped.partition("=")
            key = key.strip()
            if section:
                key = f"{section}.{key}"
            out[key] = _parse_value(value.strip())
    return out


def _parse_value(text: str):
    if text.startswith('"') and text.endswith('"') and len(text) >= 2:
        return text[1:-1]
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


# --- artifact store ---------------------------------------------------------------

def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Store:
    """Artifact directory with per-stage manifests."""

    def __init__(self, root: str, force: bool = False):
        self.root = root
        self.force = force
        os.makedirs(root, exist_ok=True)

    def path(self, rel: str) -> str:
        full = os.path.join(self.root, rel)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        return full

    def manifest_path(self, stage: str) -> str:
        return os.path.join(self.root, f"manifest-{stage}.json")

    def read_manifest(self, stage: str) -> dict | None:
        path = self.manifest_path(stage)
        if not os.path.exists(path):
            return None
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)

    def write_manifest(self, stage: str, config_digest: str,
                       outputs: list[str], inputs: dict[str, str],
                       extra: dict | None = None) -> dict:
        manifest = {
            "stage": stage,
            "version": __version__,
            "config_digest": config_digest,
            "inputs": inputs,
            "outputs": {rel: _sha256(os.path.join(self.root, rel))
                        for rel in outputs},
        }
        if extra:
            manifest["extra"] = extra
        with open(self.manifest_path(stage), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
        return manifest

    def up_to_date(self, stage: str, config_digest: str,
                   inputs: dict[str, str]) -> bool:
        if self.force:
            return False
        manifest = self.read_manifest(stage)
        if manifest is None:
            return False
        if manifest.get("config_digest") != config_digest:
            return False
        if manifest.get("inputs") != inputs:
            return False
        for rel, digest in manifest.get("outputs", {}).items():
            full = os.path.join(self.root, rel)
            if not os.path.exists(full) or _sha256(full) != digest:
                return False
        return True

    def require_inputs(self, stage: str, producer: str,
                       rels: list[str]) -> dict[str, str]:
        """Hashes of input artifacts, verified against their producer's
        manifest."""
        manifest = self.read_manifest(producer)
        if manifest is None:
            raise PipelineError(
                f"stage {stage!r} needs artifacts from {producer!r}; "
                f"run `polyqcal {producer}` first")
        recorded = manifest.get("outputs", {})
        hashes = {}
        for rel in rels:
            full = os.path.join(self.root, rel)
            if not os.path.exists(full):
                raise PipelineError(
                    f"missing artifact {rel!r}; re-run `polyqcal {producer}`")
            digest = _sha256(full)
            if rel in recorded and recorded[rel] != digest and not self.force:
                raise PipelineError(
                    f"artifact {rel!r} does not match the manifest of "
                    f"{producer!r}; re-run it or pass --force")
            hashes[rel] = digest
        return hashes


# --- shared loading -----------------------------------------------------------------

def load_problem(config: PipelineConfig):
    """(compiled network, priors, observations, outputs) for the config."""
    if config.model_path:
        with open(config.model_path, encoding="utf-8") as fh:
            network = parse_model(fh.read())
    else:
        network = load_builtin_model()
    compiled = compile_network(network)
    priors = design.PriorSpec.from_network(network)
    observations = datamod.load_observations(config.data_path)
    outputs = tuple(dict.fromkeys(o.output for o in observations))
    return compiled, priors, observations, outputs


# --- CSV helpers ----------------------------------------------------------------------

def write_draws_csv(path: str, draws: cal.PosteriorDraws) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["chain", "draw"] + list(draws.names))
        for c in range(draws.draws.shape[0]):
            for i in range(draws.draws.shape[1]):
                w.writerow([c, i] + [repr(float(v)) for v in draws.draws[c, i]])


def read_draws_csv(path: str) -> tuple[np.ndarray, tuple[str, ...]]:
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    names = tuple(rows[0][2:])
    chains = sorted({int(r[0]) for r in rows[1:]})
    per_chain = [[] for _ in chains]
    for r in rows[1:]:
        per_chain[int(r[0])].append([float(v) for v in r[2:]])
    return np.array(per_chain), names


def write_training_csv(path: str, state: histmatch.WaveState) -> None:
    admitted = state.admitted()
    if not admitted:
        raise PipelineError("no admitted points to persist")
    outputs = admitted[0].estimate.outputs
    header = (["point", "origin"]
              + [f"theta{j+1}" for j in range(len(admitted[0].theta))]
              + [f"elogit_{k.label()}" for k in outputs]
              + [f"p_{k.label()}" for k in outputs]
              + [f"var_{k.label()}" for k in outputs]
              + ["n", "root_seed"])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for p in admitted:
            row = ([p.index, p.origin]
                   + [repr(float(v)) for v in p.theta]
                   + [repr(float(v)) for v in p.estimate.elogit]
                   + [repr(float(v)) for v in p.estimate.p_hat]
                   + [repr(float(v)) for v in p.estimate.sampling_var]
                   + [p.estimate.n_nominal, state.root_seed])
            w.writerow(row)


def write_ledger_csv(path: str, state: histmatch.WaveState) -> None:
    rows = histmatch.ledger_rows(state)
    keys: list[str] = []
    for row in rows:
        for key in row:
            if key not in keys:
                keys.append(key)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, restval="")
        w.writeheader()
        w.writerows(rows)


# --- stages ------------------------------------------------------------------------

@dataclass
class StageResult:
    stage: str
    status: str  # "done" | "up-to-date" | "failed"
    artifacts: list[str] = field(default_factory=list)
    elapsed: float = 0.0
    detail: dict = field(default_factory=dict)
    exit_code: int = 0

    def to_json(self) -> str:
        return json.dumps({
            "stage": self.stage, "status": self.status,
            "artifacts": self.artifacts, "elapsed_s": round(self.elapsed, 3),
            "detail": self.detail, "exit_code": self.exit_code,
        }, sort_keys=True)


def stage_design(config: PipelineConfig, store: Store) -> StageResult:
    """Persist the wave-0 design (identical to the one `wave` would use)."""
    t0 = time.time()
    digest = config.digest("wave")
    if store.up_to_date("design", digest, {}):
        return StageResult("design", "up-to-date")
    _, priors, _, _ = load_problem(config)
    cube = design.prior_hypercube(priors, config.wave.coverage)
    rng = rngmod.substream(config.root_seed, rngmod.DOMAIN_DESIGN, 0)
    dm = design.lhd_maximin(config.wave.n_points, cube,
                            restarts=config.wave.lhd_restarts,
                            iterations=config.wave.lhd_iterations, rng=rng)
    rel = "design/wave0_design.csv"
    with open(store.path(rel), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"theta{j+1}" for j in range(cube.dim)])
        for row in dm.points:
            w.writerow([repr(float(v)) for v in row])
    meta_rel = "design/wave0_design.meta.json"
    with open(store.path(meta_rel), "w", encoding="utf-8") as fh:
        json.dump({"score": dm.score, "init_score": dm.init_score,
                   "restarts": dm.restarts, "iterations": dm.iterations,
                   "root_seed": config.root_seed,
                   "lower": cube.lower.tolist(), "upper": cube.upper.tolist()},
                  fh, indent=1, sort_keys=True)
    store.write_manifest("design", digest, [rel, meta_rel], {})
    return StageResult("design", "done", [rel, meta_rel], time.time() - t0,
                       {"score": dm.score})


def _gp_dir(wave_index: int) -> str:
    return f"gps/wave{wave_index}"


def _wave_artifact_rels(wave_index: int, outputs) -> list[str]:
    rels = [f"waves/wave{wave_index}_ledger.csv",
            f"waves/wave{wave_index}_train.csv"]
    rels += [f"{_gp_dir(wave_index)}/{key.label()}.json" for key in outputs]
    return rels


def _persist_wave(store: Store, state: histmatch.WaveState, digest: str,
                  outputs) -> list[str]:
    rels = _wave_artifact_rels(state.wave_index, outputs)
    write_ledger_csv(store.path(rels[0]), state)
    write_training_csv(store.path(rels[1]), state)
    for key in outputs:
        rel = f"{_gp_dir(state.wave_index)}/{key.label()}.json"
        state.gps[key].save(store.path(rel))
    store.write_manifest(f"wave{state.wave_index}", digest, rels, {},
                         {"status_counts": state.status_counts()})
    return rels


def _load_wave_state(store: Store, wave_index: int, cube, config, observations,
                     outputs, root_seed: int, n_theta: int) -> histmatch.WaveState:
    """Rebuild a WaveState (admitted points + emulators) from artifacts."""
    from .ssa import BatchEstimate
    train_path = os.path.join(store.root, f"waves/wave{wave_index}_train.csv")
    with open(train_path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    points = []
    for row in rows:
        theta = np.array([float(row[f"theta{j+1}"]) for j in range(n_theta)])
        elog = np.array([float(row[f"elogit_{k.label()}"]) for k in outputs])
        p_hat = np.array([float(row[f"p_{k.label()}"]) for k in outputs])
        svar = np.array([float(row[f"var_{k.label()}"]) for k in outputs])
        n = int(row["n"])
        est = BatchEstimate(
            outputs=tuple(outputs), n_nominal=n,
            n=np.full(len(outputs), n, dtype=np.int64),
            successes=np.rint(p_hat * n).astype(np.int64),
            p_hat=p_hat, elogit=elog, sampling_var=svar,
            root_seed=root_seed, design_index=int(row["point"]))
        points.append(histmatch.WavePoint(
            index=int(row["point"]), theta=theta, origin=row["origin"],
            status=histmatch.STATUS_ADMITTED, estimate=est))
    gps = {key: GPModel.load(os.path.join(
        store.root, f"{_gp_dir(wave_index)}/{key.label()}.json"))
        for key in outputs}
    return histmatch.WaveState(
        wave_index=wave_index, cube=cube, points=points, gps=gps,
        config=config.wave, observations=observations,
        root_seed=root_seed, meta={"resumed": True})


def stage_wave(config: PipelineConfig, store: Store) -> StageResult:
    """Run the wave procedure, persisting and resuming wave by wave.

    A wave whose artifacts are present and hash-clean under the current
    config digest is reloaded instead of re-simulated, so an interrupted
    run continues from the last completed wave.
    """
    t0 = time.time()
    digest = config.digest("wave")
    if store.up_to_date("wave", digest, {}):
        return StageResult("wave", "up-to-date")
    compiled, priors, observations, outputs = load_problem(config)
    cube = design.prior_hypercube(priors, config.wave.coverage)
    artifacts: list[str] = []
    states: list[histmatch.WaveState] = []
    resumed = 0
    for k in range(config.wave.n_waves + 1):
        if store.up_to_date(f"wave{k}", digest, {}):
            state = _load_wave_state(store, k, cube, config, observations,
                                     outputs, config.root_seed, priors.n_theta)
            resumed += 1
        elif k == 0:
            state = histmatch.run_wave0(compiled, priors, observations,
                                        outputs, config.wave, config.root_seed)
        else:
            state = histmatch.run_wave_k(compiled, priors, states[-1],
                                         config.wave, config.root_seed)
        if not state.meta.get("resumed"):
            _persist_wave(store, state, digest, outputs)
        artifacts.extend(_wave_artifact_rels(k, outputs))
        states.append(state)
    final = states[-1]
    extra = {"final_wave": final.wave_index,
             "status_counts": [s.status_counts() for s in states],
             "n_train": len(final.admitted()),
             "resumed_waves": resumed}
    store.write_manifest("wave", digest, artifacts, {}, extra)
    return StageResult("wave", "done", artifacts, time.time() - t0, extra)


def _final_wave_index(config: PipelineConfig) -> int:
    return config.wave.n_waves


def _load_gps(config: PipelineConfig, store: Store, stage: str,
              outputs) -> tuple[dict, dict]:
    wave_idx = _final_wave_index(config)
    rels = [f"{_gp_dir(wave_idx)}/{key.label()}.json" for key in outputs]
    hashes = store.require_inputs(stage, "wave", rels)
    gps = {key: GPModel.load(os.path.join(store.root, rel))
           for key, rel in zip(outputs, rels)}
    return gps, hashes


def stage_fit_gp(config: PipelineConfig, store: Store) -> StageResult:
    """Refit emulators from the persisted final-wave training table."""
    t0 = time.time()
    digest = config.digest("wave")
    wave_idx = _final_wave_index(config)
    train_rel = f"waves/wave{wave_idx}_train.csv"
    inputs = store.require_inputs("fit-gp", "wave", [train_rel])
    if store.up_to_date("fit-gp", digest, inputs):
        return StageResult("fit-gp", "up-to-date")
    compiled, priors, observations, outputs = load_problem(config)
    cube = design.prior_hypercube(priors, config.wave.coverage)
    thetas, table = _read_training_csv(os.path.join(store.root, train_rel), priors.n_theta)
    artifacts = []
    from .emulator import fit_gp
    for j, key in enumerate(outputs):
        rng = rngmod.substream(config.root_seed, rngmod.DOMAIN_GP, 90 + wave_idx, j)
        gp = fit_gp(thetas, table["elogit"][:, j], table["var"][:, j],
                    cube.lower, cube.upper, rng, include_noise=True,
                    label=key.label(), train_reps=config.wave.n_reps,
                    iterations=config.wave.gp_iterations)
        rel = f"gps/refit/{key.label()}.json"
        gp.save(store.path(rel))
        artifacts.append(rel)
    store.write_manifest("fit-gp", digest, artifacts, inputs)
    return StageResult("fit-gp", "done", artifacts, time.time() - t0)


def _read_training_csv(path: str, n_theta: int):
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array([[float(v) for v in row[2:-2]] for row in rows[1:]])
    thetas = data[:, :n_theta]
    n_out = (data.shape[1] - n_theta) // 3
    table = {
        "elogit": data[:, n_theta:n_theta + n_out],
        "p": data[:, n_theta + n_out:n_theta + 2 * n_out],
        "var": data[:, n_theta + 2 * n_out:n_theta + 3 * n_out],
        "header": header,
    }
    return thetas, table


def stage_validate(config: PipelineConfig, store: Store) -> StageResult:
    """Validate the final emulators on an independent wave design."""
    t0 = time.time()
    compiled, priors, observations, outputs = load_problem(config)
    gps, inputs = _load_gps(config, store, "validate", outputs)
    digest = config.digest("wave")
    if store.up_to_date("validate", digest, inputs):
        return StageResult("validate", "up-to-date")
    vstate = report.build_validation_design(compiled, priors, observations,
                                            outputs, config.wave,
                                            config.root_seed)
    vreport = report.validate_emulators(gps, vstate,
                                        config.validation_include_sampling)
    paths = report.render_ipe_boxplots(vreport, store.path("validation"))
    ledger_rel = "validation/design_ledger.csv"
    write_ledger_csv(store.path(ledger_rel), vstate)
    rels = [os.path.relpath(p, store.root) for p in paths] + [ledger_rel]
    extra = {"fractions_within2": vreport.fractions(),
             "n_points": vreport.n_points}
    store.write_manifest("validate", digest, rels, inputs, extra)
    return StageResult("validate", "done", rels, time.time() - t0, extra)


def stage_calibrate(config: PipelineConfig, store: Store) -> StageResult:
    """MCMC over the emulated posterior; nonzero exit if R-hat >= 1.1."""
    t0 = time.time()
    compiled, priors, observations, outputs = load_problem(config)
    gps, inputs = _load_gps(config, store, "calibrate", outputs)
    digest = config.digest("wave", "mcmc")
    if store.up_to_date("calibrate", digest, inputs):
        return StageResult("calibrate", "up-to-date")
    model = cal.LikelihoodModel(gps=gps, observations=observations,
                                n=config.wave.n_reps)
    target = cal.make_target(model, priors)
    draws_log = cal.run_mcmc(target, config.mcmc, config.root_seed,
                             workers=config.workers)
    draws = cal.transform_draws(draws_log)
    diag = cal.diagnostics(draws)
    draws_rel = "calibrate/draws.csv"
    write_draws_csv(store.path(draws_rel), draws)
    diag_rel = "calibrate/diagnostics.json"
    with open(store.path(diag_rel), "w", encoding="utf-8") as fh:
        json.dump({
            "names": list(diag.names),
            "rhat": [None if math.isinf(v) else v for v in diag.rhat],
            "ess": diag.ess.tolist(),
            "mcse": diag.mcse.tolist(),
            "posterior_sd": diag.posterior_sd.tolist(),
            "accept_rates": list(draws.accept_rates),
        }, fh, indent=1, sort_keys=True)
    rels = [draws_rel, diag_rel]
    extra = {"max_rhat": diag.max_rhat(),
             "min_ess": float(np.min(diag.ess)),
             "kept_per_chain": int(draws.draws.shape[1])}
    store.write_manifest("calibrate", digest, rels, inputs, extra)
    code = 0 if diag.max_rhat() < 1.1 else 3
    status = "done" if code == 0 else "failed"
    return StageResult("calibrate", status, rels, time.time() - t0, extra, code)


def stage_predict(config: PipelineConfig, store: Store) -> StageResult:
    """Posterior-predictive bands from the persisted draws."""
    t0 = time.time()
    compiled, priors, observations, outputs = load_problem(config)
    draws_rel = "calibrate/draws.csv"
    inputs = store.require_inputs("predict", "calibrate", [draws_rel])
    digest = config.digest("wave", "mcmc", "predict")
    if store.up_to_date("predict", digest, inputs):
        return StageResult("predict", "up-to-date")
    arr, names = read_draws_csv(os.path.join(store.root, draws_rel))
    draws = cal.PosteriorDraws(draws=arr, names=names, warmup=0, thin=1,
                               root_seed=config.root_seed, config=config.mcmc)
    bands = report.posterior_predictive(
        draws, compiled, outputs, observations, config.root_seed,
        n_draws=config.n_predictive, n_reps=config.predictive_reps,
        pop_cap=config.wave.pop_cap, max_events=config.wave.max_events,
        workers=config.workers)
    paths = report.render_predictive_bands(bands, store.path("predict"))
    rels = [os.path.relpath(p, store.root) for p in paths]
    inside, total = report.band_coverage(bands)
    extra = {"inside": inside, "total": total}
    store.write_manifest("predict", digest, rels, inputs, extra)
    return StageResult("predict", "done", rels, time.time() - t0, extra)


def stage_plot(config: PipelineConfig, store: Store) -> StageResult:
    """Posterior histograms with prior overlays."""
    t0 = time.time()
    _, priors, _, _ = load_problem(config)
    draws_rel = "calibrate/draws.csv"
    inputs = store.require_inputs("plot", "calibrate", [draws_rel])
    digest = config.digest("wave", "mcmc")
    if store.up_to_date("plot", digest, inputs):
        return StageResult("plot", "up-to-date")
    arr, names = read_draws_csv(os.path.join(store.root, draws_rel))
    draws = cal.PosteriorDraws(draws=arr, names=names, warmup=0, thin=1,
                               root_seed=config.root_seed, config=config.mcmc)
    paths = report.render_posterior_histograms(draws, priors, store.path("figures"))
    rels = [os.path.relpath(p, store.root) for p in paths]
    store.write_manifest("plot", digest, rels, inputs)
    return StageResult("plot", "done", rels, time.time() - t0)


def stage_simulate(config: PipelineConfig, store: Store,
                   theta: np.ndarray | None = None,
                   n: int | None = None) -> StageResult:
    """One-off batch estimate at a single theta (default: prior medians)."""
    t0 = time.time()
    compiled, priors, observations, outputs = load_problem(config)
    if theta is None:
        theta = priors.log_medians
    n = n or config.wave.n_reps
    est = batch_estimate(compiled, theta, n, config.root_seed, outputs,
                         pop_cap=config.wave.pop_cap,
                         max_events=config.wave.max_events,
                         workers=config.workers)
    rel = "simulate/estimate.csv"
    with open(store.path(rel), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["output", "n", "successes", "p_hat", "elogit", "sampling_var"])
        for j, key in enumerate(est.outputs):
            w.writerow([key.label(), int(est.n[j]), int(est.successes[j]),
                        repr(float(est.p_hat[j])), repr(float(est.elogit[j])),
                        repr(float(est.sampling_var[j]))])
    return StageResult("simulate", "done", [rel], time.time() - t0,
                       {"theta": [float(v) for v in theta], "n": n})


STAGES = {
    "design": stage_design,
    "wave": stage_wave,
    "fit-gp": stage_fit_gp,
    "validate": stage_validate,
    "calibrate": stage_calibrate,
    "predict": stage_predict,
    "plot": stage_plot,
}


def run_stage(name: str, config: PipelineConfig, store: Store, **kwargs) -> StageResult:
    if name == "simulate":
        return stage_simulate(config, store, **kwargs)
    try:
        fn = STAGES[name]
    except KeyError:
        raise PipelineError(f"unknown stage {name!r}") from None
    return fn(config, store)
