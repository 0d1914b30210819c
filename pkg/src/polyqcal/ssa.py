"""Exact stochastic simulation and batch estimation of output proportions.

simulate() produces one statistically exact realisation of the jump
process defined by a ReactionNetwork under an experimental condition;
batch_estimate() marginalises the uncertain initial state over many
replicates and reduces indicator outcomes to empirical-logit estimates
with their sampling variances.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .kernels import ABORT_POP, KernelError, KernelRun, OK_BUDGET, OK_STOP
from .netmodel import (
    CompiledNetwork, ComplementInit, DLNInit, FixedInit, ReactionNetwork,
    UniformInit, compile_network, evaluate_predicate,
)

STATUS_OK = "ok"
STATUS_ABORT_POP = "aborted-population"
STATUS_ABORT_EVENTS = "aborted-events"

DEFAULT_POP_CAP = 10_000_000


class SimulationError(RuntimeError):
    """Hazard evaluation failed during a run."""

    def __init__(self, reaction_label: str, detail: str):
        self.reaction_label = reaction_label
        super().__init__(f"reaction {reaction_label!r}: {detail}")


class EstimateFailure(RuntimeError):
    """More than the tolerated fraction of replicates aborted."""


@dataclass(frozen=True)
class SimConfig:
    """One simulation run: condition, horizon, record grid, guards."""

    t_end: float
    record_times: tuple[float, ...]
    condition: str | None = None
    pop_cap: int = DEFAULT_POP_CAP
    max_events: int = 1_000_000_000

    def __post_init__(self):
        rt = tuple(float(t) for t in self.record_times)
        if any(b < a for a, b in zip(rt, rt[1:])):
            raise ValueError("record times must be sorted")
        if rt and rt[-1] > self.t_end:
            raise ValueError("record times must not exceed t_end")
        object.__setattr__(self, "record_times", rt)


@dataclass
class IndicatorRecord:
    """Observable indicators at the record times of a single run."""

    times: tuple[float, ...]
    values: dict[str, np.ndarray]  # observable name -> int8 per record time (-1 unreached)
    status: str
    events: int
    final_state: np.ndarray

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


def _as_compiled(network) -> CompiledNetwork:
    if isinstance(network, CompiledNetwork):
        return network
    if isinstance(network, ReactionNetwork):
        return compile_network(network)
    raise TypeError(f"expected a network, got {type(network).__name__}")


def sample_initial_state(network, rng: np.random.Generator) -> np.ndarray:
    """Initial counts drawn from the declared laws, in declaration order.

    Discrete log-normal species round a log-normal draw to the nearest
    integer, which realises the mass function Pr(i-0.5 < X < i+0.5).
    """
    compiled = _as_compiled(network)
    decls = compiled.network.species
    state = np.zeros(len(decls), dtype=np.int64)
    index = compiled.species_index
    for i, s in enumerate(decls):
        law = s.init
        if isinstance(law, FixedInit):
            state[i] = law.count
        elif isinstance(law, DLNInit):
            x = rng.lognormal(mean=law.mu, sigma=law.sigma)
            state[i] = int(math.floor(x + 0.5))
        elif isinstance(law, UniformInit):
            state[i] = int(rng.integers(law.low, law.high + 1))
        elif isinstance(law, ComplementInit):
            state[i] = law.total - state[index[law.other]]
            if state[i] < 0:
                raise ValueError(
                    f"complement initial count for {s.name!r} is negative")
        else:
            raise TypeError(f"unknown initial law {law!r}")
    return state


def simulate(network, theta, config: SimConfig, rng: np.random.Generator,
             initial_state: np.ndarray | None = None,
             force_python: bool = False) -> IndicatorRecord:
    """One exact realisation; indicators evaluated at the record times.

    The generator is consumed first for the initial state (when not
    supplied) and then for the event stream, so a (seed, theta, config)
    triple pins the whole trajectory.
    """
    compiled = _as_compiled(network)
    net = compiled.network
    if initial_state is None:
        initial_state = sample_initial_state(compiled, rng)
    params = compiled.build_params(theta, config.condition)
    events = [e for e in compiled.compiled_events(config.condition)
              if 0.0 < e.time <= config.t_end]

    run = KernelRun(compiled.tables, initial_state, params, rng,
                    pop_cap=config.pop_cap, max_events=config.max_events,
                    force_python=force_python)

    stops = sorted({t for t in config.record_times} | {e.time for e in events}
                   | {config.t_end})
    record_set = set(config.record_times)
    events_by_time: dict[float, list] = {}
    for e in events:
        events_by_time.setdefault(e.time, []).append(e)

    names = compiled.network.species_names()
    obs = {o.name: o.predicate for o in net.observables}
    values = {name: np.full(len(config.record_times), -1, dtype=np.int8)
              for name in obs}
    rec_i = 0
    status = STATUS_OK
    try:
        for stop in stops:
            st = run.advance_to(stop)
            if st != OK_STOP:
                status = STATUS_ABORT_POP if st == ABORT_POP else STATUS_ABORT_EVENTS
                break
            if stop in record_set:
                snapshot = dict(zip(names, run.state.tolist()))
                for name, pred in obs.items():
                    values[name][rec_i] = 1 if evaluate_predicate(pred, snapshot) else 0
                rec_i += 1
            for e in events_by_time.get(stop, ()):
                for slot, value in e.assignments:
                    run.set_param(slot, value)
    except KernelError as exc:
        label = compiled.reaction_labels[exc.reaction]
        raise SimulationError(label, str(exc)) from exc

    return IndicatorRecord(
        times=config.record_times, values=values, status=status,
        events=run.events, final_state=run.state.copy(),
    )


# --- empirical logits -------------------------------------------------------

def elogit(p_hat: float, n: int) -> float:
    """Bias-reducing empirical logit of a sample proportion."""
    if n < 2:
        raise ValueError("n must be at least 2")
    c = 0.5 / n
    return math.log((p_hat + c) / (1.0 - p_hat + c))


def sampling_variance(p_hat: float, n: int) -> float:
    """Variance of the empirical logit around logit p.

    Uses the continuity-corrected proportion (n*p_hat + 0.5)/(n + 1) so
    the value stays finite at p_hat in {0, 1}; for proportions kept by
    the admissibility filter the correction is negligible.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    p_tilde = (n * p_hat + 0.5) / (n + 1)
    return 1.0 / (n * p_tilde * (1.0 - p_tilde))


@dataclass(frozen=True)
class OutputKey:
    """One emulated quantity: an observable under a condition at a time."""

    observable: str
    condition: str
    time: float  # seconds

    @property
    def time_h(self) -> float:
        return self.time / 3600.0

    def label(self) -> str:
        return f"{self.observable}_{self.condition}_{int(round(self.time_h))}h"


@dataclass
class BatchEstimate:
    """Proportion estimates for a set of outputs at one design point."""

    outputs: tuple[OutputKey, ...]
    n_nominal: int
    n: np.ndarray            # completed replicates per output
    successes: np.ndarray
    p_hat: np.ndarray
    elogit: np.ndarray
    sampling_var: np.ndarray
    aborted: dict[str, int] = field(default_factory=dict)
    root_seed: int = 0
    design_index: int = 0


def default_outputs() -> tuple[OutputKey, ...]:
    from . import data
    return data.output_set()


def batch_estimate(network, theta, n: int, root_seed: int,
                   outputs: tuple[OutputKey, ...] | None = None, *,
                   design_index: int = 0,
                   pop_cap: int = DEFAULT_POP_CAP,
                   max_events: int = 1_000_000_000,
                   workers: int | None = None,
                   abort_tolerance: float = 0.01,
                   force_python: bool = False) -> BatchEstimate:
    """Estimate output proportions from n fresh replicates per condition.

    Every replicate draws its own initial state (the estimate integrates
    over the initial-level prior) and its own rng stream keyed by
    (root seed, design index, replicate index, condition index), so the
    result does not depend on scheduling.

    Raises EstimateFailure when more than ``abort_tolerance`` of the
    replicates of any condition abort on the population or event guard.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    compiled = _as_compiled(network)
    if outputs is None:
        outputs = default_outputs()

    conditions: list[str] = []
    for key in outputs:
        if key.condition not in conditions:
            conditions.append(key.condition)
    cond_order = {c.name: i for i, c in enumerate(compiled.network.conditions)}

    abort_budget = int(math.floor(abort_tolerance * n))

    def run_condition(cond: str):
        keys = [k for k in outputs if k.condition == cond]
        times = tuple(sorted({k.time for k in keys}))
        config = SimConfig(t_end=times[-1], record_times=times, condition=cond,
                           pop_cap=pop_cap, max_events=max_events)
        t_index = {t: i for i, t in enumerate(times)}
        cond_idx = cond_order.get(cond, len(cond_order))
        succ = {k: 0 for k in keys}
        completed = 0
        aborted = 0

        def one(rep: int):
            rng = rngmod.substream(root_seed, rngmod.DOMAIN_SIM,
                                   design_index, rep, cond_idx)
            return simulate(compiled, theta, config, rng,
                            force_python=force_python)

        # replicates run in fixed-size chunks so a doomed estimate (abort
        # budget already blown) is abandoned without burning the full n;
        # the outcome is identical because the abort count only grows
        chunk = max(8, n // 16)
        for lo in range(0, n, chunk):
            reps = range(lo, min(lo + chunk, n))
            if workers and workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    records = list(pool.map(one, reps))
            else:
                records = [one(rep) for rep in reps]
            for rec in records:
                if not rec.ok:
                    aborted += 1
                    continue
                completed += 1
                for k in keys:
                    if rec.values[k.observable][t_index[k.time]] == 1:
                        succ[k] += 1
            if aborted > abort_budget:
                raise EstimateFailure(
                    f"{aborted} of the first {reps.stop} replicates aborted "
                    f"under condition {cond!r}")
        return keys, succ, completed, aborted

    succ_all: dict[OutputKey, int] = {}
    n_all: dict[OutputKey, int] = {}
    aborted: dict[str, int] = {}
    for cond in conditions:
        keys, succ, completed, ab = run_condition(cond)
        aborted[cond] = ab
        if completed < 2:
            raise EstimateFailure(f"fewer than 2 completed runs under {cond!r}")
        for k in keys:
            succ_all[k] = succ[k]
            n_all[k] = completed

    ns = np.array([n_all[k] for k in outputs], dtype=np.int64)
    successes = np.array([succ_all[k] for k in outputs], dtype=np.int64)
    p_hat = successes / ns
    elog = np.array([elogit(p, int(m)) for p, m in zip(p_hat, ns)])
    svar = np.array([sampling_variance(p, int(m)) for p, m in zip(p_hat, ns)])
    return BatchEstimate(
        outputs=tuple(outputs), n_nominal=n, n=ns, successes=successes,
        p_hat=p_hat, elogit=elog, sampling_var=svar, aborted=aborted,
        root_seed=root_seed, design_index=design_index,
    )
