import math

import numpy as np
import pytest

from polyqcal.netmodel import compile_network, parse_model

# cheap two-flag network: at most two events per run, so wave and
# pipeline machinery can be exercised end to end in seconds
TOY_MODEL = f"""
species Dflag = 0
species Iflag = 0
param kD = theta(1, logmedian={math.log(1.2e-6)!r})
param kI = theta(2, logmedian={math.log(3.0e-6)!r})
param boost = 1.0
param damp = 1.0
reaction dd: -> Dflag @ kD * (1 - Dflag)
reaction ii: -> Iflag @ kI * boost * damp * (1 - Iflag)
observable death = Dflag > 0
observable inclusion = Iflag > 0
condition i {{ }}
condition ii {{ event at 24 h set boost = 2 }}
condition iii {{ set damp = 0.5 }}
"""


@pytest.fixture(scope="session")
def toy_model_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "toy.model"
    path.write_text(TOY_MODEL)
    return str(path)


@pytest.fixture(scope="session")
def toy_network():
    return parse_model(TOY_MODEL)


@pytest.fixture(scope="session")
def toy_compiled(toy_network):
    return compile_network(toy_network)


TOY_TRUE_THETA = np.array([math.log(1.2e-6) + 0.4, math.log(3.0e-6) - 0.3])
TOY_TRUE_SIGMA_D = 0.10
TOY_TRUE_SIGMA_I = 0.15


def synthesize_observations(compiled, theta, sigma_d, sigma_i, seed, path,
                            n_reps=2000, max_events=100_000, workers=None):
    """Write a data CSV of noisy logit observations generated by the model."""
    from polyqcal.data import output_set
    from polyqcal.rng import substream
    from polyqcal.ssa import batch_estimate

    outputs = output_set()
    est = batch_estimate(compiled, theta, n_reps, root_seed=seed, outputs=outputs,
                         max_events=max_events, workers=workers)
    rng = substream(seed, 99)
    lines = ["kind,condition,time_h,repeat,proportion"]
    for j, key in enumerate(outputs):
        p = min(max(float(est.p_hat[j]), 1e-4), 1.0 - 1e-4)
        logit = math.log(p / (1.0 - p))
        sigma = sigma_d if key.observable == "death" else sigma_i
        for repeat in (1, 2):
            y = logit + sigma * rng.standard_normal()
            prop = 1.0 / (1.0 + math.exp(-y))
            lines.append(f"{key.observable},{key.condition},"
                         f"{key.time_h:g},{repeat},{prop!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return outputs


@pytest.fixture(scope="session")
def toy_data_file(tmp_path_factory, toy_compiled):
    path = tmp_path_factory.mktemp("data") / "toy_observations.csv"
    synthesize_observations(toy_compiled, TOY_TRUE_THETA, TOY_TRUE_SIGMA_D,
                            TOY_TRUE_SIGMA_I, seed=424242, path=str(path))
    return str(path)
