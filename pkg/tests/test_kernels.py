"""Cross-checks between the C kernel and the pure-Python reference."""

import numpy as np
import pytest

from polyqcal import kernels
from polyqcal.kernels import KernelRun
from polyqcal.netmodel import compile_network, load_builtin_model, parse_model

BIRTH_DEATH = (
    "species A = 50\nparam b = 2.0\nparam d = 0.04\n"
    "reaction birth: -> A @ b\nreaction death: A -> @ d * A\n"
)

TWO_FLAGS = (
    "species D = 0\nspecies I = 0\n"
    "param kd = 0.002\nparam ki = 0.004\n"
    "reaction dd: -> D @ kd * (1 - D)\nreaction ii: -> I @ ki * (1 - I)\n"
)


def _tables(text):
    return compile_network(parse_model(text))


def test_native_kernel_is_available():
    assert kernels.have_native_kernel()


@pytest.mark.parametrize("text,horizon", [
    (BIRTH_DEATH, 300.0),
    (TWO_FLAGS, 2000.0),
])
def test_c_and_python_kernels_bit_identical(text, horizon):
    compiled = _tables(text)
    params = compiled.build_params()
    state0 = np.array([s.init.count for s in compiled.network.species], dtype=np.int64)
    for seed in range(5):
        runs = []
        for force in (False, True):
            rng = np.random.default_rng([seed, 9, 9, 9])
            run = KernelRun(compiled.tables, state0.copy(), params.copy(), rng,
                            pop_cap=10**7, max_events=10**9, force_python=force)
            run.advance_to(horizon)
            runs.append(run)
        c_run, py_run = runs
        assert np.array_equal(c_run.state, py_run.state)
        assert c_run.events == py_run.events
        assert c_run.t == py_run.t
        assert c_run.pop == py_run.pop


def test_kernels_bit_identical_on_builtin_model():
    compiled = compile_network(load_builtin_model())
    theta = np.array(compiled.network.theta_log_medians())
    params = compiled.build_params(theta)
    state0 = np.array([1000, 992, 0, 0, 0, 0, 0, 0, 0, 12, 3, 97, 0, 0],
                      dtype=np.int64)
    runs = []
    for force in (False, True):
        rng = np.random.default_rng([3, 1, 4, 1])
        run = KernelRun(compiled.tables, state0.copy(), params.copy(), rng,
                        pop_cap=10**7, max_events=10**9, force_python=force)
        run.advance_to(900.0)
        runs.append(run)
    assert np.array_equal(runs[0].state, runs[1].state)
    assert runs[0].events == runs[1].events
    assert runs[0].t == runs[1].t


def test_population_cap_aborts():
    compiled = _tables("species A = 10\nparam b = 100.0\nreaction r: -> A @ b * A\n")
    params = compiled.build_params()
    rng = np.random.default_rng(0)
    run = KernelRun(compiled.tables, np.array([10], dtype=np.int64), params, rng,
                    pop_cap=1000, max_events=10**9)
    status = run.advance_to(1e9)
    assert status == kernels.ABORT_POP
    assert run.pop > 1000


def test_event_budget_aborts():
    compiled = _tables(BIRTH_DEATH)
    params = compiled.build_params()
    rng = np.random.default_rng(0)
    run = KernelRun(compiled.tables, np.array([50], dtype=np.int64), params, rng,
                    pop_cap=10**9, max_events=100)
    status = run.advance_to(1e9)
    assert status == kernels.OK_BUDGET
    assert run.events == 100


def test_division_by_zero_raises_with_reaction_index():
    compiled = _tables("species A = 5\nspecies B = 0\nparam k = 1.0\n"
                       "reaction bad: A -> @ k * A / B\n")
    params = compiled.build_params()
    for force in (False, True):
        rng = np.random.default_rng(1)
        run = KernelRun(compiled.tables, np.array([5, 0], dtype=np.int64),
                        params.copy(), rng, pop_cap=10**7, max_events=10**9,
                        force_python=force)
        with pytest.raises(kernels.KernelError) as err:
            run.advance_to(10.0)
        assert err.value.reaction == 0


def test_zero_hazard_freezes_state():
    compiled = _tables("species A = 7\nparam k = 0.0\nreaction r: A -> @ k * A\n")
    params = compiled.build_params()
    rng = np.random.default_rng(2)
    run = KernelRun(compiled.tables, np.array([7], dtype=np.int64), params, rng,
                    pop_cap=10**7, max_events=10**9)
    status = run.advance_to(1e6)
    assert status == kernels.OK_STOP
    assert run.t == 1e6
    assert run.events == 0
    assert run.state[0] == 7
