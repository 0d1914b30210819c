"""Low-level simulation kernels.

Two interchangeable implementations of the direct-method jump-process
loop: a C kernel compiled on first use (preferred) and a pure-Python
reference that mirrors the C arithmetic operation for operation.  Both
consume caller-supplied uniform random numbers, so given the same
buffer contents they produce bit-identical trajectories.
"""

from __future__ import annotations

import ctypes
import hashlib
import math
import os
import shutil
import subprocess
import tempfile
from dataclasses import dataclass

import numpy as np

OP_CONST = 0
OP_PARAM = 1
OP_SPECIES = 2
OP_ADD = 3
OP_SUB = 4
OP_MUL = 5
OP_DIV = 6
OP_CHOOSE = 7
OP_HILL = 8

OK_STOP = 0
NEED_RANDOM = 1
OK_BUDGET = 2
ABORT_POP = 3
ERR_DIV = 4
ERR_HAZARD = 5

_C_SOURCE = os.path.join(os.path.dirname(__file__), "_src", "ssa_kernel.c")


@dataclass
class KernelTables:
    """Flat-array form of a reaction network consumed by the kernels.

    Hazard expressions are RPN programs over shared ``code``/``carg``/
    ``iarg`` arrays with per-reaction offsets; ``dep_list`` gives, for
    each reaction, the hazards to recompute after it fires.
    """

    n_species: int
    n_reactions: int
    code: np.ndarray       # int32, opcodes
    carg: np.ndarray       # float64, literal operands
    iarg: np.ndarray       # int32, species/param indices
    prog_off: np.ndarray   # int64, n_reactions + 1
    st_off: np.ndarray     # int64, n_reactions + 1
    st_sp: np.ndarray      # int64, species index per stoich entry
    st_dl: np.ndarray      # int64, delta per stoich entry
    rx_popdelta: np.ndarray  # int64, net population change per reaction
    dep_off: np.ndarray    # int64, n_reactions + 1
    dep_list: np.ndarray   # int64


class KernelError(RuntimeError):
    """Hazard evaluation failed inside a kernel."""

    def __init__(self, status: int, reaction: int):
        self.status = status
        self.reaction = reaction
        kind = "division by zero" if status == ERR_DIV else "non-finite or negative hazard"
        super().__init__(f"{kind} while evaluating hazard of reaction index {reaction}")


def _cache_dir() -> str:
    root = os.environ.get("XDG_CACHE_HOME") or os.path.join(os.path.expanduser("~"), ".cache")
    path = os.path.join(root, "polyqcal")
    os.makedirs(path, exist_ok=True)
    return path


def _build_shared_lib() -> str | None:
    cc = shutil.which("cc") or shutil.which("gcc")
    if cc is None:
        return None
    with open(_C_SOURCE, "rb") as fh:
        tag = hashlib.sha256(fh.read()).hexdigest()[:16]
    so_path = os.path.join(_cache_dir(), f"ssa_kernel-{tag}.so")
    if os.path.exists(so_path):
        return so_path
    fd, tmp = tempfile.mkstemp(suffix=".so", dir=_cache_dir())
    os.close(fd)
    cmd = [cc, "-O2", "-ffp-contract=off", "-fPIC", "-shared", _C_SOURCE, "-o", tmp, "-lm"]
    try:
        subprocess.run(cmd, check=True, capture_output=True)
    except (OSError, subprocess.CalledProcessError):
        os.unlink(tmp)
        return None
    os.replace(tmp, so_path)
    return so_path


_LIB = None
_LIB_TRIED = False


def _load_lib():
    global _LIB, _LIB_TRIED
    if _LIB_TRIED:
        return _LIB
    _LIB_TRIED = True
    if os.environ.get("POLYQCAL_PURE_PYTHON"):
        return None
    so_path = _build_shared_lib()
    if so_path is None:
        return None
    lib = ctypes.CDLL(so_path)
    i64 = ctypes.c_int64
    p_i64 = ctypes.POINTER(ctypes.c_int64)
    p_i32 = ctypes.POINTER(ctypes.c_int32)
    p_f64 = ctypes.POINTER(ctypes.c_double)
    lib.ssa_advance.restype = i64
    lib.ssa_advance.argtypes = [
        p_i64, i64,                     # state, n_species
        p_f64,                          # params
        p_i32, p_f64, p_i32, p_i64,     # code, carg, iarg, prog_off
        p_i64, p_i64, p_i64, p_i64,     # st_off, st_sp, st_dl, rx_popdelta
        p_i64, p_i64,                   # dep_off, dep_list
        i64,                            # n_reactions
        p_f64, ctypes.c_double,         # t_io, t_stop
        p_f64, i64, p_i64,              # u, n_u, u_used_io
        i64, p_i64,                     # pop_cap, pop_io
        i64, p_i64,                     # max_steps, steps_io
        p_i64,                          # err_reaction_io
        p_f64,                          # hbuf
    ]
    _LIB = lib
    return _LIB


def have_native_kernel() -> bool:
    return _load_lib() is not None


def _eval_program_py(tables: KernelTables, r: int, state, params) -> float:
    code = tables.code
    carg = tables.carg
    iarg = tables.iarg
    st: list[float] = []
    for pc in range(tables.prog_off[r], tables.prog_off[r + 1]):
        op = code[pc]
        if op == OP_CONST:
            st.append(carg[pc])
        elif op == OP_PARAM:
            st.append(params[iarg[pc]])
        elif op == OP_SPECIES:
            st.append(float(state[iarg[pc]]))
        elif op == OP_ADD:
            b = st.pop()
            st[-1] = st[-1] + b
        elif op == OP_SUB:
            b = st.pop()
            st[-1] = st[-1] - b
        elif op == OP_MUL:
            b = st.pop()
            st[-1] = st[-1] * b
        elif op == OP_DIV:
            b = st.pop()
            if b == 0.0:
                raise KernelError(ERR_DIV, r)
            st[-1] = st[-1] / b
        elif op == OP_CHOOSE:
            kd = st.pop()
            x = st[-1]
            k = int(kd)
            acc = 1.0
            for j in range(k):
                acc *= x - float(j)
            for j in range(2, k + 1):
                acc /= float(j)
            if acc < 0.0:
                acc = 0.0
            st[-1] = acc
        elif op == OP_HILL:
            nn = st.pop()
            kk = st.pop()
            ss = st[-1]
            if nn == 1.0:
                num, den = ss, ss + kk
            else:
                num = math.pow(ss, nn)
                den = num + math.pow(kk, nn)
            st[-1] = 0.0 if den == 0.0 else num / den
    return st[0]


def _check_hazard(h: float, r: int) -> None:
    if not (h >= 0.0) or math.isinf(h):
        raise KernelError(ERR_HAZARD, r)


def advance_py(tables: KernelTables, state: np.ndarray, params: np.ndarray,
               t: float, t_stop: float, u: np.ndarray, u_used: int,
               pop_cap: int, pop: int, max_steps: int):
    """Reference loop; mirrors ssa_advance in the C source exactly."""
    R = tables.n_reactions
    hbuf = [0.0] * R
    a0 = 0.0
    for i in range(R):
        h = _eval_program_py(tables, i, state, params)
        _check_hazard(h, i)
        hbuf[i] = h
        a0 += h
    steps = 0
    n_u = len(u)
    st_off = tables.st_off
    st_sp = tables.st_sp
    st_dl = tables.st_dl
    dep_off = tables.dep_off
    dep_list = tables.dep_list
    popdelta = tables.rx_popdelta
    while True:
        if a0 <= 0.0:
            t = t_stop
            break
        if u_used + 2 > n_u:
            return NEED_RANDOM, t, u_used, pop, steps
        u1 = u[u_used]
        u_used += 1
        dt = -math.log1p(-u1) / a0
        if t + dt >= t_stop:
            t = t_stop
            break
        t = t + dt
        target = u[u_used] * a0
        u_used += 1
        c = 0.0
        r = -1
        for i in range(R):
            c += hbuf[i]
            if target < c:
                r = i
                break
        if r < 0:
            for i in range(R - 1, -1, -1):
                if hbuf[i] > 0.0:
                    r = i
                    break
            if r < 0:
                t = t_stop
                break
        for j in range(st_off[r], st_off[r + 1]):
            state[st_sp[j]] += st_dl[j]
        pop += int(popdelta[r])
        steps += 1
        if pop > pop_cap:
            return ABORT_POP, t, u_used, pop, steps
        for j in range(dep_off[r], dep_off[r + 1]):
            k = dep_list[j]
            h = _eval_program_py(tables, k, state, params)
            _check_hazard(h, k)
            a0 += h - hbuf[k]
            hbuf[k] = h
        if steps >= max_steps:
            return OK_BUDGET, t, u_used, pop, steps
    return OK_STOP, t, u_used, pop, steps


class KernelRun:
    """Resumable single-trajectory driver over either kernel.

    Owns the uniform buffer (refilled from ``rng``), the mutable state
    vector and the event budget; ``advance_to`` runs the process up to a
    stop time, raising KernelError on hazard failures and reporting
    population/event aborts through ``status``.
    """

    BLOCK = 1 << 15

    def __init__(self, tables: KernelTables, state: np.ndarray, params: np.ndarray,
                 rng: np.random.Generator, pop_cap: int, max_events: int,
                 force_python: bool = False):
        self.tables = tables
        self.state = np.ascontiguousarray(state, dtype=np.int64)
        self.params = np.ascontiguousarray(params, dtype=np.float64)
        self.rng = rng
        self.t = 0.0
        self.pop = int(self.state.sum())
        self.pop_cap = int(pop_cap)
        self.events = 0
        self.max_events = int(max_events)
        self.status = OK_STOP
        self._u = rng.random(self.BLOCK)
        self._u_used = 0
        self._lib = None if force_python else _load_lib()
        if self._lib is not None:
            self._bind()

    def _bind(self):
        tb = self.tables
        f64p = ctypes.POINTER(ctypes.c_double)
        i64p = ctypes.POINTER(ctypes.c_int64)
        i32p = ctypes.POINTER(ctypes.c_int32)

        def ptr(a, tp):
            return a.ctypes.data_as(tp)

        self._c_state = ptr(self.state, i64p)
        self._c_params = ptr(self.params, f64p)
        self._c_args = (
            ptr(tb.code, i32p), ptr(tb.carg, f64p), ptr(tb.iarg, i32p),
            ptr(tb.prog_off, i64p), ptr(tb.st_off, i64p), ptr(tb.st_sp, i64p),
            ptr(tb.st_dl, i64p), ptr(tb.rx_popdelta, i64p),
            ptr(tb.dep_off, i64p), ptr(tb.dep_list, i64p),
        )
        self._hbuf = np.empty(tb.n_reactions, dtype=np.float64)
        self._c_hbuf = ptr(self._hbuf, f64p)
        self._t_io = ctypes.c_double()
        self._u_used_io = ctypes.c_int64()
        self._pop_io = ctypes.c_int64()
        self._steps_io = ctypes.c_int64()
        self._err_io = ctypes.c_int64(-1)

    def set_param(self, index: int, value: float) -> None:
        self.params[index] = value

    def _refill(self):
        self._u = self.rng.random(self.BLOCK)
        self._u_used = 0

    def advance_to(self, t_stop: float) -> int:
        """Run until t_stop; returns a status (OK_STOP or an abort)."""
        while True:
            budget = self.max_events - self.events
            if budget <= 0:
                self.status = OK_BUDGET
                return self.status
            if self._lib is not None:
                status, steps = self._advance_c(t_stop, budget)
            else:
                status, steps = self._advance_py(t_stop, budget)
            self.events += steps
            if status == NEED_RANDOM:
                self._refill()
                continue
            if status == OK_BUDGET and self.events < self.max_events:
                continue
            if status in (ERR_DIV, ERR_HAZARD):
                raise KernelError(status, self._err_reaction)
            self.status = status
            return status

    def _advance_c(self, t_stop: float, budget: int):
        lib = self._lib
        self._t_io.value = self.t
        self._u_used_io.value = self._u_used
        self._pop_io.value = self.pop
        self._steps_io.value = 0
        self._err_io.value = -1
        status = lib.ssa_advance(
            self._c_state, self.tables.n_species, self._c_params,
            *self._c_args, self.tables.n_reactions,
            ctypes.byref(self._t_io), ctypes.c_double(t_stop),
            self._u.ctypes.data_as(ctypes.POINTER(ctypes.c_double)), len(self._u),
            ctypes.byref(self._u_used_io),
            self.pop_cap, ctypes.byref(self._pop_io),
            budget, ctypes.byref(self._steps_io),
            ctypes.byref(self._err_io),
            self._c_hbuf,
        )
        self.t = self._t_io.value
        self._u_used = self._u_used_io.value
        self.pop = self._pop_io.value
        self._err_reaction = self._err_io.value
        return int(status), int(self._steps_io.value)

    def _advance_py(self, t_stop: float, budget: int):
        try:
            status, t, u_used, pop, steps = advance_py(
                self.tables, self.state, self.params, self.t, t_stop,
                self._u, self._u_used, self.pop_cap, self.pop, budget)
        except KernelError as exc:
            self._err_reaction = exc.reaction
            raise
        self.t = t
        self._u_used = u_used
        self.pop = pop
        return status, steps
