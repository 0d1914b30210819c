"""Compilation of a validated network into flat kernel tables."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..kernels import (
    KernelTables, OP_ADD, OP_CHOOSE, OP_CONST, OP_DIV, OP_HILL, OP_MUL,
    OP_PARAM, OP_SPECIES, OP_SUB,
)
from .types import BinOp, Choose, Hill, Num, ReactionNetwork, Ref

_BINOPS = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV}


@dataclass(frozen=True)
class CompiledEvent:
    time: float
    assignments: tuple[tuple[int, float], ...]  # (param slot, new value)


@dataclass
class CompiledNetwork:
    """Runtime form of a network: kernel tables plus index maps.

    Parameter values are not baked in; build_params() produces the
    vector for a given log-rate vector and condition.
    """

    network: ReactionNetwork
    tables: KernelTables
    species_index: dict[str, int]
    param_index: dict[str, int]
    theta_slots: list[int]          # param slot per theta index (0-based order)
    reaction_labels: list[str]

    @property
    def n_theta(self) -> int:
        return len(self.theta_slots)

    def base_params(self) -> np.ndarray:
        """Fixed parameter values; theta slots hold the prior-median rates."""
        vals = np.empty(len(self.network.params))
        for i, p in enumerate(self.network.params):
            vals[i] = math.exp(p.log_median) if p.is_theta else p.value
        return vals

    def build_params(self, theta=None, condition: str | None = None) -> np.ndarray:
        """Parameter vector with exp(theta) substituted and condition
        time-zero overrides applied."""
        vals = self.base_params()
        if theta is not None:
            theta = np.asarray(theta, dtype=float)
            if theta.shape != (self.n_theta,):
                raise ValueError(f"theta must have shape ({self.n_theta},), got {theta.shape}")
            for j, slot in enumerate(self.theta_slots):
                vals[slot] = math.exp(theta[j])
        if condition is not None:
            cond = self.network.condition(condition)
            for name, value in cond.overrides:
                vals[self.param_index[name]] = value
        return vals

    def compiled_events(self, condition: str | None = None) -> list[CompiledEvent]:
        events = list(self.network.events)
        if condition is not None:
            events.extend(self.network.condition(condition).events)
        events.sort(key=lambda e: e.time)
        return [
            CompiledEvent(
                time=e.time,
                assignments=tuple((self.param_index[n], v) for n, v in e.assignments),
            )
            for e in events
        ]


def _emit(expr, code, carg, iarg, sp_idx, pm_idx, touched: set[int]):
    if isinstance(expr, Num):
        code.append(OP_CONST); carg.append(expr.value); iarg.append(0)
    elif isinstance(expr, Ref):
        if expr.name in sp_idx:
            s = sp_idx[expr.name]
            code.append(OP_SPECIES); carg.append(0.0); iarg.append(s)
            touched.add(s)
        else:
            code.append(OP_PARAM); carg.append(0.0); iarg.append(pm_idx[expr.name])
    elif isinstance(expr, BinOp):
        _emit(expr.left, code, carg, iarg, sp_idx, pm_idx, touched)
        _emit(expr.right, code, carg, iarg, sp_idx, pm_idx, touched)
        code.append(_BINOPS[expr.op]); carg.append(0.0); iarg.append(0)
    elif isinstance(expr, Choose):
        s = sp_idx[expr.species]
        code.append(OP_SPECIES); carg.append(0.0); iarg.append(s)
        touched.add(s)
        code.append(OP_CONST); carg.append(float(expr.k)); iarg.append(0)
        code.append(OP_CHOOSE); carg.append(0.0); iarg.append(0)
    elif isinstance(expr, Hill):
        _emit(expr.s, code, carg, iarg, sp_idx, pm_idx, touched)
        _emit(expr.k, code, carg, iarg, sp_idx, pm_idx, touched)
        _emit(expr.n, code, carg, iarg, sp_idx, pm_idx, touched)
        code.append(OP_HILL); carg.append(0.0); iarg.append(0)
    else:
        raise TypeError(f"cannot compile {expr!r}")


def compile_network(net: ReactionNetwork) -> CompiledNetwork:
    sp_idx = net.species_index()
    pm_idx = net.param_index()

    code: list[int] = []
    carg: list[float] = []
    iarg: list[int] = []
    prog_off = [0]
    reads: list[set[int]] = []  # species read by each hazard

    for r in net.reactions:
        touched: set[int] = set()
        _emit(r.rate, code, carg, iarg, sp_idx, pm_idx, touched)
        prog_off.append(len(code))
        reads.append(touched)

    st_off = [0]
    st_sp: list[int] = []
    st_dl: list[int] = []
    popdelta: list[int] = []
    changes: list[set[int]] = []
    for r in net.reactions:
        delta: dict[int, int] = {}
        for name, m in r.reactants:
            delta[sp_idx[name]] = delta.get(sp_idx[name], 0) - m
        for name, m in r.products:
            delta[sp_idx[name]] = delta.get(sp_idx[name], 0) + m
        delta = {s: d for s, d in delta.items() if d != 0}
        for s in sorted(delta):
            st_sp.append(s)
            st_dl.append(delta[s])
        st_off.append(len(st_sp))
        popdelta.append(sum(delta.values()))
        changes.append(set(delta))

    dep_off = [0]
    dep_list: list[int] = []
    for j in range(len(net.reactions)):
        affected = [k for k in range(len(net.reactions)) if reads[k] & changes[j]]
        dep_list.extend(affected)
        dep_off.append(len(dep_list))

    tables = KernelTables(
        n_species=len(net.species),
        n_reactions=len(net.reactions),
        code=np.asarray(code, dtype=np.int32),
        carg=np.asarray(carg, dtype=np.float64),
        iarg=np.asarray(iarg, dtype=np.int32),
        prog_off=np.asarray(prog_off, dtype=np.int64),
        st_off=np.asarray(st_off, dtype=np.int64),
        st_sp=np.asarray(st_sp, dtype=np.int64),
        st_dl=np.asarray(st_dl, dtype=np.int64),
        rx_popdelta=np.asarray(popdelta, dtype=np.int64),
        dep_off=np.asarray(dep_off, dtype=np.int64),
        dep_list=np.asarray(dep_list, dtype=np.int64),
    )
    theta_slots = [pm_idx[p.name] for p in net.theta_params()]
    return CompiledNetwork(
        network=net, tables=tables, species_index=sp_idx, param_index=pm_idx,
        theta_slots=theta_slots, reaction_labels=[r.label for r in net.reactions],
    )
