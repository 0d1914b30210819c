"""Bundled observed proportions and the 24 output definitions.

The observed data are proportions of cell death (24/36/48 h) and of
cells with inclusion bodies (24/30/36/42/48 h) under three experimental
conditions with two repeats each; the calibration works with their
logits.
"""

from __future__ import annotations

import csv
import importlib.resources
import math
from dataclasses import dataclass

from .ssa import OutputKey

CONDITIONS = ("i", "ii", "iii")
DEATH_TIMES_H = (24.0, 36.0, 48.0)
INCLUSION_TIMES_H = (24.0, 30.0, 36.0, 42.0, 48.0)


@dataclass(frozen=True)
class Observation:
    output: OutputKey
    repeat: int
    proportion: float

    @property
    def y(self) -> float:
        """Observed value on the logit scale."""
        return math.log(self.proportion / (1.0 - self.proportion))


def _read_bundled(name: str) -> list[dict]:
    ref = importlib.resources.files("polyqcal").joinpath("data", name)
    with ref.open("r", encoding="utf-8") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(rows))


def load_observations(path: str | None = None) -> tuple[Observation, ...]:
    """All 48 observations ordered death-first, then by condition, time
    and repeat.  ``path`` replaces the bundled files with a user CSV of
    the same schema."""
    if path is None:
        raw = _read_bundled("death.csv") + _read_bundled("inclusions.csv")
    else:
        with open(path, encoding="utf-8") as fh:
            rows = [line for line in fh if not line.startswith("#")]
        raw = list(csv.DictReader(rows))
    obs = [
        Observation(
            output=OutputKey(
                observable="death" if r["kind"] == "death" else "inclusion",
                condition=r["condition"],
                time=float(r["time_h"]) * 3600.0,
            ),
            repeat=int(r["repeat"]),
            proportion=float(r["proportion"]),
        )
        for r in raw
    ]
    kind_rank = {"death": 0, "inclusion": 1}
    cond_rank = {c: i for i, c in enumerate(CONDITIONS)}
    obs.sort(key=lambda o: (kind_rank[o.output.observable],
                            cond_rank.get(o.output.condition, 99),
                            o.output.time, o.repeat))
    return tuple(obs)


def output_set() -> tuple[OutputKey, ...]:
    """The 24 emulated outputs: 9 death + 15 inclusion time-condition pairs."""
    keys = [OutputKey("death", c, t * 3600.0)
            for c in CONDITIONS for t in DEATH_TIMES_H]
    keys += [OutputKey("inclusion", c, t * 3600.0)
             for c in CONDITIONS for t in INCLUSION_TIMES_H]
    return tuple(keys)
