"""Per-iteration history of an active-learning run."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

log = logging.getLogger(__name__)

ACTIONS = ("enrich-GP", "grow-population", "rebuild-aux-density", "total-check", "stop")


class FlowchartViolation(AssertionError):
    pass


@dataclass
class IterationEntry:
    iteration: int
    action: str
    pf: float
    doe_size: int
    population_size: int
    variances: dict | None = None
    note: str = ""

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"unknown action {self.action!r}")


@dataclass
class RunRecord:
    method: str
    problem: str
    n_doe_init: int
    entries: list = field(default_factory=list)
    pf: float = math.nan  # final estimate reported by the method
    pf_t: float | None = None
    cov_tot: dict | None = None
    n_call: int = 0
    converged: bool = False
    failure: str | None = None
    warnings: list = field(default_factory=list)
    wall_time: float = 0.0  # kept out of persisted records, which must be reproducible

    def log(self, action: str, pf: float, doe_size: int, population_size: int,
            variances: dict | None = None, note: str = "") -> None:
        self.entries.append(IterationEntry(len(self.entries), action, float(pf), int(doe_size),
                                           int(population_size), variances, note))
        log.debug("%s %s #%d %s pf=%.4g doe=%d pop=%d %s", self.method, self.problem, len(self.entries) - 1,
                  action, pf, doe_size, population_size, note)

    def count(self, action: str) -> int:
        return sum(e.action == action for e in self.entries)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("wall_time")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        d = dict(d)
        entries = [IterationEntry(**e) for e in d.pop("entries")]
        return cls(entries=entries, **d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=True)


def check_flowchart(record: RunRecord, mode: str) -> None:
    """Raise :class:`FlowchartViolation` when the action path cannot come from
    the step graph of the variance-based algorithm (``mode`` 'mcs' or 'is')."""
    actions = [e.action for e in record.entries]
    if "stop" in actions[:-1]:
        raise FlowchartViolation("stop must be the final action")
    if record.converged:
        if len(actions) < 2 or actions[-1] != "stop" or actions[-2] != "total-check":
            raise FlowchartViolation("a converged run ends with total-check then stop")
    if mode == "mcs" and "rebuild-aux-density" in actions:
        raise FlowchartViolation("auxiliary densities only exist in IS mode")
    if mode == "is":
        gp_changed = True
        started = False
        for e in record.entries:
            if e.action == "rebuild-aux-density":
                if started and not gp_changed:
                    raise FlowchartViolation("density rebuilt without a GP update")
                gp_changed = False
                started = True
            elif e.action == "enrich-GP":
                gp_changed = True
            elif e.action == "grow-population":
                if not started or gp_changed:
                    raise FlowchartViolation("IS population grown while the GP changed since the last rebuild")
    if record.n_call != record.n_doe_init + record.count("enrich-GP"):
        raise FlowchartViolation("N_call does not match initial DoE plus enrichments")
