"""Slack reports shared by the verification routines."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BoundViolation


@dataclass
class BoundCheck:
    name: str
    slack: float
    state: int = -1
    tol: float = 1e-8
    skipped: bool = False
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.skipped or self.slack >= -self.tol

    @property
    def status(self) -> str:
        if self.skipped:
            return "SKIPPED"
        return "PASS" if self.passed else "FAIL"

    def line(self) -> str:
        if self.skipped:
            return f"{self.status} {self.name} ({self.note})" if self.note else f"{self.status} {self.name}"
        return f"{self.status} {self.name} slack={self.slack:.3e} state={self.state}"


@dataclass
class BoundReport:
    checks: list = field(default_factory=list)

    def add(self, name, slack_array, tol=1e-8, note=""):
        """Record min(slack_array) and where it is attained."""
        arr = np.atleast_1d(np.asarray(slack_array, dtype=float))
        i = int(np.argmin(arr))
        self.checks.append(BoundCheck(name, float(arr[i]), i, tol, note=note))
        return self.checks[-1]

    def skip(self, name, note=""):
        self.checks.append(BoundCheck(name, np.nan, skipped=True, note=note))

    def extend(self, other: "BoundReport"):
        self.checks.extend(other.checks)
        return self

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name) -> BoundCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def raise_if_failed(self):
        for c in self.checks:
            if not c.passed:
                raise BoundViolation(c.name, c.state, c.slack)
        return self

    def lines(self):
        return [c.line() for c in self.checks]

    def to_dict(self):
        return {
            c.name: {"status": c.status, "slack": None if c.skipped else c.slack, "state": c.state}
            for c in self.checks
        }
