"""Verification records shared by every check."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any

PASS, FAIL, DIAGNOSTIC = "pass", "fail", "diagnostic"


@dataclass
class VerificationRecord:
    """One evaluated inequality or identity.

    ``slack`` is ``rhs - lhs`` for scalar checks and minus the worst
    pointwise violation otherwise; the verdict passes iff
    ``slack >= -tolerance``. Diagnostic records never fail a suite.
    """

    name: str
    params: dict[str, Any]
    lhs: float
    rhs: float
    slack: float
    tolerance: float
    verdict: str
    mesh_h: float = float("nan")
    seed: int | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict != FAIL

    def sort_key(self) -> tuple:
        return (self.name, tuple(sorted((k, _key(v)) for k, v in self.params.items())))

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        return _jsonable(d)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "VerificationRecord":
        d = dict(d)
        for k in ("lhs", "rhs", "slack", "tolerance", "mesh_h"):
            d[k] = _unjson(d[k])
        return cls(**d)


def _key(v):
    return (0, v) if isinstance(v, (int, float)) else (1, str(v))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if hasattr(x, "item"):
        return _jsonable(x.item())
    return x


def _unjson(v):
    if isinstance(v, str):
        return float(v)
    return v


def make_record(
    name: str,
    params: dict[str, Any],
    lhs: float,
    rhs: float,
    tolerance: float,
    *,
    slack: float | None = None,
    diagnostic: bool = False,
    mesh_h: float = float("nan"),
    seed: int | None = None,
    extra: dict[str, Any] | None = None,
) -> VerificationRecord:
    lhs, rhs = float(lhs), float(rhs)
    s = rhs - lhs if slack is None else float(slack)
    if diagnostic:
        verdict = DIAGNOSTIC
    else:
        verdict = PASS if (s >= -tolerance and not math.isnan(s)) else FAIL
    return VerificationRecord(
        name, dict(params), lhs, rhs, s, float(tolerance), verdict, float(mesh_h), seed, dict(extra or {})
    )
