"""Trial reports and interval helpers shared by the verification harnesses."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

# Trials below this size refuse to emit a pass/fail verdict.
MIN_DECISIVE_N = 30

# Wilson z for frequencies and the sigma multiplier for means: both 3.
CONFIDENCE_Z = 3.0


def wilson_halfwidth(successes, n, z=CONFIDENCE_Z):
    """Half-width of the Wilson score interval for a binomial frequency."""
    if n <= 0:
        return float("inf")
    p = successes / n
    denom = 1.0 + z * z / n
    return (z / denom) * math.sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n))


@dataclass
class TrialReport:
    """Monte Carlo outcome of one claim: empirical value vs a paper bound.

    `passed` is None for report-only runs (n below the decisive threshold).
    All bounds are one-sided: pass means empirical <= bound + half_width.
    """

    claim: str
    n: int
    statistic: str
    empirical: float
    bound: float
    half_width: float
    passed: Optional[bool]
    excluded: int = 0
    seed: int = 0
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "claim": self.claim,
            "n": self.n,
            "statistic": self.statistic,
            "empirical": self.empirical,
            "bound": self.bound,
            "half_width": self.half_width,
            "passed": self.passed,
            "excluded": self.excluded,
            "seed": self.seed,
            "details": self.details,
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def verdict(empirical, bound, half_width, n):
    """One-sided pass flag, or None when n is too small to judge."""
    if n < MIN_DECISIVE_N:
        return None
    return bool(empirical <= bound + half_width)


def frequency_report(claim, hits, n, bound, seed=0, excluded=0, details=None):
    hw = wilson_halfwidth(hits, n)
    freq = hits / n if n else float("nan")
    return TrialReport(
        claim=claim,
        n=n,
        statistic="frequency",
        empirical=freq,
        bound=bound,
        half_width=hw,
        passed=verdict(freq, bound, hw, n),
        excluded=excluded,
        seed=seed,
        details=details or {},
    )


def summary_csv_lines(reports, meta=None):
    """Suite summary rows: claim, n, empirical, bound, halfwidth, pass."""
    lines = []
    for key, value in (meta or {}).items():
        lines.append(f"# {key}={value}")
    lines.append("claim,n,empirical,bound,halfwidth,pass")
    for rep in reports:
        flag = "" if rep.passed is None else str(rep.passed).lower()
        lines.append(
            f"{rep.claim},{rep.n},{rep.empirical:.10g},{rep.bound:.10g},"
            f"{rep.half_width:.10g},{flag}"
        )
    return lines
