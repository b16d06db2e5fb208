"""Accuracy, the name-only random baseline, and McNemar's paired test."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .grounding import GroundingResult
from .scene import SceneGraph, class_groups
from .serialize import GraphVariant
from .statements import ReferentialStatement

EXACT_BELOW = 25


class EmptyRun(ValueError):
    pass


class UnknownTarget(KeyError):
    pass


class MismatchedRuns(ValueError):
    pass


class McNemarMethod(str, Enum):
    EXACT = "exact_binomial"
    CHI2 = "chi_square_cc"


@dataclass
class RunReport:
    run_id: str
    model: str
    variant: GraphVariant
    results: list[GroundingResult]
    timestamp: Optional[str] = None
    config: dict = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return accuracy(self.results)

    @property
    def total(self) -> int:
        return len(self.results)

    @property
    def correct_count(self) -> int:
        return sum(r.correct for r in self.results)


@dataclass(frozen=True)
class PairedOutcomeTable:
    """Counts: a both correct, b only A correct, c only B correct, d neither."""

    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        if min(self.a, self.b, self.c, self.d) < 0:
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return self.a + self.b + self.c + self.d

    @classmethod
    def from_flags(cls, first: Sequence[bool], second: Sequence[bool]) -> "PairedOutcomeTable":
        if len(first) != len(second):
            raise MismatchedRuns(f"runs have {len(first)} and {len(second)} outcomes")
        a = b = c = d = 0
        for x, y in zip(first, second):
            if x and y:
                a += 1
            elif x:
                b += 1
            elif y:
                c += 1
            else:
                d += 1
        return cls(a, b, c, d)


@dataclass(frozen=True)
class McNemarResult:
    method: McNemarMethod
    statistic: Optional[float]
    p_value: float
    significance: str


def significance_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return "ns"


def accuracy(results: Sequence[GroundingResult]) -> float:
    """Correct over total; invalid-format answers count as wrong."""
    if not results:
        raise EmptyRun("accuracy of an empty run is undefined")
    return sum(1 for r in results if r.correct and r.valid_format) / len(results)


def _class_sizes(graph: SceneGraph) -> dict[int, list[int]]:
    members = {}
    for g in class_groups(graph):
        ids = sorted(g.member_ids)
        for oid in ids:
            members[oid] = ids
    return members


def random_baseline(
    graph: SceneGraph,
    statements: Sequence[ReferentialStatement],
    mode: str = "expected",
    seed: int = 0,
):
    """Name-only chance performance.

    ``expected``: mean of ``1/|O_C|`` over statements, where ``O_C`` holds
    every object of the target's class. ``sampled``: one seeded uniform draw
    from ``O_C`` per statement, returned as results for paired testing.
    """
    members = _class_sizes(graph)
    for st in statements:
        if st.target_id not in members:
            raise UnknownTarget(f"target {st.target_id} not in scene {graph.scene_id!r}")
    if mode == "expected":
        if not statements:
            raise EmptyRun("no statements")
        return float(np.mean([1.0 / len(members[st.target_id]) for st in statements]))
    if mode == "sampled":
        rng = np.random.default_rng(seed)
        out = []
        for st in statements:
            pool = members[st.target_id]
            pick = int(pool[rng.integers(len(pool))])
            out.append(GroundingResult(st, pick, str(pick), True, pick == st.target_id))
        return out
    raise ValueError(f"unknown baseline mode {mode!r}")


def exact_binomial_p(b: int, c: int) -> float:
    """Two-sided sign-test p-value on the discordant pairs."""
    n = b + c
    if n == 0:
        return 1.0
    tail = sum(math.comb(n, k) for k in range(min(b, c) + 1))
    return float(min(Fraction(1), Fraction(2 * tail, 2**n)))


def chi2_cc(b: int, c: int) -> tuple[float, float]:
    """Continuity-corrected statistic and its chi-square(1) upper tail."""
    stat = max(abs(b - c) - 1, 0) ** 2 / (b + c)
    return stat, math.erfc(math.sqrt(stat / 2.0))


def mcnemar(table: PairedOutcomeTable, method: str = "auto") -> McNemarResult:
    """Exact binomial test when ``b + c < 25``, else chi-square with
    continuity correction. ``method`` may force ``exact`` or ``chi2``."""
    b, c = table.b, table.c
    n = b + c
    if n == 0:
        return McNemarResult(McNemarMethod.EXACT, None, 1.0, "ns")
    use_exact = method == "exact" or (method == "auto" and n < EXACT_BELOW)
    if method not in ("auto", "exact", "chi2"):
        raise ValueError(f"unknown method {method!r}")
    if use_exact:
        p = exact_binomial_p(b, c)
        return McNemarResult(McNemarMethod.EXACT, None, p, significance_stars(p))
    stat, p = chi2_cc(b, c)
    return McNemarResult(McNemarMethod.CHI2, stat, p, significance_stars(p))


def compare_runs(run_a: RunReport, run_b: RunReport, method: str = "auto") -> tuple[PairedOutcomeTable, McNemarResult]:
    keys_a = [r.statement.key() for r in run_a.results]
    keys_b = [r.statement.key() for r in run_b.results]
    if keys_a != keys_b:
        raise MismatchedRuns(f"runs {run_a.run_id!r} and {run_b.run_id!r} cover different statements or orders")
    table = PairedOutcomeTable.from_flags([r.correct for r in run_a.results], [r.correct for r in run_b.results])
    return table, mcnemar(table, method)


def format_comparison(name_a: str, name_b: str, table: PairedOutcomeTable, result: McNemarResult) -> str:
    stat = "-" if result.statistic is None else f"{result.statistic:.3f}"
    n = table.total or 1
    return "\n".join([
        f"{'comparison':<32} {'acc A':>7} {'acc B':>7} {'b':>4} {'c':>4} {'stat':>8} {'p':>10}  sig",
        f"{name_a + ' vs ' + name_b:<32} {(table.a + table.b) / n:>7.4f} {(table.a + table.c) / n:>7.4f} "
        f"{table.b:>4} {table.c:>4} {stat:>8} {result.p_value:>10.3g}  {result.significance}",
        f"method: {result.method.value}",
    ])
