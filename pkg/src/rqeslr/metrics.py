"""Word error rate over token sequences."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Sequence, Tuple

from .errors import DataError


@dataclass
class WerReport:
    S: int
    D: int
    I: int  # noqa: E741
    N: int
    per_class_errors: Dict[str, int] = field(default_factory=dict)

    @property
    def errors(self) -> int:
        return self.S + self.D + self.I

    @property
    def wer(self) -> float:
        return self.errors / self.N

    def to_dict(self):
        return {
            "S": self.S,
            "D": self.D,
            "I": self.I,
            "N": self.N,
            "wer": self.wer,
            "per_class_errors": dict(sorted(self.per_class_errors.items())),
        }


def align(ref: Sequence[Hashable], hyp: Sequence[Hashable]) -> List[Tuple[str, object, object]]:
    """Minimum-edit alignment with unit costs.

    Returns a list of operations ``(op, ref_token, hyp_token)`` where op is one
    of ``"=", "S", "D", "I"``. Among equal-cost alignments the backtrace
    prefers match/substitution, then deletion, then insertion.
    """
    n, m = len(ref), len(hyp)
    cost = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        cost[i][0] = i
    for j in range(1, m + 1):
        cost[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = cost[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1])
            cost[i][j] = min(sub, cost[i - 1][j] + 1, cost[i][j - 1] + 1)

    ops = []
    i, j = n, m
    while i or j:
        if i and j and cost[i][j] == cost[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            ops.append(("=" if ref[i - 1] == hyp[j - 1] else "S", ref[i - 1], hyp[j - 1]))
            i, j = i - 1, j - 1
        elif i and cost[i][j] == cost[i - 1][j] + 1:
            ops.append(("D", ref[i - 1], None))
            i -= 1
        else:
            ops.append(("I", None, hyp[j - 1]))
            j -= 1
    ops.reverse()
    return ops


def wer(references: Sequence[Sequence[Hashable]], hypotheses: Sequence[Sequence[Hashable]]) -> WerReport:
    """Corpus-level WER = (S + D + I) / N.

    Substitutions and deletions are charged to the reference token, insertions
    to the inserted hypothesis token, so ``per_class_errors`` always sums to
    ``S + D + I``. For single-token sequences this is the misclassification
    rate.
    """
    if len(references) != len(hypotheses):
        raise DataError(f"{len(references)} references but {len(hypotheses)} hypotheses")
    counts = Counter()
    per_class = Counter()
    N = 0
    for k, (ref, hyp) in enumerate(zip(references, hypotheses)):
        if len(ref) == 0:
            raise DataError(f"reference {k} is empty")
        N += len(ref)
        for op, r, h in align(ref, hyp):
            if op == "=":
                continue
            counts[op] += 1
            per_class[str(h if op == "I" else r)] += 1
    return WerReport(counts["S"], counts["D"], counts["I"], N, dict(per_class))
