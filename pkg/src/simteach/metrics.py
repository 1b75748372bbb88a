"""Token error rate: unit-cost Levenshtein distance with an S/I/D breakdown.

The backtrace tie-break is fixed (substitution, then deletion, then
insertion) so the S/I/D split is reproducible across platforms. Deletions
are reference tokens absent from the hypothesis; insertions are hypothesis
tokens absent from the reference.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from .errors import UsageError


class EditCounts(NamedTuple):
    distance: int
    substitutions: int
    insertions: int
    deletions: int


@dataclass(frozen=True)
class TerReport:
    substitutions: int
    insertions: int
    deletions: int
    ref_tokens: int

    @property
    def distance(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def ter(self) -> float:
        return self.distance / self.ref_tokens


def edit_distance(ref: Sequence, hyp: Sequence) -> EditCounts:
    """Levenshtein distance between token sequences, with S/I/D counts."""
    m, n = len(ref), len(hyp)
    # d[i][j] = distance between ref[:i] and hyp[:j]
    d = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(1, m + 1):
        d[i][0] = i
    for j in range(1, n + 1):
        d[0][j] = j
    for i in range(1, m + 1):
        ri = ref[i - 1]
        row = d[i]
        prev = d[i - 1]
        for j in range(1, n + 1):
            sub = prev[j - 1] + (ri != hyp[j - 1])
            dele = prev[j] + 1
            ins = row[j - 1] + 1
            row[j] = min(sub, dele, ins)

    subs = ins = dels = 0
    i, j = m, n
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            if ref[i - 1] != hyp[j - 1]:
                subs += 1
            i -= 1
            j -= 1
        elif i > 0 and d[i][j] == d[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditCounts(d[m][n], subs, ins, dels)


def corpus_ter(refs: Sequence[Sequence], hyps: Sequence[Sequence]) -> TerReport:
    """Pooled error counts over aligned reference/hypothesis lists."""
    if len(refs) != len(hyps):
        raise UsageError(f"refs and hyps differ in length: {len(refs)} vs {len(hyps)}")
    subs = ins = dels = ref_tokens = 0
    for ref, hyp in zip(refs, hyps):
        counts = edit_distance(ref, hyp)
        subs += counts.substitutions
        ins += counts.insertions
        dels += counts.deletions
        ref_tokens += len(ref)
    if ref_tokens == 0:
        raise UsageError("corpus TER undefined: zero reference tokens")
    return TerReport(subs, ins, dels, ref_tokens)


def write_ter_csv(path, rows: Sequence[tuple[str, str, TerReport]]) -> None:
    """Write (mode, split, report) rows with fixed 6-decimal formatting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "split", "ter", "S", "I", "D", "ref_tokens"])
        for mode, split, rep in rows:
            writer.writerow(
                [
                    mode,
                    split,
                    f"{rep.ter:.6f}",
                    rep.substitutions,
                    rep.insertions,
                    rep.deletions,
                    rep.ref_tokens,
                ]
            )
