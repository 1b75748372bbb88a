"""Teacher pool: confidence scoring, elitist selection, filtering, EMA updates.

A teacher's confidence on an utterance is the time-average of the per-frame
maximum posterior. For each utterance the single most confident teacher is
selected (ties to the lowest teacher index) and the utterance is kept only
if that confidence clears the threshold tau; kept utterances get greedy
pseudo-labels from the selected teacher's posteriors.

Teacher indices are 1-based in results and reports, matching checkpoint
and report naming (teacher_1..teacher_N).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ctc import greedy_decode, required_frames
from .datasets import Utterance
from .errors import ShapeError, UsageError
from .model import Architecture, ParamVector, PosteriorGrid, forward_many

DROP_BELOW_THRESHOLD = "below_threshold"
DROP_EMPTY_DECODE = "empty_decode"
DROP_INFEASIBLE = "infeasible_target"


@dataclass(eq=False)
class TeacherPool:
    teachers: list[ParamVector]
    arch: Architecture

    def __post_init__(self):
        if not self.teachers:
            raise UsageError("teacher pool must contain at least one teacher")
        for i, t in enumerate(self.teachers, start=1):
            if t.arch != self.arch:
                raise ShapeError(f"teacher {i} architecture {t.arch} does not match pool {self.arch}")

    def __len__(self):
        return len(self.teachers)

    def copy(self) -> "TeacherPool":
        return TeacherPool([t.copy() for t in self.teachers], self.arch)


@dataclass(eq=False)
class SelectionResult:
    utterance_id: str
    confidences: tuple[float, ...]  # q_1..q_N
    selected: int  # b, 1-based
    q_hat: float
    kept: bool
    pseudo_labels: tuple[int, ...] | None
    drop_reason: str | None


def confidence(grid: PosteriorGrid) -> float:
    """Mean over frames of the per-frame maximum posterior."""
    return float(grid.rows.max(axis=1).mean())


def select_teacher(grids: Sequence[PosteriorGrid]) -> tuple[int, float]:
    """Most confident teacher as (1-based index, confidence); ties to the lowest index."""
    if not grids:
        raise UsageError("select_teacher needs at least one posterior grid")
    scores = [confidence(g) for g in grids]
    b = int(np.argmax(scores)) + 1
    return b, scores[b - 1]


def pseudo_label_batch(pool: TeacherPool, batch: Sequence[Utterance], tau: float) -> list[SelectionResult]:
    """Score a batch under every teacher, select, filter, and decode.

    Per utterance: forward under all teachers, confidence per Eq.-style
    frame-max averaging, elitist selection, threshold filter (kept iff
    q_hat >= tau), then greedy decoding of the selected grid. Utterances
    whose decode is empty, or whose pseudo-labels could not be aligned to
    their own frames, are marked not-kept with a drop reason. Output
    preserves batch order.
    """
    if not batch:
        raise UsageError("pseudo_label_batch needs a nonempty batch")
    if not 0.0 <= tau <= 1.0:
        raise UsageError(f"tau must be in [0, 1], got {tau}")
    frames = [u.frames for u in batch]
    per_teacher = [forward_many(t, frames) for t in pool.teachers]

    results = []
    for j, utt in enumerate(batch):
        grids = [per_teacher[i][j] for i in range(len(pool))]
        b, q_hat = select_teacher(grids)
        confidences = tuple(confidence(g) for g in grids)
        if q_hat < tau:
            results.append(SelectionResult(utt.id, confidences, b, q_hat, False, None, DROP_BELOW_THRESHOLD))
            continue
        pseudo = greedy_decode(grids[b - 1].rows)
        if not pseudo:
            results.append(SelectionResult(utt.id, confidences, b, q_hat, False, None, DROP_EMPTY_DECODE))
            continue
        if utt.frames.shape[0] < required_frames(pseudo):
            # cannot happen for labels decoded from the same frames; kept as a guard
            results.append(SelectionResult(utt.id, confidences, b, q_hat, False, None, DROP_INFEASIBLE))
            continue
        results.append(SelectionResult(utt.id, confidences, b, q_hat, True, pseudo, None))
    return results


def ema_update(pool: TeacherPool, student: ParamVector, alpha: float) -> TeacherPool:
    """Blend the student into every teacher simultaneously:
    teacher_i <- alpha * student + (1 - alpha) * teacher_i.

    alpha=0 and alpha=1 are exact (bitwise) no-op and copy respectively.
    """
    if not 0.0 <= alpha <= 1.0:
        raise UsageError(f"alpha must be in [0, 1], got {alpha}")
    if student.arch != pool.arch:
        raise ShapeError("student architecture does not match the teacher pool")
    if alpha == 0.0:
        return pool.copy()
    if alpha == 1.0:
        return TeacherPool([student.copy() for _ in pool.teachers], pool.arch)
    blended = [
        ParamVector(alpha * student.values + (1.0 - alpha) * t.values, pool.arch) for t in pool.teachers
    ]
    return TeacherPool(blended, pool.arch)
