"""CTC loss with log-space forward-backward and its exact logit gradient.

Blank id is 0 everywhere. The label sequence y_1..y_L is extended to
z = (blank, y_1, blank, ..., y_L, blank); valid transitions from extended
position s are stay, advance one, or advance two when that skips a blank
between distinct labels. The loss is -log of the total probability of all
alignments whose blank-collapse equals the labels, under the row-softmax
of the logits.

A brute-force oracle enumerating every frame-label path is included for
testing, plus greedy decoding (per-frame argmax, collapse repeats, drop
blanks).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InfeasibleTargetError, NumericError, OracleScopeError
from .model import log_softmax, softmax

BLANK = 0

_NEG_INF = -np.inf


def extend_labels(labels: Sequence[int]) -> np.ndarray:
    """Blank-interleaved extended sequence (blank, y1, blank, ..., yL, blank)."""
    z = np.zeros(2 * len(labels) + 1, dtype=np.int64)
    z[1::2] = labels
    return z


def _check_labels(labels, vocab_size: int) -> tuple[int, ...]:
    labels = tuple(int(x) for x in labels)
    if not labels:
        raise ValueError("labels must be nonempty")
    for lab in labels:
        if not 1 <= lab <= vocab_size:
            raise ValueError(f"label id {lab} outside [1, {vocab_size}]")
    return labels


def required_frames(labels) -> int:
    """Minimum frame count that admits an alignment of `labels`."""
    reps = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + reps


@dataclass(eq=False)
class CtcResult:
    loss: float
    grad_logits: np.ndarray


def ctc_loss_grad(logits: np.ndarray, labels: Sequence[int]) -> CtcResult:
    """Loss and exact d(loss)/d(logits) via the forward-backward recursions."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ValueError(f"logits must be 2-D, got shape {logits.shape}")
    t_len, v = logits.shape
    if not np.isfinite(logits).all():
        raise NumericError("logits contain non-finite values")
    labels = _check_labels(labels, v - 1)
    need = required_frames(labels)
    if t_len < need:
        raise InfeasibleTargetError(f"{t_len} frames cannot align {len(labels)} labels (need >= {need})")

    z = extend_labels(labels)
    s_len = z.size
    logp = log_softmax(logits)
    em = logp[:, z]  # (T, S) emission log-probs along the extended sequence

    # skip transition into s allowed: z[s] is a label differing from z[s-2]
    allow = np.zeros(s_len, dtype=bool)
    allow[2:] = (z[2:] != BLANK) & (z[2:] != z[:-2])

    with np.errstate(divide="ignore"):
        alpha = np.full((t_len, s_len), _NEG_INF)
        alpha[0, 0] = em[0, 0]
        alpha[0, 1] = em[0, 1]
        for t in range(1, t_len):
            prev = alpha[t - 1]
            shift1 = np.empty(s_len)
            shift1[0] = _NEG_INF
            shift1[1:] = prev[:-1]
            cand = np.logaddexp(prev, shift1)
            shift2 = np.full(s_len, _NEG_INF)
            shift2[2:] = prev[:-2]
            cand = np.where(allow, np.logaddexp(cand, shift2), cand)
            alpha[t] = cand + em[t]

        log_p = np.logaddexp(alpha[-1, -1], alpha[-1, -2])

        # beta[t, s]: log-prob of completing the alignment over frames t+1..T,
        # excluding the emission at frame t itself, so p = LSE_s(alpha[t]+beta[t]).
        beta = np.full((t_len, s_len), _NEG_INF)
        beta[-1, -1] = 0.0
        beta[-1, -2] = 0.0
        allow_fwd = np.zeros(s_len, dtype=bool)
        allow_fwd[:-2] = allow[2:]
        for t in range(t_len - 2, -1, -1):
            nxt = beta[t + 1] + em[t + 1]
            shift1 = np.empty(s_len)
            shift1[-1] = _NEG_INF
            shift1[:-1] = nxt[1:]
            cand = np.logaddexp(nxt, shift1)
            shift2 = np.full(s_len, _NEG_INF)
            shift2[:-2] = nxt[2:]
            cand = np.where(allow_fwd, np.logaddexp(cand, shift2), cand)
            beta[t] = cand

        ab = alpha + beta
        grad = softmax(logits)
        for token in np.unique(z):
            cols = ab[:, z == token]
            m = cols.max(axis=1)
            safe = np.where(np.isfinite(m), m, 0.0)
            occ = safe + np.log(np.exp(cols - safe[:, None]).sum(axis=1))
            grad[:, token] -= np.exp(occ - log_p)

    if not np.isfinite(log_p):
        # unreachable for feasible targets; guard anyway
        raise NumericError("alignment probability underflowed to zero")
    return CtcResult(float(-log_p), grad)


def collapse_path(path: Sequence[int]) -> tuple[int, ...]:
    """Merge adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for tok in path:
        if tok != prev and tok != BLANK:
            out.append(int(tok))
        prev = tok
    return tuple(out)


def ctc_loss_bruteforce(posteriors: np.ndarray, labels: Sequence[int]) -> float:
    """Enumerate all V^T frame-label paths; -log of the summed probability
    of those whose collapse equals `labels`. Test oracle only; returns
    inf when no path collapses to the labels."""
    posteriors = np.asarray(posteriors, dtype=np.float64)
    t_len, v = posteriors.shape
    if t_len > 8 or v > 6:
        raise OracleScopeError(f"brute-force oracle limited to T'<=8, V<=6; got {posteriors.shape}")
    labels = _check_labels(labels, v - 1)
    total = 0.0
    for path in itertools.product(range(v), repeat=t_len):
        if collapse_path(path) == labels:
            prob = 1.0
            for t, tok in enumerate(path):
                prob *= posteriors[t, tok]
            total += prob
    if total == 0.0:
        return float("inf")
    return float(-np.log(total))


def greedy_decode(posteriors: np.ndarray) -> tuple[int, ...]:
    """Per-frame argmax (ties to the lowest token id), collapsed and de-blanked."""
    posteriors = np.asarray(posteriors)
    return collapse_path(np.argmax(posteriors, axis=1))
