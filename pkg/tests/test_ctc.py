import itertools
import math

import numpy as np
import pytest

from simteach.ctc import (
    collapse_path,
    ctc_loss_bruteforce,
    ctc_loss_grad,
    extend_labels,
    greedy_decode,
    required_frames,
)
from simteach.errors import InfeasibleTargetError, NumericError, OracleScopeError
from simteach.model import softmax


def random_instance(rng, t_max=6, v_max=4, l_max=3):
    v = int(rng.integers(2, v_max + 1))
    labels = tuple(int(x) for x in rng.integers(1, v, size=rng.integers(1, l_max + 1)))
    t_len = int(rng.integers(required_frames(labels), t_max + 1)) if required_frames(labels) <= t_max else None
    if t_len is None:
        return None
    logits = rng.uniform(-2.0, 2.0, (t_len, v))
    return logits, labels


def test_extend_labels_structure():
    z = extend_labels((2, 3, 3))
    assert list(z) == [0, 2, 0, 3, 0, 3, 0]


def test_single_frame_uniform_loss_is_log_v():
    res = ctc_loss_grad(np.zeros((1, 3)), [1])
    assert res.loss == pytest.approx(math.log(3.0), abs=1e-12)


def test_two_frames_single_label_path_enumeration():
    rng = np.random.default_rng(0)
    logits = rng.uniform(-1, 1, (2, 3))
    post = softmax(logits)
    a = 1
    p = post[0, a] * post[1, a] + post[0, a] * post[1, 0] + post[0, 0] * post[1, a]
    res = ctc_loss_grad(logits, [a])
    assert res.loss == pytest.approx(-math.log(p), abs=1e-12)


def test_bruteforce_single_path():
    post = np.array([[0.2, 0.8]])
    assert ctc_loss_bruteforce(post, [1]) == pytest.approx(-math.log(0.8), abs=1e-12)


def test_bruteforce_repeat_infeasible_at_two_frames():
    post = np.full((2, 2), 0.5)
    assert ctc_loss_bruteforce(post, [1, 1]) == float("inf")


def test_bruteforce_matches_hand_enumerated_collapse_preimages():
    rng = np.random.default_rng(1)
    post = softmax(rng.uniform(-1, 1, (3, 3)))
    a, b, blank = 1, 2, 0
    feasible = [(a, b, blank), (a, blank, b), (blank, a, b), (a, a, b), (a, b, b)]
    total = sum(post[0, x] * post[1, y] * post[2, z] for x, y, z in feasible)
    assert ctc_loss_bruteforce(post, [a, b]) == pytest.approx(-math.log(total), abs=1e-12)


def test_forward_backward_equals_bruteforce_on_random_instances():
    rng = np.random.default_rng(123)
    done = 0
    while done < 200:
        inst = random_instance(rng)
        if inst is None:
            continue
        logits, labels = inst
        loss = ctc_loss_grad(logits, labels).loss
        oracle = ctc_loss_bruteforce(softmax(logits), labels)
        assert abs(loss - oracle) <= 1e-9
        done += 1


def test_gradient_matches_finite_differences():
    """Central differences at eps=1e-6; the 1e-9 absolute floor covers
    float64 cancellation in the difference quotient (loss is O(1))."""
    rng = np.random.default_rng(321)
    done = 0
    while done < 50:
        inst = random_instance(rng)
        if inst is None:
            continue
        logits, labels = inst
        res = ctc_loss_grad(logits, labels)
        eps = 1e-6
        for t in range(logits.shape[0]):
            for k in range(logits.shape[1]):
                lp, lm = logits.copy(), logits.copy()
                lp[t, k] += eps
                lm[t, k] -= eps
                fd = (ctc_loss_grad(lp, labels).loss - ctc_loss_grad(lm, labels).loss) / (2 * eps)
                a = res.grad_logits[t, k]
                assert abs(fd - a) <= 1e-6 * max(abs(fd), abs(a)) + 1e-9
        done += 1


def test_gradient_rows_sum_to_zero():
    rng = np.random.default_rng(11)
    for _ in range(100):
        inst = random_instance(rng)
        if inst is None:
            continue
        logits, labels = inst
        g = ctc_loss_grad(logits, labels).grad_logits
        assert np.max(np.abs(g.sum(axis=1))) <= 1e-9


def test_loss_invariant_under_row_shifts():
    rng = np.random.default_rng(17)
    logits = rng.uniform(-2, 2, (6, 4))
    labels = (1, 2)
    base = ctc_loss_grad(logits, labels).loss
    shifted = ctc_loss_grad(logits + rng.uniform(-5, 5, (6, 1)), labels).loss
    assert abs(base - shifted) <= 1e-9


def test_infeasible_target_raises():
    with pytest.raises(InfeasibleTargetError):
        ctc_loss_grad(np.zeros((2, 3)), [1, 1])  # repeat needs 3 frames
    with pytest.raises(InfeasibleTargetError):
        ctc_loss_grad(np.zeros((1, 3)), [1, 2])


def test_label_validation():
    with pytest.raises(ValueError):
        ctc_loss_grad(np.zeros((3, 3)), [])
    with pytest.raises(ValueError):
        ctc_loss_grad(np.zeros((3, 3)), [0])
    with pytest.raises(ValueError):
        ctc_loss_grad(np.zeros((3, 3)), [3])  # vocab is V-1 = 2


def test_non_finite_logits_raise():
    logits = np.zeros((3, 3))
    logits[1, 1] = np.inf
    with pytest.raises(NumericError):
        ctc_loss_grad(logits, [1])


def test_oracle_scope_guard():
    with pytest.raises(OracleScopeError):
        ctc_loss_bruteforce(np.full((9, 2), 0.5), [1])
    with pytest.raises(OracleScopeError):
        ctc_loss_bruteforce(np.full((2, 7), 1.0 / 7), [1])


def _one_hot_rows(ids, v):
    rows = np.full((len(ids), v), 0.01)
    for t, k in enumerate(ids):
        rows[t, k] = 1.0 - 0.01 * (v - 1)
    return rows


def test_greedy_decode_collapse_rule():
    # argmax sequence [a, a, blank, a, b, b] -> [a, a, b]
    rows = _one_hot_rows([1, 1, 0, 1, 2, 2], 3)
    assert greedy_decode(rows) == (1, 1, 2)


def test_greedy_decode_all_blank_is_empty():
    rows = _one_hot_rows([0, 0, 0, 0], 3)
    assert greedy_decode(rows) == ()


def test_greedy_decode_tie_breaks_to_lowest_id():
    rows = np.full((2, 4), 0.25)
    assert greedy_decode(rows) == ()  # blank (id 0) wins every tie


def test_greedy_decode_matches_independent_oracle():
    rng = np.random.default_rng(77)
    for _ in range(200):
        rows = softmax(rng.uniform(-3, 3, (int(rng.integers(1, 7)), int(rng.integers(2, 5)))))
        path = np.argmax(rows, axis=1)
        oracle = tuple(k for k, _ in itertools.groupby(path.tolist()) if k != 0)
        decoded = greedy_decode(rows)
        assert decoded == oracle
        assert 0 not in decoded


def test_collapse_path_examples():
    assert collapse_path([0, 1, 1, 0, 1, 2]) == (1, 1, 2)
    assert collapse_path([]) == ()
    assert collapse_path([0, 0]) == ()
