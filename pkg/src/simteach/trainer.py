"""Training orchestration: teacher pretraining, student distillation, evaluation.

Five regimes share one loop:

  sts    - single frozen teacher
  kaizen - single teacher, EMA-updated from the student every `delta` steps
  ets    - frozen teacher ensemble with per-utterance selection
  mets   - ets repeated in stages; each finished student joins the pool as
           an extra frozen teacher and a fresh student starts
  stu    - teacher ensemble where every teacher is EMA-updated from the
           student every `delta` steps

The student-step counter increments only on batches that actually perform
an update; fully filtered batches do not advance the EMA schedule. Target
train labels are stripped on entry to distill(), so no code path below can
read them.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .ctc import ctc_loss_grad, greedy_decode
from .datasets import Dataset, strip_labels
from .ensemble import TeacherPool, ema_update, pseudo_label_batch
from .errors import ConfigError, DivergenceError, UsageError
from .metrics import TerReport, corpus_ter, edit_distance
from .model import Architecture, OptimizerState, ParamVector, backward_many, forward_many, init_params, optimizer_step
from .rng import derive_seed, make_rng

logger = logging.getLogger(__name__)

MODES = ("sts", "kaizen", "ets", "mets", "stu")
EMA_MODES = ("kaizen", "stu")
SINGLE_TEACHER_MODES = ("sts", "kaizen")

_EVAL_CHUNK = 128
_DIVERGENCE_TER_FACTOR = 5.0


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "stu"
    alpha: float = 1e-3
    delta: int = 40
    tau: float = 0.90
    lr: float = 1e-3
    batch_size: int = 16
    pretrain_epochs: int = 5
    distill_epochs: int = 10
    mets_stages: int = 2
    seed: int = 42

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got '{self.mode}'")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.mode in ("sts", "ets", "mets") and self.alpha != 0.0:
            raise ConfigError(f"alpha is unused in mode '{self.mode}'; set it to 0 or omit it")
        if self.delta < 1:
            raise ConfigError(f"delta must be >= 1, got {self.delta}")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must be in [0, 1], got {self.tau}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.pretrain_epochs < 0 or self.distill_epochs < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.mode == "mets" and self.mets_stages < 2:
            raise ConfigError(f"mets needs mets_stages >= 2, got {self.mets_stages}")
        if self.mets_stages < 1:
            raise ConfigError(f"mets_stages must be >= 1, got {self.mets_stages}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 bits")


@dataclass
class EpochStats:
    stage: int
    epoch: int  # global, counted across stages
    step: int  # cumulative update steps at epoch end
    dev_ter: float
    retention: float
    mean_confidence: float
    updates: int  # update steps performed within this epoch


@dataclass
class FilterRow:
    stage: int
    epoch: int
    batch: int
    utterance_id: str
    confidences: tuple[float, ...]
    selected: int
    q_hat: float
    kept: bool
    drop_reason: str | None


@dataclass
class EvalReport:
    overall: TerReport
    per_domain: dict[int, TerReport]
    per_utterance: list[float]

    @property
    def ter(self) -> float:
        return self.overall.ter


@dataclass
class RunReport:
    epochs: list[EpochStats] = field(default_factory=list)
    final_step: int = 0
    ema_steps: list[int] = field(default_factory=list)
    stage_teacher_counts: list[int] = field(default_factory=list)
    diverged: bool = False
    divergence_step: int | None = None
    divergence_reason: str | None = None
    wall_time_sec: float = 0.0
    final_pool: TeacherPool | None = None  # not serialized


def report_to_json(report: RunReport) -> dict:
    """Deterministic JSON form of a RunReport (volatile wall time excluded)."""
    return {
        "epochs": [
            {
                "stage": e.stage,
                "epoch": e.epoch,
                "step": e.step,
                "dev_ter": e.dev_ter,
                "retention": e.retention,
                "mean_confidence": e.mean_confidence,
                "updates": e.updates,
            }
            for e in report.epochs
        ],
        "final_step": report.final_step,
        "ema_steps": list(report.ema_steps),
        "stage_teacher_counts": list(report.stage_teacher_counts),
        "diverged": report.diverged,
        "divergence_step": report.divergence_step,
        "divergence_reason": report.divergence_reason,
    }


def evaluate(p: ParamVector, test: Dataset) -> EvalReport:
    """Greedy-decode every utterance and report pooled TER, plus per-domain
    and per-utterance breakdowns."""
    if not test.utterances:
        raise UsageError("cannot evaluate on an empty dataset")
    for u in test.utterances:
        if not u.labels:
            raise UsageError(f"utterance {u.id} has no reference labels")
    hyps = []
    for lo in range(0, len(test.utterances), _EVAL_CHUNK):
        chunk = test.utterances[lo : lo + _EVAL_CHUNK]
        for grid in forward_many(p, [u.frames for u in chunk]):
            hyps.append(greedy_decode(grid.rows))
    refs = [u.labels for u in test.utterances]
    overall = corpus_ter(refs, hyps)
    by_domain: dict[int, tuple[list, list]] = {}
    per_utt = []
    for u, hyp in zip(test.utterances, hyps):
        by_domain.setdefault(u.domain_id, ([], []))
        by_domain[u.domain_id][0].append(u.labels)
        by_domain[u.domain_id][1].append(hyp)
        per_utt.append(edit_distance(u.labels, hyp).distance / max(1, len(u.labels)))
    per_domain = {dom: corpus_ter(r, h) for dom, (r, h) in sorted(by_domain.items())}
    return EvalReport(overall, per_domain, per_utt)


def _batches(order: np.ndarray, batch_size: int):
    for lo in range(0, order.size, batch_size):
        yield order[lo : lo + batch_size]


@dataclass
class PretrainResult:
    params: ParamVector
    best_epoch: int
    best_dev_ter: float
    steps: int  # update steps at the best checkpoint


def pretrain_teacher(labelled: Dataset, dev: Dataset, arch: Architecture, cfg: TrainConfig) -> PretrainResult:
    """CTC-train a model from scratch on labelled data; return the epoch
    checkpoint with the best dev TER (earliest epoch on ties)."""
    cfg.validate()
    if not labelled.utterances:
        raise UsageError("pretraining needs a nonempty labelled dataset")
    for u in labelled.utterances:
        if not u.labels:
            raise UsageError(f"utterance {u.id} has no labels; pretraining data must be labelled")
    domain_id = labelled.utterances[0].domain_id
    params = init_params(arch, derive_seed(cfg.seed, "teacher-init", domain_id))
    if cfg.pretrain_epochs == 0:
        return PretrainResult(params, best_epoch=0, best_dev_ter=float("nan"), steps=0)

    opt = OptimizerState.fresh(params.values.size, lr=cfg.lr)
    shuffle_rng = make_rng(cfg.seed, "pretrain-shuffle", domain_id)
    best: PretrainResult | None = None
    step = 0
    for epoch in range(1, cfg.pretrain_epochs + 1):
        order = shuffle_rng.permutation(len(labelled.utterances))
        for batch_ids in _batches(order, cfg.batch_size):
            utts = [labelled.utterances[i] for i in batch_ids]
            frames = [u.frames for u in utts]
            grids = forward_many(params, frames)
            losses, grads = [], []
            for utt, grid in zip(utts, grids):
                res = ctc_loss_grad(grid.logits, utt.labels)
                losses.append(res.loss)
                grads.append(res.grad_logits / len(utts))
            mean_loss = float(np.mean(losses))
            if not np.isfinite(mean_loss):
                raise DivergenceError(
                    f"non-finite pretraining loss on domain {domain_id}", epoch=epoch, step=step
                )
            flat = backward_many(params, frames, grads)
            params, opt = optimizer_step(params, flat, opt)
            step += 1
        dev_ter = evaluate(params, dev).ter
        logger.info("pretrain domain=%s epoch=%d step=%d dev_ter=%.4f", domain_id, epoch, step, dev_ter)
        if best is None or dev_ter < best.best_dev_ter:
            best = PretrainResult(params.copy(), epoch, dev_ter, step)
    return best


def distill(
    pool: TeacherPool,
    unlabelled: Dataset,
    target_dev: Dataset,
    cfg: TrainConfig,
    filter_sink=None,
) -> tuple[ParamVector, RunReport]:
    """Distill a student from the teacher pool on unlabelled target data.

    Runs the shared epoch/batch loop for the configured mode. Raises
    DivergenceError (with the partial report and current student attached)
    on non-finite loss, on dev TER exploding past 5x the fresh student's,
    or, in EMA modes, when an epoch performs zero updates after an epoch
    that did perform updates (the teachers have collapsed below the
    filtering threshold and training can no longer proceed).
    """
    cfg.validate()
    if cfg.mode in SINGLE_TEACHER_MODES and len(pool) != 1:
        raise ConfigError(f"mode '{cfg.mode}' needs exactly one teacher, got {len(pool)}")
    if not unlabelled.utterances:
        raise UsageError("distillation needs a nonempty unlabelled dataset")
    train = strip_labels(unlabelled)
    arch = pool.arch
    stages = cfg.mets_stages if cfg.mode == "mets" else 1

    report = RunReport()
    t0 = time.perf_counter()
    current_pool = pool.copy()
    step = 0
    global_epoch = 0
    student: ParamVector | None = None

    def fail(reason: str, epoch: int):
        report.diverged = True
        report.divergence_step = step
        report.divergence_reason = reason
        report.final_step = step
        report.wall_time_sec = time.perf_counter() - t0
        report.final_pool = current_pool
        raise DivergenceError(reason, epoch=epoch, step=step, report=report, params=student)

    for stage in range(1, stages + 1):
        report.stage_teacher_counts.append(len(current_pool))
        student = init_params(arch, derive_seed(cfg.seed, "student-init", stage))
        opt = OptimizerState.fresh(student.values.size, lr=cfg.lr)
        shuffle_rng = make_rng(cfg.seed, "distill-shuffle", stage)
        baseline_ter = evaluate(student, target_dev).ter
        stage_epoch_updates: list[int] = []

        for _ in range(cfg.distill_epochs):
            global_epoch += 1
            order = shuffle_rng.permutation(len(train.utterances))
            epoch_updates = 0
            kept_count = 0
            total_count = 0
            q_sum = 0.0
            for batch_no, batch_ids in enumerate(_batches(order, cfg.batch_size), start=1):
                utts = [train.utterances[i] for i in batch_ids]
                results = pseudo_label_batch(current_pool, utts, cfg.tau)
                for r in results:
                    q_sum += r.q_hat
                    total_count += 1
                    if r.kept:
                        kept_count += 1
                    if filter_sink is not None:
                        filter_sink(
                            FilterRow(
                                stage,
                                global_epoch,
                                batch_no,
                                r.utterance_id,
                                r.confidences,
                                r.selected,
                                r.q_hat,
                                r.kept,
                                r.drop_reason,
                            )
                        )
                kept = [(u, r) for u, r in zip(utts, results) if r.kept]
                if not kept:
                    continue
                frames = [u.frames for u, _ in kept]
                grids = forward_many(student, frames)
                losses, grads = [], []
                for (_, r), grid in zip(kept, grids):
                    res = ctc_loss_grad(grid.logits, r.pseudo_labels)
                    losses.append(res.loss)
                    grads.append(res.grad_logits / len(kept))
                mean_loss = float(np.mean(losses))
                if not np.isfinite(mean_loss):
                    fail("non-finite distillation loss", global_epoch)
                flat = backward_many(student, frames, grads)
                try:
                    student, opt = optimizer_step(student, flat, opt)
                except DivergenceError:
                    fail("non-finite gradient", global_epoch)
                step += 1
                epoch_updates += 1
                if cfg.mode in EMA_MODES and step % cfg.delta == 0:
                    current_pool = ema_update(current_pool, student, cfg.alpha)
                    report.ema_steps.append(step)

            dev_ter = evaluate(student, target_dev).ter
            retention = kept_count / total_count if total_count else 0.0
            mean_q = q_sum / total_count if total_count else 0.0
            report.epochs.append(
                EpochStats(stage, global_epoch, step, dev_ter, retention, mean_q, epoch_updates)
            )
            logger.info(
                "distill mode=%s stage=%d epoch=%d step=%d dev_ter=%.4f retention=%.3f",
                cfg.mode,
                stage,
                global_epoch,
                step,
                dev_ter,
                retention,
            )
            if epoch_updates == 0:
                logger.warning(
                    "epoch %d: every utterance was filtered out; student unchanged", global_epoch
                )
            if dev_ter > _DIVERGENCE_TER_FACTOR * baseline_ter:
                fail("dev_ter_exploded", global_epoch)
            if cfg.mode in EMA_MODES and epoch_updates == 0 and any(u > 0 for u in stage_epoch_updates):
                fail("teacher_collapse", global_epoch)
            stage_epoch_updates.append(epoch_updates)

        if cfg.mode == "mets" and stage < stages:
            current_pool = TeacherPool(current_pool.teachers + [student.copy()], arch)

    report.final_step = step
    report.wall_time_sec = time.perf_counter() - t0
    report.final_pool = current_pool
    return student, report
