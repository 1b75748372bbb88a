"""Synthetic multi-domain sequence datasets.

Each token has a global prototype feature vector; a domain is an affine
transform of those prototypes plus per-frame Gaussian noise. Source domains
are labelled, the single target domain is treated as unlabelled during
training. Utterances are token sequences where every token emits a few
consecutive frames, with occasional short pure-noise "silence" segments
between tokens so that blank is actually useful when decoding.

Determinism contract: datasets are generated from namespaced PCG64 streams
(see rng.py), so identical (config, seed) pairs produce bit-identical
datasets. Noise draws are always consumed and then scaled by noise_sigma,
so two generations that differ only in noise_sigma share the exact same
utterance structure, labels and silence placement.

Draw order, per utterance (fixed, relied on by tests):
  1. label count L ~ uniform[label_len_min, label_len_max]
  2. L label ids ~ uniform[1, vocab_size]
  3. L frame counts ~ uniform[frames_per_token_min, frames_per_token_max]
  4. for each of the L-1 gaps: one uniform for the silence coin, then one
     uniform length in {1, 2} only if the coin hit
  5. one standard-normal F-vector per assembled frame, in frame order

File format (JSON lines): first line is a header
``{"vocab_size": G, "feature_dim": F, "split": str}``, then one utterance
per line ``{"id": str, "domain": int, "labels": [int...],
"frames": [[float...]...]}``. Floats use Python's shortest round-trip
formatting, so read(write(d)) is bit-exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParseError, SchemaError
from .rng import make_rng

TARGET_DOMAIN_ID = 0
SPLITS = ("train", "dev", "test")

_SILENCE_MAX_FRAMES = 2
_DET_FLOOR = 1e-6


@dataclass(eq=False)
class DomainSpec:
    """Affine shift defining one domain: frame = transform @ prototype + bias + noise."""

    domain_id: int
    transform: np.ndarray
    bias: np.ndarray
    noise_sigma: float
    labelled: bool

    def __post_init__(self):
        self.transform = np.asarray(self.transform, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.transform.ndim != 2 or self.transform.shape[0] != self.transform.shape[1]:
            raise ConfigError(f"domain {self.domain_id}: transform must be square, got {self.transform.shape}")
        if self.bias.shape != (self.transform.shape[0],):
            raise ConfigError(f"domain {self.domain_id}: bias shape {self.bias.shape} does not match transform")
        if abs(np.linalg.det(self.transform)) <= _DET_FLOOR:
            raise ConfigError(f"domain {self.domain_id}: transform is not invertible")
        if self.noise_sigma < 0:
            raise ConfigError(f"domain {self.domain_id}: noise_sigma must be >= 0")


@dataclass(eq=False)
class Utterance:
    id: str
    domain_id: int
    frames: np.ndarray  # (T', F) float64
    labels: tuple[int, ...]  # token ids in [1, vocab_size]


@dataclass(eq=False)
class Dataset:
    vocab_size: int
    feature_dim: int
    split: str
    utterances: list[Utterance] = field(default_factory=list)

    def __len__(self):
        return len(self.utterances)


@dataclass(frozen=True)
class GenConfig:
    """Settings for the synthetic benchmark generator.

    The default values are the package's default benchmark: three labelled
    source domains and one unlabelled target domain, sized for minutes-scale
    CPU training.
    """

    vocab_size: int = 8
    feature_dim: int = 16
    num_sources: int = 3
    train_per_source: int = 2000
    dev_per_source: int = 200
    target_train: int = 4000
    target_dev: int = 250
    target_test: int = 500
    label_len_min: int = 2
    label_len_max: int = 10
    frames_per_token_min: int = 2
    frames_per_token_max: int = 4
    noise_sigma: float = 0.30
    source_shift: float = 0.35
    target_shift: float = 0.75
    silence_prob: float = 0.3

    def validate(self):
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2")
        if self.feature_dim < 2:
            raise ConfigError("feature_dim must be >= 2")
        if self.num_sources < 1:
            raise ConfigError("num_sources must be >= 1")
        for name in ("train_per_source", "dev_per_source", "target_train", "target_dev", "target_test"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 2 <= self.label_len_min <= self.label_len_max:
            raise ConfigError("label length bounds require 2 <= label_len_min <= label_len_max")
        if not 2 <= self.frames_per_token_min <= self.frames_per_token_max:
            raise ConfigError("frames-per-token bounds require 2 <= frames_per_token_min <= frames_per_token_max")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.source_shift < 0 or self.target_shift < 0:
            raise ConfigError("domain shift scales must be >= 0")
        if not 0.0 <= self.silence_prob <= 1.0:
            raise ConfigError("silence_prob must be in [0, 1]")


def adjacent_repeats(labels) -> int:
    return sum(1 for a, b in zip(labels, labels[1:]) if a == b)


def min_frames_for(labels) -> int:
    """Shortest frame count that still admits a CTC alignment of `labels`."""
    return len(labels) + adjacent_repeats(labels)


def token_prototypes(cfg: GenConfig, seed: int) -> np.ndarray:
    """(vocab_size, feature_dim) prototype matrix; row g-1 belongs to token g."""
    rng = make_rng(seed, "gen-prototypes")
    return rng.standard_normal((cfg.vocab_size, cfg.feature_dim))


def make_domains(cfg: GenConfig, seed: int) -> list[DomainSpec]:
    """Source domains 1..num_sources (labelled) followed by the target domain 0."""
    rng = make_rng(seed, "gen-domains")
    specs = []
    for domain_id in range(1, cfg.num_sources + 1):
        specs.append(_draw_domain(cfg, rng, domain_id, cfg.source_shift, labelled=True))
    specs.append(_draw_domain(cfg, rng, TARGET_DOMAIN_ID, cfg.target_shift, labelled=False))
    return specs


def _draw_domain(cfg, rng, domain_id, shift, labelled) -> DomainSpec:
    f = cfg.feature_dim
    for _ in range(100):
        transform = np.eye(f) + shift * rng.standard_normal((f, f)) / math.sqrt(f)
        if abs(np.linalg.det(transform)) > _DET_FLOOR:
            bias = shift * rng.standard_normal(f)
            return DomainSpec(domain_id, transform, bias, cfg.noise_sigma, labelled)
    raise ConfigError(f"domain {domain_id}: could not draw an invertible transform")


def _gen_utterance(cfg, rng, protos, spec, uid) -> Utterance:
    lab_count = int(rng.integers(cfg.label_len_min, cfg.label_len_max + 1))
    labels = tuple(int(x) for x in rng.integers(1, cfg.vocab_size + 1, size=lab_count))
    durations = rng.integers(cfg.frames_per_token_min, cfg.frames_per_token_max + 1, size=lab_count)
    silences = np.zeros(lab_count, dtype=np.int64)  # silence length after token j (never after last)
    for j in range(lab_count - 1):
        if rng.random() < cfg.silence_prob:
            silences[j] = int(rng.integers(1, _SILENCE_MAX_FRAMES + 1))

    rows = []
    for j, token in enumerate(labels):
        base = spec.transform @ protos[token - 1] + spec.bias
        for _ in range(int(durations[j])):
            rows.append(base + cfg.noise_sigma * rng.standard_normal(cfg.feature_dim))
        for _ in range(int(silences[j])):
            rows.append(cfg.noise_sigma * rng.standard_normal(cfg.feature_dim))
    frames = np.vstack(rows)
    return Utterance(id=uid, domain_id=spec.domain_id, frames=frames, labels=labels)


def gen_dataset(cfg: GenConfig, seed: int) -> dict[int, dict[str, Dataset]]:
    """Generate the full benchmark: {domain_id: {split: Dataset}}.

    Source domains get train/dev splits; the target domain (id 0) gets
    train/dev/test. Each (domain, split) is generated from its own stream,
    so changing one split's count leaves the others' content untouched.
    """
    cfg.validate()
    protos = token_prototypes(cfg, seed)
    out: dict[int, dict[str, Dataset]] = {}
    for spec in make_domains(cfg, seed):
        if spec.labelled:
            plan = [("train", cfg.train_per_source), ("dev", cfg.dev_per_source)]
        else:
            plan = [("train", cfg.target_train), ("dev", cfg.target_dev), ("test", cfg.target_test)]
        by_split = {}
        for split, count in plan:
            rng = make_rng(seed, "gen-data", spec.domain_id, SPLITS.index(split))
            utts = [
                _gen_utterance(cfg, rng, protos, spec, f"d{spec.domain_id}_{split}_{i:05d}")
                for i in range(count)
            ]
            by_split[split] = Dataset(cfg.vocab_size, cfg.feature_dim, split, utts)
        out[spec.domain_id] = by_split
    return out


def split_dataset(d: Dataset, fractions: tuple[float, float, float]) -> tuple[Dataset, Dataset, Dataset]:
    """Deterministic contiguous split; sizes floor(n*f) with the remainder going to train."""
    if len(fractions) != 3:
        raise ConfigError("fractions must be a (train, dev, test) triple")
    if any(f <= 0 for f in fractions):
        raise ConfigError("all split fractions must be > 0")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError("split fractions must sum to 1")
    n = len(d.utterances)
    sizes = [math.floor(n * f) for f in fractions]
    sizes[0] += n - sum(sizes)
    bounds = np.cumsum([0] + sizes)
    parts = []
    for split, lo, hi in zip(SPLITS, bounds[:-1], bounds[1:]):
        parts.append(Dataset(d.vocab_size, d.feature_dim, split, list(d.utterances[lo:hi])))
    return tuple(parts)


def strip_labels(d: Dataset) -> Dataset:
    """A view of `d` with all label sequences removed (label-hygiene guard)."""
    utts = [Utterance(u.id, u.domain_id, u.frames, ()) for u in d.utterances]
    return Dataset(d.vocab_size, d.feature_dim, d.split, utts)


def write_dataset(d: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = {"vocab_size": d.vocab_size, "feature_dim": d.feature_dim, "split": d.split}
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for u in d.utterances:
            rec = {
                "id": u.id,
                "domain": u.domain_id,
                "labels": list(u.labels),
                "frames": [list(map(float, row)) for row in u.frames],
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_dataset(path) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise ParseError(f"{path}: line 1: missing header line")
        header = _parse_line(header_line, 1, path)
        for key in ("vocab_size", "feature_dim", "split"):
            if key not in header:
                raise SchemaError(f"{path}: line 1: header missing '{key}'")
        extra = set(header) - {"vocab_size", "feature_dim", "split"}
        if extra:
            raise SchemaError(f"{path}: line 1: unknown header keys {sorted(extra)}")
        vocab, fdim, split = int(header["vocab_size"]), int(header["feature_dim"]), str(header["split"])
        if split not in SPLITS:
            raise SchemaError(f"{path}: line 1: split must be one of {SPLITS}, got '{split}'")
        ds = Dataset(vocab, fdim, split)
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            rec = _parse_line(line, lineno, path)
            ds.utterances.append(_record_to_utterance(rec, vocab, fdim, lineno, path))
    return ds


def _parse_line(line, lineno, path):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {lineno}: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise ParseError(f"{path}: line {lineno}: expected a JSON object")
    return obj


def _record_to_utterance(rec, vocab, fdim, lineno, path) -> Utterance:
    for key in ("id", "domain", "labels", "frames"):
        if key not in rec:
            raise SchemaError(f"{path}: line {lineno}: missing '{key}'")
    extra = set(rec) - {"id", "domain", "labels", "frames"}
    if extra:
        raise SchemaError(f"{path}: line {lineno}: unknown keys {sorted(extra)}")
    labels = tuple(int(x) for x in rec["labels"])
    for lab in labels:
        if lab == 0:
            raise SchemaError(f"{path}: line {lineno}: label id 0 is reserved for blank; ids are 1-based")
        if not 1 <= lab <= vocab:
            raise SchemaError(f"{path}: line {lineno}: label id {lab} outside [1, {vocab}]")
    raw = rec["frames"]
    if not raw:
        raise SchemaError(f"{path}: line {lineno}: utterance has no frames")
    widths = {len(row) for row in raw}
    if widths != {fdim}:
        raise SchemaError(f"{path}: line {lineno}: frame width {sorted(widths)} does not match feature_dim {fdim}")
    frames = np.array(raw, dtype=np.float64)
    if labels and frames.shape[0] < min_frames_for(labels):
        raise SchemaError(f"{path}: line {lineno}: {frames.shape[0]} frames cannot align {len(labels)} labels")
    return Utterance(id=str(rec["id"]), domain_id=int(rec["domain"]), frames=frames, labels=labels)


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    if (a.vocab_size, a.feature_dim, a.split, len(a.utterances)) != (
        b.vocab_size,
        b.feature_dim,
        b.split,
        len(b.utterances),
    ):
        return False
    for ua, ub in zip(a.utterances, b.utterances):
        if ua.id != ub.id or ua.domain_id != ub.domain_id or ua.labels != ub.labels:
            return False
        if ua.frames.shape != ub.frames.shape or not np.array_equal(ua.frames, ub.frames):
            return False
    return True
