"""Shared micro-benchmark fixtures: small enough for fast unit tests,
big enough that CTC training actually learns something."""

import pytest

from simteach.datasets import GenConfig, gen_dataset
from simteach.ensemble import TeacherPool
from simteach.model import Architecture
from simteach.trainer import TrainConfig, pretrain_teacher

MICRO_SEED = 11

MICRO_GEN = GenConfig(
    vocab_size=4,
    feature_dim=6,
    num_sources=2,
    train_per_source=60,
    dev_per_source=24,
    target_train=96,
    target_dev=32,
    target_test=32,
    label_len_min=2,
    label_len_max=4,
    frames_per_token_min=2,
    frames_per_token_max=3,
    noise_sigma=0.15,
    source_shift=0.25,
    target_shift=0.5,
)

MICRO_ARCH = Architecture(feature_dim=6, context=1, hidden_sizes=(16,), vocab_size=4)

MICRO_TRAIN = TrainConfig(
    mode="stu",
    alpha=1e-2,
    delta=5,
    tau=0.6,
    lr=3e-3,
    batch_size=8,
    pretrain_epochs=4,
    distill_epochs=2,
    mets_stages=2,
    seed=MICRO_SEED,
)


@pytest.fixture(scope="session")
def micro_world():
    return gen_dataset(MICRO_GEN, MICRO_SEED)


@pytest.fixture(scope="session")
def micro_teachers(micro_world):
    return [
        pretrain_teacher(micro_world[i]["train"], micro_world[i]["dev"], MICRO_ARCH, MICRO_TRAIN)
        for i in (1, 2)
    ]


@pytest.fixture(scope="session")
def micro_pool(micro_teachers):
    return TeacherPool([t.params for t in micro_teachers], MICRO_ARCH)
