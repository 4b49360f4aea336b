"""Seeded synthetic sequence-labelling tasks and a portable dataset file format.

``gen_frame_task`` mimics frame-level acoustic modelling: a sticky Markov
chain over K classes emits class-conditioned Gaussian feature vectors, so
neighbouring frames share labels and a recurrent model can pool evidence.

Dataset file layout (all little-endian)::

    magic        8 bytes   b"CRNNDSET"
    version      uint32    1
    num_classes  uint32
    feature_dim  uint32
    count        uint32    number of utterances
    lengths      count x uint32
    ids          count x uint64
    body         per utterance: T*feature_dim float64 (row-major), then T float64 labels

Ignored frames carry label -1.
"""

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List

import numpy as np

from .numerics import SplitMix64, mix64

IGNORE = -1
DATASET_MAGIC = b"CRNNDSET"
DATASET_VERSION = 1

STAY_PROB = 0.9
MEAN_SCALE = 0.4


@dataclass
class SequenceBatch:
    """One utterance: (T, feature_dim) features and T integer labels."""

    features: np.ndarray
    labels: np.ndarray
    utterance_id: int = 0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError("features must be a non-empty (T, dim) matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("one label per frame required")

    def __len__(self):
        return self.features.shape[0]


@dataclass
class DatasetSplit:
    train: List[SequenceBatch]
    heldout: List[SequenceBatch]
    ratio: float = 0.9


def class_means(seed, num_classes, feature_dim, scale=MEAN_SCALE):
    """The fixed per-class feature means used by ``gen_frame_task``."""
    return scale * SplitMix64(mix64(seed, 0)).normal((num_classes, feature_dim))


def markov_labels(rng, length, num_classes, stay_prob=STAY_PROB):
    """Sticky chain: keep the state with ``stay_prob``, else jump to a uniform other state."""
    start = int(rng.integers(num_classes, 1)[0])
    stay = rng.uniform(length) < stay_prob
    jumps = rng.integers(num_classes - 1, length)
    labels = np.empty(length, dtype=np.int64)
    state = start
    for t in range(length):
        if t > 0 and not stay[t]:
            # Skip over the current state so a jump always changes class.
            state = jumps[t] + (jumps[t] >= state)
        labels[t] = state
    return labels


def gen_frame_task(seed, num_utterances, length, num_classes=42, feature_dim=40,
                   stay_prob=STAY_PROB, mean_scale=MEAN_SCALE):
    """Utterances from a sticky HMM with unit-variance Gaussian emissions."""
    if min(num_utterances, length, num_classes, feature_dim) < 1:
        raise ValueError("all counts must be positive")
    means = class_means(seed, num_classes, feature_dim, mean_scale)
    out = []
    for u in range(num_utterances):
        rng = SplitMix64(mix64(seed, u + 1))
        labels = markov_labels(rng, length, num_classes, stay_prob)
        features = means[labels] + rng.normal((length, feature_dim))
        out.append(SequenceBatch(features, labels, u))
    return out


def adding_label(a, b, bins):
    """Bin of a + b on [0, 2) split into ``bins`` equal bins."""
    return min(int((a + b) / (2.0 / bins)), bins - 1)


def gen_adding_task(seed, num_sequences, length, bins=10):
    """Two channels (values in [0,1), marker flags); only the final frame is labelled.

    One marker falls in the first half of the sequence, the other in the
    second half; the label is the binned sum of the two marked values.
    """
    if length < 2:
        raise ValueError("adding task needs length >= 2")
    if num_sequences < 1 or bins < 1:
        raise ValueError("counts must be positive")
    half = length // 2
    out = []
    for u in range(num_sequences):
        rng = SplitMix64(mix64(seed, u + 1))
        values = rng.uniform(length)
        first = int(rng.integers(half, 1)[0])
        second = half + int(rng.integers(length - half, 1)[0])
        features = np.zeros((length, 2))
        features[:, 0] = values
        features[[first, second], 1] = 1.0
        labels = np.full(length, IGNORE, dtype=np.int64)
        labels[-1] = adding_label(values[first], values[second], bins)
        out.append(SequenceBatch(features, labels, u))
    return out


def split_dataset(utterances, ratio=0.9, seed=0):
    """Seeded shuffle, then the first floor(ratio * N) utterances train."""
    n = len(utterances)
    if n < 2:
        raise ValueError("need at least two utterances to split")
    perm = SplitMix64(seed).permutation(n)
    cut = int(math.floor(ratio * n))
    return DatasetSplit([utterances[i] for i in perm[:cut]],
                        [utterances[i] for i in perm[cut:]], ratio)


def make_task(task_config):
    """Generate and split the dataset described by a TaskConfig."""
    if task_config.name == "frame":
        utts = gen_frame_task(task_config.seed, task_config.num_utterances, task_config.length,
                              task_config.num_classes, task_config.feature_dim)
    else:
        utts = gen_adding_task(task_config.seed, task_config.num_utterances, task_config.length,
                               task_config.num_classes)
    return split_dataset(utts, task_config.split_ratio, mix64(task_config.seed, 0x5EED))


def dataset_to_bytes(utterances, num_classes):
    if not utterances:
        raise ValueError("cannot export an empty dataset")
    dim = utterances[0].features.shape[1]
    parts = [DATASET_MAGIC, struct.pack("<4I", DATASET_VERSION, num_classes, dim, len(utterances))]
    parts.append(np.array([len(u) for u in utterances], dtype="<u4").tobytes())
    parts.append(np.array([u.utterance_id for u in utterances], dtype="<u8").tobytes())
    for u in utterances:
        if u.features.shape[1] != dim:
            raise ValueError("utterances disagree on feature dimension")
        parts.append(u.features.astype("<f8").tobytes())
        parts.append(u.labels.astype("<f8").tobytes())
    return b"".join(parts)


def dataset_from_bytes(buf):
    """Returns (utterances, num_classes)."""
    if buf[:8] != DATASET_MAGIC:
        raise ValueError("not a dataset file (bad magic)")
    version, num_classes, dim, count = struct.unpack_from("<4I", buf, 8)
    if version != DATASET_VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    off = 24
    lengths = np.frombuffer(buf, dtype="<u4", count=count, offset=off)
    off += 4 * count
    ids = np.frombuffer(buf, dtype="<u8", count=count, offset=off)
    off += 8 * count
    out = []
    for T, uid in zip(lengths, ids):
        T = int(T)
        feats = np.frombuffer(buf, dtype="<f8", count=T * dim, offset=off).reshape(T, dim)
        off += 8 * T * dim
        labels = np.frombuffer(buf, dtype="<f8", count=T, offset=off)
        off += 8 * T
        out.append(SequenceBatch(feats.copy(), labels.astype(np.int64), int(uid)))
    if off != len(buf):
        raise ValueError("trailing bytes in dataset file")
    return out, num_classes


def export_dataset(path, utterances, num_classes):
    Path(path).write_bytes(dataset_to_bytes(utterances, num_classes))


def import_dataset(path):
    return dataset_from_bytes(Path(path).read_bytes())
