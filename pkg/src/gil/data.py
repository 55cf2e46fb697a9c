"""Frozen-backbone surrogate: synthetic class-conditional feature datasets.

Features follow ``x = W a_y + b + eps`` with a seed-derived linear map shared
by all classes, so visual features are predictable from class semantics and
``noise_std`` sets how hard the benchmark is. Features are kept in float32,
the precision of the GILF file format, so save/load round trips are exact.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .binio import Reader, Writer
from .errors import InputError

MAGIC = "GILF"


@dataclass
class SynthConfig:
    n_classes: int = 70
    samples_min: int = 20
    samples_max: int = 40
    feature_dim: int = 64
    semantic_dim: int = 64
    noise_std: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if min(self.n_classes, self.samples_min, self.feature_dim, self.semantic_dim) <= 0:
            raise InputError("class count, sample counts and dims must be positive")
        if self.samples_max < self.samples_min:
            raise InputError("samples_max < samples_min")
        if self.noise_std < 0:
            raise InputError("noise_std must be >= 0")


@dataclass(frozen=True)
class SplitSpec:
    seen: tuple
    unseen: tuple
    seed: int = 0

    def __post_init__(self):
        if set(self.seen) & set(self.unseen):
            raise InputError("seen and unseen classes overlap")


@dataclass(eq=False)
class Dataset:
    instance_ids: np.ndarray
    labels: np.ndarray
    features: np.ndarray  # float32, (n, d)
    _index: dict = field(default=None, repr=False)

    def __post_init__(self):
        self.instance_ids = np.asarray(self.instance_ids, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 2 or len(self.features) != len(self.labels) or len(self.labels) != len(self.instance_ids):
            raise InputError("instance ids, labels and features must align")
        index = {}
        for pos, c in enumerate(self.labels.tolist()):
            index.setdefault(c, []).append(pos)
        self._index = {c: np.array(p) for c, p in sorted(index.items())}

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def classes(self):
        return list(self._index)

    @property
    def class_index(self):
        return self._index

    def features_of(self, cid):
        try:
            return self.features[self._index[int(cid)]].astype(np.float64)
        except KeyError:
            raise InputError(f"class {cid} not in dataset") from None

    def count(self, cid):
        return len(self._index.get(int(cid), ()))

    def subset(self, class_ids):
        keep = np.isin(self.labels, np.asarray(list(class_ids), dtype=np.int64))
        return self.take(np.flatnonzero(keep))

    def take(self, positions):
        positions = np.asarray(positions, dtype=np.int64)
        return Dataset(self.instance_ids[positions], self.labels[positions], self.features[positions])

    def equals(self, other):
        return (np.array_equal(self.instance_ids, other.instance_ids) and np.array_equal(self.labels, other.labels)
                and self.features.shape == other.features.shape
                and self.features.tobytes() == other.features.tobytes())


def _rng(seed, tag):
    return np.random.default_rng([int(seed), tag])


def ground_truth_map(config):
    """The seed-derived ``(W, b)`` with ``W`` of shape (d, s)."""
    rng = _rng(config.seed, 0xA1)
    return rng.standard_normal((config.feature_dim, config.semantic_dim)), rng.standard_normal(config.feature_dim)


def class_centre(config, embedding):
    w, b = ground_truth_map(config)
    return w @ np.asarray(embedding, dtype=np.float64) + b


def synth_dataset(config, embeddings, class_ids=None):
    """Draw ``samples_min..samples_max`` features per class (inclusive), in class order."""
    class_ids = list(range(config.n_classes)) if class_ids is None else [int(c) for c in class_ids]
    missing = [c for c in class_ids if c not in embeddings]
    if missing:
        raise InputError(f"missing embeddings for classes {missing}")
    w, b = ground_truth_map(config)
    rng = _rng(config.seed, 0xA2)
    ids, labels, feats = [], [], []
    next_id = 0
    for c in class_ids:
        a = np.asarray(embeddings[c], dtype=np.float64)
        if a.shape != (config.semantic_dim,):
            raise InputError(f"class {c}: embedding dim {a.shape[0]} != {config.semantic_dim}")
        n = int(rng.integers(config.samples_min, config.samples_max + 1))
        centre = w @ a + b
        x = centre + config.noise_std * rng.standard_normal((n, config.feature_dim))
        ids.extend(range(next_id, next_id + n))
        next_id += n
        labels.extend([c] * n)
        feats.append(x)
    return Dataset(ids, labels, np.concatenate(feats).astype(np.float32))


def round_half_up(x):
    return int(math.floor(x + 0.5))


def split(classes, seen_fraction, seed):
    """Random partition into ``round(seen_fraction * n)`` seen classes and the rest unseen."""
    classes = sorted(int(c) for c in classes)
    if len(classes) < 2:
        raise InputError("need at least 2 classes to split")
    if not 0 < seen_fraction < 1:
        raise InputError("seen_fraction must lie in (0, 1)")
    n_seen = round_half_up(seen_fraction * len(classes))
    order = _rng(seed, 0xA3).permutation(classes)
    return SplitSpec(tuple(sorted(order[:n_seen].tolist())), tuple(sorted(order[n_seen:].tolist())), seed)


def holdout(dataset, test_fraction, seed):
    """Per-class instance split into (train, test); every class keeps at least one training item."""
    rng = _rng(seed, 0xA4)
    train, test = [], []
    for c, pos in dataset.class_index.items():
        pos = rng.permutation(pos)
        n_test = min(round_half_up(test_fraction * len(pos)), len(pos) - 1)
        test.extend(pos[:n_test])
        train.extend(pos[n_test:])
    return dataset.take(np.sort(train)), dataset.take(np.sort(test))


def encode_features(dataset):
    w = Writer(MAGIC)
    w.u32(len(dataset), dataset.dim)
    for cid, x in zip(dataset.labels.tolist(), dataset.features):
        w.u32(cid)
        w.f32(x)
    return w.bytes()


def decode_features(data):
    """Inverse of :func:`encode_features`. Instance ids are the item positions."""
    r = Reader(data, MAGIC)
    count, dim = r.u32(2)
    labels = np.empty(count, dtype=np.int64)
    feats = np.empty((count, dim), dtype=np.float32)
    for i in range(count):
        (labels[i],) = r.u32()
        feats[i] = r.f32(dim)
    r.finish()
    return Dataset(np.arange(count), labels, feats)


def save_features(dataset, path):
    if not np.array_equal(dataset.instance_ids, np.arange(len(dataset))):
        dataset = Dataset(np.arange(len(dataset)), dataset.labels, dataset.features)
    Path(path).write_bytes(encode_features(dataset))


def load_features(path):
    return decode_features(Path(path).read_bytes())


def export_csv(dataset, path):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["instance_id", "class_id"] + [f"f{j}" for j in range(dataset.dim)])
        for iid, cid, x in zip(dataset.instance_ids.tolist(), dataset.labels.tolist(), dataset.features):
            out.writerow([iid, cid] + [repr(float(v)) for v in x])
