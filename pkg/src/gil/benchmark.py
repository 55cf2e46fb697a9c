"""The standard synthetic benchmark: pretraining classes plus a seen/unseen fine-tuning pool.

One feature file holds every pretraining class and another every fine-tuning
class. The seen/unseen partition and the train/test holdout are derived from
the run seed, so the same files serve every seed.
"""

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as D
from .errors import InputError
from .semantic import degrade, load_embeddings, random_embeddings, save_embeddings

FILES = {"pretrain": "pretrain.gilf", "finetune": "finetune.gilf", "embeddings": "embeddings.gile"}


@dataclass
class BenchmarkConfig:
    n_pretrain: int = 40
    n_finetune: int = 30
    seen_fraction: float = 2 / 3
    samples_min: int = 20
    samples_max: int = 40
    feature_dim: int = 64
    semantic_dim: int = 64
    noise_std: float = 0.5
    test_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.n_pretrain < 2 or self.n_finetune < 2:
            raise InputError("need at least 2 pretraining and 2 fine-tuning classes")
        if not 0 < self.test_fraction < 1:
            raise InputError("test_fraction must lie in (0, 1)")

    def synth(self):
        return D.SynthConfig(self.n_pretrain + self.n_finetune, self.samples_min, self.samples_max,
                             self.feature_dim, self.semantic_dim, self.noise_std, self.seed)

    @property
    def pretrain_ids(self):
        return list(range(self.n_pretrain))

    @property
    def finetune_ids(self):
        return list(range(self.n_pretrain, self.n_pretrain + self.n_finetune))


@dataclass
class Benchmark:
    embeddings: object
    pretrain_train: D.Dataset
    pretrain_test: D.Dataset
    seen_train: D.Dataset
    seen_test: D.Dataset
    unseen_test: D.Dataset
    split: D.SplitSpec


def generate(config):
    """``(pretrain, finetune, embeddings)`` for a benchmark config."""
    synth = config.synth()
    with warnings.catch_warnings():
        # the standard benchmark has more classes than semantic dims by design
        warnings.simplefilter("ignore", UserWarning)
        emb = random_embeddings(range(synth.n_classes), config.semantic_dim, config.seed)
    full = D.synth_dataset(synth, emb)
    return full.subset(config.pretrain_ids), full.subset(config.finetune_ids), emb


def write_files(config, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pretrain, finetune, emb = generate(config)
    D.save_features(pretrain, out / FILES["pretrain"])
    D.save_features(finetune, out / FILES["finetune"])
    save_embeddings(emb, out / FILES["embeddings"])
    return {k: out / v for k, v in FILES.items()}


def read_files(data_dir):
    d = Path(data_dir)
    for name in FILES.values():
        if not (d / name).is_file():
            raise InputError(f"missing data file {d / name}")
    return D.load_features(d / FILES["pretrain"]), D.load_features(d / FILES["finetune"]), load_embeddings(
        d / FILES["embeddings"])


def assemble(pretrain, finetune, embeddings, config, seed, embedding_noise=0.0):
    """Split the fine-tuning pool into seen/unseen classes and hold out test instances, all from ``seed``."""
    sp = D.split(finetune.classes, config.seen_fraction, seed)
    pre_train, pre_test = D.holdout(pretrain, config.test_fraction, seed)
    seen_train, seen_test = D.holdout(finetune.subset(sp.seen), config.test_fraction, seed)
    if embedding_noise > 0:
        embeddings = degrade(embeddings, embedding_noise, seed)
    return Benchmark(embeddings, pre_train, pre_test, seen_train, seen_test, finetune.subset(sp.unseen), sp)


TOY_MEANS = ((0.0, 0.0), (5.0, 0.0), (0.0, 5.0))


def toy_gaussians(seed, n_per_class=200, means=TOY_MEANS, std=1.0, semantic_dim=8):
    """Low-dimensional Gaussian classes for checking that a generator matches class means.

    Returns ``(dataset, embeddings)``; class ``k`` is centred on ``means[k]``
    and ``std`` may be a scalar or one value per class.
    """
    rng = np.random.default_rng([seed, 0x70])
    means = np.asarray(means, dtype=np.float64)
    stds = np.broadcast_to(np.asarray(std, dtype=np.float64), (len(means),))
    x = np.concatenate([m + s * rng.standard_normal((n_per_class, means.shape[1])) for m, s in zip(means, stds)])
    y = np.repeat(np.arange(len(means)), n_per_class)
    emb = random_embeddings(range(len(means)), semantic_dim, seed)
    return D.Dataset(np.arange(len(y)), y, x), emb
