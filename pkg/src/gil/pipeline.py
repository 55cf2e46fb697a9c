"""The staged learning procedure: initialization, incremental steps, memory updates and test-time adaptation.

A run boots the replay memory from pretraining classes, trains the CVAE ``E``
and the prototype-conditioned GAN, then freezes ``F``. Each later stage
fine-tunes the head on real features of a few new classes mixed with features
replayed from the buffer, and archives the new classes' prototypes.

Prediction is 1-NN by cosine similarity between the head output (a vector in
semantic space) and per-class anchors, by default the class embeddings. The
training classifier shares this geometry: its logits are scaled cosines
against fixed, normalised anchor rows, so the head is always trained to land
near the right anchor.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, round_half_up
from .errors import ConsistencyError, ContractError, InputError
from .gan import GANConfig, GANModels, synthesize, synthesize_semantic, train_gan
from .memory import (ClassRecord, CVAEConfig, CVAEModel, ReplayBuffer, buffer_insert, compute_prototype, cvae_encode,
                     cvae_loss, train_cvae)
from .nn import AdamState, Graph, MLPParams, adam_step, backward, forward, gradients, predict as mlp_predict
from .nn import autodiff as ad

MEMORY_VARIANTS = ("none", "random", "proto-random", "proto-noise")
DATA_MIXES = ("synthetic", "mix", "real")
GENERATOR_MODES = ("frozen", "finetune")
ANCHOR_MODES = ("embedding", "prototype")


@dataclass
class PipelineConfig:
    head_hidden: int = 256
    epochs: int = 200  # per incremental step
    batch_size: int = 128
    lr: float = 1e-3
    schedule_percent: float = 10.0
    synth_percent: float = 100.0
    j_test: int = None  # None: per-class mean of the fine-tuning data
    adapt_epochs: int = 100
    classifier_scale: float = 10.0
    anchors: str = "embedding"
    memory_variant: str = "proto-noise"
    random_instances: int = 5
    data_mix: str = "synthetic"
    generator_mode: str = "frozen"
    generator_steps: int = 200  # GAN steps per stage when generator_mode="finetune"
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.schedule_percent <= 100:
            raise InputError("schedule_percent must lie in (0, 100]")
        if self.synth_percent < 0:
            raise InputError("synth_percent must be >= 0")
        for name, value, allowed in [("anchors", self.anchors, ANCHOR_MODES),
                                     ("memory_variant", self.memory_variant, MEMORY_VARIANTS),
                                     ("data_mix", self.data_mix, DATA_MIXES),
                                     ("generator_mode", self.generator_mode, GENERATOR_MODES)]:
            if value not in allowed:
                raise InputError(f"unknown {name} {value!r}; expected one of {', '.join(allowed)}")
        if min(self.head_hidden, self.batch_size, self.random_instances) < 1:
            raise InputError("head_hidden, batch_size and random_instances must be >= 1")


@dataclass
class GILConfig:
    """Model and training settings for one run; data settings live elsewhere."""

    gan: GANConfig = field(default_factory=GANConfig)
    cvae: CVAEConfig = field(default_factory=CVAEConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)


@dataclass
class ClassifierHead:
    """Cosine classifier: ``logits = scale * cos(h, anchor_k)`` over registered classes in order."""

    class_ids: list
    anchors: np.ndarray  # (K, s), unit rows
    scale: float = 10.0

    @classmethod
    def for_classes(cls, class_ids, embeddings, scale):
        class_ids = [int(c) for c in class_ids]
        rows = embeddings.matrix(class_ids) if class_ids else np.zeros((0, embeddings.dim))
        return cls(class_ids, _unit_rows(rows), scale)

    def extend(self, class_ids, embeddings):
        new = [int(c) for c in class_ids if int(c) not in self.class_ids]
        if new:
            self.class_ids = self.class_ids + new
            self.anchors = np.concatenate([self.anchors, _unit_rows(embeddings.matrix(new))])
        return self

    def indices(self, labels):
        lookup = {c: i for i, c in enumerate(self.class_ids)}
        try:
            return np.array([lookup[int(c)] for c in labels], dtype=np.int64)
        except KeyError as err:
            raise InputError(f"label {err.args[0]} is not a registered class") from None

    def copy(self):
        return ClassifierHead(list(self.class_ids), self.anchors.copy(), self.scale)


def _unit_rows(m):
    m = np.asarray(m, dtype=np.float64)
    n = np.linalg.norm(m, axis=1, keepdims=True)
    return np.divide(m, n, out=np.zeros_like(m), where=n > 0)


def build_head(feature_dim, semantic_dim, config, seed):
    rng = np.random.default_rng([seed, 0xE1])
    return MLPParams.build([feature_dim, config.head_hidden, semantic_dim], ["leaky_relu", "linear"], rng)


def _logits(head, classifier, x, graph):
    h = forward(head, x, graph)
    h_unit = h / (ad.norm(h, axis=1, keepdims=True) + 1e-12)
    return ad.matmul(h_unit, graph.constant(classifier.anchors.T)) * classifier.scale


def train_head(head, classifier, x, labels, epochs, config, rng):
    """Minibatch cross-entropy training of ``head`` in place; returns the last epoch's mean loss."""
    x = np.asarray(x, dtype=np.float64)
    y = classifier.indices(labels)
    if len(x) != len(y):
        raise InputError("features and labels differ in length")
    opt = AdamState.for_params(head, lr=config.lr)
    loss_value = float("nan")
    for _ in range(epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), config.batch_size):
            pos = order[start:start + config.batch_size]
            g = Graph()
            loss = ad.softmax_cross_entropy(_logits(head, classifier, x[pos], g), y[pos])
            adam_step(head, gradients(head, g, backward(g, loss)), opt)
            total += float(loss.value) * len(pos)
        loss_value = total / len(x)
    return loss_value


def predict_scores(head, features, anchors):
    """Cosine similarities ``(n, K)`` and the sorted candidate ids; zero vectors score 0 everywhere."""
    if not anchors:
        raise InputError("no candidate anchors")
    ids = sorted(int(c) for c in anchors)
    a = _unit_rows(np.stack([np.asarray(anchors[c], dtype=np.float64) for c in ids]))
    h = _unit_rows(mlp_predict(head, np.atleast_2d(np.asarray(features, dtype=np.float64))))
    return h @ a.T, ids


def predict(head, features, anchors):
    """1-NN class id(s) by cosine similarity; the lowest class id wins ties."""
    scores, ids = predict_scores(head, features, anchors)
    # argmax returns the first maximum and ids are ascending
    out = np.asarray(ids)[np.argmax(scores, axis=1)]
    return int(out[0]) if np.ndim(features) == 1 else out


def class_schedule(class_ids, percent, seed):
    """Shuffle ``class_ids`` and chunk them into batches of ``max(1, round(percent% of C))``."""
    class_ids = sorted(int(c) for c in class_ids)
    if not class_ids:
        raise InputError("cannot schedule an empty class list")
    if not 0 < percent <= 100:
        raise InputError("percent must lie in (0, 100]")
    size = max(1, math.floor(percent / 100 * len(class_ids) + 0.5))
    order = np.random.default_rng([seed, 0xE2]).permutation(class_ids).tolist()
    return [order[i:i + size] for i in range(0, len(order), size)]


@dataclass
class ExperimentState:
    config: GILConfig
    embeddings: object
    buffer: ReplayBuffer
    cvae: CVAEModel
    gan: GANModels
    head: MLPParams
    classifier: ClassifierHead
    seed: int = 0
    stage: int = 0
    schedule: list = field(default_factory=list)
    log: list = field(default_factory=list)
    stage_log: list = field(default_factory=list)
    f_checksum: str = ""
    mean_count: float = 0.0
    mode: str = "gil"
    pretrain: Dataset = None  # real pretraining features, only read by the data-mix ablation

    def check_frozen(self):
        if self.config.pipeline.generator_mode == "frozen" and self.gan.F.checksum() != self.f_checksum:
            raise ContractError("frozen generator F changed")


def _mean_count(data):
    return float(np.mean([data.count(c) for c in data.classes]))


def _make_record(data, cid, embeddings, stage, variant, rng, n_instances):
    x = data.features_of(cid)
    mu, sigma = compute_prototype(x)
    samples = None
    if variant in ("random", "proto-random"):
        samples = x[rng.permutation(len(x))[:n_instances]]
    if variant == "proto-random":
        sigma = np.zeros_like(sigma)
    return ClassRecord(cid, mu, sigma, embeddings[cid], stage, samples)


def initialize(pretrain, embeddings, config, seed=None, gan=None):
    """Boot the buffer from ``pretrain``, train ``E`` and the GAN, then freeze ``F``.

    ``gan`` reuses already trained GAN models (copied), e.g. across ablation cells sharing a seed.
    """
    if len(pretrain.classes) < 2:
        raise InputError("pretraining data must cover at least 2 classes")
    p = config.pipeline
    seed = p.seed if seed is None else seed
    rng = np.random.default_rng([seed, 0xE3])
    buffer = ReplayBuffer()
    for cid in pretrain.classes:
        buffer_insert(buffer, _make_record(pretrain, cid, embeddings, 0, p.memory_variant, rng, p.random_instances))
    ccfg = replace(config.cvae, seed=seed)
    cvae = CVAEModel.build(embeddings.dim, pretrain.dim, ccfg)
    cvae, e_loss, _ = train_cvae(cvae, buffer, ccfg.epochs, ccfg)
    wasserstein = None
    if gan is None:
        gan, history = pretrain_gan(pretrain, embeddings, config, seed)
        wasserstein = history[-1]["wasserstein"] if history else None
    else:
        gan = gan.copy()
    state = ExperimentState(
        config=config, embeddings=embeddings, buffer=buffer, cvae=cvae, gan=gan,
        head=build_head(pretrain.dim, embeddings.dim, p, seed),
        classifier=ClassifierHead.for_classes(pretrain.classes, embeddings, p.classifier_scale),
        seed=seed, f_checksum=gan.F.checksum(), mean_count=_mean_count(pretrain), pretrain=pretrain)
    state.log.append({"event": "initialize", "classes": len(buffer), "cvae_loss": e_loss,
                      "wasserstein": wasserstein, "f_checksum": state.f_checksum})
    return state


def pretrain_gan(pretrain, embeddings, config, seed):
    """Prototype-conditioned GAN on the pretraining classes, conditioned on their true (mu, sigma)."""
    buffer = ReplayBuffer()
    for cid in pretrain.classes:
        mu, sigma = compute_prototype(pretrain.features_of(cid))
        buffer_insert(buffer, ClassRecord(cid, mu, sigma, embeddings[cid]))
    gcfg = replace(config.gan, seed=seed, condition="prototype")
    return train_gan(pretrain, embeddings, gcfg, buffer=buffer)


def _replay(state, j, rng):
    """Replay features and labels for every buffered class under the configured memory variant."""
    p = state.config.pipeline
    xs, ys = [], []
    if p.memory_variant == "none" or j < 1:
        return xs, ys
    for rec in state.buffer:
        sub_seed = rng.integers(2**32)
        if p.memory_variant == "random":
            x = rec.samples[rng.integers(0, len(rec.samples), j)]
        elif p.memory_variant == "proto-random":
            n_proto = (j + 1) // 2
            parts = [synthesize(state.gan, rec.mu, rec.sigma, n_proto, sub_seed)] if n_proto else []
            if j - n_proto:
                parts.append(rec.samples[rng.integers(0, len(rec.samples), j - n_proto)])
            x = np.concatenate(parts)
        else:
            n_real = 0
            if rec.stage == 0 and state.pretrain is not None and p.data_mix != "synthetic":
                n_real = j if p.data_mix == "real" else j // 2
            parts = []
            if j - n_real:
                parts.append(synthesize(state.gan, rec.mu, rec.sigma, j - n_real, sub_seed))
            if n_real:
                real = state.pretrain.features_of(rec.class_id)
                parts.append(real[rng.integers(0, len(real), n_real)])
            x = np.concatenate(parts)
        xs.append(x)
        ys.append(np.full(len(x), rec.class_id))
    return xs, ys


def replay_count(data, synth_percent):
    """Features replayed per buffered class: the new classes' mean count scaled by ``synth_percent``."""
    return round_half_up(_mean_count(data) * synth_percent / 100)


def incremental_step(state, batch):
    """Train head and classifier on real features of ``batch``'s classes plus replayed buffer classes."""
    new = batch.classes
    clash = [c for c in new if c in state.buffer]
    if clash:
        raise ConsistencyError(f"classes {clash} are already in the replay buffer")
    p = state.config.pipeline
    rng = np.random.default_rng([state.seed, 0xE4, state.stage])
    j = replay_count(batch, p.synth_percent)
    xs, ys = _replay(state, j, rng)
    n_synth = sum(len(x) for x in xs)
    xs.append(batch.features.astype(np.float64))
    ys.append(batch.labels)
    state.classifier.extend(new, state.embeddings)
    loss = train_head(state.head, state.classifier, np.concatenate(xs), np.concatenate(ys), p.epochs, p, rng)
    state.check_frozen()
    state.log.append({"event": "incremental", "stage": state.stage, "new_classes": list(new), "J": j,
                      "n_replay": n_synth, "n_real": len(batch), "loss": loss})
    return state


def update_stage(state, batch):
    """Archive ``batch``'s prototypes and fine-tune ``E`` on the enlarged buffer."""
    p = state.config.pipeline
    entry = {"event": "update", "stage": state.stage}
    if p.memory_variant != "none":
        rng = np.random.default_rng([state.seed, 0xE5, state.stage])
        records = [_make_record(batch, c, state.embeddings, state.stage + 1, p.memory_variant, rng,
                                p.random_instances) for c in batch.classes]
        for rec in records:
            buffer_insert(state.buffer, rec)
        entry["cvae_loss_before"] = cvae_loss(state.cvae, records)
        cfg = replace(state.config.cvae, seed=state.seed)
        state.cvae, _, _ = train_cvae(state.cvae, state.buffer, cfg.finetune_epochs, cfg)
        entry["cvae_loss_after"] = cvae_loss(state.cvae, records)
    if p.generator_mode == "finetune":
        tuned = replace(state.config.gan, steps=p.generator_steps, seed=state.seed + 1000 * (state.stage + 1))
        train_gan(batch, state.embeddings, tuned, buffer=state.buffer, models=state.gan)
    state.check_frozen()
    entry["buffer_size"] = len(state.buffer)
    state.log.append(entry)
    state.stage += 1
    return state


def run_gil(pretrain, finetune, embeddings, config, evaluator=None, seed=None, initial=None):
    """Initialize, then alternate incremental and update stages over the class schedule.

    ``evaluator(state)`` returns a dict of metrics recorded after every stage.
    ``initial`` reuses an already initialized state (copied, not mutated).
    """
    p = config.pipeline
    seed = p.seed if seed is None else seed
    state = copy_state(initial) if initial is not None else initialize(pretrain, embeddings, config, seed)
    state.config = config
    state.schedule = class_schedule(finetune.classes, p.schedule_percent, seed)
    state.mean_count = _mean_count(finetune)
    total = len(finetune.classes)
    done = 0
    for batch_ids in state.schedule:
        batch = finetune.subset(batch_ids)
        incremental_step(state, batch)
        update_stage(state, batch)
        done += len(batch_ids)
        entry = {"stage": state.stage, "completion": 100.0 * done / total}
        if evaluator is not None:
            entry.update(evaluator(state))
        state.stage_log.append(entry)
    return state


def copy_state(state):
    return ExperimentState(
        config=state.config, embeddings=state.embeddings, buffer=state.buffer.copy(),
        cvae=state.cvae.copy() if state.cvae is not None else None, gan=state.gan.copy(), head=state.head.copy(),
        classifier=state.classifier.copy(), seed=state.seed, stage=state.stage,
        schedule=[list(b) for b in state.schedule], log=[dict(e) for e in state.log],
        stage_log=[dict(e) for e in state.stage_log], f_checksum=state.f_checksum, mean_count=state.mean_count,
        mode=state.mode, pretrain=state.pretrain)


def run_baseline(pretrain, finetune, embeddings, config, seed=None):
    """Non-continual baseline: a semantic-conditioned GAN and the head, each trained once on the seen classes.

    ``pretrain`` is accepted for signature parity with :func:`run_gil` and is not used.
    """
    p = config.pipeline
    seed = p.seed if seed is None else seed
    gcfg = replace(config.gan, condition="semantic", seed=seed)
    gan, _ = train_gan(finetune, embeddings, gcfg)
    head = build_head(finetune.dim, embeddings.dim, p, seed)
    classifier = ClassifierHead.for_classes(finetune.classes, embeddings, p.classifier_scale)
    rng = np.random.default_rng([seed, 0xE4, 0])
    loss = train_head(head, classifier, finetune.features, finetune.labels, p.epochs, p, rng)
    state = ExperimentState(config=config, embeddings=embeddings, buffer=ReplayBuffer(), cvae=None, gan=gan,
                            head=head, classifier=classifier, seed=seed, f_checksum=gan.F.checksum(),
                            mean_count=_mean_count(finetune), mode="baseline")
    state.log.append({"event": "baseline", "classes": len(finetune.classes), "loss": loss})
    return state


@dataclass
class AdaptedModel:
    head: MLPParams
    classifier: ClassifierHead
    n_features: int
    loss: float


def synthesize_for_classes(state, class_ids, j, seed):
    """``j`` synthetic features per class generated from embeddings alone."""
    rng = np.random.default_rng([seed, 0xE6])
    xs, ys = [], []
    for cid in class_ids:
        a = state.embeddings[cid]
        sub = rng.integers(2**32)
        if state.gan.condition == "semantic":
            x = synthesize_semantic(state.gan, a, j, sub)
        else:
            mu, sigma = cvae_encode(state.cvae, a)
            x = synthesize(state.gan, mu, sigma, j, sub)
        xs.append(x)
        ys.append(np.full(j, int(cid)))
    return np.concatenate(xs), np.concatenate(ys)


def zsl_adapt(state, class_ids, j_test=None):
    """Fine-tune a copy of the head on features synthesized for ``class_ids`` from their embeddings only."""
    class_ids = sorted(int(c) for c in class_ids)
    if not class_ids:
        raise InputError("no target classes")
    missing = [c for c in class_ids if c not in state.embeddings]
    if missing:
        raise InputError(f"no embedding for classes {missing}")
    p = state.config.pipeline
    j = j_test or p.j_test or max(1, round_half_up(state.mean_count))
    x, y = synthesize_for_classes(state, class_ids, j, state.seed)
    head = state.head.copy()
    classifier = ClassifierHead.for_classes(class_ids, state.embeddings, p.classifier_scale)
    rng = np.random.default_rng([state.seed, 0xE7])
    loss = train_head(head, classifier, x, y, p.adapt_epochs, p, rng)
    return AdaptedModel(head, classifier, len(x), loss)


def anchors_for(state, class_ids, head=None):
    """Candidate anchors per class: embeddings, or CVAE prototypes projected by ``head``."""
    class_ids = [int(c) for c in class_ids]
    if state.config.pipeline.anchors == "embedding" or state.cvae is None:
        return {c: state.embeddings[c] for c in class_ids}
    mu, _ = cvae_encode(state.cvae, state.embeddings.matrix(class_ids))
    proj = mlp_predict(state.head if head is None else head, mu)
    return dict(zip(class_ids, proj))
