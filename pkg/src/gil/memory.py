"""Replay memory: class prototypes, the record buffer and the semantic-to-visual CVAE."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .binio import Reader, Writer, f32_exact
from .errors import ConsistencyError, DimensionError, InputError, NumericError
from .nn import AdamState, Graph, MLPParams, adam_step, backward, forward, gradients, predict
from .nn import autodiff as ad

MAGIC = "GILB"


def compute_prototype(features):
    """Mean and per-dimension population standard deviation of one class."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise InputError("compute_prototype needs a non-empty (n, d) array")
    mu = x.mean(axis=0)
    sigma = np.sqrt(((x - mu) ** 2).mean(axis=0))
    return mu, sigma


@dataclass
class ClassRecord:
    """One buffer entry. Vectors are held at float32 precision so checkpoints are exact.

    ``samples`` carries stored real instances for the instance-replay ablations.
    """

    class_id: int
    mu: np.ndarray
    sigma: np.ndarray
    embedding: np.ndarray
    stage: int = 0
    samples: np.ndarray = None

    def __post_init__(self):
        self.class_id = int(self.class_id)
        self.mu = f32_exact(self.mu)
        self.sigma = f32_exact(self.sigma)
        self.embedding = f32_exact(self.embedding)
        if self.mu.shape != self.sigma.shape or self.mu.ndim != 1:
            raise DimensionError("mu and sigma must be vectors of equal length")
        if np.any(self.sigma < 0):
            raise InputError("sigma must be non-negative")

    @property
    def target(self):
        return np.concatenate([self.mu, self.sigma])


@dataclass
class ReplayBuffer:
    records: list = field(default_factory=list)
    log: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __contains__(self, cid):
        return any(r.class_id == int(cid) for r in self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def class_ids(self):
        return [r.class_id for r in self.records]

    def get(self, cid):
        for r in self.records:
            if r.class_id == int(cid):
                return r
        raise InputError(f"class {cid} not in buffer")

    def copy(self):
        return ReplayBuffer(list(self.records), [dict(e) for e in self.log])


def buffer_insert(buffer, record):
    if record.class_id in buffer:
        raise ConsistencyError(f"class {record.class_id} already in the replay buffer")
    if buffer.records and record.mu.shape != buffer.records[0].mu.shape:
        raise DimensionError("record feature dim differs from buffer")
    buffer.records.append(record)
    buffer.log.append({"class_id": record.class_id, "stage": record.stage})
    return buffer


def encode_buffer(buffer, semantic_dim=None):
    d = buffer.records[0].mu.shape[0] if buffer.records else 0
    s = buffer.records[0].embedding.shape[0] if buffer.records else (semantic_dim or 0)
    w = Writer(MAGIC)
    w.u32(len(buffer), d, s)
    for r in buffer:
        w.u32(r.class_id)
        w.f32(r.mu)
        w.f32(r.sigma)
        w.f32(r.embedding)
    return w.bytes()


def decode_buffer(data, stages=None):
    """Parse a GILB blob. ``stages`` optionally maps class id to origin stage."""
    r = Reader(data, MAGIC)
    count, d, s = r.u32(3)
    buf = ReplayBuffer()
    for _ in range(count):
        (cid,) = r.u32()
        mu, sigma, emb = r.f32(d), r.f32(d), r.f32(s)
        stage = (stages or {}).get(cid, 0)
        buffer_insert(buf, ClassRecord(cid, mu, sigma, emb, stage))
    r.finish()
    return buf


def save_buffer(buffer, path):
    Path(path).write_bytes(encode_buffer(buffer))


def load_buffer(path, stages=None):
    return decode_buffer(Path(path).read_bytes(), stages)


@dataclass
class CVAEConfig:
    hidden: int = 256
    latent: int = 64
    epochs: int = 1500
    finetune_epochs: int = 300
    lr: float = 1e-3
    kl_weight: float = 0.0
    recon_weight: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.hidden, self.latent) < 1:
            raise InputError("hidden and latent must be >= 1")
        if min(self.epochs, self.finetune_epochs) < 0 or self.lr <= 0:
            raise InputError("epochs must be >= 0 and lr positive")
        if self.kl_weight < 0 or self.recon_weight < 0:
            raise InputError("loss weights must be >= 0")


@dataclass
class CVAEModel:
    """Semantic embedding -> (mu_hat, sigma_hat).

    The encoder is three dense layers ending in ``2 * latent`` units (mean and
    log-variance); a zero-initialised linear head maps the latent mean to
    ``2d`` outputs, the second half rectified by absolute value. The decoder
    (three layers, latent -> s) reconstructs the embedding and only enters the
    loss when ``recon_weight > 0``.
    """

    encoder: MLPParams
    head: MLPParams
    decoder: MLPParams
    latent: int
    feature_dim: int

    @classmethod
    def build(cls, semantic_dim, feature_dim, config, rng=None):
        rng = np.random.default_rng([config.seed, 0xC1]) if rng is None else rng
        h, z = config.hidden, config.latent
        return cls(
            MLPParams.build([semantic_dim, h, h, 2 * z], ["leaky_relu", "leaky_relu", "linear"], rng),
            MLPParams.build([z, 2 * feature_dim], ["linear"], rng, zero_last=True),
            MLPParams.build([z, h, h, semantic_dim], ["leaky_relu", "leaky_relu", "linear"], rng),
            z, feature_dim)

    @property
    def semantic_dim(self):
        return self.encoder.n_in

    def networks(self):
        return {"encoder": self.encoder, "head": self.head, "decoder": self.decoder}

    def copy(self):
        return CVAEModel(self.encoder.copy(), self.head.copy(), self.decoder.copy(), self.latent, self.feature_dim)


def cvae_encode(model, a):
    """Deterministic (mean-path) prediction of ``(mu_hat, sigma_hat)``; accepts one vector or a batch."""
    a = np.asarray(a, dtype=np.float64)
    single = a.ndim == 1
    batch = a[None] if single else a
    if batch.shape[1] != model.semantic_dim:
        raise InputError(f"embedding dim {batch.shape[1]} != {model.semantic_dim}")
    enc = predict(model.encoder, batch)
    out = predict(model.head, enc[:, :model.latent])
    d = model.feature_dim
    mu, sigma = out[:, :d], np.abs(out[:, d:])
    return (mu[0], sigma[0]) if single else (mu, sigma)


def _cvae_loss(model, graph, a, target, config, rng):
    enc = forward(model.encoder, a, graph)
    z_mean = ad.slice_cols(enc, 0, model.latent)
    z = z_mean
    if config.kl_weight > 0:
        logvar = ad.slice_cols(enc, model.latent, 2 * model.latent)
        eps = graph.constant(rng.standard_normal(z_mean.shape))
        z = z_mean + ad.exp(logvar * 0.5) * eps
    out = forward(model.head, z, graph)
    d = model.feature_dim
    pred = ad.concat([ad.slice_cols(out, 0, d), ad.absolute(ad.slice_cols(out, d, 2 * d))])
    mse = ad.mean(ad.square(pred - target))
    loss = mse
    if config.kl_weight > 0:
        kl = ad.mean(ad.exp(logvar) + ad.square(z_mean) - 1.0 - logvar) * 0.5
        loss = loss + kl * config.kl_weight
    if config.recon_weight > 0:
        recon = ad.mean(ad.square(forward(model.decoder, z, graph) - a))
        loss = loss + recon * config.recon_weight
    return loss, mse


def cvae_loss(model, records):
    """Mean squared error between predicted and stored ``mu ⊕ sigma`` over ``records``."""
    records = list(records)
    a = np.stack([r.embedding for r in records])
    mu, sigma = cvae_encode(model, a)
    return float(np.mean((np.concatenate([mu, sigma], axis=1) - np.stack([r.target for r in records])) ** 2))


def train_cvae(model, buffer, epochs, config, optimizers=None):
    """Full-batch training on every buffered record; updates ``model`` in place.

    Returns ``(model, final_loss, history)``; ``final_loss`` is the
    deterministic mean-path MSE after the last update. Pass the returned
    ``optimizers`` dict back in to continue with warm Adam moments.
    """
    if len(buffer) == 0:
        raise InputError("cannot train the CVAE on an empty buffer")
    a = np.stack([r.embedding for r in buffer])
    target = np.stack([r.target for r in buffer])
    nets = model.networks()
    if optimizers is None:
        optimizers = {k: AdamState.for_params(p, lr=config.lr) for k, p in nets.items()}
    rng = np.random.default_rng([config.seed, 0xC2, len(buffer)])
    history = []
    for epoch in range(epochs):
        g = Graph()
        try:
            loss, mse = _cvae_loss(model, g, a, target, config, rng)
            grads = backward(g, loss)
            for k, p in nets.items():
                adam_step(p, gradients(p, g, grads), optimizers[k])
        except NumericError as err:
            raise NumericError(f"CVAE loss diverged at epoch {epoch}: {err}") from err
        history.append(float(mse.value))
    final = cvae_loss(model, buffer)
    if not np.isfinite(final):
        raise NumericError(f"CVAE loss diverged at epoch {epochs}")
    return model, final, history
