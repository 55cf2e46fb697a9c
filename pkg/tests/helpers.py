"""Independent oracles shared by the test modules."""

import math

import numpy as np

from gil.benchmark import BenchmarkConfig
from gil.gan import GANConfig
from gil.memory import ClassRecord, CVAEConfig, ReplayBuffer, buffer_insert, compute_prototype
from gil.nn import Graph, backward
from gil.nn import autodiff as ad
from gil.pipeline import GILConfig, PipelineConfig


def central_difference(f, x, step=1e-5):
    """Gradient of scalar ``f`` at array ``x`` by central differences (perturbs ``x`` in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + step
        hi = f()
        x[idx] = old - step
        lo = f()
        x[idx] = old
        grad[idx] = (hi - lo) / (2 * step)
    return grad


def max_relative_error(a, b, floor=1e-6):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def scalar_forward(params, row):
    """Forward pass of an MLP on one input row using plain Python floats."""
    h = [float(v) for v in row]
    for layer in params.layers:
        w, b = layer.weight, layer.bias
        z = []
        for j in range(w.shape[1]):
            acc = float(b[j])
            for i in range(w.shape[0]):
                acc += h[i] * float(w[i, j])
            z.append(acc)
        if layer.activation == "relu":
            z = [max(v, 0.0) for v in z]
        elif layer.activation == "leaky_relu":
            z = [v if v > 0 else 0.2 * v for v in z]
        elif layer.activation == "tanh":
            z = [math.tanh(v) for v in z]
        h = z
    return h


def two_pass_mean_std(rows):
    n = len(rows)
    d = len(rows[0])
    mean = [sum(r[j] for r in rows) / n for j in range(d)]
    var = [sum((r[j] - mean[j]) ** 2 for r in rows) / n for j in range(d)]
    return np.array(mean), np.sqrt(np.array(var))


def brute_top_k(scores, labels, k, class_ids):
    """Top-k hit rate ranking candidates by (-score, class id) with plain sorting."""
    hits = 0
    for row, label in zip(scores, labels):
        ranked = sorted(zip(class_ids, row), key=lambda t: (-t[1], t[0]))
        hits += label in [c for c, _ in ranked[:k]]
    return hits / len(labels)


# a few-second end-to-end configuration for plumbing tests
TINY = GILConfig(
    GANConfig(hidden=16, steps=40, noise_dim=4, batch_size=32, cls_epochs=20),
    CVAEConfig(hidden=16, latent=8, epochs=200, finetune_epochs=60),
    PipelineConfig(head_hidden=32, epochs=8, adapt_epochs=10, batch_size=64),
)
TINY_DATA = BenchmarkConfig(n_pretrain=8, n_finetune=9, samples_min=10, samples_max=16, feature_dim=8,
                            semantic_dim=48, seen_fraction=2 / 3)


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x) + 0.0


# each entry: (name, input shapes, builder(graph, nodes) -> node)
OP_CASES = [
    ("add", [(3, 4), (4,)], lambda g, n: n[0] + n[1]),
    ("sub", [(3, 4), (3, 1)], lambda g, n: n[0] - n[1]),
    ("mul", [(3, 4), (3, 4)], lambda g, n: n[0] * n[1]),
    ("div", [(3, 4), (3, 4)], lambda g, n: n[0] / (ad.square(n[1]) + 1.0)),
    ("matmul", [(3, 4), (4, 2)], lambda g, n: n[0] @ n[1]),
    ("transpose", [(3, 4)], lambda g, n: ad.transpose(n[0])),
    ("relu", [(3, 4)], lambda g, n: ad.relu(n[0])),
    ("leaky_relu", [(3, 4)], lambda g, n: ad.leaky_relu(n[0])),
    ("tanh", [(3, 4)], lambda g, n: ad.tanh(n[0])),
    ("abs", [(3, 4)], lambda g, n: ad.absolute(n[0])),
    ("exp", [(3, 4)], lambda g, n: ad.exp(n[0])),
    ("square", [(3, 4)], lambda g, n: ad.square(n[0])),
    ("sum", [(3, 4)], lambda g, n: ad.total(n[0], axis=0)),
    ("mean", [(3, 4)], lambda g, n: ad.mean(n[0], axis=1, keepdims=True)),
    ("norm", [(3, 4)], lambda g, n: ad.norm(n[0])),
    ("row_norm", [(3, 4)], lambda g, n: ad.norm(n[0], axis=1)),
    ("logsumexp", [(3, 4)], lambda g, n: ad.logsumexp(n[0])),
    ("concat", [(3, 4), (3, 2)], lambda g, n: ad.concat([n[0], n[1]])),
    ("slice", [(3, 5)], lambda g, n: ad.slice_cols(n[0], 1, 4)),
    ("softmax_ce", [(4, 3)], lambda g, n: ad.softmax_cross_entropy(n[0], [0, 2, 1, 2])),
]


def check_op(builder, shapes, seed):
    """Max relative error between backward and central differences for one op case."""
    rng = np.random.default_rng(seed)
    arrays = [_away_from_zero(rng, s) for s in shapes]
    probe = None

    def run(record=False):
        nonlocal probe
        g = Graph()
        nodes = [g.variable(a) for a in arrays]
        out = builder(g, nodes)
        if probe is None:
            probe = np.random.default_rng(seed + 1).standard_normal(out.shape)
        loss = ad.total(out * probe)
        return (g, nodes, loss) if record else float(loss.value)

    g, nodes, loss = run(record=True)
    grads = backward(g, loss)
    return max(max_relative_error(grads[n.id], central_difference(run, a)) for n, a in zip(nodes, arrays))


def toy_buffer(ds, emb):
    buf = ReplayBuffer()
    for c in ds.classes:
        mu, sigma = compute_prototype(ds.features_of(c))
        buffer_insert(buf, ClassRecord(c, mu, sigma, emb[c]))
    return buf
