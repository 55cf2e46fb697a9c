"""Conditional feature-generating WGAN with gradient penalty.

Four networks take part: the generator ``F`` (condition -> feature), the
critic ``G`` scoring (feature, semantic) pairs, the projection ``H`` mapping
features back to semantic space, and the statistics network ``T`` of the MINE
mutual-information bound. The critic objective is

    E[G(x, H(x))] - E[G(x_hat, a)] - alpha * E[(||d G / d x_hat|| - 1)^2]

which the critic maximises. The generator minimises
``-E[G(x_hat, a)] + lambda_cls * L_cls + lambda_mi * L_mi`` with
``L_mi = -(MINE estimate)``.

Two conditioning heads exist. ``semantic`` feeds ``a ⊕ z`` (the classic
feature-generation baseline); ``prototype`` feeds ``mu ⊕ (sigma * eps)``
built from a replay-buffer record, or ``mu ⊕ sigma ⊕ z`` with
``noise_mode="concat"``.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, InputError, NumericError, TrainingError
from .nn import AdamState, Graph, MLPParams, adam_step, backward, forward, gradients, input_gradient_node, predict
from .nn import autodiff as ad


@dataclass
class GANConfig:
    alpha: float = 10.0
    lambda_cls: float = 0.01
    lambda_mi: float = 0.001
    n_critic: int = 5
    batch_size: int = 64
    steps: int = 2000
    noise_dim: int = 16
    penalty_point: str = "generated"  # generated | interpolated
    condition: str = "prototype"  # prototype | semantic
    noise_mode: str = "scaled"  # scaled | concat
    real_pairing: str = "projection"  # projection: G(x, H(x)) | semantic: G(x, a)
    hidden: int = 256
    lr: float = 1e-4
    critic_lr: float = 1e-3  # None means lr; the critic runs faster than F (two time-scale rule)
    beta1: float = 0.5
    beta2: float = 0.999
    aux_lr: float = 1e-3
    cls_epochs: int = 200
    f_average: float = 0.999  # EMA decay for the returned F weights; 0 returns the last iterate
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0 or self.lambda_cls < 0 or self.lambda_mi < 0:
            raise InputError("alpha, lambda_cls and lambda_mi must be >= 0")
        if self.n_critic < 1:
            raise InputError("n_critic must be >= 1")
        if self.steps < 0 or self.cls_epochs < 0:
            raise InputError("steps and cls_epochs must be >= 0")
        if self.batch_size < 1 or self.hidden < 1:
            raise InputError("batch_size and hidden must be >= 1")
        if self.noise_dim <= 0:
            raise InputError("noise_dim must be positive")
        if not 0 <= self.f_average < 1:
            raise InputError("f_average must be in [0, 1)")
        if self.penalty_point not in ("generated", "interpolated"):
            raise InputError(f"unknown penalty_point {self.penalty_point!r}")
        if self.condition not in ("prototype", "semantic"):
            raise InputError(f"unknown condition {self.condition!r}")
        if self.noise_mode not in ("scaled", "concat"):
            raise InputError(f"unknown noise_mode {self.noise_mode!r}")
        if self.real_pairing not in ("projection", "semantic"):
            raise InputError(f"unknown real_pairing {self.real_pairing!r}")


@dataclass
class GANModels:
    F: MLPParams
    G: MLPParams
    H: MLPParams
    T: MLPParams
    condition: str
    noise_mode: str
    noise_dim: int
    feature_dim: int
    semantic_dim: int

    @classmethod
    def build(cls, feature_dim, semantic_dim, config, rng=None):
        rng = np.random.default_rng([config.seed, 0xB0]) if rng is None else rng
        d, s, h = feature_dim, semantic_dim, config.hidden
        if config.condition == "semantic":
            width = s + config.noise_dim
        elif config.noise_mode == "scaled":
            width = 2 * d
        else:
            width = 2 * d + config.noise_dim
        lrelu3 = ["leaky_relu", "leaky_relu", "linear"]
        return cls(
            F=MLPParams.build([width, h, h, d], lrelu3, rng),
            G=MLPParams.build([d + s, h, 1], ["leaky_relu", "linear"], rng),
            H=MLPParams.build([d, h, h, s], lrelu3, rng),
            T=MLPParams.build([d + s, h, 1], ["leaky_relu", "linear"], rng),
            condition=config.condition, noise_mode=config.noise_mode, noise_dim=config.noise_dim,
            feature_dim=d, semantic_dim=s)

    def networks(self):
        return {"F": self.F, "G": self.G, "H": self.H, "T": self.T}

    def copy(self):
        return GANModels(self.F.copy(), self.G.copy(), self.H.copy(), self.T.copy(), self.condition,
                         self.noise_mode, self.noise_dim, self.feature_dim, self.semantic_dim)


def _as_rng(seed_or_rng):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng([int(seed_or_rng), 0xB5])


def generator_input(models, rng, a=None, mu=None, sigma=None):
    """Assemble F's input rows for the models' conditioning head."""
    if models.condition == "semantic":
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        if a.shape[1] != models.semantic_dim:
            raise InputError(f"embedding dim {a.shape[1]} != {models.semantic_dim}")
        return np.concatenate([a, rng.standard_normal((len(a), models.noise_dim))], axis=1)
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    if mu.shape != sigma.shape or mu.shape[1] != models.feature_dim:
        raise InputError(f"prototype/noise dims {mu.shape}/{sigma.shape} do not match feature dim {models.feature_dim}")
    if models.noise_mode == "scaled":
        return np.concatenate([mu, sigma * rng.standard_normal(mu.shape)], axis=1)
    return np.concatenate([mu, sigma, rng.standard_normal((len(mu), models.noise_dim))], axis=1)


def synthesize(models, mu, sigma, count, seed):
    """``count`` features ``F(mu ⊕ sigma * eps_j)`` for one class (prototype head)."""
    if count < 1:
        raise InputError("count must be >= 1")
    if models.condition != "prototype":
        raise ContractError("synthesize needs a prototype-conditioned generator")
    rng = _as_rng(seed)
    mu = np.broadcast_to(np.asarray(mu, dtype=np.float64), (count, np.size(mu)))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (count, np.size(sigma)))
    return predict(models.F, generator_input(models, rng, mu=mu, sigma=sigma))


def synthesize_semantic(models, a, count, seed):
    """``count`` features ``F(a ⊕ z_j)`` for one class (semantic head)."""
    if count < 1:
        raise InputError("count must be >= 1")
    if models.condition != "semantic":
        raise ContractError("synthesize_semantic needs a semantic-conditioned generator")
    rng = _as_rng(seed)
    a = np.broadcast_to(np.asarray(a, dtype=np.float64), (count, models.semantic_dim))
    return predict(models.F, generator_input(models, rng, a=a))


def critic_loss(models, x, a, x_fake, config, graph, rng=None, h_real=None):
    """Critic objective (to be maximised). Returns ``(loss, parts)`` with the three term nodes."""
    x = np.asarray(x, dtype=np.float64)
    x_fake = graph.as_node(x_fake)
    if h_real is None:
        h_real = predict(models.H, x) if config.real_pairing == "projection" else a
    d = models.feature_dim
    real = ad.mean(forward(models.G, np.concatenate([x, h_real], axis=1), graph))
    fake = ad.mean(forward(models.G, ad.concat([x_fake, graph.constant(a)]), graph))
    if config.penalty_point == "generated":
        point = x_fake.value
    else:
        rng = np.random.default_rng(0) if rng is None else rng
        e = rng.uniform(size=(len(x), 1))
        point = e * x + (1.0 - e) * x_fake.value
    grad = input_gradient_node(models.G, graph.constant(np.concatenate([point, a], axis=1)), graph)
    penalty = ad.mean(ad.square(ad.norm(ad.slice_cols(grad, 0, d), axis=1) - 1.0))
    loss = real - fake - penalty * config.alpha
    return loss, {"real": real, "fake": fake, "penalty": penalty}


def projection_loss(H, x, a, graph):
    return ad.mean(ad.square(forward(H, x, graph) - np.asarray(a, dtype=np.float64)))


def cls_regularizer(classifier, x_hat, labels, graph):
    """Mean NLL of class indices ``labels`` under the frozen classifier's softmax."""
    return ad.softmax_cross_entropy(forward(classifier, x_hat, graph), labels)


def mi_lower_bound(T, x_hat, a, a_shuffled, graph):
    """MINE (Donsker-Varadhan) estimate ``mean T(joint) - log mean exp T(marginal)``."""
    x_hat = graph.as_node(x_hat)
    joint = forward(T, ad.concat([x_hat, graph.constant(a)]), graph)
    marginal = forward(T, ad.concat([x_hat, graph.constant(a_shuffled)]), graph)
    n = marginal.shape[0]
    return ad.mean(joint) - (ad.logsumexp(marginal) - math.log(n))


@dataclass
class FeatureClassifier:
    params: MLPParams
    class_ids: list

    def indices(self, labels):
        lookup = {c: i for i, c in enumerate(self.class_ids)}
        try:
            return np.array([lookup[int(c)] for c in labels])
        except KeyError as err:
            raise InputError(f"label {err.args[0]} outside classifier range") from None


def train_feature_classifier(data, epochs, lr, seed):
    """Linear softmax classifier on real features, full batch."""
    rng = np.random.default_rng([seed, 0xB2])
    clf = FeatureClassifier(MLPParams.build([data.dim, len(data.classes)], ["linear"], rng), data.classes)
    x = data.features.astype(np.float64)
    y = clf.indices(data.labels)
    opt = AdamState.for_params(clf.params, lr=lr)
    for _ in range(epochs):
        g = Graph()
        loss = ad.softmax_cross_entropy(forward(clf.params, x, g), y)
        adam_step(clf.params, gradients(clf.params, g, backward(g, loss)), opt)
    return clf


class _Conditions:
    """Per-label lookup of generator conditions and critic embeddings."""

    def __init__(self, models, embeddings, buffer, class_ids):
        self.models = models
        self.a = {c: embeddings[c] for c in class_ids}
        if models.condition == "prototype":
            if buffer is None:
                raise InputError("prototype conditioning needs a replay buffer")
            self.mu = {c: buffer.get(c).mu for c in class_ids}
            self.sigma = {c: buffer.get(c).sigma for c in class_ids}

    def embeddings(self, labels):
        return np.stack([self.a[c] for c in labels])

    def generator_input(self, labels, rng):
        if self.models.condition == "semantic":
            return generator_input(self.models, rng, a=self.embeddings(labels))
        return generator_input(self.models, rng, mu=np.stack([self.mu[c] for c in labels]),
                               sigma=np.stack([self.sigma[c] for c in labels]))


def _guard(step, component, fn):
    try:
        out = fn()
    except NumericError as err:
        raise TrainingError(f"{component} loss diverged at step {step}: {err}", step, component) from err
    return out


def train_gan(data, embeddings, config, buffer=None, models=None, classifier=None, callback=None):
    """Adversarial training of F, G, H and T on ``data``.

    ``buffer`` supplies (mu, sigma) conditions for the prototype head. Pass
    existing ``models`` to continue training. ``callback(step, models)`` runs
    after every generator step. Returns ``(models, history)``
    where history holds one dict of loss components per generator step.
    """
    if len(data) == 0:
        raise InputError("empty training data")
    classes = data.classes
    missing = [c for c in classes if c not in embeddings]
    if missing:
        raise InputError(f"no embedding for classes {missing}")
    if models is None:
        models = GANModels.build(data.dim, embeddings.dim, config)
    cond = _Conditions(models, embeddings, buffer, classes)
    rng = np.random.default_rng([config.seed, 0xB1])
    x_all = data.features.astype(np.float64)
    y_all = data.labels
    if config.lambda_cls > 0 and classifier is None and config.steps > 0:
        classifier = train_feature_classifier(data, config.cls_epochs, config.aux_lr, config.seed)
    adv = dict(beta1=config.beta1, beta2=config.beta2)
    critic_lr = config.lr if config.critic_lr is None else config.critic_lr
    opt = {"F": AdamState.for_params(models.F, lr=config.lr, **adv),
           "G": AdamState.for_params(models.G, lr=critic_lr, **adv),
           "H": AdamState.for_params(models.H, lr=config.aux_lr),
           "T": AdamState.for_params(models.T, lr=config.aux_lr)}
    n, bs = len(y_all), config.batch_size
    history = []
    # the adversarial game keeps F's class means jittering; the averaged iterate sits near the centre
    f_avg = models.F.copy() if config.f_average > 0 and config.steps > 0 else None

    for step in range(config.steps):
        rec = {"step": step}
        for _ in range(config.n_critic):
            pos = rng.integers(0, n, bs)
            x, y = x_all[pos], y_all[pos]
            a = cond.embeddings(y)
            x_fake = predict(models.F, cond.generator_input(y, rng))

            def critic_update():
                g = Graph()
                loss, parts = critic_loss(models, x, a, x_fake, config, g, rng)
                grads = backward(g, loss * -1.0)
                adam_step(models.G, gradients(models.G, g, grads), opt["G"])
                return loss, parts

            loss, parts = _guard(step, "critic", critic_update)
        rec["critic"] = float(loss.value)
        rec["wasserstein"] = float(parts["real"].value - parts["fake"].value)
        rec["penalty"] = float(parts["penalty"].value)

        pos = rng.integers(0, n, bs)
        x, y = x_all[pos], y_all[pos]
        a = cond.embeddings(y)
        a_shuffled = a[rng.permutation(bs)]
        gin = cond.generator_input(y, rng)

        def generator_update():
            g = Graph()
            x_hat = forward(models.F, gin, g)
            adv_term = ad.mean(forward(models.G, ad.concat([x_hat, g.constant(a)]), g)) * -1.0
            total = adv_term
            cls = mi = None
            if config.lambda_cls > 0:
                cls = cls_regularizer(classifier.params, x_hat, classifier.indices(y), g)
                total = total + cls * config.lambda_cls
            if config.lambda_mi > 0:
                mi = mi_lower_bound(models.T, x_hat, a, a_shuffled, g)
                total = total - mi * config.lambda_mi
            adam_step(models.F, gradients(models.F, g, backward(g, total)), opt["F"])
            return x_hat.value, total, adv_term, cls, mi

        x_hat, total, adv_term, cls, mi = _guard(step, "generator", generator_update)
        rec["generator"] = float(total.value)
        rec["adversarial"] = float(adv_term.value)
        rec["cls"] = 0.0 if cls is None else float(cls.value)
        if f_avg is not None:
            decay = min(config.f_average, (1.0 + step) / (10.0 + step))
            for avg, cur in zip(f_avg.arrays(), models.F.arrays()):
                avg *= decay
                avg += (1.0 - decay) * cur

        if config.lambda_mi > 0:
            def mi_update():
                g = Graph()
                est = mi_lower_bound(models.T, x_hat, a, a_shuffled, g)
                adam_step(models.T, gradients(models.T, g, backward(g, est * -1.0)), opt["T"])
                return est

            rec["mi"] = float(_guard(step, "mi", mi_update).value)
        else:
            rec["mi"] = 0.0

        def projection_update():
            g = Graph()
            loss = projection_loss(models.H, x, a, g)
            adam_step(models.H, gradients(models.H, g, backward(g, loss)), opt["H"])
            return loss

        rec["projection"] = float(_guard(step, "projection", projection_update).value)
        history.append(rec)
        if callback is not None:
            callback(step, models)
    if f_avg is not None:
        for cur, avg in zip(models.F.arrays(), f_avg.arrays()):
            cur[...] = avg
    return models, history
