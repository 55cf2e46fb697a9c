"""Experiment checkpoints: a GILB buffer, a GILM model file and a JSON manifest.

GILM layout (little-endian): magic "GILM", u32 version = 1, u32 block count,
then per block u32 name length, UTF-8 name, u32 ndim, ndim x u32 shape and
prod(shape) x f32 data. Network architecture (widths and activations) lives
in the manifest, so the model file only carries numbers.

Parameters are stored at float32 precision. Loading a checkpoint therefore
rounds weights; evaluate a reloaded state when numbers must match a later
evaluation of the same checkpoint.
"""

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .binio import Reader, Writer
from .errors import FormatError, InputError
from .gan import GANConfig, GANModels
from .memory import CVAEConfig, CVAEModel, ReplayBuffer, decode_buffer, encode_buffer
from .nn import Layer, MLPParams
from .pipeline import ClassifierHead, ExperimentState, GILConfig, PipelineConfig

MAGIC = "GILM"
FILES = {"buffer": "buffer.gilb", "models": "models.gilm", "manifest": "manifest.json"}


def encode_blocks(blocks):
    """Serialise ``[(name, array), ...]``; order is preserved."""
    w = Writer(MAGIC)
    w.u32(len(blocks))
    for name, arr in blocks:
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        w.u32(len(raw))
        w.raw(raw)
        w.u32(arr.ndim, *arr.shape)
        w.f32(arr)
    return w.bytes()


def decode_blocks(data):
    r = Reader(data, MAGIC)
    (count,) = r.u32()
    blocks = {}
    for _ in range(count):
        offset = r.pos
        (n,) = r.u32()
        try:
            name = r.raw(n).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("block name is not UTF-8", offset) from None
        if name in blocks:
            raise FormatError(f"duplicate block {name!r}", offset)
        (ndim,) = r.u32()
        shape = r.u32(ndim) if ndim else ()
        blocks[name] = r.f32(int(np.prod(shape))).reshape(shape).astype(np.float64)
    r.finish()
    return blocks


def architecture(params):
    return {"sizes": [params.n_in] + [l.n_out for l in params.layers], "activations": params.activations}


def _params_blocks(prefix, params):
    return [(f"{prefix}.{name}", arr) for name, arr in params.named_arrays()]


def _params_from(prefix, arch, blocks):
    layers = []
    for i, act in enumerate(arch["activations"]):
        try:
            w, b = blocks[f"{prefix}.{i}.weight"], blocks[f"{prefix}.{i}.bias"]
        except KeyError as err:
            raise FormatError(f"missing parameter block {err.args[0]}") from None
        if w.shape != (arch["sizes"][i], arch["sizes"][i + 1]) or b.shape != (arch["sizes"][i + 1],):
            raise FormatError(f"block {prefix}.{i} has shape {w.shape}, manifest says {arch['sizes'][i:i + 2]}")
        layers.append(Layer(w, b, act))
    return MLPParams(layers)


def _networks(state):
    nets = {f"gan.{k}": v for k, v in state.gan.networks().items()}
    nets["head"] = state.head
    if state.cvae is not None:
        nets.update({f"cvae.{k}": v for k, v in state.cvae.networks().items()})
    return nets


def config_to_dict(config):
    return asdict(config)


def config_from_dict(d):
    return GILConfig(GANConfig(**d["gan"]), CVAEConfig(**d["cvae"]), PipelineConfig(**d["pipeline"]))


def manifest(state):
    nets = _networks(state)
    return {
        "format": 1,
        "mode": state.mode,
        "seed": state.seed,
        "stage": state.stage,
        "schedule": state.schedule,
        "mean_count": state.mean_count,
        "f_checksum": state.f_checksum,
        "gan": {"condition": state.gan.condition, "noise_mode": state.gan.noise_mode,
                "noise_dim": state.gan.noise_dim, "feature_dim": state.gan.feature_dim,
                "semantic_dim": state.gan.semantic_dim},
        "cvae": None if state.cvae is None else {"latent": state.cvae.latent, "feature_dim": state.cvae.feature_dim},
        "architecture": {k: architecture(v) for k, v in nets.items()},
        "classifier": {"class_ids": state.classifier.class_ids, "scale": state.classifier.scale},
        "buffer_stages": {str(r.class_id): r.stage for r in state.buffer},
        "config": config_to_dict(state.config),
        "log": state.log,
        "stage_log": state.stage_log,
    }


def save_state(state, directory):
    """Write the three checkpoint files into ``directory``; returns their paths."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    blocks = []
    for name, params in _networks(state).items():
        blocks += _params_blocks(name, params)
    blocks.append(("classifier.anchors", state.classifier.anchors))
    for r in state.buffer:
        if r.samples is not None:
            blocks.append((f"samples.{r.class_id}", r.samples))
    paths = {k: out / v for k, v in FILES.items()}
    paths["buffer"].write_bytes(encode_buffer(state.buffer, state.gan.semantic_dim))
    paths["models"].write_bytes(encode_blocks(blocks))
    paths["manifest"].write_text(json.dumps(manifest(state), indent=2, sort_keys=True) + "\n")
    return paths


def load_state(directory, embeddings):
    d = Path(directory)
    for name in FILES.values():
        if not (d / name).is_file():
            raise InputError(f"missing checkpoint file {d / name}")
    man = json.loads((d / FILES["manifest"]).read_text())
    stages = {int(k): v for k, v in man["buffer_stages"].items()}
    buffer = decode_buffer((d / FILES["buffer"]).read_bytes(), stages)
    blocks = decode_blocks((d / FILES["models"]).read_bytes())
    arch = man["architecture"]
    nets = {k: _params_from(k, a, blocks) for k, a in arch.items()}
    for r in buffer:
        r.samples = blocks.get(f"samples.{r.class_id}")
    g = man["gan"]
    gan = GANModels(nets["gan.F"], nets["gan.G"], nets["gan.H"], nets["gan.T"], g["condition"], g["noise_mode"],
                    g["noise_dim"], g["feature_dim"], g["semantic_dim"])
    cvae = None
    if man["cvae"] is not None:
        cvae = CVAEModel(nets["cvae.encoder"], nets["cvae.head"], nets["cvae.decoder"], man["cvae"]["latent"],
                         man["cvae"]["feature_dim"])
    cl = man["classifier"]
    classifier = ClassifierHead(cl["class_ids"], blocks["classifier.anchors"], cl["scale"])
    return ExperimentState(
        config=config_from_dict(man["config"]), embeddings=embeddings, buffer=buffer if len(buffer) else ReplayBuffer(),
        cvae=cvae, gan=gan, head=nets["head"], classifier=classifier, seed=man["seed"], stage=man["stage"],
        schedule=man["schedule"], log=man["log"], stage_log=man["stage_log"], f_checksum=gan.F.checksum(),
        mean_count=man["mean_count"], mode=man["mode"])
