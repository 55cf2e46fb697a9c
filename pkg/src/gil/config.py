"""One JSON document configuring data synthesis, models, training and the run harness.

Every field has a default. A document may name a ``preset`` whose values are
applied before the document's own sections; unknown keys anywhere are
rejected. The effective config, after merging, is what gets echoed into output
directories, and loading that echo reproduces the run.
"""

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .benchmark import BenchmarkConfig
from .errors import ConfigError, GILError
from .gan import GANConfig
from .memory import CVAEConfig
from .pipeline import GILConfig, PipelineConfig

SECTIONS = {"data": BenchmarkConfig, "gan": GANConfig, "cvae": CVAEConfig, "pipeline": PipelineConfig}

PRESETS = {
    "desk": {},
    # small widths and short schedules; the acceptance runs use this
    "fast": {
        "gan": {"hidden": 128, "steps": 2000},
        "cvae": {"hidden": 64, "latent": 32, "epochs": 1000, "finetune_epochs": 200},
        "pipeline": {"head_hidden": 128, "epochs": 50, "adapt_epochs": 50},
    },
    # widths of the original video-scale setup; far too slow for a laptop
    "paper": {
        "data": {"semantic_dim": 768},
        "gan": {"hidden": 4096},
        "cvae": {"hidden": 4096, "latent": 512},
        "pipeline": {"head_hidden": 4096},
    },
}


@dataclass
class RunConfig:
    preset: str = "desk"
    data: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    gan: GANConfig = field(default_factory=GANConfig)
    cvae: CVAEConfig = field(default_factory=CVAEConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    stage_eval: bool = True

    @property
    def model(self):
        return GILConfig(self.gan, self.cvae, self.pipeline)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _section(cls, values, where):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}; known: {', '.join(sorted(known))}")
    try:
        return cls(**values)
    except (GILError, TypeError) as err:
        raise ConfigError(f"invalid {where}: {err}") from err


def from_dict(doc):
    """Build a :class:`RunConfig` from a parsed JSON document."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    top = {"preset", "seeds", "stage_eval", *SECTIONS}
    unknown = sorted(set(doc) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}; known: {', '.join(sorted(top))}")
    preset = doc.get("preset", "desk")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; expected one of {', '.join(PRESETS)}")
    kwargs = {"preset": preset}
    for name, cls in SECTIONS.items():
        section = doc.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"{name} must be a JSON object")
        kwargs[name] = _section(cls, {**PRESETS[preset].get(name, {}), **section}, name)
    seeds = doc.get("seeds", [0, 1, 2, 3, 4])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError("seeds must be a non-empty list of non-negative integers")
    kwargs["seeds"] = seeds
    stage_eval = doc.get("stage_eval", True)
    if not isinstance(stage_eval, bool):
        raise ConfigError("stage_eval must be true or false")
    kwargs["stage_eval"] = stage_eval
    return RunConfig(**kwargs)


def load_config(path=None):
    if path is None:
        return from_dict({})
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path} is not valid JSON: {err}") from err
    return from_dict(doc)
