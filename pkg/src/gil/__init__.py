"""Generative iterative learning: continual and zero-shot learning with a feature-generating GAN."""

from .benchmark import Benchmark, BenchmarkConfig, assemble, generate
from .config import RunConfig, load_config
from .data import Dataset, SplitSpec, SynthConfig, holdout, load_features, save_features, split, synth_dataset
from .errors import (CapabilityError, ConfigError, ConsistencyError, ContractError, DimensionError, FormatError,
                     GenerationError, GILError, InputError, NumericError, TrainingError)
from .eval import (AblationSpec, RunResult, aggregate_runs, forgetting_eval, harmonic_mean, run_ablation,
                   top_k_accuracy)
from .gan import GANConfig, GANModels, critic_loss, synthesize, train_gan
from .memory import (ClassRecord, CVAEConfig, CVAEModel, ReplayBuffer, buffer_insert, compute_prototype, cvae_encode,
                     train_cvae)
from .pipeline import (ExperimentState, GILConfig, PipelineConfig, class_schedule, incremental_step, initialize,
                       predict, run_baseline, run_gil, update_stage, zsl_adapt)
from .semantic import EmbeddingTable, load_embeddings, random_embeddings, save_embeddings

__version__ = "0.1.0"
