"""Metrics, per-seed experiment runs, multi-seed aggregation and the ablation harness."""

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .benchmark import assemble
from .errors import ConfigError, InputError
from .pipeline import (anchors_for, pretrain_gan, predict, predict_scores, run_baseline, run_gil, initialize,
                       synthesize_for_classes, zsl_adapt)

RESULT_SCHEMA = {
    "type": "object",
    "required": ["seed", "mode", "zsl_top1", "zsl_top5", "u", "s", "H", "retention", "stage_curve", "config"],
    "properties": {
        "seed": {"type": "integer"},
        "mode": {"enum": ["gil", "baseline"]},
        "zsl_top1": {"type": "number", "minimum": 0, "maximum": 1},
        "zsl_top5": {"type": "number", "minimum": 0, "maximum": 1},
        "u": {"type": "number", "minimum": 0, "maximum": 1},
        "s": {"type": "number", "minimum": 0, "maximum": 1},
        "H": {"type": "number", "minimum": 0, "maximum": 1},
        "retention": {"type": "number", "minimum": 0, "maximum": 1},
        "stage_curve": {
            "type": "array",
            "items": {"type": "object", "required": ["stage", "completion", "accuracy"],
                      "properties": {"stage": {"type": "integer", "minimum": 1},
                                     "completion": {"type": "number", "minimum": 0, "maximum": 100},
                                     "accuracy": {"type": "number", "minimum": 0, "maximum": 1}}}},
        "config": {"type": "object"},
    },
}
METRICS = ("zsl_top1", "zsl_top5", "u", "s", "H", "retention")


def top_k_accuracy(scores, labels, k, class_ids=None):
    """Fraction of rows whose label is among the ``k`` best-scoring columns.

    Columns correspond to ``class_ids`` (default ``0..K-1``); equal scores are
    ranked by ascending class id before the cut-off.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    labels = np.asarray(labels)
    if len(labels) == 0 or scores.size == 0:
        raise InputError("top-k accuracy of an empty instance set")
    n_cls = scores.shape[1]
    if not 1 <= k <= n_cls:
        raise InputError(f"k={k} outside [1, {n_cls}]")
    ids = np.arange(n_cls) if class_ids is None else np.asarray(class_ids)
    order = np.argsort(ids, kind="stable")
    ids, scores = ids[order], scores[:, order]
    top = ids[np.argsort(-scores, axis=1, kind="stable")[:, :k]]
    return float(np.mean(np.any(top == labels[:, None], axis=1)))


def harmonic_mean(u, s):
    if u < 0 or s < 0:
        raise InputError("accuracies must be non-negative")
    return 0.0 if u + s == 0 else 2.0 * u * s / (u + s)


def accuracy(head, dataset, anchors):
    if len(dataset) == 0:
        raise InputError("empty test split")
    return float(np.mean(predict(head, dataset.features, anchors) == dataset.labels))


def forgetting_eval(state, test, anchors):
    """Top-1 accuracy of the unadapted head on pretraining classes."""
    return accuracy(state.head, test, anchors)


def zsl_metrics(state, test, class_ids):
    adapted = zsl_adapt(state, class_ids)
    scores, ids = predict_scores(adapted.head, test.features, anchors_for(state, class_ids, adapted.head))
    return {"zsl_top1": top_k_accuracy(scores, test.labels, 1, ids),
            "zsl_top5": top_k_accuracy(scores, test.labels, min(5, len(ids)), ids)}


def gzsl_metrics(state, seen_test, unseen_test, seen, unseen):
    targets = sorted(set(seen) | set(unseen))
    adapted = zsl_adapt(state, targets)
    anchors = anchors_for(state, targets, adapted.head)
    u = accuracy(adapted.head, unseen_test, anchors)
    s = accuracy(adapted.head, seen_test, anchors)
    return {"u": u, "s": s, "H": harmonic_mean(u, s)}


@dataclass
class RunResult:
    seed: int
    mode: str
    zsl_top1: float
    zsl_top5: float
    u: float
    s: float
    H: float
    retention: float
    stage_curve: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for m in METRICS:
            if not 0 <= getattr(self, m) <= 1:
                raise InputError(f"{m} = {getattr(self, m)} outside [0, 1]")

    def to_dict(self):
        return asdict(self)


def evaluate_state(state, bench):
    out = zsl_metrics(state, bench.unseen_test, bench.split.unseen)
    out.update(gzsl_metrics(state, bench.seen_test, bench.unseen_test, bench.split.seen, bench.split.unseen))
    pre = bench.pretrain_test.classes
    out["retention"] = forgetting_eval(state, bench.pretrain_test, anchors_for(state, pre))
    return out


def run_experiment(bench, config, seed, mode="gil", stage_eval=True, gan=None, echo=None, evaluate=True):
    """One seeded run on an assembled benchmark. Returns ``(state, RunResult or None)``."""
    if mode == "gil":
        def stage_accuracy(st):
            return {"accuracy": zsl_metrics(st, bench.unseen_test, bench.split.unseen)["zsl_top1"]}

        evaluator = stage_accuracy if stage_eval else None
        initial = initialize(bench.pretrain_train, bench.embeddings, config, seed, gan=gan)
        state = run_gil(bench.pretrain_train, bench.seen_train, bench.embeddings, config, evaluator, seed, initial)
    elif mode == "baseline":
        state = run_baseline(bench.pretrain_train, bench.seen_train, bench.embeddings, config, seed)
    else:
        raise ConfigError(f"unknown mode {mode!r}; expected gil or baseline")
    return state, result_for(state, bench, echo) if evaluate else None


def result_for(state, bench, echo=None):
    curve = [{"stage": e["stage"], "completion": e["completion"], "accuracy": e["accuracy"]}
             for e in state.stage_log if "accuracy" in e]
    return RunResult(seed=state.seed, mode=state.mode, stage_curve=curve,
                     config=echo if echo is not None else {}, **evaluate_state(state, bench))


def aggregate_runs(results):
    """Mean and population std per metric over runs sharing one config."""
    results = list(results)
    if len(results) < 2:
        raise InputError("aggregation needs at least 2 results")
    cfg = json.dumps(results[0].config, sort_keys=True)
    if any(json.dumps(r.config, sort_keys=True) != cfg or r.mode != results[0].mode for r in results):
        raise InputError("cannot aggregate runs with different configs")
    out = {}
    for m in METRICS:
        v = np.array([getattr(r, m) for r in results], dtype=np.float64)
        out[m] = (float(v.mean()), float(np.sqrt(np.mean((v - v.mean()) ** 2))))
    return out


ABLATIONS = {
    "memory-variant": ("memory_variant", ["none", "random", "proto-random", "proto-noise"]),
    "sampling-percent": ("schedule_percent", [1, 5, 10, 20, 50, 100]),
    "synth-percent": ("synth_percent", [20, 50, 70, 100, 120, 150, 200]),
    "data-mix": ("data_mix", ["real", "mix", "synthetic"]),
    "generator-freeze": ("generator_mode", ["frozen", "finetune"]),
    "embedding-source": ("embedding_noise", [0.0, 0.5, 1.0, 2.0]),
}
ROW_LABELS = {
    "none": "No Mem", "random": "Rand", "proto-random": "Proto + Rand", "proto-noise": "Proto + Noise",
    "real": "Real only", "mix": "Real + Synthetic (50:50)", "synthetic": "Synthetic only",
    "frozen": "Frozen", "finetune": "Incremental fine-tune",
}


@dataclass
class AblationSpec:
    name: str
    values: list = None
    seeds: list = field(default_factory=lambda: [0, 1])

    def __post_init__(self):
        if self.name not in ABLATIONS:
            raise InputError(f"unknown ablation {self.name!r}; valid names: {', '.join(ABLATIONS)}")
        if self.values is None:
            self.values = list(ABLATIONS[self.name][1])
        if not self.values:
            raise InputError("ablation grid is empty")
        if len(self.seeds) < 2:
            raise InputError("ablations need at least 2 seeds")

    @property
    def field(self):
        return ABLATIONS[self.name][0]

    def label(self, value):
        return ROW_LABELS.get(value, f"{value:g}" if isinstance(value, (int, float)) else str(value))


def workers():
    """Thread count for independent cells, from the ``GIL_WORKERS`` environment variable."""
    raw = os.environ.get("GIL_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"GIL_WORKERS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("GIL_WORKERS must be >= 1")
    return n


def map_ordered(fn, items):
    items = list(items)
    n = min(workers(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(n) as pool:
        return list(pool.map(fn, items))


def run_ablation(spec, config, data, bench_config, out_dir=None, stage_eval=False, gans=None):
    """Run every (grid value, seed) cell with paired seeds and return one row per value.

    ``data`` is ``(pretrain, finetune, embeddings)``. With ``out_dir`` each
    finished cell is written as JSON and reused on the next call, so an
    interrupted grid resumes where it stopped. ``gans`` maps a seed to an
    already pretrained GAN for that seed, and is filled in for seeds it lacks.
    """
    pretrain, finetune, emb = data
    cell_dir = Path(out_dir) / "cells" if out_dir is not None else None
    gans = {} if gans is None else gans

    def cell(args):
        value, seed = args
        path = cell_dir / f"{spec.name}={value}" / f"seed{seed}.json" if cell_dir is not None else None
        if path is not None and path.is_file():
            d = json.loads(path.read_text())
            return RunResult(**d)
        noise = value if spec.field == "embedding_noise" else 0.0
        bench = assemble(pretrain, finetune, emb, bench_config, seed, embedding_noise=noise)
        cfg = config if spec.field == "embedding_noise" else replace(
            config, pipeline=replace(config.pipeline, **{spec.field: value}))
        echo = {"ablation": spec.name, "value": value, "config": asdict(cfg), "data": asdict(bench_config)}
        _, res = run_experiment(bench, cfg, seed, "gil", stage_eval, gan=gans.get(seed) if noise == 0 else None,
                                echo=echo)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(res.to_dict(), indent=2, sort_keys=True) + "\n")
        return res

    # pretrained GANs are shared by every cell of a seed: F never depends on the treatment
    if spec.field != "embedding_noise":
        for seed in spec.seeds:
            if seed not in gans:
                bench = assemble(pretrain, finetune, emb, bench_config, seed)
                gans[seed] = pretrain_gan(bench.pretrain_train, emb, config, seed)[0]
    cells = [(v, s) for v in spec.values for s in spec.seeds]
    results = dict(zip(cells, map_ordered(cell, cells)))
    rows = []
    for v in spec.values:
        runs = [results[(v, s)] for s in spec.seeds]
        rows.append({"ablation": spec.name, "value": v, "label": spec.label(v), "seeds": list(spec.seeds),
                     "metrics": aggregate_runs(runs), "runs": [r.to_dict() for r in runs]})
    return rows


def write_report(rows, out_dir, stem):
    """Write ``<stem>.csv`` and ``<stem>.md`` with one mean ± std row per grid value."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"{stem}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ablation", "value", "label", "n_seeds"] + [f"{m}_{k}" for m in METRICS for k in ("mean", "std")])
        for r in rows:
            w.writerow([r["ablation"], r["value"], r["label"], len(r["seeds"])]
                       + [f"{x:.6f}" for m in METRICS for x in r["metrics"][m]])
    lines = ["| Variant | " + " | ".join(METRICS) + " |", "|---" * (len(METRICS) + 1) + "|"]
    for r in rows:
        cells = [f"{100 * r['metrics'][m][0]:.1f} ± {100 * r['metrics'][m][1]:.1f}" for m in METRICS]
        lines.append(f"| {r['label']} | " + " | ".join(cells) + " |")
    lines += ["", f"Accuracies in percent over seeds {rows[0]['seeds']}; ± is the population std (divide by N)."]
    (out / f"{stem}.md").write_text("\n".join(lines) + "\n")
    return out / f"{stem}.csv", out / f"{stem}.md"


def write_stage_curve(result, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "completion", "accuracy"])
        for e in result.stage_curve:
            w.writerow([e["stage"], f"{e['completion']:.4f}", f"{e['accuracy']:.6f}"])


def pca_scatter(state, real, class_ids, per_class=None, seed=0):
    """Rows ``(instance_id, class_id, pc1, pc2, source)`` projecting real and synthesized features to 2-D.

    Synthetic rows get negative instance ids. The sign of each component is
    fixed so its largest-magnitude loading is positive.
    """
    class_ids = sorted(int(c) for c in class_ids)
    real = real.subset(class_ids)
    j = per_class or max(1, int(round(state.mean_count)))
    xs, ys = synthesize_for_classes(state, class_ids, j, seed)
    x = np.concatenate([real.features.astype(np.float64), xs])
    centred = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    comps = vt[:2]
    comps *= np.sign(comps[np.arange(len(comps)), np.argmax(np.abs(comps), axis=1)])[:, None]
    pcs = centred @ comps.T
    ids = np.concatenate([real.instance_ids, -1 - np.arange(len(xs))])
    labels = np.concatenate([real.labels, ys])
    source = ["real"] * len(real) + ["synthetic"] * len(xs)
    return [(int(i), int(c), float(p[0]), float(p[1]), s) for i, c, p, s in zip(ids, labels, pcs, source)]


def write_scatter(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance_id", "class_id", "pc1", "pc2", "source"])
        for i, c, p1, p2, s in rows:
            w.writerow([i, c, f"{p1:.6f}", f"{p2:.6f}", s])

