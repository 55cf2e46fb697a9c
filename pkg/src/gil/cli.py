"""Command line: ``gil gen-data | run | eval | ablate | report``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or numeric
failure. ``GIL_WORKERS`` sets how many seeds or grid cells run concurrently.
"""

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import benchmark as B
from .checkpoint import load_state, save_state
from .config import load_config
from .errors import ConfigError, GILError, InputError
from .eval import (ABLATIONS, METRICS, AblationSpec, RunResult, aggregate_runs, gzsl_metrics, map_ordered,
                   result_for, run_ablation, run_experiment, write_report, write_stage_curve, zsl_metrics)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _dump(obj, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seeds=[args.seed])
    return cfg


def _data_dir(args):
    return Path(args.data) if getattr(args, "data", None) else Path(args.out) / "data"


def cmd_gen_data(args):
    cfg = load_config(args.config)
    data_cfg = cfg.data if args.seed is None else replace(cfg.data, seed=args.seed)
    cfg = replace(cfg, data=data_cfg)
    out = Path(args.out) / "data" if args.data is None else Path(args.data)
    paths = B.write_files(data_cfg, out)
    (out / "config.json").write_text(cfg.to_json())
    pretrain, finetune, emb = B.read_files(out)
    summary = {"pretrain_classes": len(pretrain.classes), "pretrain_items": len(pretrain),
               "finetune_classes": len(finetune.classes), "finetune_items": len(finetune),
               "embedding_classes": len(emb), "feature_dim": pretrain.dim, "semantic_dim": emb.dim,
               "files": {k: str(v) for k, v in paths.items()}}
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def _run_one(cfg, data, mode, seed, out_dir):
    pretrain, finetune, emb = data
    bench = B.assemble(pretrain, finetune, emb, cfg.data, seed)
    run_cfg = replace(cfg, seeds=[seed])
    state, _ = run_experiment(bench, cfg.model, seed, mode, stage_eval=cfg.stage_eval and mode == "gil",
                              evaluate=False)
    ckpt = out_dir / "checkpoint"
    save_state(state, ckpt)
    (ckpt / "run_config.json").write_text(run_cfg.to_json())
    # evaluate the reloaded checkpoint so `gil eval` on it reproduces these numbers
    loaded = load_state(ckpt, emb)
    result = result_for(loaded, bench, echo=run_cfg.to_dict())
    _dump(result.to_dict(), out_dir / "result.json")
    write_stage_curve(result, out_dir / "stage_curve.csv")
    return result


def cmd_run(args):
    cfg = _config(args)
    data = B.read_files(_data_dir(args))
    root = Path(args.out) / args.mode
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.json").write_text(cfg.to_json())
    failures = []

    def job(seed):
        try:
            return _run_one(cfg, data, args.mode, seed, root / f"seed{seed}")
        except GILError as err:
            failures.append((seed, err))
            return None

    results = [r for r in map_ordered(job, cfg.seeds) if r is not None]
    _dump([r.to_dict() for r in results], root / "results.json")
    for r in results:
        print(f"{args.mode} seed {r.seed}: zsl top-1 {r.zsl_top1:.4f}  top-5 {r.zsl_top5:.4f}  "
              f"u {r.u:.4f}  s {r.s:.4f}  H {r.H:.4f}  retention {r.retention:.4f}")
    for seed, err in failures:
        print(f"error: {args.mode} seed {seed} failed: {err}", file=sys.stderr)
    return EXIT_RUNTIME if failures else EXIT_OK


def _check_classes(state, bench):
    known = set(bench.pretrain_train.classes) | set(bench.split.seen)
    trained = set(state.classifier.class_ids) | set(state.buffer.class_ids)
    leaked = sorted(trained & set(bench.split.unseen))
    if leaked:
        raise ConfigError(f"checkpoint was trained on classes {leaked} that this split treats as unseen")
    foreign = sorted(trained - known)
    if foreign:
        raise ConfigError(f"checkpoint classes {foreign} are absent from the data's training classes")


def cmd_eval(args):
    ckpt = Path(args.checkpoint)
    cfg = load_config(args.config) if args.config else load_config(ckpt / "run_config.json")
    pretrain, finetune, emb = B.read_files(_data_dir(args))
    state = load_state(ckpt, emb)
    bench = B.assemble(pretrain, finetune, emb, cfg.data, state.seed)
    _check_classes(state, bench)
    if args.split == "all":
        seen_test, unseen_test = finetune.subset(bench.split.seen), bench.unseen_test
    else:
        seen_test, unseen_test = bench.seen_test, bench.unseen_test
    if args.setting == "zsl":
        m = zsl_metrics(state, unseen_test, bench.split.unseen)
        out = {"top1": m["zsl_top1"], "top5": m["zsl_top5"]}
    else:
        out = gzsl_metrics(state, seen_test, unseen_test, bench.split.seen, bench.split.unseen)
    text = json.dumps(out, indent=2, sort_keys=True)
    print(text)
    if args.out_file:
        Path(args.out_file).write_text(text + "\n")
    return EXIT_OK


def cmd_ablate(args):
    if args.name not in ABLATIONS:
        raise ConfigError(f"unknown ablation {args.name!r}; valid names: {', '.join(ABLATIONS)}")
    cfg = load_config(args.config)
    seeds = args.seeds or cfg.seeds
    if len(seeds) < 2:
        raise ConfigError("ablations need at least 2 seeds")
    spec = AblationSpec(args.name, None, seeds)
    out = Path(args.out) / "ablations"
    data = B.read_files(_data_dir(args))
    rows = run_ablation(spec, cfg.model, data, cfg.data, out_dir=out / args.name, stage_eval=False)
    (out / args.name).mkdir(parents=True, exist_ok=True)
    (out / args.name / "config.json").write_text(cfg.to_json())
    _dump(rows, out / f"{args.name}.json")
    csv_path, md_path = write_report(rows, out, args.name)
    print(md_path.read_text(), end="")
    return EXIT_OK


def cmd_report(args):
    root = Path(args.out)
    summary = {}
    for mode in ("gil", "baseline"):
        path = root / mode / "results.json"
        if not path.is_file():
            continue
        results = [RunResult(**d) for d in json.loads(path.read_text())]
        if len(results) >= 2:
            agg = aggregate_runs([replace(r, config={}) for r in results])
        else:
            agg = {m: (getattr(results[0], m), 0.0) for m in METRICS}
        summary[mode] = {"seeds": [r.seed for r in results], "metrics": agg}
    if not summary:
        raise InputError(f"no results.json under {root}/gil or {root}/baseline")
    lines = ["| Mode | seeds | " + " | ".join(METRICS) + " |", "|---" * (len(METRICS) + 2) + "|"]
    for mode, s in summary.items():
        cells = [f"{100 * s['metrics'][m][0]:.1f} ± {100 * s['metrics'][m][1]:.1f}" for m in METRICS]
        lines.append(f"| {mode} | {len(s['seeds'])} | " + " | ".join(cells) + " |")
    lines += ["", "Accuracies in percent; ± is the population std (divide by N)."]
    if {"gil", "baseline"} <= set(summary):
        gap = summary["gil"]["metrics"]["retention"][0] - summary["baseline"]["metrics"]["retention"][0]
        lines.append(f"Retention gap (gil - baseline): {100 * gap:.1f} points.")
    (root / "report.md").write_text("\n".join(lines) + "\n")
    _dump(summary, root / "report.json")
    print("\n".join(lines))
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="gil", description="Generative iterative learning on synthetic feature benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, data=True):
        p.add_argument("--config", help="JSON config file (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="override the seed list with a single seed")
        p.add_argument("--out", default="gil-out", help="output directory (default: gil-out)")
        if data:
            p.add_argument("--data", help="data directory (default: <out>/data)")

    p = sub.add_parser("gen-data", help="synthesize feature and embedding files")
    common(p)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("run", help="train GIL or the baseline for every seed")
    common(p)
    p.add_argument("--mode", choices=["gil", "baseline"], default="gil")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("eval", help="adapt a checkpoint to target classes and score it")
    common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint directory written by `run`")
    p.add_argument("--setting", choices=["zsl", "gzsl"], default="zsl")
    p.add_argument("--split", choices=["test", "all"], default="test",
                   help="seen instances to score: held-out test items or every item")
    p.add_argument("--out-file", help="also write the metrics JSON here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation grid")
    common(p)
    p.add_argument("name", help=f"one of: {', '.join(ABLATIONS)}")
    p.add_argument("--seeds", type=int, nargs="+", help="paired seeds (default: config seeds)")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("report", help="aggregate run results under --out")
    common(p, data=False)
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, InputError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (GILError, ArithmeticError) as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as err:
        print(f"io error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
