"""Small end-to-end comparison of iterative learning against the baseline.

Generates a reduced benchmark, pretrains the generator once, then runs the
iterative pipeline and the semantic-conditioned baseline on the same seed.
Takes under a minute on one CPU.
"""

from gil.benchmark import assemble, generate
from gil.config import from_dict
from gil.eval import run_experiment
from gil.pipeline import pretrain_gan

cfg = from_dict({"preset": "fast", "stage_eval": True, "gan": {"steps": 600},
                 "data": {"n_pretrain": 20, "n_finetune": 15}})
seed = 0
bench = assemble(*generate(cfg.data), cfg.data, seed)
gan = pretrain_gan(bench.pretrain_train, bench.embeddings, cfg.model, seed)[0]

for mode in ("gil", "baseline"):
    _, res = run_experiment(bench, cfg.model, seed, mode, stage_eval=mode == "gil",
                            gan=gan if mode == "gil" else None)
    print(f"{mode:9s} zsl top-1 {res.zsl_top1:.3f}  top-5 {res.zsl_top5:.3f}  "
          f"u {res.u:.3f}  s {res.s:.3f}  H {res.H:.3f}  retention {res.retention:.3f}")
    for point in res.stage_curve:
        print(f"          stage {point['stage']:2d} at {point['completion']:5.1f}%: accuracy {point['accuracy']:.3f}")
