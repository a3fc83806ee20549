"""
Training, evaluation and embedding export on the toy dataset
=============================================================

A short run end to end.  Expect a couple of minutes on a laptop CPU.
"""
import tempfile
from pathlib import Path

from dapn.data import generate_toy_dataset, make_splits
from dapn.training import (TrainConfig, domain_features,
                           domain_probe_accuracy, evaluate, export_embeddings,
                           load_model, run_ablation, train)

work = Path(tempfile.mkdtemp())
root = generate_toy_dataset(work / "toy", (8, 4, 4), samples_per_class=60,
                            image_size=32, seed=0)

# a desk-scale network for 32 px images
cfg = TrainConfig(input_size=32, conv_widths=(16, 32, 64, 64), output_dim=64,
                  embedding_dim=64, bottleneck_dim=32, n_sc=8, n_meta=4, k=1,
                  q_source=5, q_target=5, augment_pad=4, total_steps=200,
                  lr=0.005, checkpoint_every=100, seed=0)
split = make_splits(root, k=cfg.k, image_size=cfg.input_size)

result = train(cfg, split=split, out_dir=work / "run")
print(open(work / "run" / "metrics.csv").readlines()[:3])
print("checkpoints:", [p.name for p in result.checkpoints])

# there are only four test classes, so evaluate 4-way
model, _ = load_model(work / "run" / "model.pt")
report = evaluate(model, split.test_pool, n_episodes=500, way=4,
                  shot=cfg.k, queries=15, seed=0)
print("top1=%.4f ci95=%.4f" % (report.mean_top1, report.ci95))
print(report.to_json())

# how well can a linear probe tell the domains apart, before and after
# the embedding module?
for stage in ("pre", "gated"):
    feats, domains = domain_features(model, split, stage)
    print(stage, "probe accuracy %.3f" % domain_probe_accuracy(feats,
                                                                domains))

# dump both feature stages for an external 2-d projection plot
n = export_embeddings(model, split, work / "embeddings.tsv",
                      max_per_domain=200)
print(n, "rows in", work / "embeddings.tsv")

# a two-variant ablation with one seed each
rows = run_ablation(cfg.replace(total_steps=100), variants=["FSL", "Full"],
                    seeds=[0], out_dir=work / "ablation", n_episodes=300,
                    way=4, split=split)
for r in rows:
    print(r.variant, "%.4f +- %.4f" % (r.mean_top1, r.ci95))
print(open(work / "ablation" / "ablation.csv").read())
