"""
A two-domain toy dataset and episodic sampling
==============================================

Generate the procedural dataset, load its class splits and draw
training episodes from both domains.
"""
import tempfile

import numpy as np

from dapn.data import (augment_fewshot, generate_toy_dataset, make_splits,
                       sample_source_episode, sample_target_episode)

# 8 source classes, 4 few-shot target classes, 4 test target classes
root = generate_toy_dataset(tempfile.mkdtemp(), (8, 4, 4),
                            samples_per_class=60, image_size=32, seed=0)
print(open(root / "splits.txt").read())

# the few-shot pool keeps only k target images per class
k = 5
split = make_splits(root, k=k, image_size=32)
for name in ("source_pool", "fewshot_pool", "test_pool"):
    pool = getattr(split, name)
    print(name, {c: len(v) for c, v in pool.items()})

# each few-shot image becomes 12 training images (flip x five crops)
rng = np.random.default_rng(0)
augmented = augment_fewshot(split.fewshot_pool, k, pad=4, rng=rng)
print("augmented per class:", {c: len(v) for c, v in augmented.items()})

# a source episode uses more classes than a target one
es = sample_source_episode(split.source_pool, n_sc=8, k=k, q=5, rng=rng,
                           n_meta=4)
ed = sample_target_episode(augmented, 4, k, 5, rng)
print("source episode:", es.way, "way,", len(es.support), "support,",
      len(es.query), "query")
print("target episode classes:", ed.classes)
print("local labels:", ed.local_labels(ed.support))

# images are float32 CHW in [0, 1]
img = es.support[0].image
print(img.shape, img.dtype, float(img.min()), float(img.max()))
