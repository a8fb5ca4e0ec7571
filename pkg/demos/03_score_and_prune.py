"""The core pipeline: train, score every neuron, threshold, prune, evaluate.

One balanced point per class goes into the mixed-integer model; the solved
importance scores separate the units the batch actually needs from the ones
it can spare, and pruning the spares barely moves the held-out accuracy.
"""

import numpy as np

from mipprune.datasets import balanced_batch, make_dataset, split_dataset
from mipprune.network import apply_mask, dense, init_network
from mipprune.pruning import mask_from_scores, prune_fraction, score
from mipprune.training import TrainConfig, evaluate, train

full = make_dataset("blobs", 80, seed=100, n_classes=4, dim=2, separation=5.0)
train_ds, eval_ds = split_dataset(full, 40)

net0 = init_network(2, [dense(16), dense(8), dense(4, activation="none")], seed=0)
net = train(net0, train_ds, TrainConfig(epochs=150, learning_rate=1e-2, seed=0)).net
print(f"trained reference: train acc {evaluate(net, train_ds):.3f}, "
      f"held-out acc {evaluate(net, eval_ds):.3f}")

xs, ys = balanced_batch(train_ds, per_class=1)
report = score(net, xs, ys, lam=5.0, epsilon=0.5)
values = np.array(sorted(report.scores.values()))
print(f"scores: {np.round(values, 3)}")
print(f"solver: objective {report.objective:.4f}, gap {report.gap:.1e}, "
      f"{report.node_count} nodes, {report.cut_rounds} cut rounds")

threshold = 0.3
mask = mask_from_scores(report, threshold)
pruned = apply_mask(net, mask)
print(f"\nthreshold {threshold}: pruned {mask.masked_count()} of {mask.total_units()} "
      f"hidden units ({100 * prune_fraction(mask):.0f}%)")
print(f"held-out accuracy masked:     {evaluate(net, eval_ds, mask):.3f}")
print(f"held-out accuracy structural: {evaluate(pruned, eval_ds):.3f}")
widths = [l.weight.shape[0] for l in pruned.layers]
print(f"pruned architecture widths: {widths}")
