"""Is the score meaningful? Remove the same number of units three ways.

Pruning the lowest scorers should cost little, random removal more, and
removing the highest scorers (the critical units) the most. A one-epoch
fine-tune after our pruning usually recovers the rest.
"""

from mipprune.datasets import balanced_batch, make_dataset, split_dataset
from mipprune.network import dense, init_network
from mipprune.pruning import compare_baselines, score
from mipprune.training import TrainConfig, train

full = make_dataset("blobs", 80, seed=101, n_classes=4, dim=2, separation=5.0)
train_ds, eval_ds = split_dataset(full, 40)
net = train(init_network(2, [dense(16), dense(8), dense(4, activation="none")], seed=1),
            train_ds, TrainConfig(epochs=150, learning_rate=1e-2, seed=1)).net

report = score(net, *balanced_batch(train_ds, 1), lam=5.0, epsilon=0.5)
result = compare_baselines(net, train_ds, eval_ds, report, threshold=0.5, seed=1,
                           finetune_cfg=TrainConfig(epochs=1, learning_rate=1e-2, seed=1))

print(f"pruning {result.prune_pct:.0f}% of hidden units, per layer {result.masked_per_layer}")
print(f"reference accuracy: {result.reference_accuracy:.3f}")
for name in ("ours", "ours_ft", "random", "critical"):
    print(f"  {name:9s} {result.accuracies[name]:.3f}")
