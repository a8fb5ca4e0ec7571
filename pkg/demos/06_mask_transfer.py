"""Do masks generalize? Score on one dataset, retrain the pruned net on another.

The mask is computed on a trained blobs classifier, the weights are reset to
their shared initialization, the masked architecture is retrained on moons,
and the result is compared against the unmasked net retrained identically.
"""

from mipprune.datasets import make_dataset, split_dataset
from mipprune.network import dense
from mipprune.pruning import transfer
from mipprune.training import TrainConfig

src, _ = split_dataset(make_dataset("blobs", 80, seed=300, n_classes=2, dim=2,
                                    separation=5.0), 40)
tgt, tgt_eval = split_dataset(make_dataset("moons", 80, seed=301), 40)

cfg = TrainConfig(epochs=150, learning_rate=1e-2, seed=0)
result = transfer(
    2, [dense(16), dense(8), dense(2, activation="none")], seed=0,
    source_ds=src, target_ds=tgt, target_eval=tgt_eval,
    lam=5.0, threshold=0.5, source_cfg=cfg, target_cfg=cfg, epsilon=0.5,
)

print(f"mask computed on {src.name}, architecture retrained on {tgt.name}")
print(f"pruned {result.prune_pct:.0f}% of hidden units: {result.masked_per_layer}")
print(f"unmasked retrain accuracy: {result.reference_accuracy:.3f}")
print(f"masked retrain accuracy:   {result.accuracies['ours']:.3f}")
