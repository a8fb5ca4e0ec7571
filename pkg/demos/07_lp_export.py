"""External-solver escape hatch: LP text export and solution import.

The full model, cut pool included, is written in the common LP text layout
so an off-the-shelf solver can chew on it; a plain name/value solution file
maps straight back onto importance scores.
"""

import tempfile
from pathlib import Path

import numpy as np

from mipprune.bounds import propagate_batch
from mipprune.datasets import balanced_batch, make_dataset
from mipprune.encoding import encode_network
from mipprune.lpformat import read_solution, write_lp, write_solution
from mipprune.network import dense, init_network
from mipprune.solver import SolveConfig, solve_mip
from mipprune.training import TrainConfig, train

ds = make_dataset("blobs", 10, seed=5, n_classes=3, dim=2, separation=5.0)
net = train(init_network(2, [dense(5), dense(4), dense(3, activation="none")], seed=5),
            ds, TrainConfig(epochs=60, learning_rate=1e-2, seed=5)).net
xs, ys = balanced_batch(ds, 1)
model = encode_network(net, xs, ys, propagate_batch(net, xs, 0.0), lam=5.0)

with tempfile.TemporaryDirectory() as td:
    lp_path = Path(td) / "model.lp"
    sol_path = Path(td) / "model.sol"
    write_lp(model, lp_path)
    text = lp_path.read_text().splitlines()
    print(f"wrote {lp_path.name}: {len(model.variables)} variables, "
          f"{len(model.constraints)} constraints, {len(text)} lines")
    print("\n".join(text[:6]))
    print("...")

    sol = solve_mip(model, SolveConfig(), warm=model.reference_assignment)
    write_solution(model, sol.values, sol.objective, sol_path)
    x, obj = read_solution(model, sol_path)
    print(f"\nsolution round trip: objective {obj:.6f}, "
          f"max coordinate error {np.abs(x - sol.values).max():.1e}")
    scores = model.scores(x)
    print(f"recovered {len(scores)} importance scores, "
          f"{sum(1 for v in scores.values() if v < 0.01)} at zero")
