"""Train the two-level attention embedding model on one machine.

The model scores each meta-path neighbor by the cosine of transformed
adjacency features (node-level attention), aggregates, then weighs the
per-path embeddings with a learned per-node preference vector
(meta-path-level attention).  A linear head trains the whole stack
against author labels.  A single-client federation is exactly
centralized training, so we reuse the experiment runner with clients=1.
"""

import numpy as np

from fedhin import (
    curve_extract,
    preset_synthetic_config,
    run_experiment_list,
    synthetic_hin,
)

graph = synthetic_hin(seed=0)  # 400 authors, 4 classes
config = preset_synthetic_config(
    clients=1, rounds=30, local_epochs=1, batch_size=64, seed=0
)
print(f"training: d={config.embedding_dim}, lr={config.learning_rate}, "
      f"meta paths {config.metapaths}")

records = run_experiment_list(config, graph)
loss_curve, f1_curve = curve_extract(records)
print("\nround   loss    micro-F1")
for (rnd, loss), (_, micro) in list(zip(loss_curve, f1_curve))[::5]:
    print(f"{rnd:5d}  {loss:6.4f}   {micro:.3f}")

final = records[-1]
print(f"\nfinal micro-F1 {final.micro_f1:.3f}, macro-F1 {final.macro_f1:.3f}")
print(f"untrained baseline was {records[0].micro_f1:.3f} (chance is 0.25)")

# The per-path attention is interpretable: which meta path does each
# author lean on?  Rebuild the trained model state to peek at the trace.
from fedhin.simulation import build_experiment

setup = build_experiment(config, graph)
for record in run_experiment_list(config, graph, setup=setup):
    pass
from fedhin.model import unpack_shared

params = setup.initial_params.copy()
unpack_shared(setup.server.current_aggregate(), params)
trace = setup.model.forward(params, np.arange(8))
print("\nmeta-path attention of the first 8 authors (APA vs APPA):")
for node in trace.nodes:
    print(f"  author {node.index}: {np.round(node.path_coeffs, 3)}")
