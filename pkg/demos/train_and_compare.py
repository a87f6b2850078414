"""Train a small model on synthetic motion and compare k=0 against k=4 trajectories.

More visible trajectories should lower the error (ADE) and the spread (APD) of the
samples.  Takes a few minutes on one CPU core; pass a step count to change it.

    python demos/train_and_compare.py 1500
"""

import sys

import numpy as np

from trajevae.metrics import evaluate
from trajevae.model import ModelConfig
from trajevae.motion_data import generate_synthetic
from trajevae.training import TrainConfig, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 1500
corpus = generate_synthetic(500, 41, rng=np.random.default_rng(1))
held_out = generate_synthetic(40, 31, rng=np.random.default_rng(2))

result = train(corpus, ModelConfig.desk(), TrainConfig.desk(total_steps=steps, decay_every=0))
losses = result.losses()
print(f"loss: first 100 steps {losses[:100].mean():.3f}, last 100 {losses[-100:].mean():.3f}")

table = evaluate(result.model, held_out, k_list=(0, 1, 2, 4), num_samples=10,
                 rng=np.random.default_rng(0))
print(table.format())
