"""Train the default victim on synthetic labeled images and save it.

Run from the repository root:

    python demos/02_train_victim.py [out.json]
"""

import sys

import numpy as np

from rangeattack import TrainConfig, default_victim, grand_mean, predict_batch, save_model, synth_dataset, train

out = sys.argv[1] if len(sys.argv) > 1 else "victim.json"

# Labels are a smooth function of brightness and top/bottom contrast, spanning
# roughly 14..45 so both attack presets have something to move.
data = synth_dataset(1000, (3, 32, 32), seed=1)
held_out = synth_dataset(200, (3, 32, 32), seed=2)
print(f"labels: min {data.labels.min():.1f}, median {np.median(data.labels):.1f}, max {data.labels.max():.1f}")

net = default_victim(data.shape, grand_mean=grand_mean(data), seed=0)
cfg = TrainConfig(learning_rate=1e-3, epochs=30, seed=0)
net, history = train(net, data, cfg, log=lambda e, loss: print(f"epoch {e + 1:2d}  train mse {loss:9.3f}"))

err = predict_batch(net, held_out.images) - held_out.labels
print(f"held-out mse {float(err @ err) / len(err):.3f}")
save_model(net, out)
print(f"saved {out}")
