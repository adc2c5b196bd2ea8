"""
Training a latent manifold of small images
==========================================

Sixteen 16x16 images made of two plane waves each.  Every image gets a
latent; the hypernetwork maps latents to field weights.  Reconstruction,
LLE and isometry losses are all switched on.

Takes about a minute on one core.
"""
import tempfile
from pathlib import Path

import numpy as np

from fieldmanifold import inference as inf
from fieldmanifold.synthetic import sinusoid_images
from fieldmanifold.trainer import TrainConfig, Trainer, checkpoint, restore

ds = sinusoid_images(16, size=16, seed=0)
config = TrainConfig(batch_size=16, points_per_signal=128, lr=1e-3, steps=600, k_neighbors=4,
                     latent_dim=32, trunk_dim=64, hidden_dim=64, embed_dim=32, seed=0)
trainer = Trainer(ds, config)


def progress(step, losses):
    if step % 100 == 0:
        print(f"step {step:4d}  rec {losses.rec:.5f}  lle {losses.lle:.5f}  iso {losses.iso:.5f}")


trainer.run(callback=progress)

# how well does each stored latent decode?
decoded = inf.decode(trainer.state, trainer.state.latents)
errors = [inf.bundle_mse(b, ds.bundle(i)) for i, b in enumerate(decoded)]
print(f"mean training PSNR {inf.psnr(float(np.mean(errors))):.1f} dB (peak-to-peak 2)")

# checkpoints hold everything needed to resume or run inference
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "toy.gemf"
    checkpoint(trainer.state, path)
    again = restore(path)
    print("restored step", again.step, "latents equal:", np.array_equal(again.latents, trainer.state.latents))

# neighbors in latent space
g = trainer.state.graph
print("neighbors of signal 0:", g.index[0].tolist(), "distances", np.round(g.dist[0], 4))
