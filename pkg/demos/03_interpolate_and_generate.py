"""
Walking between latents and sampling new ones
=============================================

Linear paths between two stored latents decode to a sequence of images.
New latents come from mixing an anchor with one of its neighbors and
projecting the mix back onto the anchor's local patch.  The patch is the
affine hull of the anchor and its neighbors.
"""
import numpy as np

from fieldmanifold import inference as inf
from fieldmanifold.losses import solve_lle
from fieldmanifold.synthetic import sinusoid_images
from fieldmanifold.trainer import TrainConfig, Trainer

ds = sinusoid_images(32, size=12, seed=1)
config = TrainConfig(batch_size=16, points_per_signal=144, lr=1e-3, steps=500, k_neighbors=4,
                     latent_dim=16, trunk_dim=64, hidden_dim=48, embed_dim=32, seed=1)
trainer = Trainer(ds, config)
trainer.run()
state = trainer.state

a, b = 3, int(state.graph.index[3, 0])
print(f"interpolating {a} -> {b}")
for t in np.linspace(0, 1, 5):
    img = inf.decode(state, inf.interpolate(state.latents[a], state.latents[b], t))[0][0].values
    err_a = np.mean((img - ds.bundle(a)[0].values) ** 2)
    err_b = np.mean((img - ds.bundle(b)[0].values) ** 2)
    print(f"  t={t:.2f}  mse to a {err_a:.4f}  mse to b {err_b:.4f}")

samples = inf.generate(state, np.random.default_rng(0), 5, beta=0.0)
for s in samples:
    region = np.concatenate([state.latents[[s.anchor]], state.latents[state.graph.index[s.anchor]]])
    check = solve_lle(s.latent, region)
    print(f"anchor {s.anchor:2d} neighbor {s.neighbor:2d} alpha {s.alpha:.2f}  "
          f"weights sum {check.weights.sum():.6f}  off-patch distance {check.residual:.1e}")

# with noise the samples leave the patch a little
noisy = inf.generate(state, np.random.default_rng(0), 3)
print("default beta", round(noisy[0].beta, 5))
