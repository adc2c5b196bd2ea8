"""
The command-line workflow
=========================

The same steps through the ``fieldmanifold`` command: write images to disk,
build a manifest, train from a config file, then reconstruct, walk and
sample.  ``main`` is called in-process here; in a shell, each call is
``fieldmanifold <command> ...``.
"""
import tempfile
from pathlib import Path

from fieldmanifold.cli import main
from fieldmanifold.signal_io import export
from fieldmanifold.synthetic import sinusoid_images

work = Path(tempfile.mkdtemp(prefix="fieldmanifold-"))
data = work / "images"
data.mkdir()
ds = sinusoid_images(12, size=8, seed=0)
for i in range(len(ds)):
    export(ds.bundle(i)[0], data / f"wave{i:02d}.pgm")

manifest = work / "manifest.tsv"
main(["prepare", "--root", str(data), "--holdout", "2", "--manifest", str(manifest)])

config = work / "small.cfg"
config.write_text(f"""\
# a small model
batch_size = 10
points_per_signal = 64
steps = 300
k_neighbors = 3
latent_dim = 8
trunk_dim = 32
hidden_dim = 32
embed_dim = 16
manifest = {manifest}
out = {work / 'run'}
""")
main(["train", "--config", str(config)])
ckpt = str(work / "run" / "checkpoints" / "final.gemf")

main(["reconstruct", "--ckpt", ckpt, "--manifest", str(manifest), "--split", "test",
      "--iters", "200", "--out", str(work / "recon")])
main(["interpolate", "--ckpt", ckpt, "--id-a", "0", "--id-b", "5", "--steps", "4",
      "--out", str(work / "walk")])
main(["generate", "--ckpt", ckpt, "--count", "3", "--seed", "1", "--out", str(work / "samples")])
main(["neighbors", "--ckpt", ckpt, "--id", "0", "--k", "3"])

print("outputs in", work)
for p in sorted(work.rglob("*.pgm")):
    if p.parent == data:
        continue
    print("  ", p.relative_to(work))
