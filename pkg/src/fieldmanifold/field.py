"""Neural fields decoded from latents by a low-rank gated hypernetwork.

A neural field maps a coordinate in [-1, 1]^k to a signal value through a
Fourier embedding followed by a ReLU MLP.  The hypernetwork maps a latent
``z`` through a shared dense trunk to one head per modality; each head
emits, for every field layer, two low-rank factors ``A`` (fan_out x r) and
``B`` (r x fan_in) plus the layer bias.  The layer weight is

    W = W_s * sigmoid(A @ B)

with ``W_s`` a free matrix shared by every decoded field.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor


class ConfigError(ValueError):
    """An architecture or training configuration is invalid."""


@dataclass(frozen=True)
class FieldArch:
    coord_dim: int
    out_dim: int
    embed_dim: int = 512
    n_hidden_layers: int = 3
    hidden_dim: int = 512
    ladder: str = "log"
    octaves: float = 6.0

    def __post_init__(self):
        if self.ladder not in LADDERS:
            raise ConfigError(f"unknown frequency ladder '{self.ladder}'")
        if self.coord_dim < 1:
            raise ConfigError("coord_dim must be >= 1")
        if self.out_dim < 1:
            raise ConfigError("out_dim must be >= 1")
        if self.embed_dim <= 0 or self.embed_dim % (2 * self.coord_dim):
            raise ConfigError(f"embed_dim {self.embed_dim} is not a positive multiple "
                              f"of 2 * coord_dim = {2 * self.coord_dim}")
        if self.n_hidden_layers < 1 or self.hidden_dim < 1:
            raise ConfigError("need at least one hidden layer of positive width")

    @property
    def n_freqs(self) -> int:
        return self.embed_dim // (2 * self.coord_dim)

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_out, fan_in) of each dense layer, input to output."""
        shapes = [(self.hidden_dim, self.embed_dim)]
        shapes += [(self.hidden_dim, self.hidden_dim)] * (self.n_hidden_layers - 1)
        shapes.append((self.out_dim, self.hidden_dim))
        return shapes


@dataclass(frozen=True)
class HyperArch:
    latent_dim: int = 1024
    trunk_dim: int = 512
    trunk_layers: int = 3
    rank: int = 10

    def __post_init__(self):
        if self.latent_dim < 1 or self.trunk_dim < 1 or self.trunk_layers < 1:
            raise ConfigError("latent_dim, trunk_dim and trunk_layers must be >= 1")
        if self.rank < 1:
            raise ConfigError("rank must be >= 1")


LADDERS = ("log", "pow2")


def frequencies(n_freqs: int, ladder: str = "log", octaves: float = 6.0) -> np.ndarray:
    """Angular frequencies of the embedding.

    ``pow2``: 2^f * pi for f = 0..F-1.  On a grid that includes both
    endpoints -1 and +1 these features cannot tell the endpoints apart, and
    octaves beyond the grid resolution alias onto a few repeating values.

    ``log``: F frequencies log-spaced over ``octaves`` octaves starting at
    pi/2, i.e. pi/2 * 2^(f * octaves / F).  Injective on [-1, 1] and free of
    exact aliasing; this is the default.
    """
    f = np.arange(n_freqs, dtype=np.float64)
    if ladder == "pow2":
        return np.pi * 2.0 ** f
    if ladder == "log":
        return 0.5 * np.pi * 2.0 ** (f * octaves / n_freqs)
    raise ConfigError(f"unknown frequency ladder '{ladder}'")


def fourier_embed(x, embed_dim: int, ladder: str = "log", octaves: float = 6.0) -> np.ndarray:
    """Sin/cos features of each coordinate at the ladder's frequencies w_f.

    ``x`` has shape (..., k).  Output has shape (..., embed_dim) laid out as
    [sin(w_0 x_1), cos(w_0 x_1), sin(w_1 x_1), cos(w_1 x_1), ..., x_2 ...].
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = x[None]
    k = x.shape[-1]
    if embed_dim % (2 * k):
        raise ConfigError(f"embed_dim {embed_dim} not divisible by 2k = {2 * k}")
    if np.any(np.abs(x) > 1):
        raise ValueError("coordinates must lie in [-1, 1]")
    freqs = frequencies(embed_dim // (2 * k), ladder, octaves)
    ang = x[..., :, None] * freqs                      # (..., k, F)
    feats = np.stack([np.sin(ang), np.cos(ang)], -1)   # (..., k, F, 2)
    return feats.reshape(*x.shape[:-1], embed_dim).astype(np.float32)


def embed(x, arch: FieldArch) -> np.ndarray:
    return fourier_embed(x, arch.embed_dim, arch.ladder, arch.octaves)


def grid_coords(shape: Sequence[int]) -> np.ndarray:
    """Coordinates of every cell of a grid in row-major order, shape (cells, k).

    Cell m on an axis of extent D maps to -1 + 2m/(D-1); D = 1 maps to 0.
    """
    axes = [np.zeros(1) if d == 1 else -1.0 + 2.0 * np.arange(d) / (d - 1) for d in shape]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], -1).astype(np.float32)


def _head_layout(hyper: HyperArch, arch: FieldArch):
    """Offsets of A, B and bias for each layer inside one head's output."""
    layout, off = [], 0
    for fan_out, fan_in in arch.layer_shapes():
        r = min(hyper.rank, fan_out, fan_in)
        a = (off, off + fan_out * r)
        b = (a[1], a[1] + r * fan_in)
        c = (b[1], b[1] + fan_out)
        layout.append((fan_out, fan_in, r, a, b, c))
        off = c[1]
    return layout, off


class HyperNetwork:
    """Shared trunk, one head and one set of gates per modality.

    ``params`` is a flat dict of float32 arrays:

    * ``trunk.{l}.weight`` / ``trunk.{l}.bias``
    * ``head.{m}.weight`` / ``head.{m}.bias``
    * ``gate.{m}.{L}``  (the shared ``W_s`` of field layer L of modality m)
    """

    def __init__(self, hyper: HyperArch, fields: Sequence[FieldArch], params: dict | None = None,
                 seed: int = 0):
        self.hyper = hyper
        self.fields = tuple(fields)
        if not self.fields:
            raise ConfigError("need at least one field architecture")
        self.layouts = [_head_layout(hyper, a) for a in self.fields]
        self.params = params if params is not None else self.init_params(np.random.default_rng(seed))
        self._check_params()

    def init_params(self, rng: np.random.Generator) -> dict:
        h = self.hyper
        p = {}
        fan_in = h.latent_dim
        for l in range(h.trunk_layers):
            bound = np.sqrt(6.0 / fan_in)
            p[f"trunk.{l}.weight"] = rng.uniform(-bound, bound, (h.trunk_dim, fan_in))
            p[f"trunk.{l}.bias"] = np.zeros(h.trunk_dim)
            fan_in = h.trunk_dim
        for m, (arch, (layout, size)) in enumerate(zip(self.fields, self.layouts)):
            bound = 1.0 / np.sqrt(h.trunk_dim)
            p[f"head.{m}.weight"] = rng.uniform(-bound, bound, (size, h.trunk_dim))
            bias = np.zeros(size)
            for L, (fan_out, fan_in, r, a, b, c) in enumerate(layout):
                # A @ B starts with unit-scale entries so the gate is not flat
                s = r ** -0.25
                bias[a[0]:a[1]] = rng.normal(0.0, s, a[1] - a[0])
                bias[b[0]:b[1]] = rng.normal(0.0, s, b[1] - b[0])
                # x2 offsets the mean gate value sigmoid(0) = 0.5
                gb = 2.0 / np.sqrt(fan_in)
                p[f"gate.{m}.{L}"] = rng.uniform(-gb, gb, (fan_out, fan_in))
            p[f"head.{m}.bias"] = bias
        return {k: v.astype(np.float32) for k, v in p.items()}

    def _check_params(self):
        for m, arch in enumerate(self.fields):
            for L, shape in enumerate(arch.layer_shapes()):
                g = self.params.get(f"gate.{m}.{L}")
                if g is None or g.shape != shape:
                    raise ConfigError(f"gate.{m}.{L} missing or not of shape {shape}")

    @property
    def n_modalities(self) -> int:
        return len(self.fields)

    def leaves(self, tape: Tape) -> dict[str, Tensor]:
        return {k: tape.leaf(v, name=k) for k, v in self.params.items()}

    def consts(self, tape: Tape) -> dict[str, Tensor]:
        return {k: tape.const(v) for k, v in self.params.items()}

    def trunk(self, z: Tensor, p: dict[str, Tensor]) -> Tensor:
        h = z
        for l in range(self.hyper.trunk_layers):
            h = ad.relu(h @ ad.transpose(p[f"trunk.{l}.weight"]) + p[f"trunk.{l}.bias"])
        return h

    def factors(self, feat: Tensor, p: dict[str, Tensor], modality: int = 0):
        """Low-rank factors and biases for one modality: list of (A, B, b)."""
        m = modality
        out = feat @ ad.transpose(p[f"head.{m}.weight"]) + p[f"head.{m}.bias"]
        n = out.shape[0]
        res = []
        for fan_out, fan_in, r, a, b, c in self.layouts[m][0]:
            A = ad.reshape(out[:, a[0]:a[1]], (n, fan_out, r))
            B = ad.reshape(out[:, b[0]:b[1]], (n, r, fan_in))
            res.append((A, B, out[:, c[0]:c[1]]))
        return res

    def decode(self, z: Tensor, p: dict[str, Tensor], modality: int = 0, feat: Tensor | None = None):
        """Field parameters for a batch of latents ``z`` (B, n).

        Returns a list of (W (B, fan_out, fan_in), b (B, fan_out)) per layer.
        """
        if z.ndim != 2 or z.shape[1] != self.hyper.latent_dim:
            raise ad.ShapeError("decode_field", z.shape, (None, self.hyper.latent_dim))
        if feat is None:
            feat = self.trunk(z, p)
        layers = []
        for L, (A, B, b) in enumerate(self.factors(feat, p, modality)):
            W = p[f"gate.{modality}.{L}"] * ad.sigmoid(A @ B)
            layers.append((W, b))
        return layers

    def decode_all(self, z: Tensor, p: dict[str, Tensor]):
        feat = self.trunk(z, p)
        return [self.decode(z, p, m, feat) for m in range(self.n_modalities)]

    def render(self, z, coords: Sequence[np.ndarray] | None = None, shapes=None) -> list[np.ndarray]:
        """Evaluate the fields of latents ``z`` (B, n) without recording gradients.

        ``coords`` gives per-modality coordinate arrays (P, k); ``shapes``
        gives grid shapes instead (full-grid evaluation).  Returns
        per-modality arrays of shape (B, P, out_dim).
        """
        tape = Tape()
        zt = tape.const(np.atleast_2d(np.asarray(z, np.float32)))
        p = self.consts(tape)
        if coords is None:
            coords = [grid_coords(s) for s in shapes]
        outs = []
        for m, layers in enumerate(self.decode_all(zt, p)):
            emb = embed(coords[m], self.fields[m])
            outs.append(eval_field(layers, tape.const(emb)).value.copy())
        return outs


def eval_field(layers, emb: Tensor) -> Tensor:
    """Run decoded fields on embedded coordinates.

    ``layers`` is the output of :meth:`HyperNetwork.decode` (or plain
    (W, b) Tensor pairs with a leading batch axis); ``emb`` is (P, E) shared
    by the batch or (B, P, E).  Returns (B, P, out_dim).
    """
    h = emb
    last = len(layers) - 1
    for L, (W, b) in enumerate(layers):
        h = h @ ad.transpose(W) + ad.reshape(b, (b.shape[0], 1, b.shape[1]))
        if L != last:
            h = ad.relu(h)
    return h


def decode_field(z, net: HyperNetwork, modality: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Numpy convenience: field weights and biases for a single latent."""
    tape = Tape()
    zt = tape.const(np.asarray(z, np.float32).reshape(1, -1))
    layers = net.decode(zt, net.consts(tape), modality)
    return [(W.value[0].copy(), b.value[0].copy()) for W, b in layers]


def init_latents(n: int, dim: int, rng: np.random.Generator, std: float = 0.01) -> np.ndarray:
    return rng.normal(0.0, std, (n, dim)).astype(np.float32)
