"""Uses of a trained manifold: latent fitting, interpolation, completion, sampling.

The hypernetwork is frozen throughout; only test-time latents are optimized.
Signals are passed as bundles, one :class:`GridSignal` per modality in the
order of the training layouts.  Masks are boolean grids (or ``None`` for
fully observed) marking observed cells.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .field import embed, grid_coords
from .graph import knn, refresh_neighbors
from .losses import lle_loss, reconstruction, solve_lle
from .optim import Adam
from .signal_io import DataError, GridSignal
from .trainer import TrainState

PSNR_PEAK = 2.0


def psnr(mse: float, peak: float = PSNR_PEAK) -> float:
    """10 log10(peak^2 / mse); ``inf`` for a perfect fit."""
    if mse < 0:
        raise ValueError("mse must be non-negative")
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def format_psnr(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.4f}"


def interpolate(z_a, z_b, t: float) -> np.ndarray:
    """(1 - t) z_a + t z_b for t in [0, 1]."""
    z_a, z_b = np.asarray(z_a), np.asarray(z_b)
    if z_a.shape != z_b.shape:
        raise ValueError(f"latent shapes differ: {z_a.shape} vs {z_b.shape}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    return (1.0 - t) * z_a + t * z_b


# -- fitting -----------------------------------------------------------------

def _observed(state: TrainState, signals: Sequence[GridSignal], masks):
    """Per modality: (embedded observed coords, targets (1, P, C)) or None."""
    layouts = state.layouts
    if len(signals) != len(layouts):
        raise DataError(f"expected {len(layouts)} modalities, got {len(signals)}")
    masks = [None] * len(layouts) if masks is None else list(masks)
    out, total = [], 0
    for lay, arch, sig, mask in zip(layouts, state.net.fields, signals, masks):
        if (sig.shape, sig.channels) != (lay.shape, lay.channels):
            raise DataError(f"modality '{lay.tag}': signal is {sig.shape}x{sig.channels}, "
                            f"model expects {lay.shape}x{lay.channels}")
        if mask is None:
            cells = np.arange(lay.cells)
        else:
            mask = np.asarray(mask, bool)
            if mask.shape != lay.shape:
                raise DataError(f"modality '{lay.tag}': mask shape {mask.shape} != grid {lay.shape}")
            cells = np.flatnonzero(mask.reshape(-1))
        total += len(cells)
        if len(cells) == 0:
            out.append(None)
            continue
        emb = embed(grid_coords(lay.shape)[cells], arch)
        out.append((emb, sig.flat[cells][None]))
    if total == 0:
        raise DataError("mask is empty: no observed cells")
    return out


def fit_latent(state: TrainState, signals: Sequence[GridSignal], masks=None,
               use_lle: bool = False, iters: int = 500, lr: float | None = None, init=None) -> np.ndarray:
    """Optimize a latent for one signal bundle with the model frozen.

    Minimizes the reconstruction error on observed cells, plus the LLE
    term against the latent's nearest neighbors in the training table when
    ``use_lle``.  Starts from zero unless ``init`` is given.  The default
    step size follows the scale of the training latents (see :func:`fit_lr`).
    """
    obs = _observed(state, signals, masks)
    c = state.config
    z = np.zeros(c.latent_dim, np.float32) if init is None else np.array(init, np.float32).reshape(-1)
    if z.shape != (c.latent_dim,):
        raise DataError(f"init has {z.size} entries, latent_dim is {c.latent_dim}")
    live = [m for m, o in enumerate(obs) if o is not None]
    net = _SubNet(state.net, live)
    targets = [obs[m][1] for m in live]
    k = min(c.k_neighbors, len(state.latents))
    opt = Adam(fit_lr(state.latents) if lr is None else lr)
    for _ in range(iters):
        tape = Tape()
        p = state.net.consts(tape)
        zt = tape.leaf(z[None], "z")
        embs = [tape.const(obs[m][0]) for m in live]
        loss = reconstruction(net, p, zt, targets, embs)
        if use_lle:
            idx, _ = knn(state.latents, z[None], k)
            nbrs = tape.const(state.latents[idx])
            loss = loss + lle_loss(net, p, zt, nbrs, targets, embs, c.lle_reg, c.neg_weight_penalty)
        g = tape.backward(loss)[zt][0]
        z = opt.step({"z": z}, {"z": g})["z"]
    return z


class _SubNet:
    """View of a hypernetwork restricted to some modalities (for partial bundles)."""

    def __init__(self, net, modalities):
        self.net, self.modalities = net, list(modalities)

    def decode_all(self, z, p):
        feat = self.net.trunk(z, p)
        return [self.net.decode(z, p, m, feat) for m in self.modalities]


# -- decoding ----------------------------------------------------------------

def _templates(state: TrainState, templates=None):
    if templates is not None:
        return list(templates)
    ranges = state.info.get("ranges", {})
    return [GridSignal(l.tag, np.zeros(l.shape + (l.channels,), np.float32),
                       tuple(ranges.get(l.tag, (-1.0, 1.0)))) for l in state.layouts]


def decode(state: TrainState, z, templates=None) -> list[list[GridSignal]]:
    """Full-grid decodes of latents ``z`` (B, n) or (n,), one bundle each."""
    z = np.atleast_2d(np.asarray(z, np.float32))
    outs = state.net.render(z, shapes=[l.shape for l in state.layouts])
    tmpl = _templates(state, templates)
    return [[t.with_values(o[b]) for t, o in zip(tmpl, outs)] for b in range(len(z))]


def bundle_mse(a: Sequence[GridSignal], b: Sequence[GridSignal]) -> float:
    """Mean over modalities of the per-modality MSE."""
    return float(np.mean([np.mean((x.values - y.values) ** 2) for x, y in zip(a, b)]))


# -- completion --------------------------------------------------------------

def init_scale(latents: np.ndarray) -> float:
    """Per-coordinate std whose expected row norm equals the table's mean row norm."""
    return float(np.linalg.norm(latents, axis=1).mean() / math.sqrt(latents.shape[1]))


def fit_lr(latents: np.ndarray) -> float:
    """Default Adam step for latent fitting: a tenth of :func:`init_scale`.

    Adam moves every coordinate by about ``lr`` per step, so a fixed rate
    overshoots when the isometry term has shrunk the latent table.
    """
    return 0.1 * init_scale(latents)


def complete(state: TrainState, signals: Sequence[GridSignal], masks, samples: int = 3,
             seed: int = 0, iters: int = 500, lr: float | None = None, templates=None):
    """Fill in unobserved cells, once per random initialization.

    Each sample fits a latent with reconstruction + LLE on the observed cells
    starting from its own random latent, then decodes the full grid.
    Returns (bundles, latents).
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    std = init_scale(state.latents)
    tmpl = templates if templates is not None else [s.with_values(np.zeros_like(s.values)) for s in signals]
    zs = []
    for _ in range(samples):
        init = rng.normal(0.0, std, state.config.latent_dim)
        zs.append(fit_latent(state, signals, masks, use_lle=True, iters=iters, lr=lr, init=init))
    zs = np.stack(zs)
    return decode(state, zs, tmpl), zs


# -- generation --------------------------------------------------------------

@dataclass
class GenSample:
    anchor: int
    neighbor: int
    alpha: float
    beta: float
    latent: np.ndarray        # projected latent
    weights: np.ndarray       # weights over [anchor] + neighbors(anchor), sum to 1, >= 0
    residual: float           # distance of the pre-projection point to the region's affine hull

    def manifest_line(self, sample_id: int) -> str:
        return f"{sample_id}\t{self.anchor}\t{self.neighbor}\t{self.alpha!r}\t{self.beta!r}"


def default_beta(state: TrainState) -> float:
    """0.1 x the mean distance between latents and their neighbors."""
    return 0.1 * _graph(state).mean_distance()


def _graph(state: TrainState):
    if state.graph is None:
        state.graph = refresh_neighbors(state.latents, state.config.k_neighbors)
        state.graph_step = state.step
    return state.graph


def project_region(point, region: np.ndarray, reg: float):
    """LLE weights of ``point`` over the rows of ``region``, negatives clipped."""
    sol = solve_lle(point, region, reg)
    w = np.clip(sol.weights, 0.0, None)
    s = w.sum()
    w = w / s if s > 0 else np.eye(len(region))[0]
    return w, w @ region.astype(np.float64), sol.residual


def generate(state: TrainState, rng: np.random.Generator, count: int, beta: float | None = None):
    """Sample latents inside local regions of the training manifold.

    Per sample, draws in order: anchor i, one of its neighbors j, alpha in
    [0, 1], then isotropic noise.  The point alpha z_i + (1 - alpha) z_j +
    beta * noise is projected onto the region {z_i} + neighbors(i).
    Returns a list of :class:`GenSample`.
    """
    graph = _graph(state)
    beta = default_beta(state) if beta is None else float(beta)
    if beta < 0:
        raise ValueError("beta must be non-negative")
    lat = state.latents
    out = []
    for _ in range(count):
        i = int(rng.integers(len(lat)))
        j = int(graph.index[i, rng.integers(graph.k)])
        alpha = float(rng.uniform(0.0, 1.0))
        noise = rng.standard_normal(lat.shape[1])
        point = alpha * lat[i].astype(np.float64) + (1 - alpha) * lat[j] + beta * noise
        region = np.concatenate([lat[i:i + 1], lat[graph.index[i]]])
        w, z, resid = project_region(point, region, state.config.lle_reg)
        out.append(GenSample(i, j, alpha, beta, z.astype(np.float32), w, resid))
    return out


def write_generation_manifest(path, samples: Sequence[GenSample]) -> None:
    lines = [s.manifest_line(n) for n, s in enumerate(samples)]
    Path(path).write_text("".join(l + "\n" for l in lines), encoding="utf-8")
