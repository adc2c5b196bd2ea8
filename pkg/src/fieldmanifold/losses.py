"""Reconstruction, locally-linear-embedding and local-isometry losses.

All losses operate on batches recorded on a :class:`~fieldmanifold.autodiff.Tape`
so that their gradients reach both the latents and the hypernetwork.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, Tape, Tensor
from .field import HyperNetwork, eval_field

LLE_REG = 1e-10
NEG_WEIGHT_PENALTY = 1.0
ISO_ALPHA = 100.0
ISO_QUANTILE = 0.25
_MAX_COND = 1e15


@dataclass
class LleSolution:
    weights: np.ndarray
    projection: np.ndarray
    residual: float


def mse(pred: Tensor, target) -> Tensor:
    return ad.mean(ad.square(pred - target))


def reconstruction(net: HyperNetwork, p: dict, z: Tensor, targets, embs) -> Tensor:
    """Mean squared error of the fields decoded from ``z`` (B, n).

    ``targets[m]`` is (B, P_m, C_m) and ``embs[m]`` the embedded coordinates
    (P_m, E_m) for modality m.  Per-modality errors are averaged.
    """
    losses = [mse(eval_field(layers, embs[m]), targets[m])
              for m, layers in enumerate(net.decode_all(z, p))]
    total = losses[0]
    for l in losses[1:]:
        total = total + l
    return total * (1.0 / len(losses)) if len(losses) > 1 else total


rec_loss = reconstruction


def _gram_weights(k: np.ndarray, reg: float):
    """Float64 solve of the regularized Gram system for k (B, J, n)."""
    J = k.shape[1]
    G = k @ np.swapaxes(k, 1, 2)
    tr = np.trace(G, axis1=1, axis2=2)
    if np.any(tr <= 0):
        raise NumericError("solve_lle: latent coincides with all its neighbors "
                           "(Gram matrix is zero, condition estimate inf)")
    M = G + (reg / J) * tr[:, None, None] * np.eye(J)
    cond = np.linalg.cond(M)
    if not np.all(np.isfinite(cond)) or np.any(cond > _MAX_COND):
        raise NumericError(f"solve_lle: singular Gram system, condition estimate {np.max(cond):.3g}")
    u = np.linalg.solve(M, np.ones((len(k), J, 1)))[..., 0]
    s = u.sum(axis=1, keepdims=True)
    return M, u, s, u / s


def lle_weights(k: Tensor, reg: float = LLE_REG) -> Tensor:
    """Affine reconstruction weights from difference vectors k_j = z - z_j.

    ``k`` is (B, J, n).  Solves (G + reg * tr(G)/J * I) u = 1 with G = k k^T
    and returns u / sum(u), shape (B, J).  Recorded as a single primitive
    evaluated in float64; its backward differentiates through the solve,
    the ridge term and the Gram product.
    """
    if k.ndim != 3:
        raise ad.ShapeError("lle_weights", k.shape)
    J = k.shape[1]
    k64 = k.value.astype(np.float64)
    M, u, s, w = _gram_weights(k64, reg)

    def vjp(g):
        g = g.astype(np.float64)
        gu = (g - (g * w).sum(axis=1, keepdims=True)) / s
        a = np.linalg.solve(np.swapaxes(M, 1, 2), gu[..., None])[..., 0]
        gM = -a[:, :, None] * u[:, None, :]
        gG = gM + (reg / J) * np.trace(gM, axis1=1, axis2=2)[:, None, None] * np.eye(J)
        return ((gG + np.swapaxes(gG, 1, 2)) @ k64,)

    return k.tape.record("lle_weights", (k,), w, vjp)


def lle_project(z: Tensor, nbrs: Tensor, reg: float = LLE_REG):
    """Weights of each latent over its neighbors and the projection z' = sum_j w_j z_j.

    ``z`` is (B, n) and ``nbrs`` (B, J, n).  Returns (w (B, J), z' (B, n)).
    """
    B, J, n = nbrs.shape
    if z.shape != (B, n):
        raise ad.ShapeError("lle_project", z.shape, nbrs.shape)
    w = lle_weights(ad.reshape(z, (B, 1, n)) - nbrs, reg)
    zp = ad.reshape(ad.reshape(w, (B, 1, J)) @ nbrs, (B, n))
    return w, zp


def negative_weight_penalty(w: Tensor) -> Tensor:
    """Per-batch mean of sum_j max(0, -w_j)."""
    return ad.mean(ad.sum(ad.relu(-w), axis=1))


def solve_lle(z, neighbors, reg: float = LLE_REG, dtype=np.float64) -> LleSolution:
    """Numpy front end of :func:`lle_project` for a single latent.

    Runs in float64 by default so the returned weights sum to one to
    within 1e-6 even when they are large.
    """
    z = np.asarray(z, dtype).reshape(-1)
    neighbors = np.asarray(neighbors, dtype).reshape(-1, z.size)
    if len(neighbors) < 1:
        raise ValueError("solve_lle needs at least one neighbor")
    tape = Tape(dtype)
    w, zp = lle_project(tape.const(z[None]), tape.const(neighbors[None]), reg)
    proj = zp.value[0].copy()
    resid = float(np.linalg.norm(z.astype(np.float64) - proj))
    return LleSolution(w.value[0].copy(), proj, resid)


def lle_loss(net: HyperNetwork, p: dict, z: Tensor, nbrs: Tensor, targets, embs,
             reg: float = LLE_REG, penalty: float = NEG_WEIGHT_PENALTY) -> Tensor:
    """Reconstruction from each latent's projection onto its neighbors."""
    w, zp = lle_project(z, nbrs, reg)
    loss = reconstruction(net, p, zp, targets, embs)
    if penalty:
        loss = loss + negative_weight_penalty(w) * penalty
    return loss


def select_iso_pairs(signals, ids=None, quantile: float = ISO_QUANTILE):
    """Pairs (i, j) of batch rows whose signal distance is in the lowest quantile.

    ``signals`` is (B, D) of sampled signal values.  Ties are broken by the
    dataset ids of the pair, so the selected set does not depend on batch
    order.  Returns (rows_i, rows_j, signal_dist) sorted by distance.
    """
    s = np.asarray(signals, np.float64)
    B = len(s)
    ids = np.arange(B) if ids is None else np.asarray(ids)
    ii, jj = np.triu_indices(B, 1)
    if len(ii) == 0:
        return ii, jj, np.zeros(0)
    d = np.sqrt(((s[ii] - s[jj]) ** 2).sum(axis=1))
    lo, hi = np.minimum(ids[ii], ids[jj]), np.maximum(ids[ii], ids[jj])
    order = np.lexsort((hi, lo, d))
    n_sel = max(1, math.ceil(quantile * len(ii)))
    sel = order[:n_sel]
    return ii[sel], jj[sel], d[sel]


def iso_loss(z: Tensor, signals, ids=None, alpha: float = ISO_ALPHA,
             quantile: float = ISO_QUANTILE) -> Tensor:
    """Mean |alpha * |z_i - z_j| - |I_i - I_j|| over the closest signal pairs."""
    tape = z.tape
    if z.shape[0] < 2:
        return tape.const(0.0)
    ii, jj, sd = select_iso_pairs(signals, ids, quantile)
    diff = ad.gather(z, ii) - ad.gather(z, jj)
    zd = ad.sqrt(ad.sum(ad.square(diff), axis=1) + 1e-12)
    return ad.mean(ad.abs(zd * alpha - sd.astype(tape.dtype)))


def total_loss(rec: Tensor, lle: Tensor | None = None, iso: Tensor | None = None) -> Tensor:
    """Unit-weighted sum of the enabled components."""
    total = rec
    for part in (lle, iso):
        if part is not None:
            total = total + part
    return total
