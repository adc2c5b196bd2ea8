"""Adam with bias correction, with optional row-sparse updates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import NumericError


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Adam:
    """Adam over a dict of named float32 arrays.

    ``step`` returns new arrays rather than writing into the old ones, so
    arrays already handed to a tape stay valid.  When ``rows`` maps a
    parameter name to unique row indices, its gradient holds only those
    rows and only those rows of the parameter and its moments change.  The
    step count advances once per call regardless.
    """

    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, state: AdamState | None = None):
        self.state = state if state is not None else AdamState(lr, beta1, beta2, eps)

    @property
    def t(self) -> int:
        return self.state.t

    def step(self, params: dict, grads: dict, rows: dict | None = None) -> dict:
        st = self.state
        rows = rows or {}
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter '{name}'")
            shape = params[name].shape
            if name in rows:
                shape = (len(rows[name]),) + shape[1:]
            if g.shape != shape:
                raise ValueError(f"gradient shape {g.shape} != expected {shape} for '{name}'")
        st.t += 1
        b1, b2 = np.float32(st.beta1), np.float32(st.beta2)
        bc1 = np.float32(1.0 - st.beta1 ** st.t)
        bc2 = np.float32(1.0 - st.beta2 ** st.t)
        lr, eps = np.float32(st.lr), np.float32(st.eps)
        out = dict(params)
        for name, g in grads.items():
            p = params[name]
            if name not in st.m:
                st.m[name] = np.zeros_like(p)
                st.v[name] = np.zeros_like(p)
            m, v = st.m[name], st.v[name]
            if name in rows:
                idx = rows[name]
                m[idx] = b1 * m[idx] + (1 - b1) * g
                v[idx] = b2 * v[idx] + (1 - b2) * (g * g)
                new = p.copy()
                new[idx] = p[idx] - lr * (m[idx] / bc1) / (np.sqrt(v[idx] / bc2) + eps)
            else:
                # same arithmetic as the row branch, without temporaries
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * (g * g)
                denom = v / bc2
                np.sqrt(denom, out=denom)
                denom += eps
                step = m / bc1
                step *= lr
                step /= denom
                new = p - step
            out[name] = new
        return out
