"""Auto-decoder training: one latent per signal, optimized with the hypernetwork.

Randomness is drawn from a stream keyed by ``(seed, step)``, consumed as
batch indices, then coordinates per modality.  A run is therefore fully
determined by the config, the dataset and the step count, which is what
makes resumed runs identical to uninterrupted ones.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, Tape
from .checkpoint import (decode_int, decode_json, encode_int, encode_json, read_arrays,
                         write_arrays)
from .field import ConfigError, FieldArch, HyperArch, HyperNetwork, embed, grid_coords, init_latents
from .graph import NeighborGraph, refresh_neighbors
from .losses import iso_loss, lle_loss, reconstruction, total_loss
from .optim import Adam, AdamState
from .signal_io import DataError, ModalityLayout, SignalDataset

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 128
    points_per_signal: int = 1024
    lr: float = 1e-4
    steps: int = 1000
    k_neighbors: int = 10
    alpha: float = 100.0
    seed: int = 0
    neighbor_refresh_interval: int = 100
    checkpoint_interval: int = 0
    use_lle: bool = True
    use_iso: bool = True
    lle_reg: float = 1e-10
    neg_weight_penalty: float = 1.0
    latent_std: float = 0.01
    latent_dim: int = 1024
    trunk_dim: int = 512
    trunk_layers: int = 3
    rank: int = 10
    embed_dim: int = 512
    embed_ladder: str = "log"
    embed_octaves: float = 6.0
    hidden_dim: int = 512
    n_hidden_layers: int = 3

    # fields that may change between a run and its resumption
    _UNHASHED = ("steps", "checkpoint_interval")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - set(names))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    def hyper_arch(self) -> HyperArch:
        return HyperArch(self.latent_dim, self.trunk_dim, self.trunk_layers, self.rank)

    def field_arch(self, layout: ModalityLayout) -> FieldArch:
        return FieldArch(layout.coord_dim, layout.channels, self.embed_dim,
                         self.n_hidden_layers, self.hidden_dim, self.embed_ladder, self.embed_octaves)

    def validate(self, n_signals: int, layouts: Sequence[ModalityLayout]) -> None:
        if not 1 <= self.batch_size <= n_signals:
            raise ConfigError(f"batch_size {self.batch_size} must be in [1, N={n_signals}]")
        for lay in layouts:
            if not 1 <= self.points_per_signal <= lay.cells:
                raise ConfigError(f"points_per_signal {self.points_per_signal} exceeds the "
                                  f"{lay.cells} cells of modality '{lay.tag}'")
            self.field_arch(lay)
        if self.use_lle and n_signals <= self.k_neighbors:
            raise ConfigError(f"k_neighbors {self.k_neighbors} needs more than {n_signals} signals")
        if self.neighbor_refresh_interval < 1:
            raise ConfigError("neighbor_refresh_interval must be >= 1")
        if not 0 <= self.seed < 1 << 64:
            raise ConfigError("seed must be a non-negative 64-bit integer")
        self.hyper_arch()

    def hash(self, layouts: Sequence[ModalityLayout]) -> int:
        d = {k: v for k, v in self.to_dict().items() if k not in self._UNHASHED}
        blob = json.dumps({"config": d, "layouts": [l.to_dict() for l in layouts]}, sort_keys=True)
        return int.from_bytes(hashlib.sha256(blob.encode()).digest()[:8], "little")


class StepLosses(NamedTuple):
    rec: float
    lle: float
    iso: float
    total: float


class Batch(NamedTuple):
    indices: np.ndarray          # (B,) rows of the latent table
    cells: list                  # per modality: (P,) flat grid cells
    targets: list                # per modality: (B, P, C)

    def signal_vectors(self) -> np.ndarray:
        return np.concatenate([t.reshape(len(t), -1) for t in self.targets], axis=1)


class TrainingDiverged(NumericError):
    pass


@dataclass
class TrainState:
    config: TrainConfig
    layouts: tuple
    net: HyperNetwork
    latents: np.ndarray
    adam: Adam
    step: int = 0
    graph: NeighborGraph | None = None
    graph_step: int = -1
    info: dict = dataclasses.field(default_factory=dict)   # free-form, e.g. value ranges for export

    @classmethod
    def fresh(cls, config: TrainConfig, layouts: Sequence[ModalityLayout], n_signals: int) -> "TrainState":
        layouts = tuple(layouts)
        rng = np.random.default_rng([config.seed, 0xFFFF_FFFF])
        net = HyperNetwork(config.hyper_arch(), [config.field_arch(l) for l in layouts],
                           seed=int(rng.integers(1 << 32)))
        latents = init_latents(n_signals, config.latent_dim, rng, config.latent_std)
        return cls(config, layouts, net, latents, Adam(config.lr))

    @property
    def config_hash(self) -> int:
        return self.config.hash(self.layouts)


def batch_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step])


def sample_batch(rng: np.random.Generator, dataset: SignalDataset, config: TrainConfig) -> Batch:
    """Draw ``batch_size`` distinct signals and ``points_per_signal`` distinct
    cells per modality.  The cells are shared by the whole batch so that
    signal distances between batch members are defined."""
    idx = rng.choice(len(dataset), config.batch_size, replace=False)
    cells, targets = [], []
    for lay, values in zip(dataset.layouts, dataset.values):
        c = rng.choice(lay.cells, config.points_per_signal, replace=False)
        cells.append(c)
        targets.append(values[idx][:, c])
    return Batch(idx, cells, targets)


class Trainer:
    def __init__(self, dataset: SignalDataset, config: TrainConfig | None = None,
                 state: TrainState | None = None, debug: bool = False):
        if state is not None:
            config = config or state.config
            if config.hash(dataset.layouts) != state.config_hash:
                raise ConfigError("config or dataset layout does not match the training state")
            if len(state.latents) != len(dataset):
                raise DataError(f"state has {len(state.latents)} latents, dataset has {len(dataset)} entries")
            state.config = config
        elif config is None:
            raise ConfigError("need a config or a state")
        config.validate(len(dataset), dataset.layouts)
        self.dataset = dataset
        self.config = config
        self.state = state or TrainState.fresh(config, dataset.layouts, len(dataset))
        self.debug = debug
        self.embs = [embed(grid_coords(l.shape), a) for l, a in zip(dataset.layouts, self.net.fields)]

    @classmethod
    def restore(cls, path, dataset: SignalDataset, config: TrainConfig | None = None, **kw) -> "Trainer":
        return cls(dataset, config, restore(path, config), **kw)

    @property
    def net(self) -> HyperNetwork:
        return self.state.net

    def sample_batch(self, step: int | None = None) -> Batch:
        step = self.state.step if step is None else step
        return sample_batch(batch_rng(self.config.seed, step), self.dataset, self.config)

    def _maybe_refresh(self):
        s, c = self.state, self.config
        if s.graph is None or s.step - s.graph_step >= c.neighbor_refresh_interval:
            s.graph = refresh_neighbors(s.latents, c.k_neighbors)
            s.graph_step = s.step

    def losses(self, batch: Batch, tape: Tape, params: dict, latents_leaf, rows):
        """Loss components for ``batch`` recorded on ``tape``.

        ``latents_leaf`` holds the latent rows ``rows`` (sorted); the batch
        and its neighbors are looked up inside it.
        """
        c, s = self.config, self.state
        z = ad.gather(latents_leaf, np.searchsorted(rows, batch.indices))
        embs = [tape.const(e[cells]) for e, cells in zip(self.embs, batch.cells)]
        rec = reconstruction(self.net, params, z, batch.targets, embs)
        lle = iso = None
        if c.use_lle:
            nbr = ad.gather(latents_leaf, np.searchsorted(rows, s.graph.index[batch.indices]))
            lle = lle_loss(self.net, params, z, nbr, batch.targets, embs,
                           c.lle_reg, c.neg_weight_penalty)
        if c.use_iso:
            iso = iso_loss(z, batch.signal_vectors(), batch.indices, c.alpha)
        return rec, lle, iso

    def train_step(self) -> StepLosses:
        c, s = self.config, self.state
        if c.use_lle:
            self._maybe_refresh()
        batch = self.sample_batch()
        rows = batch.indices
        if c.use_lle:
            rows = np.concatenate([rows, s.graph.index[batch.indices].ravel()])
        rows = np.unique(rows)

        tape = Tape(debug=self.debug)
        params = self.net.leaves(tape)
        lat = tape.leaf(s.latents[rows], "latents")
        rec, lle, iso = self.losses(batch, tape, params, lat, rows)
        total = total_loss(rec, lle, iso)
        out = StepLosses(float(rec.value), float(lle.value) if lle is not None else 0.0,
                         float(iso.value) if iso is not None else 0.0, float(total.value))
        if not np.isfinite(out.total):
            raise TrainingDiverged(f"non-finite loss at step {s.step}: rec={out.rec} "
                                   f"lle={out.lle} iso={out.iso}")
        grads = tape.backward(total)

        names = sorted(params)
        current = {n: self.net.params[n] for n in names}
        current["latents"] = s.latents
        g = {n: grads[params[n]] for n in names}
        g["latents"] = grads[lat]
        new = s.adam.step(current, g, rows={"latents": rows})
        s.latents = new.pop("latents")
        self.net.params.update(new)
        s.step += 1
        return out

    def run(self, steps: int | None = None, metrics_path=None, ckpt_dir=None,
            callback=None) -> list[StepLosses]:
        """Train until ``steps`` total steps (default: config.steps) have run."""
        target = self.config.steps if steps is None else steps
        history = []
        metrics = None
        if metrics_path:
            Path(metrics_path).parent.mkdir(parents=True, exist_ok=True)
            metrics = open(metrics_path, "a", encoding="utf-8")
        try:
            while self.state.step < target:
                losses = self.train_step()
                history.append(losses)
                if metrics:
                    metrics.write(format_metrics(self.state.step, losses))
                    metrics.flush()
                ci = self.config.checkpoint_interval
                if ckpt_dir and ci and self.state.step % ci == 0:
                    checkpoint(self.state, Path(ckpt_dir) / f"step_{self.state.step:08d}.gemf")
                if callback:
                    callback(self.state.step, losses)
        finally:
            if metrics:
                metrics.close()
        if ckpt_dir:
            checkpoint(self.state, Path(ckpt_dir) / "final.gemf")
        return history


def format_metrics(step: int, l: StepLosses) -> str:
    return f"{step}\t{l.rec:.9g}\t{l.lle:.9g}\t{l.iso:.9g}\t{l.total:.9g}\n"


def checkpoint(state: TrainState, path) -> None:
    """Write parameters, latents, optimizer and sampler state to ``path``."""
    c = state.config
    arrays = {
        "meta": encode_json({"config": c.to_dict(), "layouts": [l.to_dict() for l in state.layouts],
                             "info": state.info}),
        "config_hash": encode_int(state.config_hash),
        "step": np.array([state.step], np.int64),
        "rng.seed": encode_int(c.seed),
        "latents": state.latents,
    }
    names = sorted(state.net.params)
    for n in names:
        arrays[f"param.{n}"] = state.net.params[n]
    a = state.adam.state
    arrays["adam.t"] = np.array([a.t], np.int64)
    for n in sorted(a.m):
        arrays[f"adam.m.{n}"] = a.m[n]
        arrays[f"adam.v.{n}"] = a.v[n]
    if state.graph is not None:
        arrays["neighbors.index"] = state.graph.index
        arrays["neighbors.dist"] = state.graph.dist
        arrays["neighbors.step"] = np.array([state.graph_step], np.int64)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    write_arrays(path, arrays)


def restore(path, config: TrainConfig | None = None) -> TrainState:
    """Load a checkpoint; ``config`` (if given) must hash equal to the stored one."""
    arrays = read_arrays(path)
    try:
        meta = decode_json(arrays["meta"])
        stored = TrainConfig.from_dict(meta["config"])
        layouts = tuple(ModalityLayout.from_dict(d) for d in meta["layouts"])
        stored_hash = decode_int(arrays["config_hash"])
    except (KeyError, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise DataError(f"{path}: checkpoint metadata unreadable ({exc})") from None
    if stored.hash(layouts) != stored_hash:
        raise DataError(f"{path}: stored config does not match its hash")
    if config is not None and config.hash(layouts) != stored_hash:
        raise ConfigError(f"{path}: checkpoint was written with a different config "
                          f"(hash {stored_hash:016x} != {config.hash(layouts):016x})")
    config = config or stored
    params = {k[len("param."):]: v for k, v in arrays.items() if k.startswith("param.")}
    net = HyperNetwork(config.hyper_arch(), [config.field_arch(l) for l in layouts], params=params)
    adam_state = AdamState(lr=config.lr, t=int(arrays["adam.t"][0]))
    for k, v in arrays.items():
        if k.startswith("adam.m."):
            adam_state.m[k[len("adam.m."):]] = v
        elif k.startswith("adam.v."):
            adam_state.v[k[len("adam.v."):]] = v
    state = TrainState(config, layouts, net, arrays["latents"], Adam(state=adam_state),
                       step=int(arrays["step"][0]), info=meta.get("info", {}))
    if "neighbors.index" in arrays:
        state.graph = NeighborGraph(arrays["neighbors.index"].astype(np.int64), arrays["neighbors.dist"])
        state.graph_step = int(arrays["neighbors.step"][0])
    return state
