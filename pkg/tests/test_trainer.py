import dataclasses

import numpy as np
import pytest

from conftest import tiny_config
from fieldmanifold import autodiff as ad
from fieldmanifold.field import ConfigError
from fieldmanifold.synthetic import image_audio_pairs, sinusoid_images
from fieldmanifold.trainer import (TrainConfig, Trainer, TrainingDiverged, batch_rng,
                                   format_metrics, sample_batch)


def test_exhaustive_point_draw():
    ds = sinusoid_images(4, size=32)
    cfg = TrainConfig(batch_size=2, points_per_signal=1024)
    b = sample_batch(batch_rng(0, 0), ds, cfg)
    assert sorted(b.cells[0]) == list(range(1024))
    assert len(set(b.indices)) == 2


def test_batches_deterministic(tiny_dataset):
    cfg = tiny_config()
    a = sample_batch(batch_rng(7, 3), tiny_dataset, cfg)
    b = sample_batch(batch_rng(7, 3), tiny_dataset, cfg)
    np.testing.assert_array_equal(a.indices, b.indices)
    np.testing.assert_array_equal(a.cells[0], b.cells[0])
    c = sample_batch(batch_rng(7, 4), tiny_dataset, cfg)
    assert not np.array_equal(a.cells[0], c.cells[0])


def test_multimodal_targets_per_modality():
    ds = image_audio_pairs(6, image_size=8, length=64)
    cfg = tiny_config(points_per_signal=32)
    b = sample_batch(batch_rng(0, 0), ds, cfg)
    assert [t.shape for t in b.targets] == [(6, 32, 1), (6, 32, 1)]
    assert b.signal_vectors().shape == (6, 64)


def test_config_validation(tiny_dataset):
    with pytest.raises(ConfigError, match="batch_size"):
        Trainer(tiny_dataset, tiny_config(batch_size=9))
    with pytest.raises(ConfigError, match="points_per_signal"):
        Trainer(tiny_dataset, tiny_config(points_per_signal=65))
    with pytest.raises(ConfigError, match="k_neighbors"):
        Trainer(tiny_dataset, tiny_config(k_neighbors=8))
    with pytest.raises(ConfigError, match="unknown"):
        TrainConfig.from_dict({"batch_sz": 3})


def test_untouched_rows_bitwise_unchanged(tiny_dataset):
    tr = Trainer(tiny_dataset, tiny_config(batch_size=2, k_neighbors=1, use_iso=False))
    tr.train_step()
    before = tr.state.latents.copy()
    batch = tr.sample_batch()
    touched = set(batch.indices) | set(tr.state.graph.index[batch.indices].ravel())
    tr.train_step()
    after = tr.state.latents
    for i in range(len(before)):
        if i not in touched:
            np.testing.assert_array_equal(after[i], before[i])
    assert any(not np.array_equal(after[i], before[i]) for i in touched)


def test_ablation_mode_never_builds_graph(tiny_dataset):
    tr = Trainer(tiny_dataset, tiny_config(use_lle=False, use_iso=False))
    out = tr.run(5)
    assert tr.state.graph is None
    assert all(l.lle == 0 and l.iso == 0 and l.total == l.rec for l in out)


def test_neighbor_graph_refresh_interval(tiny_dataset):
    tr = Trainer(tiny_dataset, tiny_config(neighbor_refresh_interval=3))
    seen = []
    for _ in range(7):
        tr.train_step()
        seen.append(tr.state.graph_step)
    assert seen == [0, 0, 0, 3, 3, 3, 6]


def test_loss_decreases_on_four_signals():
    ds = sinusoid_images(4, size=8, seed=1)
    tr = Trainer(ds, tiny_config(batch_size=4, k_neighbors=2, steps=200, lr=1e-3))
    hist = np.array([l.total for l in tr.run()])
    smooth = np.convolve(hist, np.ones(20) / 20, mode="valid")
    assert smooth[-1] < smooth[0]


def test_identical_runs_identical_losses(tiny_dataset):
    a = Trainer(tiny_dataset, tiny_config()).run(10)
    b = Trainer(tiny_dataset, tiny_config()).run(10)
    assert a == b


def test_nan_loss_aborts_with_step(tiny_dataset):
    tr = Trainer(tiny_dataset, tiny_config())
    tr.run(2)
    tr.net.params["gate.0.0"] = np.full_like(tr.net.params["gate.0.0"], 3e38)
    with pytest.raises(TrainingDiverged, match="step 2.*rec="), np.errstate(all="ignore"):
        tr.train_step()


def test_debug_mode_names_op(tiny_dataset):
    tr = Trainer(tiny_dataset, tiny_config(use_lle=False, use_iso=False), debug=True)
    tr.net.params["gate.0.0"] = np.full_like(tr.net.params["gate.0.0"], 3e38)
    with pytest.raises(ad.NumericError, match="op"), np.errstate(all="ignore"):
        tr.train_step()


def test_metrics_format():
    from fieldmanifold.trainer import StepLosses
    assert format_metrics(3, StepLosses(0.5, 0.25, 0.0, 0.75)) == "3\t0.5\t0.25\t0\t0.75\n"


def test_config_hash_ignores_step_budget(tiny_dataset):
    a = tiny_config()
    b = dataclasses.replace(a, steps=999, checkpoint_interval=7)
    c = dataclasses.replace(a, latent_dim=9)
    assert a.hash(tiny_dataset.layouts) == b.hash(tiny_dataset.layouts)
    assert a.hash(tiny_dataset.layouts) != c.hash(tiny_dataset.layouts)
