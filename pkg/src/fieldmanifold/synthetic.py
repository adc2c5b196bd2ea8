"""Small synthetic datasets for tests and demos."""
from __future__ import annotations

import numpy as np

from .signal_io import GridSignal, SignalDataset


def sinusoid_mixture(params: np.ndarray, size: int = 16) -> np.ndarray:
    """Images sum_c 0.5 * sin(2 pi (fx_c x + fy_c y) + phase_c) on a size x size grid.

    ``params`` is (n, components, 3) holding (fx, fy, phase).  Values stay in
    [-1, 1] for up to two components.
    """
    t = np.arange(size) / size
    y, x = np.meshgrid(t, t, indexing="ij")
    fx, fy, ph = params[..., 0], params[..., 1], params[..., 2]
    ang = 2 * np.pi * (fx[..., None, None] * x + fy[..., None, None] * y) + ph[..., None, None]
    return (0.5 * np.sin(ang)).sum(axis=1).astype(np.float32)


def sinusoid_params(n: int, rng: np.random.Generator, components: int = 2,
                    freq=(0.3, 1.5)) -> np.ndarray:
    f = rng.uniform(*freq, (n, components, 2))
    ph = rng.uniform(0, 2 * np.pi, (n, components, 1))
    return np.concatenate([f, ph], -1)


def sinusoid_images(n: int, size: int = 16, seed: int = 0, components: int = 2) -> SignalDataset:
    rng = np.random.default_rng(seed)
    imgs = sinusoid_mixture(sinusoid_params(n, rng, components), size)
    bundles = [[GridSignal("image", img[..., None], (0.0, 255.0), {"maxval": 255})] for img in imgs]
    return SignalDataset.from_bundles(bundles)


def image_audio_pairs(n: int, image_size: int = 8, length: int = 64, seed: int = 0) -> SignalDataset:
    """Bundles of an image and a waveform driven by the same parameters.

    Each entry draws a frequency f and phase p; the image is a single
    oblique sinusoid and the waveform a tone whose pitch and phase follow
    (f, p), so either modality determines the other.
    """
    rng = np.random.default_rng(seed)
    f = rng.uniform(0.5, 1.5, n)
    p = rng.uniform(0, 2 * np.pi, n)
    t = np.arange(image_size) / image_size
    y, x = np.meshgrid(t, t, indexing="ij")
    imgs = 0.8 * np.sin(2 * np.pi * f[:, None, None] * (x + 0.5 * y) + p[:, None, None])
    s = np.arange(length) / length
    waves = 0.8 * np.sin(2 * np.pi * (2 * f[:, None]) * s + p[:, None])
    bundles = [[GridSignal("image", im[..., None], (0.0, 255.0), {"maxval": 255}),
                GridSignal("audio", w[:, None], (-32768.0, 32768.0), {"sample_rate": 16000})]
               for im, w in zip(imgs.astype(np.float32), waves.astype(np.float32))]
    return SignalDataset.from_bundles(bundles)
