"""Learn a manifold over grid-sampled signals with hypernetwork-decoded neural fields.

Each training signal owns a latent; a hypernetwork turns latents into the
weights of a small coordinate MLP (the neural field).  Training combines
reconstruction with a locally linear embedding term and a local isometry
term, after which the latent space supports interpolation, masked
completion and sampling.
"""
from .autodiff import NumericError, ShapeError, Tape, Tensor
from .field import ConfigError, FieldArch, HyperArch, HyperNetwork, eval_field, fourier_embed, grid_coords
from .inference import complete, decode, fit_latent, generate, interpolate, psnr
from .losses import iso_loss, lle_loss, reconstruction, solve_lle, total_loss
from .optim import Adam
from .signal_io import DataError, GridSignal, Manifest, SignalDataset, build_manifest, load_signal
from .trainer import TrainConfig, Trainer, checkpoint, restore

__version__ = "0.1.0"
