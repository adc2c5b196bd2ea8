"""Command line entry point.

Every command that writes files takes ``--out DIR`` and leaves a copy of
its resolved configuration there as ``run_config.txt``.  Errors are
reported as a single ``error: <kind>: <message>`` line on stderr with exit
status 2 (configuration), 3 (data) or 4 (numeric failure).
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import inference
from .autodiff import NumericError
from .field import ConfigError
from .graph import knn
from .signal_io import (DataError, GridSignal, Manifest, build_manifest, export,
                        extension_for, load_signal)
from .trainer import TrainConfig, Trainer, restore

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

# keys a train config file may hold besides the TrainConfig fields
RUN_KEYS = {"manifest": str, "out": str, "split": str}
_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


# -- config files --------------------------------------------------------------

def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: '{text}'")


def _coerce(key: str, text: str):
    if key in RUN_KEYS:
        return text
    if key not in _TRAIN_FIELDS:
        raise ConfigError(f"unknown config key '{key}'")
    kind = type(getattr(TrainConfig(), key))
    try:
        if kind is bool:
            return parse_bool(text)
        if kind is int:
            return int(text, 0)
        return kind(text)
    except ValueError:
        raise ConfigError(f"bad value for '{key}': '{text}'") from None


def read_config(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file") from None
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = _coerce(key, value)
    return out


def format_config(values: dict) -> str:
    lines = []
    for k in sorted(values):
        v = values[k]
        if isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def _write_run_config(out: Path, values: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.txt").write_text(format_config(values), encoding="utf-8")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


# -- commands ------------------------------------------------------------------

def cmd_prepare(args) -> int:
    man = build_manifest(args.root, args.modalities.split(","), args.holdout)
    Path(args.manifest).parent.mkdir(parents=True, exist_ok=True)
    man.write(args.manifest)
    print(f"{len(man.entries)} entries, modalities {','.join(man.modalities)}")
    return 0


def cmd_train(args) -> int:
    values = read_config(args.config) if args.config else {}
    for key in list(_TRAIN_FIELDS) + list(RUN_KEYS):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = _coerce(key, v) if isinstance(v, str) else v
    for key in ("manifest", "out"):
        if key not in values:
            raise ConfigError(f"'{key}' must be given in the config file or as {_flag(key)}")
    split = values.get("split", "train")
    config = TrainConfig.from_dict({k: v for k, v in values.items() if k in _TRAIN_FIELDS})
    resolved = {**config.to_dict(), "manifest": values["manifest"], "out": values["out"], "split": split}
    out = Path(values["out"])
    _write_run_config(out, resolved)

    man = Manifest.read(values["manifest"])
    dataset = man.dataset(split)
    if args.resume:
        trainer = Trainer.restore(args.resume, dataset, config)
    else:
        trainer = Trainer(dataset, config)
    trainer.state.info = {"ranges": {m: list(r) for m, r in man.ranges.items()},
                          "manifest": str(values["manifest"])}
    hist = trainer.run(metrics_path=out / "metrics.tsv", ckpt_dir=out / "checkpoints")
    last = hist[-1] if hist else None
    msg = f"step {trainer.state.step}"
    if last is not None:
        msg += f" rec {last.rec:.6g} lle {last.lle:.6g} iso {last.iso:.6g} total {last.total:.6g}"
    print(msg)
    return 0


def _export_bundle(bundle, out: Path, stem: str) -> list[Path]:
    paths = []
    for sig in bundle:
        p = out / f"{stem}_{sig.modality}{extension_for(sig)}"
        export(sig, p)
        paths.append(p)
    return paths


def cmd_reconstruct(args) -> int:
    state = restore(args.ckpt)
    if args.lr is None:
        args.lr = inference.fit_lr(state.latents)
    man = Manifest.read(args.manifest)
    ids = man.ids(args.split)
    if not ids:
        raise DataError(f"split '{args.split}' has no entries")
    out = Path(args.out)
    _write_run_config(out, vars_of(args))
    errs = []
    for i, bundle in zip(ids, man.load_bundles(args.split)):
        z = inference.fit_latent(state, bundle, iters=args.iters, lr=args.lr)
        rec = inference.decode(state, z, bundle)[0]
        err = inference.bundle_mse(bundle, rec)
        errs.append(err)
        _export_bundle(rec, out, f"recon_{i:05d}")
        print(f"{i}\tmse {err:.9g}\tpsnr {inference.format_psnr(inference.psnr(err))}")
    mean = float(np.mean(errs))
    print(f"mean\tmse {mean:.9g}\tpsnr {inference.format_psnr(inference.psnr(mean))}")
    return 0


def _check_id(state, i: int) -> int:
    if not 0 <= i < len(state.latents):
        raise DataError(f"id {i} outside 0..{len(state.latents) - 1}")
    return i


def cmd_interpolate(args) -> int:
    if args.steps < 2:
        raise ConfigError("--steps must be >= 2")
    state = restore(args.ckpt)
    a = state.latents[_check_id(state, args.id_a)]
    b = state.latents[_check_id(state, args.id_b)]
    out = Path(args.out)
    _write_run_config(out, vars_of(args))
    ts = np.linspace(0.0, 1.0, args.steps)
    zs = np.stack([inference.interpolate(a, b, float(t)) for t in ts])
    for k, bundle in enumerate(inference.decode(state, zs)):
        _export_bundle(bundle, out, f"interp_{k:04d}")
    print(f"{args.steps} latents between {args.id_a} and {args.id_b}")
    return 0


def _pairs(items, what: str, tags) -> dict:
    out = {}
    for item in items or []:
        if "=" in item:
            tag, path = item.split("=", 1)
        elif len(tags) == 1:
            tag, path = tags[0], item
        else:
            raise ConfigError(f"{what} '{item}' must be MODALITY=FILE for multimodal models")
        if tag not in tags:
            raise ConfigError(f"{what}: unknown modality '{tag}' (model has {', '.join(tags)})")
        out[tag] = path
    return out


def cmd_complete(args) -> int:
    state = restore(args.ckpt)
    if args.lr is None:
        args.lr = inference.fit_lr(state.latents)
    tags = [l.tag for l in state.layouts]
    inputs = _pairs(args.input, "--input", tags)
    mask_files = _pairs(args.mask, "--mask", tags)
    if not inputs:
        raise ConfigError("at least one --input is required")
    signals, masks = [], []
    ranges = state.info.get("ranges", {})
    for lay in state.layouts:
        if lay.tag in inputs:
            sig = load_signal(inputs[lay.tag])
            mask = None
            if lay.tag in mask_files:
                m = load_signal(mask_files[lay.tag])
                if m.shape != sig.shape:
                    raise DataError(f"mask {mask_files[lay.tag]} has shape {m.shape}, "
                                    f"signal has {sig.shape}")
                mask = (m.values > 0).any(axis=-1)
        else:
            # modality not given: hallucinated from the others
            sig = GridSignal(lay.tag, np.zeros(lay.shape + (lay.channels,), np.float32),
                             tuple(ranges.get(lay.tag, (-1.0, 1.0))))
            mask = np.zeros(lay.shape, bool)
        signals.append(sig)
        masks.append(mask)
    out = Path(args.out)
    _write_run_config(out, vars_of(args))
    bundles, _ = inference.complete(state, signals, masks, args.samples, args.seed,
                                    iters=args.iters, lr=args.lr)
    for k, bundle in enumerate(bundles):
        _export_bundle(bundle, out, f"complete_{k:03d}")
    print(f"{len(bundles)} completions")
    return 0


def cmd_generate(args) -> int:
    state = restore(args.ckpt)
    out = Path(args.out)
    _write_run_config(out, vars_of(args))
    samples = inference.generate(state, np.random.default_rng(args.seed), args.count, args.beta)
    bundles = inference.decode(state, np.stack([s.latent for s in samples])) if samples else []
    for k, bundle in enumerate(bundles):
        _export_bundle(bundle, out, f"sample_{k:05d}")
    inference.write_generation_manifest(out / "samples.tsv", samples)
    print(f"{len(samples)} samples, beta {samples[0].beta if samples else 0.0:.6g}")
    return 0


def cmd_neighbors(args) -> int:
    state = restore(args.ckpt)
    i = _check_id(state, args.id)
    k = args.k if args.k is not None else state.config.k_neighbors
    if not 1 <= k < len(state.latents):
        raise ConfigError(f"--k must be in [1, {len(state.latents) - 1}]")
    idx, dist = knn(state.latents, state.latents[i:i + 1], k, exclude=[i])
    for r, (j, d) in enumerate(zip(idx[0], dist[0]), 1):
        print(f"{r}\t{j}\t{d:.9g}")
    return 0


def vars_of(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func" and v is not None}


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fieldmanifold",
                                 description="Learn a manifold of grid signals and use it.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="scan a directory and write a manifest")
    p.add_argument("--root", required=True)
    p.add_argument("--modalities", default="image", help="comma separated, e.g. image,audio")
    p.add_argument("--holdout", type=int, default=0, help="last N entries form the test split")
    p.add_argument("--manifest", required=True, help="output manifest path")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train (or resume) a model")
    p.add_argument("--config", help="flat 'key = value' file")
    p.add_argument("--resume", help="checkpoint to continue from")
    for key in RUN_KEYS:
        p.add_argument(_flag(key), dest=key)
    for name in _TRAIN_FIELDS:
        p.add_argument(_flag(name), dest=name, metavar=name.upper())
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="fit and decode held-out signals")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--lr", type=float, default=None, help="fitting step (default: scaled to the latent table)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("interpolate", help="decode latents on the segment between two entries")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--id-a", type=int, required=True)
    p.add_argument("--id-b", type=int, required=True)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("complete", help="fill in the unobserved part of a signal")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", action="append", help="[MODALITY=]FILE; repeat per modality")
    p.add_argument("--mask", action="append", help="[MODALITY=]FILE; cells > 0 are observed")
    p.add_argument("--samples", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--lr", type=float, default=None, help="fitting step (default: scaled to the latent table)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("generate", help="sample new signals from the manifold")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--beta", type=float, help="noise scale (default 0.1 x mean neighbor distance)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("neighbors", help="nearest training latents of an entry")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--id", type=int, required=True)
    p.add_argument("--k", type=int)
    p.set_defaults(func=cmd_neighbors)
    return ap


def _fail(kind: str, exc: BaseException, code: int) -> int:
    msg = " ".join(str(exc).split())
    print(f"error: {kind}: {msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except DataError as exc:
        return _fail("data", exc, EXIT_DATA)
    except NumericError as exc:
        return _fail("numeric", exc, EXIT_NUMERIC)
    except (FloatingPointError, OverflowError) as exc:
        return _fail("numeric", exc, EXIT_NUMERIC)


if __name__ == "__main__":
    sys.exit(main())
