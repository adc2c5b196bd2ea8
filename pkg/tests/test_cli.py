import numpy as np
import pytest

from fieldmanifold import cli
from fieldmanifold.signal_io import export
from fieldmanifold.synthetic import sinusoid_images

TINY = """\
# tiny model for tests
batch_size = 6
points_per_signal = 32
lr = 1e-3
steps = 12
k_neighbors = 3
latent_dim = 8
trunk_dim = 16
trunk_layers = 2
rank = 2
embed_dim = 16
hidden_dim = 16
n_hidden_layers = 2
neighbor_refresh_interval = 5
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    data.mkdir()
    ds = sinusoid_images(10, size=8, seed=0)
    for i in range(len(ds)):
        export(ds.bundle(i)[0], data / f"img{i:02d}.pgm")
    man = root / "manifest.tsv"
    assert cli.main(["prepare", "--root", str(data), "--holdout", "2", "--manifest", str(man)]) == 0
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY + f"manifest = {man}\nout = {root / 'run'}\n", encoding="utf-8")
    assert cli.main(["train", "--config", str(cfg)]) == 0
    return root


def ckpt(ws):
    return str(ws / "run" / "checkpoints" / "final.gemf")


def test_train_outputs(workspace):
    run = workspace / "run"
    lines = (run / "metrics.tsv").read_text().splitlines()
    assert len(lines) == 12
    resolved = (run / "run_config.txt").read_text()
    assert "latent_dim = 8" in resolved and "use_lle = true" in resolved and "split = train" in resolved


def test_resume_at_final_step_is_noop(workspace, tmp_path):
    before = (workspace / "run" / "checkpoints" / "final.gemf").read_bytes()
    rc = cli.main(["train", "--config", str(workspace / "tiny.cfg"), "--resume", ckpt(workspace),
                   "--out", str(tmp_path / "again")])
    assert rc == 0
    assert (tmp_path / "again" / "checkpoints" / "final.gemf").read_bytes() == before
    assert not (tmp_path / "again" / "metrics.tsv").read_text()


def test_flags_override_file(workspace, tmp_path):
    rc = cli.main(["train", "--config", str(workspace / "tiny.cfg"), "--steps", "3",
                   "--use-iso", "false", "--out", str(tmp_path / "o")])
    assert rc == 0
    text = (tmp_path / "o" / "run_config.txt").read_text()
    assert "steps = 3" in text and "use_iso = false" in text
    assert len((tmp_path / "o" / "metrics.tsv").read_text().splitlines()) == 3


def test_unknown_config_key_exit_2(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("latent_dimm = 4\n")
    assert cli.main(["train", "--config", str(bad)]) == cli.EXIT_CONFIG
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: config:") and "latent_dimm" in err[0]


def test_resume_with_other_architecture_exit_2(workspace, tmp_path):
    rc = cli.main(["train", "--config", str(workspace / "tiny.cfg"), "--resume", ckpt(workspace),
                   "--latent-dim", "9", "--out", str(tmp_path / "x")])
    assert rc == cli.EXIT_CONFIG


def test_missing_checkpoint_exit_3(tmp_path, capsys):
    rc = cli.main(["neighbors", "--ckpt", str(tmp_path / "nope.gemf"), "--id", "0"])
    assert rc == cli.EXIT_DATA
    assert capsys.readouterr().err.startswith("error: data:")


def test_reconstruct(workspace, tmp_path, capsys):
    out = tmp_path / "rec"
    rc = cli.main(["reconstruct", "--ckpt", ckpt(workspace), "--manifest", str(workspace / "manifest.tsv"),
                   "--split", "test", "--iters", "5", "--out", str(out)])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[-1].startswith("mean\tmse ") and "psnr" in lines[-1]
    assert sorted(p.name for p in out.glob("*.pgm")) == ["recon_00008_image.pgm", "recon_00009_image.pgm"]
    assert (out / "run_config.txt").exists()


def test_interpolate_two_steps_are_endpoints(workspace, tmp_path):
    from fieldmanifold import inference
    from fieldmanifold.signal_io import load_image
    from fieldmanifold.trainer import restore
    out = tmp_path / "interp"
    assert cli.main(["interpolate", "--ckpt", ckpt(workspace), "--id-a", "1", "--id-b", "4",
                     "--steps", "2", "--out", str(out)]) == 0
    files = sorted(out.glob("*.pgm"))
    assert [f.name for f in files] == ["interp_0000_image.pgm", "interp_0001_image.pgm"]
    state = restore(ckpt(workspace))
    ends = inference.decode(state, state.latents[[1, 4]])
    for f, b in zip(files, ends):
        want = np.rint((np.clip(b[0].values, -1, 1) + 1) * 127.5) / 127.5 - 1
        np.testing.assert_allclose(load_image(f).values, want, atol=1e-6)
    assert cli.main(["interpolate", "--ckpt", ckpt(workspace), "--id-a", "1", "--id-b", "4",
                     "--steps", "1", "--out", str(out)]) == cli.EXIT_CONFIG


def test_complete(workspace, tmp_path):
    data = workspace / "data"
    mask = tmp_path / "mask.pgm"
    m = np.zeros((8, 8), np.uint8)
    m[:, :4] = 255
    mask.write_bytes(b"P5\n8 8\n255\n" + m.tobytes())
    out = tmp_path / "c"
    rc = cli.main(["complete", "--ckpt", ckpt(workspace), "--input", str(data / "img03.pgm"),
                   "--mask", str(mask), "--samples", "2", "--iters", "5", "--out", str(out)])
    assert rc == 0
    assert sorted(p.name for p in out.glob("*.pgm")) == ["complete_000_image.pgm", "complete_001_image.pgm"]


def test_complete_rejects_unknown_modality(workspace, tmp_path):
    rc = cli.main(["complete", "--ckpt", ckpt(workspace), "--input", "audio=x.wav", "--out", str(tmp_path)])
    assert rc == cli.EXIT_CONFIG


def test_generate_reproducible(workspace, tmp_path):
    outs = []
    for name in ("g1", "g2"):
        out = tmp_path / name
        assert cli.main(["generate", "--ckpt", ckpt(workspace), "--count", "4", "--seed", "7",
                         "--out", str(out)]) == 0
        outs.append(out)
    files = sorted(p.name for p in outs[0].iterdir())
    assert "samples.tsv" in files and len([f for f in files if f.endswith(".pgm")]) == 4
    for f in files:
        if f != "run_config.txt":
            assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    assert len((outs[0] / "samples.tsv").read_text().splitlines()) == 4


def test_neighbors(workspace, capsys):
    assert cli.main(["neighbors", "--ckpt", ckpt(workspace), "--id", "2", "--k", "3"]) == 0
    rows = [l.split("\t") for l in capsys.readouterr().out.strip().splitlines()]
    assert [r[0] for r in rows] == ["1", "2", "3"]
    assert "2" not in [r[1] for r in rows]
    d = [float(r[2]) for r in rows]
    assert d == sorted(d)
    assert cli.main(["neighbors", "--ckpt", ckpt(workspace), "--id", "99"]) == cli.EXIT_DATA


def test_prepare_errors(tmp_path, capsys):
    assert cli.main(["prepare", "--root", str(tmp_path), "--manifest", str(tmp_path / "m")]) == cli.EXIT_DATA
    assert "no entries" in capsys.readouterr().err


def test_config_parsing(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\n\nuse_lle = no   # trailing\nlr=0.5\nseed = 0x10\n")
    assert cli.read_config(p) == {"use_lle": False, "lr": 0.5, "seed": 16}
    p.write_text("lr 0.5\n")
    with pytest.raises(cli.ConfigError, match=":1"):
        cli.read_config(p)
    p.write_text("batch_size = many\n")
    with pytest.raises(cli.ConfigError, match="batch_size"):
        cli.read_config(p)
