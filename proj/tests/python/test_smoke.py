import math
import struct
import zlib

import numpy as np
import pytest
from PIL import Image

import lshift

TINY_CONFIG = """\
height = 8
width = 8
frames = 4
object_size = 2
velocity = 1
base_channels = 8
channel_multipliers = 1,2
num_res_blocks = 1
attention_levels = 1
heads = 2
context_dim = 8
norm_groups = 4
mlp_ratio = 2
diffusion_steps = 50
sample_steps = 5
batch_size = 2
lr = 1e-3
eval_samples = 4
eval_sample_steps = 5
steps = 3
"""


def naive_shift(z, fold):
    b, f, c, h, w = z.shape
    k = c // fold
    out = np.zeros_like(z)
    for i in range(f):
        if i > 0:
            out[:, i, :k] = z[:, i - 1, :k]
        out[:, i, k : c - k] = z[:, i, k : c - k]
        if i + 1 < f:
            out[:, i, c - k :] = z[:, i + 1, c - k :]
    return out


@pytest.mark.parametrize("shape,fold", [((2, 5, 7, 3, 2), 3), ((1, 1, 6, 2, 2), 3), ((1, 2, 8, 1, 1), 4)])
def test_shift_matches_numpy(shape, fold):
    z = np.random.default_rng(0).normal(size=shape)
    assert np.array_equal(lshift.temporal_shift(z, fold), naive_shift(z, fold))


def test_shift_rejects_bad_rank():
    with pytest.raises(ValueError):
        lshift.temporal_shift(np.zeros((2, 3)))


def test_partition_and_parameter_count():
    assert lshift.shift_partition(10, 3) == (3, 4, 3)
    on = lshift.unet_parameter_count(use_shift=True)
    assert on == lshift.unet_parameter_count(use_shift=False)
    assert on > 0


def test_schedule_matches_closed_form():
    s = lshift.schedule()
    ab = 1.0
    for t in range(1, 1001):
        beta = (math.sqrt(8.5e-4) + (t - 1) / 999 * (math.sqrt(1.2e-2) - math.sqrt(8.5e-4))) ** 2
        ab *= 1 - beta
    assert abs(s["alpha_bars"][-1] - ab) < 1e-15
    r = lshift.schedule(kept=100)
    assert r["steps"] == 100 and r["timesteps"][-1] == 1000


def test_render_and_probe_agree():
    for caption in lshift.captions():
        video, track = lshift.render(caption, seed=3)
        assert video.shape == (8, 3, 16, 16) and video.dtype == np.float32
        assert len(track) == 8
        assert lshift.centroid_probe(video) == caption.rsplit(" ", 1)[1]


def test_bad_caption_raises():
    with pytest.raises(ValueError):
        lshift.render("a purple square moving left")


def test_cli_train_sample_outputs_open_in_pillow(tmp_path):
    conf = tmp_path / "tiny.conf"
    conf.write_text(TINY_CONFIG)
    code, out, err = lshift.cli(["train", "--config", str(conf), "--out", str(tmp_path / "run")])
    assert code == 0, err
    ckpt = tmp_path / "run" / "final.lsc"
    code, out, err = lshift.cli(
        ["sample", "--ckpt", str(ckpt), "--prompt", "a red circle moving up", "--out",
         str(tmp_path / "s"), "--steps", "5", "--upscale", "2"]
    )
    assert code == 0, err
    assert "probe=" in out
    png = tmp_path / "s" / "frame_000.png"
    raw = png.read_bytes()
    # Every chunk carries a valid CRC.
    pos = 8
    while pos < len(raw):
        (length,) = struct.unpack(">I", raw[pos : pos + 4])
        body = raw[pos + 4 : pos + 8 + length]
        (crc,) = struct.unpack(">I", raw[pos + 8 + length : pos + 12 + length])
        assert zlib.crc32(body) == crc
        pos += 12 + length
    with Image.open(png) as im:
        assert im.size == (16, 16) and im.mode == "RGB"
    with Image.open(tmp_path / "s" / "sample.gif") as gif:
        assert gif.n_frames == 4
        assert gif.size == (16, 16)


def test_cli_exit_codes(tmp_path):
    assert lshift.cli(["sample", "--ckpt", str(tmp_path / "missing.lsc"), "--prompt", "x", "--out", "o"])[0] == 2
    assert lshift.cli(["no-such-command"])[0] == 2
    code, out, _ = lshift.cli(["shift-demo"])
    assert code == 0 and "frame 0" in out
