import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mgrs.checkpoint import (MAGIC, Checkpoint, decode_checkpoint, encode_checkpoint,
                             load_checkpoint, save_checkpoint)
from mgrs.config import TrainConfig, load_config, parse_config, save_config
from mgrs.errors import CheckpointError, ConfigError, FormatError
from mgrs.imageio import decode_ppm, encode_ppm, read_mask, write_image, write_mask
from mgrs.optim import AdamState
from mgrs.rng import Rng


def test_white_pixel_bytes():
    assert encode_ppm(np.ones((3, 1, 1))) == b"P6\n1 1\n255\n\xff\xff\xff"


@given(st.integers(1, 6), st.integers(1, 6), st.binary(min_size=108, max_size=108))
def test_ppm_bytes_round_trip(w, h, payload):
    raw = f"P6\n{w} {h}\n255\n".encode() + payload[:w * h * 3]
    assert encode_ppm(decode_ppm(raw)) == raw


def test_ppm_values_and_comments():
    img = decode_ppm(b"P6 # comment\n2 1\n255\n\x00\x80\xff\x01\x02\x03")
    assert img.shape == (3, 1, 2)
    assert img[:, 0, 0].tolist() == [0.0, 128 / 255, 1.0]


def test_ppm_errors_name_offsets():
    with pytest.raises(FormatError, match="offset 0"):
        decode_ppm(b"P5\n1 1\n255\n\x00")
    with pytest.raises(FormatError, match="maxval must be 255.*offset 7"):
        decode_ppm(b"P6\n1 1\n65535\n\x00\x00\x00")
    with pytest.raises(FormatError, match="truncated at byte offset 13"):
        decode_ppm(b"P6\n2 1\n255\n\x00\x00")
    with pytest.raises(FormatError):
        decode_ppm(b"P6\n1")


def test_writer_rounds_and_clamps(tmp_path):
    img = np.array([-0.2, 0.5, 1.7]).reshape(3, 1, 1)
    assert encode_ppm(img)[-3:] == bytes([0, 128, 255])
    m = np.array([[0.0, 1.0]])
    write_mask(tmp_path / "m.ppm", m)
    assert np.array_equal(read_mask(tmp_path / "m.ppm"), m)


def _ck(with_adam=True):
    rng = Rng(1)
    params = {"a.weight": rng.normal((2, 3, 3, 3)), "a.bias": rng.normal((1, 2, 1, 1)),
              "odd": np.array([np.pi, -0.0, 1e-310, 1e300]).reshape(1, 1, 2, 2)}
    adam = None
    if with_adam:
        adam = AdamState(t=17, m={k: rng.normal(v.shape) for k, v in params.items()},
                         v={k: rng.random(v.shape) for k, v in params.items()})
    cfg = TrainConfig()
    return Checkpoint(params, 12, cfg.hash(), cfg.to_text(include_paths=False), adam)


@pytest.mark.parametrize("with_adam", [True, False])
def test_checkpoint_round_trip_bit_exact(tmp_path, with_adam):
    ck = _ck(with_adam)
    save_checkpoint(tmp_path / "x.ckpt", ck)
    back = load_checkpoint(tmp_path / "x.ckpt")
    assert encode_checkpoint(back) == encode_checkpoint(ck)
    for k, v in ck.params.items():
        assert back.params[k].tobytes() == v.tobytes()
    assert back.epoch == 12 and back.config_text == ck.config_text
    if with_adam:
        assert back.adam.t == 17 and back.adam.m["odd"].tobytes() == ck.adam.m["odd"].tobytes()
    else:
        assert back.adam is None
    assert not (tmp_path / "x.ckpt.tmp").exists()


def test_checkpoint_corruption_detected():
    buf = encode_checkpoint(_ck())
    with pytest.raises(CheckpointError, match="magic"):
        decode_checkpoint(b"XXXX" + buf[4:])
    with pytest.raises(CheckpointError, match="version"):
        decode_checkpoint(MAGIC + struct.pack("<I", 2) + buf[8:])
    with pytest.raises(CheckpointError, match="truncated"):
        decode_checkpoint(buf[:-5])
    with pytest.raises(CheckpointError, match="trailing"):
        decode_checkpoint(buf + b"\0")


def test_checkpoint_count_must_match_shape():
    ck = Checkpoint({"w": np.zeros((2, 2))})
    buf = bytearray(encode_checkpoint(ck))
    # value count field follows name (u16 + 1 byte), ndim (u8) and two u32 dims
    header = 4 + 4 + 32 + 4 + 4 + len(ck.config_text) + 4
    off = header + 2 + 1 + 1 + 8
    assert struct.unpack("<Q", bytes(buf[off:off + 8]))[0] == 4
    buf[off:off + 8] = struct.pack("<Q", 3)
    with pytest.raises(CheckpointError, match="shape"):
        decode_checkpoint(bytes(buf))


def test_missing_checkpoint_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.ckpt")


def test_config_round_trip_and_defaults(tmp_path):
    cfg = TrainConfig(seed=3, lambda_distill=0.25, distill=False, out_dir="x y")
    save_config(cfg, tmp_path / "c.txt")
    assert load_config(tmp_path / "c.txt") == cfg
    assert parse_config("") == TrainConfig()


def test_config_parsing_rules():
    cfg = parse_config("# comment\nseed = 9   # trailing\n\nlr0=0.001\ngated_decoder = false\n")
    assert (cfg.seed, cfg.lr0, cfg.gated_decoder) == (9, 0.001, False)
    with pytest.raises(ConfigError, match="unknown"):
        parse_config("sed = 9")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("seed = 1\nseed = 2")
    with pytest.raises(ConfigError):
        parse_config("seed = nine")
    with pytest.raises(ConfigError):
        parse_config("just words")
    with pytest.raises(ConfigError):
        parse_config("patch_size = 20")


def test_config_hash_ignores_paths_only():
    a = TrainConfig()
    assert a.hash() == a.replace(train_dir="elsewhere", out_dir="o").hash()
    assert a.hash() != a.replace(seed=8).hash()
    assert len(a.hash()) == 32
