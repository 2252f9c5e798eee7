import struct

import numpy as np
import pytest

from bidense.autograd import Tensor
from bidense.checkpoint import (MAGIC, VERSION, CheckpointError,
                                load_checkpoint, save_checkpoint)
from bidense.model import ModelConfig, Variant, build_network, forward

CFG = ModelConfig(blocks=2, layers=2, n_r=8, n_g=8, scale=2)


@pytest.fixture()
def ckpt(tmp_path):
    net = build_network(CFG, 11)
    path = tmp_path / "net.ckpt"
    save_checkpoint(path, net)
    return net, path


def test_roundtrip_is_bit_exact(ckpt):
    net, path = ckpt
    loaded = load_checkpoint(path)
    assert loaded.config == net.config
    for (name_a, ta), (name_b, tb) in zip(net.parameters(), loaded.parameters()):
        assert name_a == name_b
        np.testing.assert_array_equal(ta.data, tb.data)
    x = Tensor(np.random.default_rng(0).random((1, 3, 8, 8), dtype=np.float32))
    np.testing.assert_array_equal(forward(net, x).data, forward(loaded, x).data)


def test_roundtrip_all_variants(tmp_path):
    configs = [
        ModelConfig(variant=Variant.DBDN_PLUS, blocks=2, layers=1, n_r=4, n_g=4, scale=3),
        ModelConfig(variant=Variant.WO_INTER, blocks=3, layers=1, n_r=4, n_g=4, scale=2),
        ModelConfig(variant=Variant.WO_COMP, blocks=1, layers=3, n_r=4, n_g=2, scale=4),
    ]
    for i, cfg in enumerate(configs):
        net = build_network(cfg, i)
        path = tmp_path / f"v{i}.ckpt"
        save_checkpoint(path, net)
        assert load_checkpoint(path).config == cfg


def test_file_starts_with_magic_and_version(ckpt):
    _, path = ckpt
    head = path.read_bytes()[:8]
    assert head[:4] == MAGIC
    assert struct.unpack("<I", head[4:8]) == (VERSION,)


def test_rejects_bad_magic(ckpt, tmp_path):
    _, path = ckpt
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(bad)


def test_rejects_bad_version(ckpt, tmp_path):
    _, path = ckpt
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(MAGIC + struct.pack("<I", 99) + path.read_bytes()[8:])
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(bad)


def test_rejects_truncation(ckpt, tmp_path):
    _, path = ckpt
    raw = path.read_bytes()
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(raw[:len(raw) - 10])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(bad)


def test_rejects_trailing_bytes(ckpt, tmp_path):
    _, path = ckpt
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(bad)


def test_rejects_shape_tamper(ckpt, tmp_path):
    _, path = ckpt
    raw = bytearray(path.read_bytes())
    # first parameter record sits right after the 32-byte header:
    # name_len + name, then rank, then dims -- bump the first dim
    name_len = struct.unpack_from("<I", raw, 32)[0]
    dim_off = 32 + 4 + name_len + 4
    (dim0,) = struct.unpack_from("<I", raw, dim_off)
    struct.pack_into("<I", raw, dim_off, dim0 + 1)
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(bad)


def test_non_default_wiring_toggle_cannot_serialize(tmp_path):
    cfg = ModelConfig(blocks=2, layers=1, n_r=4, n_g=4, scale=2,
                      concat_extraction=True)
    net = build_network(cfg, 0)
    with pytest.raises(CheckpointError, match="concat_extraction"):
        save_checkpoint(tmp_path / "x.ckpt", net)
