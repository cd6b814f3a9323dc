"""Tests for the binary checkpoint container."""

import struct

import numpy as np
import pytest

from sgfi.arch import GraphError, Node, ArchSpec, init_params, run_graph
from sgfi.autodiff import Tensor
from sgfi.checkpoint import (Checkpoint, load_checkpoint, save_checkpoint,
                             MAGIC, VERSION)


def _small_spec():
    nodes = [
        Node(name="img", kind="input", in_channels=0, out_channels=3),
        Node(name="c1", kind="conv", in_channels=3, out_channels=4,
             kernel=3, activation="relu"),
        Node(name="c2", kind="conv", in_channels=4, out_channels=2,
             kernel=1, role="head"),
    ]
    return ArchSpec(nodes=nodes, edges=[("img", "c1"), ("c1", "c2")])


def _ckpt(seed=0, meta=None):
    spec = _small_spec()
    params = {k: v.data for k, v in init_params(spec, seed=seed).items()}
    return Checkpoint(spec=spec, params=params,
                      meta=meta or {"epoch": 3, "optimizer": "adamax",
                                    "seed": seed})


def test_round_trip_preserves_everything(tmp_path):
    ck = _ckpt(seed=1)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, ck)
    back = load_checkpoint(path)
    assert back.spec.to_json_dict() == ck.spec.to_json_dict()
    assert back.meta == ck.meta
    assert set(back.params) == set(ck.params)
    for name, arr in ck.params.items():
        # Stored at 32-bit precision.
        assert np.array_equal(back.params[name],
                              arr.astype(np.float32).astype(np.float64))


def test_save_load_save_is_byte_identical(tmp_path):
    ck = _ckpt(seed=2)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, ck)
    save_checkpoint(p2, load_checkpoint(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_round_trip_gives_identical_eval_outputs(tmp_path):
    ck = _ckpt(seed=3)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, ck)
    back = load_checkpoint(path)
    x = Tensor(np.random.default_rng(4).random((3, 8, 8)))
    tens_a = {k: Tensor(v.astype(np.float32).astype(np.float64))
              for k, v in ck.params.items()}
    tens_b = {k: Tensor(v) for k, v in back.params.items()}
    out_a = run_graph(ck.spec, tens_a, {"img": x}, ["c2"])["c2"]
    out_b = run_graph(back.spec, tens_b, {"img": x}, ["c2"])["c2"]
    assert np.array_equal(out_a.data, out_b.data)


def test_magic_and_version_bytes(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, _ckpt())
    raw = path.read_bytes()
    assert raw[:4] == MAGIC == b"SGFI"
    assert struct.unpack_from("<I", raw, 4)[0] == VERSION == 1


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, _ckpt())
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(path)


def test_unsupported_version_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, _ckpt())
    raw = bytearray(path.read_bytes())
    struct.pack_into("<I", raw, 4, 9)
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="version 9"):
        load_checkpoint(path)


def test_truncated_payload_names_cause(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, _ckpt())
    raw = path.read_bytes()
    path.write_bytes(raw[:-20])
    with pytest.raises(ValueError, match="truncated tensor data"):
        load_checkpoint(path)


def test_tampered_shape_names_cause(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, _ckpt())
    raw = path.read_bytes()
    (header_len,) = struct.unpack_from("<Q", raw, 8)
    header = raw[16:16 + header_len]
    # The weight tensor of c1 is (4,3,3,3); rewrite its shape entry.
    tampered = header.replace(b'"shape":[4,3,3,3]', b'"shape":[4,3,3,2]')
    assert tampered != header
    path.write_bytes(raw[:8] + struct.pack("<Q", len(tampered)) + tampered
                     + raw[16 + header_len:])
    with pytest.raises(ValueError, match="tensor table mismatch"):
        load_checkpoint(path)


def test_save_rejects_incomplete_params(tmp_path):
    ck = _ckpt()
    del ck.params["c1.bias"]
    with pytest.raises(GraphError, match="missing"):
        save_checkpoint(tmp_path / "m.ckpt", ck)


def test_save_accepts_tensor_values(tmp_path):
    spec = _small_spec()
    params = init_params(spec, seed=5)  # Tensor-valued
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, Checkpoint(spec=spec, params=params, meta={}))
    back = load_checkpoint(path)
    for name, t in params.items():
        assert np.array_equal(back.params[name],
                              t.data.astype(np.float32).astype(np.float64))
