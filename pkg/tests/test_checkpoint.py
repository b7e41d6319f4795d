import numpy as np
import pytest

from orchmoe.checkpoint import MAGIC, decode, encode, load_checkpoint, restore_into
from orchmoe.config import config_from_dict
from orchmoe.errors import CheckpointFormatError
from orchmoe.harness import restore_estimator, train_run


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt")
    cfg = config_from_dict({
        "architecture": "orchmoe", "seed": 1, "model": {"d": 6}, "router": {"S": 2, "r": 2},
        "suite": {"T_real": 2, "G": 2, "n_train": 8, "n_eval": 4}, "optimizer": {"epochs": 2},
    })
    rep = train_run(cfg, out_dir=out)
    return rep, out / "checkpoint.bin"


def test_round_trip_forward_is_bitwise(run):
    rep, path = run
    est = rep["_estimator"]
    back, cfg, header = restore_estimator(path)
    x = rep["_suite"].eval_x[0]
    assert back.predict(x).tobytes() == est.predict(x).tobytes()
    assert header["rng"]["step"] == est.step_
    assert header["architecture"] == "orchmoe"


def test_encode_decode_is_stable(run):
    rep, path = run
    raw = path.read_bytes()
    assert raw.startswith(MAGIC)
    header, tensors = decode(raw)
    assert encode(rep["_estimator"].model_, header["config"], header["rng"]) == raw
    assert tensors["layer0.skill_router.logits"].shape == (2, 2)


@pytest.mark.parametrize(
    "mutate,offset",
    [
        (lambda b: b"XXXXXXXX" + b[8:], 0),
        (lambda b: b[:8] + (7).to_bytes(4, "little") + b[12:], 8),
        (lambda b: b[:10], 10),
        (lambda b: b[:-3], None),
    ],
)
def test_corrupt_files_report_offset(run, tmp_path, mutate, offset):
    _, path = run
    bad = tmp_path / "bad.bin"
    bad.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(CheckpointFormatError) as exc:
        load_checkpoint(bad)
    assert "byte offset" in str(exc.value)
    if offset is not None:
        assert exc.value.offset == offset


def test_corrupt_header_json(run, tmp_path):
    _, path = run
    raw = bytearray(path.read_bytes())
    raw[20] = ord("}")
    with pytest.raises(CheckpointFormatError) as exc:
        decode(bytes(raw))
    assert exc.value.offset >= 20


def test_restore_rejects_shape_mismatch(run):
    rep, path = run
    _, tensors = load_checkpoint(path)
    tensors["layer0.skill_router.logits"] = np.zeros((3, 3))
    with pytest.raises(CheckpointFormatError):
        restore_into(rep["_estimator"].model_, tensors)
