import zlib

import numpy as np
import pytest

from dualattn import checkpoint as CK
from dualattn import trainer as TR


@pytest.fixture
def trained(tiny_cfg):
    state = TR.init_state(tiny_cfg)
    TR.train(state, TR.make_datasets(tiny_cfg)[0], 2)
    return state


def test_save_load_save_is_byte_identical(trained, tmp_path):
    first = CK.save_checkpoint(trained, tmp_path / "a.dtga")
    loaded = CK.load_checkpoint(first)
    second = CK.save_checkpoint(loaded, tmp_path / "b.dtga")
    assert first.read_bytes() == second.read_bytes()
    assert loaded.step == 2 and loaded.config == trained.config
    for path, arr in trained.params.arrays().items():
        assert np.array_equal(loaded.params[path].data, arr)
        assert np.array_equal(loaded.m[path], trained.m[path])
        assert np.array_equal(loaded.v[path], trained.v[path])
    assert loaded.rng.bit_generator.state == trained.rng.bit_generator.state
    assert not (tmp_path / "a.dtga.tmp").exists()


def test_rejects_truncated_file(trained, tmp_path):
    raw = CK.encode(trained)
    for cut in (3, 20, len(raw) // 2, len(raw) - 1):
        with pytest.raises(CK.CheckpointError):
            CK.decode(raw[:cut])


def test_rejects_corrupted_byte(trained):
    raw = bytearray(CK.encode(trained))
    raw[len(raw) // 2] ^= 0xFF
    with pytest.raises(CK.CheckpointError, match="corrupt"):
        CK.decode(bytes(raw))


def test_rejects_bad_magic_and_version(trained):
    raw = CK.encode(trained)
    with pytest.raises(CK.CheckpointError, match="not a"):
        CK.decode(b"XXXX" + raw[4:])
    body = raw[:4] + (CK.VERSION + 1).to_bytes(4, "little") + raw[8:-4]
    patched = body + zlib.crc32(body).to_bytes(4, "little")
    with pytest.raises(CK.CheckpointError, match="version"):
        CK.decode(patched)


def test_missing_file_is_a_checkpoint_error(tmp_path):
    with pytest.raises(CK.CheckpointError):
        CK.load_checkpoint(tmp_path / "nope.dtga")


def test_resume_matches_uninterrupted_run(tiny_cfg, tmp_path):
    data = TR.make_datasets(tiny_cfg)[0]
    straight = TR.init_state(tiny_cfg)
    TR.train(straight, data, 10)

    first = TR.init_state(tiny_cfg)
    TR.train(first, data, 5)
    CK.save_checkpoint(first, tmp_path / "half.dtga")
    resumed = CK.load_checkpoint(tmp_path / "half.dtga")
    TR.train(resumed, TR.make_datasets(tiny_cfg)[0], 5)

    assert [r.csv_row() for r in first.history + resumed.history] == \
        [r.csv_row() for r in straight.history]
    for path, arr in straight.params.arrays().items():
        assert np.array_equal(resumed.params[path].data, arr)
    assert CK.encode(resumed) == CK.encode(straight)
