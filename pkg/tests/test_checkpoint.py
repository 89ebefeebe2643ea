"""Checkpoint round trips, integrity checks, and config mismatch refusal."""

import numpy as np
import pytest

from ttvae.errors import CheckpointError
from ttvae.vae import ModelConfig, TensionVae, load_checkpoint, save_checkpoint

CFG = ModelConfig(latent_dim=6, hidden=8, gru_layers=2, rng_seed=1)


def make_params():
    return TensionVae.initialize(CFG).params


class TestRoundTrip:
    def test_bit_identical_tensors(self, tmp_path):
        params = make_params()
        path = tmp_path / "model.ttv"
        ident = save_checkpoint(path, params, CFG, {"global_batches": 17})
        ckpt = load_checkpoint(path)
        assert ckpt.ident == ident
        assert ckpt.schedule == {"global_batches": 17}
        assert ckpt.config == CFG
        assert set(ckpt.params) == set(params)
        for name in params:
            assert ckpt.params[name].dtype == np.float32
            np.testing.assert_array_equal(ckpt.params[name], params[name])

    def test_save_is_deterministic(self, tmp_path):
        params = make_params()
        p1, p2 = tmp_path / "a.ttv", tmp_path / "b.ttv"
        save_checkpoint(p1, params, CFG)
        save_checkpoint(p2, params, CFG)
        assert p1.read_bytes() == p2.read_bytes()

    def test_ident_tracks_content(self, tmp_path):
        params = make_params()
        id1 = save_checkpoint(tmp_path / "a.ttv", params, CFG)
        params["enc.mu.b"][0] += 1.0
        id2 = save_checkpoint(tmp_path / "b.ttv", params, CFG)
        assert id1 != id2


class TestRejection:
    def test_truncated_file(self, tmp_path):
        path = tmp_path / "model.ttv"
        save_checkpoint(path, make_params(), CFG)
        path.write_bytes(path.read_bytes()[:-20])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_corrupted_blob(self, tmp_path):
        path = tmp_path / "model.ttv"
        save_checkpoint(path, make_params(), CFG)
        raw = bytearray(path.read_bytes())
        raw[-1] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="integrity"):
            load_checkpoint(path)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.ttv"
        path.write_bytes(b"hello world")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_config_mismatch_lists_fields(self, tmp_path):
        path = tmp_path / "model.ttv"
        save_checkpoint(path, make_params(), CFG)
        other = ModelConfig(latent_dim=4, hidden=8, gru_layers=2, rng_seed=1)
        with pytest.raises(CheckpointError, match="latent_dim"):
            load_checkpoint(path, expected_config=other)

    def test_matching_config_accepted(self, tmp_path):
        path = tmp_path / "model.ttv"
        save_checkpoint(path, make_params(), CFG)
        assert load_checkpoint(path, expected_config=CFG).config == CFG
