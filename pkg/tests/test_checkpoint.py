from pathlib import Path

import numpy as np
import pytest

from SRT.checkpoint import MAGIC, checkpoint_bytes, save_checkpoint, load_checkpoint
from SRT.config import ExperimentConfig, config_dump
from SRT.data_io import make_blobs, make_tiny_images
from SRT.errors import FormatError
from SRT.metrics import accuracy, sparsity, channel_sparsity
from SRT.models import BlockSpec, build_mlp, build_conv_net, build_residual_ensemble, forward, loss_and_gradients
from SRT.pruners import init_state, step, finalize_epoch
from SRT.srt_types import AttackSpec
from SRT.tensor import value_of

def trained_state(algorithm: str, model, data, steps: int = 3):
    state = init_state(algorithm, model.values(), beta=1.0, lam=1e-2, lam1=1e-2, lam2=1e-5, eta=0.1, groups=model.group_map())  # type: ignore[arg-type]
    for _ in range(steps):
        model.load_parameters(state.w)
        f_val, grads = loss_and_gradients(model, data.inputs.data, data.labels, "train", np.random.default_rng(0))
        state = step(state, grads, f_val)
    return state

class TestRoundTrip:
    def test_residual_ensemble_metrics_are_bit_exact(self, tmp_path: Path):
        data = make_blobs(20, 2, 3, 0.2, 1)
        model = build_residual_ensemble(2, BlockSpec(3, 6, 2, 2), 0.1, seed=2)
        model = finalize_epoch(trained_state("rvsm", model, data), model)

        path = tmp_path / "best.ckpt"
        save_checkpoint(path, model)
        loaded = load_checkpoint(path).model

        assert loaded.spec == model.spec
        assert loaded.layer_records() == model.layer_records()
        for pid, value in model.values().items():
            np.testing.assert_array_equal(loaded.values()[pid], value)

        spec = AttackSpec("ifgsm", 0.05, 0.02, 3, True)
        assert accuracy(loaded, data, spec, seed=5) == accuracy(model, data, spec, seed=5)
        assert sparsity(loaded) == sparsity(model)
        assert channel_sparsity(loaded) == channel_sparsity(model)
        np.testing.assert_array_equal(value_of(forward(loaded, data.inputs.data)), value_of(forward(model, data.inputs.data)))

    def test_stripped_model_stays_stripped(self, tmp_path: Path):
        from SRT.models import strip_skip_connections

        model = strip_skip_connections(build_residual_ensemble(1, BlockSpec(2, 4, 1, 2), 0.0, seed=3))
        save_checkpoint(tmp_path / "m.ckpt", model)
        assert not load_checkpoint(tmp_path / "m.ckpt").model.skip

    def test_conv_net(self, tmp_path: Path):
        data = make_tiny_images(3, 2, 5, 5, 4)
        model = build_conv_net((1, 5, 5), (2, 3), 3, 2, seed=4)
        save_checkpoint(tmp_path / "conv.ckpt", model)
        loaded = load_checkpoint(tmp_path / "conv.ckpt").model
        np.testing.assert_array_equal(value_of(forward(loaded, data.inputs.data)), value_of(forward(model, data.inputs.data)))

    def test_config_text(self, tmp_path: Path):
        text = config_dump(ExperimentConfig(seed=9))
        save_checkpoint(tmp_path / "c.ckpt", build_mlp([2, 2]), config_text=text)
        assert load_checkpoint(tmp_path / "c.ckpt").config_text == text

    def test_bytes_are_deterministic(self):
        model = build_mlp([3, 4, 2], seed=6)
        assert checkpoint_bytes(model) == checkpoint_bytes(model.copy())

class TestPrunerState:
    @pytest.mark.parametrize("algorithm", ["rvsm", "rgsm", "admm"])
    def test_state_round_trip(self, tmp_path: Path, algorithm: str):
        data = make_blobs(10, 2, 2, 0.2, 7)
        model = build_mlp([2, 5, 2], seed=8)
        state = trained_state(algorithm, model, data)

        save_checkpoint(tmp_path / "s.ckpt", model, state)
        loaded = load_checkpoint(tmp_path / "s.ckpt").state

        assert loaded is not None
        assert loaded.algorithm == algorithm
        assert (loaded.beta, loaded.lam, loaded.lam1, loaded.lam2, loaded.eta) == (state.beta, state.lam, state.lam1, state.lam2, state.eta)
        assert loaded.history == state.history
        for name in ("w", "u"):
            for pid, value in getattr(state, name).items():
                np.testing.assert_array_equal(getattr(loaded, name)[pid], value)
        if algorithm == "admm":
            for pid, value in state.z.items():
                np.testing.assert_array_equal(loaded.z[pid], value)
        else:
            assert loaded.z is None

    def test_resumed_step_matches(self, tmp_path: Path):
        data = make_blobs(10, 2, 2, 0.2, 9)
        model = build_mlp([2, 4, 2], seed=10)
        state = trained_state("rvsm", model, data)
        save_checkpoint(tmp_path / "r.ckpt", model, state)
        loaded = load_checkpoint(tmp_path / "r.ckpt").state

        grads = {pid: np.full_like(value, 0.01) for pid, value in state.w.items()}
        np.testing.assert_array_equal(step(loaded, grads, 1.0).history, step(state, grads, 1.0).history)

    def test_no_state(self, tmp_path: Path):
        save_checkpoint(tmp_path / "n.ckpt", build_mlp([2, 2]))
        assert load_checkpoint(tmp_path / "n.ckpt").state is None

class TestCorruption:
    @pytest.fixture
    def blob(self) -> bytes:
        return checkpoint_bytes(build_mlp([3, 4, 2], seed=11))

    def test_bad_magic(self, tmp_path: Path, blob: bytes):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOTCKPT\x00" + blob[len(MAGIC):])
        with pytest.raises(FormatError, match="byte 0"):
            load_checkpoint(path)

    def test_unsupported_version(self, tmp_path: Path, blob: bytes):
        path = tmp_path / "v.ckpt"
        path.write_bytes(blob[:8] + (99).to_bytes(4, "little") + blob[12:])
        with pytest.raises(FormatError, match="version 99"):
            load_checkpoint(path)

    @pytest.mark.parametrize("keep", [4, 12, 40, -5])
    def test_truncated(self, tmp_path: Path, blob: bytes, keep: int):
        path = tmp_path / "t.ckpt"
        path.write_bytes(blob[:keep])
        with pytest.raises(FormatError):
            load_checkpoint(path)
