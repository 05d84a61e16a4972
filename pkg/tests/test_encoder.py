import numpy as np
import pytest

from memaudit.autodiff import Tensor
from memaudit.encoder import (
    Checkpoint,
    Encoder,
    EncoderConfig,
    load_checkpoint,
    prepare_input,
    save_checkpoint,
)
from memaudit.errors import ConfigMismatchError, FormatError, ValidationError
from memaudit.images import Image


SMALL = EncoderConfig(input_size=32, channels=(4, 8), embedding_dim=16)


@pytest.fixture(scope="module")
def encoder():
    return Encoder.init_random(SMALL, seed=7)


# ---------------------------------------------------------------- config


def test_config_validation():
    with pytest.raises(ValidationError):
        EncoderConfig(embedding_dim=4)
    with pytest.raises(ValidationError):
        EncoderConfig(channels=(8,))
    with pytest.raises(ValidationError):
        EncoderConfig(input_size=60, channels=(8, 16, 32))  # 60 % 8 != 0
    with pytest.raises(ValidationError):
        EncoderConfig(frozen_block_count=5)


def test_config_round_trip():
    cfg = EncoderConfig(input_size=32, channels=(4, 8), embedding_dim=16,
                        frozen_block_count=1)
    assert EncoderConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValidationError):
        EncoderConfig.from_dict({"input_size": 32, "bogus": 1})


# ---------------------------------------------------------------- input prep


def test_prepare_input_minmax_normalizes(rng):
    px = (rng.random((32, 32)) * 0.5 + 0.2).astype(np.float32)
    out = prepare_input(Image(px), 32)
    assert out.min() == pytest.approx(0.0, abs=1e-6)
    assert out.max() == pytest.approx(1.0, abs=1e-6)
    assert out.shape == (32, 32)


def test_prepare_input_constant_image_is_zeros():
    out = prepare_input(Image(np.full((32, 32), 0.7, dtype=np.float32)), 32)
    assert np.array_equal(out, np.zeros((32, 32), dtype=np.float32))


def test_prepare_input_rescales_and_crops(rng):
    px = rng.random((96, 80)).astype(np.float32)
    out = prepare_input(Image(px), 32)
    assert out.shape == (32, 32)
    assert 0.0 <= out.min() and out.max() <= 1.0


def test_prepare_input_upscales_small_images(rng):
    px = rng.random((16, 16)).astype(np.float32)
    out = prepare_input(Image(px), 32)
    assert out.shape == (32, 32)


# ---------------------------------------------------------------- forward


def test_init_random_deterministic():
    a = Encoder.init_random(SMALL, seed=3)
    b = Encoder.init_random(SMALL, seed=3)
    c = Encoder.init_random(SMALL, seed=4)
    for k in a.params:
        assert np.array_equal(a.params[k].data, b.params[k].data)
    assert any(not np.array_equal(a.params[k].data, c.params[k].data) for k in a.params)


def test_forward_shape_and_unit_norm(encoder, rng):
    x = Tensor(rng.random((3, 1, 32, 32), dtype=np.float32))
    out = encoder.forward(x)
    assert out.shape == (3, 16)
    assert np.allclose(np.linalg.norm(out.data, axis=1), 1.0, atol=1e-5)


def test_embed_image_matches_forward(encoder, rng):
    px = rng.random((32, 32), dtype=np.float32)
    emb = encoder.embed_image(Image(px))
    batch = encoder.forward(Tensor(prepare_input(Image(px), 32)[None, None])).data[0]
    assert np.array_equal(emb, batch)


def test_embed_images_matches_singles(encoder, rng):
    imgs = [Image(rng.random((32, 32), dtype=np.float32)) for _ in range(4)]
    stacked = encoder.embed_images(imgs)
    for i, im in enumerate(imgs):
        assert np.array_equal(stacked[i], encoder.embed_image(im))


def test_forward_requires_params():
    bare = Encoder(SMALL, params=None)
    with pytest.raises(Exception):
        bare.embed_image(Image(np.zeros((32, 32), dtype=np.float32) + 0.5))


def test_frozen_blocks_excluded_from_trainables():
    cfg = EncoderConfig(input_size=32, channels=(4, 8), embedding_dim=16,
                        frozen_block_count=1)
    enc = Encoder.init_random(cfg, seed=1)
    names = set(enc.trainable_params())
    assert all(not n.startswith("conv0.") for n in names)
    assert any(n.startswith("conv1.") for n in names)
    full = Encoder.init_random(SMALL, seed=1)
    assert len(names) < len(full.trainable_params())


# ---------------------------------------------------------------- checkpoints


def _roundtrip(tmp_path, ckpt):
    p = tmp_path / "enc.ckpt"
    save_checkpoint(ckpt, p)
    return load_checkpoint(p)


def test_checkpoint_round_trip_bit_exact(tmp_path, encoder):
    params = {k: v.data.copy() for k, v in encoder.params.items()}
    opt_state = {
        "step": 17,
        "m": {k: np.full_like(v, 0.25) for k, v in params.items()},
        "v": {k: np.full_like(v, 0.5) for k, v in params.items()},
    }
    ckpt = Checkpoint(SMALL, params, optimizer_state=opt_state, epoch=9,
                      val_mae_history=[0.5, 0.25])
    back = _roundtrip(tmp_path, ckpt)
    assert back.encoder_config == SMALL
    assert back.epoch == 9
    assert back.val_mae_history == [0.5, 0.25]
    assert set(back.params) == set(params)
    for k in params:
        assert np.array_equal(back.params[k], params[k])
    assert back.optimizer_state["step"] == 17
    for k in params:
        assert np.array_equal(back.optimizer_state["m"][k], opt_state["m"][k])
        assert np.array_equal(back.optimizer_state["v"][k], opt_state["v"][k])


def test_checkpoint_without_optimizer(tmp_path, encoder):
    params = {k: v.data.copy() for k, v in encoder.params.items()}
    back = _roundtrip(tmp_path, Checkpoint(SMALL, params))
    assert back.optimizer_state is None
    emb_in = Image(np.linspace(0, 1, 32 * 32, dtype=np.float32).reshape(32, 32))
    assert np.array_equal(back.to_encoder().embed_image(emb_in),
                          encoder.embed_image(emb_in))


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(FormatError) as exc:
        load_checkpoint(p)
    assert exc.value.offset == 0


def test_checkpoint_truncated(tmp_path, encoder):
    p = tmp_path / "enc.ckpt"
    params = {k: v.data.copy() for k, v in encoder.params.items()}
    save_checkpoint(Checkpoint(SMALL, params), p)
    whole = p.read_bytes()
    p.write_bytes(whole[:-5])
    with pytest.raises(FormatError):
        load_checkpoint(p)


def test_checkpoint_bad_version(tmp_path, encoder):
    p = tmp_path / "enc.ckpt"
    params = {k: v.data.copy() for k, v in encoder.params.items()}
    save_checkpoint(Checkpoint(SMALL, params), p)
    blob = bytearray(p.read_bytes())
    blob[4] = 99
    p.write_bytes(bytes(blob))
    with pytest.raises(FormatError) as exc:
        load_checkpoint(p)
    assert "version" in str(exc.value)


def test_checkpoint_config_mismatch(tmp_path, encoder):
    p = tmp_path / "enc.ckpt"
    params = {k: v.data.copy() for k, v in encoder.params.items()}
    save_checkpoint(Checkpoint(SMALL, params), p)
    other = EncoderConfig(input_size=64, channels=(4, 8), embedding_dim=16)
    with pytest.raises(ConfigMismatchError) as exc:
        load_checkpoint(p, expected_config=other)
    assert "input_size" in str(exc.value)
