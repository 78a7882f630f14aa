import struct

import numpy as np
import pytest

from ctxgen.data import DataError, FauxSpec, generate_faux_dataset
from ctxgen.numerics import Rng
from ctxgen.trainer import (
    FORMAT_VERSION, LOG_COLUMNS, PRESETS, CheckpointError, TrainConfig, _aux_backward, aux_accuracy,
    build_models, checkpoint_bytes, checkpoint_from_bytes, generate_dataset, load_checkpoint,
    preset_config, save_checkpoint, train,
)


def tiny_config(**kw):
    base = dict(epochs=3, batch_size=32, T_steps=10, hidden=16, n_blocks=1, encoder_hidden=(16,),
                head_hidden=16, embed_dim=4, d_h=8, normalizer_steps=50, noise_dim=8,
                gen_widths=(8, 8, 8), disc_widths=(8, 8, 8))
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def small_data():
    return generate_faux_dataset(FauxSpec(n_households=12, days_per_household=8, T=16), seed=0)[0]


def encoder_grads(config, ds, lam):
    enc, _ = build_models(config, ds.vocabulary.cardinalities, ds.T, ds.d, Rng(1))
    codes = ds.codes[:16]
    enc.zero_grad()
    h, cache = enc.encode(codes)
    _, dh = _aux_backward(enc, h, codes, lam)
    enc.encode_backward(dh, cache)
    return dh, {k: p.grad.copy() for k, p in enc.named_parameters() if not k.startswith("heads")}


def test_zero_lambda_gives_bitwise_zero_encoder_gradient(small_data):
    dh, grads = encoder_grads(tiny_config(), small_data, 0.0)
    assert np.all(dh == 0.0)
    assert all(np.all(g == 0.0) for g in grads.values())


def test_aux_gradient_linear_in_lambda(small_data):
    cfg = tiny_config()
    g1 = encoder_grads(cfg, small_data, 1.0)[1]
    g2 = encoder_grads(cfg, small_data, 2.0)[1]
    for k in g1:
        assert np.allclose(g2[k], 2.0 * g1[k], rtol=1e-12, atol=1e-15), k
    assert any(np.abs(g).max() > 0 for g in g1.values())


def test_config_validation_and_dict_round_trip():
    cfg = tiny_config()
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        TrainConfig(lambda_aux=-1.0).validate()
    with pytest.raises(ValueError):
        TrainConfig(epochs=0).validate()
    with pytest.raises(ValueError):
        TrainConfig.from_dict({**cfg.to_dict(), "bogus": 1})


def test_paper_preset_snapshot():
    cfg = preset_config("paper")
    assert (cfg.noise_dim, cfg.embed_dim, cfg.batch_size, cfg.epochs) == (256, 16, 1024, 5000)
    assert (cfg.gen_lr, cfg.disc_lr, cfg.T_steps, cfg.beta_schedule) == (3e-4, 1e-4, 1000, "cosine")
    assert (cfg.ema_decay, cfg.loss_type, cfg.lambda_aux) == (0.99, "l1", 0.1)
    assert preset_config("paper", epochs=3).epochs == 3
    assert set(PRESETS) == {"desk", "paper"}


def test_training_is_deterministic(small_data):
    for model in ("diffusion", "acgan"):
        a = train(tiny_config(model=model), small_data)
        b = train(tiny_config(model=model), small_data)
        assert a.log == b.log
        assert checkpoint_bytes(a) == checkpoint_bytes(b)
        assert list(a.log[0])[:4] == list(LOG_COLUMNS)


def test_baseline_matches_acgan_at_zero_aux_weights(small_data):
    a = train(tiny_config(model="acgan", gamma=0.0, lambda_gen=0.0), small_data)
    b = train(tiny_config(model="baseline"), small_data)
    assert a.log == b.log
    sa, sb = a.generator.state_dict(), b.generator.state_dict()
    assert sa.keys() == sb.keys() and all(np.array_equal(sa[k], sb[k]) for k in sa)


def test_empty_dataset_rejected(small_data):
    with pytest.raises(DataError):
        train(tiny_config(), small_data.subset(np.arange(0)))


@pytest.fixture(scope="module")
def trained(small_data):
    return train(tiny_config(), small_data)


def test_checkpoint_round_trip(trained, small_data, tmp_path):
    path = tmp_path / "m.cnts"
    save_checkpoint(trained, path)
    data = path.read_bytes()
    assert data[:4] == b"CNTS" and struct.unpack("<I", data[4:8])[0] == FORMAT_VERSION
    back = load_checkpoint(path)
    assert checkpoint_bytes(back) == data
    codes = small_data.codes[:5]
    x = generate_dataset(trained, codes, seed=4).series
    y = generate_dataset(back, codes, seed=4).series
    assert np.array_equal(x, y)


def test_checkpoint_errors(trained):
    data = checkpoint_bytes(trained)
    with pytest.raises(CheckpointError, match="magic"):
        checkpoint_from_bytes(b"XXXX" + data[4:])
    with pytest.raises(CheckpointError, match="truncated"):
        checkpoint_from_bytes(data[:-7])
    with pytest.raises(CheckpointError, match="trailing"):
        checkpoint_from_bytes(data + b"\0")
    bumped = data[:4] + struct.pack("<I", FORMAT_VERSION + 1) + data[8:]
    with pytest.raises(CheckpointError, match=f"{FORMAT_VERSION + 1}.*{FORMAT_VERSION}"):
        checkpoint_from_bytes(bumped)


def test_generate_shapes_seeds_and_unseen(trained, small_data):
    code = small_data.codes[0]
    syn = generate_dataset(trained, code, per_context=100, seed=1)
    assert syn.series.shape == (100, 16, 1) and np.all(np.isfinite(syn.series))
    assert np.all(syn.codes == code)
    other = generate_dataset(trained, code, per_context=100, seed=2)
    assert not np.array_equal(syn.series, other.series)
    seen = set(small_data.combination_keys())
    cards = small_data.vocabulary.cardinalities
    unseen = next(c for c in np.ndindex(*cards) if c not in seen)
    out = generate_dataset(trained, [unseen], per_context=3)
    assert np.all(np.isfinite(out.series))
    with pytest.raises(DataError):
        generate_dataset(trained, [[99] * len(cards)])


def test_generate_at_96_steps():
    ds = generate_faux_dataset(FauxSpec(n_households=4, days_per_household=4, T=96), seed=1)[0]
    ckpt = train(tiny_config(epochs=1), ds)
    syn = generate_dataset(ckpt, ds.codes[0], per_context=100)
    assert syn.series.shape == (100, 96, 1)


def test_training_loss_halves():
    ds = generate_faux_dataset(FauxSpec(n_households=20, days_per_household=10), seed=2)[0]
    ckpt = train(preset_config("desk", epochs=200, normalizer_steps=300), ds)
    losses = [r["loss_gen"] for r in ckpt.log]
    assert losses[-1] < 0.5 * losses[0]


def test_aux_heads_converge_within_50_epochs():
    ds = generate_faux_dataset(FauxSpec(), seed=0)[0]
    ckpt = train(preset_config("desk", epochs=50, lambda_aux=0.1), ds)
    assert aux_accuracy(ckpt, ds.codes) >= 0.95
