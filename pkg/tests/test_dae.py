import numpy as np
import pytest

from postdae.autodiff import Tensor
from postdae.autodiff.checkpoint import CheckpointError
from postdae.dae import (
    ConfigError,
    DaeConfig,
    TrainConfig,
    build_dae,
    build_specs,
    load_model,
    masks_to_array,
    model_from_bytes,
    plausibility_score,
    postprocess,
    postprocess_batch,
    train,
)
from postdae.degrade import IDENTITY
from postdae.metrics import foreground_dice
from postdae.raster import LabelMask, one_hot
from postdae.synth import SceneConfig, generate_dataset

SMALL = DaeConfig(input_size=16, encoder_channels=(4, 4, 4), decoder_channels=(4, 4, 4), latent_dim=8)
SMALL3 = DaeConfig(input_size=16, num_classes=3, encoder_channels=(4, 4, 4), decoder_channels=(4, 4, 4))


@pytest.fixture(scope="module")
def small_masks():
    return generate_dataset(SceneConfig(width=16, height=16, seed=3), range(6))[1]


def test_default_bottleneck_is_two_by_two():
    cfg = DaeConfig()
    assert cfg.bottleneck_size == 2 and cfg.latent_dim == 64
    assert DaeConfig(num_classes=3).latent_dim == 128


def test_default_layer_table():
    specs, split = build_specs(DaeConfig())
    kinds = [s.kind for s in specs]
    assert kinds.count("conv3x3") == 9 + 5 and kinds.count("upconv") == 5
    assert specs[split - 1].kind == "dense" and specs[split - 1].units == 64
    assert kinds[-1] == "sigmoid" and specs[-2].out_channels == 1
    assert build_specs(DaeConfig(num_classes=3))[0][-1].kind == "softmax_channels"


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(input_size=48),
        dict(num_classes=4),
        dict(input_size=16, encoder_channels=(4, 4, 4, 4)),
        dict(encoder_channels=(4, 4), decoder_channels=(4,)),
        dict(expand_units=65),
    ],
)
def test_config_errors(kwargs):
    with pytest.raises(ConfigError):
        DaeConfig(**kwargs)


def test_train_config_errors():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(lr=0)
    assert TrainConfig.from_dict({"degradation": "heavy"}).degradation.event_count == (4, 6)


def test_same_seed_same_parameters():
    a, b = build_dae(SMALL, seed=9), build_dae(SMALL, seed=9)
    assert all(x.data.tobytes() == y.data.tobytes() for x, y in zip(a.parameters(), b.parameters()))


@pytest.mark.parametrize("cfg", [SMALL, SMALL3], ids=["binary", "three-class"])
def test_outputs_are_probabilities(cfg, rng):
    model = build_dae(cfg, seed=1)
    masks = [LabelMask(rng.integers(0, cfg.num_classes, (16, 16)), cfg.num_classes) for _ in range(3)]
    out = model(Tensor(masks_to_array(masks, cfg.num_classes))).data
    assert out.shape == (3, cfg.output_channels, 16, 16)
    assert out.min() >= 0 and out.max() <= 1
    if cfg.num_classes == 3:
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)


def test_latent_dimension_and_reproducibility(small_masks):
    model = build_dae(SMALL, seed=2)
    x = Tensor(masks_to_array(small_masks[:2], 2))
    h = model.encode(x)
    assert h.shape == (2, 8)
    assert h.data.tobytes() == model.encode(x).data.tobytes()
    np.testing.assert_array_equal(model.decode(h).data, model(x).data)


def test_wrong_input_shape(small_masks):
    model = build_dae(SMALL)
    with pytest.raises(ValueError):
        postprocess(model, LabelMask(np.zeros((8, 8)), 2))
    with pytest.raises(ValueError):
        postprocess(model, LabelMask(np.zeros((16, 16)), 3))


def test_training_history_and_determinism(small_masks, tmp_path):
    tc = TrainConfig(epochs=3, batch_size=4, lr=1e-3, seed=5, checkpoint_interval=2)
    m1, h1 = train(small_masks, tc, SMALL, checkpoint_dir=tmp_path, validation=small_masks[:2])
    m2, h2 = train(small_masks, tc, SMALL)
    assert len(h1.loss) == 3 and len(h1.val_loss) == 3
    assert h1.loss == h2.loss
    assert m1.to_bytes() == m2.to_bytes()
    assert sorted(p.name for p in tmp_path.iterdir()) == ["model_epoch_0002.ckpt", "model_final.ckpt"]
    assert load_model(tmp_path / "model_final.ckpt").to_bytes() == m1.to_bytes()


def test_single_sample_overfits(small_masks):
    cfg = DaeConfig(input_size=16, encoder_channels=(8, 8, 8), decoder_channels=(8, 8, 8), latent_dim=8)
    tc = TrainConfig(epochs=400, batch_size=1, lr=1e-3, seed=0, degradation=IDENTITY)
    model, hist = train(small_masks[:1], tc, cfg)
    assert hist.loss[-1] < 0.01
    assert foreground_dice(postprocess(model, small_masks[0]), small_masks[0]) > 0.95


def test_postprocess_deterministic_and_shape_preserving(small_masks):
    model = build_dae(SMALL, seed=4)
    a = postprocess_batch(model, small_masks, batch_size=4)
    b = [postprocess(model, m) for m in small_masks]
    assert a == b
    assert all(m.shape == (16, 16) and m.num_classes == 2 for m in a)


def test_soft_inputs_are_discretized_first(small_masks):
    model = build_dae(SMALL, seed=4)
    m = small_masks[0]
    assert postprocess(model, one_hot(m)) == postprocess(model, m)


def test_checkpoint_reload_bit_exact(small_masks, tmp_path):
    model = build_dae(SMALL3, seed=6)
    model.save(tmp_path / "m.ckpt")
    again = load_model(tmp_path / "m.ckpt")
    x = Tensor(masks_to_array([LabelMask(np.eye(16, dtype=int) * 2, 3)], 3))
    assert model(x).data.tobytes() == again(x).data.tobytes()
    assert again.config == SMALL3


def test_checkpoint_config_mismatch():
    buf = bytearray(build_dae(SMALL).to_bytes())
    # claim a different latent size in the metadata; the layer table disagrees
    text = bytes(buf).replace(b'"latent_dim":8', b'"latent_dim":9')
    with pytest.raises((CheckpointError, ConfigError)):
        model_from_bytes(text)


def test_plausibility_score_range(small_masks):
    model = build_dae(SMALL, seed=0)
    for m in small_masks:
        s = plausibility_score(model, m)
        assert 0.0 <= s <= 1.0
    m = small_masks[0]
    assert plausibility_score(model, m, projected=m) == 0.0
