import math

import numpy as np
import pytest

from radarseg.autodiff import Tensor, numerical_gradient, relative_error, weighted_softmax_cross_entropy
from radarseg.grouping import GroupForm, GroupSpec
from radarseg.models import (GroupStats, ModelConfig, SALayerConfig, SegmentationModel,
                             SegmentationOutput, Variant, count_params, default_config, fp_layer,
                             group_batch, init_params, interpolation_weights, sa_layer)

from conftest import random_cloud

VARIANTS = ["pointnet", "ssg", "msg", "mfg"]


def random_features(rng, n, batch=None):
    shape = (n,) if batch is None else (batch, n)
    xy = random_cloud(rng, int(np.prod(shape))).reshape(*shape, 2)
    rest = rng.normal(size=shape + (3,))
    return np.concatenate([xy, rest], axis=-1)


def standardized(x):
    return (x - x.mean(axis=-2, keepdims=True)) / 10.0


def tiny_config(variant, seed=0):
    k = 4
    c, r = GroupForm.CIRCLE, GroupForm.RING
    specs1 = {
        "ssg": (GroupSpec(c, 15.0, k),),
        "msg": (GroupSpec(c, 10.0, k), GroupSpec(c, 25.0, k)),
        "mfg": (GroupSpec(c, 15.0, k), GroupSpec(r, 20.0, k)),
    }[variant]
    sa = (SALayerConfig(None, specs1, (4, 4)),
          SALayerConfig(4, tuple(GroupSpec(s.form, s.size * 2, k) for s in specs1), (4,)),
          SALayerConfig(2, (GroupSpec(c, 200.0, 4),), (4,)))
    return ModelConfig(variant, sa, ((4,), (4,), (4,)), head=(4,), seed=seed)


@pytest.fixture(scope="module")
def models():
    return {v: SegmentationModel(default_config(v, seed=3)) for v in VARIANTS}


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("n", [1, 37, 250])
def test_output_shape(models, variant, n):
    rng = np.random.default_rng(n)
    x = random_features(rng, n)
    out = models[variant].predict(standardized(x), x[:, :2])
    assert out.logits.shape == (n, 2) and len(out) == n
    assert np.all(np.isfinite(out.logits))


def test_empty_frame_rejected(models):
    with pytest.raises(ValueError):
        models["mfg"].forward(np.zeros((0, 5)))
    with pytest.raises(ValueError):
        models["pointnet"].forward(np.zeros((1, 0, 5)))


@pytest.mark.parametrize("variant", VARIANTS)
def test_permutation_equivariance(models, variant):
    rng = np.random.default_rng(11)
    n = 60
    x = random_features(rng, n)
    perms = np.stack([rng.permutation(n) for _ in range(100)])
    feats = standardized(x)
    base = models[variant].predict(feats, x[:, :2]).logits
    out = models[variant].predict(feats[perms], x[:, :2][perms]).logits
    for p, logits in zip(perms, out):
        assert np.max(np.abs(logits - base[p])) <= 1e-5
        assert np.array_equal(np.argmax(logits, -1), np.argmax(base[p], -1))


@pytest.mark.parametrize("variant", VARIANTS)
def test_duplicate_rows_do_not_change_predictions(models, variant):
    rng = np.random.default_rng(5)
    n = 30
    x = random_features(rng, n)
    feats = standardized(x)
    base = models[variant].forward(feats, x[:, :2]).data[0]
    extra = rng.integers(0, n, 25)
    rows = np.r_[np.arange(n), extra]
    origin = np.r_[np.arange(n), extra]
    padded = models[variant].forward(feats[rows], x[rows, :2], origin).data[0]
    np.testing.assert_allclose(padded[:n], base, atol=1e-6)
    np.testing.assert_allclose(padded[n:], base[extra], atol=1e-6)


def test_pointnet_duplicate_point_identical_logits(models):
    rng = np.random.default_rng(1)
    x = random_features(rng, 10)
    x[3] = x[7]
    out = models["pointnet"].forward(standardized(x), x[:, :2]).data[0]
    np.testing.assert_array_equal(out[3], out[7])


def test_logits_finite_on_many_frames(models):
    rng = np.random.default_rng(99)
    for variant in VARIANTS:
        for _ in range(40):
            n = int(rng.integers(1, 251))
            x = random_features(rng, n, batch=25)
            out = models[variant].predict(standardized(x), x[..., :2]).logits
            assert out.shape == (25, n, 2) and np.all(np.isfinite(out))


@pytest.mark.parametrize("variant", ["ssg", "msg", "mfg"])
def test_end_to_end_gradient_tiny(variant):
    rng = np.random.default_rng(21)
    cfg = tiny_config(variant)
    model = SegmentationModel(cfg, dtype=np.float64)
    x = random_features(rng, 8)
    x[:, :2] = x[:, :2] * 0.4  # keep groups populated
    feats = standardized(x)[None]
    labels = np.array([[0, 1, 0, 0, 1, 0, 0, 0]])

    def loss():
        return weighted_softmax_cross_entropy(model.forward(feats, x[None, :, :2]), labels, (1, 9))

    model.zero_grad()
    loss().backward()
    for name, p in model.params.items():
        num = numerical_gradient(lambda: loss().item(), p.data)
        assert relative_error(p.grad, num) <= 1e-5, name


def test_end_to_end_gradient_pointnet():
    rng = np.random.default_rng(22)
    cfg = ModelConfig("pointnet", local_mlp=(4, 4), global_mlp=(4, 4), head=(4,))
    model = SegmentationModel(cfg, dtype=np.float64)
    feats = rng.normal(size=(1, 8, 5))
    labels = rng.integers(0, 2, (1, 8))

    def loss():
        return weighted_softmax_cross_entropy(model.forward(feats), labels, (1, 9))

    model.zero_grad()
    loss().backward()
    for name, p in model.params.items():
        num = numerical_gradient(lambda: loss().item(), p.data)
        assert relative_error(p.grad, num) <= 1e-5, name


def test_dense_and_ragged_sa_agree():
    rng = np.random.default_rng(4)
    cfg = default_config("mfg", width=0.25)
    params = {k: Tensor(v.astype(np.float64), requires_grad=True)
              for k, v in init_params(cfg).items()}
    x = random_features(rng, 40, batch=3)
    pos = x[..., :2]
    origin = np.broadcast_to(np.arange(40), (3, 40)).copy()
    origin[1, 30:] = np.arange(10)  # padded frame
    cent = np.broadcast_to(np.arange(40), (3, 40))
    outs = []
    for dense in (False, True):
        feats = Tensor(standardized(x))
        _, y = sa_layer(pos, feats, origin, cent, cfg.sa_layers[0].specs, params, "sa0", dense=dense)
        outs.append(y.data)
    real = origin == np.arange(40)
    np.testing.assert_allclose(outs[0][real], outs[1][real], rtol=1e-12, atol=1e-12)


def test_pointnet_layer_widths():
    params = init_params(default_config("pointnet"))
    shapes = {k: v.shape for k, v in params.items() if k.endswith(".W")}
    assert shapes["local.0.W"] == (5, 64) and shapes["local.1.W"] == (64, 64)
    assert shapes["global.0.W"] == (64, 128) and shapes["global.1.W"] == (128, 256)
    assert shapes["head.0.W"] == (320, 128) and shapes["head.1.W"] == (128, 64)
    assert shapes["head.2.W"] == (64, 2)


def test_mfg_and_msg_parameter_counts_match():
    c, r = GroupForm.CIRCLE, GroupForm.RING
    mfg = default_config("mfg")
    specs = tuple(GroupSpec(c, s.size, s.max_samples) for s in mfg.sa_layers[0].specs)
    layers = (SALayerConfig(None, specs, mfg.sa_layers[0].mlp),) + mfg.sa_layers[1:]
    msg = ModelConfig("msg", layers, mfg.fp_mlps, mfg.head)
    assert count_params(init_params(mfg)) == count_params(init_params(msg))
    assert sum(s.form == r for s in mfg.sa_layers[0].specs) == 2


def test_mfg_degenerates_to_msg_when_groups_coincide():
    rng = np.random.default_rng(8)
    c, r = GroupForm.CIRCLE, GroupForm.RING
    mfg = default_config("mfg", seed=5)
    swapped = tuple(
        SALayerConfig(l.n_centroids, tuple(GroupSpec(c, s.size, s.max_samples) for s in l.specs), l.mlp)
        for l in mfg.sa_layers)
    msg = ModelConfig("msg", swapped, mfg.fp_mlps, mfg.head, seed=5)
    # a tight cluster at one range: every ring and circle holds the whole cloud
    phi = 0.3 + rng.uniform(-0.01, 0.01, 12)
    rr = 30.0 + rng.uniform(-0.4, 0.4, 12)
    x = np.c_[rr * np.cos(phi), rr * np.sin(phi), rng.normal(size=(12, 3))]
    a = SegmentationModel(mfg).forward(standardized(x), x[:, :2]).data
    b = SegmentationModel(msg).forward(standardized(x), x[:, :2]).data
    np.testing.assert_array_equal(a, b)


def test_config_validation_and_round_trip():
    c, r = GroupForm.CIRCLE, GroupForm.RING
    for v in VARIANTS:
        cfg = default_config(v, width=0.5, seed=9)
        assert ModelConfig.from_json(cfg.to_json()) == cfg
    layer = SALayerConfig(None, (GroupSpec(c, 5.0, 4),), (4,))
    with pytest.raises(ValueError):
        ModelConfig("mfg", (layer,), ((4,),))
    with pytest.raises(ValueError):
        ModelConfig("msg", (layer,), ((4,),))
    with pytest.raises(ValueError):
        ModelConfig("ssg", (SALayerConfig(8, layer.specs, (4,)),), ((4,),))
    assert default_config("ssg").sa_layers[0].specs == (GroupSpec(c, 5.0, 16),)
    assert [s.size for s in default_config("msg").sa_layers[0].specs] == [2.5, 5.0, 10.0]
    assert [(s.form, s.size) for s in default_config("mfg").sa_layers[0].specs] == [
        (c, 2.5), (c, 5.0), (r, 2.0), (r, 4.0)]
    assert [l.n_centroids for l in default_config("mfg").sa_layers] == [None, 64, 16]


def test_init_is_seeded_glorot():
    a = init_params(default_config("ssg", seed=1))
    b = init_params(default_config("ssg", seed=1))
    c = init_params(default_config("ssg", seed=2))
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not np.array_equal(a["sa0.s0.0.W"], c["sa0.s0.0.W"])
    W = a["sa0.s0.0.W"]
    assert np.abs(W).max() <= math.sqrt(6 / sum(W.shape))
    assert not any(a[k].any() for k in a if k.endswith(".b"))


def test_output_argmax_tie_is_normal():
    out = SegmentationOutput(np.array([[0.5, 0.5], [0.1, 0.2]]))
    assert out.classes.tolist() == [0, 1]
    with pytest.raises(FloatingPointError):
        SegmentationOutput(np.array([[np.nan, 0.0]]))


# ----------------------------------------------------------------------------- layer examples


def test_same_range_ghost_membership():
    cloud = np.array([[[28.0, -8.0], [20.0, -21.0], [30.0, -6.0], [27.0, -10.0]]])
    origin = np.arange(4)[None]
    cent = np.array([[0]])
    specs = [GroupSpec("circle", 6.0, 8), GroupSpec("ring", 4.0, 8)]
    circle, ring = group_batch(cloud, origin, cent, specs)
    assert 1 not in circle.indices[0, 0]
    assert 1 in ring.indices[0, 0]


def test_sa_layer_output_width():
    rng = np.random.default_rng(0)
    cfg = default_config("msg", width=0.25)
    params = {k: Tensor(v) for k, v in init_params(cfg).items()}
    x = random_features(rng, 20, batch=2)
    cent = np.broadcast_to(np.arange(20), (2, 20))
    origin = cent.copy()
    stats = GroupStats()
    cpos, y = sa_layer(x[..., :2], Tensor(x), origin, cent, cfg.sa_layers[0].specs, params, "sa0",
                       stats=stats)
    assert y.shape == (2, 20, 3 * cfg.sa_layers[0].mlp[-1])
    assert stats.queries["circle"] == 3 * 40 and stats.mean() >= 1.0
    np.testing.assert_array_equal(cpos, x[..., :2])


def test_interpolation_examples():
    rng = np.random.default_rng(3)
    fine = random_cloud(rng, 12)[None]
    orig = np.arange(12)[None]
    W = interpolation_weights(fine, fine, orig)
    np.testing.assert_array_equal(W[0], np.eye(12))
    coarse = fine[:, :1]
    W = interpolation_weights(fine, coarse, orig[:, :1])
    np.testing.assert_array_equal(W[0], np.ones((12, 1)))
    coarse = random_cloud(rng, 7)[None]
    W = interpolation_weights(fine, coarse, np.arange(7)[None])
    np.testing.assert_allclose(W.sum(-1), 1.0, rtol=1e-12)
    assert np.all((W > 0).sum(-1) == 3)


def test_fp_layer_copies_coarse_features_when_coarse_is_fine():
    rng = np.random.default_rng(2)
    pos = random_cloud(rng, 9)[None]
    feats = Tensor(rng.normal(size=(1, 9, 3)))
    params = {"fp.0.W": Tensor(np.eye(3)), "fp.0.b": Tensor(np.zeros(3))}
    out = fp_layer(pos, pos, feats, None, params, "fp")
    np.testing.assert_allclose(out.data, np.maximum(feats.data, 0))


def test_save_load_round_trip(tmp_path, models):
    m = models["mfg"]
    m.save(tmp_path / "m.npz", extra={"k": 1})
    back, extra = SegmentationModel.load(tmp_path / "m.npz")
    assert extra == {"k": 1} and back.config == m.config
    assert all(np.array_equal(back.params[k].data, m.params[k].data) for k in m.params)
