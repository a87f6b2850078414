import math

import numpy as np
import pytest

from trajevae.autodiff import Tensor
from trajevae.dct import dct_time
from trajevae.model import (
    VARIANTS, DistributionStats, ModelConfig, ModelConfigError, TrajeVAE, kl_divergence,
    offsets_to_poses, positional_encoding, sample_latent, _repeat_time,
)
from trajevae.motion_data import (
    JointMask, PoseSequence, Skeleton, generate_synthetic, make_trajectories, sample_mask,
    select_named_joints,
)
from trajevae.selftest import model_gradient_error
from trajevae.training import loss_total


def tiny(**kw):
    base = dict(joints=4, frames=6, latent_dim=8, hidden_dim=8, heads=2, ff_dim=16,
                shared_layers=2, branch_layers=1, decoder_layers=1)
    base.update(kw)
    return ModelConfig(**base)


def batch(cfg, B=3, seed=0):
    rng = np.random.default_rng(seed)
    D = 3 * cfg.joints
    x0 = rng.normal(size=(B, D))
    frames = rng.normal(size=(B, cfg.frames, D))
    bits = rng.random((B, cfg.joints)) < 0.5
    cmask = np.repeat(bits, 3, axis=1).astype(float)[:, None, :]
    return x0, frames, cmask


# -- configuration ------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ModelConfigError):
        ModelConfig(hidden_dim=5, heads=4)
    with pytest.raises(ModelConfigError):
        ModelConfig(use_learnable_prior=False, use_dct=True, use_masked_future_poses=False)
    with pytest.raises(ModelConfigError):
        ModelConfig.from_dict({"joints": 17, "colour": "red"})
    for name in VARIANTS:
        assert ModelConfig.for_variant(name).variant == name


def test_config_dict_round_trip():
    cfg = ModelConfig.desk(joints=5)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


# -- shapes at the default full-scale widths -----------------------------------------

@pytest.fixture(scope="module")
def full_model():
    return TrajeVAE(ModelConfig(), np.random.default_rng(0))


def test_full_scale_shapes(full_model):
    cfg = full_model.config
    assert cfg.width == 512
    seq = generate_synthetic(1, cfg.frames + 1, rng=np.random.default_rng(0))[0]
    h0 = full_model.encode_initial_pose(seq.initial_pose)
    assert h0.shape == (256,)
    mask = select_named_joints(["rfoot"])
    recon, prior, post = full_model.forward_train(seq, mask, np.random.default_rng(1), training=False)
    assert recon.shape == (1, 30, 51)
    assert prior.mean.shape == post.mean.shape == (1, 30, 256)
    assert prior.logvar.shape == post.logvar.shape == (1, 30, 256)
    assert full_model.params["dec.in.l1.w"].shape == (256 + 512, 512)


# -- initial pose encoder -------------------------------------------------------

def test_initial_pose_encoder_deterministic():
    m = TrajeVAE(tiny())
    x0 = np.random.default_rng(0).normal(size=12)
    a, b = m.encode_initial_pose(x0), m.encode_initial_pose(x0)
    assert np.array_equal(a.data, b.data) and a.shape == (8,)


def test_initial_pose_encoder_gradient():
    from trajevae.gradcheck import gradient_error

    m = TrajeVAE(tiny())
    w = np.random.default_rng(1).normal(size=8)
    x0 = np.random.default_rng(2).normal(size=12)
    assert gradient_error(lambda t: (m.encode_initial_pose(t[0]) * w).sum(), [x0]) < 1e-6


# -- branch encoders ------------------------------------------------------------

def test_branch_shape_errors():
    m = TrajeVAE(tiny())
    h0 = m.encode_initial_pose(np.zeros((2, 12)))
    with pytest.raises(ValueError, match="expected"):
        m.branch_features(np.zeros((2, 5, 12)), h0, "traj")
    with pytest.raises(ValueError, match="expected"):
        m.branch_features(np.zeros((2, 6, 9)), h0, "traj")
    with pytest.raises(ValueError):
        m.branch_features(np.zeros((2, 6, 12)), h0, "legs")


def _manual_features(m, seq, h0, branch, use_dct):
    cfg = m.config
    h = m._mlp("enc.coord", Tensor(seq))
    x = Tensor(np.concatenate([h.data, np.repeat(h0.data[:, None], cfg.frames, 1)], -1))
    x = x + positional_encoding(cfg.frames, cfg.width)
    x = m._attention_stack("enc.shared", cfg.shared_layers, x, False, None)
    if use_dct:
        x = dct_time(x)
    return m._attention_stack(f"enc.{branch}", cfg.branch_layers, x, False, None).data


def test_dct_flag_semantics():
    on = TrajeVAE(tiny())
    off = TrajeVAE(tiny(use_dct=False, use_masked_future_poses=False), params=on.params)
    x0, frames, _ = batch(on.config)
    h0 = on.encode_initial_pose(x0)
    np.testing.assert_array_equal(off.branch_features(frames, h0, "pose").data,
                                  _manual_features(on, frames, h0, "pose", False))
    np.testing.assert_array_equal(on.branch_features(frames, h0, "pose").data,
                                  _manual_features(on, frames, h0, "pose", True))


def test_stage_isolation():
    m = TrajeVAE(tiny(), np.random.default_rng(3))
    x0, frames, _ = batch(m.config)
    h0 = m.encode_initial_pose(x0)
    a = m.encode_branch(frames, h0, "traj")
    b = m.encode_branch(frames, h0, "pose")
    assert not np.array_equal(a.mean.data, b.mean.data)
    for name in list(m.params):
        for src, dst in (("enc.traj.", "enc.pose."), ("head.traj.", "head.pose.")):
            if name.startswith(src):
                m.params[dst + name[len(src):]] = Tensor(m.params[name].data.copy(), True)
    a = m.encode_branch(frames, h0, "traj")
    b = m.encode_branch(frames, h0, "pose")
    np.testing.assert_array_equal(a.mean.data, b.mean.data)
    np.testing.assert_array_equal(a.logvar.data, b.logvar.data)


def _stats(m, x0, frames, cmask):
    _, prior, post = m.forward_arrays(x0, frames, cmask, np.random.default_rng(0), training=False)
    return prior.mean.data.copy(), post.mean.data.copy()


@pytest.mark.parametrize("name, prior_changes, post_changes", [
    ("enc.shared.0.qkv.w", True, True),
    ("enc.coord.l1.w", True, True),
    ("enc.init.l1.w", True, True),
    ("enc.traj.0.ff1.w", True, False),
    ("head.traj.l2.w", True, False),
    ("enc.pose.0.ff1.w", False, True),
    ("head.pose.l2.w", False, True),
])
def test_parameter_sharing(name, prior_changes, post_changes):
    m = TrajeVAE(tiny(), np.random.default_rng(4))
    x0, frames, cmask = batch(m.config)
    p0, q0 = _stats(m, x0, frames, cmask)
    m.params[name].data += 0.5
    p1, q1 = _stats(m, x0, frames, cmask)
    assert (not np.array_equal(p0, p1)) == prior_changes
    assert (not np.array_equal(q0, q1)) == post_changes


def test_all_ones_mask_posterior_depends_only_on_initial_pose():
    m = TrajeVAE(tiny())
    x0, frames, _ = batch(m.config, B=1)
    ones = np.ones((1, 1, 12))
    _, _, a = m.forward_arrays(x0, frames, ones, np.random.default_rng(0), training=False)
    _, _, b = m.forward_arrays(x0, frames * 3 + 1, ones, np.random.default_rng(0), training=False)
    np.testing.assert_array_equal(a.mean.data, b.mean.data)


# -- KL and sampling ------------------------------------------------------------

def _gauss(mean, logvar):
    return DistributionStats(Tensor(np.asarray(mean, float)), Tensor(np.asarray(logvar, float)))


def test_kl_closed_form_cases():
    q = _gauss(np.ones((3, 2)), np.zeros((3, 2)))
    p = _gauss(np.zeros((3, 2)), np.zeros((3, 2)))
    assert abs(kl_divergence(q, p).item() - 0.5 * 6) < 1e-12
    assert abs(kl_divergence(q, q).item()) < 1e-12
    with pytest.raises(ValueError):
        kl_divergence(q, _gauss(np.zeros(2), np.zeros(2)))


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(5)
    mq, lq, mp, lp = rng.normal(size=4) * [1, 0.5, 1, 0.5]
    kl = kl_divergence(_gauss([mq], [lq]), _gauss([mp], [lp])).item()
    n = 1_000_000
    z = mq + np.exp(0.5 * lq) * rng.standard_normal(n)
    log_q = -0.5 * (lq + (z - mq) ** 2 / np.exp(lq))
    log_p = -0.5 * (lp + (z - mp) ** 2 / np.exp(lp))
    d = log_q - log_p
    assert abs(d.mean() - kl) < 3 * d.std() / math.sqrt(n)


def test_sample_latent_modes():
    stats = _gauss(np.arange(6.0).reshape(2, 3), np.full((2, 3), -10.0))
    mean = sample_latent(stats, "mean")
    assert np.array_equal(mean.z.data, stats.mean.data)
    draw = sample_latent(stats, "sample", np.random.default_rng(0))
    assert np.abs(draw.z.data - stats.mean.data).max() < 10 * math.exp(-5)
    with pytest.raises(ValueError):
        sample_latent(stats, "sample", None)


def test_sample_latent_moments():
    rng = np.random.default_rng(6)
    mu, lv = np.array([0.3, -1.0, 2.0]), np.array([0.0, -1.0, 1.0])
    stats = DistributionStats(Tensor(np.tile(mu, (100_000, 1))), Tensor(np.tile(lv, (100_000, 1))))
    z = sample_latent(stats, "sample", rng).z.data
    n, var = z.shape[0], np.exp(lv)
    assert np.all(np.abs(z.mean(0) - mu) < 3 * np.sqrt(var / n))
    assert np.all(np.abs(z.var(0) - var) < 3 * var * np.sqrt(2 / n))


def test_sample_latent_is_differentiable():
    mean = Tensor(np.zeros(4), requires_grad=True)
    logvar = Tensor(np.zeros(4), requires_grad=True)
    z = sample_latent(DistributionStats(mean, logvar), "sample", np.random.default_rng(0)).z
    z.sum().backward()
    np.testing.assert_array_equal(mean.grad, np.ones(4))
    assert np.all(logvar.grad != 0)


def test_logvar_clamped():
    m = TrajeVAE(tiny())
    m.params["head.pose.l2.b"].data[8:] = 100.0
    x0, frames, cmask = batch(m.config)
    _, _, post = m.forward_arrays(x0, frames, cmask, np.random.default_rng(0), training=False)
    assert post.logvar.data.max() <= 10.0


# -- decoder ----------------------------------------------------------------------

def test_zero_offsets_reproduce_initial_pose():
    m = TrajeVAE(tiny())
    m.params["dec.out.l2.w"].data[:] = 0.0
    m.params["dec.out.l2.b"].data[:] = 0.0
    x0 = np.random.default_rng(0).normal(size=(2, 12))
    z = np.random.default_rng(1).normal(size=(2, 6, 8))
    poses = m.decode(z, x0).data
    assert np.array_equal(poses, np.repeat(x0[:, None], 6, axis=1))


def test_constant_offsets_and_prefix_sum_oracle():
    rng = np.random.default_rng(7)
    c = rng.normal(size=(1, 1, 5))
    x0 = rng.normal(size=(1, 5))
    poses = offsets_to_poses(Tensor(np.repeat(c, 8, axis=1)), Tensor(x0)).data
    t = np.arange(1, 9)[None, :, None]
    np.testing.assert_allclose(poses, x0[:, None] + t * c, atol=1e-12)
    for _ in range(1000):
        B, T, D = (int(v) for v in rng.integers(1, 6, size=3))
        o = rng.normal(size=(B, T, D)) * rng.uniform(0.01, 10)
        x0 = rng.normal(size=(B, D))
        got = offsets_to_poses(Tensor(o), Tensor(x0)).data
        x = x0.copy()
        for step in range(T):
            x = x + o[:, step]
            assert np.array_equal(got[:, step], x)


def test_decoder_step_identity():
    m = TrajeVAE(tiny())
    x0 = np.random.default_rng(0).normal(size=(2, 12))
    z = np.random.default_rng(1).normal(size=(2, 6, 8))
    poses, offsets = m.decode(z, x0, return_offsets=True)
    prev = np.concatenate([x0[:, None], poses.data[:, :-1]], axis=1)
    np.testing.assert_allclose(poses.data - prev, offsets.data, atol=1e-12)


def test_base_variant_needs_trajectory_features():
    m = TrajeVAE(tiny(use_learnable_prior=False, use_dct=False, use_masked_future_poses=False))
    with pytest.raises(ValueError, match="trajectory features"):
        m.decode(np.zeros((1, 6, 8)), np.zeros((1, 12)))


# -- training forward -----------------------------------------------------------

@pytest.mark.parametrize("variant", sorted(VARIANTS))
def test_gradient_coverage(variant):
    cfg = ModelConfig.for_variant(variant, **{k: v for k, v in tiny().to_dict().items()
                                              if not k.startswith("use_")})
    m = TrajeVAE(cfg, np.random.default_rng(8))
    x0, frames, cmask = batch(cfg, B=4, seed=9)
    recon, prior, post = m.forward_arrays(x0, frames, cmask, np.random.default_rng(10))
    loss_total(recon, frames, prior, post, 0.5)[0].backward()
    dead = [n for n, p in m.params.items() if p.grad is None or not np.any(p.grad != 0)]
    assert dead == []


def test_end_to_end_gradient_check():
    assert model_gradient_error() < 1e-3


@pytest.mark.parametrize("variant", ["base", "dct"])
def test_end_to_end_gradient_check_variants(variant):
    from trajevae.selftest import gradcheck_model_config

    d = gradcheck_model_config().to_dict()
    flags = dict(zip(("use_learnable_prior", "use_dct", "use_masked_future_poses"), VARIANTS[variant]))
    d.update(flags)
    assert model_gradient_error(config=ModelConfig(**d), per_tensor=3) < 1e-3


# -- generation ------------------------------------------------------------------

@pytest.fixture(scope="module")
def gen_setup():
    m = TrajeVAE(tiny(), np.random.default_rng(11))
    seq = generate_synthetic(1, 7, Skeleton.with_joints(4), rng=np.random.default_rng(0))[0]
    return m, seq


def test_generate_modes(gen_setup):
    m, seq = gen_setup
    traj = make_trajectories(seq, JointMask([False, True, False, True]))
    a = m.generate(seq.initial_pose, traj, mode="mean")
    b = m.generate(seq.initial_pose, traj, mode="mean")
    assert a.shape == (1, 6, 12) and np.array_equal(a, b)
    s1 = m.generate(seq.initial_pose, traj, 1, "sample", np.random.default_rng(3))
    s2 = m.generate(seq.initial_pose, traj, 1, "sample", np.random.default_rng(3))
    assert np.array_equal(s1, s2)
    many = m.generate(seq.initial_pose, traj, 5, "sample", np.random.default_rng(4))
    assert many.shape == (5, 6, 12) and np.all(np.isfinite(many))
    assert not np.array_equal(many[0], many[1])


def test_generate_never_uses_pose_encoder(gen_setup):
    m, seq = gen_setup
    traj = make_trajectories(seq, sample_mask(4, 0.5, np.random.default_rng(0)))
    ref = m.generate(seq.initial_pose, traj, 3, "sample", np.random.default_rng(5))
    broken = dict(m.params)
    for name in broken:
        if name.startswith(("enc.pose.", "head.pose.")):
            broken[name] = Tensor(np.full(broken[name].shape, np.nan))
    out = TrajeVAE(m.config, params=broken).generate(seq.initial_pose, traj, 3, "sample",
                                                      np.random.default_rng(5))
    assert np.array_equal(ref, out)


def test_generate_ignores_hidden_future(gen_setup):
    m, seq = gen_setup
    mask = JointMask([False, True, False, False])
    traj = make_trajectories(seq, mask)
    other = seq.frames.copy()
    other[:, 6:] += 5.0
    traj2 = make_trajectories(PoseSequence(seq.initial_pose, other, 15.0, "x", "y"), mask)
    assert np.array_equal(m.generate(seq.initial_pose, traj, mode="mean"),
                          m.generate(seq.initial_pose, traj2, mode="mean"))


def test_repeat_time_shape():
    assert _repeat_time(Tensor(np.ones((2, 3))), 4).shape == (2, 4, 3)
