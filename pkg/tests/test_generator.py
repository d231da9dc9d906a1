import numpy as np
import pytest

from locostack import quat
from locostack.autodiff import Tensor
from locostack.errors import ValidationError
from locostack.generator import (Anchor, Condition, GeneratorConfig, NoiseSchedule,
                                 WindowSample, canonicalize, decanonicalize,
                                 extract_windows, forward_noise, make_denoiser,
                                 sub_schedule, timestep_embedding, train, training_loss)
from locostack.generator.model import _batch_arrays, _training_loss_t
from locostack.skeleton import Link, Skeleton
from locostack.terrain import ScanPattern, flat_field
from util import rel_err


def toy_skeleton(j: int = 4) -> Skeleton:
    links = [Link("root", -1, np.zeros(3), np.array([0.0, 0.0, 1.0]))]
    axes = [np.array([0.0, 1.0, 0.0]), np.array([1.0, 0.0, 0.0]),
            np.array([0.0, 0.0, 1.0]), np.array([0.0, 1.0, 0.0])]
    for i in range(j):
        links.append(Link(f"seg{i}", i, np.array([0.15, 0.0, -0.1]), axes[i % 4]))
    return Skeleton(links=tuple(links), key_body_indices=tuple(range(1, j + 1)))


def toy_config(h: int = 3) -> GeneratorConfig:
    return GeneratorConfig(horizon=h, hidden=(8,), diffusion_steps=10,
                           beta_start=0.02, beta_end=0.72,
                           scan=ScanPattern(rows=2, cols=2, spacing=0.2),
                           batch_size=2, train_steps=5)


def toy_samples(skel, cfg, rng, n=3, field=None):
    field = field or flat_field(0.0, size_xy=(6.0, 4.0), origin=(-1.0, -2.0))
    f = skel.feature_dim
    out = []
    for _ in range(n):
        window = rng.normal(scale=0.3, size=(cfg.horizon, f))
        window[:, 2] += 0.6            # keep roots above ground
        window[:, 3:7] = quat.normalize(window[:, 3:7] + np.array([2.0, 0, 0, 0]))
        past = rng.normal(scale=0.3, size=(2, f))
        head = rng.normal(size=2)
        head /= np.linalg.norm(head)
        cond = Condition(heading=head, scan=rng.normal(scale=0.1, size=cfg.scan.size),
                         past=past)
        anchor = Anchor(x=float(rng.normal()), y=float(rng.normal()),
                        yaw=float(rng.uniform(-3, 3)), ground=0.0)
        out.append(WindowSample(window=window, cond=cond, anchor=anchor, field=field))
    return out


# ---- schedule -----------------------------------------------------------------------


def test_schedule_invariants():
    s = NoiseSchedule.linear()
    assert s.T == 50
    assert np.all(np.diff(s.alpha_bars) < 0)
    assert s.alpha_bars[-1] < 1e-2
    assert np.all(s.betas > 0) and np.all(s.betas < 1)


def test_schedule_rejects_weak_terminal_noise():
    with pytest.raises(ValidationError):
        NoiseSchedule.linear(T=50, beta_end=0.02)  # alpha_bar_T ~ 0.6


def test_forward_noise_limits():
    s = NoiseSchedule.linear(T=10, beta_end=0.72)
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=(4, 6))
    assert np.array_equal(forward_noise(x0, 0, np.zeros_like(x0), s), x0)
    eps = rng.normal(size=(4, 6))
    t = 5
    expect = np.sqrt(s.abar(t)) * x0
    assert np.allclose(forward_noise(x0, t, np.zeros_like(x0), s), expect)
    with pytest.raises(ValidationError):
        forward_noise(x0, 11, eps, s)


def test_forward_noise_variance_monte_carlo():
    # with x0 = 0 the marginal variance of x_t is 1 - alpha_bar_t
    s = NoiseSchedule.linear(T=10, beta_end=0.72)
    rng = np.random.default_rng(1)
    t = 7
    draws = forward_noise(np.zeros(100_000), t, rng.standard_normal(100_000), s)
    assert abs(draws.var() - (1.0 - s.abar(t))) / (1.0 - s.abar(t)) < 0.02


def test_sub_schedule_properties():
    s = NoiseSchedule.linear()
    assert sub_schedule(s, s.T) == list(range(s.T, 0, -1))
    for k in (1, 2, 5, 17):
        taus = sub_schedule(s, k)
        assert len(taus) == k
        assert taus[0] == s.T
        assert all(a > b for a, b in zip(taus, taus[1:]))
    with pytest.raises(ValidationError):
        sub_schedule(s, 0)
    with pytest.raises(ValidationError):
        sub_schedule(s, s.T + 1)


# ---- canonical frame ----------------------------------------------------------------


def test_canonicalize_roundtrip():
    skel = toy_skeleton()
    rng = np.random.default_rng(2)
    feats = rng.normal(size=(7, skel.feature_dim))
    feats[:, 3:7] = quat.normalize(feats[:, 3:7] + np.array([2.0, 0, 0, 0]))
    anchor = Anchor(x=1.3, y=-0.4, yaw=0.9, ground=0.25)
    again = decanonicalize(canonicalize(feats, anchor, skel.joint_count, skel.body_count),
                           anchor, skel.joint_count, skel.body_count)
    assert np.allclose(again, feats, atol=1e-12)


def test_canonicalize_removes_anchor_pose():
    skel = toy_skeleton()
    f = skel.feature_dim
    feats = np.zeros((1, f))
    feats[0, 0:3] = [2.0, 1.0, 0.8]
    feats[0, 3:7] = quat.from_yaw(0.7)
    anchor = Anchor(x=2.0, y=1.0, yaw=0.7, ground=0.1)
    canon = canonicalize(feats, anchor, skel.joint_count, skel.body_count)
    assert np.allclose(canon[0, 0:2], 0.0, atol=1e-12)
    assert abs(canon[0, 2] - 0.7) < 1e-12
    assert abs(quat.yaw_of(canon[0, 3:7])) < 1e-12


# ---- denoiser -----------------------------------------------------------------------


def test_denoise_shapes_and_determinism():
    skel = toy_skeleton()
    cfg = toy_config()
    den = make_denoiser(cfg, skel, np.random.default_rng(3))
    rng = np.random.default_rng(4)
    s = toy_samples(skel, cfg, rng, n=1)[0]
    x_t = rng.normal(size=(cfg.horizon, skel.feature_dim))
    a = den.denoise(x_t, 5, s.cond)
    b = den.denoise(x_t, 5, s.cond)
    assert a.shape == (cfg.horizon, skel.feature_dim)
    assert np.array_equal(a, b)
    with pytest.raises(ValidationError):
        den.denoise(x_t[:, :-1], 5, s.cond)


def test_zero_net_outputs_bias():
    skel = toy_skeleton()
    cfg = toy_config()
    den = make_denoiser(cfg, skel, np.random.default_rng(5))
    vec = np.zeros(den.net.param_count)
    den.net.load_param_vector(vec)
    den.net.params[-1].data[:] = 0.37  # output bias
    rng = np.random.default_rng(6)
    s = toy_samples(skel, cfg, rng, n=1)[0]
    out = den.denoise(rng.normal(size=(cfg.horizon, skel.feature_dim)), 3, s.cond)
    assert np.allclose(out, 0.37)


def test_input_jacobian_matches_finite_differences():
    skel = toy_skeleton()
    cfg = toy_config()
    den = make_denoiser(cfg, skel, np.random.default_rng(7))
    rng = np.random.default_rng(8)
    x0 = rng.normal(size=den.net.in_dim)
    weights = rng.normal(size=den.net.out_dim)

    def scalar_out(x):
        return float(den.net.forward_np(x[None, :])[0] @ weights)

    t = Tensor(x0[None, :], requires_grad=True)
    (den.net.forward_t(t) * weights).sum().backward()
    from util import numerical_grad
    num = numerical_grad(lambda x: scalar_out(x), x0.copy(), h=1e-6)
    assert rel_err(t.grad[0], num) < 1e-4


# ---- training loss ------------------------------------------------------------------


def test_training_loss_zero_at_perfect_prediction():
    # if the "net" reproduces x0 exactly and x0 is fk-consistent and above
    # the terrain, every term vanishes
    skel = toy_skeleton()
    cfg = toy_config()
    from locostack.skeleton import fk
    from locostack.motion import encode_frame, MotionFrame

    rng = np.random.default_rng(9)
    frames = []
    for i in range(cfg.horizon):
        joints = rng.uniform(-0.5, 0.5, skel.joint_count)
        root = np.array([0.1 * i, 0.0, 1.5])
        frames.append(MotionFrame.from_pose(skel, root, quat.identity(), joints))
    window = np.stack([encode_frame(fr) for fr in frames])
    field = flat_field(0.0, size_xy=(6.0, 4.0), origin=(-1.0, -2.0))
    s = WindowSample(window=window,
                     cond=Condition(heading=np.array([1.0, 0.0]),
                                    scan=np.zeros(cfg.scan.size),
                                    past=window[:2].copy()),
                     anchor=Anchor(0.0, 0.0, 0.0, 0.0), field=field)
    den = make_denoiser(cfg, skel, np.random.default_rng(10))

    arrs = _batch_arrays([s])
    # bypass the net: evaluate the loss pieces at x0_hat = x0
    from locostack.generator.model import _penetration_loss_t
    x0_hat = Tensor(window[None])
    diff = x0_hat - Tensor(window[None])
    assert float((diff * diff).mean().data) == 0.0
    body = x0_hat[:, :, 7 + skel.joint_count:].reshape(1, cfg.horizon, skel.body_count, 3)
    pen = _penetration_loss_t(den, body, arrs)
    assert float(pen.data) == 0.0
    from locostack.diffkin import t_fk, t_quat_normalize
    fkpos = t_fk(skel, x0_hat[:, :, 0:3], t_quat_normalize(x0_hat[:, :, 3:7]),
                 x0_hat[:, :, 7:7 + skel.joint_count])
    dj = fkpos - body
    assert float((dj * dj).mean().data) < 1e-24


def test_training_loss_gradient_matches_finite_differences():
    # keystone: full parameter gradient incl. fk and penetration terms
    skel = toy_skeleton(4)
    assert skel.body_count == 5
    cfg = toy_config(h=3)
    den = make_denoiser(cfg, skel, np.random.default_rng(11))
    rng = np.random.default_rng(12)
    samples = toy_samples(skel, cfg, rng, n=2)
    # place some predicted bodies below ground so the penetration term is active
    den.net.params[-1].data[:] = -0.2

    seed_state = np.random.default_rng(13)
    val, _ = training_loss(den, samples, np.random.default_rng(13))
    analytic = den.net.grad_vector()

    p0 = den.net.param_vector()
    h = 1e-5
    num = np.zeros_like(p0)
    for i in range(p0.size):
        for sgn in (+1.0, -1.0):
            vec = p0.copy()
            vec[i] += sgn * h
            den.net.load_param_vector(vec)
            arrs = _batch_arrays(samples)
            loss_t, _ = _training_loss_t(den, arrs, np.random.default_rng(13))
            num[i] += sgn * float(loss_t.data)
    num /= (2 * h)
    den.net.load_param_vector(p0)
    assert rel_err(analytic, num) < 1e-4


def test_training_loss_pen_inactive_above_ground():
    skel = toy_skeleton()
    cfg = toy_config()
    rng = np.random.default_rng(14)
    field = flat_field(-5.0, size_xy=(6.0, 4.0), origin=(-1.0, -2.0))  # far below
    samples = toy_samples(skel, cfg, rng, n=2, field=field)
    den = make_denoiser(cfg, skel, np.random.default_rng(15))
    v1, parts1 = training_loss(den, samples, np.random.default_rng(16))
    assert parts1["pen"] == 0.0
    cfg0 = GeneratorConfig(**{**cfg.__dict__, "lambda_pen": 0.0})
    den0 = make_denoiser(cfg0, skel, np.random.default_rng(15))
    v0, _ = training_loss(den0, samples, np.random.default_rng(16))
    assert abs(v1 - v0) < 1e-12


def test_training_loss_empty_batch():
    skel = toy_skeleton()
    cfg = toy_config()
    den = make_denoiser(cfg, skel, np.random.default_rng(17))
    with pytest.raises(ValidationError):
        training_loss(den, [], np.random.default_rng(0))


# ---- train loop ---------------------------------------------------------------------


def test_train_zero_steps_returns_init():
    skel = toy_skeleton()
    cfg = toy_config()
    rng = np.random.default_rng(18)
    samples = toy_samples(skel, cfg, rng, n=6)
    den, curve = train(samples, cfg, np.random.default_rng(19), skel, steps=0)
    den2, _ = train(samples, cfg, np.random.default_rng(19), skel, steps=0)
    assert den.param_hash() == den2.param_hash()
    assert curve.loss == []


def test_train_deterministic():
    skel = toy_skeleton()
    cfg = toy_config()
    rng = np.random.default_rng(20)
    samples = toy_samples(skel, cfg, rng, n=6)
    den1, c1 = train(samples, cfg, np.random.default_rng(21), skel, steps=5)
    den2, c2 = train(samples, cfg, np.random.default_rng(21), skel, steps=5)
    assert den1.param_hash() == den2.param_hash()
    assert c1.loss == c2.loss


# ---- sampling -----------------------------------------------------------------------


def test_sample_full_schedule_matches_reference_bit_exact():
    skel = toy_skeleton()
    cfg = toy_config()
    rng = np.random.default_rng(22)
    samples = toy_samples(skel, cfg, rng, n=1)
    den = make_denoiser(cfg, skel, np.random.default_rng(23))
    a = den.sample(samples[0].cond, cfg.diffusion_steps, np.random.default_rng(24))
    b = den.sample_reference(samples[0].cond, np.random.default_rng(24))
    assert np.array_equal(a, b)


def test_sample_single_step_is_one_denoise():
    skel = toy_skeleton()
    cfg = toy_config()
    rng = np.random.default_rng(25)
    s = toy_samples(skel, cfg, rng, n=1)[0]
    den = make_denoiser(cfg, skel, np.random.default_rng(26))
    seed = 27
    out = den.sample(s.cond, 1, np.random.default_rng(seed))
    noise = np.random.default_rng(seed).standard_normal((cfg.horizon, skel.feature_dim))
    expect = den.denormalize(den.denoise(noise, den.schedule.T, s.cond))
    assert np.array_equal(out, expect)


def test_sample_equivariance_under_anchor_pose():
    # translating / yawing the anchor transforms the sampled window rigidly
    skel = toy_skeleton()
    cfg = toy_config()
    rng = np.random.default_rng(28)
    s = toy_samples(skel, cfg, rng, n=1)[0]
    den = make_denoiser(cfg, skel, np.random.default_rng(29))
    base = den.sample(s.cond, 2, np.random.default_rng(30),
                      anchor=Anchor(0.0, 0.0, 0.0, 0.0))
    moved = den.sample(s.cond, 2, np.random.default_rng(30),
                       anchor=Anchor(1.5, -2.0, 0.8, 0.0))
    expect = decanonicalize(canonicalize(base, Anchor(0, 0, 0, 0), skel.joint_count,
                                         skel.body_count),
                            Anchor(1.5, -2.0, 0.8, 0.0), skel.joint_count, skel.body_count)
    assert np.allclose(moved, expect, atol=1e-6)


def test_model_roundtrip(tmp_path):
    from locostack.generator import load_model, save_model
    skel = toy_skeleton()
    cfg = toy_config()
    rng = np.random.default_rng(31)
    samples = toy_samples(skel, cfg, rng, n=6)
    den, _ = train(samples, cfg, np.random.default_rng(32), skel, steps=3)
    path = tmp_path / "model.bin"
    save_model(path, den)
    loaded = load_model(path, skel)
    assert loaded.param_hash() == den.param_hash()
    s = samples[0]
    a = den.sample(s.cond, 2, np.random.default_rng(33))
    b = loaded.sample(s.cond, 2, np.random.default_rng(33))
    assert np.array_equal(a, b)


def test_timestep_embedding_shape():
    e = timestep_embedding(np.array([1, 5, 50]))
    assert e.shape == (3, 16)
    assert not np.allclose(e[0], e[1])
