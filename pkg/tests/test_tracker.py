import numpy as np
import pytest

from locostack import quat
from locostack.dataset import PrimitiveParams, synth_with_terrain
from locostack.errors import ValidationError
from locostack.generator import GeneratorConfig, extract_windows, make_denoiser, train
from locostack.motion import encode_frame
from locostack.skeleton import default_humanoid
from locostack.terrain import flat_field
from locostack.tracker import (GOAL, TIMEOUT, ClipRefProvider, EnvConfig, GenRefProvider,
                               InitRandomization, PolicyValue, PpoConfig, RolloutBuffer,
                               TrackerEnv, gae, load_policy, ppo_update, run_episodes,
                               save_policy)
from locostack.tracker.refs import REPLAN_PERIOD, feature_reference_arrays
from locostack.tracker.stages import clip_goal, clip_start_pose, standing_pose

SK = default_humanoid()


@pytest.fixture(scope="module")
def walk_setup():
    p = PrimitiveParams(skill="walk", speed=0.8, duration=2.5)
    clip, spec, fld = synth_with_terrain(p, np.random.default_rng(4), SK)
    return clip, fld


def make_env(fld, n=4, seeds=None, cfg=None):
    cfg = cfg or EnvConfig()
    goals = np.tile([3.0, 0.0], (n, 1))
    seeds = np.arange(n) + 7 if seeds is None else seeds
    return TrackerEnv(SK, [fld] * n, cfg, goals, seeds)


def zero_rand():
    return InitRandomization(xy=0.0, yaw=0.0, joints=0.0)


# ---- gae / ppo ----------------------------------------------------------------------


def random_buffer(rng, t_len=20, n=3):
    return RolloutBuffer(
        obs=rng.normal(size=(t_len, n, 5)),
        actions=rng.normal(size=(t_len, n, 2)),
        rewards=rng.normal(size=(t_len, n)),
        dones=rng.uniform(size=(t_len, n)) < 0.1,
        values=rng.normal(size=(t_len, n)),
        logp=rng.normal(size=(t_len, n)),
        last_value=rng.normal(size=n),
    )


def test_gae_lambda_one_equals_discounted_mc():
    rng = np.random.default_rng(40)
    buf = random_buffer(rng)
    gamma = 0.95
    adv, ret = gae(buf, gamma, 1.0)
    t_len, n = buf.rewards.shape
    for i in range(n):
        for t in range(t_len):
            g = 0.0
            discount = 1.0
            for k in range(t, t_len):
                g += discount * buf.rewards[k, i]
                if buf.dones[k, i]:
                    break
                discount *= gamma
                if k == t_len - 1:
                    g += discount * buf.last_value[i]
            assert abs(adv[t, i] - (g - buf.values[t, i])) < 1e-10


def test_gae_gamma_zero():
    rng = np.random.default_rng(41)
    buf = random_buffer(rng)
    adv, _ = gae(buf, 1e-12, 0.95)  # gamma -> 0 limit
    assert np.allclose(adv, buf.rewards - buf.values, atol=1e-9)


def test_gae_constant_reward_fixed_point():
    # V = r / (1 - gamma) is the Bellman fixed point: advantages vanish
    gamma = 0.9
    r = 1.0
    t_len, n = 30, 2
    buf = RolloutBuffer(
        obs=np.zeros((t_len, n, 1)), actions=np.zeros((t_len, n, 1)),
        rewards=np.full((t_len, n), r), dones=np.zeros((t_len, n), bool),
        values=np.full((t_len, n), r / (1 - gamma)), logp=np.zeros((t_len, n)),
        last_value=np.full(n, r / (1 - gamma)))
    adv, _ = gae(buf, gamma, 0.95)
    assert np.max(np.abs(adv)) < 1e-9


def test_ppo_update_clip_inequality_and_determinism():
    rng = np.random.default_rng(42)
    cfg = PpoConfig(minibatch=32, epochs=2, hidden=(16,))
    pv1 = PolicyValue(5, 2, cfg, np.random.default_rng(1))
    pv2 = PolicyValue(5, 2, cfg, np.random.default_rng(1))
    buf = random_buffer(rng, t_len=16, n=4)
    s1 = ppo_update(pv1, buf, cfg, np.random.default_rng(2))
    s2 = ppo_update(pv2, buf, cfg, np.random.default_rng(2))
    assert s1["clip_inequality_ok"] and s2["clip_inequality_ok"]
    assert pv1.param_hash() == pv2.param_hash()


def test_policy_file_roundtrip(tmp_path):
    cfg = PpoConfig(hidden=(16, 16))
    pv = PolicyValue(7, 3, cfg, np.random.default_rng(3))
    save_policy(tmp_path / "p.bin", pv)
    loaded = load_policy(tmp_path / "p.bin")
    assert loaded.param_hash() == pv.param_hash()
    obs = np.random.default_rng(4).normal(size=(2, 7))
    assert np.array_equal(loaded.mean_action(obs), pv.mean_action(obs))


def test_ppo_config_validation():
    with pytest.raises(ValidationError):
        PpoConfig(gamma=0.0)
    with pytest.raises(ValidationError):
        PpoConfig(clip_ratio=-1.0)


# ---- env ---------------------------------------------------------------------------


def test_env_reset_deterministic(walk_setup):
    clip, fld = walk_setup
    spawns = np.tile(clip_start_pose(clip), (4, 1))
    e1 = make_env(fld, seeds=np.array([5, 6, 7, 8]))
    e2 = make_env(fld, seeds=np.array([5, 6, 7, 8]))
    e1.reset(spawns, InitRandomization())
    e2.reset(spawns, InitRandomization())
    assert np.array_equal(e1.root, e2.root)
    assert np.array_equal(e1.q, e2.q)


def test_env_reset_zero_randomization_is_nominal(walk_setup):
    clip, fld = walk_setup
    spawns = np.tile(clip_start_pose(clip), (2, 1))
    env = make_env(fld, n=2)
    env.reset(spawns, zero_rand())
    assert np.allclose(env.root, clip.frames[0].root_pos)
    assert np.allclose(env.q, clip.frames[0].joint_pos)


def test_env_reset_yaw_within_bounds(walk_setup):
    clip, fld = walk_setup
    n = 300
    env = make_env(fld, n=n, seeds=np.arange(n))
    rand = InitRandomization(xy=0.05, yaw=0.2, joints=0.02)
    env.reset(np.tile(clip_start_pose(clip), (n, 1)), rand)
    base_yaw = quat.yaw_of(clip.frames[0].root_quat)
    dev = env.yaw - base_yaw
    assert np.all(np.abs(dev) <= 0.2 + 1e-12)
    assert np.std(dev) > 0.05  # actually randomized


def test_env_step_deterministic(walk_setup):
    clip, fld = walk_setup
    provider = ClipRefProvider([clip], SK)
    outs = []
    for _ in range(2):
        env = make_env(fld, n=2, seeds=np.array([11, 12]))
        provider.reset(np.zeros(2, dtype=np.int64))
        env.reset(np.tile(clip_start_pose(clip), (2, 1)), InitRandomization())
        for t in range(30):
            ref = provider.frame(env.step_count, offset=1)
            env.observe(ref)
            reward, done, _ = env.step(np.tile(env.default_pose, (2, 1)), ref)
        outs.append((env.root.copy(), env.q.copy(), reward.copy()))
    assert np.array_equal(outs[0][0], outs[1][0])
    assert np.array_equal(outs[0][1], outs[1][1])
    assert np.array_equal(outs[0][2], outs[1][2])


def test_env_perfect_joint_tracking_reward(walk_setup):
    # zero-lag joints + action = reference joints gives the full joint term
    clip, fld = walk_setup
    from dataclasses import replace as drep
    cfg = drep(EnvConfig(), joint_tau=1e-6, actuator_noise=0.0)
    env = make_env(fld, n=1, cfg=cfg, seeds=np.array([3]))
    provider = ClipRefProvider([clip], SK)
    provider.reset(np.zeros(1, dtype=np.int64))
    env.reset(clip_start_pose(clip)[None], zero_rand())
    from locostack import rewards as rw
    ref = provider.frame(env.step_count, offset=1)
    env.observe(ref)
    env.step(np.asarray(ref.joint_pos), ref)
    state_q = env.q[0]
    assert np.allclose(state_q, np.asarray(ref.joint_pos)[0], atol=1e-4)


def test_env_fall_detection(walk_setup):
    clip, fld = walk_setup
    env = make_env(fld, n=1)
    spawn = clip_start_pose(clip)
    spawn = spawn.copy()
    spawn[2] = 0.1  # below the fall threshold
    env.reset(spawn[None], zero_rand())
    provider = ClipRefProvider([clip], SK)
    provider.reset(np.zeros(1, dtype=np.int64))
    ref = provider.frame(env.step_count, offset=1)
    env.observe(ref)
    _, done, info = env.step(env.default_pose[None], ref)
    assert done[0] and info["terms"][0] == 1  # FALL


def test_env_goal_at_spawn(walk_setup):
    clip, fld = walk_setup
    n = 1
    goals = clip.frames[0].root_pos[:2][None]
    env = TrackerEnv(SK, [fld], EnvConfig(), goals, np.array([9]))
    env.reset(clip_start_pose(clip)[None], zero_rand())
    provider = ClipRefProvider([clip], SK)
    provider.reset(np.zeros(1, dtype=np.int64))
    ref = provider.frame(env.step_count, offset=1)
    env.observe(ref)
    _, done, info = env.step(env.default_pose[None], ref)
    assert done[0] and info["terms"][0] == GOAL


def test_observation_layout_and_history(walk_setup):
    clip, fld = walk_setup
    env = make_env(fld, n=2)
    env.reset(np.tile(clip_start_pose(clip), (2, 1)), zero_rand())
    provider = ClipRefProvider([clip], SK)
    provider.reset(np.zeros(2, dtype=np.int64))
    j = SK.joint_count
    per = 6 + 3 * j
    marker = []
    for t in range(7):
        ref = provider.frame(env.step_count, offset=1)
        obs = env.observe(ref)
        assert obs.shape == (2, env.obs_dim)
        # history block: oldest-first frames of length per
        hist = obs[:, 6 + 2 * j + 27:-env.cfg.scan.size].reshape(2, env.cfg.history, per)
        marker.append(hist[0, -1].copy())  # newest frame
        if t >= 1:
            # yesterday's newest is today's second-newest
            assert np.array_equal(hist[0, -2], marker[t - 1])
        env.step(np.tile(env.default_pose, (2, 1)), ref)


def test_scan_slot_sees_terrain():
    from locostack.terrain import TerrainSpec, generate
    fld = generate(TerrainSpec(kind="box", height=0.5, width=1.5, start_x=0.4))
    env = make_env(fld, n=1)
    env.reset(standing_pose(SK, fld, np.array([0.0, 0.0]), 0.0)[None], zero_rand())
    clip, flat = None, flat_field(0.0)
    provider_feats = feature_reference_arrays(
        np.zeros((1, 3, SK.feature_dim)) + encode_frame(
            __import__("locostack.motion", fromlist=["MotionFrame"]).MotionFrame.from_pose(
                SK, np.array([0.0, 0.0, 0.6]), quat.identity(), np.zeros(SK.joint_count))),
        50.0, SK)
    ref = __import__("locostack.rewards", fromlist=["ReferenceFrame"]).ReferenceFrame(
        base_pos=np.zeros((1, 3)), base_quat=quat.identity((1,)),
        base_lin_vel=np.zeros((1, 3)), base_ang_vel=np.zeros((1, 3)),
        joint_pos=np.zeros((1, SK.joint_count)), joint_vel=np.zeros((1, SK.joint_count)),
        key_body_pos_w=np.zeros((1, 9, 3)), key_body_pos_b=np.zeros((1, 9, 3)))
    obs = env.observe(ref)
    scan = obs[0, -env.cfg.scan.size:]
    assert scan.max() - scan.min() > 0.4  # the box shows up ahead


# ---- reference providers -------------------------------------------------------------


def test_clip_provider_clamps_at_end(walk_setup):
    clip, fld = walk_setup
    provider = ClipRefProvider([clip], SK)
    provider.reset(np.zeros(1, dtype=np.int64))
    a = provider.frame(np.array([len(clip) + 50]))
    b = provider.frame(np.array([len(clip) - 1]))
    assert np.array_equal(np.asarray(a.base_pos), np.asarray(b.base_pos))


def test_feature_reference_velocities(walk_setup):
    clip, fld = walk_setup
    arrs = feature_reference_arrays(clip.features()[None], clip.fps, SK)
    from locostack.motion import finite_diff_velocity
    lin, ang, jnt = finite_diff_velocity(clip, 10)
    # provider velocities are base-frame; rotate back to world for comparison
    lin_b = arrs["lin_b"][0, 10]
    q10 = clip.frames[10].root_quat
    assert np.allclose(quat.rotate(q10, lin_b), lin, atol=1e-9)


def make_tiny_denoiser(rng_seed=50):
    cfg = GeneratorConfig(horizon=8, hidden=(16,), diffusion_steps=8,
                          beta_start=0.05, beta_end=0.8, train_steps=2,
                          scan=EnvConfig().scan)
    den = make_denoiser(cfg, SK, np.random.default_rng(rng_seed))
    return den


def test_gen_provider_replan_boundaries(walk_setup):
    clip, fld = walk_setup
    den = make_tiny_denoiser()
    n = 1
    rngs = [np.random.default_rng(5)]
    provider = GenRefProvider(den, SK, [fld], np.array([[30.0, 0.0]]), steps=2, rngs=rngs)
    from dataclasses import replace as drep
    cfg = drep(EnvConfig(), fall_height=-100.0, gravity=0.0, timeout=100.0)
    env = TrackerEnv(SK, [fld], cfg, np.array([[30.0, 0.0]]), np.array([7]))
    env.reset(standing_pose(SK, fld, np.zeros(2), 0.0)[None], zero_rand())
    replan_steps = []
    for t in range(60):
        due = provider.replan_due(env.time) & ~env.done
        ids = np.where(due)[0]
        if ids.size:
            replan_steps.append(int(env.step_count[0]))
            provider.replan(ids, env.past_feats[ids][:, ::-1], env.time)
        ref = provider.frame(env.step_count)
        env.observe(ref)
        env.step(env.default_pose[None], ref)
        provider.advance(~env.done)
    # replans happen at the first control step at/after each 0.25 s multiple
    expect = [0]
    t_next = REPLAN_PERIOD
    k = 0
    while len(expect) < len(replan_steps):
        k += 1
        if k * 0.02 >= t_next - 1e-9:
            expect.append(k)
            t_next += REPLAN_PERIOD
    assert replan_steps == expect
    # references change only at those boundaries
    assert replan_steps[:4] == [0, 13, 25, 38]


def test_gen_provider_window_changes_only_at_replan(walk_setup):
    clip, fld = walk_setup
    den = make_tiny_denoiser()
    provider = GenRefProvider(den, SK, [fld], np.array([[30.0, 0.0]]), steps=2,
                              rngs=[np.random.default_rng(6)])
    from dataclasses import replace as drep
    cfg = drep(EnvConfig(), fall_height=-100.0, gravity=0.0, timeout=100.0)
    env = TrackerEnv(SK, [fld], cfg, np.array([[30.0, 0.0]]), np.array([7]))
    env.reset(standing_pose(SK, fld, np.zeros(2), 0.0)[None], zero_rand())
    snapshots = []
    for t in range(30):
        ids = np.where(provider.replan_due(env.time) & ~env.done)[0]
        provider.replan(ids, env.past_feats[ids][:, ::-1], env.time)
        snapshots.append(provider.window_arrays["root"].copy())
        ref = provider.frame(env.step_count)
        env.observe(ref)
        env.step(env.default_pose[None], ref)
        provider.advance(~env.done)
    for t in range(1, 30):
        same = np.array_equal(snapshots[t], snapshots[t - 1])
        boundary = t in (13, 25)
        assert same != boundary


def test_run_episodes_unreachable_goal_times_out(walk_setup):
    clip, fld = walk_setup
    from dataclasses import replace as drep
    cfg = drep(EnvConfig(), timeout=1.0)
    pv = PolicyValue(make_env(fld, n=1).obs_dim, SK.joint_count, PpoConfig(hidden=(8,)),
                     np.random.default_rng(8))
    outs = run_episodes(pv, "tracker_only", [fld], np.array([[50.0, 0.0]]),
                        clip_start_pose(clip)[None], np.array([13]), SK, cfg, clip=clip)
    assert not outs[0].success and outs[0].term == TIMEOUT


def test_run_episodes_trace_deterministic(walk_setup):
    clip, fld = walk_setup
    from dataclasses import replace as drep
    cfg = drep(EnvConfig(), timeout=0.6)
    pv = PolicyValue(make_env(fld, n=1).obs_dim, SK.joint_count, PpoConfig(hidden=(8,)),
                     np.random.default_rng(8))
    def run():
        return run_episodes(pv, "tracker_only", [fld], np.array([[2.0, 0.0]]),
                            clip_start_pose(clip)[None], np.array([21]), SK, cfg,
                            clip=clip, record_trace=True)[0]
    a, b = run(), run()
    assert np.array_equal(a.trace["root"], b.trace["root"])
    assert np.array_equal(a.trace["reward"], b.trace["reward"])


def test_run_episodes_rejects_bad_mode(walk_setup):
    clip, fld = walk_setup
    pv = PolicyValue(10, SK.joint_count, PpoConfig(hidden=(8,)), np.random.default_rng(0))
    with pytest.raises(ValidationError):
        run_episodes(pv, "flying", [fld], np.zeros((1, 2)), clip_start_pose(clip)[None],
                     np.array([1]), SK, EnvConfig())
