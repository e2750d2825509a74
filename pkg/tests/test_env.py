import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from s2rbench.env import (EpisodeConfig, EpisodeTrace, Mode, ReachEnv, TerminationCause, compute_reward,
                          episode_return, sample_target)
from s2rbench.errors import ConfigError, ProtocolError
from s2rbench.robot import RobotGeometry, forward_kinematics

G = RobotGeometry()
EVAL = EpisodeConfig(horizon=500, max_speed=math.pi / 9, mode=Mode.EVALUATION)


def test_sample_target_on_sphere_above_floor():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        p = sample_target(G, 0.10, rng)
        assert abs(np.linalg.norm(p - G.center) - G.link_length) < 1e-12
        assert p[2] >= 0.10


def test_sample_target_cap_centroid():
    # heights of uniform points on a sphere are uniform (Archimedes); the cap
    # centroid height is the midpoint of [z_lo, d1 + d2] and the spread is range/sqrt(12)
    rng = np.random.default_rng(1)
    n = 1_000_000
    z = np.fromiter((sample_target(G, 0.10, rng)[2] for _ in range(n)), float, n)
    top, lo = G.base_height + G.link_length, 0.10
    se = (top - lo) / math.sqrt(12) / math.sqrt(n)
    assert abs(z.mean() - (top + lo) / 2) < 3 * se


def test_sample_target_azimuth_uniform():
    rng = np.random.default_rng(2)
    pts = np.array([sample_target(G, 0.10, rng) for _ in range(20000)])
    # uniform azimuth: mean of x and y vanish
    se = G.link_length / math.sqrt(len(pts))
    assert abs(pts[:, 0].mean()) < 4 * se and abs(pts[:, 1].mean()) < 4 * se


def test_sample_target_shrinking_cap():
    rng = np.random.default_rng(3)
    top = G.base_height + G.link_length
    for _ in range(100):
        p = sample_target(G, top - 1e-6, rng)
        assert np.linalg.norm(p - G.home_position) < 2e-3
    with pytest.raises(ConfigError):
        sample_target(G, top, rng)


def test_sample_target_deterministic():
    a = sample_target(G, 0.1, np.random.default_rng(7))
    b = sample_target(G, 0.1, np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_reward_examples():
    assert compute_reward(0.5, 3, 250, False) == -0.5
    assert math.isclose(compute_reward(0.2, 100, 250, True), -30.0, abs_tol=1e-12)
    assert compute_reward(0.0, 17, 250, True) == 0.0


def test_episode_return_examples():
    assert episode_return([-1, -2, -3]) == -6
    assert episode_return([]) == 0
    assert math.isclose(episode_return([-0.1] * 250), -25.0, abs_tol=1e-12)


def test_reset_observation():
    env = ReachEnv(G)
    tgt = np.array([0.3, -0.2, 0.9])
    obs = env.reset(tgt)
    assert np.array_equal(obs, [0.3, -0.2, 0.9 - (G.base_height + G.link_length), 0, 0])
    assert not env.target_reachable
    assert np.array_equal(env.reset(G.home_position), np.zeros(5))
    assert env.target_reachable


def test_reset_needs_target_source():
    with pytest.raises(ConfigError):
        ReachEnv(G).reset()
    with pytest.raises(ConfigError):
        ReachEnv(G).reset([0.0, 1.0])


def test_reset_deterministic_with_rng():
    a = ReachEnv(G).reset(rng=np.random.default_rng(5))
    b = ReachEnv(G).reset(rng=np.random.default_rng(5))
    assert np.array_equal(a, b)


def test_null_action_and_ideal_euler_step():
    env = ReachEnv(G)
    tgt = forward_kinematics(G, 0.4, 0.7)
    obs0 = env.reset(tgt)
    r = env.step((0.0, 0.0))
    assert np.array_equal(r.observation, obs0)
    assert r.reward == -np.linalg.norm(obs0[:3])
    env.step((0.0, 0.6))
    assert env.state.q2 == 0.02 * 0.6


def test_observation_is_target_minus_fk():
    env = ReachEnv(G, rng=np.random.default_rng(0))
    env.reset()
    rng = np.random.default_rng(1)
    for _ in range(50):
        r = env.step(rng.uniform(-1, 1, 2))
        if r.terminated:
            break
        ee = forward_kinematics(G, env.state.q1, env.state.q2)
        assert np.array_equal(r.observation[:3], env.target - ee)


def test_joint_limit_termination_step_count():
    env = ReachEnv(G, EVAL)
    env.reset(G.home_position)
    env.state.q1 = math.radians(149.0)
    vmax = math.pi / 9
    expected = math.ceil(math.radians(1.0) / (0.02 * vmax))
    steps = 0
    while True:
        r = env.step((5.0, 0.0))  # clamped to vmax
        steps += 1
        if r.terminated:
            break
    assert r.termination_cause is TerminationCause.JOINT_LIMIT
    assert steps == expected


def test_training_mode_floor_collision_and_penalty():
    ep = EpisodeConfig(horizon=250, max_speed=1.0)
    env = ReachEnv(G, ep)
    env.reset(forward_kinematics(G, 0.0, 1.0))
    env.state.q2 = math.acos(-G.base_height / G.link_length) - 0.005
    r = env.step((0.0, 1.0))
    assert r.termination_cause is TerminationCause.FLOOR_COLLISION
    assert math.isclose(r.reward, -env.distance * (250 - 1), rel_tol=1e-15)
    with pytest.raises(ProtocolError):
        env.step((0.0, 0.0))


def test_training_mode_ignores_safety_limit_but_hard_stops():
    env = ReachEnv(G, EpisodeConfig(horizon=400, max_speed=1.0))
    env.reset(G.home_position)
    for _ in range(200):
        r = env.step((1.0, 0.0))
        assert r.termination_cause in (TerminationCause.NONE,)
    assert math.isclose(env.state.q1, math.radians(170.0))


def test_horizon_termination_has_no_penalty():
    env = ReachEnv(G, EpisodeConfig(horizon=5))
    env.reset(forward_kinematics(G, 0.5, 0.5))
    rewards = [env.step((0.0, 0.0)) for _ in range(5)]
    assert rewards[-1].termination_cause is TerminationCause.HORIZON
    assert all(r.reward == rewards[0].reward for r in rewards)


def test_perfect_agent_earns_zero():
    env = ReachEnv(G)
    env.reset(G.home_position)
    total = episode_return(env.step((0.0, 0.0)).reward for _ in range(250))
    assert total == 0.0


@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=1, max_size=30))
def test_ideal_step_reversible(actions):
    env = ReachEnv(G, EpisodeConfig(horizon=1000))
    env.reset(G.home_position)
    env.state.q2 = 0.5
    for a in actions:
        env.step(a)
    for a in reversed(actions):
        env.step((-a[0], -a[1]))
    assert abs(env.state.q1) < 1e-12 and abs(env.state.q2 - 0.5) < 1e-12


@given(st.floats(0, 2), st.integers(1, 249))
def test_terminal_penalty_equals_frozen_agent(d, t):
    frozen = episode_return([-d] * (250 - t))
    assert abs(compute_reward(d, t, 250, True) - frozen) < 1e-12


@given(st.integers(0, 2**32 - 1))
def test_rewards_nonpositive_and_runs_bit_identical(seed):
    def run():
        env = ReachEnv(G, rng=np.random.default_rng(seed))
        env.reset()
        rng = np.random.default_rng(seed + 1)
        out = []
        for _ in range(60):
            r = env.step(rng.uniform(-1.5, 1.5, 2))
            out.append((r.observation.tobytes(), r.reward, r.termination_cause))
            assert r.reward <= 0 and math.isfinite(r.reward)
            assert r.terminated == (r.termination_cause is not TerminationCause.NONE)
            if r.terminated:
                break
        return out
    assert run() == run()


def test_trace_rows():
    buf = io.StringIO()
    env = ReachEnv(G, EpisodeConfig(horizon=3))
    env.trace = EpisodeTrace(buf)
    env.reset(G.home_position)
    for _ in range(3):
        env.step((0.1, 0.1))
    lines = buf.getvalue().splitlines()
    assert lines[0] == "step,q1,q2,dx,dy,dz,reward,termination_cause"
    assert len(lines) == 4 and lines[-1].endswith(",horizon")
