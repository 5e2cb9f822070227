"""Activity scripting, trajectory simulation, and IMU synthesis."""
import numpy as np
import pytest

from imuloc.errors import ConfigError, DataError
from imuloc.motion import (DEFAULT_ACTIONS, GRAVITY, ActionClass, ActionScript,
                           Episode, NoiseModel, ground_truth_labels,
                           make_action_set, mean_positions_per_second, plan_script,
                           simulate_trajectory, synthesize_imu, window_imu)
from imuloc.world import SceneConfig, generate_scene, partition

RATE = 50


@pytest.fixture(scope="module")
def scene_and_cloud():
    return generate_scene(SceneConfig(), seed=42)


def test_script_covers_total_without_gaps(scene_and_cloud):
    scene, _ = scene_and_cloud
    script = plan_script(scene, DEFAULT_ACTIONS, 60.0, seed=3)
    assert script.episodes[0].start_s == 0.0
    assert np.isclose(script.episodes[-1].end_s, 60.0)
    for prev, cur in zip(script.episodes, script.episodes[1:]):
        assert np.isclose(prev.end_s, cur.start_s)


def test_script_walks_connect_consecutive_anchors(scene_and_cloud):
    scene, _ = scene_and_cloud
    script = plan_script(scene, DEFAULT_ACTIONS, 60.0, seed=5)
    walk_id = DEFAULT_ACTIONS[0].id
    here = None
    for ep in script.episodes:
        if ep.action_id == walk_id:
            assert np.allclose(ep.move.from_xy, scene.anchors[here].xy)
            assert np.allclose(ep.move.to_xy, scene.anchors[ep.anchor_index].xy)
        here = ep.anchor_index


def test_affinity_rule_every_wash_at_sink():
    cfg = SceneConfig(anchor_counts={"sink": 1, "open_floor": 2})
    scene, _ = generate_scene(cfg, seed=9)
    actions = (DEFAULT_ACTIONS[0], DEFAULT_ACTIONS[1])  # walk + wash
    script = plan_script(scene, actions, 40.0, seed=2)
    sink_idx = next(i for i, a in enumerate(scene.anchors) if a.type.name == "sink")
    for ep in script.episodes:
        if ep.action_id == DEFAULT_ACTIONS[1].id:
            assert ep.anchor_index == sink_idx
    assert any(ep.action_id == DEFAULT_ACTIONS[1].id for ep in script.episodes)


def test_script_determinism(scene_and_cloud):
    scene, _ = scene_and_cloud
    a = plan_script(scene, DEFAULT_ACTIONS, 45.0, seed=8)
    b = plan_script(scene, DEFAULT_ACTIONS, 45.0, seed=8)
    assert a == b


def test_script_rejects_short_total(scene_and_cloud):
    scene, _ = scene_and_cloud
    with pytest.raises(ConfigError):
        plan_script(scene, DEFAULT_ACTIONS, 5.0, seed=1)


def test_script_rejects_unmatched_actions():
    cfg = SceneConfig(anchor_counts={"open_floor": 3})
    scene, _ = generate_scene(cfg, seed=4)
    actions = (DEFAULT_ACTIONS[0], DEFAULT_ACTIONS[1])  # wash has no sink here
    with pytest.raises(DataError):
        plan_script(scene, actions, 30.0, seed=1)


# ---------------------------------------------------------------------------
# trajectories


def stationary_script(scene, duration=20.0, anchor_type="sink", action=None):
    idx = next(i for i, a in enumerate(scene.anchors) if a.type.name == anchor_type)
    action = action or DEFAULT_ACTIONS[1]
    ep = Episode(action.id, 0.0, duration, idx)
    return ActionScript((ep,), duration, 1, RATE, 0.8, 0.5, DEFAULT_ACTIONS)


def test_all_stationary_script_holds_position(scene_and_cloud):
    scene, _ = scene_and_cloud
    script = stationary_script(scene)
    traj = simulate_trajectory(scene, script)
    anchor = scene.anchors[script.episodes[0].anchor_index].xy
    assert np.abs(traj.positions - anchor[None, :]).max() <= 0.03


def test_walk_arrival_time_close_to_kinematics(scene_and_cloud):
    scene, _ = scene_and_cloud
    script = plan_script(scene, DEFAULT_ACTIONS, 60.0, seed=3)
    walk = next(ep for ep in script.episodes if ep.move is not None)
    dist = np.hypot(walk.move.to_xy[0] - walk.move.from_xy[0],
                    walk.move.to_xy[1] - walk.move.from_xy[1])
    expected = dist / 0.8 + 0.8 / 0.5  # cruise time plus both ramps
    assert abs(walk.move.duration_s - expected) <= 0.2 + 3.0 / RATE


def test_speed_cap(scene_and_cloud):
    scene, _ = scene_and_cloud
    for seed in (1, 2, 3):
        script = plan_script(scene, DEFAULT_ACTIONS, 60.0, seed=seed)
        traj = simulate_trajectory(scene, script)
        assert np.linalg.norm(traj.velocities, axis=1).max() <= 1.6


def test_positions_stay_inside_scene(scene_and_cloud):
    scene, _ = scene_and_cloud
    script = plan_script(scene, DEFAULT_ACTIONS, 60.0, seed=12)
    traj = simulate_trajectory(scene, script)
    assert traj.positions.min() >= 0.0
    assert traj.positions.max() <= scene.extent_m


def test_heading_is_continuous(scene_and_cloud):
    scene, _ = scene_and_cloud
    script = plan_script(scene, DEFAULT_ACTIONS, 60.0, seed=13)
    traj = simulate_trajectory(scene, script)
    steps = np.abs(np.diff(traj.headings))
    assert steps.max() < 0.35  # smooth turning, no wrap jumps


def test_double_integration_reconstructs_trajectory(scene_and_cloud):
    # trapezoid rule on the clean world-frame acceleration must recover the
    # path within 5 cm over a full minute
    scene, _ = scene_and_cloud
    script = plan_script(scene, DEFAULT_ACTIONS, 60.0, seed=3)
    traj = simulate_trajectory(scene, script)
    stream = synthesize_imu(traj, None, NoiseModel(0, 0, 0), seed=5)
    dt = 1.0 / RATE
    c, s = np.cos(traj.headings), np.sin(traj.headings)
    ax, ay = stream.samples[:, 0], stream.samples[:, 1]
    aw = np.stack([c * ax - s * ay, s * ax + c * ay], axis=1)
    v = np.zeros_like(aw)
    p = np.zeros_like(aw)
    v[0] = traj.velocities[0]
    p[0] = traj.positions[0]
    for k in range(1, aw.shape[0]):
        v[k] = v[k - 1] + 0.5 * dt * (aw[k - 1] + aw[k])
        p[k] = p[k - 1] + 0.5 * dt * (v[k - 1] + v[k])
    assert np.linalg.norm(p - traj.positions, axis=1).max() <= 0.05


# ---------------------------------------------------------------------------
# IMU synthesis


def test_rest_case_gravity_only(scene_and_cloud):
    scene, _ = scene_and_cloud
    quiet = ActionClass(9, "rest", "sink", True, ())
    script = stationary_script(scene, action=quiet)
    script = ActionScript((Episode(9, 0.0, 12.0, script.episodes[0].anchor_index),),
                          12.0, 1, RATE, 0.8, 0.5, (quiet,))
    traj = simulate_trajectory(scene, script, jitter_amp_m=0.0)
    stream = synthesize_imu(traj, script, NoiseModel(0, 0, 0), seed=1)
    assert np.allclose(stream.samples[:, :3], [0.0, 0.0, GRAVITY], atol=1e-9)
    assert np.allclose(stream.samples[:, 3:], 0.0, atol=1e-9)


def test_circular_walk_centripetal_accel():
    from imuloc.motion import Trajectory
    r, v = 1.0, 0.5
    omega = v / r
    n = 20 * RATE
    t = np.arange(n) / RATE
    pos = np.stack([2 + r * np.cos(omega * t), 2 + r * np.sin(omega * t)], axis=1)
    vel = np.stack([-v * np.sin(omega * t), v * np.cos(omega * t)], axis=1)
    acc = np.stack([-v * omega * np.cos(omega * t), -v * omega * np.sin(omega * t)], axis=1)
    heading = np.unwrap(omega * t + np.pi / 2)
    traj = Trajectory(RATE, pos, heading, vel, acc, np.zeros(n, dtype=np.int64))
    stream = synthesize_imu(traj, None, NoiseModel(0, 0, 0), seed=1)
    lateral = np.abs(stream.samples[:, 1])
    assert np.allclose(lateral, v * v / r, atol=1e-6)
    assert np.allclose(stream.samples[:, 5], omega, atol=1e-6)


def test_action_signature_fft_peak(scene_and_cloud):
    scene, _ = scene_and_cloud
    script = stationary_script(scene, duration=12.0)  # wash at the sink, 2.1 Hz on ax
    traj = simulate_trajectory(scene, script, jitter_amp_m=0.0)
    stream = synthesize_imu(traj, script, NoiseModel(0, 0, 0), seed=3)
    windows = window_imu(stream)
    spectrum = np.abs(np.fft.rfft(windows[5][:, 0]))
    spectrum[0] = 0.0
    assert np.argmax(spectrum) == 2  # 2.1 Hz rounds into the 2 Hz bin


def test_noise_std_calibration(scene_and_cloud):
    scene, _ = scene_and_cloud
    quiet = ActionClass(0, "rest", "sink", True, ())
    idx = next(i for i, a in enumerate(scene.anchors) if a.type.name == "sink")
    script = ActionScript((Episode(0, 0.0, 60.0, idx),), 60.0, 1, RATE, 0.8, 0.5, (quiet,))
    traj = simulate_trajectory(scene, script, jitter_amp_m=0.0)
    stream = synthesize_imu(traj, script, NoiseModel(0.1, 0.0, 0.0), seed=7)
    resid = stream.samples[:, :3] - np.array([0.0, 0.0, GRAVITY])
    for axis in range(3):
        assert abs(resid[:, axis].std() - 0.1) <= 0.01


def test_imu_determinism(scene_and_cloud):
    scene, _ = scene_and_cloud
    script = plan_script(scene, DEFAULT_ACTIONS, 30.0, seed=4)
    traj = simulate_trajectory(scene, script)
    a = synthesize_imu(traj, script, NoiseModel(), seed=9)
    b = synthesize_imu(traj, script, NoiseModel(), seed=9)
    assert np.array_equal(a.samples, b.samples)


# ---------------------------------------------------------------------------
# windows and labels


def test_window_counts(scene_and_cloud):
    scene, _ = scene_and_cloud
    script = plan_script(scene, DEFAULT_ACTIONS, 10.0, seed=2)
    traj = simulate_trajectory(scene, script)
    stream = synthesize_imu(traj, script, NoiseModel(), seed=2)
    wins = window_imu(stream)
    assert wins.shape == (10, RATE, 6)


def test_window_truncates_partial_second(scene_and_cloud):
    from imuloc.motion import ImuStream
    samples = np.zeros((int(10.7 * RATE), 6))
    wins = window_imu(ImuStream(RATE, samples, 0))
    assert wins.shape[0] == 10


def test_window_concat_reproduces_stream(scene_and_cloud):
    scene, _ = scene_and_cloud
    script = plan_script(scene, DEFAULT_ACTIONS, 12.0, seed=6)
    traj = simulate_trajectory(scene, script)
    stream = synthesize_imu(traj, script, NoiseModel(), seed=6)
    wins = window_imu(stream)
    assert np.array_equal(wins.reshape(-1, 6), stream.samples[:wins.shape[0] * RATE])


def test_window_rejects_short_stream():
    from imuloc.motion import ImuStream
    with pytest.raises(DataError):
        window_imu(ImuStream(RATE, np.zeros((RATE - 1, 6)), 0))


def test_labels_stationary_wash(scene_and_cloud):
    scene, cloud = scene_and_cloud
    grid = partition(cloud, 20)
    script = stationary_script(scene, duration=20.0)
    traj = simulate_trajectory(scene, script)
    segments, actions = ground_truth_labels(traj, script, grid)
    assert segments.shape == (20,) and actions.shape == (20,)
    assert (actions == DEFAULT_ACTIONS[1].id).all()
    from imuloc.world import nearest_segment
    anchor = scene.anchors[script.episodes[0].anchor_index].xy
    assert (segments == nearest_segment(anchor, grid)).all()


def test_labels_use_mean_position_within_second(scene_and_cloud):
    scene, cloud = scene_and_cloud
    grid = partition(cloud, 20)
    script = plan_script(scene, DEFAULT_ACTIONS, 60.0, seed=3)
    traj = simulate_trajectory(scene, script)
    segments, _ = ground_truth_labels(traj, script, grid)
    means = mean_positions_per_second(traj)
    from imuloc.world import segments_of
    assert np.array_equal(segments, segments_of(means, grid))


def test_signature_spectra_pairwise_distinct():
    vectors = []
    freqs = np.arange(0, 26)  # integer Hz bins material to 1 s windows
    for action in DEFAULT_ACTIONS:
        vec = np.zeros((3, freqs.shape[0]))
        for comp in action.signature:
            vec[comp.axis, int(round(comp.freq_hz))] += comp.accel_amp ** 2
        vectors.append(vec.ravel())
    vectors = np.array(vectors)
    gaps = np.linalg.norm(vectors[:, None] - vectors[None, :], axis=2)
    np.fill_diagonal(gaps, np.inf)
    assert gaps.min() > 0.0


def test_make_action_set_sizes_and_frequencies():
    assert make_action_set(12) == DEFAULT_ACTIONS
    smaller = make_action_set(7)
    assert smaller == DEFAULT_ACTIONS[:7]
    assert {a.anchor_affinity for a in smaller if a.stationary} == \
        {"sink", "stove", "counter", "table", "cabinet", "open_floor"}
    bigger = make_action_set(20)
    assert len(bigger) == 20
    assert len({a.id for a in bigger}) == 20
    for a in bigger:
        for comp in a.signature:
            assert 0.3 <= comp.freq_hz <= 8.0
