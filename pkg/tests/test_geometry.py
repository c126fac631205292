import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdmp.geometry import (Box, Environment, OccupancyDataset, Query, Sphere, env_from_dict,
                           generate_dataset, load_env, make_benchmark_env, point_in_collision,
                           resolve_env, save_env)


@pytest.fixture
def unit_box_env():
    return Environment("one-box", [-1, -1], [3, 3], [Box([0, 0], [1, 1])])


def test_point_inside_box(unit_box_env):
    assert point_in_collision(unit_box_env, [0.5, 0.5])


def test_point_outside(unit_box_env):
    assert not point_in_collision(unit_box_env, [2, 2])


def test_boundary_is_occupied(unit_box_env):
    assert point_in_collision(unit_box_env, [1.0, 1.0])
    assert point_in_collision(unit_box_env, [0.0, 0.3])


def test_sphere_and_margin():
    env = Environment("disc", [0, 0], [4, 4], [Sphere([2, 2], 1.0)])
    assert point_in_collision(env, [3.0, 2.0])
    assert not point_in_collision(env, [3.05, 2.0])
    assert point_in_collision(env, [3.05, 2.0], margin=0.1)


def test_non_finite_point_rejected(unit_box_env):
    with pytest.raises(ValueError):
        point_in_collision(unit_box_env, [np.nan, 0.0])


def test_invalid_obstacles():
    with pytest.raises(ValueError):
        Box([1, 0], [0, 1])
    with pytest.raises(ValueError):
        Sphere([0, 0], 0.0)
    with pytest.raises(ValueError):
        Environment("outside", [0, 0], [1, 1], [Box([2, 2], [3, 3])])
    with pytest.raises(ValueError):
        Environment("full", [0, 0], [1, 1], [Box([-1, -1], [2, 2])])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_oracle_invariant_under_obstacle_permutation(seed):
    env = make_benchmark_env("clutter2d")
    rng = np.random.default_rng(seed)
    shuffled = Environment("perm", env.lo, env.hi, [env.obstacles[i] for i in rng.permutation(len(env.obstacles))])
    pts = rng.uniform(env.lo, env.hi, size=(200, 2))
    assert np.array_equal(env.occupied(pts), shuffled.occupied(pts))


def test_dataset_positive_fraction_matches_area():
    # box covers exactly a quarter of the bounds
    env = Environment("quarter", [0, 0], [1, 1], [Box([0, 0], [0.5, 0.5])])
    ds = generate_dataset(env, 10000, seed=7)
    assert 0.22 <= ds.labels.mean() <= 0.28


def test_dataset_single_point_and_determinism(unit_box_env):
    assert len(generate_dataset(unit_box_env, 1, 3)) == 1
    a = generate_dataset(unit_box_env, 500, 11)
    b = generate_dataset(unit_box_env, 500, 11)
    assert np.array_equal(a.points, b.points) and np.array_equal(a.labels, b.labels)
    with pytest.raises(ValueError):
        generate_dataset(unit_box_env, 0, 1)


def test_dataset_labels_match_oracle(unit_box_env):
    ds = generate_dataset(unit_box_env, 300, 5)
    for p, y in zip(ds.points, ds.labels):
        assert bool(y) == point_in_collision(unit_box_env, p)


def test_dataset_csv_roundtrip(tmp_path, unit_box_env):
    ds = generate_dataset(unit_box_env, 50, 2)
    path = tmp_path / "ds.csv"
    ds.to_csv(path)
    assert path.read_text().splitlines()[0] == "x1,x2,label"
    back = OccupancyDataset.from_csv(path)
    assert np.array_equal(back.points, ds.points)
    assert np.array_equal(back.labels, ds.labels)


def test_divider_gap_is_narrow_and_unique():
    env = make_benchmark_env("divider2d")
    height = env.extent[1]
    ys = np.linspace(env.lo[1], env.hi[1], 20001)
    wall = env.obstacles[0]
    x = 0.5 * (wall.lo[0] + wall.hi[0])
    # scan the wall's centre line: exactly one free run, at most 10% of the height
    col = env.occupied(np.stack([np.full_like(ys, x), ys], axis=1))
    free_runs = np.diff(np.concatenate([[0], (~col).astype(int), [0]]))
    starts, ends = np.nonzero(free_runs == 1)[0], np.nonzero(free_runs == -1)[0]
    assert len(starts) == 1
    assert (ys[ends[0] - 1] - ys[starts[0]]) <= 0.1 * height


def test_clutter_free_fraction_monte_carlo():
    env = make_benchmark_env("clutter2d")
    assert len(env.obstacles) >= 8
    pts = np.random.default_rng(0).uniform(env.lo, env.hi, size=(100_000, 2))
    assert 1.0 - env.occupied(pts).mean() >= 0.40


@pytest.mark.parametrize("name", ["divider2d", "shelves2d", "clutter2d"])
def test_benchmark_queries_are_free(name):
    env = make_benchmark_env(name)
    assert env.queries
    for q in env.queries:
        assert not point_in_collision(env, q.start)
        assert not point_in_collision(env, q.goal)


def test_unknown_benchmark():
    with pytest.raises(ValueError):
        make_benchmark_env("foo")
    with pytest.raises(ValueError):
        resolve_env("foo")


def test_env_file_roundtrip(tmp_path):
    env = make_benchmark_env("shelves2d")
    path = tmp_path / "env.json"
    save_env(env, path)
    doc = json.loads(path.read_text())
    assert set(doc) >= {"name", "bounds", "obstacles", "queries"}
    assert {o["type"] for o in doc["obstacles"]} <= {"box", "sphere"}
    back = load_env(path)
    pts = np.random.default_rng(1).uniform(0, 1, size=(1000, 2))
    assert np.array_equal(back.occupied(pts), env.occupied(pts))
    assert len(back.queries) == len(env.queries)


def test_env_from_dict_with_manipulator():
    env = env_from_dict({
        "name": "arm", "bounds": {"min": [-1, -1], "max": [1, 1]},
        "obstacles": [{"type": "sphere", "center": [0.5, 0.5], "radius": 0.1}],
        "queries": [{"start": [0, 0], "goal": [1, 0]}],
        "manipulator": {"links": [0.4, 0.3], "base": [0, 0], "limits": [[-3, 3], [-3, 3]],
                        "body_points": [[0, 0.5], [1, 0.5], [1, 1.0]]},
    })
    assert env.robot["links"] == [0.4, 0.3]
    assert isinstance(env.queries[0], Query)
