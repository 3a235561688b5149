import io
import math

import numpy as np
import pytest

from doml.synth import (
    A_START,
    FEATURE_DIM,
    TaskFamily,
    boundary_h,
    generate_family,
    iter_dataset,
    label_point,
    label_points,
    lift_features,
    read_dataset,
    rotate,
    sample_arrays,
    sample_points,
    sample_stream,
    write_dataset,
)


def test_family_start_and_degenerate_cases():
    one = generate_family(1, 0.7, 3)
    assert one.k == 1 and one.tasks[0].a == A_START and one.tasks[0].theta == 0.0
    flat = generate_family(64, 0.0, 5)
    assert all(t == flat.tasks[0] for t in flat.tasks)
    main = generate_family(64, 0.3, 0)
    assert main.k == 64 and main.tasks[0].a == (0.0, 1.0, 1.0, 1.0, 1.0)
    assert len(set(main.tasks)) == 64


def test_family_rejects_bad_args():
    with pytest.raises(ValueError):
        generate_family(0, 0.3, 0)
    with pytest.raises(ValueError):
        generate_family(4, -0.1, 0)


def test_family_is_deterministic_and_json_roundtrips():
    a, b = generate_family(16, 0.3, 42), generate_family(16, 0.3, 42)
    assert a == b
    assert TaskFamily.from_json(a.to_json()) == a
    assert generate_family(16, 0.3, 43) != a


def test_walk_marginals_over_seeds():
    """After s steps each coefficient has moved by N(0, s sigma^2); theta by N(0, s (sigma pi/4)^2)."""
    k, sigma = 5, 0.3
    ends = [generate_family(k, sigma, s).tasks[-1] for s in range(1000)]
    last = np.array([[*t.a, t.theta] for t in ends])
    moved = last - np.array([*A_START, 0.0])
    expected = sigma * math.sqrt(k - 1) * np.array([1, 1, 1, 1, 1, math.pi / 4])
    assert np.all(np.abs(moved.mean(axis=0)) < 4 * expected / math.sqrt(1000))
    assert np.allclose(moved.std(axis=0), expected, rtol=0.1)


def test_boundary_examples():
    assert boundary_h(0.0, A_START) == pytest.approx(2.0)
    xs = np.linspace(-3, 3, 11)
    assert not np.any(boundary_h(xs, (0, 0, 0, 0, 0)))
    a = (0.7, -1.2, 0.4, 2.5, -0.3)
    assert boundary_h(0.7, a) == pytest.approx(2.5 - 0.3)


def test_rotate_examples():
    x, y = rotate((1.0, 0.0), math.pi / 2)
    assert x == pytest.approx(0.0, abs=1e-15) and y == pytest.approx(1.0)
    assert rotate((0.3, -2.0), 0.0) == (0.3, -2.0)
    assert rotate((1.0, 1.0), math.pi) == pytest.approx((-1.0, -1.0))


def test_label_examples():
    task = generate_family(1, 0.3, 0).tasks[0]
    assert label_point((0.0, 3.0), task) == 1
    assert label_point((0.0, 0.0), task) == -1
    assert label_point((0.0, 2.0), task) == 1


def test_vectorised_labels_match_scalar():
    fam = generate_family(8, 0.5, 9)
    pts = sample_points(9, 3, 500)
    for t in fam.tasks:
        assert label_points(pts, t).tolist() == [label_point(tuple(p), t) for p in pts]


def test_lift_examples():
    assert lift_features((2.0, -1.0)).tolist() == [2, -1, -2, 4, 1, 8, -1, 2, -4]
    assert not lift_features((0.0, 0.0)).any()
    assert lift_features((1.0, 1.0)).tolist() == [1.0] * FEATURE_DIM
    assert lift_features(np.zeros((4, 2))).shape == (4, FEATURE_DIM)


def test_sample_stream_basics():
    fam = generate_family(4, 0.3, 1)
    assert sample_stream(fam, 0, 0, 1) == []
    a, b = sample_stream(fam, 2, 50, 1), sample_stream(fam, 2, 50, 1)
    assert all(s.task == 2 and np.array_equal(s.x, t.x) and s.y == t.y for s, t in zip(a, b))
    x, _ = sample_arrays(fam, 2, 50, 1)
    assert np.abs(x[:, :2]).max() <= 3.0
    # prefix stability: a longer draw starts with the shorter one
    assert np.array_equal(sample_arrays(fam, 2, 80, 1)[0][:50], x)
    with pytest.raises(IndexError):
        sample_arrays(fam, 4, 1, 1)


def test_label_balance_against_monte_carlo_oracle():
    fam = generate_family(1, 0.3, 0)
    _, y = sample_arrays(fam, 0, 10_000, 0)
    assert set(y.tolist()) == {-1, 1}
    # independent oracle: 1e6 uniform points, boundary evaluated directly
    pts = np.random.default_rng(0).uniform(-3, 3, size=(1_000_000, 2))
    x1, x2 = pts[:, 0], pts[:, 1]
    h = np.sin(x1) + np.sin(2 * x1) + np.cos(x1) + np.cos(2 * x1)
    oracle = np.mean(x2 >= h)
    assert abs(np.mean(y == 1) - oracle) <= 0.02


def test_dataset_roundtrip(tmp_path):
    fam = generate_family(3, 0.3, 2)
    stream = [s for t in range(3) for s in sample_stream(fam, t, 5, 2)]
    path = tmp_path / "d.ndjson"
    with open(path, "w") as fh:
        write_dataset(stream, fh, k=3, sigma=0.3, seed=2, count=15)
    header, back = read_dataset(path)
    assert header == {"k": 3, "sigma": 0.3, "seed": 2, "count": 15}
    assert all(a.task == b.task and a.y == b.y and np.array_equal(a.x, b.x) for a, b in zip(stream, back))
    with open(path) as fh:
        assert len(list(iter_dataset(fh))) == 15
    with pytest.raises(ValueError):
        write_dataset(stream, io.StringIO(), k=3, sigma=0.3, seed=2, count=14)
