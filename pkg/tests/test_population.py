import json

import numpy as np
import pytest
from scipy import stats

from builders import random_spec, uniform_spec
from fairgame.errors import ValidationError
from fairgame.population import (
    DriftSchedule,
    PopulationSpec,
    draw,
    draw_group,
    enumerate_cells,
    spec_at,
)


def two_keyframes():
    s0 = uniform_spec(2, 3, weights=[0.2, 0.8])
    s1 = PopulationSpec(
        ("g0", "g1"), 3, [0.4, 0.6], [[0.5, 0.25, 0.25], [0.1, 0.1, 0.8]], np.full((3, 2), 0.9)
    )
    return DriftSchedule(((0, s0), (10, s1)))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(group_weights=[0.5, 0.6]),
        dict(group_weights=[-0.1, 1.1]),
        dict(score_dist=[[0.5, 0.5, 0.1], [1, 0, 0]]),
        dict(label_prob=np.full((3, 2), 1.2)),
        dict(label_prob=np.full((2, 3), 0.5)),
    ],
)
def test_spec_validation_rejects(kwargs):
    base = dict(
        group_names=("a", "b"),
        num_score_levels=3,
        group_weights=[0.5, 0.5],
        score_dist=np.full((2, 3), 1 / 3),
        label_prob=np.full((3, 2), 0.5),
    )
    base.update(kwargs)
    with pytest.raises(ValidationError):
        PopulationSpec(**base)


def test_schedule_validation():
    s = uniform_spec()
    with pytest.raises(ValidationError):
        DriftSchedule(((1, s),))
    with pytest.raises(ValidationError):
        DriftSchedule(((0, s), (0, s)))
    with pytest.raises(ValidationError):
        DriftSchedule(((0, s), (5, uniform_spec(3))))


def test_single_keyframe_extrapolates():
    s = random_spec(np.random.default_rng(1))
    assert spec_at(DriftSchedule.static(s), 17) == s


def test_midpoint_interpolation():
    mid = spec_at(two_keyframes(), 5)
    np.testing.assert_allclose(mid.group_weights, [0.3, 0.7], atol=1e-15)


def test_keyframes_exact_and_last_held():
    sched = two_keyframes()
    assert spec_at(sched, 0) == sched.keyframes[0][1]
    assert spec_at(sched, 10) == sched.keyframes[1][1]
    assert spec_at(sched, 99) == sched.keyframes[1][1]


def test_sweep_stays_valid_and_continuous():
    rng = np.random.default_rng(3)
    sched = DriftSchedule(((0, random_spec(rng, 3, 4)), (40, random_spec(rng, 3, 4)), (70, random_spec(rng, 3, 4))))
    prev = None
    for t in range(101):
        s = spec_at(sched, t)  # construction validates
        if prev is not None:
            for (t0, a), (t1, b) in zip(sched.keyframes, sched.keyframes[1:]):
                if t0 < t <= t1:
                    step = np.abs(b.label_prob - a.label_prob) / (t1 - t0)
                    assert np.all(np.abs(s.label_prob - prev.label_prob) <= step + 1e-12)
        prev = s


def test_negative_time_rejected():
    with pytest.raises(ValidationError):
        spec_at(DriftSchedule.static(uniform_spec()), -1)


def test_degenerate_draw():
    s = PopulationSpec(("only",), 1, [1.0], [[1.0]], [[1.0]])
    data = draw(s, 50, np.random.default_rng(0))
    assert {tuple(smp) for smp in data.samples} == {(0, 0, 1)}


def test_draw_is_deterministic():
    s = random_spec(np.random.default_rng(2), 3, 6)
    d1 = draw(s, 1000, np.random.default_rng(42))
    d2 = draw(s, 1000, np.random.default_rng(42))
    assert d1.x.tobytes() == d2.x.tobytes()
    assert d1.a.tobytes() == d2.a.tobytes()
    assert d1.y.tobytes() == d2.y.tobytes()


def test_group_frequencies_law_of_large_numbers():
    s = uniform_spec(2, 4, weights=[0.3, 0.7])
    data = draw(s, 100_000, np.random.default_rng(7))
    freq = np.bincount(data.a, minlength=2) / len(data)
    np.testing.assert_allclose(freq, [0.3, 0.7], atol=0.01)


def test_chi_square_smoke_across_seeds():
    s = random_spec(np.random.default_rng(5), 3, 4, floor=0.1)
    for seed in (11, 12):
        data = draw(s, 100_000, np.random.default_rng(seed))
        observed = np.bincount(data.a, minlength=3)
        p = stats.chisquare(observed, s.group_weights * len(data)).pvalue
        assert p > 1e-6


def test_draw_group_conditional():
    s = random_spec(np.random.default_rng(8), 2, 3, floor=0.2)
    data = draw_group(s, 1, 50_000, np.random.default_rng(0))
    assert np.all(data.a == 1)
    np.testing.assert_allclose(np.bincount(data.x, minlength=3) / len(data), s.score_dist[1], atol=0.01)


def test_enumerate_uniform():
    cells = enumerate_cells(uniform_spec(2, 2))
    assert len(cells) == 4
    assert all(c.joint_mass == 0.25 for c in cells)


@pytest.mark.parametrize("seed", range(5))
def test_enumerate_normalised_and_conditionals(seed):
    s = random_spec(np.random.default_rng(seed), 3, 5)
    cells = enumerate_cells(s)
    assert abs(sum(c.joint_mass for c in cells) - 1.0) <= 1e-12
    for a in range(3):
        row = np.array([c.joint_mass for c in cells if c.a == a])
        np.testing.assert_allclose(row / row.sum(), s.score_dist[a], atol=1e-12)
    for c in cells:
        assert c.label_prob == s.label_prob[c.x, c.a]


def test_spec_and_schedule_json_round_trip():
    sched = two_keyframes()
    again = DriftSchedule.from_dict(json.loads(json.dumps(sched.to_dict())))
    assert again == sched
