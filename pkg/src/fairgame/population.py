"""Finite synthetic populations, keyframe drift and exact enumeration.

A population is a joint law over (score level x, group a, label y) with a
finite score grid, so every downstream quantity can be computed exactly by
enumerating the ``K * g`` cells. Sampling and enumeration share the same
parameters, which is what makes enumeration usable as a test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator, NamedTuple, Sequence

import numpy as np

from .errors import ValidationError

SUM_TOL = 1e-12


def _frozen(arr: Any, ndim: int, name: str) -> np.ndarray:
    out = np.array(arr, dtype=float)
    if out.ndim != ndim:
        raise ValidationError(f"{name} must be {ndim}-dimensional, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValidationError(f"{name} contains non-finite entries")
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class PopulationSpec:
    """Joint law of (x, a, y).

    ``score_dist[a, x] = P[x | a]`` and ``label_prob[x, a] = P[Y=1 | x, a]``.
    """

    group_names: tuple[str, ...]
    num_score_levels: int
    group_weights: np.ndarray
    score_dist: np.ndarray
    label_prob: np.ndarray

    def __post_init__(self) -> None:
        names = tuple(str(n) for n in self.group_names)
        object.__setattr__(self, "group_names", names)
        object.__setattr__(self, "group_weights", _frozen(self.group_weights, 1, "group_weights"))
        object.__setattr__(self, "score_dist", _frozen(self.score_dist, 2, "score_dist"))
        object.__setattr__(self, "label_prob", _frozen(self.label_prob, 2, "label_prob"))
        g, k = len(names), self.num_score_levels
        if g < 1:
            raise ValidationError("at least one group is required")
        if int(k) != k or k < 1:
            raise ValidationError(f"num_score_levels must be a positive integer, got {k!r}")
        object.__setattr__(self, "num_score_levels", int(k))
        if self.group_weights.shape != (g,):
            raise ValidationError(f"group_weights must have length {g}")
        if self.score_dist.shape != (g, k):
            raise ValidationError(f"score_dist must have shape ({g}, {k})")
        if self.label_prob.shape != (k, g):
            raise ValidationError(f"label_prob must have shape ({k}, {g})")
        if np.any(self.group_weights < 0) or abs(self.group_weights.sum() - 1.0) > SUM_TOL:
            raise ValidationError("group_weights must be nonnegative and sum to 1")
        if np.any(self.score_dist < 0) or np.any(np.abs(self.score_dist.sum(axis=1) - 1.0) > SUM_TOL):
            raise ValidationError("each score_dist row must be nonnegative and sum to 1")
        if np.any(self.label_prob < 0) or np.any(self.label_prob > 1):
            raise ValidationError("label_prob entries must lie in [0, 1]")

    @property
    def num_groups(self) -> int:
        return len(self.group_names)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PopulationSpec):
            return NotImplemented
        return (
            self.group_names == other.group_names
            and self.num_score_levels == other.num_score_levels
            and np.array_equal(self.group_weights, other.group_weights)
            and np.array_equal(self.score_dist, other.score_dist)
            and np.array_equal(self.label_prob, other.label_prob)
        )

    def joint_masses(self) -> np.ndarray:
        """Cell masses ``P(a, x, y)`` as a ``(g, K, 2)`` array."""
        px = self.group_weights[:, None] * self.score_dist
        q = self.label_prob.T
        return np.stack([px * (1.0 - q), px * q], axis=-1)

    def to_dict(self) -> dict:
        return {
            "group_names": list(self.group_names),
            "num_score_levels": self.num_score_levels,
            "group_weights": self.group_weights.tolist(),
            "score_dist": self.score_dist.tolist(),
            "label_prob": self.label_prob.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PopulationSpec":
        return cls(
            group_names=tuple(d["group_names"]),
            num_score_levels=d["num_score_levels"],
            group_weights=d["group_weights"],
            score_dist=d["score_dist"],
            label_prob=d["label_prob"],
        )


@dataclass(frozen=True)
class DriftSchedule:
    """Piecewise-linear path through keyframe populations."""

    keyframes: tuple[tuple[int, PopulationSpec], ...]

    def __post_init__(self) -> None:
        frames = tuple((int(t), s) for t, s in self.keyframes)
        object.__setattr__(self, "keyframes", frames)
        if not frames:
            raise ValidationError("a drift schedule needs at least one keyframe")
        if frames[0][0] != 0:
            raise ValidationError("the first keyframe must be at t = 0")
        times = [t for t, _ in frames]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError("keyframe times must be strictly increasing")
        first = frames[0][1]
        for _, s in frames[1:]:
            if s.num_groups != first.num_groups or s.num_score_levels != first.num_score_levels:
                raise ValidationError("all keyframes must share group count and score levels")

    @classmethod
    def static(cls, spec: PopulationSpec) -> "DriftSchedule":
        return cls(((0, spec),))

    def to_dict(self) -> dict:
        return {"keyframes": [{"t": t, "spec": s.to_dict()} for t, s in self.keyframes]}

    @classmethod
    def from_dict(cls, d: dict) -> "DriftSchedule":
        return cls(tuple((kf["t"], PopulationSpec.from_dict(kf["spec"])) for kf in d["keyframes"]))


class Sample(NamedTuple):
    x: int
    a: int
    y: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented sample of (x, a, y) triples."""

    x: np.ndarray
    a: np.ndarray
    y: np.ndarray
    drawn_at: int = 0
    num_groups: int = 0
    num_score_levels: int = 0
    weights: np.ndarray | None = field(default=None)

    def __len__(self) -> int:
        return len(self.x)

    @property
    def samples(self) -> list[Sample]:
        return [Sample(int(x), int(a), int(y)) for x, a, y in zip(self.x, self.a, self.y)]

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def sample_weights(self) -> np.ndarray:
        return np.ones(len(self.x)) if self.weights is None else self.weights


def spec_at(schedule: DriftSchedule, t: float) -> PopulationSpec:
    """Population in force at time ``t`` (linear between keyframes, flat after the last)."""
    if t < 0:
        raise ValidationError(f"t must be nonnegative, got {t}")
    frames = schedule.keyframes
    if t >= frames[-1][0]:
        return frames[-1][1]
    for (t0, s0), (t1, s1) in zip(frames, frames[1:]):
        if t0 <= t < t1:
            if t == t0:
                return s0
            lam = (t - t0) / (t1 - t0)
            return _mix(s0, s1, lam)
    raise AssertionError("unreachable")


def _mix(s0: PopulationSpec, s1: PopulationSpec, lam: float) -> PopulationSpec:
    def lerp(u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return (1.0 - lam) * u + lam * v

    w = lerp(s0.group_weights, s1.group_weights)
    sd = lerp(s0.score_dist, s1.score_dist)
    # renormalise away rounding so validation holds at 1e-12
    w = w / w.sum()
    sd = sd / sd.sum(axis=1, keepdims=True)
    return PopulationSpec(
        group_names=s0.group_names,
        num_score_levels=s0.num_score_levels,
        group_weights=w,
        score_dist=sd,
        label_prob=np.clip(lerp(s0.label_prob, s1.label_prob), 0.0, 1.0),
    )


def _draw_scores(spec: PopulationSpec, a: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(spec.score_dist, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(len(a))
    x = (u[:, None] >= cdf[a]).sum(axis=1)
    return np.minimum(x, spec.num_score_levels - 1)


def _draw_labels(spec: PopulationSpec, x: np.ndarray, a: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return (rng.random(len(x)) < spec.label_prob[x, a]).astype(np.int64)


def draw(spec: PopulationSpec, n: int, rng: np.random.Generator, t: int = 0) -> Dataset:
    """Draw ``n`` i.i.d. samples from ``spec``."""
    if n < 1:
        raise ValidationError(f"n must be at least 1, got {n}")
    a = rng.choice(spec.num_groups, size=n, p=spec.group_weights)
    x = _draw_scores(spec, a, rng)
    y = _draw_labels(spec, x, a, rng)
    return Dataset(x, a, y, drawn_at=t, num_groups=spec.num_groups, num_score_levels=spec.num_score_levels)


def draw_group(spec: PopulationSpec, group: int, n: int, rng: np.random.Generator, t: int = 0) -> Dataset:
    """Draw ``n`` samples from the conditional law given ``A = group``."""
    if not 0 <= group < spec.num_groups:
        raise ValidationError(f"group {group} out of range")
    a = np.full(n, group, dtype=np.int64)
    x = _draw_scores(spec, a, rng)
    y = _draw_labels(spec, x, a, rng)
    return Dataset(x, a, y, drawn_at=t, num_groups=spec.num_groups, num_score_levels=spec.num_score_levels)


class Cell(NamedTuple):
    x: int
    a: int
    joint_mass: float
    label_prob: float


def enumerate_cells(spec: PopulationSpec) -> list[Cell]:
    """One entry per (x, a) cell with its joint mass ``w_a * P[x|a]`` and ``q(x, a)``."""
    return [
        Cell(x, a, float(spec.group_weights[a] * spec.score_dist[a, x]), float(spec.label_prob[x, a]))
        for a in range(spec.num_groups)
        for x in range(spec.num_score_levels)
    ]


def concat(datasets: Sequence[Dataset]) -> Dataset:
    first = datasets[0]
    weights = None
    if any(d.weights is not None for d in datasets):
        weights = np.concatenate([d.sample_weights() for d in datasets])
    return Dataset(
        np.concatenate([d.x for d in datasets]),
        np.concatenate([d.a for d in datasets]),
        np.concatenate([d.y for d in datasets]),
        drawn_at=first.drawn_at,
        num_groups=first.num_groups,
        num_score_levels=first.num_score_levels,
        weights=weights,
    )
