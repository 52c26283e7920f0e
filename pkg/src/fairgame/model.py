"""Classifiers under audit: per-group threshold policies and a logistic model.

The logistic model is trained by full-batch gradient descent on the mean
cross-entropy. Training works on the aggregated (a, x, y) count table rather
than on individual rows, so duplicating every sample leaves the trajectory
bit-for-bit unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import MissingGroup, ValidationError
from .metrics import JointTable
from .population import Dataset, PopulationSpec


@dataclass(frozen=True)
class ThresholdPolicy:
    """Accept ``x`` in group ``a`` iff ``x >= thresholds[a]``; ``K`` rejects everyone."""

    thresholds: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "thresholds", tuple(int(t) for t in self.thresholds))
        if any(t < 0 for t in self.thresholds):
            raise ValidationError("thresholds must be nonnegative")

    def validate(self, num_groups: int, num_score_levels: int) -> None:
        if len(self.thresholds) != num_groups:
            raise ValidationError(f"expected {num_groups} thresholds, got {len(self.thresholds)}")
        if any(t > num_score_levels for t in self.thresholds):
            raise ValidationError(f"thresholds must lie in [0, {num_score_levels}]")


@dataclass(frozen=True)
class LogisticParams:
    weight_score: float
    weights_group: tuple[float, ...]
    bias: float
    score_scale: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights_group", tuple(float(w) for w in self.weights_group))
        vals = (self.weight_score, self.bias, self.score_scale, *self.weights_group)
        if not all(np.isfinite(v) for v in vals):
            raise ValidationError("logistic parameters must be finite")
        if self.score_scale <= 0:
            raise ValidationError("score_scale must be positive")

    def as_vector(self) -> np.ndarray:
        return np.array([self.weight_score, *self.weights_group, self.bias])

    @classmethod
    def from_vector(cls, v: np.ndarray, score_scale: float) -> "LogisticParams":
        return cls(float(v[0]), tuple(float(w) for w in v[1:-1]), float(v[-1]), score_scale)

    def logits(self, x, a) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        wg = np.asarray(self.weights_group)
        return self.weight_score * (x / self.score_scale) + wg[np.asarray(a)] + self.bias


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


@dataclass(frozen=True)
class Classifier:
    model: Union[ThresholdPolicy, LogisticParams]
    cutoff: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.cutoff < 1.0:
            raise ValidationError("cutoff must lie in (0, 1)")

    @property
    def num_groups(self) -> int:
        if isinstance(self.model, ThresholdPolicy):
            return len(self.model.thresholds)
        return len(self.model.weights_group)

    def predict(self, x, a):
        """Binary prediction(s); accepts scalars or equal-length arrays."""
        scalar = np.ndim(x) == 0 and np.ndim(a) == 0
        x = np.asarray(x)
        a = np.asarray(a)
        if isinstance(self.model, ThresholdPolicy):
            out = x >= np.asarray(self.model.thresholds)[a]
        else:
            # ties at the cutoff accept
            out = sigmoid(self.model.logits(x, a)) >= self.cutoff
        out = out.astype(np.int64)
        return int(out) if scalar else out


def predict(c: Classifier, x, a):
    return c.predict(x, a)


def acceptance_grid(c: Classifier, num_score_levels: int) -> np.ndarray:
    """``(g, K)`` array of predictions on every (a, x) cell."""
    g = c.num_groups
    a, x = np.meshgrid(np.arange(g), np.arange(num_score_levels), indexing="ij")
    return c.predict(x.ravel(), a.ravel()).reshape(g, num_score_levels)


def to_threshold_policy(c: Classifier, num_score_levels: int) -> ThresholdPolicy | None:
    """Equivalent threshold policy on the score grid, or None if acceptance is not a suffix."""
    if isinstance(c.model, ThresholdPolicy):
        return c.model
    grid = acceptance_grid(c, num_score_levels)
    taus = []
    for row in grid:
        tau = num_score_levels - int(row.sum())
        if not np.all(row[tau:] == 1):
            return None
        taus.append(tau)
    return ThresholdPolicy(tuple(taus))


def prediction_distribution(c: Classifier, spec: PopulationSpec) -> JointTable:
    """Exact law of (a, y, y_hat) induced by ``c`` on ``spec``."""
    if c.num_groups != spec.num_groups:
        raise ValidationError("classifier and spec disagree on the number of groups")
    cells = spec.joint_masses()  # (g, K, 2)
    accept = acceptance_grid(c, spec.num_score_levels).astype(float)
    masses = np.empty((spec.num_groups, 2, 2))
    masses[:, :, 1] = np.einsum("gk,gky->gy", accept, cells)
    masses[:, :, 0] = np.einsum("gk,gky->gy", 1.0 - accept, cells)
    return JointTable(masses)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.5
    epochs: int = 500
    l2_penalty: float = 0.0

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise ValidationError("epochs must be a nonnegative integer")
        if self.l2_penalty < 0:
            raise ValidationError("l2_penalty must be nonnegative")


def _cell_fractions(data: Dataset) -> np.ndarray:
    """Weight fractions per (a, x, y), normalised to sum to one."""
    g, k = data.num_groups, data.num_score_levels
    counts = np.zeros((g, k, 2))
    np.add.at(counts, (data.a, data.x, data.y), data.sample_weights())
    return counts / counts.sum()


def _score_scale(num_score_levels: int) -> float:
    return float(max(num_score_levels - 1, 1))


def _loss_and_grad(v: np.ndarray, frac: np.ndarray, scale: float, l2: float) -> tuple[float, np.ndarray]:
    g, k, _ = frac.shape
    xs = np.arange(k) / scale
    z = v[0] * xs[None, :] + v[1:-1][:, None] + v[-1]
    n_tot = frac.sum(axis=2)
    n_pos = frac[:, :, 1]
    loss = float(np.sum(n_tot * np.logaddexp(0.0, z) - n_pos * z))
    r = n_tot * sigmoid(z) - n_pos
    grad = np.empty_like(v)
    grad[0] = np.sum(r * xs[None, :])
    grad[1:-1] = r.sum(axis=1)
    grad[-1] = r.sum()
    w = v[:-1]
    loss += 0.5 * l2 * float(w @ w)
    grad[:-1] += l2 * w
    return loss, grad


def training_loss(params: LogisticParams, data: Dataset, l2_penalty: float = 0.0) -> float:
    """Mean (weighted) cross-entropy plus ``0.5 * l2 * |w|^2``; the bias is not penalised."""
    return _loss_and_grad(params.as_vector(), _cell_fractions(data), params.score_scale, l2_penalty)[0]


def loss_gradient(params: LogisticParams, data: Dataset, l2_penalty: float = 0.0) -> np.ndarray:
    """Gradient of :func:`training_loss` ordered as ``[score, *groups, bias]``."""
    return _loss_and_grad(params.as_vector(), _cell_fractions(data), params.score_scale, l2_penalty)[1]


def train_erm(data: Dataset, cfg: TrainConfig, rng: np.random.Generator) -> LogisticParams:
    """Fit a logistic model by full-batch gradient descent.

    Features are the normalised score ``x / (K - 1)`` and a one-hot group
    indicator. ``rng`` is used only for the initial parameters.
    """
    if len(data) == 0:
        raise ValidationError("cannot train on an empty dataset")
    present = np.bincount(data.a, minlength=data.num_groups)
    missing = [i for i in range(data.num_groups) if present[i] == 0]
    if missing:
        raise MissingGroup(f"no training samples for group(s) {missing}")
    frac = _cell_fractions(data)
    scale = _score_scale(data.num_score_levels)
    v = rng.uniform(-0.01, 0.01, size=data.num_groups + 2)
    for _ in range(int(cfg.epochs)):
        _, grad = _loss_and_grad(v, frac, scale, cfg.l2_penalty)
        v = v - cfg.learning_rate * grad
    return LogisticParams.from_vector(v, scale)


def classifier_to_dict(c: Classifier) -> dict:
    if isinstance(c.model, ThresholdPolicy):
        return {"kind": "threshold", "thresholds": list(c.model.thresholds), "cutoff": c.cutoff}
    m = c.model
    return {
        "kind": "logistic",
        "weight_score": m.weight_score,
        "weights_group": list(m.weights_group),
        "bias": m.bias,
        "score_scale": m.score_scale,
        "cutoff": c.cutoff,
    }


def classifier_from_dict(d: dict) -> Classifier:
    kind = d.get("kind")
    cutoff = float(d.get("cutoff", 0.5))
    if kind == "threshold":
        return Classifier(ThresholdPolicy(tuple(d["thresholds"])), cutoff)
    if kind == "logistic":
        params = LogisticParams(
            float(d["weight_score"]),
            tuple(d["weights_group"]),
            float(d["bias"]),
            float(d.get("score_scale", 1.0)),
        )
        return Classifier(params, cutoff)
    raise ValidationError(f"unknown classifier kind {kind!r}")
