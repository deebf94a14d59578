"""Synthetic toy data, labeled/unlabeled/test splits and Gaussian augmentation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .mixture import BETA, MixtureModel

WEAK = "weak"
STRONG = "strong"


@dataclass(frozen=True)
class AugmentSpec:
    weak_sigma: float = 0.05
    strong_sigma: float = 0.15

    def __post_init__(self):
        if self.weak_sigma < 0 or self.strong_sigma < 0:
            raise ValueError("augmentation sigmas must be nonnegative")
        if self.strong_sigma < self.weak_sigma:
            raise ValueError("strong_sigma must be >= weak_sigma")

    def sigma(self, strength: str) -> float:
        if strength == WEAK:
            return self.weak_sigma
        if strength == STRONG:
            return self.strong_sigma
        raise ValueError(f"unknown augmentation strength {strength!r}")


@dataclass(frozen=True)
class HiddenTruth:
    """True classes of the unlabeled points.

    Kept apart from :class:`Dataset` so that nothing on the training path can
    read it; only evaluation code receives it.
    """

    classes: np.ndarray

    def correct(self, indices, predicted) -> np.ndarray:
        return self.classes[np.asarray(indices)] == np.asarray(predicted)


@dataclass(frozen=True)
class Dataset:
    labeled_x: np.ndarray
    labeled_y: np.ndarray
    unlabeled_x: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    n_classes: int

    @property
    def dim(self) -> int:
        return self.labeled_x.shape[1]


def moon_point(theta: float, cls: int) -> tuple[float, float]:
    """Noise-free point at angle ``theta`` on the arc of class ``cls``."""
    if cls == 0:
        return math.cos(theta), math.sin(theta)
    return 1.0 - math.cos(theta), 0.5 - math.sin(theta)


def make_two_moons(n: int = 1000, noise_sigma: float = 0.1, seed=0):
    """Two interleaving half circles. Returns ``(points, classes)``.

    Angles are evenly spaced on [0, pi] per class; the order of points is
    shuffled so that downstream splits do not depend on arc position.
    """
    if n < 2:
        raise ValueError("need at least two points")
    rng = np.random.default_rng(seed)
    n0 = n // 2
    n1 = n - n0
    t0 = np.linspace(0.0, math.pi, n0)
    t1 = np.linspace(0.0, math.pi, n1)
    x = np.concatenate([
        np.column_stack([np.cos(t0), np.sin(t0)]),
        np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)]),
    ])
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    if noise_sigma > 0:
        x = x + rng.normal(0.0, noise_sigma, size=x.shape)
    order = rng.permutation(n)
    return x[order], y[order]


def split_labeled(points, classes, per_class: int, seed=0, test_fraction: float = 0.2,
                  n_classes: int | None = None):
    """Stratified test hold-out, then ``per_class`` labeled points per class.

    Returns ``(dataset, hidden_truth)``.
    """
    points = np.asarray(points, dtype=np.float64)
    classes = np.asarray(classes, dtype=np.int64)
    if n_classes is None:
        n_classes = int(classes.max()) + 1
    if per_class < 1:
        raise ValueError("per_class must be at least 1")
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError("test_fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    test_idx, lab_idx, unl_idx = [], [], []
    for c in range(n_classes):
        members = rng.permutation(np.flatnonzero(classes == c))
        n_test = int(round(test_fraction * members.size))
        rest = members[n_test:]
        if per_class > rest.size:
            raise ValueError(f"class {c} has {rest.size} training points, cannot label {per_class}")
        test_idx.append(members[:n_test])
        lab_idx.append(rest[:per_class])
        unl_idx.append(rest[per_class:])
    test_idx = np.sort(np.concatenate(test_idx))
    lab_idx = np.sort(np.concatenate(lab_idx))
    unl_idx = np.sort(np.concatenate(unl_idx))
    ds = Dataset(
        labeled_x=points[lab_idx], labeled_y=classes[lab_idx],
        unlabeled_x=points[unl_idx],
        test_x=points[test_idx], test_y=classes[test_idx],
        n_classes=n_classes,
    )
    return ds, HiddenTruth(classes[unl_idx])


def augment(points, spec: AugmentSpec, strength: str, rng: np.random.Generator):
    """Isotropic Gaussian jitter with the sigma selected by ``strength``."""
    points = np.asarray(points, dtype=np.float64)
    sigma = spec.sigma(strength)
    if sigma == 0.0:
        return points.copy()
    return points + rng.normal(0.0, sigma, size=points.shape)


def sample_beta_mixture(model: MixtureModel, n: int, seed=0):
    """Draw ``n`` scores from a Beta mixture. Returns ``(scores, origins)``.

    ``origins[i]`` is the 0-based index of the component that produced
    score ``i``.
    """
    if model.family != BETA:
        raise ValueError("sample_beta_mixture needs a Beta mixture")
    rng = np.random.default_rng(seed)
    origins = (rng.random(n) >= model.weights[0]).astype(np.int64)
    alphas = np.array([c.alpha for c in model.components])[origins]
    betas = np.array([c.beta for c in model.components])[origins]
    return rng.beta(alphas, betas), origins


CSV_HEADER = ["x1", "x2", "split", "label", "hidden_truth"]


def export_csv(path, dataset: Dataset, truth: HiddenTruth | None = None):
    """Write every point with its split; labels only where they are public."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_HEADER)
        for x, y in zip(dataset.labeled_x, dataset.labeled_y):
            w.writerow([repr(float(x[0])), repr(float(x[1])), "labeled", int(y), int(y)])
        for i, x in enumerate(dataset.unlabeled_x):
            hidden = "" if truth is None else int(truth.classes[i])
            w.writerow([repr(float(x[0])), repr(float(x[1])), "unlabeled", "", hidden])
        for x, y in zip(dataset.test_x, dataset.test_y):
            w.writerow([repr(float(x[0])), repr(float(x[1])), "test", int(y), int(y)])


def load_points_csv(path):
    """Read a custom point set: columns ``x1, x2, label`` with a header row."""
    xs, ys = [], []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = {"x1", "x2", "label"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            xs.append((float(row["x1"]), float(row["x2"])))
            ys.append(int(row["label"]))
    if not xs:
        raise ValueError(f"{path}: no points")
    return np.array(xs, dtype=np.float64), np.array(ys, dtype=np.int64)
