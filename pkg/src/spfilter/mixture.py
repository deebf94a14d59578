"""Two-component Beta / Gaussian mixtures over scores in (0, 1).

The mixture is the meta model of the filter: it is fitted by EM on the
confidence scores of one training window, and the posterior of its
higher-mean component is the weight given to each pseudo-label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from . import kernels

EPS = 1e-4
MIN_SHAPE = 0.05
MAX_SHAPE = 100.0
MIN_FIT_SIZE = 20
WEIGHT_FLOOR = 1e-6
MIN_GAUSS_VARIANCE = 1e-8
VARIANCE_CAP = 0.999

BETA = "beta"
GAUSS = "gauss"
FAMILIES = (BETA, GAUSS)


class ParameterError(ValueError):
    """Invalid distribution parameters."""


class DomainError(ValueError):
    """Score outside the support of the distribution."""


@dataclass(frozen=True)
class BetaParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0) or not (
            math.isfinite(self.alpha) and math.isfinite(self.beta)
        ):
            raise ParameterError(f"Beta shapes must be positive, got ({self.alpha}, {self.beta})")

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    @property
    def variance(self) -> float:
        s = self.alpha + self.beta
        return self.alpha * self.beta / (s * s * (s + 1.0))


@dataclass(frozen=True)
class GaussParams:
    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0 or not math.isfinite(self.variance):
            raise ParameterError(f"variance must be positive, got {self.variance}")


Component = Union[BetaParams, GaussParams]


@dataclass(frozen=True)
class MixtureModel:
    """Two homogeneous components and their mixing weights.

    ``degeneracies`` counts clamping / fallback events during the fit that
    produced this model; ``skipped`` marks a fit that was refused because
    there were too few scores.
    """

    components: tuple
    weights: tuple
    degeneracies: int = 0
    skipped: bool = False

    def __post_init__(self):
        if len(self.components) != 2 or len(self.weights) != 2:
            raise ParameterError("a mixture has exactly two components")
        kinds = {type(c) for c in self.components}
        if len(kinds) != 1 or not kinds <= {BetaParams, GaussParams}:
            raise ParameterError("components must share one family")
        g1, g2 = self.weights
        if g1 < 0 or g2 < 0 or abs(g1 + g2 - 1.0) > 1e-9:
            raise ParameterError(f"weights must be nonnegative and sum to 1, got {self.weights}")

    @property
    def family(self) -> str:
        return BETA if isinstance(self.components[0], BetaParams) else GAUSS

    @property
    def means(self) -> tuple:
        return tuple(c.mean for c in self.components)

    def to_json_dict(self) -> dict:
        c1, c2 = self.components
        g1, g2 = self.weights
        if self.family == BETA:
            out = {"family": BETA, "alpha1": c1.alpha, "beta1": c1.beta,
                   "alpha2": c2.alpha, "beta2": c2.beta}
        else:
            out = {"family": GAUSS, "mean1": c1.mean, "variance1": c1.variance,
                   "mean2": c2.mean, "variance2": c2.variance}
        out.update(gamma1=g1, gamma2=g2)
        return out

    @classmethod
    def from_json_dict(cls, d: dict) -> "MixtureModel":
        if d["family"] == BETA:
            comps = (BetaParams(d["alpha1"], d["beta1"]), BetaParams(d["alpha2"], d["beta2"]))
        elif d["family"] == GAUSS:
            comps = (GaussParams(d["mean1"], d["variance1"]),
                     GaussParams(d["mean2"], d["variance2"]))
        else:
            raise ParameterError(f"unknown family {d['family']!r}")
        return cls(comps, (d["gamma1"], d["gamma2"]))


def beta_mixture(a1, b1, a2, b2, g1=0.5, g2=None) -> MixtureModel:
    """Shorthand constructor used throughout tests and presets."""
    if g2 is None:
        g2 = 1.0 - g1
    return MixtureModel((BetaParams(a1, b1), BetaParams(a2, b2)), (g1, g2))


@dataclass(frozen=True)
class Responsibilities:
    W: np.ndarray
    degenerate: int = 0


def clip_scores(scores, eps=EPS):
    return np.clip(np.asarray(scores, dtype=np.float64), eps, 1.0 - eps)


def beta_pdf(z: float, p: BetaParams) -> float:
    if not 0.0 < z < 1.0:
        raise DomainError(f"Beta density is defined on (0, 1), got {z}")
    if not isinstance(p, BetaParams):
        raise ParameterError("expected BetaParams")
    return float(np.exp(kernels.beta_logpdf(np.array([z]), p.alpha, p.beta)[0]))


def gauss_pdf(z: float, p: GaussParams) -> float:
    if not isinstance(p, GaussParams):
        raise ParameterError("expected GaussParams")
    return float(np.exp(kernels.gauss_logpdf(np.array([float(z)]), p.mean, p.variance)[0]))


def component_logpdf(z: np.ndarray, c: Component) -> np.ndarray:
    if isinstance(c, BetaParams):
        return kernels.beta_logpdf(z, c.alpha, c.beta)
    return kernels.gauss_logpdf(z, c.mean, c.variance)


def log_likelihood(scores, model: MixtureModel) -> float:
    """Total data log-likelihood of (clipped) scores under the mixture."""
    z = clip_scores(scores)
    with np.errstate(divide="ignore"):
        terms = np.stack([
            np.log(g) + component_logpdf(z, c) for g, c in zip(model.weights, model.components)
        ])
    return float(np.logaddexp(terms[0], terms[1]).sum())


def e_step(scores, model: MixtureModel) -> Responsibilities:
    z = clip_scores(scores)
    if z.size == 0:
        raise ValueError("e_step needs at least one score")
    c1, c2 = model.components
    W, bad = kernels.responsibilities(
        component_logpdf(z, c1), component_logpdf(z, c2), model.weights[0], model.weights[1]
    )
    return Responsibilities(W, bad)


def beta_from_moments(mean: float, variance: float) -> tuple[BetaParams, bool]:
    """Method-of-moments Beta shapes, clamped into the valid range.

    Returns the parameters and whether any clamping was needed.
    """
    clamped = False
    if not (0.0 < mean < 1.0) or not math.isfinite(mean):
        mean = min(max(mean if math.isfinite(mean) else 0.5, EPS), 1.0 - EPS)
        clamped = True
    cap = mean * (1.0 - mean)
    if not math.isfinite(variance) or variance <= 0.0:
        variance = 0.0
        clamped = True
    elif variance >= cap:
        variance = VARIANCE_CAP * cap
        clamped = True
    if variance == 0.0:
        a, b = math.inf, math.inf
    else:
        k = cap / variance - 1.0
        a, b = mean * k, (1.0 - mean) * k
    # rescale jointly first so that the mean survives an upper clamp
    top = max(a, b)
    if top > MAX_SHAPE:
        if math.isinf(top):
            a, b = MAX_SHAPE * mean / max(mean, 1.0 - mean), MAX_SHAPE * (1.0 - mean) / max(mean, 1.0 - mean)
        else:
            a, b = a * MAX_SHAPE / top, b * MAX_SHAPE / top
        clamped = True
    if min(a, b) < MIN_SHAPE:
        a, b = max(a, MIN_SHAPE), max(b, MIN_SHAPE)
        clamped = True
    return BetaParams(min(a, MAX_SHAPE), min(b, MAX_SHAPE)), clamped


def m_step(scores, W, family: str = BETA) -> MixtureModel:
    """Weighted moments per column of ``W``, then shapes and weights.

    A component with no responsibility mass becomes a flat placeholder
    (uniform Beta, or the pooled Gaussian) and is counted as degenerate.
    """
    z = clip_scores(scores)
    if isinstance(W, Responsibilities):
        W = W.W
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (z.shape[0], 2):
        raise ValueError(f"responsibilities shape {W.shape} does not match {z.shape[0]} scores")
    if np.unique(z).size < 2:
        raise ValueError("m_step needs at least two distinct scores")
    totals, means, variances = kernels.weighted_moments(z, W)
    n = z.shape[0]
    comps = []
    degenerate = 0
    for j in range(2):
        if totals[j] <= 0.0:
            degenerate += 1
            if family == BETA:
                comps.append(BetaParams(1.0, 1.0))
            else:
                comps.append(GaussParams(float(z.mean()), max(float(z.var()), MIN_GAUSS_VARIANCE)))
            continue
        if family == BETA:
            params, clamped = beta_from_moments(float(means[j]), float(variances[j]))
        else:
            var = float(variances[j])
            clamped = not var > MIN_GAUSS_VARIANCE
            params = GaussParams(float(means[j]), var if not clamped else MIN_GAUSS_VARIANCE)
        degenerate += clamped
        comps.append(params)
    gammas = totals / n
    g1 = float(gammas[0])
    return MixtureModel(tuple(comps), (g1, 1.0 - g1), degeneracies=degenerate)


def floor_weights(model: MixtureModel, floor: float = WEIGHT_FLOOR) -> MixtureModel:
    g = np.maximum(np.asarray(model.weights, dtype=np.float64), floor)
    g1 = float(g[0] / g.sum())
    if (g1, 1.0 - g1) == tuple(model.weights):
        return model
    return replace(model, weights=(g1, 1.0 - g1))


def median_split_init(scores, family: str = BETA) -> MixtureModel:
    """Initial mixture from the lower and upper halves of the sorted scores."""
    z = np.sort(clip_scores(scores))
    half = z.shape[0] // 2
    lo, hi = z[:max(half, 1)], z[half:]
    comps = []
    degenerate = 0
    for part in (lo, hi):
        mean, var = float(part.mean()), float(part.var())
        if family == BETA:
            params, clamped = beta_from_moments(mean, var)
        else:
            clamped = not var > MIN_GAUSS_VARIANCE
            params = GaussParams(mean, var if not clamped else MIN_GAUSS_VARIANCE)
        degenerate += clamped
        comps.append(params)
    return MixtureModel(tuple(comps), (0.5, 0.5), degeneracies=degenerate)


def fit_em(scores, family: str = BETA, iterations: int = 10, init: MixtureModel | None = None,
           previous: MixtureModel | None = None, trace: list | None = None) -> MixtureModel:
    """Fit a two-component mixture by alternating E- and M-steps.

    ``init`` overrides the median-split initialisation. With fewer than
    ``MIN_FIT_SIZE`` scores, ``previous`` (or the initialisation) is returned
    with ``skipped=True``. If ``trace`` is a list, the log-likelihood after
    initialisation and after every iteration is appended to it.
    """
    if family not in FAMILIES:
        raise ParameterError(f"unknown family {family!r}")
    z = clip_scores(scores)
    if z.shape[0] < MIN_FIT_SIZE:
        fallback = previous if previous is not None else init
        if fallback is None:
            # nothing to fall back on: a flat uninformative mixture
            fallback = (beta_mixture(1.0, 1.0, 1.0, 1.0) if family == BETA
                        else MixtureModel((GaussParams(0.5, 1.0), GaussParams(0.5, 1.0)), (0.5, 0.5)))
        return replace(fallback, skipped=True)
    model = init if init is not None else median_split_init(z, family)
    degeneracies = model.degeneracies
    if trace is not None:
        trace.append(log_likelihood(z, model))
    if iterations > 0 and np.unique(z).size < 2:
        return replace(model, degeneracies=degeneracies + 1)
    for _ in range(iterations):
        resp = e_step(z, model)
        model = floor_weights(m_step(z, resp.W, family))
        degeneracies += resp.degenerate + model.degeneracies
        if trace is not None:
            trace.append(log_likelihood(z, model))
    return replace(model, degeneracies=degeneracies)


def correct_component(model: MixtureModel) -> int:
    """Index of the component modelling correct pseudo-labels.

    Highest mean wins; a tie goes to the larger weight, then to index 1.
    """
    m1, m2 = model.means
    if m1 != m2:
        return 0 if m1 > m2 else 1
    g1, g2 = model.weights
    return 0 if g1 > g2 else 1


def posterior(model: MixtureModel, scores) -> np.ndarray:
    """Posterior of the correct component for an array of scores."""
    z = clip_scores(np.atleast_1d(scores))
    W = e_step(z, model).W
    return W[:, correct_component(model)]


def posterior_correct(model: MixtureModel, confidence):
    """Posterior probability that a pseudo-label with this confidence is correct.

    Accepts a scalar (returns a float) or an array (returns an array).
    """
    out = posterior(model, confidence)
    if np.ndim(confidence) == 0:
        return float(out[0])
    return out
