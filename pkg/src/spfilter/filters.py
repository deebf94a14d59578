"""Pseudo-label weighting rules behind one strategy interface.

Each rule maps the confidence of a pseudo-label (and the training context)
to a weight in [0, 1] that multiplies that sample's unsupervised loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mixture import MixtureModel, posterior_correct

CONSTANT_THRESHOLD = "ConstantThreshold"
RAMP_UP = "RampUp"
CONFIDENCE_WEIGHT = "ConfidenceWeight"
CTR = "CTR"
SPF = "SPF"
SPF_HARD_MASK = "SPFHardMask"

LINEAR = "linear"
SIGMOID = "sigmoid"

CTR_FINAL_THRESHOLD = 0.95
DEFAULT_RAMP_FRACTION = 0.4
DEFAULT_TAU = 0.95
DEFAULT_MASK_THRESHOLD = 0.2

# CLI / config names -> (kind, ramp shape)
STRATEGY_NAMES = {
    "cct": (CONSTANT_THRESHOLD, None),
    "rampup-linear": (RAMP_UP, LINEAR),
    "rampup-sigmoid": (RAMP_UP, SIGMOID),
    "cw": (CONFIDENCE_WEIGHT, None),
    "ctr-linear": (CTR, LINEAR),
    "ctr-sigmoid": (CTR, SIGMOID),
    "spf": (SPF, None),
    "spf-hard": (SPF_HARD_MASK, None),
}

# weight given by SPF rules before the first meta-model fit
INITIAL_ONE = "one"
INITIAL_PRIOR = "prior"


@dataclass(frozen=True)
class FilterContext:
    epoch: int
    total_epochs: int
    model: MixtureModel | None = None

    def __post_init__(self):
        if self.total_epochs < 1 or not 0 <= self.epoch <= self.total_epochs:
            raise ValueError(f"epoch {self.epoch} outside [0, {self.total_epochs}]")


@dataclass(frozen=True)
class FilterStrategy:
    kind: str
    tau: float | None = None
    ramp_shape: str | None = None
    ramp_fraction: float | None = None
    mask_threshold: float | None = None
    initial: str = field(default=INITIAL_ONE)

    def __post_init__(self):
        uses = {
            CONSTANT_THRESHOLD: {"tau"},
            RAMP_UP: {"ramp_shape", "ramp_fraction"},
            CONFIDENCE_WEIGHT: set(),
            CTR: {"tau", "ramp_shape", "ramp_fraction"},
            SPF: set(),
            SPF_HARD_MASK: {"mask_threshold"},
        }
        if self.kind not in uses:
            raise ValueError(f"unknown filter kind {self.kind!r}")
        for name in ("tau", "ramp_shape", "ramp_fraction", "mask_threshold"):
            present = getattr(self, name) is not None
            if present != (name in uses[self.kind]):
                state = "requires" if not present else "does not take"
                raise ValueError(f"{self.kind} {state} {name}")
        for name in ("tau", "mask_threshold"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.ramp_fraction is not None and not 0.0 < self.ramp_fraction <= 1.0:
            raise ValueError(f"ramp_fraction must lie in (0, 1], got {self.ramp_fraction}")
        if self.ramp_shape is not None and self.ramp_shape not in (LINEAR, SIGMOID):
            raise ValueError(f"unknown ramp shape {self.ramp_shape!r}")
        if self.initial not in (INITIAL_ONE, INITIAL_PRIOR):
            raise ValueError(f"unknown initial SPF rule {self.initial!r}")

    @classmethod
    def from_name(cls, name: str, tau: float | None = None, ramp_fraction: float | None = None,
                  mask_threshold: float | None = None, initial: str = INITIAL_ONE):
        """Build a strategy from its short name, filling in the usual defaults."""
        try:
            kind, shape = STRATEGY_NAMES[name]
        except KeyError:
            raise ValueError(
                f"unknown strategy {name!r}; choose from {', '.join(STRATEGY_NAMES)}") from None
        kw = {}
        if kind == CONSTANT_THRESHOLD:
            kw["tau"] = DEFAULT_TAU
        elif kind == CTR:
            kw["tau"] = CTR_FINAL_THRESHOLD
        if kind in (RAMP_UP, CTR):
            kw["ramp_shape"] = shape
            kw["ramp_fraction"] = DEFAULT_RAMP_FRACTION
        if kind == SPF_HARD_MASK:
            kw["mask_threshold"] = DEFAULT_MASK_THRESHOLD
        # explicit values override the defaults; ones the kind does not take fail validation
        given = {"tau": tau, "ramp_fraction": ramp_fraction, "mask_threshold": mask_threshold}
        kw.update({k: v for k, v in given.items() if v is not None})
        return cls(kind=kind, initial=initial, **kw)

    @property
    def name(self) -> str:
        for key, (kind, shape) in STRATEGY_NAMES.items():
            if kind == self.kind and shape == self.ramp_shape:
                return key
        raise AssertionError("unreachable")

    @property
    def uses_meta_model(self) -> bool:
        return self.kind in (SPF, SPF_HARD_MASK)

    def weights(self, confidence, ctx: FilterContext) -> np.ndarray:
        """Vectorised weights for an array of confidences."""
        conf = np.asarray(confidence, dtype=np.float64)
        if self.kind == CONSTANT_THRESHOLD:
            return (conf >= self.tau).astype(np.float64)
        if self.kind == RAMP_UP:
            return np.full(conf.shape, weight_ramp_up(ctx, self.ramp_shape, self.ramp_fraction))
        if self.kind == CONFIDENCE_WEIGHT:
            return conf.copy()
        if self.kind == CTR:
            tau_t = ctr_threshold(ctx, self.ramp_shape, self.ramp_fraction, self.tau)
            return (conf >= tau_t).astype(np.float64)
        w = spf_weights(conf, ctx, self.initial)
        if self.kind == SPF_HARD_MASK:
            return (w >= self.mask_threshold).astype(np.float64)
        return w

    def weight(self, confidence: float, ctx: FilterContext) -> float:
        return float(self.weights(np.array([confidence]), ctx)[0])


def ramp(ctx: FilterContext, shape: str, ramp_fraction: float = DEFAULT_RAMP_FRACTION) -> float:
    """Ramp value in [0, 1] at epoch ``ctx.epoch``; reaches 1 after the ramp length."""
    length = ramp_fraction * ctx.total_epochs
    if length < 1:
        raise ValueError("ramp length must cover at least one epoch")
    p = min(ctx.epoch / length, 1.0)
    if shape == LINEAR:
        return p
    if shape == SIGMOID:
        return math.exp(-5.0 * (1.0 - p) ** 2)
    raise ValueError(f"unknown ramp shape {shape!r}")


def weight_constant_threshold(confidence: float, tau: float) -> float:
    return 1.0 if confidence >= tau else 0.0


def weight_ramp_up(ctx: FilterContext, shape: str = LINEAR,
                   ramp_fraction: float = DEFAULT_RAMP_FRACTION) -> float:
    return ramp(ctx, shape, ramp_fraction)


def weight_confidence(confidence: float) -> float:
    return float(confidence)


def ctr_threshold(ctx: FilterContext, shape: str = LINEAR,
                  ramp_fraction: float = DEFAULT_RAMP_FRACTION,
                  final: float = CTR_FINAL_THRESHOLD) -> float:
    return final * ramp(ctx, shape, ramp_fraction)


def weight_ctr(confidence: float, ctx: FilterContext, shape: str = LINEAR,
               ramp_fraction: float = DEFAULT_RAMP_FRACTION,
               final: float = CTR_FINAL_THRESHOLD) -> float:
    return 1.0 if confidence >= ctr_threshold(ctx, shape, ramp_fraction, final) else 0.0


def spf_weights(confidence, ctx: FilterContext, initial: str = INITIAL_ONE) -> np.ndarray:
    conf = np.asarray(confidence, dtype=np.float64)
    if ctx.model is None:
        # no meta model fitted yet
        return np.full(conf.shape, 1.0 if initial == INITIAL_ONE else 0.5)
    return np.asarray(posterior_correct(ctx.model, conf), dtype=np.float64).reshape(conf.shape)


def weight_spf(confidence: float, ctx: FilterContext, initial: str = INITIAL_ONE) -> float:
    return float(spf_weights(np.array([confidence]), ctx, initial)[0])


def hard_mask(weight: float, mask_threshold: float) -> float:
    return 1.0 if weight >= mask_threshold else 0.0
