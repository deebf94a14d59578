"""Small tanh MLP, weighted semi-supervised objective and Nesterov SGD."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

CHECKPOINT_FORMAT = "spfilter-mlp-v1"


class NonFiniteError(FloatingPointError):
    """Raised when a loss or gradient stops being finite."""


class MlpClassifier:
    """Fully connected classifier with tanh hidden layers and softmax output.

    Parameters live in ``params`` as ``[W1, b1, W2, b2, ...]`` with
    ``W_i`` of shape ``(fan_in, fan_out)``. Fresh weights are Glorot uniform
    with zero biases. ``input_scale`` instead draws the first layer's weights
    and biases from ``U(-input_scale, input_scale)``, which spreads the
    first-layer tanh transitions over a low-dimensional input domain.
    """

    activation = "tanh"

    def __init__(self, layer_sizes, params=None, rng=None, input_scale=None):
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least an input and an output layer")
        if params is None:
            rng = np.random.default_rng(rng)
            params = []
            for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
                # Glorot uniform
                limit = math.sqrt(6.0 / (fan_in + fan_out))
                params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
                params.append(np.zeros(fan_out))
            if input_scale is not None:
                if not input_scale > 0:
                    raise ValueError("input_scale must be positive")
                params[0] = rng.uniform(-input_scale, input_scale, size=params[0].shape)
                params[1] = rng.uniform(-input_scale, input_scale, size=params[1].shape)
        self.params = [np.array(p, dtype=np.float64) for p in params]
        for i, (fan_in, fan_out) in enumerate(zip(self.layer_sizes[:-1], self.layer_sizes[1:])):
            if self.params[2 * i].shape != (fan_in, fan_out) or self.params[2 * i + 1].shape != (fan_out,):
                raise ValueError(f"parameter shapes of layer {i} do not match {self.layer_sizes}")

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "MlpClassifier":
        return MlpClassifier(self.layer_sizes, [p.copy() for p in self.params])

    def zeros_like(self) -> list:
        return [np.zeros_like(p) for p in self.params]

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def save(self, path):
        """Write a JSON checkpoint: header plus a flat parameter array."""
        doc = {
            "format": CHECKPOINT_FORMAT,
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation,
            "parameters": [float(v) for v in self.flat()],
        }
        with open(path, "w") as f:
            json.dump(doc, f)

    @classmethod
    def load(cls, path) -> "MlpClassifier":
        with open(path) as f:
            doc = json.load(f)
        if doc.get("format") != CHECKPOINT_FORMAT or doc.get("activation") != cls.activation:
            raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
        sizes = doc["layer_sizes"]
        flat = np.array(doc["parameters"], dtype=np.float64)
        params, offset = [], 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            for shape in ((fan_in, fan_out), (fan_out,)):
                size = int(np.prod(shape))
                params.append(flat[offset:offset + size].reshape(shape))
                offset += size
        if offset != flat.size:
            raise ValueError(f"{path}: parameter count does not match layer sizes")
        return cls(sizes, params)


def forward(model: MlpClassifier, inputs) -> np.ndarray:
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if x.shape[1] != model.layer_sizes[0]:
        raise ValueError(f"input dim {x.shape[1]} != model input dim {model.layer_sizes[0]}")
    probs, _ = kernels.mlp_forward(model.params, x)
    return probs


def cross_entropy(probs, targets) -> np.ndarray:
    """Per-row cross-entropy of probability rows against target rows."""
    with np.errstate(divide="ignore"):
        logp = np.log(np.maximum(probs, 1e-300))
    return -(targets * logp).sum(axis=1)


def one_hot(labels, n_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


@dataclass(frozen=True)
class LossBreakdown:
    supervised_loss: float
    unsupervised_loss: float
    lam: float
    total: float
    per_sample_unsup: np.ndarray = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class LossInputs:
    """One step's data: labeled pairs plus unlabeled inputs with pseudo-targets."""

    labeled_x: np.ndarray
    labeled_y: np.ndarray
    unlabeled_x: np.ndarray
    targets: np.ndarray
    weights: np.ndarray
    lam: float


def _loss_and_dlogits(model: MlpClassifier, batch: LossInputs):
    n_lab = len(batch.labeled_y)
    if n_lab == 0:
        raise ValueError("the supervised term needs a nonempty labeled batch")
    w = np.asarray(batch.weights, dtype=np.float64)
    if w.size and (w.min() < 0.0 or w.max() > 1.0):
        raise ValueError("pseudo-label weights must lie in [0, 1]")
    n_unl = len(w)
    x = batch.labeled_x if n_unl == 0 else np.concatenate([batch.labeled_x, batch.unlabeled_x])
    if x.shape[1] != model.layer_sizes[0]:
        raise ValueError(f"input dim {x.shape[1]} != model input dim {model.layer_sizes[0]}")
    targets = one_hot(batch.labeled_y, model.n_classes)
    if n_unl:
        targets = np.concatenate([targets, batch.targets])
    probs, acts = kernels.mlp_forward(model.params, x)
    ce = cross_entropy(probs, targets)
    sup = float(ce[:n_lab].mean())
    per_unsup = ce[n_lab:]
    unsup = float((w * per_unsup).mean()) if n_unl else 0.0
    coef = np.empty(n_lab + n_unl)
    coef[:n_lab] = 1.0 / n_lab
    if n_unl:
        coef[n_lab:] = batch.lam * w / n_unl
    # valid because every target row sums to one
    dlogits = (probs - targets) * coef[:, None]
    loss = LossBreakdown(sup, unsup, batch.lam, sup + batch.lam * unsup, per_unsup)
    return loss, acts, dlogits


def ssl_loss(model: MlpClassifier, labeled_x, labeled_y, unlabeled_x, targets, weights,
             lam: float) -> LossBreakdown:
    """Mean labeled cross-entropy plus ``lam`` times the weighted mean pseudo-label cross-entropy."""
    batch = LossInputs(np.asarray(labeled_x, dtype=np.float64), np.asarray(labeled_y),
                       np.asarray(unlabeled_x, dtype=np.float64).reshape(-1, model.layer_sizes[0]),
                       np.asarray(targets, dtype=np.float64).reshape(-1, model.n_classes),
                       np.asarray(weights, dtype=np.float64), lam)
    return _loss_and_dlogits(model, batch)[0]


def gradients(model: MlpClassifier, batch: LossInputs):
    """Loss breakdown and the analytic gradient of its total."""
    loss, acts, dlogits = _loss_and_dlogits(model, batch)
    return loss, kernels.mlp_backward(model.params, acts, dlogits)


@dataclass
class OptimizerState:
    """SGD with (Nesterov) momentum and decoupled weight decay."""

    buffers: list
    momentum: float = 0.9
    lr0: float = 0.03
    weight_decay: float = 5e-4
    nesterov: bool = True

    @classmethod
    def for_model(cls, model: MlpClassifier, **kw) -> "OptimizerState":
        return cls(model.zeros_like(), **kw)


def apply_update(model: MlpClassifier, opt: OptimizerState, grads, lr: float):
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    ok = kernels.sgd_update(model.params, grads, opt.buffers, lr, opt.momentum,
                            opt.weight_decay, opt.nesterov)
    if not ok:
        raise NonFiniteError("non-finite gradient")


def backward_and_step(model: MlpClassifier, opt: OptimizerState, batch: LossInputs,
                      lr: float) -> LossBreakdown:
    """One optimizer step on the weighted objective. Updates ``model`` and ``opt`` in place."""
    loss, grads = gradients(model, batch)
    if not math.isfinite(loss.total):
        raise NonFiniteError(f"non-finite loss {loss.total}")
    apply_update(model, opt, grads, lr)
    return loss


def cosine_lr(step: int, total_steps: int, eta0: float) -> float:
    """``eta0 * cos(7 pi k / (16 K))``: decays to about 0.195 * eta0 at the end."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return eta0 * math.cos(7.0 * math.pi * step / (16.0 * total_steps))
