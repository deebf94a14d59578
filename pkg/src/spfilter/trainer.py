"""Semi-supervised training with an online meta model over pseudo-label scores.

Each epoch the network is trained on labeled batches plus pseudo-labeled
unlabeled batches whose losses are weighted by the configured filter. The
scores seen during the epoch are collected, and at the end of each update
window the meta model is refitted on them for use in the next window.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics as M
from .data import STRONG, WEAK, AugmentSpec, Dataset, HiddenTruth, augment
from .filters import FilterContext, FilterStrategy
from .mixture import BETA, FAMILIES, GAUSS, clip_scores, fit_em, posterior
from .nn import (LossInputs, MlpClassifier, NonFiniteError, OptimizerState, backward_and_step,
                 cosine_lr, cross_entropy, forward)

log = logging.getLogger(__name__)

SELF = "self"
EMA = "ema"
CONFIDENCE = "confidence"
LOSS = "loss"


class TrainingAborted(RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class TeacherSpec:
    kind: str = SELF
    ema_decay: float | None = None
    hard_labels: bool = True

    def __post_init__(self):
        if self.kind not in (SELF, EMA):
            raise ValueError(f"unknown teacher kind {self.kind!r}")
        if (self.ema_decay is not None) != (self.kind == EMA):
            raise ValueError("ema_decay is required for, and only for, the EMA teacher")
        if self.ema_decay is not None and not 0.0 < self.ema_decay <= 1.0:
            raise ValueError("ema_decay must lie in (0, 1]")


@dataclass(frozen=True)
class TrainConfig:
    strategy: FilterStrategy = field(default_factory=lambda: FilterStrategy.from_name("spf"))
    # soft targets and a wide first layer keep the toy run out of early lock-in
    teacher: TeacherSpec = field(default_factory=lambda: TeacherSpec(hard_labels=False))
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    epochs: int = 200
    batch_size: int = 2
    mu: int = 7
    lam: float = 10.0
    lr: float = 5e-4
    momentum: float = 0.9
    nesterov: bool = True
    weight_decay: float = 5e-4
    hidden: tuple = (64, 64)
    input_scale: float | None = 4.0
    meta_update_every: int = 1
    meta_family: str = BETA
    meta_feature: str = CONFIDENCE
    em_iterations: int = 10
    snapshot_epochs: tuple = ()
    meta_diagnostics: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.mu < 1:
            raise ValueError("epochs, batch_size and mu must be at least 1")
        if self.meta_update_every < 1:
            raise ValueError("meta_update_every must be at least 1")
        if self.meta_family not in FAMILIES:
            raise ValueError(f"meta_family must be one of {FAMILIES}")
        if self.meta_feature not in (CONFIDENCE, LOSS):
            raise ValueError(f"meta_feature must be {CONFIDENCE!r} or {LOSS!r}")
        if self.lr <= 0 or self.lam < 0:
            raise ValueError("lr must be positive and lam nonnegative")


@dataclass(frozen=True)
class PseudoLabels:
    """Targets for a batch: rows of class probabilities (one-hot when hard)."""

    targets: np.ndarray
    confidence: np.ndarray
    hard_class: np.ndarray

    def __len__(self):
        return len(self.confidence)


def construct_pseudo_labels(teacher: MlpClassifier, unlabeled_x, aug: AugmentSpec,
                            spec: TeacherSpec, rng) -> PseudoLabels:
    """Teacher predictions on weakly augmented inputs; argmax ties go to the lowest class."""
    probs = forward(teacher, augment(unlabeled_x, aug, WEAK, rng))
    hard = np.argmax(probs, axis=1)
    conf = probs[np.arange(len(hard)), hard]
    if spec.hard_labels:
        targets = np.zeros_like(probs)
        targets[np.arange(len(hard)), hard] = 1.0
    else:
        targets = probs
    return PseudoLabels(targets, conf, hard)


@dataclass
class EpochStatistics:
    """Per pseudo-label records of one epoch, in visiting order."""

    scores: np.ndarray
    losses: np.ndarray
    weights: np.ndarray
    indices: np.ndarray
    hard_class: np.ndarray
    correctness: np.ndarray | None = None


@dataclass
class MetaScaler:
    """Maps unbounded loss values into (0, 1) with high meaning likely correct."""

    lo: float
    hi: float

    @classmethod
    def fit(cls, losses):
        return cls(float(np.min(losses)), float(np.max(losses)))

    def __call__(self, losses):
        span = self.hi - self.lo
        scaled = (np.asarray(losses) - self.lo) / span if span > 0 else np.zeros(np.shape(losses))
        return 1.0 - np.clip(scaled, 0.0, 1.0)


def loss_feature(losses):
    return MetaScaler.fit(losses)(losses)


@dataclass
class TrainState:
    model: MlpClassifier
    optimizer: OptimizerState
    teacher: MlpClassifier | None
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0
    meta_model: object = None
    meta_scaler: MetaScaler | None = None
    window_scores: list = field(default_factory=list)
    lab_queue: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def teacher_model(self) -> MlpClassifier:
        return self.model if self.teacher is None else self.teacher


def steps_per_epoch(n_labeled: int, n_unlabeled: int, config: TrainConfig) -> int:
    return (n_labeled + n_unlabeled) // ((1 + config.mu) * config.batch_size)


def init_state(config: TrainConfig, dataset: Dataset) -> TrainState:
    init_seq, run_seq = np.random.SeedSequence([config.seed, 1]).spawn(2)
    sizes = (dataset.dim, *config.hidden, dataset.n_classes)
    model = MlpClassifier(sizes, rng=np.random.default_rng(init_seq), input_scale=config.input_scale)
    opt = OptimizerState.for_model(model, momentum=config.momentum, lr0=config.lr,
                                   weight_decay=config.weight_decay, nesterov=config.nesterov)
    teacher = model.copy() if config.teacher.kind == EMA else None
    return TrainState(model, opt, teacher, np.random.default_rng(run_seq))


def _labeled_batch(state: TrainState, n_labeled: int, size: int) -> np.ndarray:
    while state.lab_queue.size < size:
        state.lab_queue = np.concatenate([state.lab_queue, state.rng.permutation(n_labeled)])
    idx, state.lab_queue = state.lab_queue[:size], state.lab_queue[size:]
    return idx


def _unlabeled_order(state: TrainState, n_unlabeled: int, needed: int) -> np.ndarray:
    order = state.rng.permutation(n_unlabeled)
    while order.size < needed:
        order = np.concatenate([order, state.rng.permutation(n_unlabeled)])
    return order[:needed]


def _loss_scores(state: TrainState, pl: PseudoLabels, student_x) -> np.ndarray:
    """Loss-feature scores of a batch, scaled with the last fitted window's range."""
    losses = cross_entropy(forward(state.model, student_x), pl.targets)
    if state.meta_scaler is None:
        return loss_feature(losses)
    return state.meta_scaler(losses)


def train_epoch(state: TrainState, config: TrainConfig, dataset: Dataset,
                truth: HiddenTruth | None = None):
    """Run one epoch in place on ``state``. Returns its :class:`EpochStatistics`.

    ``truth`` is only used after each step to label the collected records for
    evaluation; it never influences the update.
    """
    n_lab, n_unl = len(dataset.labeled_y), len(dataset.unlabeled_x)
    n_steps = steps_per_epoch(n_lab, n_unl, config)
    total_steps = config.epochs * n_steps
    ub = config.mu * config.batch_size
    order = _unlabeled_order(state, n_unl, n_steps * ub) if n_unl else np.empty(0, dtype=np.int64)
    ctx = FilterContext(state.epoch, config.epochs, state.meta_model)
    teacher_spec = config.teacher
    scores, losses, weights, hard = [], [], [], []
    for i in range(n_steps):
        lab_idx = _labeled_batch(state, n_lab, config.batch_size)
        lab_x = augment(dataset.labeled_x[lab_idx], config.augment, WEAK, state.rng)
        unl_idx = order[i * ub:(i + 1) * ub]
        unl_x = dataset.unlabeled_x[unl_idx]
        pl = construct_pseudo_labels(state.teacher_model, unl_x, config.augment, teacher_spec, state.rng)
        student_x = augment(unl_x, config.augment, STRONG, state.rng)
        if config.meta_feature == LOSS and config.strategy.uses_meta_model:
            w = config.strategy.weights(_loss_scores(state, pl, student_x), ctx)
        else:
            w = config.strategy.weights(pl.confidence, ctx)
        batch = LossInputs(lab_x, dataset.labeled_y[lab_idx], student_x, pl.targets, w, config.lam)
        lr = cosine_lr(state.step, total_steps, config.lr)
        loss = backward_and_step(state.model, state.optimizer, batch, lr)
        if state.teacher is not None:
            d = teacher_spec.ema_decay
            for tp, sp in zip(state.teacher.params, state.model.params):
                tp *= d
                tp += (1.0 - d) * sp
        state.step += 1
        scores.append(pl.confidence)
        losses.append(loss.per_sample_unsup)
        weights.append(w)
        hard.append(pl.hard_class)
        state.window_scores.append(loss.per_sample_unsup if config.meta_feature == LOSS
                                   else pl.confidence)
    cat = (lambda xs, dt=np.float64: np.concatenate(xs) if xs else np.empty(0, dtype=dt))
    stats = EpochStatistics(cat(scores), cat(losses), cat(weights), order,
                            cat(hard, np.int64))
    if truth is not None:
        stats.correctness = truth.correct(order, stats.hard_class)
    state.epoch += 1
    return stats


def refit_meta(state: TrainState, config: TrainConfig):
    """Fit the meta model on the window's collected values and reset the window.

    Returns the trace entry describing the fit.
    """
    raw = np.concatenate(state.window_scores) if state.window_scores else np.empty(0)
    state.window_scores = []
    scaler = None
    values = raw
    if config.meta_feature == LOSS and raw.size:
        scaler = MetaScaler.fit(raw)
        values = scaler(raw)
    fitted = fit_em(values, config.meta_family, config.em_iterations, previous=state.meta_model)
    if not (fitted.skipped and state.meta_model is None):
        state.meta_model = fitted if not fitted.skipped else state.meta_model
        if not fitted.skipped:
            state.meta_scaler = scaler
    entry = {"epoch": state.epoch, "n": int(raw.size), "skipped": bool(fitted.skipped),
             "degeneracies": int(fitted.degeneracies)}
    if state.meta_model is not None:
        entry.update(state.meta_model.to_json_dict())
        entry["correct_mean"] = float(max(state.meta_model.means))
    return entry


def _meta_aurocs(stats: EpochStatistics, config: TrainConfig) -> dict:
    """AUROC of freshly fitted BMM/GMM posteriors on confidence and loss features."""
    out = {}
    if stats.correctness is None:
        return out
    feats = {"conf": stats.scores, "loss": loss_feature(stats.losses) if stats.losses.size else stats.losses}
    for fname, values in feats.items():
        for family, tag in ((BETA, "bmm"), (GAUSS, "gmm")):
            key = f"auroc_{tag}_{fname}"
            if values.size < 2:
                out[key] = None
                continue
            model = fit_em(values, family, config.em_iterations)
            out[key] = M.auroc(posterior(model, values), stats.correctness) if not model.skipped else None
    return out


def evaluate_epoch(state: TrainState, config: TrainConfig, dataset: Dataset,
                   stats: EpochStatistics, used_model) -> M.MetricsRecord:
    test_probs = forward(state.model, dataset.test_x)
    test_error = float(np.mean(np.argmax(test_probs, axis=1) != dataset.test_y)) if len(dataset.test_y) else None
    test_loss = float(cross_entropy(test_probs, _onehot(dataset.test_y, dataset.n_classes)).mean()) \
        if len(dataset.test_y) else None
    lab_probs = forward(state.model, dataset.labeled_x)
    lab_loss = float(cross_entropy(lab_probs, _onehot(dataset.labeled_y, dataset.n_classes)).mean())
    rec = M.MetricsRecord(epoch=state.epoch, test_error=test_error, test_loss=test_loss,
                          labeled_train_loss=lab_loss)
    if stats.weights.size:
        rec.mean_pseudo_weight = float(stats.weights.mean())
    if stats.correctness is not None and stats.scores.size:
        rec.filter_auroc = M.auroc(stats.weights, stats.correctness)
        good, bad = M.confidence_summary(stats.scores, stats.correctness)
        rec.med_conf_correct, rec.q25_conf_correct, rec.q75_conf_correct = good.median, good.q25, good.q75
        rec.med_conf_incorrect, rec.q25_conf_incorrect, rec.q75_conf_incorrect = bad.median, bad.q25, bad.q75
        rec.pseudo_accuracy = float(stats.correctness.mean())
    if config.strategy.uses_meta_model and config.meta_feature == CONFIDENCE:
        rec.virtual_threshold = M.virtual_threshold(used_model)
    if config.meta_diagnostics:
        for k, v in _meta_aurocs(stats, config).items():
            setattr(rec, k, v)
    return rec


def _onehot(y, c):
    out = np.zeros((len(y), c))
    out[np.arange(len(y)), y] = 1.0
    return out


def weight_snapshot(state: TrainState, config: TrainConfig, dataset: Dataset, ctx_model,
                    epoch: int) -> list[list]:
    """Weights the filter would give every unlabeled point (no augmentation)."""
    if not len(dataset.unlabeled_x):
        return []
    probs = forward(state.teacher_model, dataset.unlabeled_x)
    hard = np.argmax(probs, axis=1)
    conf = probs[np.arange(len(hard)), hard]
    ctx = FilterContext(min(epoch - 1, config.epochs), config.epochs, ctx_model)
    if config.meta_feature == LOSS and config.strategy.uses_meta_model:
        targets = _onehot(hard, dataset.n_classes) if config.teacher.hard_labels else probs
        losses = cross_entropy(forward(state.model, dataset.unlabeled_x), targets)
        feats = state.meta_scaler(losses) if state.meta_scaler is not None else loss_feature(losses)
        w = config.strategy.weights(feats, ctx)
    else:
        w = config.strategy.weights(conf, ctx)
    return [[epoch, i, float(x[0]), float(x[1]), float(c), int(h), float(wi)]
            for i, (x, c, h, wi) in enumerate(zip(dataset.unlabeled_x, conf, hard, w))]


@dataclass
class RunResult:
    config: TrainConfig
    records: list
    model: MlpClassifier
    trace: list
    snapshots: list
    timings: dict
    aborted: str | None = None

    @property
    def final_test_error(self) -> float | None:
        return self.records[-1].test_error if self.records else None

    @property
    def metric_columns(self) -> list[str]:
        cols = list(M.METRICS_COLUMNS)
        if self.config.meta_diagnostics:
            cols += M.META_AUROC_COLUMNS
        return cols


def run_training(config: TrainConfig, dataset: Dataset, truth: HiddenTruth | None = None,
                 progress=None) -> RunResult:
    """Train for ``config.epochs`` epochs, refitting the meta model every window.

    Raises :class:`TrainingAborted` (carrying the partial result) if the
    loss or gradients stop being finite.
    """
    state = init_state(config, dataset)
    result = RunResult(config, [], state.model, [], [], {"train_s": 0.0, "meta_fit_s": 0.0, "eval_s": 0.0})
    snapshot_epochs = set(config.snapshot_epochs)
    for _ in range(config.epochs):
        used_model = state.meta_model
        t0 = time.perf_counter()
        try:
            stats = train_epoch(state, config, dataset, truth)
        except NonFiniteError as exc:
            result.aborted = f"epoch {state.epoch + 1}: {exc}"
            log.error("run aborted: %s", result.aborted)
            raise TrainingAborted(result.aborted, result) from exc
        t1 = time.perf_counter()
        result.records.append(evaluate_epoch(state, config, dataset, stats, used_model))
        if state.epoch in snapshot_epochs:
            result.snapshots.extend(weight_snapshot(state, config, dataset, used_model, state.epoch))
        t2 = time.perf_counter()
        if state.epoch % config.meta_update_every == 0:
            result.trace.append(refit_meta(state, config))
        t3 = time.perf_counter()
        result.timings["train_s"] += t1 - t0
        result.timings["eval_s"] += t2 - t1
        result.timings["meta_fit_s"] += t3 - t2
        if progress is not None:
            progress(result.records[-1])
    return result


SNAPSHOT_COLUMNS = ["epoch", "index", "x1", "x2", "confidence", "pseudo_label", "weight"]


def save_run(result: RunResult, out_dir, config_doc: dict):
    """Persist a run: config, metrics, meta-model trace, weight snapshots, checkpoint."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as f:
        json.dump(config_doc, f, indent=2, sort_keys=True)
        f.write("\n")
    cols = result.metric_columns
    with open(out / "metrics.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(cols)
        for rec in result.records:
            w.writerow(rec.row(cols))
    with open(out / "model_trace.jsonl", "w") as f:
        for entry in result.trace:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
    with open(out / "weights_snapshots.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SNAPSHOT_COLUMNS)
        for row in result.snapshots:
            w.writerow([M.format_value(v) for v in row])
    result.model.save(out / "checkpoint.json")
    timings = dict(result.timings, aborted=result.aborted)
    with open(out / "timings.json", "w") as f:
        json.dump(timings, f, indent=2, sort_keys=True)
        f.write("\n")
    return out


def read_metrics(path) -> list[M.MetricsRecord]:
    with open(path, newline="") as f:
        return [M.MetricsRecord.from_row(row) for row in csv.DictReader(f)]
