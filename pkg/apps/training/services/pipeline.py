"""
Diff pruning and its baselines.

A model is any object with a `space` (FlatParamSpace) and a
`forward(theta, inputs)` method mapping a flat parameter Tensor and a batch of
inputs to logits. The pretrained vector theta is never modified: every
procedure trains on a fresh Tensor built from a copy of it.

Every stochastic phase draws from its own stream derived from cfg.seed, so the
same config always reproduces the same parameters bit for bit.
"""

import logging
import math
import time
from dataclasses import dataclass
from decimal import Decimal

import numpy as np

from apps.diffs.errors import DimensionMismatchError
from apps.diffs.services import (
    DiffVector,
    GatedDiff,
    expected_l0_total,
    expected_l0_total_exact,
    train_delta,
)
from apps.gates.services import U_EPS, deterministic_gate, draw_uniform, finalize_gate
from apps.tensors import engine as E
from apps.tensors.engine import DTYPE, Tensor
from apps.tensors.errors import GradientError, NonFiniteError

from ..errors import ConfigError, DivergenceError
from .data import iter_batches
from .optim import build_optimizer

logger = logging.getLogger(__name__)

TRAIN_L0 = "train_l0"
FINETUNE = "finetune"
FULL = "full"
LAST_LAYER = "last_layer"

_STREAMS = {TRAIN_L0: 0, FINETUNE: 1, FULL: 2, LAST_LAYER: 3}


@dataclass(frozen=True)
class EpochRecord:
    phase: str
    epoch: int
    train_loss: float
    val_accuracy: float
    expected_l0: float
    wall_seconds: float


def _stream(seed, phase):
    return np.random.default_rng([int(seed), _STREAMS[phase]])


def _frozen_base(model, theta):
    theta = np.asarray(theta)
    if theta.shape != (model.space.total_dim,):
        raise DimensionMismatchError(model.space.total_dim, theta.size, "pretrained vector")
    return Tensor(theta)


def _emit(record, on_epoch):
    logger.info(
        "%s epoch %d: loss=%.6f val_acc=%.4f expected_l0=%.1f wall=%.2fs",
        record.phase,
        record.epoch,
        record.train_loss,
        record.val_accuracy,
        record.expected_l0,
        record.wall_seconds,
    )
    if on_epoch is not None:
        on_epoch(record)


def _guarded_step(optimizer, build_loss, step, phase):
    """Forward, backward and update; non-finite values abort the run."""
    try:
        loss = build_loss()
        optimizer.zero_grad()
        loss.backward()
    except (NonFiniteError, GradientError) as exc:
        logger.warning("%s aborted at step %d: %s", phase, step, exc)
        raise DivergenceError(step, float("nan"), phase) from exc
    value = loss.item()
    if not math.isfinite(value):
        raise DivergenceError(step, value, phase)
    optimizer.step()
    return value


def empirical_risk(model_fn, theta_task, inputs, labels):
    """Mean cross-entropy of model_fn(theta_task, inputs) against labels."""
    if len(labels) == 0:
        raise ConfigError("batch_size", "batch is empty")
    return E.softmax_cross_entropy(model_fn(theta_task, inputs), labels)


def evaluate_accuracy(model, theta_task, split):
    logits = model.forward(Tensor(theta_task), split.inputs).data
    return float(np.mean(np.argmax(logits, axis=-1) == split.labels))


def expected_delta(diff):
    """Noise-free delta used to score a diff while it is still being trained."""
    z = deterministic_gate(diff.gate)
    if diff.structured:
        z = z * deterministic_gate(diff.group_gate)[diff.group_index]
    z = np.where(diff.space.head_mask, DTYPE(1), z)
    return (z * diff.w.data).astype(DTYPE)


def train_l0(model, theta, diff, data, cfg, *, on_epoch=None):
    """Minimize risk + lambda * E[L0] over (w, alpha[, group alpha]) with u resampled per step.

    Returns a trained copy; `diff` itself is left as it was.
    """
    if diff.space != model.space:
        raise DimensionMismatchError(model.space.total_dim, diff.space.total_dim, "diff")
    base = _frozen_base(model, theta)
    diff = diff.clone()
    rng = _stream(cfg.seed, TRAIN_L0)
    optimizer = build_optimizer(cfg.optimizer, diff.parameters(), cfg.learning_rate)

    step = 0
    for epoch in range(1, cfg.epochs_train + 1):
        started = time.perf_counter()
        losses = []
        for inputs, labels in iter_batches(data.train, cfg.batch_size, rng):
            u = draw_uniform(rng, diff.noise_size, cfg.u_eps)

            def build_loss():
                theta_task = E.add(base, train_delta(diff, u))
                risk = empirical_risk(model.forward, theta_task, inputs, labels)
                return E.add(risk, E.stretch(expected_l0_total(diff), cfg.l0_lambda))

            losses.append(_guarded_step(optimizer, build_loss, step, TRAIN_L0))
            step += 1

        record = EpochRecord(
            phase=TRAIN_L0,
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            val_accuracy=evaluate_accuracy(model, base.data + expected_delta(diff), data.validation),
            expected_l0=expected_l0_total_exact(diff),
            wall_seconds=time.perf_counter() - started,
        )
        _emit(record, on_epoch)
    return diff


def finalize(diff, seed, *, eps=U_EPS):
    """Sample the gates once and keep delta = z * w without its zeros.

    One stream draws the d coordinate noises first and then the group noises.
    Head coordinates use z = 1.
    """
    rng = np.random.default_rng(seed)
    z = finalize_gate(diff.gate, rng=rng, eps=eps)
    if diff.structured:
        z = z * finalize_gate(diff.group_gate, rng=rng, eps=eps)[diff.group_index]
    z = np.where(diff.space.head_mask, DTYPE(1), z)
    return DiffVector.from_dense(z * diff.w.data, diff.space)


def budget(t, d_nonhead):
    """ceil(t * d_nonhead) computed on the decimal value of t."""
    if not 0 < t <= 1:
        raise ConfigError("target_sparsity", f"must lie in (0, 1], got {t}")
    return math.ceil(Decimal(repr(float(t))) * d_nonhead)


def project_l0(delta, t):
    """Keep the ceil(t * d_nonhead) largest-magnitude non-head entries; heads always stay.

    Ties keep the lower position.
    """
    k = budget(t, delta.space.nonhead_dim)
    head = delta.space.head_mask[delta.positions]
    body_pos = delta.positions[~head]
    if body_pos.size <= k:
        return delta
    body_val = delta.values[~head]
    order = np.lexsort((body_pos, -np.abs(body_val)))[:k]
    positions = np.concatenate([body_pos[order], delta.positions[head]])
    values = np.concatenate([body_val[order], delta.values[head]])
    sort = np.argsort(positions, kind="stable")
    return DiffVector(delta.space, positions[sort], values[sort])


def _train_support(model, base, positions, values, data, cfg, *, epochs, lr, phase, on_epoch):
    """Optimize delta values at a fixed support; returns the trained float32 values."""
    positions = np.asarray(positions, dtype=np.int64)
    d = model.space.total_dim
    params = Tensor(values, requires_grad=True)
    optimizer = build_optimizer(cfg.optimizer, [params], lr)
    rng = _stream(cfg.seed, phase)
    theta = base.data

    step = 0
    for epoch in range(1, epochs + 1):
        started = time.perf_counter()
        losses = []
        for inputs, labels in iter_batches(data.train, cfg.batch_size, rng):

            def build_loss():
                theta_task = E.add(base, E.scatter(params, positions, d))
                return empirical_risk(model.forward, theta_task, inputs, labels)

            losses.append(_guarded_step(optimizer, build_loss, step, phase))
            step += 1

        dense = np.zeros(d, dtype=DTYPE)
        dense[positions] = params.data
        record = EpochRecord(
            phase=phase,
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            val_accuracy=evaluate_accuracy(model, theta + dense, data.validation),
            expected_l0=float(np.count_nonzero(~model.space.head_mask[positions])),
            wall_seconds=time.perf_counter() - started,
        )
        _emit(record, on_epoch)
    return params.data


def finetune_fixed_mask(model, theta, delta, data, cfg, *, on_epoch=None):
    """Train delta's stored values with its support frozen."""
    if delta.space != model.space:
        raise DimensionMismatchError(model.space.total_dim, delta.dim, "diff")
    if cfg.epochs_finetune == 0 or delta.nnz == 0:
        return delta
    base = _frozen_base(model, theta)
    values = _train_support(
        model, base, delta.positions, delta.values, data, cfg,
        epochs=cfg.epochs_finetune, lr=cfg.mask_learning_rate, phase=FINETUNE, on_epoch=on_epoch,
    )
    # a value that lands exactly on zero would drop out of the support
    tiny = np.copysign(np.finfo(DTYPE).tiny, delta.values).astype(DTYPE)
    values = np.where(values == 0, tiny, values)
    return DiffVector(delta.space, delta.positions, values)


def train_full(model, theta, data, cfg, *, on_epoch=None):
    """Full finetuning; returns the dense task-minus-pretrained difference as a DiffVector."""
    base = _frozen_base(model, theta)
    d = model.space.total_dim
    values = _train_support(
        model, base, np.arange(d), np.zeros(d, dtype=DTYPE), data, cfg,
        epochs=cfg.epochs_train, lr=cfg.learning_rate, phase=FULL, on_epoch=on_epoch,
    )
    return DiffVector.from_dense(values, model.space)


def nonadaptive_diff_prune(model, theta, data, cfg, *, on_epoch=None):
    delta = train_full(model, theta, data, cfg, on_epoch=on_epoch)
    delta = project_l0(delta, cfg.target_sparsity)
    return finetune_fixed_mask(model, theta, delta, data, cfg, on_epoch=on_epoch)


def last_layer_support(space):
    layer = space.penultimate_layer
    chosen = [seg for seg in space.segments if seg.head or seg.layer == layer]
    return np.concatenate([np.arange(seg.offset, seg.stop) for seg in chosen])


def last_layer_finetune(model, theta, data, cfg, *, on_epoch=None):
    """Train only the penultimate layer and the heads."""
    base = _frozen_base(model, theta)
    positions = last_layer_support(model.space)
    values = _train_support(
        model, base, positions, np.zeros(positions.size, dtype=DTYPE), data, cfg,
        epochs=cfg.epochs_train, lr=cfg.learning_rate, phase=LAST_LAYER, on_epoch=on_epoch,
    )
    keep = values != 0
    return DiffVector(model.space, positions[keep], values[keep])


def diff_prune(model, theta, data, cfg, *, structured=None, project=True, finetune=True, on_epoch=None):
    """train_l0, then finalize, then project_l0, then finetune_fixed_mask.

    `project` and `finetune` switch off the last two stages.
    """
    if structured is None:
        structured = cfg.structured
    diff = GatedDiff.initialize(
        model.space,
        structured=structured,
        alpha_init=cfg.alpha_init,
        group_alpha_init=cfg.group_alpha_init,
        w_init=cfg.w_init,
        l=cfg.l,
        r=cfg.r,
    )
    trained = train_l0(model, theta, diff, data, cfg, on_epoch=on_epoch)
    delta = finalize(trained, cfg.seed, eps=cfg.u_eps)
    logger.info("finalized diff: %d non-head entries of %d", delta.nonhead_nnz, delta.space.nonhead_dim)
    if project:
        delta = project_l0(delta, cfg.target_sparsity)
    if finetune:
        delta = finetune_fixed_mask(model, theta, delta, data, cfg, on_epoch=on_epoch)
    return delta


METHODS = {
    "structured": lambda *a, **kw: diff_prune(*a, structured=True, **kw),
    "unstructured": lambda *a, **kw: diff_prune(*a, structured=False, **kw),
    "non-adaptive": nonadaptive_diff_prune,
    "full": train_full,
    "last-layer": last_layer_finetune,
    "structured-no-projection": lambda *a, **kw: diff_prune(*a, structured=True, project=False, **kw),
    "structured-no-finetune": lambda *a, **kw: diff_prune(*a, structured=True, finetune=False, **kw),
}


def run_method(method, model, theta, data, cfg, *, on_epoch=None):
    try:
        procedure = METHODS[method]
    except KeyError:
        raise ConfigError("methods", f"unknown method {method!r}") from None
    return procedure(model, theta, data, cfg, on_epoch=on_epoch)
