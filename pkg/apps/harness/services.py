"""
Desk-scale pipeline: pretraining, per-task diffs, evaluation, stats and sweeps.

A RunContext ties a resolved RunConfig to the toy model and task suite it
describes. Checkpoints carry their resolved config in their metadata, so
every later command rebuilds the same model and data from the checkpoint.
"""

import logging
import time
from dataclasses import asdict, dataclass

import numpy as np
from django.conf import settings

from apps.analysis import services as analysis
from apps.analysis.errors import SweepCellError
from apps.codec.errors import SegmentMismatchError
from apps.codec.services import Checkpoint, apply_patch, load_checkpoint
from apps.diffs.services import compose, default_grouping
from apps.training.models import TrainingRun
from apps.training.services.pipeline import evaluate_accuracy, run_method, train_full
from apps.training.services.recorder import track_run

from .config import config_load
from .suite import BASE, build_suite
from .toymodels import build_model

logger = logging.getLogger(__name__)

# RNG stream for initial weights, apart from the training phases' streams.
INIT_STREAM = 4


@dataclass(eq=False)
class RunContext:
    config: object
    model: object
    suite: object

    def task(self, name):
        return self.suite.task(name)


def context_for(run_config):
    return RunContext(run_config, build_model(run_config.model), build_suite(run_config.suite))


def open_checkpoint(checkpoint, path=None, *, base_config=None, overrides=None):
    """RunContext for a checkpoint, with a config file and overrides layered on its config."""
    if base_config is None:
        base_config = checkpoint.metadata.get("config")
    run_config = config_load(path, base=base_config, overrides=overrides)
    ctx = context_for(run_config)
    divergence = ctx.model.space.first_divergence(checkpoint.space)
    if divergence is not None:
        raise SegmentMismatchError(divergence)
    return ctx


def file_metadata(ctx, **extra):
    """Resolved config plus run details; identical runs give identical metadata."""
    return {"config": ctx.config.as_dict(), **extra}


def pretrain(ctx, *, on_epoch=None):
    """Train freshly initialized weights on the base task."""
    run_config = ctx.config
    rng = np.random.default_rng([run_config.train.seed, INIT_STREAM])
    theta0 = ctx.model.init_params(rng)
    delta = train_full(ctx.model, theta0, ctx.task(BASE), run_config.pretrain_config(), on_epoch=on_epoch)
    theta = compose(theta0, delta)
    accuracy = evaluate(ctx, theta, BASE)
    logger.info("pretrained %s model: d=%d, base accuracy %.4f",
                run_config.model.model, ctx.model.space.total_dim, accuracy)
    return Checkpoint(ctx.model.space, theta, file_metadata(ctx, kind="pretrained", task=BASE))


def finetune(ctx, theta, method, task, *, on_epoch=None):
    """DiffVector for one task by one method, trained on top of theta."""
    return run_method(method, ctx.model, theta, ctx.task(task), ctx.config.train, on_epoch=on_epoch)


def evaluate(ctx, theta, task):
    return evaluate_accuracy(ctx.model, theta, ctx.task(task).validation)


def evaluate_diff(ctx, theta, delta, task):
    return evaluate(ctx, compose(theta, delta), task)


# ---------------------------------------------------------------------------
# Stats
# ---------------------------------------------------------------------------

def diff_stats(delta, *, base=None, n_tasks=1):
    """Everything the `stats` command reports about a diff."""
    report = analysis.per_layer_sparsity(delta)
    stats = {
        "report": report,
        "nnz": delta.nnz,
        "nonhead_nnz": delta.nonhead_nnz,
        "natural_sparsity": analysis.natural_sparsity(delta),
        "zero_group_fraction": analysis.zero_group_fraction(delta, default_grouping(delta.space)),
        "storage": [
            analysis.storage_cost(delta.dim, delta.nnz, analysis.FULL_WEIGHTS),
            analysis.storage_cost(delta.dim, delta.nnz, analysis.POSITIONS_AND_WEIGHTS),
        ],
        "efficiency": analysis.parameter_efficiency(delta.dim, delta.nnz, n_tasks),
    }
    if base is not None:
        patched = apply_patch(base, delta)
        changed = np.count_nonzero(patched.theta != base.theta)
        stats["changed_in_base"] = int(changed)
    return stats


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def run_cell(ctx, theta, task, cell):
    """Train and score one (t, method, seed) cell on its own config copy."""
    run_config = ctx.config.with_train(target_sparsity=cell.t, seed=cell.seed)
    cell_ctx = RunContext(run_config, ctx.model, ctx.suite)
    started = time.perf_counter()
    delta = finetune(cell_ctx, theta, cell.method, task)
    wall = time.perf_counter() - started
    return analysis.CellResult(
        accuracy=evaluate_diff(cell_ctx, theta, delta, task),
        nonzero_fraction=delta.nonzero_fraction,
        zero_group_fraction=analysis.zero_group_fraction(delta, default_grouping(delta.space)),
        wall_seconds=wall,
    )


def recorded_cell(ctx, theta, task, cell):
    """run_cell bookkept as a SWEEP_CELL TrainingRun."""
    with track_run(
        TrainingRun.Kind.SWEEP_CELL,
        task=task,
        method=cell.method,
        seed=cell.seed,
        config=ctx.config.with_train(target_sparsity=cell.t, seed=cell.seed).as_dict(),
    ) as recorder:
        result = run_cell(ctx, theta, task, cell)
        recorder.complete()
    return result


def celery_runner(base_path, config, task):
    """Sweep runner dispatching every cell to the workers, collected in cell order."""
    from .tasks import run_sweep_cell

    def runner(_run_cell, cells):
        pending = [
            run_sweep_cell.delay(str(base_path), config, task, cell.t, cell.method, cell.seed)
            for cell in cells
        ]
        results = []
        for cell, async_result in zip(cells, pending):
            try:
                payload = async_result.get(timeout=settings.DIFFPRUNE_SWEEP_TIMEOUT_SECONDS)
            except Exception as exc:
                raise SweepCellError(cell.t, cell.method, cell.seed, exc) from exc
            results.append(analysis.CellResult(**payload))
        return results

    return runner


def sweep(ctx, checkpoint, *, base_path=None, use_workers=False):
    """Tidy rows over every configured task, each tagged with its task name."""
    spec = ctx.config.sweep
    rows = []
    for task in spec.tasks:
        runner = None
        if use_workers:
            runner = celery_runner(base_path, ctx.config.as_dict(), task)

        def cell_fn(cell, task=task):
            return recorded_cell(ctx, checkpoint.theta, task, cell)

        for row in analysis.sparsity_sweep(cell_fn, spec.sparsities, spec.methods, spec.seeds, runner=runner):
            rows.append({"task": task, **row.as_dict()})
    return rows


def cell_payload(base_path, config, task, t, method, seed):
    """Worker side of one sweep cell: rebuild the context from files and run it."""
    checkpoint = load_checkpoint(base_path)
    ctx = open_checkpoint(checkpoint, overrides=config)
    result = recorded_cell(ctx, checkpoint.theta, task, analysis.SweepCell(t, method, seed))
    return asdict(result)
