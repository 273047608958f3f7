"""Training loops: episodic meta-training with optional augmentation,
meta-test fine-tuning, and the joint multi-task baseline.

One outer step of meta-training draws, per training task, a fresh support
batch for every inner SGD step plus one query batch (all from the task's
train split). Augmentation hooks plug in here:

  * metamix: each task also contributes the gradient of a mixed query
    batch; the task's meta-loss is the mean of the plain and mixed query
    losses, so forcing the coefficient to 1 reproduces the unaugmented
    trajectory bit for bit;
  * taskmix: the drawn batches of random task pairs are blended into
    synthetic tasks appended to the step's task set, each adapted and
    differentiated exactly like a real task.

Per-task meta-gradients are summed and applied in a single Adam update at
the cosine-annealed learning rate. Every random draw comes from a substream
keyed by (purpose, consumer), so toggling any augmentation never perturbs
the draws of the base algorithm.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .config import AUG_BOTH, AUG_METAMIX, AUG_TASKMIX, RunConfig
from .data import Batch, Dataset, Task, full_split_batch, sample_batch
from .data import ROLE_META_TEST
from .errors import DataError, NumericError, TrainingDivergedError, UsageError
from .metrics import split_loss, split_macro_f1
from .mixing import metamix_augment, taskmix_synthesize
from .nn import (
    EXACT,
    AdaptationTrace,
    Geometry,
    ModelParams,
    TraceStep,
    backprop_through_trace,
    backward,
    forward,
    init_params,
    tree_add,
    tree_map,
    weighted_ce,
)
from .optim import (
    MAXIMIZE,
    MINIMIZE,
    AdamState,
    EarlyStopper,
    adam_step,
    cosine_lr,
    sgd_step,
)
from .rng import StreamBundle


@dataclass
class TrainedModel:
    """Result of a training stage: best-snapshot parameters plus bookkeeping.

    params always hold the early stopper's best snapshot (falling back to
    the final parameters when no evaluation ever ran). stopped_at is the
    number of optimization steps actually executed.
    """

    params: ModelParams
    history: list[dict]
    stopped_at: int
    best_step: int
    best_value: float


class _HistoryLog:
    """Append-per-record JSON lines writer; inert when no path is given."""

    def __init__(self, path):
        self.fh = open(path, "w") if path else None

    def write(self, record: dict) -> None:
        if self.fh is not None:
            self.fh.write(json.dumps(record, sort_keys=True) + "\n")

    def close(self) -> None:
        if self.fh is not None:
            self.fh.close()
            self.fh = None


def model_geometry(dataset: Dataset, cfg: RunConfig) -> Geometry:
    return Geometry(dataset.dim, list(cfg.model.hidden), dataset.c_max)


def initial_params(dataset: Dataset, cfg: RunConfig, seed: int) -> ModelParams:
    """Fresh Glorot initialization from the seed's init substream."""
    return init_params(model_geometry(dataset, cfg), StreamBundle(seed).init())


def inner_adapt(
    params: ModelParams, support_batches, lr: float, record: bool
) -> AdaptationTrace:
    """n SGD steps from params, one support batch per step.

    The visited parameters and batches are recorded when `record` is set,
    which is what exact meta-gradients unroll through.
    """
    steps = [] if record else None
    cur = params
    for batch in support_batches:
        _, grads = backward(cur, batch)
        if record:
            steps.append(TraceStep(params=cur, batch=batch, lr=lr))
        cur = sgd_step(cur, grads, lr)
    return AdaptationTrace(n_steps=len(support_batches), adapted=cur, steps=steps)


def _unit_gradient(theta, support, query, cfg: RunConfig, metamix_rng):
    """Meta-loss and meta-gradient of one task unit (real or synthetic)."""
    mode = cfg.meta.grad_mode
    trace = inner_adapt(theta, support, cfg.meta.inner_lr, record=(mode == EXACT))
    loss, grads = backward(trace.adapted, query)
    if mode == EXACT:
        grads = backprop_through_trace(grads, trace)
    if metamix_rng is not None:
        mixed = metamix_augment(query, cfg.mix, metamix_rng)
        mixed_loss, mixed_grads = backward(trace.adapted, mixed)
        if mode == EXACT:
            mixed_grads = backprop_through_trace(mixed_grads, trace)
        grads = tree_map(lambda a, b: 0.5 * (a + b), grads, mixed_grads)
        loss = 0.5 * (loss + mixed_loss)
    return loss, grads


def meta_step(
    theta: ModelParams,
    adam_state: AdamState,
    tasks: list[Task],
    cfg: RunConfig,
    bundle: StreamBundle,
):
    """One outer update over all real tasks plus any synthetic ones.

    Returns (theta', adam_state', stats). The outer step index is
    adam_state.t, which also drives the cosine schedule.
    """
    if not tasks:
        raise DataError("meta_step requires at least one meta-training task")
    step = adam_state.t
    aug = cfg.meta.augmentation
    use_metamix = aug in (AUG_METAMIX, AUG_BOTH)
    use_taskmix = aug in (AUG_TASKMIX, AUG_BOTH)

    per_task = []
    for task in tasks:
        rng = bundle.batch(task.id)
        support = [
            sample_batch(task, "train", cfg.meta.batch_size, rng)
            for _ in range(cfg.meta.inner_steps)
        ]
        query = sample_batch(task, "train", cfg.meta.batch_size, rng)
        per_task.append((support, query))

    units = [(task.id, sup, query) for task, (sup, query) in zip(tasks, per_task)]
    if use_taskmix:
        synthetic = taskmix_synthesize(per_task, cfg.mix, bundle.beta("taskmix"))
        units += [(f"synthetic/{k}", s.support, s.query) for k, s in enumerate(synthetic)]

    total_loss = 0.0
    total_grads = None
    try:
        for key, support, query in units:
            metamix_rng = bundle.beta(f"metamix/{key}") if use_metamix else None
            loss, grads = _unit_gradient(theta, support, query, cfg, metamix_rng)
            total_loss += loss
            total_grads = grads if total_grads is None else tree_add(total_grads, grads)
    except NumericError as exc:
        raise TrainingDivergedError(step, f"outer step {step}: {exc}") from exc
    if not math.isfinite(total_loss):
        raise TrainingDivergedError(step, f"non-finite meta-loss at outer step {step}")

    lr = cosine_lr(step, cfg.schedule)
    adam_state, theta = adam_step(adam_state, theta, total_grads, lr)
    stats = {"step": step, "lr": lr, "mean_task_loss": total_loss / len(units)}
    return theta, adam_state, stats


def _mean_validation_loss(theta: ModelParams, tasks: list[Task]) -> float:
    return sum(split_loss(theta, t, "validation") for t in tasks) / len(tasks)


def meta_train(dataset: Dataset, cfg: RunConfig, seed: int, log_path=None) -> TrainedModel:
    """Meta-train up to cfg.meta.max_steps outer updates.

    Every cfg.meta.eval_every steps the mean validation-split loss over the
    training tasks is evaluated (at the current initialization, without
    adaptation); training stops after cfg.meta.patience consecutive
    non-improvements and the best snapshot is returned.
    """
    tasks = dataset.meta_train_tasks
    if not tasks:
        raise DataError("meta-training requires at least one meta_train task")
    bundle = StreamBundle(seed)
    theta = init_params(model_geometry(dataset, cfg), bundle.init())
    adam_state = AdamState.init(theta)
    stopper = EarlyStopper(patience=cfg.meta.patience, direction=MINIMIZE)
    log = _HistoryLog(log_path)
    history: list[dict] = []
    steps_run = 0
    try:
        for step in range(cfg.meta.max_steps):
            theta, adam_state, stats = meta_step(theta, adam_state, tasks, cfg, bundle)
            steps_run = step + 1
            if (step + 1) % cfg.meta.eval_every == 0:
                val = _mean_validation_loss(theta, tasks)
                if not math.isfinite(val):
                    raise TrainingDivergedError(step, f"non-finite validation loss at step {step}")
                stats["validation_loss"] = val
                history.append(stats)
                log.write(stats)
                if stopper.update(val, step, theta):
                    break
            else:
                history.append(stats)
                log.write(stats)
    finally:
        log.close()
    best = stopper.best_params if stopper.best_params is not None else theta
    best_value = stopper.best_value if stopper.best_value is not None else math.nan
    return TrainedModel(
        params=best,
        history=history,
        stopped_at=steps_run,
        best_step=stopper.best_step,
        best_value=best_value,
    )


def finetune(theta: ModelParams, task: Task, cfg: RunConfig, log_path=None) -> TrainedModel:
    """Adapt all parameters to one held-out task.

    Adam on the whole train split as a single deterministic batch; early
    stopping maximizes validation macro F1 (argmax masked to the task's own
    classes). The pre-training parameters participate as the baseline
    evaluation, so fine-tuning can never return something worse than what
    it started from.
    """
    if task.role != ROLE_META_TEST:
        raise UsageError(f"finetune targets meta_test tasks, got role {task.role!r}")
    batch = full_split_batch(task, "train")
    adam_state = AdamState.init(theta)
    stopper = EarlyStopper(patience=cfg.finetune.patience, direction=MAXIMIZE)
    stopper.update(split_macro_f1(theta, task, "validation"), -1, theta)
    params = theta
    log = _HistoryLog(log_path)
    history: list[dict] = []
    steps_run = 0
    try:
        for step in range(cfg.finetune.max_steps):
            loss, grads = backward(params, batch)
            if not math.isfinite(loss):
                raise TrainingDivergedError(step, f"non-finite loss at fine-tune step {step}")
            adam_state, params = adam_step(adam_state, params, grads, cfg.finetune.lr)
            steps_run = step + 1
            record = {"step": step, "lr": cfg.finetune.lr, "train_loss": loss}
            if (step + 1) % cfg.finetune.eval_every == 0:
                f1 = split_macro_f1(params, task, "validation")
                record["validation_macro_f1"] = f1
                history.append(record)
                log.write(record)
                if stopper.update(f1, step, params):
                    break
            else:
                history.append(record)
                log.write(record)
    except NumericError as exc:
        raise TrainingDivergedError(steps_run, f"fine-tune step {steps_run}: {exc}") from exc
    finally:
        log.close()
    return TrainedModel(
        params=stopper.best_params,
        history=history,
        stopped_at=steps_run,
        best_step=stopper.best_step,
        best_value=stopper.best_value,
    )


def _restrict(batch: Batch, n_classes: int) -> Batch:
    # drop padded label columns for a task-private head of width n_classes
    return Batch(x=batch.x, y=batch.y[:, :n_classes], w=batch.w[:n_classes])


def _mtl_validation_loss(neck, heads, tasks) -> float:
    total = 0.0
    for head, task in zip(heads, tasks):
        batch = _restrict(full_split_batch(task, "validation"), task.n_classes)
        model = ModelParams(layers=neck, head=head)
        total += weighted_ce(forward(model, batch.x), batch.y, batch.w)
    return total / len(tasks)


def mtl_train(dataset: Dataset, cfg: RunConfig, seed: int, log_path=None) -> ModelParams:
    """Joint multi-task pretraining of the shared trunk.

    Each step samples one batch per training task, runs it through the
    shared trunk and that task's private head (width = its own class
    count), sums the losses, and takes a single Adam step over everything.
    The private heads are discarded; the returned model is the best-snapshot
    trunk under a freshly initialized full-width head that was never
    trained.
    """
    tasks = dataset.meta_train_tasks
    if not tasks:
        raise DataError("mtl_train requires at least one meta_train task")
    bundle = StreamBundle(seed)
    init_rng = bundle.init()
    base = init_params(model_geometry(dataset, cfg), init_rng)
    neck_width = cfg.model.hidden[-1] if cfg.model.hidden else dataset.dim
    heads = [
        init_params(Geometry(neck_width, [], t.n_classes), init_rng).head for t in tasks
    ]
    fresh_head = base.head
    state = [base.layers, heads]
    adam_state = AdamState.init(state)
    stopper = EarlyStopper(patience=cfg.meta.patience, direction=MINIMIZE)
    log = _HistoryLog(log_path)
    try:
        for step in range(cfg.meta.max_steps):
            neck, cur_heads = state
            total_loss = 0.0
            neck_grads = None
            head_grads = []
            try:
                for head, task in zip(cur_heads, tasks):
                    batch = _restrict(
                        sample_batch(task, "train", cfg.meta.batch_size, bundle.batch(task.id)),
                        task.n_classes,
                    )
                    loss, grads = backward(ModelParams(layers=neck, head=head), batch)
                    total_loss += loss
                    head_grads.append(grads.head)
                    neck_grads = (
                        grads.layers
                        if neck_grads is None
                        else tree_add(neck_grads, grads.layers)
                    )
            except NumericError as exc:
                raise TrainingDivergedError(step, f"outer step {step}: {exc}") from exc
            if not math.isfinite(total_loss):
                raise TrainingDivergedError(step, f"non-finite joint loss at step {step}")
            lr = cosine_lr(adam_state.t, cfg.schedule)
            adam_state, state = adam_step(adam_state, state, [neck_grads, head_grads], lr)
            record = {"step": step, "lr": lr, "mean_task_loss": total_loss / len(tasks)}
            if (step + 1) % cfg.meta.eval_every == 0:
                val = _mtl_validation_loss(state[0], state[1], tasks)
                record["validation_loss"] = val
                log.write(record)
                if stopper.update(val, step, state):
                    break
            else:
                log.write(record)
    finally:
        log.close()
    best_state = stopper.best_params if stopper.best_params is not None else state
    return ModelParams(layers=best_state[0], head=fresh_head)
