"""Quadratic imitation learning.

A trained ReLU teacher is cloned into a Quad-activated student one stage at a
time.  Each new stage is trained to reproduce the teacher's representation at
that depth while all earlier stages stay frozen.  The finished student is then
fine-tuned with cross-entropy, unfreezing stages from the deepest one down.

A stage is one parameterised layer plus the parameter-free layers that follow
it (activation, pooling, flatten); parameter-free layers in front of the first
parameterised layer form their own stage.
"""

import csv
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import checkpoint
from .activations import RELU, Activation, ActivationSpec
from .diagnostics import evaluate
from .errors import UsageError
from .minmax import MinMaxNorm, MinMaxState
from .network import Network
from .training import SGD, TrainConfig, fit_classifier, minibatches, mse_loss, softmax_cross_entropy

log = logging.getLogger(__name__)


@dataclass
class QuailSchedule:
    distill_epochs: int = 2
    finetune_epochs: int = 1
    # stop a stage early once the epoch loss improves by less than this
    # (relative) for two consecutive epochs
    mse_threshold: float = 1e-3
    distill_lr: float = 0.01
    finetune_lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 64
    lr_decay: float = 1.0
    # global gradient-norm cap for distillation and fine-tuning; None disables
    clip_norm: float = 1.0
    # stages unfrozen beyond the last one during fine-tuning; None unfreezes all
    finetune_extra_groups: int = None
    seed: int = 0

    def __post_init__(self):
        if self.distill_epochs < 1 or self.finetune_epochs < 1 or self.batch_size < 1:
            raise ValueError("epoch counts and batch size must be at least 1")
        if not self.mse_threshold > 0:
            raise ValueError("mse_threshold must be positive")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")
        if self.finetune_extra_groups is not None and self.finetune_extra_groups < 0:
            raise ValueError("finetune_extra_groups must be non-negative")

    def to_dict(self):
        return asdict(self)


def stage_groups(net):
    """Split layer indices of ``net`` into stages (see module docstring)."""
    groups, current = [], []
    for i, layer in enumerate(net.layers):
        if layer.params() and current:
            groups.append(current)
            current = []
        current.append(i)
    if current:
        groups.append(current)
    return groups


@dataclass
class QuailRun:
    teacher: Network
    student: Network
    groups: list
    minmax: MinMaxState = None
    student_groups: list = field(default_factory=list)
    stage: object = 0
    stage_mse: list = field(default_factory=list)
    history: list = field(default_factory=list)
    diverged: bool = False
    test_report: object = None

    @property
    def stages_done(self):
        return len(self.stage_mse)

    def log(self, stage, epoch, loss, max_abs_tap):
        diverged = not np.isfinite(loss)
        self.history.append({"stage": str(stage), "epoch": epoch, "loss": float(loss),
                             "max_abs_tap": float(max_abs_tap), "diverged": diverged})
        if diverged:
            self.diverged = True
        return diverged

    def write_history(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, ["stage", "epoch", "loss", "max_abs_tap", "diverged"])
            writer.writeheader()
            for row in self.history:
                writer.writerow(dict(row, loss=repr(row["loss"]), max_abs_tap=repr(row["max_abs_tap"]),
                                     diverged=int(row["diverged"])))


def start_run(teacher, minmax=None):
    """Empty student; ``minmax`` (a template state) turns on min-max normalisation
    in front of every Quad."""
    student = Network([], input_shape=None)
    return QuailRun(teacher=teacher, student=student, groups=stage_groups(teacher), minmax=minmax)


def _student_layers_for(teacher_layers, minmax):
    out = []
    for layer in teacher_layers:
        clone = Network([layer]).copy().layers[0]
        clone.frozen = False
        if isinstance(clone, Activation) and clone.spec.kind == RELU:
            if minmax is not None:
                template = MinMaxState(minmax.alpha, minmax.beta, minmax.gamma, minmax.epsilon)
                out.append(MinMaxNorm(template))
            clone = Activation(ActivationSpec.quad())
        out.append(clone)
    return out


def _teacher_prefix(run, j):
    last = run.groups[j][-1]
    return Network(run.teacher.layers[:last + 1])


def distill_stage(run, j, x, schedule, checkpoint_dir=None):
    """Clone teacher stage ``j`` into the student and train it on the MSE between
    the student's output and the teacher's representation at the same depth."""
    if run.diverged:
        raise UsageError("run has diverged; no further stages")
    if j != run.stages_done:
        raise UsageError(f"stage {j} requested but {run.stages_done} stages are complete")
    for layer in run.student.layers:
        layer.frozen = True
    new_layers = _student_layers_for([run.teacher.layers[i] for i in run.groups[j]], run.minmax)
    start = len(run.student.layers)
    run.student.layers.extend(new_layers)
    run.student_groups.append(list(range(start, len(run.student.layers))))
    run.stage = j
    teacher_prefix = _teacher_prefix(run, j)

    trainable = any(l.params() for l in new_layers)
    if not trainable:
        n = min(len(x), schedule.batch_size)
        target, _ = teacher_prefix.forward(x[:n], record=False)
        out, _ = run.student.forward(x[:n], train=True, record=False)
        loss, _ = mse_loss(out, target)
        run.log(j, 0, loss, np.max(np.abs(out)))
        run.stage_mse.append(loss)
        return run

    opt = SGD(schedule.distill_lr, schedule.momentum, schedule.clip_norm)
    rng = np.random.default_rng(schedule.seed + 1000 * (j + 1))
    prev, slow = None, 0
    loss_epoch = np.nan
    for epoch in range(schedule.distill_epochs):
        total, count, peak = 0.0, 0, 0.0
        for idx in minibatches(len(x), schedule.batch_size, rng):
            target, _ = teacher_prefix.forward(x[idx], record=False)
            out, _ = run.student.forward(x[idx], train=True)
            loss, grad = mse_loss(out, target)
            with np.errstate(invalid="ignore"):
                peak = max(peak, float(np.max(np.abs(out))))
            if not np.isfinite(loss):
                total, count = loss, 1
                break
            run.student.backward(grad)
            opt.step(run.student)
            total += loss * len(idx)
            count += len(idx)
        loss_epoch = total / count
        log.info("distill stage %d epoch %d  mse %.6g", j, epoch, loss_epoch)
        if run.log(j, epoch, loss_epoch, peak):
            log.warning("stage %d diverged", j)
            return run
        opt.learning_rate *= schedule.lr_decay
        if prev is not None and prev - loss_epoch < schedule.mse_threshold * prev:
            slow += 1
            if slow >= 2:
                break
        else:
            slow = 0
        prev = loss_epoch
    run.stage_mse.append(loss_epoch)
    if checkpoint_dir is not None:
        checkpoint.save(run.student, os.path.join(checkpoint_dir, f"student_stage{j}.npz"))
    return run


def distill_all(run, x, schedule, checkpoint_dir=None):
    for j in range(run.stages_done, len(run.groups)):
        distill_stage(run, j, x, schedule, checkpoint_dir)
        if run.diverged:
            break
    if not run.diverged:
        run.student.input_shape = run.teacher.input_shape
    return run


def finetune(run, x, y, schedule, x_test=None, y_test=None, checkpoint_dir=None):
    """Cross-entropy training of the full student, unfreezing one stage per step
    from the deepest stage towards the input."""
    if run.diverged:
        raise UsageError("cannot fine-tune a diverged run")
    if run.stages_done != len(run.groups):
        raise UsageError("fine-tuning needs every stage distilled first")
    param_groups = [g for g in run.student_groups
                    if any(run.student.layers[i].params() for i in g)]
    steps = len(param_groups)
    if schedule.finetune_extra_groups is not None:
        steps = min(steps, 1 + schedule.finetune_extra_groups)
    for layer in run.student.layers:
        layer.frozen = True
    rng = np.random.default_rng(schedule.seed + 7)
    opt = SGD(schedule.finetune_lr, schedule.momentum, schedule.clip_norm)
    for k in range(1, steps + 1):
        for i in param_groups[-k]:
            run.student.layers[i].frozen = False
        # every unfreeze step restarts the learning-rate schedule
        opt.learning_rate = schedule.finetune_lr
        run.stage = f"finetune-{k}"
        for epoch in range(schedule.finetune_epochs):
            total, count, peak = 0.0, 0, 0.0
            for idx in minibatches(len(x), schedule.batch_size, rng):
                logits, _ = run.student.forward(x[idx], train=True)
                loss, grad = softmax_cross_entropy(logits, y[idx])
                with np.errstate(invalid="ignore"):
                    peak = max(peak, float(np.max(np.abs(logits))))
                if not np.isfinite(loss):
                    total, count = loss, 1
                    break
                run.student.backward(grad)
                opt.step(run.student)
                total += loss * len(idx)
                count += len(idx)
            log.info("finetune step %d epoch %d  ce %.6g", k, epoch, total / count)
            if run.log(run.stage, epoch, total / count, peak):
                log.warning("fine-tuning diverged at step %d", k)
                return run
            opt.learning_rate *= schedule.lr_decay
        if checkpoint_dir is not None:
            checkpoint.save(run.student, os.path.join(checkpoint_dir, f"student_finetune{k}.npz"))
    if x_test is not None:
        run.test_report = evaluate(run.student, x_test, y_test)
    return run


def run_quail(teacher, x, y, schedule, minmax=None, x_test=None, y_test=None,
              checkpoint_dir=None):
    """Full pipeline: distill every stage, then fine-tune (skipped on divergence)."""
    run = start_run(teacher, minmax)
    distill_all(run, x, schedule, checkpoint_dir)
    if not run.diverged:
        finetune(run, x, y, schedule, x_test, y_test, checkpoint_dir)
    return run


def train_baseline(net, x, y, cfg, x_test=None, y_test=None, gate=None):
    """Train a ReLU network with cross-entropy; a missed ``gate`` only logs a warning."""
    history = fit_classifier(net, x, y, cfg)
    report = None
    if x_test is not None:
        report = evaluate(net, x_test, y_test)
        if gate is not None and report.accuracy_all < gate:
            log.warning("baseline accuracy %.4f below gate %.4f", report.accuracy_all, gate)
    return net, history, report


__all__ = [
    "QuailSchedule", "QuailRun", "stage_groups", "start_run", "distill_stage", "distill_all",
    "finetune", "run_quail", "train_baseline", "TrainConfig",
]
