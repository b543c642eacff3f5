"""Escaping-activation instrumentation and NaN-aware accuracy."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .activations import Activation
from .errors import StructuralError
from .minmax import MinMaxNorm


def is_nonlinear(layer):
    return isinstance(layer, (Activation, MinMaxNorm))


@dataclass
class LayerTrace:
    """Max |activation| after each nonlinear layer (``+inf`` marks non-finite output)."""

    layer_indices: list
    maxima: list
    nan_first_layer: int = None
    batch_id: int = None

    @property
    def nonfinite(self):
        return [not np.isfinite(m) for m in self.maxima]


@dataclass
class AccuracyReport:
    total: int
    correct: int
    nan_outputs: int
    accuracy_all: float = field(init=False)
    accuracy_finite_only: float = field(init=False)

    def __post_init__(self):
        self.accuracy_all = self.correct / self.total if self.total else 0.0
        finite = self.total - self.nan_outputs
        self.accuracy_finite_only = self.correct / finite if finite else None

    def to_dict(self):
        return {"total": self.total, "correct": self.correct, "nan_outputs": self.nan_outputs,
                "accuracy_all": self.accuracy_all,
                "accuracy_finite_only": self.accuracy_finite_only}


def trace_forward(net, x, batch_size=1000, train=False):
    """Run ``net`` over ``x`` recording the dataset-wide max |output| of every
    activation / min-max layer.  The forward computation itself is untouched."""
    indices = [i for i, layer in enumerate(net.layers) if is_nonlinear(layer)]
    maxima = dict.fromkeys(indices, 0.0)

    def hook(i, layer, out):
        if i in maxima:
            with np.errstate(invalid="ignore"):
                m = np.max(np.abs(out)) if out.size else 0.0
            if not np.isfinite(m):
                m = np.inf
            maxima[i] = max(maxima[i], float(m))

    for start in range(0, len(x), batch_size):
        net.forward(x[start:start + batch_size], train=train, record=False, hook=hook)
    values = [maxima[i] for i in indices]
    first = next((i for i in indices if maxima[i] == np.inf), None)
    return LayerTrace(indices, values, first, None if len(x) > batch_size else 0)


def _counts(logits, y):
    finite = np.isfinite(logits).all(axis=1)
    with np.errstate(invalid="ignore"):
        pred = np.argmax(np.where(np.isnan(logits), -np.inf, logits), axis=1)
    correct = int(np.sum((pred == y) & finite))
    return len(y), correct, int(np.sum(~finite))


def report_from_logits(logits, y):
    """Samples whose logits contain any non-finite value count as incorrect."""
    return AccuracyReport(*_counts(np.asarray(logits), np.asarray(y)))


def evaluate(net, x, y, batch_size=1000):
    total = correct = nan = 0
    for start in range(0, len(x), batch_size):
        logits, _ = net.forward(x[start:start + batch_size], train=False, record=False)
        t, c, n = _counts(logits, y[start:start + batch_size])
        total += t
        correct += c
        nan += n
    return AccuracyReport(total, correct, nan)


def compare_traces(runs):
    """Align per-layer maxima of several labelled traces.

    Returns a list of rows ``{"layer": k, label: max, ...}``, one per nonlinear
    layer position.
    """
    runs = list(runs)
    if not runs:
        return []
    depth = len(runs[0][1].maxima)
    for label, trace in runs:
        if len(trace.maxima) != depth:
            raise StructuralError(f"trace {label!r} has {len(trace.maxima)} layers, expected {depth}")
    return [dict({"layer": k}, **{label: trace.maxima[k] for label, trace in runs})
            for k in range(depth)]


def format_table(rows):
    if not rows:
        return ""
    labels = [k for k in rows[0] if k != "layer"]
    lines = ["layer  " + "  ".join(f"{l:>14}" for l in labels)]
    for row in rows:
        lines.append(f"{row['layer']:>5}  " + "  ".join(f"{row[l]:>14.6g}" for l in labels))
    return "\n".join(lines)


def write_trace_csv(path, runs):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["config_label", "layer_index", "max_abs_activation", "is_nonfinite"])
        for label, trace in runs:
            for idx, m in zip(trace.layer_indices, trace.maxima):
                writer.writerow([label, idx, repr(float(m)), int(not np.isfinite(m))])


def escaping_demo(depth=6, width=16, scale=3.0, n_fit=2048, n_eval=512, batch_size=64, seed=0):
    """Approximate vs true min-max normalisation on shifted inputs.

    Builds ``depth`` blocks of Dense -> MinMaxNorm -> Quad, fits the running
    statistics on standard-normal inputs in train mode, then traces both the
    approximate network and its true-extremes twin on inputs scaled by
    ``scale``.  Returns ``(rows, approx_trace, true_trace, alpha_minus_beta)``.
    """
    from .activations import ActivationSpec
    from .layers import Dense
    from .network import Network

    rng = np.random.default_rng(seed)
    layers = []
    for _ in range(depth):
        layers += [Dense(width, width, rng=rng), MinMaxNorm(), Activation(ActivationSpec.quad())]
    approx = Network(layers)
    x_fit = rng.normal(size=(n_fit, width))
    for start in range(0, n_fit, batch_size):
        approx.forward(x_fit[start:start + batch_size], train=True, record=False)
    twin = approx.copy()
    for layer in twin.layers:
        if isinstance(layer, MinMaxNorm):
            layer.eval_mode = "true"
    x_eval = scale * rng.normal(size=(n_eval, width))
    a_trace = trace_forward(approx, x_eval)
    t_trace = trace_forward(twin, x_eval)
    state = layers[1].state
    rows = compare_traces([("approx", a_trace), ("true", t_trace)])
    return rows, a_trace, t_trace, state.alpha - state.beta
