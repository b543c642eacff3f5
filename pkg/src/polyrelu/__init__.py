"""Polynomial replacements for ReLU and escaping-activation diagnostics.

A small float64 numpy engine (dense, conv, pool, flatten layers with
reverse-mode gradients) carrying four ReLU-replacement strategies: Taylor
substitution, least-squares polynomial fits tuned by Bayesian optimisation,
quadratic imitation learning (QuaIL), and QuaIL with approximate min-max
normalisation.
"""

from .activations import ActivationSpec, Activation, apply, derivative, replace_all
from .architectures import build, lenet, mlp
from .bayesopt import BayesOptState, gp_fit, run_search, suggest_next
from .diagnostics import AccuracyReport, LayerTrace, compare_traces, evaluate, trace_forward
from .errors import FormatError, NumericError, StructuralError, UsageError
from .minmax import MinMaxNorm, MinMaxState
from .network import Network
from .polyfit import PolyCoefficients, fit_error, fit_relu
from .quail import QuailSchedule, run_quail
from .tensor import Tensor
from .training import SGD, TrainConfig

__version__ = "0.1.0"

__all__ = [
    "AccuracyReport", "Activation", "ActivationSpec", "BayesOptState", "FormatError",
    "LayerTrace", "MinMaxNorm", "MinMaxState", "Network", "NumericError", "PolyCoefficients",
    "QuailSchedule", "SGD", "StructuralError", "Tensor", "TrainConfig", "UsageError", "apply",
    "build", "compare_traces", "derivative", "evaluate", "fit_error", "fit_relu", "gp_fit",
    "lenet", "mlp", "replace_all", "run_quail", "run_search", "suggest_next", "trace_forward",
]
