"""Network checkpoints.

An ``.npz`` archive holding a JSON manifest (``__meta__``: format version,
input shape, tap points and per-layer configs) plus one little-endian float64
array per parameter, polynomial coefficient vector and min-max statistic.
Round trips are bit-exact.
"""

import io
import json

import numpy as np

from .activations import POLYNOMIAL, Activation, ActivationSpec
from .errors import FormatError
from .layers import AvgPool2d, Conv2d, Dense, Flatten
from .minmax import MinMaxNorm, MinMaxState
from .network import Network

FORMAT_VERSION = 1
LE_F64 = np.dtype("<f8")


def _layer_arrays(i, layer):
    arrays = {f"L{i}.{name}": p.data for name, p in layer.params().items()}
    if isinstance(layer, Activation) and layer.spec.kind == POLYNOMIAL:
        arrays[f"L{i}.coefficients"] = np.array(layer.spec.coefficients)
    if isinstance(layer, MinMaxNorm) and layer.state.initialized:
        arrays[f"L{i}.running_min"] = layer.state.running_min
        arrays[f"L{i}.running_max"] = layer.state.running_max
    return {k: np.asarray(v, dtype=LE_F64) for k, v in arrays.items()}


def to_bytes(net):
    meta = {
        "format_version": FORMAT_VERSION,
        "input_shape": None if net.input_shape is None else list(net.input_shape),
        "tap_points": list(net.tap_points),
        "layers": [dict(layer.config(), frozen=layer.frozen) for layer in net.layers],
    }
    arrays = {}
    for i, layer in enumerate(net.layers):
        arrays.update(_layer_arrays(i, layer))
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
    return buf.getvalue()


def save(net, path):
    with open(path, "wb") as f:
        f.write(to_bytes(net))


def _build_layer(i, cfg, arrays):
    kind = cfg["kind"]
    get = lambda name: arrays[f"L{i}.{name}"]  # noqa: E731
    if kind == "dense":
        return Dense(cfg["in_features"], cfg["out_features"], weight=get("weight"), bias=get("bias"))
    if kind == "conv2d":
        return Conv2d(cfg["in_channels"], cfg["out_channels"], cfg["kernel_size"],
                      padding=cfg["padding"], weight=get("weight"), bias=get("bias"))
    if kind == "avgpool2d":
        return AvgPool2d(cfg["kernel_size"])
    if kind == "flatten":
        return Flatten()
    if kind == "activation":
        spec = cfg["spec"]
        if spec["kind"] == POLYNOMIAL:
            return Activation(ActivationSpec.polynomial(get("coefficients")))
        return Activation(ActivationSpec(spec["kind"]))
    if kind == "minmax_norm":
        s = cfg["state"]
        state = MinMaxState(s["alpha"], s["beta"], s["gamma"], s["epsilon"],
                            initialized=s["initialized"], updates=s["updates"])
        if state.initialized:
            state.running_min = get("running_min").copy()
            state.running_max = get("running_max").copy()
        return MinMaxNorm(state, cfg["eval_mode"])
    raise FormatError(f"unknown layer kind {kind!r} in checkpoint")


def from_bytes(raw, source="<bytes>"):
    try:
        archive = np.load(io.BytesIO(raw), allow_pickle=False)
        meta = json.loads(archive["__meta__"].tobytes().decode())
    except (ValueError, KeyError, OSError) as exc:
        raise FormatError(f"{source}: not a network checkpoint ({exc})") from exc
    if meta.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {meta.get('format_version')}")
    arrays = {k: archive[k] for k in archive.files if k != "__meta__"}
    layers = []
    for i, cfg in enumerate(meta["layers"]):
        layer = _build_layer(i, cfg, arrays)
        layer.frozen = bool(cfg.get("frozen", False))
        layers.append(layer)
    return Network(layers, meta["tap_points"], meta["input_shape"])


def load(path):
    with open(path, "rb") as f:
        return from_bytes(f.read(), source=str(path))
