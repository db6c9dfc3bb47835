"""Built-in benchmark model documents (JSON-schema dicts) at desk scale."""

from __future__ import annotations


def _conv(name: str, src: str, in_ch: int, out_ch: int, k: int,
          stride: int = 1, dilation: int = 1) -> dict:
    return {
        "name": name,
        "kind": "conv2d",
        "params": {"out_ch": out_ch, "in_ch": in_ch, "kernel_h": k, "kernel_w": k,
                   "stride": stride, "dilation": dilation},
        "inputs": [src],
    }


def _weight(shape, seed: int) -> dict:
    return {"shape": list(shape), "data": f"random:{seed}"}


def conv_relu(size: int = 32, in_ch: int = 3, out_ch: int = 8, seed: int = 0) -> dict:
    return {
        "input": {"shape": [1, in_ch, size, size], "dtype": "i8"},
        "layers": [
            _conv("conv1", "input", in_ch, out_ch, 3),
            {"name": "relu1", "kind": "relu", "params": {}, "inputs": ["conv1"]},
        ],
        "weights": {"conv1.weight": _weight((out_ch, in_ch, 3, 3), seed)},
    }


def cascade_conv(size: int = 32, in_ch: int = 3, mid_ch: int = 8, seed: int = 0) -> dict:
    return {
        "input": {"shape": [1, in_ch, size, size], "dtype": "i8"},
        "layers": [
            _conv("conv1", "input", in_ch, mid_ch, 3),
            {"name": "relu1", "kind": "relu", "params": {}, "inputs": ["conv1"]},
            _conv("conv2", "relu1", mid_ch, mid_ch, 3),
            {"name": "relu2", "kind": "relu", "params": {}, "inputs": ["conv2"]},
        ],
        "weights": {
            "conv1.weight": _weight((mid_ch, in_ch, 3, 3), seed),
            "conv2.weight": _weight((mid_ch, mid_ch, 3, 3), seed + 1),
        },
    }


def residual(size: int = 32, in_ch: int = 3, ch: int = 8, seed: int = 0) -> dict:
    """Conv feeding a fork whose long branch (relu + 1x1 conv) rejoins an add."""
    return {
        "input": {"shape": [1, in_ch, size, size], "dtype": "i8"},
        "layers": [
            _conv("conv1", "input", in_ch, ch, 3),
            {"name": "relu1", "kind": "relu", "params": {}, "inputs": ["conv1"]},
            _conv("conv2", "relu1", ch, ch, 1),
            {"name": "add1", "kind": "elementwise_add", "params": {},
             "inputs": ["conv2", "conv1"]},
        ],
        "weights": {
            "conv1.weight": _weight((ch, in_ch, 3, 3), seed),
            "conv2.weight": _weight((ch, ch, 1, 1), seed + 1),
        },
    }


def linear(in_features: int = 64, out_features: int = 16, batch: int = 2,
           seed: int = 0) -> dict:
    return {
        "input": {"shape": [batch, in_features], "dtype": "i8"},
        "layers": [
            {"name": "fc1", "kind": "linear",
             "params": {"in_features": in_features, "out_features": out_features},
             "inputs": ["input"]},
        ],
        "weights": {"fc1.weight": _weight((in_features, out_features), seed)},
    }


def feed_forward(in_features: int = 64, hidden: int = 16, batch: int = 2,
                 seed: int = 0) -> dict:
    return {
        "input": {"shape": [batch, in_features], "dtype": "i8"},
        "layers": [
            {"name": "fc1", "kind": "linear",
             "params": {"in_features": in_features, "out_features": hidden},
             "inputs": ["input"]},
            {"name": "relu1", "kind": "relu", "params": {}, "inputs": ["fc1"]},
            {"name": "fc2", "kind": "linear",
             "params": {"in_features": hidden, "out_features": in_features},
             "inputs": ["relu1"]},
        ],
        "weights": {
            "fc1.weight": _weight((in_features, hidden), seed),
            "fc2.weight": _weight((hidden, in_features), seed + 1),
        },
    }


BENCHMARKS = {
    "conv_relu": conv_relu,
    "cascade_conv": cascade_conv,
    "residual": residual,
    "linear": linear,
    "feed_forward": feed_forward,
}


def build(name: str, seed: int = 0, **kwargs) -> dict:
    if name not in BENCHMARKS:
        raise KeyError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}")
    return BENCHMARKS[name](seed=seed, **kwargs)
