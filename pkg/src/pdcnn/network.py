"""Executable parallel network: parameters, forward/backward, model files.

A PdcnnNet instantiates every branch of a PdcnnSpec as layer objects, runs
them on the same input batch, concatenates the flattened final feature maps,
and applies the shared 2-way head. Weights start Gaussian(0, 0.01), biases
zero, drawn in declaration order from one seeded stream. Model files ("PDM1")
carry a version tag, the architecture description, an index of tensor names,
and the parameter tensors as concatenated PDT1 payloads.
"""

import struct

import numpy as np

from . import tensor as T
from .arch import (PdcnnSpec, arch_dict_from_spec, shape_check,
                   spec_from_arch_dict)
from .layers import Conv2d, FullyConnected, Lrn, MaxPool, Relu

# Image files carry values in [0, 1]; the network sees them centered and in
# raw-pixel scale, the convention the Gaussian(0, 0.01) initialization and
# the LRN constants of this architecture family assume.
INPUT_OFFSET = 0.5
INPUT_SCALE = 255.0

PDM1_MAGIC = b"PDM1"
PDM1_VERSION = 1

_META_KEY_ORDER = ("depths", "variants", "input_channels", "input_size",
                   "conv1_stride", "conv1_padding", "pool_window",
                   "pool_stride", "lrn_radius", "lrn_k", "lrn_alpha",
                   "lrn_beta", "filter_scale", "init_sigma", "dtype")


def _build_layer(layer_spec, in_channels, rng, dtype, sigma):
    if layer_spec.kind == "conv":
        w = T.gaussian_init(
            (layer_spec.filters, in_channels, layer_spec.kernel, layer_spec.kernel),
            sigma, rng, dtype=dtype)
        b = T.tensor_new((layer_spec.filters,), 0.0, dtype=dtype)
        return Conv2d(w, b, stride=layer_spec.stride, padding=layer_spec.padding)
    if layer_spec.kind == "pool":
        return MaxPool(layer_spec.window, layer_spec.stride)
    if layer_spec.kind == "lrn":
        return Lrn(layer_spec.radius, layer_spec.k, layer_spec.alpha,
                   layer_spec.beta)
    if layer_spec.kind == "relu":
        return Relu()
    raise ValueError(f"unexpected layer kind {layer_spec.kind!r}")


class PdcnnNet:
    """Runtime network for one PdcnnSpec, in a single uniform precision."""

    def __init__(self, spec: PdcnnSpec, rng: T.Rng = None, dtype=np.float64):
        shape_check(spec)  # fail early, naming the offending layer
        if rng is None:
            rng = T.Rng(0)
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.branches = []
        self.branch_layer_names = []
        for arch in spec.branches:
            layers = []
            names = []
            c = spec.input_shape[0]
            for ls in arch.layers:
                if ls.kind == "fc":
                    continue  # replaced by the shared head
                layers.append(_build_layer(ls, c, rng, self.dtype,
                                           spec.config.init_sigma))
                names.append(ls.name)
                if ls.kind == "conv":
                    c = ls.filters
            self.branches.append(layers)
            self.branch_layer_names.append(names)
        fused = shape_check(spec)[-2].shape[0]
        hw = T.gaussian_init((spec.num_classes, fused),
                             spec.config.init_sigma, rng, dtype=self.dtype)
        hb = T.tensor_new((spec.num_classes,), 0.0, dtype=self.dtype)
        self.head = FullyConnected(hw, hb)
        self._feat_shapes = None

    def parameters(self):
        """Ordered (name, array) pairs; declaration order is the file order."""
        out = []
        for i, (layers, names) in enumerate(
                zip(self.branches, self.branch_layer_names)):
            for layer, name in zip(layers, names):
                if isinstance(layer, Conv2d):
                    out.append((f"branch{i + 1}/{name}/weights", layer.weights))
                    out.append((f"branch{i + 1}/{name}/bias", layer.bias))
        out.append(("head/fc2/weights", self.head.weights))
        out.append(("head/fc2/bias", self.head.bias))
        return out

    def gradients(self):
        """Gradient arrays matching parameters(), valid after backward()."""
        out = []
        for i, (layers, names) in enumerate(
                zip(self.branches, self.branch_layer_names)):
            for layer, name in zip(layers, names):
                if isinstance(layer, Conv2d):
                    out.append((f"branch{i + 1}/{name}/weights", layer.grad_weights))
                    out.append((f"branch{i + 1}/{name}/bias", layer.grad_bias))
        out.append(("head/fc2/weights", self.head.grad_weights))
        out.append(("head/fc2/bias", self.head.grad_bias))
        return out

    def set_parameters(self, named_arrays):
        current = dict(self.parameters())
        for name, value in named_arrays:
            if name not in current:
                raise ValueError(f"model/arch mismatch: unknown tensor {name!r}")
            if current[name].shape != value.shape:
                raise ValueError(
                    f"model/arch mismatch: {name} has shape {value.shape}, "
                    f"expected {current[name].shape}")
            current[name][...] = np.asarray(value, dtype=self.dtype)

    def forward(self, x: np.ndarray) -> np.ndarray:
        squeeze = x.ndim == 3
        x = (np.asarray(x, dtype=self.dtype) - INPUT_OFFSET) * INPUT_SCALE
        if squeeze:
            x = x[None]
        feats = []
        self._feat_shapes = []
        for layers in self.branches:
            h = x
            for layer in layers:
                h = layer.forward(h)
            self._feat_shapes.append(h.shape)
            feats.append(h.reshape(h.shape[0], -1))
        fused = np.concatenate(feats, axis=1)
        logits = self.head.forward(fused)
        return logits[0] if squeeze else logits

    def backward(self, dlogits: np.ndarray) -> None:
        """Backpropagate from logit gradients; fills every grad_* attribute."""
        if dlogits.ndim == 1:
            dlogits = dlogits[None]
        dfused = self.head.backward(dlogits)
        offset = 0
        for layers, fshape in zip(self.branches, self._feat_shapes):
            length = int(np.prod(fshape[1:]))
            dfeat = dfused[:, offset:offset + length].reshape(fshape)
            offset += length
            d = dfeat
            for layer in reversed(layers):
                d = layer.backward(d)

    def predict(self, x: np.ndarray) -> np.ndarray:
        logits = self.forward(x)
        if logits.ndim == 1:
            return int(np.argmax(logits))
        return np.argmax(logits, axis=1)


def _meta_text(net: PdcnnNet) -> str:
    d = arch_dict_from_spec(net.spec)
    d["dtype"] = net.dtype.name
    lines = []
    for key in _META_KEY_ORDER:
        if key in d:
            value = d[key]
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def save_model(net: PdcnnNet, path) -> None:
    """Write a PDM1 model file. Parameter payloads are PDT1 (32-bit floats);
    double-precision models round to single in the file."""
    params = net.parameters()
    meta = _meta_text(net).encode("utf-8")
    with open(path, "wb") as f:
        f.write(PDM1_MAGIC)
        f.write(struct.pack("<I", PDM1_VERSION))
        f.write(struct.pack("<I", len(meta)))
        f.write(meta)
        f.write(struct.pack("<I", len(params)))
        for name, _ in params:
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
        for _, array in params:
            _write_pdt_stream(f, array)


def _write_pdt_stream(f, t: np.ndarray) -> None:
    t = np.asarray(t)
    f.write(T.PDT1_MAGIC)
    f.write(struct.pack("<I", t.ndim))
    for s in t.shape:
        f.write(struct.pack("<I", s))
    f.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def _read_pdt_stream(f) -> np.ndarray:
    magic = f.read(4)
    if magic != T.PDT1_MAGIC:
        raise ValueError(f"corrupt model payload (magic {magic!r})")
    (rank,) = struct.unpack("<I", f.read(4))
    shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(rank))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(f.read(4 * count), dtype="<f4", count=count)
    return data.reshape(shape)


def load_model(path) -> PdcnnNet:
    """Rebuild a network from a PDM1 file (architecture plus parameters)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != PDM1_MAGIC:
            raise ValueError(f"{path}: not a PDM1 model file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != PDM1_VERSION:
            raise ValueError(f"{path}: unsupported model version {version}")
        (meta_len,) = struct.unpack("<I", f.read(4))
        meta = f.read(meta_len).decode("utf-8")
        (count,) = struct.unpack("<I", f.read(4))
        names = []
        for _ in range(count):
            (name_len,) = struct.unpack("<I", f.read(4))
            names.append(f.read(name_len).decode("utf-8"))
        arrays = [_read_pdt_stream(f) for _ in range(count)]
    d = {}
    for line in meta.splitlines():
        if not line.strip():
            continue
        key, value = line.split("=", 1)
        d[key] = value
    dtype = np.dtype(d.pop("dtype", "float64"))
    arch_d = {}
    for key, value in d.items():
        if key in ("depths", "variants"):
            arch_d[key] = [int(v) for v in value.split(",")]
        elif key in ("input_channels", "input_size", "conv1_stride",
                     "conv1_padding", "pool_window", "pool_stride",
                     "lrn_radius"):
            arch_d[key] = int(value)
        else:
            arch_d[key] = float(value)
    spec = spec_from_arch_dict(arch_d)
    net = PdcnnNet(spec, rng=T.Rng(0), dtype=dtype)
    net.set_parameters(zip(names, arrays))
    return net
