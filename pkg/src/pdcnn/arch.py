"""Declarative branch architectures and their parallel composition.

Single branches come in depths 3, 4, and 5 (convolutional layers); the
4-layer branch uses filter counts (64, 96, 96, 64) and kernels (7, 5, 3, 3).
A paralleled network runs 1..4 branches on the same input, concatenates the
flattened final feature maps, and classifies with one shared 2-way fully
connected head. Branches sharing a depth get distinct conv1/conv2 kernel
sizes via a deterministic variant rule.
"""

from dataclasses import dataclass, field

from .layers import ShapeError, conv_extent

FILTERS = {3: (64, 96, 96), 4: (64, 96, 96, 64), 5: (64, 96, 96, 64, 64)}
KERNELS = {3: (7, 5, 3), 4: (7, 5, 3, 3), 5: (7, 5, 3, 3, 3)}
CONV_PADS = (2, 2, 1, 1, 1)
NUM_CLASSES = 2
MAX_BRANCHES = 4

# variant v > 0 re-kernels conv1/conv2 so same-depth branches differ;
# the (v + v // 3) phase keeps all four possible duplicates distinct
CONV1_CYCLE = (7, 5, 9)
CONV2_CYCLE = (5, 3, 5)


@dataclass(frozen=True)
class ArchConfig:
    """Tunable constants shared by every branch of one network.

    init_sigma 0.01 suits the full-scale filter counts; scaled-down networks
    (filter_scale < 1) have smaller fan-ins and need a proportionally larger
    sigma to keep activations alive through the stack.
    """
    conv1_stride: int = 4
    conv1_padding: int = 2
    pool_window: int = 3
    pool_stride: int = 2
    lrn_radius: int = 2
    lrn_k: float = 2.0
    lrn_alpha: float = 1e-4
    lrn_beta: float = 0.75
    filter_scale: float = 1.0
    init_sigma: float = 0.01


DEFAULT_CONFIG = ArchConfig()


@dataclass(frozen=True)
class LayerSpec:
    kind: str            # conv | pool | lrn | relu | fc
    name: str
    filters: int = 0     # conv
    kernel: int = 0      # conv
    stride: int = 1      # conv / pool
    padding: int = 0     # conv
    window: int = 0      # pool
    radius: int = 0      # lrn
    k: float = 0.0       # lrn
    alpha: float = 0.0   # lrn
    beta: float = 0.0    # lrn
    classes: int = 0     # fc


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    depth: int
    variant: int
    layers: tuple


@dataclass(frozen=True)
class PdcnnSpec:
    branches: tuple
    input_shape: tuple = (3, 224, 224)
    num_classes: int = NUM_CLASSES
    fusion: str = "concat"
    config: ArchConfig = field(default_factory=ArchConfig)


def _scaled(filters: int, scale: float) -> int:
    return max(1, int(round(filters * scale)))


def build_arch(depth: int, variant: int = 0,
               config: ArchConfig = DEFAULT_CONFIG) -> ArchitectureSpec:
    """Single-branch layout for the given conv depth (3, 4, or 5).

    Variant 0 is canonical; higher variants cycle the conv1/conv2 kernel
    sizes so branches of equal depth stay structurally distinct.
    """
    if depth not in FILTERS:
        raise ValueError(f"unsupported depth {depth}; expected one of 3, 4, 5")
    if variant < 0:
        raise ValueError(f"variant must be >= 0, got {variant}")
    filters = [_scaled(f, config.filter_scale) for f in FILTERS[depth]]
    kernels = list(KERNELS[depth])
    if variant > 0:
        kernels[0] = CONV1_CYCLE[variant % 3]
        kernels[1] = CONV2_CYCLE[(variant + variant // 3) % 3]
    layers = []
    for i in range(depth):
        stride = config.conv1_stride if i == 0 else 1
        padding = config.conv1_padding if i == 0 else CONV_PADS[i]
        layers.append(LayerSpec(kind="conv", name=f"conv{i + 1}",
                                filters=filters[i], kernel=kernels[i],
                                stride=stride, padding=padding))
        layers.append(LayerSpec(kind="relu", name=f"relu{i + 1}"))
        if i < 3:
            layers.append(LayerSpec(kind="pool", name=f"pool{i + 1}",
                                    window=config.pool_window,
                                    stride=config.pool_stride))
            norm_name = "norm1" if i == 0 else f"rnorm{i + 1}"
            layers.append(LayerSpec(kind="lrn", name=norm_name,
                                    radius=config.lrn_radius, k=config.lrn_k,
                                    alpha=config.lrn_alpha, beta=config.lrn_beta))
    layers.append(LayerSpec(kind="fc", name="fc2", classes=NUM_CLASSES))
    name = f"dcnn{depth}" if variant == 0 else f"dcnn{depth}v{variant}"
    return ArchitectureSpec(name=name, depth=depth, variant=variant,
                            layers=tuple(layers))


def build_pdcnn(depths, variants=None, input_shape=(3, 224, 224),
                config: ArchConfig = DEFAULT_CONFIG) -> PdcnnSpec:
    """Parallel composition: branch i gets variant = count of earlier branches
    with the same depth, so duplicate depths differ in kernel size."""
    depths = list(depths)
    if not 1 <= len(depths) <= MAX_BRANCHES:
        raise ValueError(
            f"branch count must be in [1, {MAX_BRANCHES}], got {len(depths)}")
    if variants is None:
        variants = [depths[:i].count(d) for i, d in enumerate(depths)]
    elif len(variants) != len(depths):
        raise ValueError("variants list must match depths list length")
    branches = tuple(build_arch(d, v, config) for d, v in zip(depths, variants))
    return PdcnnSpec(branches=branches, input_shape=tuple(input_shape),
                     config=config)


@dataclass(frozen=True)
class ShapeRow:
    branch: str
    layer: str
    shape: tuple


def _branch_shapes(arch: ArchitectureSpec, branch_label: str, input_shape):
    """Shape propagation through one branch, excluding its fc layer.

    Returns (rows, flattened feature length)."""
    c, h, w = input_shape
    rows = []
    for layer in arch.layers:
        where = f"{branch_label}/{layer.name}"
        if layer.kind == "conv":
            oh = conv_extent(h, layer.kernel, layer.stride, layer.padding)
            ow = conv_extent(w, layer.kernel, layer.stride, layer.padding)
            if oh < 1 or ow < 1:
                raise ShapeError(f"{where}: output extent {oh}x{ow} collapsed "
                                 f"(input {c}x{h}x{w})")
            c, h, w = layer.filters, oh, ow
        elif layer.kind == "pool":
            if layer.window > h or layer.window > w:
                raise ShapeError(f"{where}: pool window {layer.window} "
                                 f"exceeds input {h}x{w}")
            h = conv_extent(h, layer.window, layer.stride, 0)
            w = conv_extent(w, layer.window, layer.stride, 0)
        elif layer.kind == "fc":
            continue  # branch fc is replaced by the shared head
        # relu / lrn preserve shape
        rows.append(ShapeRow(branch_label, layer.name, (c, h, w)))
    return rows, c * h * w


def shape_check(spec: PdcnnSpec, input_shape=None):
    """Dry-run forward shape propagation through every branch and the fusion.

    Returns ShapeRow entries for each layer, the fused feature vector, and the
    shared classifier; raises ShapeError naming the first offending layer.
    """
    if input_shape is None:
        input_shape = spec.input_shape
    input_shape = tuple(int(v) for v in input_shape)
    if len(input_shape) != 3 or any(v < 1 for v in input_shape):
        raise ShapeError(f"input shape must be 3 positive extents, got {input_shape}")
    rows = []
    feature_lengths = []
    for i, arch in enumerate(spec.branches):
        branch_rows, feat = _branch_shapes(arch, f"branch{i + 1}", input_shape)
        rows.extend(branch_rows)
        feature_lengths.append(feat)
    fused = sum(feature_lengths)
    rows.append(ShapeRow("fusion", spec.fusion, (fused,)))
    rows.append(ShapeRow("head", "fc2", (spec.num_classes,)))
    return rows


def fused_feature_length(spec: PdcnnSpec, input_shape=None) -> int:
    rows = shape_check(spec, input_shape)
    return rows[-2].shape[0]


def layer_param_count(layer: LayerSpec, in_channels: int) -> int:
    """Trainable scalars in one layer given its input channel count."""
    if layer.kind == "conv":
        return layer.filters * in_channels * layer.kernel ** 2 + layer.filters
    return 0  # pool / lrn / relu carry no parameters; fc counted via the head


def branch_param_count(arch: ArchitectureSpec, in_channels: int) -> int:
    """Trainable scalars in one branch's conv stack (shared head excluded)."""
    total = 0
    c = in_channels
    for layer in arch.layers:
        total += layer_param_count(layer, c)
        if layer.kind == "conv":
            c = layer.filters
    return total


def param_count(spec: PdcnnSpec) -> int:
    """Total trainable scalars: all branch convolutions plus the shared head."""
    fused = fused_feature_length(spec)
    total = sum(branch_param_count(a, spec.input_shape[0]) for a in spec.branches)
    return total + spec.num_classes * fused + spec.num_classes


# --- architecture description files (flat key=value text) ---

ARCH_FILE_KEYS = {
    "depths", "variants", "conv1_stride", "conv1_padding",
    "pool_window", "pool_stride",
    "lrn_radius", "lrn_k", "lrn_alpha", "lrn_beta", "filter_scale",
    "init_sigma", "input_channels", "input_size",
}

_INT_KEYS = {"conv1_stride", "conv1_padding", "pool_window",
             "pool_stride", "lrn_radius",
             "input_channels", "input_size"}
_FLOAT_KEYS = {"lrn_k", "lrn_alpha", "lrn_beta", "filter_scale", "init_sigma"}


def parse_kv_file(path, allowed_keys=None) -> dict:
    """Flat key=value file: one pair per line, '#' comments, blank lines ignored.

    Unknown keys are errors when allowed_keys is given."""
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            key = key.strip()
            if allowed_keys is not None and key not in allowed_keys:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = value.strip()
    return out


def parse_arch_file(path) -> dict:
    """Read and type-check an architecture description file."""
    raw = parse_kv_file(path, ARCH_FILE_KEYS)
    out = {}
    for key, value in raw.items():
        if key == "depths":
            out[key] = [int(v) for v in value.split(",") if v.strip()]
        elif key == "variants":
            out[key] = [int(v) for v in value.split(",") if v.strip()]
        elif key in _INT_KEYS:
            out[key] = int(value)
        elif key in _FLOAT_KEYS:
            out[key] = float(value)
    return out


def spec_from_arch_dict(d: dict) -> PdcnnSpec:
    """Build a PdcnnSpec from parse_arch_file output."""
    if "depths" not in d:
        raise ValueError("architecture description must name a depths list")
    config = ArchConfig(
        **{f: d[f] for f in ("conv1_stride", "conv1_padding", "pool_window",
                             "pool_stride", "lrn_radius", "lrn_k", "lrn_alpha",
                             "lrn_beta", "filter_scale", "init_sigma")
           if f in d})
    size = d.get("input_size", 224)
    channels = d.get("input_channels", 3)
    return build_pdcnn(d["depths"], variants=d.get("variants"),
                       input_shape=(channels, size, size), config=config)


def arch_dict_from_spec(spec: PdcnnSpec) -> dict:
    """Inverse of spec_from_arch_dict, for embedding in model files."""
    if spec.input_shape[1] != spec.input_shape[2]:
        raise ValueError("only square inputs serialize to an arch description")
    d = {
        "depths": [a.depth for a in spec.branches],
        "variants": [a.variant for a in spec.branches],
        "input_channels": spec.input_shape[0],
        "input_size": spec.input_shape[1],
    }
    cfg, base = spec.config, ArchConfig()
    for name in ("conv1_stride", "conv1_padding", "pool_window",
                 "pool_stride", "lrn_radius", "lrn_k", "lrn_alpha",
                 "lrn_beta", "filter_scale", "init_sigma"):
        if getattr(cfg, name) != getattr(base, name):
            d[name] = getattr(cfg, name)
    return d
