"""Two-branch detection network: graph construction, forward inference,
and parameter/FLOP/model-size accounting.

Topology: a VGG-19 conv prefix (through its 10th conv, pools after the
first three blocks, stride 8) followed by two 3x3 reduction convs down
to 128 channels (the bifurcation layer); two detection branches (joint
and limb heads); two cross-branch feature-transfer sub-networks of 4
blocks; and per-branch refinement of 7 blocks fed by both heads, the
transferred features and the bifurcation features. Blocks are three
3x3 convs whose outputs are aggregated (channel concat by default,
addition selectable) before the next block.

The exact channel plan of the published model is not recoverable from
its description; docs/reconstruction.md records the per-layer breakdown
of this reconstruction and its gap to the published totals.
"""

from dataclasses import dataclass, asdict

import numpy as np

from . import fileio
from .tensor_ops import (LayerSpec, ShapeError, concat_channels, conv2d,
                         conv_output_hw, layer_flop_count, layer_param_count,
                         maxpool2, relu)

# VGG-19 conv prefix through conv4_2, pools after blocks 1-3.
_VGG_PREFIX = (
    ("conv1_1", 3, 64), ("conv1_2", 64, 64), ("pool1", None, None),
    ("conv2_1", 64, 128), ("conv2_2", 128, 128), ("pool2", None, None),
    ("conv3_1", 128, 256), ("conv3_2", 256, 256),
    ("conv3_3", 256, 256), ("conv3_4", 256, 256), ("pool3", None, None),
    ("conv4_1", 256, 512), ("conv4_2", 512, 512),
)


@dataclass(frozen=True)
class NetworkConfig:
    block_channels: int = 128
    transfer_blocks: int = 4
    refine_blocks: int = 7
    aggregation: str = "concat"        # or "add"
    branch_mid_channels: int = 512     # 1x1 conv before each detection head
    transfer_tap: str = "features"     # "features" (last 3x3 conv) or "penultimate" (1x1 mid)
    transfer_output_channels: int = 128
    refine_uses_transfer: bool = True

    def __post_init__(self):
        if self.aggregation not in ("concat", "add"):
            raise ValueError(f"aggregation must be 'concat' or 'add', got {self.aggregation!r}")
        if self.transfer_tap not in ("features", "penultimate"):
            raise ValueError(f"transfer_tap must be 'features' or 'penultimate', "
                             f"got {self.transfer_tap!r}")

    def to_config(self):
        return asdict(self)

    @classmethod
    def from_config(cls, cfg):
        return cls(**{k: cfg[k] for k in cfg if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class NetworkGraph:
    layers: tuple          # topologically ordered LayerSpecs
    joint_output: str
    limb_output: str
    stride: int
    input_channels: int = 3

    def layer(self, name):
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise KeyError(f"no layer named {name!r}")

    def conv_layers(self):
        return [spec for spec in self.layers if spec.kind == "conv"]


class _Builder:
    def __init__(self):
        self.layers = []
        self.channels = {}

    def add(self, spec, out_channels):
        for dep in spec.inputs:
            if dep not in self.channels:
                raise ValueError(f"layer {spec.name!r} references unknown input {dep!r}")
        if spec.name in self.channels:
            raise ValueError(f"duplicate layer name {spec.name!r}")
        self.layers.append(spec)
        self.channels[spec.name] = out_channels
        return spec.name

    def conv(self, name, src, cin, cout, k=3, relu_after=True):
        pad = (k - 1) // 2
        self.add(LayerSpec(name, "conv", (src,), kernel=(k, k),
                           in_channels=cin, out_channels=cout, padding=pad), cout)
        if relu_after:
            return self.add(LayerSpec(name + "_relu", "relu", (name,)), cout)
        return name

    def pool(self, name, src):
        return self.add(LayerSpec(name, "maxpool2", (src,)), self.channels[src])

    def merge(self, name, srcs, mode):
        if mode == "concat":
            cout = sum(self.channels[s] for s in srcs)
            return self.add(LayerSpec(name, "concat", tuple(srcs)), cout)
        cout = self.channels[srcs[0]]
        return self.add(LayerSpec(name, "add", tuple(srcs)), cout)

    def block(self, prefix, src, cfg):
        """Three 3x3 convs with aggregated outputs; returns the block output."""
        ch = cfg.block_channels
        c1 = self.conv(f"{prefix}_c1", src, self.channels[src], ch)
        c2 = self.conv(f"{prefix}_c2", c1, ch, ch)
        c3 = self.conv(f"{prefix}_c3", c2, ch, ch)
        return self.merge(f"{prefix}_out", [c1, c2, c3], cfg.aggregation)


def build_mln(skeleton, config=None):
    """Construct the full two-branch graph for a skeleton definition."""
    cfg = config or NetworkConfig()
    joint_out = skeleton.joint_map_channels
    limb_out = skeleton.limb_map_channels
    if joint_out < 1 or limb_out < 1:
        raise ValueError("skeleton must define at least one joint and one limb")
    b = _Builder()
    b.add(LayerSpec("input", "input"), 3)

    cur, cin = "input", 3
    for name, _, cout in _VGG_PREFIX:
        if cout is None:
            cur = b.pool(name, cur)
        else:
            cur = b.conv(name, cur, cin, cout)
            cin = cout
    cur = b.conv("reduce1", cur, 512, 256)
    bifurcation = b.conv("reduce2", cur, 256, 128)

    taps = {}
    heads = {}
    for branch, out_ch in (("joint", joint_out), ("limb", limb_out)):
        cur = bifurcation
        ch = cfg.block_channels
        cin = 128
        for i in (1, 2, 3):
            cur = b.conv(f"{branch}_conv{i}", cur, cin, ch)
            cin = ch
        features = cur
        mid = b.conv(f"{branch}_conv4", cur, ch, cfg.branch_mid_channels, k=1)
        heads[branch] = b.conv(f"{branch}_head", mid, cfg.branch_mid_channels,
                               out_ch, k=1, relu_after=False)
        taps[branch] = features if cfg.transfer_tap == "features" else mid

    xfer_input = b.merge("xfer_input", [taps["joint"], taps["limb"]], "concat")
    xfer = {}
    for target in ("joint", "limb"):
        cur = xfer_input
        for i in range(cfg.transfer_blocks):
            cur = b.block(f"xfer_{target}_b{i}", cur, cfg)
        xfer[target] = b.conv(f"xfer_{target}_out", cur, b.channels[cur],
                              cfg.transfer_output_channels, k=1, relu_after=False)

    outputs = {}
    for branch, out_ch in (("joint", joint_out), ("limb", limb_out)):
        parts = [heads["joint"], heads["limb"]]
        if cfg.refine_uses_transfer:
            parts.append(xfer[branch])
        parts.append(bifurcation)
        cur = b.merge(f"refine_{branch}_input", parts, "concat")
        for i in range(cfg.refine_blocks):
            cur = b.block(f"refine_{branch}_b{i}", cur, cfg)
        outputs[branch] = b.conv(f"refine_{branch}_head", cur, b.channels[cur],
                                 out_ch, k=1, relu_after=False)

    return NetworkGraph(layers=tuple(b.layers),
                        joint_output=outputs["joint"],
                        limb_output=outputs["limb"],
                        stride=8)


class MissingWeightError(KeyError):
    """A conv layer has no entry in the weight store."""


def _execute(graph, weights, image, wanted=None):
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 4 or image.shape[1] != graph.input_channels:
        raise ShapeError(f"image must be (B,{graph.input_channels},H,W), got {image.shape}")
    if image.shape[2] % graph.stride or image.shape[3] % graph.stride:
        raise ShapeError(f"spatial dims must be multiples of {graph.stride}, "
                         f"got {image.shape[2]}x{image.shape[3]}")
    acts = {}
    for spec in graph.layers:
        if spec.kind == "input":
            acts[spec.name] = image
        elif spec.kind == "conv":
            if spec.name not in weights:
                raise MissingWeightError(f"no weights for layer {spec.name!r}")
            w, bias = weights[spec.name]
            expected = (spec.out_channels, spec.in_channels) + spec.kernel
            if tuple(w.shape) != expected:
                raise fileio.WeightShapeError(
                    f"layer {spec.name!r}: weight shape {tuple(w.shape)} != {expected}")
            acts[spec.name] = conv2d(acts[spec.inputs[0]], w,
                                     bias if spec.has_bias else None,
                                     stride=spec.stride, padding=spec.padding)
        elif spec.kind == "relu":
            acts[spec.name] = relu(acts[spec.inputs[0]])
        elif spec.kind == "maxpool2":
            acts[spec.name] = maxpool2(acts[spec.inputs[0]])
        elif spec.kind == "concat":
            acts[spec.name] = concat_channels([acts[s] for s in spec.inputs])
        elif spec.kind == "add":
            out = acts[spec.inputs[0]].copy()
            for s in spec.inputs[1:]:
                out += acts[s]
            acts[spec.name] = out
        if wanted is not None and spec.name == wanted:
            return acts[spec.name]
    if wanted is not None:
        raise KeyError(f"no layer named {wanted!r}")
    return acts


def forward(graph, weights, image):
    """Run the graph; returns (joint_maps, limb_maps) at stride resolution."""
    acts = _execute(graph, weights, image)
    return acts[graph.joint_output], acts[graph.limb_output]


def dump_activation(graph, weights, image, layer_name):
    """Output tensor of one named layer for inspection."""
    return _execute(graph, weights, image, wanted=layer_name)


def zero_weights(graph):
    store = {}
    for spec in graph.conv_layers():
        shape = (spec.out_channels, spec.in_channels) + spec.kernel
        store[spec.name] = (np.zeros(shape, dtype=np.float32),
                            np.zeros(spec.out_channels, dtype=np.float32))
    return store


def random_weights(graph, seed=0):
    """He-style uniform init; deterministic in the seed."""
    rng = np.random.default_rng(seed)
    store = {}
    for spec in graph.conv_layers():
        shape = (spec.out_channels, spec.in_channels) + spec.kernel
        fan_in = spec.in_channels * spec.kernel[0] * spec.kernel[1]
        bound = float(np.sqrt(2.0 / fan_in))
        w = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        store[spec.name] = (w, np.zeros(spec.out_channels, dtype=np.float32))
    return store


@dataclass
class ComplexityReport:
    per_layer: list          # dicts: name, kind, params, flops_mac1, flops_mac2, out_shape
    total_params: int
    total_flops_mac1: int
    total_flops_mac2: int
    model_size_mb: float
    input_shape: tuple

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "total_params": self.total_params,
            "total_flops_mac1": self.total_flops_mac1,
            "total_flops_mac2": self.total_flops_mac2,
            "model_size_mb": self.model_size_mb,
            "per_layer": self.per_layer,
        }

    def to_table(self):
        lines = [f"{'layer':32s} {'kind':8s} {'out shape':>16s} {'params':>12s} "
                 f"{'FLOPs(mac1)':>14s} {'FLOPs(mac2)':>14s}"]
        for row in self.per_layer:
            shape = "x".join(str(d) for d in row["out_shape"])
            lines.append(f"{row['name']:32s} {row['kind']:8s} {shape:>16s} "
                         f"{row['params']:>12,d} {row['flops_mac1']:>14,d} "
                         f"{row['flops_mac2']:>14,d}")
        lines.append("-" * len(lines[0]))
        lines.append(f"{'TOTAL':32s} {'':8s} {'':>16s} {self.total_params:>12,d} "
                     f"{self.total_flops_mac1:>14,d} {self.total_flops_mac2:>14,d}")
        lines.append(f"model size: {self.model_size_mb:.1f} MB "
                     f"({self.total_params:,d} params x 4 bytes)")
        return "\n".join(lines)


def complexity_report(graph, input_shape):
    """Per-layer and total params/FLOPs for a (C, H, W) input shape."""
    c, h, w = input_shape
    shapes = {}
    rows = []
    total_params = 0
    total_m1 = 0
    total_m2 = 0
    for spec in graph.layers:
        if spec.kind == "input":
            shapes[spec.name] = (c, h, w)
        elif spec.kind == "conv":
            ci, hi, wi = shapes[spec.inputs[0]]
            oh, ow = conv_output_hw(hi, wi, *spec.kernel, spec.stride, spec.padding)
            shapes[spec.name] = (spec.out_channels, oh, ow)
        elif spec.kind in ("relu", "add"):
            shapes[spec.name] = shapes[spec.inputs[0]]
        elif spec.kind == "maxpool2":
            ci, hi, wi = shapes[spec.inputs[0]]
            shapes[spec.name] = (ci, hi // 2, wi // 2)
        elif spec.kind == "concat":
            parts = [shapes[s] for s in spec.inputs]
            shapes[spec.name] = (sum(p[0] for p in parts),) + parts[0][1:]
        params = layer_param_count(spec)
        in_hw = shapes[spec.inputs[0]][1:] if spec.inputs else (h, w)
        m1 = layer_flop_count(spec, in_hw, macs_per_flop=1)
        m2 = layer_flop_count(spec, in_hw, macs_per_flop=2)
        total_params += params
        total_m1 += m1
        total_m2 += m2
        rows.append({"name": spec.name, "kind": spec.kind, "params": params,
                     "flops_mac1": m1, "flops_mac2": m2,
                     "out_shape": list(shapes[spec.name])})
    return ComplexityReport(per_layer=rows, total_params=total_params,
                            total_flops_mac1=total_m1, total_flops_mac2=total_m2,
                            model_size_mb=total_params * 4 / 1e6,
                            input_shape=tuple(input_shape))


def save_weights(path_or_file, store):
    fileio.save_weights(path_or_file, store)


def load_weights(path_or_file, graph=None):
    """Load an MLNW store; validates shapes against a graph when given."""
    store = fileio.load_weights(path_or_file)
    if graph is not None:
        for spec in graph.conv_layers():
            if spec.name not in store:
                raise MissingWeightError(f"no weights for layer {spec.name!r}")
            w, _ = store[spec.name]
            expected = (spec.out_channels, spec.in_channels) + spec.kernel
            if tuple(w.shape) != expected:
                raise fileio.WeightShapeError(
                    f"layer {spec.name!r}: weight shape {tuple(w.shape)} != {expected}")
    return store
