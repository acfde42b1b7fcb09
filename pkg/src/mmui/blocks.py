"""YOLO-style detector at desk scale: CSP backbone, PANet neck, anchor head.

The graph is backbone (stem + four downsample/C3 stages + SPPF), a PANet
neck with four C3 blocks, and one 1x1 conv head per detection scale
(strides 8/16/32). Optional cross-attention fusion modules hang off a fixed
ordered list of insertion points; `xattn_count` activates a prefix of that
list. Batch normalization is replaced by a per-channel learnable affine so
results do not depend on batch composition.

All parameters live in a flat registry with stable dotted names; the
checkpoint format serializes exactly that registry.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, UsageError
from .fusion import AttentionParams, FusionModule, passthrough_kernel
from .tensor import Tensor

STRIDES = (8, 16, 32)

# Shape-kmeans over a 1000-scene sample of the twin12 generator (seed 0),
# sorted by area and grouped 3 per scale. Regenerable via data.compute_anchors.
DEFAULT_ANCHORS = (
    ((11.0, 45.0), (22.0, 22.0), (45.0, 11.0)),
    ((36.0, 36.0), (78.0, 29.0), (60.0, 60.0)),
    ((120.0, 31.0), (90.0, 66.0), (140.0, 90.0)),
)

# Ordered fusion insertion points; xattn_count takes a prefix. The first
# three sit after the non-final neck C3 blocks, 4 and 5 extend into the
# backbone (after its last and second-to-last C3 outputs).
INSERTION_POINTS = ("neck_c3_1", "neck_c3_2", "neck_c3_3", "backbone_c3_4", "backbone_c3_3")

OBJ_BIAS_INIT = -4.595  # sigmoid^-1(0.01): start with sparse objectness
CLS_BIAS_INIT = -2.9


@dataclass
class DetectorConfig:
    input_size: int = 256
    channels: tuple = (16, 32, 64, 128)
    c3_depth: int = 1
    num_classes: int = 12
    anchors: tuple = DEFAULT_ANCHORS
    fusion: str = "none"  # none | add | wsum | conv
    xattn_count: int = 0
    embed_dim: int = 64
    scaled_attention: bool = True
    seed: int = 0

    def validate(self):
        if self.input_size % 32 != 0 or self.input_size < 32:
            raise ConfigurationError(f"input_size {self.input_size} must be a positive multiple of 32")
        if len(self.channels) != 4 or any(c < 2 or c % 2 for c in self.channels):
            raise ConfigurationError(f"channel schedule {self.channels} must be 4 even values >= 2")
        if self.c3_depth < 1:
            raise ConfigurationError("c3_depth must be >= 1")
        if self.num_classes < 1:
            raise ConfigurationError("num_classes must be >= 1")
        if len(self.anchors) != 3 or any(len(a) != 3 for a in self.anchors):
            raise ConfigurationError("anchors must provide 3 (w,h) pairs per scale")
        if self.fusion not in ("none", "add", "wsum", "conv"):
            raise ConfigurationError(f"unknown fusion {self.fusion!r}")
        if self.xattn_count not in (0, 3, 4, 5):
            raise ConfigurationError(f"xattn_count {self.xattn_count} not in {{0,3,4,5}}")
        if (self.xattn_count == 0) != (self.fusion == "none"):
            raise ConfigurationError("xattn_count must be 0 exactly when fusion is 'none'")
        if self.embed_dim < 1:
            raise ConfigurationError("embed_dim must be >= 1")
        return self


def _param_rng(seed: int, name: str) -> np.random.Generator:
    # Per-parameter stream keyed by (seed, name): init is independent of
    # registry build order, so shared names match across model variants.
    digest = hashlib.blake2b(name.encode(), digest_size=8).digest()
    return np.random.default_rng(np.random.SeedSequence((seed, int.from_bytes(digest, "little"))))


class Registry:
    """Flat name -> Tensor parameter store with seeded initializers."""

    def __init__(self, seed: int):
        self.seed = seed
        self.params: dict[str, Tensor] = {}

    def make(self, name: str, shape, init: str, fan_in: int = 0, value=None) -> Tensor:
        if name in self.params:
            raise ConfigurationError(f"duplicate parameter name {name}")
        if init == "he":
            data = _param_rng(self.seed, name).normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        elif init == "linear":
            data = _param_rng(self.seed, name).normal(0.0, np.sqrt(1.0 / fan_in), size=shape)
        elif init == "small":
            data = _param_rng(self.seed, name).normal(0.0, 1e-3, size=shape)
        elif init == "const":
            data = np.asarray(value, dtype=np.float32)
            if data.shape != tuple(shape):
                raise ConfigurationError(f"{name}: const init shape {data.shape} vs {tuple(shape)}")
        else:
            raise ConfigurationError(f"unknown init {init!r}")
        t = Tensor(data.astype(np.float32), requires_grad=True)
        self.params[name] = t
        return t


class ConvBlock:
    """conv (no bias) -> per-channel affine -> SiLU (activation optional)."""

    def __init__(self, reg: Registry, name: str, c_in: int, c_out: int, k: int = 1,
                 stride: int = 1, act: bool = True):
        self.stride = stride
        self.pad = k // 2
        self.act = act
        self.w = reg.make(f"{name}.conv_w", (c_out, c_in, k, k), "he", fan_in=c_in * k * k)
        self.aff_s = reg.make(f"{name}.aff_s", (c_out,), "const", value=np.ones(c_out))
        self.aff_b = reg.make(f"{name}.aff_b", (c_out,), "const", value=np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        out = T.channel_affine(T.conv2d(x, self.w, stride=self.stride, pad=self.pad),
                               self.aff_s, self.aff_b)
        return T.silu(out) if self.act else out


class Bottleneck:
    def __init__(self, reg, name, c_in, c_out, shortcut=True):
        self.cv1 = ConvBlock(reg, f"{name}.cv1", c_in, c_out, k=1)
        self.cv2 = ConvBlock(reg, f"{name}.cv2", c_out, c_out, k=3)
        self.shortcut = shortcut and c_in == c_out

    def __call__(self, x):
        out = self.cv2(self.cv1(x))
        return T.add(x, out) if self.shortcut else out


class C3:
    """Split-path block: bottlenecks on one branch, 1x1 shortcut branch, merge conv."""

    def __init__(self, reg, name, c_in, c_out, n=1, shortcut=True):
        c_mid = c_out // 2
        self.cv1 = ConvBlock(reg, f"{name}.cv1", c_in, c_mid, k=1)
        self.cv2 = ConvBlock(reg, f"{name}.cv2", c_in, c_mid, k=1)
        self.m = [Bottleneck(reg, f"{name}.m{i}", c_mid, c_mid, shortcut) for i in range(n)]
        self.cv3 = ConvBlock(reg, f"{name}.cv3", 2 * c_mid, c_out, k=1)

    def __call__(self, x):
        a = self.cv1(x)
        for b in self.m:
            a = b(a)
        return self.cv3(T.concat_channels(a, self.cv2(x)))


class SPPF:
    """Three chained 5x5 stride-1 max pools concatenated with the input path."""

    def __init__(self, reg, name, c_in, c_out):
        c_mid = c_in // 2
        self.cv1 = ConvBlock(reg, f"{name}.cv1", c_in, c_mid, k=1)
        self.cv2 = ConvBlock(reg, f"{name}.cv2", c_mid * 4, c_out, k=1)

    def __call__(self, x):
        a = self.cv1(x)
        p1 = T.maxpool2d(a, 5, stride=1, pad=2)
        p2 = T.maxpool2d(p1, 5, stride=1, pad=2)
        p3 = T.maxpool2d(p2, 5, stride=1, pad=2)
        return self.cv2(T.concat_channels(T.concat_channels(a, p1), T.concat_channels(p2, p3)))


class Head1x1:
    """Raw 1x1 conv emitting A*(5+C) channels per scale."""

    def __init__(self, reg, name, c_in, n_anchors, n_classes):
        c_out = n_anchors * (5 + n_classes)
        self.w = reg.make(f"{name}.w", (c_out, c_in, 1, 1), "he", fan_in=c_in)
        bias = np.zeros(c_out, dtype=np.float32)
        per = 5 + n_classes
        for a in range(n_anchors):
            bias[a * per + 4] = OBJ_BIAS_INIT
            bias[a * per + 5:(a + 1) * per] = CLS_BIAS_INIT
        self.b = reg.make(f"{name}.b", (c_out,), "const", value=bias)

    def __call__(self, x):
        return T.conv2d(x, self.w, b=self.b, stride=1, pad=0)


def _fusion_channels(channels) -> dict:
    c2, c3, c4 = channels[1], channels[2], channels[3]
    return {
        "neck_c3_1": c3,
        "neck_c3_2": c2,
        "neck_c3_3": c3,
        "backbone_c3_4": c4,
        "backbone_c3_3": c3,
    }


class DetectorModel:
    """Built detector graph plus its parameter registry.

    Immutable during inference; training mutates the registry tensors and
    must be serialized by a single trainer thread.
    """

    def __init__(self, cfg: DetectorConfig):
        cfg.validate()
        self.cfg = cfg
        reg = Registry(cfg.seed)
        self.reg = reg
        c1, c2, c3, c4 = cfg.channels
        c0 = c1 // 2
        n = cfg.c3_depth

        self.stem = ConvBlock(reg, "backbone.stem", 3, c0, k=3, stride=2)
        self.b_down = [
            ConvBlock(reg, "backbone.s1.down", c0, c1, k=3, stride=2),
            ConvBlock(reg, "backbone.s2.down", c1, c2, k=3, stride=2),
            ConvBlock(reg, "backbone.s3.down", c2, c3, k=3, stride=2),
            ConvBlock(reg, "backbone.s4.down", c3, c4, k=3, stride=2),
        ]
        self.b_c3 = [
            C3(reg, "backbone.s1.c3", c1, c1, n),
            C3(reg, "backbone.s2.c3", c2, c2, n),
            C3(reg, "backbone.s3.c3", c3, c3, n),
            C3(reg, "backbone.s4.c3", c4, c4, n),
        ]
        self.sppf = SPPF(reg, "backbone.sppf", c4, c4)

        self.lat1 = ConvBlock(reg, "neck.lat1", c4, c3, k=1)
        self.n_c3_1 = C3(reg, "neck.c3_1", 2 * c3, c3, n, shortcut=False)
        self.lat2 = ConvBlock(reg, "neck.lat2", c3, c2, k=1)
        self.n_c3_2 = C3(reg, "neck.c3_2", 2 * c2, c2, n, shortcut=False)
        self.down1 = ConvBlock(reg, "neck.down1", c2, c2, k=3, stride=2)
        self.n_c3_3 = C3(reg, "neck.c3_3", 2 * c2, c3, n, shortcut=False)
        self.down2 = ConvBlock(reg, "neck.down2", c3, c3, k=3, stride=2)
        self.n_c3_4 = C3(reg, "neck.c3_4", 2 * c3, c4, n, shortcut=False)

        a = len(cfg.anchors[0])
        self.heads = [
            Head1x1(reg, "head.p3", c2, a, cfg.num_classes),
            Head1x1(reg, "head.p4", c3, a, cfg.num_classes),
            Head1x1(reg, "head.p5", c4, a, cfg.num_classes),
        ]

        self.fusion_modules: dict[str, FusionModule] = {}
        if cfg.fusion != "none":
            chans = _fusion_channels(cfg.channels)
            for i in range(cfg.xattn_count):
                point = INSERTION_POINTS[i]
                self.fusion_modules[point] = self._build_fusion(reg, i, chans[point])
        self.initialized_from = None

    def _build_fusion(self, reg, index, c) -> FusionModule:
        d = cfg_d = c
        dim = self.cfg.embed_dim
        prefix = f"xattn.{index}"
        attn = AttentionParams(
            wq=reg.make(f"{prefix}.wq", (c, cfg_d), "linear", fan_in=c),
            wk=reg.make(f"{prefix}.wk", (dim, d), "linear", fan_in=dim),
            wv=reg.make(f"{prefix}.wv", (dim, c), "small"),
            scale_scores=self.cfg.scaled_attention,
        )
        kw = {}
        if self.cfg.fusion == "wsum":
            kw["alpha"] = reg.make(f"{prefix}.alpha", (1,), "const", value=np.ones(1))
            kw["beta"] = reg.make(f"{prefix}.beta", (1,), "const", value=np.ones(1))
        elif self.cfg.fusion == "conv":
            noise = _param_rng(self.cfg.seed, f"{prefix}.fuse_w").normal(0.0, 1e-3, (c, 2 * c, 1, 1))
            kw["fuse_w"] = reg.make(f"{prefix}.fuse_w", (c, 2 * c, 1, 1), "const",
                                    value=passthrough_kernel(c) + noise.astype(np.float32))
            kw["fuse_b"] = reg.make(f"{prefix}.fuse_b", (c,), "const", value=np.zeros(c))
        return FusionModule(self.cfg.fusion, attn, **kw)

    # -- parameter access ---------------------------------------------------

    @property
    def params(self) -> dict[str, Tensor]:
        return self.reg.params

    @property
    def has_fusion(self) -> bool:
        return bool(self.fusion_modules)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict, strict: bool = True):
        """Copy arrays into matching registry names; returns (loaded, skipped)."""
        loaded, skipped = [], []
        for name, tensor in self.params.items():
            if name in state:
                arr = np.asarray(state[name], dtype=np.float32)
                if arr.shape != tensor.data.shape:
                    raise ConfigurationError(
                        f"parameter {name}: shape {arr.shape} vs expected {tensor.data.shape}")
                tensor.data = arr.copy()
                loaded.append(name)
            else:
                if strict:
                    raise ConfigurationError(f"parameter {name} missing from state")
                skipped.append(name)
        return loaded, skipped

    def set_fusion_identity(self):
        """Force every fusion module to its exact-identity configuration."""
        for mod in self.fusion_modules.values():
            if mod.strategy == "add":
                mod.attn.wv.data = np.zeros_like(mod.attn.wv.data)
            elif mod.strategy == "wsum":
                mod.alpha.data = np.zeros_like(mod.alpha.data)
                mod.beta.data = np.ones_like(mod.beta.data)
            else:
                c = mod.fuse_b.data.shape[0]
                mod.fuse_w.data = passthrough_kernel(c)
                mod.fuse_b.data = np.zeros_like(mod.fuse_b.data)

    # -- forward ------------------------------------------------------------

    def _apply_fusion(self, point: str, x: Tensor, texts):
        mod = self.fusion_modules.get(point)
        if mod is None:
            return x
        if len(x.shape) == 3:
            return mod(x, texts[0])
        parts = [mod(T.select_batch(x, b), texts[b]) for b in range(x.shape[0])]
        return T.stack_first(parts)

    def forward(self, image: Tensor, text=None):
        """Run the detector; returns the three raw head maps (small to large stride).

        `image` is [3,S,S] or a batch [B,3,S,S]; `text` is a [T,D] embedding
        matrix (or a list of them, one per batch sample) and must be supplied
        exactly when the model carries fusion modules.
        """
        if not isinstance(image, Tensor):
            image = Tensor(image)
        batched = len(image.shape) == 4
        s = self.cfg.input_size
        want = (3, s, s)
        got = tuple(image.shape[1:]) if batched else tuple(image.shape)
        if got != want:
            raise ConfigurationError(f"forward: image shape {got} vs expected {want}")

        if self.has_fusion and text is None:
            raise UsageError("fusion model requires text embeddings; none were given")
        if not self.has_fusion and text is not None:
            raise UsageError("baseline model does not accept text embeddings")
        texts = None
        if text is not None:
            texts = list(text) if isinstance(text, (list, tuple)) else [text]
            texts = [t if isinstance(t, Tensor) else Tensor(np.asarray(t, dtype=np.float32))
                     for t in texts]
            n_expected = image.shape[0] if batched else 1
            if len(texts) != n_expected:
                raise UsageError(f"got {len(texts)} text sequences for {n_expected} images")

        x = self.stem(image)
        x = self.b_c3[0](self.b_down[0](x))
        x = self.b_c3[1](self.b_down[1](x))
        p3s = x
        x = self.b_c3[2](self.b_down[2](x))
        x = self._apply_fusion("backbone_c3_3", x, texts)
        p4s = x
        x = self.b_c3[3](self.b_down[3](x))
        x = self._apply_fusion("backbone_c3_4", x, texts)
        p5s = self.sppf(x)

        l1 = self.lat1(p5s)
        t1 = T.concat_channels(T.upsample_nearest2x(l1), p4s)
        f1 = self._apply_fusion("neck_c3_1", self.n_c3_1(t1), texts)
        l2 = self.lat2(f1)
        t2 = T.concat_channels(T.upsample_nearest2x(l2), p3s)
        f2 = self._apply_fusion("neck_c3_2", self.n_c3_2(t2), texts)
        t3 = T.concat_channels(self.down1(f2), l2)
        f3 = self._apply_fusion("neck_c3_3", self.n_c3_3(t3), texts)
        t4 = T.concat_channels(self.down2(f3), l1)
        f4 = self.n_c3_4(t4)

        return [self.heads[0](f2), self.heads[1](f3), self.heads[2](f4)]

    __call__ = forward


def build_model(cfg: DetectorConfig) -> DetectorModel:
    return DetectorModel(cfg)


def count_parameters(model: DetectorModel) -> dict:
    """Per-group (backbone/neck/head/fusion) and total parameter counts."""
    groups = {"backbone": 0, "neck": 0, "head": 0, "fusion": 0}
    for name, t in model.params.items():
        top = name.split(".", 1)[0]
        groups["fusion" if top == "xattn" else top] += t.data.size
    groups["total"] = sum(groups.values())
    return groups
