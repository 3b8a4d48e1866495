"""Network assembly: head, two global-window blocks, directional block, tail.

Parameters live in one ordered name -> Tensor registry (``ModelWeights``);
the block-level dataclasses handed to the forward functions are cheap views
over that registry.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Dict, List, Optional

import numpy as np

from .attention import (
    CONV3X3,
    CONV_RELU_CONV,
    FULLY_CONNECTED,
    SPARSE_FCL,
    AttentionWeights,
    FfnWeights,
    conv_ffn,
    conv_qkv,
    mhsa,
    sparse_ffn,
)
from .errors import ConfigError, NumericError
from .tensor import Tensor, conv2d, layer_norm, no_grad, relu
from .windows import (
    HORIZONTAL,
    VERTICAL,
    merge_windows,
    partition_windows,
    patchify,
    roll,
    roll_reverse,
    unpatchify,
)

HO, VE, CO = "Ho", "Ve", "Co"
PROSE_ORDER = (HO, VE, CO, HO, VE, CO, HO, VE)
NESTED_ORDER = tuple(reversed(PROSE_ORDER))
N_GTE = 2
N_HEAD_CONVS = 5


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 1
    base_channels: int = 64
    heads: int = 4
    gte_window: int = 96
    tde_window: int = 48
    patch: int = 6
    tde_patch: int = 6
    shift: Optional[int] = None
    dilation: int = 3
    gte_rel_bias: bool = False
    tde_rel_bias: bool = True
    tde_order: str = "prose"
    precision: str = "float32"
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.shift is None:
            object.__setattr__(self, "shift", self.tde_window // 2)
        self.validate()

    def validate(self) -> None:
        c, h = self.base_channels, self.heads
        if self.in_channels not in (1, 3):
            raise ConfigError("in_channels must be 1 or 3")
        if c < 1 or h < 1:
            raise ConfigError("base_channels and heads must be positive")
        if self.gte_window % self.patch:
            raise ConfigError(f"patch {self.patch} does not divide gte_window {self.gte_window}")
        if self.tde_window % self.tde_patch:
            raise ConfigError(f"tde_patch {self.tde_patch} does not divide tde_window {self.tde_window}")
        if not 0 <= self.shift < self.tde_window:
            raise ConfigError(f"shift {self.shift} must lie in [0, tde_window)")
        if (c * self.patch**2) % h or (c * self.tde_patch**2) % h:
            raise ConfigError("token dimensions must be divisible by the head count")
        if self.dilation < 1:
            raise ConfigError("dilation must be >= 1")
        if self.tde_order not in ("prose", "nested"):
            raise ConfigError("tde_order must be 'prose' or 'nested'")
        if self.precision not in ("float32", "float64"):
            raise ConfigError("precision must be float32 or float64")

    @property
    def gte_dim(self) -> int:
        return self.base_channels * self.patch**2

    @property
    def tde_dim(self) -> int:
        return self.base_channels * self.tde_patch**2

    @property
    def dtype(self):
        return np.dtype(self.precision)

    def tde_sequence(self) -> tuple:
        """Layer kinds in input-to-output order."""
        return PROSE_ORDER if self.tde_order == "prose" else NESTED_ORDER

    def architecture(self) -> dict:
        """Fields that determine parameter names and shapes."""
        keys = ("in_channels", "base_channels", "heads", "gte_window", "tde_window",
                "patch", "tde_patch", "gte_rel_bias", "tde_rel_bias")
        return {k: getattr(self, k) for k in keys}

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown model settings: {sorted(unknown)}")
        return cls(**values)


PRESETS = {
    "paper": ModelConfig(),
    "toy": ModelConfig(base_channels=8, heads=2, gte_window=16, tde_window=8,
                       patch=2, tde_patch=2, shift=4),
}


def preset(name: str, **overrides) -> ModelConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    if overrides and "shift" not in overrides and "tde_window" in overrides:
        overrides["shift"] = None
    return replace(base, **overrides) if overrides else base


# ---------------------------------------------------------------------------
# parameter registry
# ---------------------------------------------------------------------------

def _rel_table_rows(window: int, patch: int) -> int:
    g = window // patch
    return (2 * g - 1) ** 2


def parameter_shapes(config: ModelConfig) -> Dict[str, tuple]:
    """Ordered name -> shape for every learnable parameter."""
    c, cin, h = config.base_channels, config.in_channels, config.heads
    shapes: Dict[str, tuple] = {}
    for i in range(N_HEAD_CONVS):
        shapes[f"head.{i}.weight"] = (c, cin if i == 0 else c, 3, 3)
        shapes[f"head.{i}.bias"] = (c,)
    dg = config.gte_dim
    for b in range(N_GTE):
        pre = f"gte.{b}."
        for name in "qkv":
            shapes[pre + f"{name}.weight"] = (c, c, 3, 3)
            shapes[pre + f"{name}.bias"] = (c,)
        for name in "qkv":
            shapes[pre + f"norm_{name}.gamma"] = (dg,)
            shapes[pre + f"norm_{name}.beta"] = (dg,)
        shapes[pre + "proj.weight"] = (dg, dg)
        shapes[pre + "proj.bias"] = (dg,)
        if config.gte_rel_bias:
            shapes[pre + "rel_bias"] = (_rel_table_rows(config.gte_window, config.patch), h)
        for j in (1, 2):
            shapes[pre + f"ffn.conv{j}.weight"] = (c, c, 3, 3)
            shapes[pre + f"ffn.conv{j}.bias"] = (c,)
    dt = config.tde_dim
    for i in range(len(PROSE_ORDER)):
        pre = f"tde.{i}."
        shapes[pre + "norm1.gamma"] = (dt,)
        shapes[pre + "norm1.beta"] = (dt,)
        for name in ("q", "k", "v", "proj"):
            shapes[pre + f"{name}.weight"] = (dt, dt)
            shapes[pre + f"{name}.bias"] = (dt,)
        if config.tde_rel_bias:
            shapes[pre + "rel_bias"] = (_rel_table_rows(config.tde_window, config.tde_patch), h)
        shapes[pre + "norm2.gamma"] = (dt,)
        shapes[pre + "norm2.beta"] = (dt,)
        shapes[pre + "fc1.weight"] = (9 * dt, dt)
        shapes[pre + "fc1.bias"] = (dt,)
        shapes[pre + "fc2.weight"] = (dt, dt)
        shapes[pre + "fc2.bias"] = (dt,)
    shapes["tail.weight"] = (cin, c, 3, 3)
    shapes["tail.bias"] = (cin,)
    return shapes


def _init_value(name: str, shape: tuple, rng: np.random.Generator) -> np.ndarray:
    if name.endswith(".gamma"):
        return np.ones(shape)
    if name.endswith((".bias", ".beta", "rel_bias")):
        return np.zeros(shape)
    if len(shape) == 4:
        fan_in = shape[1] * shape[2] * shape[3]
        bound = 1.0 / math.sqrt(fan_in)  # kaiming-uniform with a=sqrt(5)
        return rng.uniform(-bound, bound, size=shape)
    return rng.normal(0.0, 0.02, size=shape)


@dataclass
class GteWeights:
    attention: AttentionWeights
    norms: tuple  # ((gamma_q, beta_q), (gamma_k, beta_k), (gamma_v, beta_v))
    ffn: FfnWeights


@dataclass
class DirectionalWeights:
    norm_gamma: Tensor
    norm_beta: Tensor
    attention: AttentionWeights
    ffn: FfnWeights


class ModelWeights:
    """Ordered registry of named parameters for one network instance."""

    def __init__(self, config: ModelConfig, params: Dict[str, Tensor]):
        expected = parameter_shapes(config)
        if list(params) != list(expected):
            missing = set(expected) - set(params)
            extra = set(params) - set(expected)
            raise ConfigError(f"parameter names do not match config (missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]})")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ConfigError(f"{name} has shape {params[name].shape}, expected {shape}")
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "ModelWeights":
        rng = np.random.default_rng(seed)
        params = {
            name: Tensor(_init_value(name, shape, rng).astype(config.dtype), requires_grad=True)
            for name, shape in parameter_shapes(config).items()
        }
        return cls(config, params)

    @classmethod
    def zeros(cls, config: ModelConfig) -> "ModelWeights":
        params = {
            name: Tensor(np.zeros(shape, dtype=config.dtype), requires_grad=True)
            for name, shape in parameter_shapes(config).items()
        }
        return cls(config, params)

    def named_parameters(self):
        return self.params.items()

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def astype(self, precision: str) -> "ModelWeights":
        config = replace(self.config, precision=precision)
        return ModelWeights(config, {
            k: Tensor(v.data.astype(precision), requires_grad=True) for k, v in self.params.items()
        })

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __setitem__(self, name: str, value: Tensor) -> None:
        if name not in self.params:
            raise KeyError(name)
        self.params[name] = value

    # -- block views -----------------------------------------------------
    def _get(self, name):
        return self.params.get(name)

    def head(self):
        return [(self.params[f"head.{i}.weight"], self.params[f"head.{i}.bias"]) for i in range(N_HEAD_CONVS)]

    def tail(self):
        return self.params["tail.weight"], self.params["tail.bias"]

    def gte(self, b: int) -> GteWeights:
        p, pre = self.params, f"gte.{b}."
        attention = AttentionWeights(
            kind=CONV3X3, heads=self.config.heads,
            wq=p[pre + "q.weight"], wk=p[pre + "k.weight"], wv=p[pre + "v.weight"], wo=p[pre + "proj.weight"],
            bq=p[pre + "q.bias"], bk=p[pre + "k.bias"], bv=p[pre + "v.bias"], bo=p[pre + "proj.bias"],
            rel_bias=self._get(pre + "rel_bias"),
        )
        norms = tuple((p[pre + f"norm_{n}.gamma"], p[pre + f"norm_{n}.beta"]) for n in "qkv")
        ffn = FfnWeights(CONV_RELU_CONV, p[pre + "ffn.conv1.weight"], p[pre + "ffn.conv2.weight"],
                         p[pre + "ffn.conv1.bias"], p[pre + "ffn.conv2.bias"])
        return GteWeights(attention, norms, ffn)

    def tde(self, i: int) -> DirectionalWeights:
        p, pre = self.params, f"tde.{i}."
        attention = AttentionWeights(
            kind=FULLY_CONNECTED, heads=self.config.heads,
            wq=p[pre + "q.weight"], wk=p[pre + "k.weight"], wv=p[pre + "v.weight"], wo=p[pre + "proj.weight"],
            bq=p[pre + "q.bias"], bk=p[pre + "k.bias"], bv=p[pre + "v.bias"], bo=p[pre + "proj.bias"],
            rel_bias=self._get(pre + "rel_bias"),
        )
        ffn = FfnWeights(SPARSE_FCL, p[pre + "fc1.weight"], p[pre + "fc2.weight"],
                         p[pre + "fc1.bias"], p[pre + "fc2.bias"],
                         p[pre + "norm2.gamma"], p[pre + "norm2.beta"])
        return DirectionalWeights(p[pre + "norm1.gamma"], p[pre + "norm1.beta"], attention, ffn)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def head_forward(x: Tensor, head) -> Tensor:
    """Five 3x3 convolutions, ReLU after the first four, first-to-last skip."""
    w0, b0 = head[0]
    if x.shape[1] != w0.shape[1]:
        raise ConfigError(f"input has {x.shape[1]} channels, head expects {w0.shape[1]}")
    first = conv2d(x, w0, b0)
    y = first
    for w, b in head[1:]:
        y = conv2d(relu(y), w, b)
    return y + first


def gteblock_forward(x: Tensor, weights: GteWeights, config: ModelConfig) -> Tensor:
    c, p = x.shape[1], config.patch
    windows, layout = partition_windows(x, config.gte_window)
    grid = (config.gte_window // p, config.gte_window // p)
    tokens = [
        layer_norm(patchify(t, p), gamma, beta, config.ln_eps)
        for t, (gamma, beta) in zip(conv_qkv(windows, weights.attention), weights.norms)
    ]
    y = mhsa(*tokens, weights.attention)
    z = merge_windows(unpatchify(y, p, c, grid), layout) + x
    return conv_ffn(z, weights.ffn)


def _window_transformer(x: Tensor, weights: DirectionalWeights, config: ModelConfig) -> Tensor:
    c, p = x.shape[1], config.tde_patch
    windows, layout = partition_windows(x, config.tde_window)
    grid = (config.tde_window // p, config.tde_window // p)
    t = patchify(windows, p)
    n = layer_norm(t, weights.norm_gamma, weights.norm_beta, config.ln_eps)
    y = mhsa(n, n, n, weights.attention) + t
    z = sparse_ffn(y, grid, weights.ffn, config.dilation, config.ln_eps)
    return merge_windows(unpatchify(z, p, c, grid), layout)


def directional_transformer_forward(x: Tensor, kind: str, weights: DirectionalWeights, config: ModelConfig) -> Tensor:
    """One Ho / Ve / Co layer: shift, window transformer, shift back."""
    if kind == CO:
        return _window_transformer(x, weights, config)
    axis = {HO: HORIZONTAL, VE: VERTICAL}.get(kind)
    if axis is None:
        raise ConfigError(f"unknown transformer kind {kind!r}")
    s = config.shift
    extent = x.shape[3] if axis == HORIZONTAL else x.shape[2]
    s = s % extent
    return roll_reverse(_window_transformer(roll(x, axis, s), weights, config), axis, s)


def tdeblock_forward(x: Tensor, weights: ModelWeights, config: ModelConfig) -> Tensor:
    for i, kind in enumerate(config.tde_sequence()):
        x = directional_transformer_forward(x, kind, weights.tde(i), config)
    return x


def forward(noisy: Tensor, weights: ModelWeights, config: Optional[ModelConfig] = None) -> Tensor:
    """Denoise ``(N, Cin, H, W)``; the tail output is added to the input."""
    config = config or weights.config
    if not np.isfinite(noisy.data).all():
        raise NumericError("forward received non-finite input")
    y = head_forward(noisy, weights.head())
    for b in range(N_GTE):
        y = gteblock_forward(y, weights.gte(b), config)
    y = tdeblock_forward(y, weights, config)
    w, b = weights.tail()
    return conv2d(y, w, b) + noisy


class HWformer:
    """Convenience wrapper bundling a config with its weights."""

    def __init__(self, config: ModelConfig, weights: Optional[ModelWeights] = None, seed: int = 0):
        self.config = config
        self.weights = weights if weights is not None else ModelWeights.init(config, seed)

    @classmethod
    def zeros(cls, config: ModelConfig) -> "HWformer":
        return cls(config, ModelWeights.zeros(config))

    def __call__(self, x) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.config.dtype))
        return forward(x, self.weights, self.config)

    def denoise(self, x: np.ndarray) -> np.ndarray:
        """Inference on a plain array, without recording a graph."""
        with no_grad():
            return self(np.asarray(x, dtype=self.config.dtype)).data


# ---------------------------------------------------------------------------
# accounting
# ---------------------------------------------------------------------------

def count_params(weights) -> int:
    """Total number of scalars in the registry."""
    if isinstance(weights, HWformer):
        weights = weights.weights
    return int(sum(t.size for t in weights.parameters()))


def expected_param_count(config: ModelConfig) -> int:
    """Closed-form parameter total: conv ``Cout*Cin*k^2 + Cout``, FCL ``din*dout + dout``."""
    c, cin, h = config.base_channels, config.in_channels, config.heads

    def conv(ci, co):
        return co * ci * 9 + co

    def fcl(di, do):
        return di * do + do

    total = conv(cin, c) + 4 * conv(c, c) + conv(c, cin)
    dg, dt = config.gte_dim, config.tde_dim
    gte = 3 * conv(c, c) + 3 * 2 * dg + fcl(dg, dg) + 2 * conv(c, c)
    if config.gte_rel_bias:
        gte += _rel_table_rows(config.gte_window, config.patch) * h
    tde = 2 * dt + 4 * fcl(dt, dt) + 2 * dt + fcl(9 * dt, dt) + fcl(dt, dt)
    if config.tde_rel_bias:
        tde += _rel_table_rows(config.tde_window, config.tde_patch) * h
    return total + N_GTE * gte + len(PROSE_ORDER) * tde


def conv_flops(h: int, w: int, cin: int, cout: int, k: int = 3) -> int:
    return 2 * h * w * cout * cin * k * k


def _padded(extent: int, window: int) -> int:
    return math.ceil(extent / window) * window


def flops_breakdown(config: ModelConfig, h: int, w: int) -> Dict[str, int]:
    """Multiply-add FLOPs (2 per MAC) for one image, by component.

    Elementwise work (normalisation, softmax, activations, residual and
    bias additions) is not counted.
    """
    c, cin = config.base_channels, config.in_channels
    out = {"head": conv_flops(h, w, cin, c) + 4 * conv_flops(h, w, c, c)}

    hp, wp = _padded(h, config.gte_window), _padded(w, config.gte_window)
    n = (hp // config.gte_window) * (wp // config.gte_window)
    t, d = (config.gte_window // config.patch) ** 2, config.gte_dim
    gte_proj = 3 * conv_flops(hp, wp, c, c) + n * 2 * t * d * d
    gte_attn = n * 4 * t * t * d
    gte_ffn = 2 * conv_flops(h, w, c, c)

    hp, wp = _padded(h, config.tde_window), _padded(w, config.tde_window)
    n = (hp // config.tde_window) * (wp // config.tde_window)
    t, d = (config.tde_window // config.tde_patch) ** 2, config.tde_dim
    tde_proj = n * 4 * 2 * t * d * d
    tde_attn = n * 4 * t * t * d
    tde_ffn = n * (2 * t * 9 * d * d + 2 * t * d * d)
    layers = len(PROSE_ORDER)

    out["gte_projection"] = N_GTE * gte_proj
    out["gte_attention"] = N_GTE * gte_attn
    out["gte_ffn"] = N_GTE * gte_ffn
    out["tde_projection"] = layers * tde_proj
    out["tde_attention"] = layers * tde_attn
    out["tde_ffn"] = layers * tde_ffn
    out["tail"] = conv_flops(h, w, c, cin)
    out["attention"] = out["gte_attention"] + out["tde_attention"]
    out["total"] = sum(v for k, v in out.items() if k != "attention")
    return out


def count_flops(config: ModelConfig, h: int, w: int) -> int:
    return flops_breakdown(config, h, w)["total"]
