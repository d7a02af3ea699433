"""Layer catalogue: specs, parameter initialization, shape rules, forwards.

Supported kinds: conv2d, batchnorm, activation, pooling, dropout, linear,
attention-encoder, flatten. Inputs to conv/pool/batchnorm are (B, C, H, W);
linear takes (B, F); an attention-encoder accepts either a token sequence
(B, N, D) or a collapsed feature map (B, D, 1, N), which it rearranges into
tokens itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    Tensor,
    avg_pool2d,
    batchnorm_train,
    conv2d,
    elu,
    gelu,
    relu,
    softmax,
)

LAYER_KINDS = (
    "conv2d", "batchnorm", "activation", "pooling", "dropout", "linear",
    "attention-encoder", "flatten",
)

ACTIVATIONS = {"elu": elu, "gelu": gelu, "relu": relu}

BN_MOMENTUM = 0.1
BN_EPS = 1e-5
LN_EPS = 1e-5


class ShapeError(ValueError):
    """Layer sequence is inconsistent with the declared input shape."""


@dataclass
class LayerSpec:
    """One layer's kind plus its kind-specific hyperparameters.

    `tag` groups layers into named blocks so whole blocks can be frozen.
    """

    kind: str
    out_channels: int = 0            # conv2d
    kernel: tuple = (1, 1)           # conv2d / pooling
    stride: tuple = (1, 1)           # conv2d / pooling
    padding: str = "valid"           # conv2d: "same" (along W) or "valid"
    groups: int = 1                  # conv2d
    bias: bool = True                # conv2d / linear
    features: int = 0                # batchnorm (channel count)
    activation: str = "elu"          # activation
    rate: float = 0.0                # dropout
    in_features: int = 0             # linear
    out_features: int = 0            # linear
    heads: int = 0                   # attention-encoder
    hidden: int = 0                  # attention-encoder (token width)
    ffn_hidden: int = 0              # attention-encoder
    tag: str = ""

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind: {self.kind!r}")
        if self.kind == "attention-encoder" and self.heads > 0 \
                and self.hidden % self.heads != 0:
            raise ShapeError(
                f"attention hidden width {self.hidden} not divisible by "
                f"{self.heads} heads")
        if self.kind == "dropout" and not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate {self.rate} outside [0, 1)")


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _conv_padding(spec: LayerSpec):
    """Per-side padding. 'same' preserves the W (time) extent at stride 1."""
    if spec.padding == "valid":
        return (0, 0), (0, 0)
    if spec.padding == "same":
        kh, kw = spec.kernel
        if kh != 1:
            raise ShapeError("'same' padding is only defined for (1, k) kernels")
        total = kw - 1
        return (0, 0), (total // 2, total - total // 2)
    raise ValueError(f"unknown padding mode {spec.padding!r}")


def init_params(spec: LayerSpec, in_shape, rng: np.random.Generator):
    """Build (params, buffers) dicts for a layer given its input shape."""
    params, buffers = {}, {}
    if spec.kind == "conv2d":
        cin = in_shape[0]
        if cin % spec.groups or spec.out_channels % spec.groups:
            raise ShapeError(
                f"groups={spec.groups} must divide channels "
                f"{cin}->{spec.out_channels}")
        kh, kw = spec.kernel
        wshape = (spec.out_channels, cin // spec.groups, kh, kw)
        fan_in = (cin // spec.groups) * kh * kw
        fan_out = (spec.out_channels // spec.groups) * kh * kw
        params["weight"] = Tensor(_glorot(rng, wshape, fan_in, fan_out),
                                  requires_grad=True)
        if spec.bias:
            params["bias"] = Tensor(np.zeros(spec.out_channels), requires_grad=True)
    elif spec.kind == "batchnorm":
        c = spec.features or in_shape[0]
        params["gamma"] = Tensor(np.ones(c), requires_grad=True)
        params["beta"] = Tensor(np.zeros(c), requires_grad=True)
        buffers["running_mean"] = np.zeros(c)
        buffers["running_var"] = np.ones(c)
    elif spec.kind == "linear":
        fi, fo = spec.in_features, spec.out_features
        params["weight"] = Tensor(_glorot(rng, (fi, fo), fi, fo), requires_grad=True)
        if spec.bias:
            params["bias"] = Tensor(np.zeros(fo), requires_grad=True)
    elif spec.kind == "attention-encoder":
        d, h = spec.hidden, spec.ffn_hidden
        for name in ("wq", "wk", "wv", "wo"):
            params[name] = Tensor(_glorot(rng, (d, d), d, d), requires_grad=True)
            params[name.replace("w", "b")] = Tensor(np.zeros(d), requires_grad=True)
        params["ln1_gamma"] = Tensor(np.ones(d), requires_grad=True)
        params["ln1_beta"] = Tensor(np.zeros(d), requires_grad=True)
        params["ln2_gamma"] = Tensor(np.ones(d), requires_grad=True)
        params["ln2_beta"] = Tensor(np.zeros(d), requires_grad=True)
        params["ffn_w1"] = Tensor(_glorot(rng, (d, h), d, h), requires_grad=True)
        params["ffn_b1"] = Tensor(np.zeros(h), requires_grad=True)
        params["ffn_w2"] = Tensor(_glorot(rng, (h, d), h, d), requires_grad=True)
        params["ffn_b2"] = Tensor(np.zeros(d), requires_grad=True)
    return params, buffers


def out_shape(spec: LayerSpec, in_shape) -> tuple:
    """Shape of one sample (no batch axis) after this layer; raises ShapeError."""
    if spec.kind == "conv2d":
        if len(in_shape) != 3:
            raise ShapeError(f"conv2d needs (C, H, W) input, got {in_shape}")
        cin, h, w = in_shape
        kh, kw = spec.kernel
        sh, sw = spec.stride
        (pt, pb), (pl, pr) = _conv_padding(spec)
        if h + pt + pb < kh or w + pl + pr < kw:
            raise ShapeError(
                f"conv kernel {spec.kernel} does not fit input ({h},{w}) "
                f"with padding {spec.padding}")
        ho = (h + pt + pb - kh) // sh + 1
        wo = (w + pl + pr - kw) // sw + 1
        return (spec.out_channels, ho, wo)
    if spec.kind == "pooling":
        cin, h, w = in_shape
        kh, kw = spec.kernel
        sh, sw = spec.stride
        if h < kh or w < kw:
            raise ShapeError(f"pool kernel {spec.kernel} does not fit ({h},{w})")
        return (cin, (h - kh) // sh + 1, (w - kw) // sw + 1)
    if spec.kind == "batchnorm":
        c = spec.features or in_shape[0]
        if in_shape[0] != c:
            raise ShapeError(f"batchnorm over {c} features got {in_shape}")
        return in_shape
    if spec.kind in ("activation", "dropout"):
        return in_shape
    if spec.kind == "flatten":
        return (int(np.prod(in_shape)),)
    if spec.kind == "linear":
        if len(in_shape) != 1 or in_shape[0] != spec.in_features:
            raise ShapeError(
                f"linear expects ({spec.in_features},), got {in_shape}")
        return (spec.out_features,)
    if spec.kind == "attention-encoder":
        if len(in_shape) == 3:
            d, h, n = in_shape
            if h != 1:
                raise ShapeError(
                    f"attention-encoder needs a collapsed (D, 1, N) map, got {in_shape}")
            if n < 1:
                raise ShapeError("empty token sequence")
        elif len(in_shape) == 2:
            n, d = in_shape
        else:
            raise ShapeError(f"attention-encoder got {in_shape}")
        if d != spec.hidden:
            raise ShapeError(
                f"token width {d} != encoder hidden size {spec.hidden}")
        return (n, d)
    raise ValueError(spec.kind)


def _layernorm(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return gamma * (xc / (var + LN_EPS).sqrt()) + beta


def attention_scores(x: Tensor, params, heads: int):
    """Per-head softmax attention weights, shape (B, heads, N, N)."""
    b, n, d = x.shape
    dh = d // heads
    q = (x @ params["wq"] + params["bq"]).reshape(b, n, heads, dh).swapaxes(1, 2)
    k = (x @ params["wk"] + params["bk"]).reshape(b, n, heads, dh).swapaxes(1, 2)
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dh))
    return softmax(scores, axis=-1)


def attention_encoder_forward(spec: LayerSpec, params, x: Tensor, mode: str,
                              rng, need_attn: bool = False):
    """Pre-norm transformer encoder block without positional encoding.

    x = x + Drop(MHA(LN(x))); x = x + Drop(FFN(LN(x))).
    """
    if x.ndim == 4:
        # (B, D, 1, N) feature map -> (B, N, D) tokens
        b, d, one, n = x.shape
        x = x.reshape(b, d, n).swapaxes(1, 2)
    b, n, d = x.shape
    heads, dh = spec.heads, d // spec.heads

    h1 = _layernorm(x, params["ln1_gamma"], params["ln1_beta"])
    attn = attention_scores(h1, params, heads)
    v = (h1 @ params["wv"] + params["bv"]).reshape(b, n, heads, dh).swapaxes(1, 2)
    ctx = (attn @ v).swapaxes(1, 2).reshape(b, n, d)
    ctx = ctx @ params["wo"] + params["bo"]
    x = x + _dropout(ctx, spec.rate, mode, rng)

    h2 = _layernorm(x, params["ln2_gamma"], params["ln2_beta"])
    h2 = gelu(h2 @ params["ffn_w1"] + params["ffn_b1"])
    h2 = _dropout(h2, spec.rate, mode, rng)
    h2 = h2 @ params["ffn_w2"] + params["ffn_b2"]
    x = x + _dropout(h2, spec.rate, mode, rng)
    return (x, attn) if need_attn else (x, None)


def _dropout(x: Tensor, rate: float, mode: str, rng) -> Tensor:
    if mode != "train" or rate <= 0.0:
        return x
    mask = (rng.random(x.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return x * Tensor(mask)


def _batchnorm_forward(spec, params, buffers, x: Tensor, mode: str) -> Tensor:
    c = x.shape[1]
    axes = (0, 2, 3) if x.ndim == 4 else (0,)
    bshape = (1, c, 1, 1) if x.ndim == 4 else (1, c)
    if mode == "train":
        out, mu, var = batchnorm_train(x, params["gamma"], params["beta"],
                                       axes, eps=BN_EPS)
        # batch statistics are staged here and folded into the running
        # averages only when an optimizer step actually changes the model
        # (ModelGraph.commit_batch_stats), so a zero-lr run is a strict no-op
        buffers["pending_mean"] = mu
        buffers["pending_var"] = var
        return out
    mu = buffers["running_mean"].reshape(bshape)
    sd = np.sqrt(buffers["running_var"].reshape(bshape) + BN_EPS)
    xhat = (x - mu) * (1.0 / sd)
    return params["gamma"].reshape(bshape) * xhat + params["beta"].reshape(bshape)


def layer_forward(spec: LayerSpec, params, buffers, x: Tensor, mode: str,
                  rng) -> Tensor:
    """Dispatch one layer. mode is 'train' or 'eval'."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if spec.kind == "conv2d":
        return conv2d(x, params["weight"], params.get("bias"),
                      stride=spec.stride, padding=_conv_padding(spec),
                      groups=spec.groups)
    if spec.kind == "batchnorm":
        return _batchnorm_forward(spec, params, buffers, x, mode)
    if spec.kind == "activation":
        try:
            fn = ACTIVATIONS[spec.activation]
        except KeyError:
            raise ValueError(f"unknown activation {spec.activation!r}") from None
        return fn(x)
    if spec.kind == "pooling":
        return avg_pool2d(x, spec.kernel, spec.stride)
    if spec.kind == "dropout":
        return _dropout(x, spec.rate, mode, rng)
    if spec.kind == "linear":
        out = x @ params["weight"]
        if "bias" in params:
            out = out + params["bias"]
        return out
    if spec.kind == "flatten":
        return x.reshape(x.shape[0], -1)
    if spec.kind == "attention-encoder":
        out, _ = attention_encoder_forward(spec, params, x, mode, rng)
        return out
    raise ValueError(f"unknown layer kind {spec.kind!r}")
