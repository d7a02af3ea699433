"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

This is deliberately not a general autodiff system: it carries exactly the
operations the ERP classifiers need (elementwise arithmetic, matmul,
reductions, shape moves, grouped convolution, average pooling, and a few
nonlinearities). Everything runs in float64 so analytic gradients can be
checked against central finite differences at tight tolerances.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from scipy.special import erf as _erf

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (pure evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """A dense array plus an optional gradient buffer.

    invariant: grad, when present, has the same shape as data.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph construction --------------------------------------------------

    @staticmethod
    def _result(data, parents, backward):
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def backward(self, grad=None):
        """Accumulate gradients of self w.r.t. every reachable tensor."""
        if self._backward is None and not self.requires_grad:
            raise RuntimeError("backward() called on a tensor with no recorded graph")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)

        # Iterative topological order (graphs can be thousands of nodes deep).
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(topo):
            if node._backward is None:
                continue
            grads = node._backward(node.grad)
            for p, g in zip(node._parents, grads):
                if g is None or not p.requires_grad:
                    continue
                p.grad = g if p.grad is None else p.grad + g

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other
        data = a.data + b.data
        return Tensor._result(
            data, (a, b),
            lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor._result(-a.data, (a,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        data = a.data * b.data
        return Tensor._result(
            data, (a, b),
            lambda g: (_unbroadcast(g * b.data, a.data.shape),
                       _unbroadcast(g * a.data, b.data.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other
        data = a.data / b.data
        return Tensor._result(
            data, (a, b),
            lambda g: (_unbroadcast(g / b.data, a.data.shape),
                       _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)))

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        a = self
        data = a.data ** exponent
        return Tensor._result(
            data, (a,),
            lambda g: (g * exponent * a.data ** (exponent - 1),))

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        data = a.data @ b.data

        def backward(g):
            ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape)
            gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape)
            return ga, gb

        return Tensor._result(data, (a, b), backward)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        data = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, a.data.shape).copy(),)
            gg = g
            if not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                for ax in sorted(ax % a.data.ndim for ax in axes):
                    gg = np.expand_dims(gg, ax)
            return (np.broadcast_to(gg, a.data.shape).copy(),)

        return Tensor._result(data, (a,), backward)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = 1
            for ax in axes:
                n *= self.data.shape[ax]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- shape moves ---------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        data = a.data.reshape(shape)
        return Tensor._result(data, (a,), lambda g: (g.reshape(a.data.shape),))

    def swapaxes(self, ax1, ax2):
        a = self
        data = a.data.swapaxes(ax1, ax2)
        return Tensor._result(data, (a,), lambda g: (g.swapaxes(ax1, ax2),))

    def transpose(self, *axes):
        a = self
        data = a.data.transpose(axes)
        inv = np.argsort(axes)
        return Tensor._result(data, (a,), lambda g: (g.transpose(inv),))

    # -- elementwise nonlinear -----------------------------------------------

    def exp(self):
        a = self
        data = np.exp(a.data)
        return Tensor._result(data, (a,), lambda g: (g * data,))

    def log(self):
        a = self
        data = np.log(a.data)
        return Tensor._result(data, (a,), lambda g: (g / a.data,))

    def sqrt(self):
        a = self
        data = np.sqrt(a.data)
        return Tensor._result(data, (a,), lambda g: (g * 0.5 / data,))

    def tanh(self):
        a = self
        data = np.tanh(a.data)
        return Tensor._result(data, (a,), lambda g: (g * (1.0 - data * data),))

    def clamp_min(self, lo: float):
        """max(x, lo); gradient passes only where x >= lo."""
        a = self
        data = np.maximum(a.data, lo)
        mask = (a.data >= lo).astype(np.float64)
        return Tensor._result(data, (a,), lambda g: (g * mask,))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- activations ---------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = (x.data > 0).astype(np.float64)
    return Tensor._result(x.data * mask, (x,), lambda g: (g * mask,))


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    pos = x.data > 0
    ex = np.exp(np.minimum(x.data, 0.0))
    data = np.where(pos, x.data, alpha * (ex - 1.0))
    local = np.where(pos, 1.0, alpha * ex)
    return Tensor._result(data, (x,), lambda g: (g * local,))


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-form) Gaussian error linear unit."""
    cdf = 0.5 * (1.0 + _erf(x.data / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x.data * x.data) / np.sqrt(2.0 * np.pi)
    data = x.data * cdf
    local = cdf + x.data * pdf
    return Tensor._result(data, (x,), lambda g: (g * local,))


def batchnorm_train(x: Tensor, gamma: Tensor, beta: Tensor, axes: tuple,
                    eps: float = 1e-5):
    """Fused batch normalization over `axes` using batch statistics.

    gamma/beta are 1-D over the remaining (channel) axis. Returns
    (out, batch_mean, batch_var) with the statistics as plain arrays.
    """
    bshape = tuple(1 if i in axes else s for i, s in enumerate(x.data.shape))
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gb = gamma.data.reshape(bshape)
    out = gb * xhat + beta.data.reshape(bshape)

    def backward(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gb
        m1 = dxhat.mean(axis=axes, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=axes, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgamma, dbeta

    return (Tensor._result(out, (x, gamma, beta), backward),
            mu.reshape(-1), var.reshape(-1))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - inner),)

    return Tensor._result(s, (x,), backward)


# -- convolution / pooling primitives ------------------------------------------

def _window_view(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """Strided sliding-window view of shape (B, C, Ho, Wo, kh, kw)."""
    b, c, h, w = xp.shape
    ho = (h - kh) // sh + 1
    wo = (w - kw) // sw + 1
    s0, s1, s2, s3 = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, (b, c, ho, wo, kh, kw), (s0, s1, s2 * sh, s3 * sw, s2, s3),
        writeable=False)


_FFT_MIN_KERNEL = 8  # below this the direct path is exact and fast enough


def _conv_general(xp, wt, stride, groups):
    """im2col + einsum path; works for any kernel/stride/groups."""
    batch, cin = xp.shape[:2]
    cout, cin_g, kh, kw = wt.shape
    sh, sw = stride
    win = _window_view(xp, kh, kw, sh, sw)
    ho, wo = win.shape[2], win.shape[3]
    wing = win.reshape(batch, groups, cin_g, ho, wo, kh, kw)
    wg = wt.reshape(groups, cout // groups, cin_g, kh, kw)
    out = np.einsum("bgihwkl,goikl->bgohw", wing, wg, optimize=True)
    out = np.ascontiguousarray(out.reshape(batch, cout, ho, wo))

    def backward(g):
        gg = g.reshape(batch, groups, cout // groups, ho, wo)
        gw = np.einsum("bgihwkl,bgohw->goikl", wing, gg, optimize=True)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                contrib = np.einsum("bgohw,goi->bgihw", gg, wg[:, :, :, i, j],
                                    optimize=True)
                gxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += \
                    contrib.reshape(batch, cin, ho, wo)
        return gxp, gw.reshape(wt.shape)

    return out, backward


def _conv_time_fft(xp, wt, groups):
    """(1, k) kernels at stride 1: correlation along the time axis done in
    the Fourier domain, with the channel contraction applied to the spectra.
    Supports groups == 1 and depthwise groups == Cin.

    With nfft >= padded length, valid correlation (forward, dW) and full
    convolution (dX) are free of circular wraparound; forward spectra are
    reused by the backward closure.
    """
    from scipy import fft as sfft

    batch, cin, hp, wp = xp.shape
    cout, _, _, kw = wt.shape
    wo = wp - kw + 1
    nfft = sfft.next_fast_len(wp, real=True)
    xf = sfft.rfft(xp, nfft, axis=-1)                       # (B, C, H, v)
    if groups == 1:
        wf = sfft.rfft(wt.reshape(cout, cin, kw), nfft, axis=-1)
        outf = np.einsum("bchv,fcv->bfhv", xf, np.conj(wf), optimize=True)
        out = sfft.irfft(outf, nfft, axis=-1)[..., :wo]

        def backward(g):
            gf = sfft.rfft(g, nfft, axis=-1)                # (B, F, H, v)
            dxf = np.einsum("bfhv,fcv->bchv", gf, wf, optimize=True)
            gxp = sfft.irfft(dxf, nfft, axis=-1)[..., :wp]
            dwf = np.einsum("bfhv,bchv->fcv", np.conj(gf), xf, optimize=True)
            gw = sfft.irfft(dwf, nfft, axis=-1)[..., :kw]
            return np.ascontiguousarray(gxp), gw.reshape(wt.shape)
    else:
        mult = cout // cin
        wf = sfft.rfft(wt.reshape(cin, mult, kw), nfft, axis=-1)
        outf = np.einsum("bchv,cmv->bcmhv", xf, np.conj(wf), optimize=True)
        out = sfft.irfft(outf, nfft, axis=-1)[..., :wo]
        out = out.reshape(batch, cout, hp, wo)

        def backward(g):
            gf = sfft.rfft(g.reshape(batch, cin, mult, hp, -1), nfft, axis=-1)
            dxf = np.einsum("bcmhv,cmv->bchv", gf, wf, optimize=True)
            gxp = sfft.irfft(dxf, nfft, axis=-1)[..., :wp]
            dwf = np.einsum("bcmhv,bchv->cmv", np.conj(gf), xf, optimize=True)
            gw = sfft.irfft(dwf, nfft, axis=-1)[..., :kw]
            return np.ascontiguousarray(gxp), gw.reshape(wt.shape)

    return np.ascontiguousarray(out), backward


def _conv_full_height(xp, wt, stride, groups):
    """(H, 1) kernels spanning the full electrode axis: one einsum each way."""
    batch, cin, hp, wp = xp.shape
    cout, cin_g, kh, _ = wt.shape
    sw = stride[1]
    xs = xp[:, :, :, ::sw]
    wo = xs.shape[-1]
    xg = xs.reshape(batch, groups, cin_g, hp, wo)
    wg = wt.reshape(groups, cout // groups, cin_g, kh)
    out = np.einsum("bgchw,goch->bgow", xg, wg, optimize=True)
    out = np.ascontiguousarray(out.reshape(batch, cout, 1, wo))

    def backward(g):
        gg = g.reshape(batch, groups, cout // groups, wo)
        gw = np.einsum("bgchw,bgow->goch", xg, gg, optimize=True)
        gxs = np.einsum("bgow,goch->bgchw", gg, wg, optimize=True)
        gxp = np.zeros_like(xp)
        gxp[:, :, :, ::sw] = gxs.reshape(batch, cin, hp, wo)
        return gxp, gw.reshape(wt.shape)

    return out, backward


def _conv_pointwise(xp, wt, stride, groups):
    """(1, 1) kernels: a per-position channel mix."""
    batch, cin, hp, wp = xp.shape
    cout, cin_g = wt.shape[:2]
    sh, sw = stride
    xs = xp[:, :, ::sh, ::sw]
    ho, wo = xs.shape[2], xs.shape[3]
    xg = xs.reshape(batch, groups, cin_g, ho, wo)
    wg = wt.reshape(groups, cout // groups, cin_g)
    out = np.einsum("bgchw,goc->bgohw", xg, wg, optimize=True)
    out = np.ascontiguousarray(out.reshape(batch, cout, ho, wo))

    def backward(g):
        gg = g.reshape(batch, groups, cout // groups, ho, wo)
        gw = np.einsum("bgchw,bgohw->goc", xg, gg, optimize=True)
        gxs = np.einsum("bgohw,goc->bgchw", gg, wg, optimize=True)
        gxp = np.zeros_like(xp)
        gxp[:, :, ::sh, ::sw] = gxs.reshape(batch, cin, ho, wo)
        return gxp, gw.reshape(wt.shape)

    return out, backward


def conv2d(x: Tensor, w: Tensor, b, stride=(1, 1), padding=((0, 0), (0, 0)),
           groups: int = 1) -> Tensor:
    """Grouped 2-D cross-correlation.

    x: (B, Cin, H, W); w: (Cout, Cin // groups, kh, kw); b: (Cout,) or None.
    padding is per-side: ((top, bottom), (left, right)). Output extents follow
    floor((H + pt + pb - kh) / sh) + 1. Kernel shapes the classifiers use
    ((1, k) at stride 1, full-height (H, 1), and (1, 1)) take specialized
    fast paths; everything else goes through im2col.
    """
    bt = as_tensor(b) if b is not None else None
    batch, cin, h, wdt = x.data.shape
    cout, cin_g, kh, kw = w.data.shape
    sh, sw = stride
    (pt, pb), (pl, pr) = padding
    if cin % groups or cout % groups or cin_g != cin // groups:
        raise ValueError(
            f"group count {groups} incompatible with channels {cin}->{cout}")
    if h + pt + pb < kh or wdt + pl + pr < kw:
        raise ValueError(
            f"kernel ({kh},{kw}) larger than padded input ({h + pt + pb},{wdt + pl + pr})")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    if kh == 1 and kw == 1:
        out, core_backward = _conv_pointwise(xp, w.data, stride, groups)
    elif (kh == 1 and sh == 1 and sw == 1 and kw >= _FFT_MIN_KERNEL
          and groups in (1, cin)):
        out, core_backward = _conv_time_fft(xp, w.data, groups)
    elif kw == 1 and kh == h + pt + pb:
        out, core_backward = _conv_full_height(xp, w.data, stride, groups)
    else:
        out, core_backward = _conv_general(xp, w.data, stride, groups)

    if bt is not None:
        out = out + bt.data.reshape(1, cout, 1, 1)

    def backward(g):
        gxp, gw = core_backward(g)
        gx = gxp[:, :, pt:pt + h, pl:pl + wdt]
        grads = [gx, gw]
        if bt is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, w) if bt is None else (x, w, bt)
    return Tensor._result(out, parents, backward)


def avg_pool2d(x: Tensor, kernel, stride=None) -> Tensor:
    """Average pooling; overlapping windows are supported (stride < kernel)."""
    kh, kw = kernel
    sh, sw = stride if stride is not None else kernel
    batch, c, h, w = x.data.shape
    if h < kh or w < kw:
        raise ValueError(f"pool kernel ({kh},{kw}) larger than input ({h},{w})")
    win = _window_view(x.data, kh, kw, sh, sw)
    ho, wo = win.shape[2], win.shape[3]
    out = win.mean(axis=(-2, -1))

    def backward(g):
        gx = np.zeros_like(x.data)
        scale = g / (kh * kw)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += scale
        return (gx,)

    return Tensor._result(np.ascontiguousarray(out), (x,), backward)
