"""Tape-based reverse-mode differentiation over numpy arrays.

Only the operators the planners need are provided. Operations record onto
the innermost active :class:`Tape`; outside a tape they simply compute.

    >>> w = Tensor(np.ones(3), requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = tsum(mul(w, Tensor(np.arange(3.0))))
    >>> tape.backward(loss, [w])[0]
    array([0., 1., 2.])
"""
from __future__ import annotations

import numpy as np

from . import _kernels
from .exceptions import ContractError

# conv2d uses the per-tap kernel up to this many taps (a 3x3 kernel over two
# channels), GEMM above it
DIRECT_CONV_TAPS = 18

_TAPES = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = shape[0]
        return reshape(self, tuple(shape))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = axes[0]
        return transpose(self, tuple(axes))

    def sum(self):
        return tsum(self)


class Tape:
    """Ordered record of differentiable operations.

    A tape may be differentiated once; call :meth:`reset` to reuse it.
    """

    def __init__(self):
        self.records = []
        self.used = False

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def reset(self):
        self.records = []
        self.used = False

    def record(self, outputs, inputs, backward_fn):
        self.records.append((outputs, inputs, backward_fn))

    def backward(self, loss: Tensor, wrt=None):
        """Accumulate gradients of scalar ``loss`` into every recorded input.

        Leaf tensors with ``requires_grad`` receive ``.grad``; if ``wrt`` is
        given the matching gradients are returned (zeros when unused).
        """
        if self.used:
            raise RuntimeError("tape already differentiated; call reset() first")
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        self.used = True
        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for outputs, inputs, fn in reversed(self.records):
            gouts = [grads.pop(id(o), None) for o in outputs]
            if all(g is None for g in gouts):
                continue
            gouts = [np.zeros_like(o.data) if g is None else g for o, g in zip(outputs, gouts)]
            gins = fn(*gouts) if len(outputs) > 1 else fn(gouts[0])
            if not isinstance(gins, tuple):
                gins = (gins,)
            for t, g in zip(inputs, gins):
                if g is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
                    leaves[key] = t
        for key, t in leaves.items():
            if key in grads:
                g = grads[key].astype(t.dtype, copy=False)
                t.grad = g if t.grad is None else t.grad + g
        if wrt is None:
            return None
        return [
            np.zeros_like(t.data) if t.grad is None else t.grad
            for t in wrt
        ]


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(out_data, inputs, backward_fn):
    """Wrap results and record them when a tape is active."""
    multi = isinstance(out_data, tuple)
    outs = tuple(Tensor(d) for d in out_data) if multi else (Tensor(out_data),)
    if _TAPES and any(t.requires_grad for t in inputs):
        for o in outs:
            o.requires_grad = True
        _TAPES[-1].record(outs, tuple(inputs), backward_fn)
    return outs if multi else outs[0]


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise ContractError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- elementwise ------------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "add")
    return _emit(a.data + b.data, (a, b), lambda g: (g, g))


def add_bias(x, b, axis=1):
    """``x + b`` with ``b`` of length ``x.shape[axis]`` broadcast along ``axis``."""
    x, b = _as_tensor(x), _as_tensor(b)
    if b.ndim != 1 or b.shape[0] != x.shape[axis]:
        raise ContractError(f"bias of shape {b.shape} does not match axis {axis} of {x.shape}")
    view = [1] * x.ndim
    view[axis] = -1
    others = tuple(i for i in range(x.ndim) if i != axis)
    return _emit(x.data + b.data.reshape(view), (x, b), lambda g: (g, g.sum(axis=others)))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a, s: float):
    a = _as_tensor(a)
    return _emit(a.data * s, (a,), lambda g: g * s)


def sigmoid(a):
    a = _as_tensor(a)
    y = _sigmoid(a.data)
    return _emit(y, (a,), lambda g: g * y * (1.0 - y))


def tanh(a):
    a = _as_tensor(a)
    y = np.tanh(a.data)
    return _emit(y, (a,), lambda g: g * (1.0 - y * y))


def tsum(a):
    a = _as_tensor(a)
    shape = a.shape
    return _emit(a.data.sum(), (a,), lambda g: np.broadcast_to(g, shape).copy())


def _sigmoid(z):
    # tanh form stays finite for any z
    return 0.5 + 0.5 * np.tanh(0.5 * z)


# -- shape ------------------------------------------------------------------

def reshape(a, shape):
    a = _as_tensor(a)
    old = a.shape
    return _emit(a.data.reshape(shape), (a,), lambda g: g.reshape(old))


def transpose(a, axes):
    a = _as_tensor(a)
    inv = tuple(np.argsort(axes))
    return _emit(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 lambda g: np.ascontiguousarray(g.transpose(inv)))


def concat(tensors, axis=1):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _emit(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


# -- convolutions -----------------------------------------------------------

def _check_kernel(F):
    if F % 2 != 1:
        raise ContractError(f"kernel size must be odd, got {F}")


def _pad(x, p):
    if p == 0:
        return x
    B, C, H, W = x.shape
    out = np.zeros((B, C, H + 2 * p, W + 2 * p), dtype=x.dtype)
    out[:, :, p:p + H, p:p + W] = x
    return out


def _offsets(F, Wp):
    return [dy * Wp + dx for dy in range(F) for dx in range(F)]


def _unflatten(flat, H, W, Wp):
    """``(B, O, L)`` row-padded outputs to ``(B, O, H, W)``."""
    B, O, L = flat.shape
    full = np.zeros((B, O, H * Wp), dtype=flat.dtype)
    full[:, :, :L] = flat
    return np.ascontiguousarray(full.reshape(B, O, H, Wp)[..., :W])


def _columns(xp, F, H, W):
    """Patch matrix ``(C*F*F, B*L)`` over the flattened padded grid.

    Output position ``(y, x)`` lives at flat index ``y*Wp + x``; columns with
    ``x >= W`` are padding artefacts discarded by :func:`_unflatten`.
    """
    B, C, Hp, Wp = xp.shape
    L = (H - 1) * Wp + W
    xf = xp.reshape(B, C, Hp * Wp).transpose(1, 0, 2)
    offs = _offsets(F, Wp)
    cols = np.empty((C, len(offs), B, L), dtype=xp.dtype)
    for t, off in enumerate(offs):
        cols[:, t] = xf[:, :, off:off + L]
    return cols.reshape(C * len(offs), B * L)


def _corr_gemm(xp, w, H, W):
    """Valid cross-correlation of padded ``xp`` (B,C,Hp,Wp) with ``w`` (O,C,F,F)."""
    B, C, Hp, Wp = xp.shape
    O, _, F, _ = w.shape
    L = (H - 1) * Wp + W
    if O < C:
        # few outputs: multiply every tap at once, then shift-add the planes
        offs = _offsets(F, Wp)
        wm = np.ascontiguousarray(w.transpose(2, 3, 0, 1)).reshape(F * F * O, C)
        z = np.matmul(wm, xp.reshape(B, C, Hp * Wp)).reshape(B, F * F, O, Hp * Wp)
        flat = np.zeros((B, O, L), dtype=z.dtype)
        for t, off in enumerate(offs):
            flat += z[:, t, :, off:off + L]
    else:
        cols = _columns(xp, F, H, W)
        flat = (w.reshape(O, -1) @ cols).reshape(O, B, L).transpose(1, 0, 2)
    return _unflatten(flat, H, W, Wp)


def _weight_grad(xp, g, F):
    """``dL/dw`` for a same-padded correlation with output gradient ``g``."""
    B, O, H, W = g.shape
    C, Wp = xp.shape[1], xp.shape[3]
    L = (H - 1) * Wp + W
    gp = np.zeros((B, O, H, Wp), dtype=g.dtype)
    gp[..., :W] = g
    gl = gp.reshape(B, O, H * Wp)[:, :, :L].transpose(1, 0, 2).reshape(O, B * L)
    return (gl @ _columns(xp, F, H, W).T).reshape(O, C, F, F)


def conv2d(x, w, b=None):
    """Stride-1 cross-correlation with zero "same" padding.

    ``x`` is ``(B, C, m, m)`` or ``(C, m, m)``; ``w`` is ``(O, C, F, F)``
    with odd ``F``; ``b`` is ``(O,)`` or None. Convolutions with at most
    ``DIRECT_CONV_TAPS`` taps per output run the sequential per-tap kernel
    shared with :func:`local_conv2d`; larger ones go through GEMM.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    squeeze = x.ndim == 3
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4 or w.ndim != 4 or w.shape[1] != x.shape[1] or w.shape[2] != w.shape[3]:
        raise ContractError(f"conv2d: incompatible input {x.shape} and weight {w.shape}")
    if x.dtype != w.dtype:
        raise ContractError(f"conv2d: dtype mismatch {x.dtype} vs {w.dtype}")
    O, C, F, _ = w.shape
    _check_kernel(F)
    p = (F - 1) // 2
    B, _, H, W = x.shape
    xp = _pad(x.data, p)
    wd = w.data
    if C * F * F <= DIRECT_CONV_TAPS:
        out = _kernels.corr_taps(xp, wd, H, W)
    else:
        out = _corr_gemm(xp, wd, H, W)

    def backward(g):
        gw = _weight_grad(xp, g, F)
        w_flip = np.ascontiguousarray(wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        gx = _corr_gemm(_pad(g, p), w_flip, H, W)
        return gx, gw

    y = _emit(out, (x, w), backward)
    if b is not None:
        y = add_bias(y, b, axis=1)
    if squeeze:
        y = reshape(y, y.shape[1:])
    return y


def local_conv2d(x, w):
    """Untied "same" cross-correlation with a separate kernel per position.

    ``x`` is ``(B, C, m, m)`` and ``w`` is ``(B, O, C, F, F, m, m)``: output
    ``[b, o, i, j]`` sums ``w[b, o, c, dy, dx, i, j] * x_pad[b, c, i+dy, j+dx]``.
    Accumulation order matches the per-tap path of :func:`conv2d`, so a
    position-constant ``w`` reproduces it bit for bit.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    B, C, H, W = x.shape
    if w.ndim != 7 or w.shape[0] != B or w.shape[2] != C or w.shape[5:] != (H, W):
        raise ContractError(f"local_conv2d: incompatible input {x.shape} and weight {w.shape}")
    if x.dtype != w.dtype:
        raise ContractError(f"local_conv2d: dtype mismatch {x.dtype} vs {w.dtype}")
    F = w.shape[3]
    _check_kernel(F)
    p = (F - 1) // 2
    xp = _pad(x.data, p)
    wd = np.ascontiguousarray(w.data)
    out = _kernels.local_corr_taps(xp, wd, H, W)

    def backward(g):
        gw, gxp = _kernels.local_corr_taps_backward(xp, wd, np.ascontiguousarray(g), H, W)
        gx = gxp[:, :, p:p + H, p:p + W] if p else gxp
        return np.ascontiguousarray(gx), gw

    return _emit(out, (x, w), backward)


def channel_max(x):
    """Max over axis 1; returns ``(values, argmax)`` with ties to the lowest channel."""
    x = _as_tensor(x)
    squeeze = x.ndim == 3
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    xd = x.data
    idx = np.argmax(xd, axis=1)[:, None]
    vals = np.take_along_axis(xd, idx, axis=1)

    def backward(g):
        gx = np.zeros_like(xd)
        np.put_along_axis(gx, idx, g, axis=1)
        return gx

    y = _emit(vals, (x,), backward)
    if squeeze:
        return reshape(y, y.shape[1:]), idx[0, 0]
    return y, idx[:, 0]


# -- recurrent cell and loss ------------------------------------------------

def lstm_cell(x, h, c, weight, bias):
    """One LSTM step for a batch of rows.

    ``weight`` is ``(I + H, 4H)`` acting on ``[x, h]`` and ``bias`` is
    ``(4H,)``; gate blocks are ordered input, forget, cell, output.
    Returns ``(h_new, c_new)``.
    """
    x, h, c, weight, bias = (_as_tensor(t) for t in (x, h, c, weight, bias))
    N, I = x.shape
    H = h.shape[1]
    if h.shape != (N, H) or c.shape != (N, H) or weight.shape != (I + H, 4 * H) or bias.shape != (4 * H,):
        raise ContractError(
            f"lstm_cell: shapes x{x.shape} h{h.shape} c{c.shape} W{weight.shape} b{bias.shape}"
        )
    W = weight.data
    xh = np.concatenate([x.data, h.data], axis=1)
    z = xh @ W + bias.data
    i = _sigmoid(z[:, :H])
    f = _sigmoid(z[:, H:2 * H])
    gg = np.tanh(z[:, 2 * H:3 * H])
    o = _sigmoid(z[:, 3 * H:])
    cd = c.data
    c_new = f * cd + i * gg
    th = np.tanh(c_new)
    h_new = o * th

    def backward(gh, gc):
        dc = gc + gh * o * (1.0 - th * th)
        dz = np.concatenate([
            dc * gg * i * (1.0 - i),
            dc * cd * f * (1.0 - f),
            dc * i * (1.0 - gg * gg),
            gh * th * o * (1.0 - o),
        ], axis=1)
        gW = xh.T @ dz
        gb = dz.sum(axis=0)
        gxh = dz @ W.T
        return gxh[:, :I], gxh[:, I:], dc * f, gW, gb

    return _emit((h_new, c_new), (x, h, c, weight, bias), backward)


def softmax_cross_entropy(logits, labels, mask=None):
    """Mean negative log-softmax of ``labels`` over the rows selected by ``mask``."""
    logits = _as_tensor(logits)
    z = logits.data
    N, A = z.shape
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.ones(N, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise ContractError("softmax_cross_entropy: mask selects no rows")
    lab = np.where(mask, labels, 0)
    if np.any(lab < 0) or np.any(lab >= A):
        raise ContractError("softmax_cross_entropy: label out of range on an unmasked row")
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    s = e.sum(axis=1, keepdims=True)
    logp = z - zmax - np.log(s)
    picked = logp[np.arange(N), lab]
    loss = -(picked * mask).sum() / n

    def backward(g):
        p = e / s
        p[np.arange(N), lab] -= 1.0
        p *= (mask / n)[:, None]
        return p * g

    return _emit(np.asarray(loss, dtype=z.dtype), (logits,), backward)


# -- verification helpers ---------------------------------------------------

def relative_error(analytic, numeric, floor=1e-6):
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def numeric_gradient(f, tensor: Tensor, eps=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. ``tensor.data`` in place."""
    data = tensor.data
    grad = np.zeros_like(data, dtype=np.float64)
    flat = data.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + eps
        up = float(f().data)
        flat[k] = old - eps
        down = float(f().data)
        flat[k] = old
        gflat[k] = (up - down) / (2 * eps)
    return grad


def gradcheck(f, tensors, eps=1e-5, floor=1e-6):
    """Max relative error between tape gradients and central differences.

    ``f`` builds a scalar Tensor from ``tensors`` (which must require grad).
    """
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        loss = f()
    analytic = tape.backward(loss, tensors)
    errs = [relative_error(a, numeric_gradient(f, t, eps), floor) for a, t in zip(analytic, tensors)]
    return max(errs)
