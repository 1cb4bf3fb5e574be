"""Differentiable primitives.

Broadcasting is limited to numpy's rules for elementwise arithmetic; adjoints
are summed back to the operand shape.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(
        a.data + b.data, (a, b), "add",
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(
        a.data - b.data, (a, b), "sub",
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return Tensor._from_op(
        ad * bd, (a, b), "mul",
        lambda g: (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        ),
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return Tensor._from_op(
        ad / bd, (a, b), "div",
        lambda g: (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * ad / (bd * bd), bd.shape) if b.requires_grad else None,
        ),
    )


def neg(a):
    return Tensor._from_op(-a.data, (a,), "neg", lambda g: (-g,))


def relu(x):
    pos = x.data > 0
    return Tensor._from_op(np.where(pos, x.data, 0.0), (x,), "relu", lambda g: (g * pos,))


def exp(x):
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return Tensor._from_op(out, (x,), "exp", lambda g: (g * out,))


def log(x):
    xd = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(xd)
    return Tensor._from_op(out, (x,), "log", lambda g: (g / xd,))


# -- reductions and shape ------------------------------------------------------

def sum(x, axis=None, keepdims=False):  # noqa: A001
    shape = x.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._from_op(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), "sum", back)


def mean(x, axis=None, keepdims=False):
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape):
    old = x.shape
    return Tensor._from_op(x.data.reshape(shape), (x,), "reshape", lambda g: (g.reshape(old),))


def transpose(x, axes=None):
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor._from_op(x.data.transpose(axes), (x,), "transpose", lambda g: (g.transpose(inv),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat", back)


def _is_basic(index):
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def getitem(x, index):
    shape = x.shape
    basic = _is_basic(index)

    def back(g):
        out = np.zeros(shape)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return Tensor._from_op(np.array(x.data[index]), (x,), "getitem", back)


def embedding(weight, ids):
    """Gather rows of ``weight`` for integer ``ids`` of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ValueError(f"token id out of range [0, {weight.shape[0]})")
    shape = weight.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (out,)

    return Tensor._from_op(weight.data[ids], (weight,), "embedding", back)


# -- linear algebra --------------------------------------------------------------

def matmul(a, b):
    """Matrix product; leading axes of ``a`` are batch axes.

    ``b`` is either a matrix shared across the batch or has the same batch axes.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"matmul batch extents differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    shared = bd.ndim == 2 and ad.ndim > 2

    def _mm(x, y):
        # one flat GEMM instead of numpy's per-batch loop when ``y`` is shared
        if y.ndim == 2 and x.ndim > 2:
            return (x.reshape(-1, x.shape[-1]) @ y).reshape(x.shape[:-1] + (y.shape[-1],))
        return x @ y

    def back(g):
        ga = _mm(g, np.swapaxes(bd, -1, -2)) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if shared:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return Tensor._from_op(_mm(ad, bd), (a, b), "matmul", back)


# -- normalisation and attention -------------------------------------------------

def masked_softmax(logits, mask=None, axis=-1):
    """Softmax over ``axis`` where ``mask`` (broadcastable bool) marks allowed entries.

    Masked entries are exactly zero. A row with no allowed entry is an error.
    """
    x = logits.data
    if mask is None:
        z = x - x.max(axis=axis, keepdims=True)
        e = np.exp(z)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=axis).all():
            raise ValueError("masked_softmax: a row is fully masked")
        z = np.where(mask, x, -np.inf)
        z = z - z.max(axis=axis, keepdims=True)
        e = np.where(mask, np.exp(z), 0.0)
    p = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(p, (logits,), "masked_softmax", back)


def layer_norm(x, gamma, beta, eps=1e-5):
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data
    n = xd.shape[-1]

    def back(g):
        gh = g * gd
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    assert gd.shape == (n,)
    return Tensor._from_op(xhat * gd + beta.data, (x, gamma, beta), "layer_norm", back)


def group_norm(x, groups, eps=1e-5, batch_axes=0):
    """Channels-last group normalisation without affine terms.

    Statistics are taken per group over all non-batch axes; the first
    ``batch_axes`` axes index independent samples.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    c = x.shape[-1]
    if groups < 1 or c % groups:
        raise ValueError(f"{c} channels not divisible into {groups} groups")
    xd = x.data
    lead = xd.shape[:batch_axes]
    xr = xd.reshape(lead + (-1, groups, c // groups))
    red = (batch_axes, batch_axes + 2)
    mu = xr.mean(axis=red, keepdims=True)
    xc = xr - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=red, keepdims=True) + eps)
    xhat = xc * inv

    def back(g):
        gr = g.reshape(xr.shape)
        gx = inv * (gr - gr.mean(axis=red, keepdims=True)
                    - xhat * (gr * xhat).mean(axis=red, keepdims=True))
        return (gx.reshape(xd.shape),)

    return Tensor._from_op(xhat.reshape(xd.shape), (x,), "group_norm", back)


def conv3d(x, kernel, stride=1):
    """Valid 3-D cross-correlation, channels last.

    ``x`` is ``(..., W, H, D, Cin)`` (leading axes are batch), ``kernel`` is
    ``(kw, kh, kd, Cin, Cout)``.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    xd, kd_ = x.data, kernel.data
    kw, kh, kdp, cin, cout = kd_.shape
    W, H, D, c = xd.shape[-4:]
    if c != cin:
        raise ValueError(f"input has {c} channels, kernel expects {cin}")
    if kw > W or kh > H or kdp > D:
        raise ValueError(f"kernel {kd_.shape[:3]} larger than input {xd.shape[-4:-1]}")
    nb = xd.ndim - 4
    win = sliding_window_view(xd, (kw, kh, kdp), axis=(nb, nb + 1, nb + 2))
    win = win[(slice(None),) * nb + (slice(None, None, stride),) * 3]
    # win: (..., W', H', D', Cin, kw, kh, kd)
    out = np.einsum("...cijk,ijkco->...o", win, kd_, optimize=True)
    ow, oh, od = out.shape[nb:nb + 3]

    def back(g):
        gk = np.einsum("...cijk,...o->ijkco", win, g, optimize=True) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            gx = np.zeros_like(xd)
            for i in range(kw):
                for j in range(kh):
                    for k in range(kdp):
                        sl = (Ellipsis,
                              slice(i, i + stride * (ow - 1) + 1, stride),
                              slice(j, j + stride * (oh - 1) + 1, stride),
                              slice(k, k + stride * (od - 1) + 1, stride),
                              slice(None))
                        gx[sl] += g @ kd_[i, j, k].T
        return gx, gk

    return Tensor._from_op(out, (x, kernel), "conv3d", back)


def cross_entropy(logits, targets, ignore_id=None):
    """Mean negative log-likelihood of ``targets`` under ``softmax(logits)``.

    Positions equal to ``ignore_id`` are excluded from the mean.
    """
    x = logits.data
    V = x.shape[-1]
    t = np.asarray(targets, dtype=np.int64)
    if t.shape != x.shape[:-1]:
        raise ValueError(f"targets shape {t.shape} does not match logits {x.shape}")
    keep = np.ones(t.shape, bool) if ignore_id is None else t != ignore_id
    if ((t[keep] < 0) | (t[keep] >= V)).any():
        raise ValueError(f"target id outside vocabulary of size {V}")
    safe = np.where(keep, t, 0)
    z = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    count = max(int(keep.sum()), 1)
    loss = -(picked * keep).sum() / count

    def back(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, safe[..., None], 1.0, axis=-1)
        return ((p - onehot) * keep[..., None] * (g / count),)

    return Tensor._from_op(np.asarray(loss), (logits,), "cross_entropy", back)
