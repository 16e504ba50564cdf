"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array plus an optional gradient and a backward
closure; `backward()` on a scalar walks the recorded graph once in reverse
topological order. Gradients accumulate across backward calls — callers zero
them between steps (the optimizer does). Floating precision is a per-tensor
property: float64 for tests and oracles, float32 for training throughput.

Only the shapes the models need are supported; every op raises a shape error
naming both operands rather than broadcasting silently where that could hide
a bug. Elementwise ops follow numpy broadcasting, with gradients summed back
down to each parent's shape.
"""

import numpy as np

_FLOATS = (np.float32, np.float64)


class GradMode:
    enabled = True


class no_grad:
    def __enter__(self):
        self.prev = GradMode.enabled
        GradMode.enabled = False

    def __exit__(self, *exc):
        GradMode.enabled = self.prev
        return False


def _shape_error(op, *shapes):
    listed = " vs ".join(str(s) for s in shapes)
    return ValueError(f"{op}: incompatible shapes {listed}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.type not in _FLOATS:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # ---- plumbing -------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{flag})"

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else None

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype):
        out = _result(np.asarray(self.data, dtype=dtype), (self,))

        def back(g):
            _accum(self, g.astype(self.data.dtype))

        return _wire(out, back)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar, got shape {self.data.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        # leaf gradients accumulate across calls; interior grads are transient
        # per pass, so a repeated backward adds the same increments again
        for node in topo:
            if node._backward is not None:
                node.grad = None
        seed = np.ones_like(self.data)
        self.grad = seed if self.grad is None else self.grad + seed
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # ---- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_ensure(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(_ensure(other, self.dtype), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _ensure(other, self.dtype)
        return mul(self, power(other, -1.0))

    def __rtruediv__(self, other):
        return mul(_ensure(other, self.dtype), power(self, -1.0))

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def abs(self):
        return absolute(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, *axes)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


def _ensure(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data, parents):
    out = Tensor(data)
    if GradMode.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
    return out


def _wire(out, back):
    if out.requires_grad:
        out._backward = back
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=t.data.dtype)
    t.grad = g.copy() if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to the parent shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---- elementwise ---------------------------------------------------------


def add(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _ensure(b, a.dtype)
    try:
        data = a.data + b.data
    except ValueError:
        raise _shape_error("add", a.shape, b.shape) from None
    out = _result(data, (a, b))

    def back(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _wire(out, back)


def mul(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _ensure(b, a.dtype)
    try:
        data = a.data * b.data
    except ValueError:
        raise _shape_error("mul", a.shape, b.shape) from None
    out = _result(data, (a, b))
    a_data, b_data = a.data, b.data

    def back(g):
        _accum(a, _unbroadcast(g * b_data, a_data.shape))
        _accum(b, _unbroadcast(g * a_data, b_data.shape))

    return _wire(out, back)


def power(a, exponent):
    exponent = float(exponent)
    out = _result(a.data**exponent, (a,))
    a_data = a.data

    def back(g):
        _accum(a, g * exponent * a_data ** (exponent - 1.0))

    return _wire(out, back)


def exp(a):
    data = np.exp(a.data)
    out = _result(data, (a,))

    def back(g):
        _accum(a, g * data)

    return _wire(out, back)


def log(a):
    out = _result(np.log(a.data), (a,))
    a_data = a.data

    def back(g):
        _accum(a, g / a_data)

    return _wire(out, back)


def tanh(a):
    data = np.tanh(a.data)
    out = _result(data, (a,))

    def back(g):
        _accum(a, g * (1.0 - data * data))

    return _wire(out, back)


def sigmoid(a):
    data = 1.0 / (1.0 + np.exp(-a.data))
    out = _result(data, (a,))

    def back(g):
        _accum(a, g * data * (1.0 - data))

    return _wire(out, back)


def relu(a):
    mask = a.data > 0
    out = _result(np.where(mask, a.data, 0.0), (a,))

    def back(g):
        _accum(a, g * mask)

    return _wire(out, back)


def absolute(a):
    sign = np.sign(a.data)
    out = _result(np.abs(a.data), (a,))

    def back(g):
        _accum(a, g * sign)

    return _wire(out, back)


# ---- shape ops ------------------------------------------------------------


def reshape(a, *shape):
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    orig = a.data.shape
    out = _result(a.data.reshape(shape), (a,))

    def back(g):
        _accum(a, g.reshape(orig))

    return _wire(out, back)


def transpose(a, *axes):
    if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    if not axes:
        axes = tuple(reversed(range(a.data.ndim)))
    inverse = np.argsort(axes)
    out = _result(a.data.transpose(axes), (a,))

    def back(g):
        _accum(a, g.transpose(inverse))

    return _wire(out, back)


def swapaxes(a, ax1, ax2):
    out = _result(np.swapaxes(a.data, ax1, ax2), (a,))

    def back(g):
        _accum(a, np.swapaxes(g, ax1, ax2))

    return _wire(out, back)


def take(a, idx):
    out = _result(a.data[idx], (a,))
    shape, dtype = a.data.shape, a.data.dtype
    advanced = _has_array_index(idx)

    def back(g):
        buf = np.zeros(shape, dtype=dtype)
        if advanced:
            np.add.at(buf, idx, g)
        else:
            buf[idx] += g  # basic indexing never aliases
        _accum(a, buf)

    return _wire(out, back)


def _has_array_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (np.ndarray, list)) for i in items)


def concat(tensors, axis=0):
    tensors = list(tensors)
    out = _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _wire(out, back)


def stack(tensors, axis=0):
    tensors = list(tensors)
    out = _result(np.stack([t.data for t in tensors], axis=axis), tuple(tensors))

    def back(g):
        for i, t in enumerate(tensors):
            _accum(t, np.take(g, i, axis=axis))

    return _wire(out, back)


# ---- reductions ------------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    out = _result(a.data.sum(axis=axis, keepdims=keepdims), (a,))
    shape = a.data.shape

    def back(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, shape))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, shape))

    return _wire(out, back)


def tmean(a, axis=None, keepdims=False):
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.data.shape[ax] for ax in axes]))
    return mul(tsum(a, axis, keepdims), 1.0 / n)


# ---- linear algebra --------------------------------------------------------


def matmul(a, b):
    if a.data.ndim < 1 or b.data.ndim < 2:
        raise _shape_error("matmul", a.shape, b.shape)
    if a.data.shape[-1] != b.data.shape[-2]:
        raise _shape_error("matmul", a.shape, b.shape)
    data = a.data @ b.data
    out = _result(data, (a, b))
    a_data, b_data = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(b_data, -1, -2)
        gb = np.swapaxes(a_data, -1, -2) @ g
        _accum(a, _unbroadcast(ga, a_data.shape))
        _accum(b, _unbroadcast(gb, b_data.shape))

    return _wire(out, back)


# ---- composites ------------------------------------------------------------


def softmax(a, axis=-1):
    """Rows sum to one; the max shift is detached, which leaves the true
    gradient unchanged because softmax is invariant to additive shifts."""
    shift = Tensor(np.max(a.data, axis=axis, keepdims=True))
    e = exp(add(a, mul(shift, -1.0)))
    return mul(e, power(tsum(e, axis, True), -1.0))


def log_softmax(a, axis=-1):
    shift = Tensor(np.max(a.data, axis=axis, keepdims=True))
    centered = add(a, mul(shift, -1.0))
    return add(centered, mul(log(tsum(exp(centered), axis, True)), -1.0))


def cross_entropy(logits, classes, weights=None, reduction="mean"):
    """Negative log-likelihood of integer classes under row-wise softmax.

    weights scales each row's loss; mean reduction divides by the weight sum
    so padding rows with small weights do not dilute the signal.
    """
    classes = np.asarray(classes)
    if logits.data.ndim != 2 or classes.shape != (logits.data.shape[0],):
        raise _shape_error("cross_entropy", logits.shape, classes.shape)
    logp = log_softmax(logits, axis=-1)
    rows = np.arange(logits.data.shape[0])
    nll = mul(take(logp, (rows, classes)), -1.0)
    if weights is None:
        total = tsum(nll)
        denom = float(len(rows))
    else:
        weights = np.asarray(weights, dtype=logits.data.dtype)
        total = tsum(mul(nll, Tensor(weights)))
        denom = float(weights.sum())
    if reduction == "sum":
        return total
    if reduction == "mean":
        return mul(total, 1.0 / denom)
    raise ValueError(f"unknown reduction {reduction!r}")


def l1_loss(pred, target, reduction="sum"):
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise _shape_error("l1_loss", pred.shape, target.shape)
    diff = absolute(add(pred, mul(target, -1.0)))
    if reduction == "sum":
        return tsum(diff)
    if reduction == "mean":
        return tmean(diff)
    return diff


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = tmean(x, axis=-1, keepdims=True)
    centered = add(x, mul(mu, -1.0))
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    inv = power(add(var, eps), -0.5)
    return add(mul(mul(centered, inv), gain), bias)


# ---- convolution and pooling ------------------------------------------------


def _conv_indices(kh, kw, out_h, out_w, stride):
    ii = np.arange(kh)[:, None] + stride * np.arange(out_h)[None, :]
    jj = np.arange(kw)[:, None] + stride * np.arange(out_w)[None, :]
    return ii[:, None, :, None], jj[None, :, None, :]  # broadcast to (kh,kw,oh,ow)


def conv2d(x, w, b=None, stride=1, padding=0):
    """NCHW convolution via im2col; one primitive with a hand-derived backward."""
    if x.data.ndim != 4 or w.data.ndim != 4 or x.data.shape[1] != w.data.shape[1]:
        raise _shape_error("conv2d", x.shape, w.shape)
    bsz, cin, h, wdt = x.data.shape
    cout, _, kh, kw = w.data.shape
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (wdt + 2 * padding - kw) // stride + 1
    if out_h < 1 or out_w < 1:
        raise _shape_error("conv2d", x.shape, w.shape)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ii, jj = _conv_indices(kh, kw, out_h, out_w, stride)
    patches = xp[:, :, ii, jj]  # (B, Cin, kh, kw, oh, ow)
    cols = patches.reshape(bsz, cin * kh * kw, out_h * out_w)
    w2 = w.data.reshape(cout, cin * kh * kw)
    res = np.einsum("ok,bkl->bol", w2, cols, optimize=True)
    res = res.reshape(bsz, cout, out_h, out_w)
    if b is not None:
        res = res + b.data.reshape(1, cout, 1, 1)

    parents = (x, w) if b is None else (x, w, b)
    out = _result(res, parents)

    def back(g):
        gflat = g.reshape(bsz, cout, out_h * out_w)
        if b is not None:
            _accum(b, g.sum(axis=(0, 2, 3)))
        gw = np.einsum("bol,bkl->ok", gflat, cols, optimize=True)
        _accum(w, gw.reshape(w.data.shape))
        gcols = np.einsum("ok,bol->bkl", w2, gflat, optimize=True)
        gpatches = gcols.reshape(bsz, cin, kh, kw, out_h, out_w)
        gxp = np.zeros_like(xp)
        np.add.at(gxp, (slice(None), slice(None), ii, jj), gpatches)
        if padding:
            gxp = gxp[:, :, padding:-padding, padding:-padding]
        _accum(x, gxp)

    return _wire(out, back)


def max_pool2d(x, k):
    """Non-overlapping k x k max pooling; ties resolve to the first element."""
    bsz, c, h, w = x.data.shape
    if h % k or w % k:
        raise _shape_error(f"max_pool2d(k={k})", x.shape)
    oh, ow = h // k, w // k
    windows = x.data.reshape(bsz, c, oh, k, ow, k).transpose(0, 1, 2, 4, 3, 5)
    flat = windows.reshape(bsz, c, oh, ow, k * k)
    arg = flat.argmax(axis=-1)
    out = _result(np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0], (x,))

    def back(g):
        buf = np.zeros_like(flat)
        np.put_along_axis(buf, arg[..., None], g[..., None], axis=-1)
        gx = buf.reshape(bsz, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5)
        _accum(x, gx.reshape(bsz, c, h, w))

    return _wire(out, back)
