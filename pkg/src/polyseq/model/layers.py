"""Transformer building blocks on the autodiff tensor.

Everything here is task-agnostic: linear maps, layer norm, multi-head
attention, post-norm encoder/decoder layers, and the fixed sinusoidal
encodings (1D for sequence indices, 2D for feature-map positions). Modules
track their parameters by attribute walk, so state dicts have stable
dotted names in declaration order.
"""

import numpy as np

from polyseq.grad import tensor as T
from polyseq.grad.tensor import Tensor

MASK_OFF = -1e9  # additive attention mask value; exp underflows to exactly 0


class Module:
    """Parameter container. Tensors that require grad are parameters;
    Module attributes and lists of Modules are submodules."""

    def named_parameters(self, prefix=""):
        out = []
        for name, val in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(val, Tensor) and val.requires_grad:
                out.append((path, val))
            elif isinstance(val, Module):
                out.extend(val.named_parameters(f"{path}."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{path}.{i}."))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise ValueError(f"state dict mismatch: missing {missing}, extra {extra}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"{name}: shape {arr.shape} != expected {p.data.shape}"
                )
            p.data = arr.copy()


def uniform_param(rng, shape, fan_in):
    """U(-k, k) with k = 1/sqrt(fan_in)."""
    k = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-k, k, size=shape), requires_grad=True)


class Linear(Module):
    def __init__(self, rng, d_in, d_out):
        self.weight = uniform_param(rng, (d_in, d_out), d_in)
        self.bias = uniform_param(rng, (d_out,), d_in)

    def __call__(self, x):
        return T.add(T.matmul(x, self.weight), self.bias)


class LayerNorm(Module):
    def __init__(self, dim):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x):
        return T.layer_norm(x, self.gain, self.bias)


class FeedForward(Module):
    def __init__(self, rng, d_model, hidden):
        self.lin1 = Linear(rng, d_model, hidden)
        self.lin2 = Linear(rng, hidden, d_model)

    def __call__(self, x):
        return self.lin2(T.relu(self.lin1(x)))


class MultiHeadAttention(Module):
    """Scaled dot-product attention over the last two axes.

    Inputs are (L, d_model) or (B, L, d_model); an optional boolean mask
    (Lq, Lk) marks allowed positions, disallowed ones get MASK_OFF added
    before the softmax. The most recent attention probabilities are kept on
    `last_attn` (detached) for inspection.
    """

    def __init__(self, rng, d_model, n_heads):
        if d_model % n_heads:
            raise ValueError(f"d_model {d_model} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = Linear(rng, d_model, d_model)
        self.wk = Linear(rng, d_model, d_model)
        self.wv = Linear(rng, d_model, d_model)
        self.wo = Linear(rng, d_model, d_model)
        self.last_attn = None

    def _split(self, x, batched):
        # (B, L, D) -> (B, H, L, dh)
        b, l, _ = x.shape if batched else (1, *x.shape)
        x = T.reshape(x, (b, l, self.n_heads, self.d_head))
        return T.transpose(x, (0, 2, 1, 3))

    def __call__(self, q_in, k_in, v_in, mask=None):
        batched = q_in.data.ndim == 3
        q = self._split(self.wq(q_in), batched)
        k = self._split(self.wk(k_in), batched)
        v = self._split(self.wv(v_in), batched)
        scores = T.mul(T.matmul(q, T.swapaxes(k, -1, -2)),
                       1.0 / np.sqrt(self.d_head))
        if mask is not None:
            bias = np.where(np.asarray(mask, dtype=bool), 0.0, MASK_OFF)
            scores = T.add(scores, Tensor(bias))
        attn = T.softmax(scores, axis=-1)
        self.last_attn = attn.data
        mixed = T.matmul(attn, v)  # (B, H, Lq, dh)
        b, _, lq, _ = mixed.shape
        joined = T.reshape(T.transpose(mixed, (0, 2, 1, 3)),
                           (b, lq, self.n_heads * self.d_head))
        if not batched:
            joined = T.reshape(joined, (lq, self.n_heads * self.d_head))
        return self.wo(joined)


class EncoderLayer(Module):
    """Post-norm: residual then layer norm, after attention and after FFN."""

    def __init__(self, rng, d_model, n_heads, ffn_dim):
        self.attn = MultiHeadAttention(rng, d_model, n_heads)
        self.norm1 = LayerNorm(d_model)
        self.ffn = FeedForward(rng, d_model, ffn_dim)
        self.norm2 = LayerNorm(d_model)

    def __call__(self, x):
        x = self.norm1(T.add(x, self.attn(x, x, x)))
        return self.norm2(T.add(x, self.ffn(x)))


class DecoderLayer(Module):
    """Self-attention (optionally masked), cross-attention to the encoder
    memory, then FFN; post-norm throughout."""

    def __init__(self, rng, d_model, n_heads, ffn_dim):
        self.self_attn = MultiHeadAttention(rng, d_model, n_heads)
        self.norm1 = LayerNorm(d_model)
        self.cross_attn = MultiHeadAttention(rng, d_model, n_heads)
        self.norm2 = LayerNorm(d_model)
        self.ffn = FeedForward(rng, d_model, ffn_dim)
        self.norm3 = LayerNorm(d_model)

    def __call__(self, x, memory, self_mask=None):
        x = self.norm1(T.add(x, self.self_attn(x, x, x, self_mask)))
        x = self.norm2(T.add(x, self.cross_attn(x, memory, memory)))
        return self.norm3(T.add(x, self.ffn(x)))


CNN_KERNEL = 3


class CNNBackbone(Module):
    """Four stride-2 conv blocks (3x3, pad 1, ReLU): total stride 16.

    Channel schedule 3 -> c1 -> c2 -> c3 -> d_model; trained from scratch."""

    def __init__(self, rng, d_model, channels=(16, 32, 64)):
        widths = (3, *channels, d_model)
        self.weights = []
        self.biases = []
        for cin, cout in zip(widths[:-1], widths[1:]):
            fan = cin * CNN_KERNEL * CNN_KERNEL
            self.weights.append(
                uniform_param(rng, (cout, cin, CNN_KERNEL, CNN_KERNEL), fan)
            )
            self.biases.append(uniform_param(rng, (cout,), fan))

    def named_parameters(self, prefix=""):
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"{prefix}conv{i}.weight", w))
            out.append((f"{prefix}conv{i}.bias", b))
        return out

    def __call__(self, x):
        for w, b in zip(self.weights, self.biases):
            x = T.relu(T.conv2d(x, w, b, stride=2, padding=1))
        return x


def sinusoidal_encoding(length, dim):
    """Classic index encoding: sin on even slots, cos on odd, geometric
    wavelengths from 2*pi to 10000*2*pi. Shape (length, dim)."""
    if dim % 2:
        raise ValueError(f"encoding dim must be even, got {dim}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    idx = np.arange(dim // 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * idx / dim)
    out = np.zeros((length, dim))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def sinusoidal_2d(h, w, dim):
    """Row/column split of the index encoding: the first half of each vector
    encodes the row, the second half the column. Shape (h*w, dim), row-major
    to match a flattened feature map."""
    if dim % 4:
        raise ValueError(f"2D encoding dim must be divisible by 4, got {dim}")
    half = dim // 2
    rows = sinusoidal_encoding(h, half)
    cols = sinusoidal_encoding(w, half)
    out = np.zeros((h, w, dim))
    out[:, :, :half] = rows[:, None, :]
    out[:, :, half:] = cols[None, :, :]
    return out.reshape(h * w, dim)
