"""Dense tensors with reverse-mode differentiation.

Exactly the operations the hypernetwork classifier needs, nothing more:
no general broadcasting, no views, no device abstraction. Data lives in
contiguous row-major numpy buffers, float32 for training and inference,
float64 for gradient checking. Differentiable ops record themselves on
the active :class:`Tape`; :func:`backward` replays the tape in reverse
and accumulates gradients.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf

DEFAULT_DTYPE = np.dtype(np.float32)
_SUPPORTED = (np.dtype(np.float32), np.dtype(np.float64))

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


class TensorError(ValueError):
    """Shape, dtype, value, or graph misuse."""


class Tensor:
    """A dense n-dimensional array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _SUPPORTED:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise TensorError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"


class Tape:
    """Execution-ordered record of differentiable operations.

    Operations append themselves as they run, so the list is already in
    topological order; replaying it reversed is a valid backward schedule.
    Use as a context manager around the forward computation.
    """

    _active: Optional["Tape"] = None

    def __init__(self):
        self._ops: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        if Tape._active is not None:
            raise TensorError("another tape is already recording")
        Tape._active = self
        return self

    def __exit__(self, *exc) -> bool:
        Tape._active = None
        return False

    def __len__(self) -> int:
        return len(self._ops)


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    tape = Tape._active
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._ops.append((out, inputs, backward_fn))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/dt into ``t.grad`` for every recorded tensor.

    Gradients add onto whatever is already in ``.grad``: calling backward
    twice without zeroing doubles every gradient.
    """
    if loss.data.size != 1:
        raise TensorError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not any(out is loss for out, _, _ in tape._ops):
        raise TensorError("loss was not produced on this tape (detached graph)")
    adjoints: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for out, inputs, backward_fn in reversed(tape._ops):
        out_grad = adjoints.get(id(out))
        if out_grad is None:
            continue
        for tensor, grad in zip(inputs, backward_fn(out_grad)):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in adjoints:
                adjoints[key] = adjoints[key] + grad
            else:
                adjoints[key] = grad
                holders[key] = tensor
    for key, tensor in holders.items():
        g = adjoints[key]
        # adjoint arrays are never mutated afterwards, so sharing is safe
        tensor.grad = g if tensor.grad is None else tensor.grad + g


def _as_tensor_pair(a: Tensor, b) -> tuple[Tensor, Optional[float]]:
    if isinstance(b, Tensor):
        return b, None
    return a, float(b)


def check_finite(t: Tensor, where: str) -> Tensor:
    """Raise if ``t`` contains NaN or Inf, naming the producing layer."""
    # min+max propagate NaN and turn opposing Infs into NaN: one cheap probe
    probe = float(t.data.min()) + float(t.data.max())
    if not np.isfinite(probe):
        raise TensorError(f"non-finite values after {where}")
    return t


# ---------------------------------------------------------------------------
# elementwise / reduction ops


def add(a: Tensor, b) -> Tensor:
    """Elementwise sum of equal-shape tensors, or tensor + python scalar."""
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise TensorError(f"add: shape mismatch {a.shape} vs {b.shape}")
        out = Tensor(a.data + b.data)
        return _record(out, (a, b), lambda g: (g, g))
    s = float(b)
    out = Tensor(a.data + s)
    return _record(out, (a,), lambda g: (g,))


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product of equal-shape tensors, or tensor * python scalar."""
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise TensorError(f"mul: shape mismatch {a.shape} vs {b.shape}")
        a_data, b_data = a.data, b.data
        out = Tensor(a_data * b_data)
        return _record(out, (a, b), lambda g: (g * b_data, g * a_data))
    s = float(b)
    out = Tensor(a.data * s)
    return _record(out, (a,), lambda g: (g * s,))


def t_sum(x: Tensor) -> Tensor:
    """Full reduction to a scalar."""
    out = Tensor(np.asarray(x.data.sum(), dtype=x.dtype))
    shape, dtype = x.shape, x.dtype

    def _bw(g):
        return (np.full(shape, g.reshape(()), dtype=dtype),)

    return _record(out, (x,), _bw)


def mean_abs(x: Tensor) -> Tensor:
    """Mean of absolute values over every element."""
    x_data = x.data
    out = Tensor(np.asarray(np.mean(np.abs(x_data)), dtype=x.dtype))
    inv_n = 1.0 / x_data.size

    def _bw(g):
        return (g.reshape(()) * inv_n * np.sign(x_data),)

    return _record(out, (x,), _bw)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    if int(np.prod(shape)) != x.size:
        raise TensorError(f"reshape: cannot view {x.shape} as {tuple(shape)}")
    old = x.shape
    out = Tensor(x.data.reshape(shape))
    return _record(out, (x,), lambda g: (g.reshape(old),))


# ---------------------------------------------------------------------------
# activations


def gelu(x: Tensor) -> Tensor:
    """x * Phi(x) with the exact erf-based normal CDF."""
    x_data = x.data
    cdf = 0.5 * (1.0 + erf(x_data * x.dtype.type(_INV_SQRT2)))
    out = Tensor(x_data * cdf)

    def _bw(g):
        pdf = np.exp(-0.5 * x_data * x_data) * x.dtype.type(_INV_SQRT_2PI)
        return (g * (cdf + x_data * pdf),)

    return _record(out, (x,), _bw)


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic function, elementwise."""
    out_data = stable_sigmoid(x.data)
    out = Tensor(out_data)

    def _bw(g):
        return (g * out_data * (1.0 - out_data),)

    return _record(out, (x,), _bw)


def stable_sigmoid(z: np.ndarray) -> np.ndarray:
    """sigmoid on a raw array without overflow for any finite input."""
    z = np.asarray(z)
    t = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


def softmax(z: Tensor) -> Tensor:
    """Row-wise softmax over the last axis of an (N, K) tensor, max-shifted."""
    if z.data.ndim != 2:
        raise TensorError(f"softmax expects (N, K), got {z.shape}")
    shifted = z.data - z.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    out = Tensor(s)

    def _bw(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        return (s * (g - dot),)

    return _record(out, (z,), _bw)


# ---------------------------------------------------------------------------
# structural ops


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None,
           padding: tuple[int, int] = (0, 0)) -> Tensor:
    """2D cross-correlation with zero padding, stride 1.

    x: (N, Cin, H, W); kernel: (Cout, Cin, kh, kw); bias: (Cout,).
    Output spatial extent is H + 2*ph - kh + 1 by W + 2*pw - kw + 1.
    Evaluated as one GEMM per kernel offset over shifted input views,
    which avoids materializing patch matrices.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise TensorError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    n, cin, h, w = x.shape
    cout, cin_k, kh, kw = kernel.shape
    if cin != cin_k:
        raise TensorError(f"conv2d: input has {cin} channels but kernel expects {cin_k}")
    if bias is not None and bias.shape != (cout,):
        raise TensorError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    ph, pw = padding
    hp, wp = h + 2 * ph, w + 2 * pw
    if kh > hp or kw > wp:
        raise TensorError(f"conv2d: kernel ({kh},{kw}) larger than padded input ({hp},{wp})")
    ho, wo = hp - kh + 1, wp - kw + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    k_data = kernel.data
    recording = Tape._active is not None and (
        x.requires_grad or kernel.requires_grad
        or (bias is not None and bias.requires_grad))

    def _patches() -> np.ndarray:
        # (Cin*kh*kw, N*Ho*Wo) patch matrix, row order matching the
        # row-major kernel flattening; copyto avoids a reshape temp
        m = np.empty((cin, kh, kw, n, ho, wo), dtype=x.dtype)
        for u in range(kh):
            win = np.lib.stride_tricks.sliding_window_view(
                xp[:, :, u:u + ho, :], kw, axis=3)  # (N, Cin, Ho, Wo, kw)
            np.copyto(m[:, u], win.transpose(1, 4, 0, 2, 3))
        return m.reshape(cin * kh * kw, -1)

    patches = _patches()
    kmat = k_data.reshape(cout, -1)
    out_data = (kmat @ patches).reshape(cout, n, ho, wo).transpose(1, 0, 2, 3)
    if bias is not None:
        out_data = out_data + bias.data[None, :, None, None]
    else:
        out_data = np.ascontiguousarray(out_data)
    out = Tensor(out_data)
    cache = patches if recording else None

    def _bw(g):
        db = None if bias is None else g.sum(axis=(0, 2, 3))
        g_flat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, -1)
        m = cache if cache is not None else _patches()
        dk = (g_flat @ m.T).reshape(kernel.shape)
        if not x.requires_grad:
            dx = None
        else:
            # dxp[n,c,a,b] = sum_{o,u,v} k[o,c,u,v] * g[n,o,a-u,b-v];
            # fusing (o,u) into one contraction keeps the GEMMs fat
            stack = np.zeros((cout, kh, n, hp, wo), dtype=g.dtype)
            for u in range(kh):
                stack[:, u, :, u:u + ho, :] = g.transpose(1, 0, 2, 3)
            stack_flat = stack.reshape(cout * kh, -1)
            kq = np.ascontiguousarray(
                k_data.transpose(1, 0, 2, 3).reshape(cin, cout * kh, kw))
            dxp = np.zeros((n, cin, hp, wp), dtype=g.dtype)
            for v in range(kw):
                piece = (np.ascontiguousarray(kq[:, :, v]) @ stack_flat).reshape(
                    cin, n, hp, wo)
                dxp[:, :, :, v:v + wo] += piece.transpose(1, 0, 2, 3)
            if ph or pw:
                dx = np.ascontiguousarray(dxp[:, :, ph:ph + h, pw:pw + w])
            else:
                dx = dxp
        if bias is None:
            return (dx, dk)
        return (dx, dk, db)

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _record(out, inputs, _bw)


class BatchNormState:
    """Running statistics for one batchnorm layer."""

    __slots__ = ("running_mean", "running_var", "batches")

    def __init__(self, channels: int, dtype=DEFAULT_DTYPE):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.batches = 0


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
                training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N, H, W) with affine transform.

    Train mode normalizes by the batch's population statistics and updates
    the running stats with an exponential moving average; eval mode uses
    the running stats and requires at least one recorded batch.
    """
    if x.data.ndim != 4:
        raise TensorError(f"batchnorm2d expects (N, C, H, W), got {x.shape}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise TensorError(f"batchnorm2d: affine params must have shape ({c},)")
    x_data = x.data
    if training:
        m = n * h * w
        if m < 2:
            raise TensorError("batchnorm2d train mode needs at least 2 values per channel")
        mean = x_data.mean(axis=(0, 2, 3))
        var = x_data.var(axis=(0, 2, 3))
        state.running_mean += momentum * (mean - state.running_mean)
        state.running_var += momentum * (var - state.running_var)
        state.batches += 1
    else:
        if state.batches == 0:
            raise TensorError("batchnorm2d eval mode before any running statistics were recorded")
        mean = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = (x_data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = Tensor(gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None])

    gamma_data = gamma.data

    if training:
        def _bw(g):
            m = n * h * w
            dbeta = g.sum(axis=(0, 2, 3))
            dgamma = (g * xhat).sum(axis=(0, 2, 3))
            dxhat = g * gamma_data[None, :, None, None]
            s1 = dxhat.sum(axis=(0, 2, 3))
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3))
            dx = (inv_std[None, :, None, None] / m) * (
                m * dxhat - s1[None, :, None, None] - xhat * s2[None, :, None, None]
            )
            return (dx, dgamma, dbeta)
    else:
        def _bw(g):
            dbeta = g.sum(axis=(0, 2, 3))
            dgamma = (g * xhat).sum(axis=(0, 2, 3))
            dx = g * (gamma_data * inv_std)[None, :, None, None]
            return (dx, dgamma, dbeta)

    return _record(out, (x, gamma, beta), _bw)


def maxpool2d_w(x: Tensor, pool: int) -> Tensor:
    """Temporal max pooling with kernel (1, pool); height is preserved.

    Backward routes the gradient to the first (leftmost) maximum of each
    window.
    """
    if x.data.ndim != 4:
        raise TensorError(f"maxpool2d expects (N, C, H, W), got {x.shape}")
    n, c, h, w = x.shape
    if w % pool != 0:
        raise TensorError(f"maxpool2d: width {w} not divisible by pool factor {pool}")
    windows = x.data.reshape(n, c, h, w // pool, pool)
    if pool == 2:
        # fast path: argmax of a pair is a single comparison
        right_wins = windows[..., 1] > windows[..., 0]
        out = Tensor(np.where(right_wins, windows[..., 1], windows[..., 0]))

        def _bw(g):
            dx = np.zeros((n, c, h, w // pool, pool), dtype=g.dtype)
            dx[..., 0] = np.where(right_wins, 0.0, g)
            dx[..., 1] = np.where(right_wins, g, 0.0)
            return (dx.reshape(n, c, h, w),)
    else:
        idx = windows.argmax(axis=4)
        out = Tensor(np.take_along_axis(windows, idx[..., None], axis=4)[..., 0])

        def _bw(g):
            dx = np.zeros((n, c, h, w // pool, pool), dtype=g.dtype)
            np.put_along_axis(dx, idx[..., None], g[..., None], axis=4)
            return (dx.reshape(n, c, h, w),)

    return _record(out, (x,), _bw)


def upsample_nearest_w(x: Tensor, factor: int) -> Tensor:
    """Repeat each temporal element ``factor`` times along the last axis."""
    if x.data.ndim != 4:
        raise TensorError(f"upsample expects (N, C, H, W), got {x.shape}")
    if factor < 1:
        raise TensorError(f"upsample factor must be >= 1, got {factor}")
    n, c, h, w = x.shape
    out = Tensor(np.repeat(x.data, factor, axis=3))

    def _bw(g):
        return (g.reshape(n, c, h, w, factor).sum(axis=4),)

    return _record(out, (x,), _bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map (N, D) @ (D, K) + (K,)."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise TensorError(f"linear expects 2-d input and weight, got {x.shape} and {weight.shape}")
    n, d = x.shape
    d_w, k = weight.shape
    if d != d_w:
        raise TensorError(f"linear: inner dims differ, input {d} vs weight {d_w}")
    if bias.shape != (k,):
        raise TensorError(f"linear: bias shape {bias.shape} != ({k},)")
    x_data, w_data = x.data, weight.data
    out = Tensor(x_data @ w_data + bias.data)

    def _bw(g):
        return (g @ w_data.T, x_data.T @ g, g.sum(axis=0))

    return _record(out, (x, weight, bias), _bw)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial extents of (N, C, H, W), yielding (N, C)."""
    if x.data.ndim != 4:
        raise TensorError(f"global_avg_pool expects (N, C, H, W), got {x.shape}")
    n, c, h, w = x.shape
    out = Tensor(x.data.mean(axis=(2, 3)))
    inv = 1.0 / (h * w)

    def _bw(g):
        return (np.broadcast_to(g[:, :, None, None], (n, c, h, w)) * inv,)

    return _record(out, (x,), _bw)


def readout(weights: Tensor, x: Tensor) -> Tensor:
    """Per-class linear readout: (N, K, C, L) against (N, C, L) -> (N, K).

    Each logit is the full elementwise-product reduction of one weight
    map slice against the input.
    """
    if weights.data.ndim != 4 or x.data.ndim != 3:
        raise TensorError(f"readout expects (N,K,C,L) and (N,C,L), got {weights.shape} and {x.shape}")
    if weights.shape[0] != x.shape[0] or weights.shape[2:] != x.shape[1:]:
        raise TensorError(f"readout: weight maps {weights.shape} do not match input {x.shape}")
    w_data, x_data = weights.data, x.data
    out = Tensor(np.einsum("nkcl,ncl->nk", w_data, x_data, optimize=True))

    def _bw(g):
        dw = g[:, :, None, None] * x_data[:, None, :, :]
        dx = np.einsum("nk,nkcl->ncl", g, w_data, optimize=True)
        return (dw, dx)

    return _record(out, (weights, x), _bw)


# ---------------------------------------------------------------------------
# losses


def cross_entropy_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean cross-entropy of (N, K) logits against integer targets."""
    if logits.data.ndim != 2 or logits.shape[1] < 2:
        raise TensorError(f"cross entropy expects (N, K>=2) logits, got {logits.shape}")
    targets = np.asarray(targets)
    n, k = logits.shape
    if targets.shape != (n,):
        raise TensorError(f"targets shape {targets.shape} != ({n},)")
    if targets.min() < 0 or targets.max() >= k:
        raise TensorError(f"targets must lie in [0, {k})")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(n), targets]
    out = Tensor(np.asarray((lse - picked).mean(), dtype=logits.dtype))

    def _bw(g):
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), targets] -= 1.0
        return (g.reshape(()) * p / n,)

    return _record(out, (logits,), _bw)


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of (N,) logits against {0,1} targets.

    Uses the overflow-safe form max(z,0) - z*y + log1p(exp(-|z|)).
    """
    if logits.data.ndim != 1:
        raise TensorError(f"bce expects (N,) logits, got {logits.shape}")
    targets = np.asarray(targets, dtype=logits.dtype)
    n = logits.shape[0]
    if targets.shape != (n,):
        raise TensorError(f"targets shape {targets.shape} != ({n},)")
    if not np.isin(targets, (0.0, 1.0)).all():
        raise TensorError("binary targets must be 0 or 1")
    z = logits.data
    loss = np.maximum(z, 0.0) - z * targets + np.log1p(np.exp(-np.abs(z)))
    out = Tensor(np.asarray(loss.mean(), dtype=logits.dtype))

    def _bw(g):
        return (g.reshape(()) * (stable_sigmoid(z) - targets) / n,)

    return _record(out, (logits,), _bw)
