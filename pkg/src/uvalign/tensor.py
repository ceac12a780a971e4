"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tape` records operations in execution order (which is a valid
topological order by construction); :meth:`Tape.backward` walks the record
in reverse exactly once per node. Tensors hold numpy arrays; float32 is the
training dtype, float64 is used by the gradient-checking suite. All
reductions delegate to numpy's fixed-order kernels, so forward results are
bitwise reproducible for identical inputs.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "Tape", "ShapeMismatch", "tensor", "constant",
    "add", "sub", "mul", "neg", "matmul", "transpose2d", "reshape",
    "concat", "broadcast_rows", "tsum", "tmean", "tabs", "tsqrt",
    "leaky_relu", "sigmoid", "tanh", "mse", "conv2d", "conv3d",
    "custom_op", "numerical_gradient", "gradcheck",
]


class ShapeMismatch(ValueError):
    """Raised when operand shapes do not conform for an op."""


_TAPE_STACK: list["Tape"] = []


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """A dense n-d array that may participate in the active gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "tape_id", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.tape_id = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def detach(self):
        """A view of the same values with no tape participation."""
        return Tensor(self.data, requires_grad=False)

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # operator sugar; every implementation lives at module level
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _getitem(self, key)


class Tape:
    """Ordered record of operations for one forward pass.

    Single-owner: recording and backward must not run concurrently. Forward
    evaluation with no active tape records nothing and is pure.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def record(self, out: Tensor, parents, backward_fn):
        out.tape_id = len(self.nodes)
        out._parents = tuple(parents)
        out._backward = backward_fn
        self.nodes.append(out)

    def backward(self, loss: Tensor, params=()):
        """Populate ``.grad`` for everything reachable from ``loss``.

        ``loss`` must be a scalar recorded on this tape. Parameters passed in
        ``params`` that are unreachable from the loss receive zero gradients.
        Each recorded node's backward closure runs exactly once.
        """
        if loss.data.size != 1:
            raise ValueError(f"backward: loss must be scalar, got shape {loss.data.shape}")
        if loss.tape_id is None or loss.tape_id >= len(self.nodes) or self.nodes[loss.tape_id] is not loss:
            raise ValueError("backward: loss is not recorded on this tape")
        loss.accumulate(np.ones_like(loss.data))
        # children always sit after their parents, so one reverse sweep
        # propagates every gradient; nodes never reached keep grad None
        for i in range(loss.tape_id, -1, -1):
            node = self.nodes[i]
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)
        for p in params:
            if p.requires_grad and p.grad is None:
                p.grad = np.zeros_like(p.data)

    def clear(self):
        for node in self.nodes:
            node.tape_id = None
            node._parents = ()
            node._backward = None
        self.nodes.clear()


def tensor(data, requires_grad=False, dtype=np.float32):
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=requires_grad)


def constant(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype)
    return Tensor(arr, requires_grad=False)


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype), requires_grad=False)


def _pair(a, b):
    """Coerce a binary op's operands, matching scalar dtype to the tensor's."""
    if isinstance(a, Tensor):
        return a, _as_tensor(b, like=a)
    if isinstance(b, Tensor):
        return _as_tensor(a, like=b), b
    return _as_tensor(a), _as_tensor(b)


def _tracked(t: Tensor, tape):
    return t.requires_grad or (t.tape_id is not None and tape is not None and
                               t.tape_id < len(tape.nodes) and tape.nodes[t.tape_id] is t)


def _make(out_data, parents, backward_fn):
    """Wrap an op result, recording it when any parent is live on the tape."""
    tape = _active_tape()
    out = Tensor(out_data)
    if tape is not None and any(_tracked(p, tape) for p in parents):
        out.requires_grad = True
        tape.record(out, parents, backward_fn)
    return out


def custom_op(out_data, parents, backward_fn):
    """Record an externally computed op.

    ``backward_fn(g)`` receives the output gradient and must call
    ``parent.accumulate`` itself for every parent it propagates to.
    """
    return _make(out_data, parents, backward_fn)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    a, b = _pair(a, b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeMismatch(f"add: shapes {a.data.shape} and {b.data.shape} do not broadcast")

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    return _make(out, (a, b), backward)


def sub(a, b):
    a, b = _pair(a, b)
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeMismatch(f"sub: shapes {a.data.shape} and {b.data.shape} do not broadcast")

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.data.shape))

    return _make(out, (a, b), backward)


def mul(a, b):
    a, b = _pair(a, b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeMismatch(f"mul: shapes {a.data.shape} and {b.data.shape} do not broadcast")

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), backward)


def neg(a):
    a = _as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a.accumulate(-g)

    return _make(-a.data, (a,), backward)


def matmul(a, b):
    a, b = _pair(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeMismatch(f"matmul: expects 2-d operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul: inner dimensions differ: {a.data.shape} vs {b.data.shape}")
    out = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    return _make(out, (a, b), backward)


def transpose2d(a):
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeMismatch(f"transpose2d: expects a 2-d operand, got {a.data.shape}")

    def backward(g):
        if a.requires_grad:
            a.accumulate(g.T)

    return _make(a.data.T.copy(), (a,), backward)


def reshape(a, shape):
    a = _as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"reshape: cannot view {a.data.shape} as {shape}")

    def backward(g):
        if a.requires_grad:
            a.accumulate(g.reshape(a.data.shape))

    return _make(out.copy(), (a,), backward)


def concat(parts, axis=0):
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeMismatch("concat: empty input list")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeMismatch(f"concat: shapes {[p.data.shape for p in parts]} do not align on axis {axis}")
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                p.accumulate(g[tuple(sl)])

    return _make(out, tuple(parts), backward)


def _getitem(a, key):
    a = _as_tensor(a)
    out = a.data[key]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, key, g)
            a.accumulate(full)

    return _make(np.array(out, copy=True), (a,), backward)


def broadcast_rows(a, n):
    """Tile a (D,) or (1, D) tensor into (n, D); backward sums the rows."""
    a = _as_tensor(a)
    flat = a.data.reshape(-1)
    out = np.broadcast_to(flat, (n, flat.shape[0])).copy()

    def backward(g):
        if a.requires_grad:
            a.accumulate(g.sum(axis=0).reshape(a.data.shape))

    return _make(out, (a,), backward)


def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a.accumulate(np.broadcast_to(g, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a.accumulate(np.broadcast_to(gg, a.data.shape).copy())

    return _make(np.asarray(out), (a,), backward)


def tmean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    if axis is None:
        count = a.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.data.shape[ax] for ax in axis]))
    else:
        count = a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def tabs(a):
    a = _as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), backward)


def tsqrt(a):
    a = _as_tensor(a)
    out = np.sqrt(a.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * (0.5 / np.maximum(out, np.finfo(out.dtype).tiny)))

    return _make(out, (a,), backward)


def leaky_relu(a, slope=0.02):
    a = _as_tensor(a)
    out = np.where(a.data > 0, a.data, slope * a.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * np.where(a.data > 0, 1.0, slope).astype(a.data.dtype))

    return _make(out, (a,), backward)


def sigmoid(a):
    a = _as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * (out * (1.0 - out)))

    return _make(out, (a,), backward)


def tanh(a):
    a = _as_tensor(a)
    out = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * (1.0 - out * out))

    return _make(out, (a,), backward)


def mse(a, b):
    """Mean squared error over every element of the operands."""
    a, b = _pair(a, b)
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"mse: shapes differ: {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data
    n = diff.size
    out = np.asarray((diff * diff).sum() / n, dtype=a.data.dtype)

    def backward(g):
        scale = 2.0 / n
        if a.requires_grad:
            a.accumulate(g * scale * diff)
        if b.requires_grad:
            b.accumulate(g * (-scale) * diff)

    return _make(out, (a, b), backward)


# -- convolutions -------------------------------------------------------------

def _pad_spatial(x, ndim_spatial, padding):
    if padding == 0:
        return x
    pad = [(0, 0), (0, 0)] + [(padding, padding)] * ndim_spatial
    return np.pad(x, pad)


def conv2d(x, w, bias=None, stride=1, padding=0):
    """2-d convolution (cross-correlation): x (N,C,H,W), w (F,C,kh,kw)."""
    x = _as_tensor(x)
    w = _as_tensor(w, like=x)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeMismatch(f"conv2d: expects x (N,C,H,W) and w (F,C,kh,kw), got {x.data.shape} and {w.data.shape}")
    if x.data.shape[1] != w.data.shape[1]:
        raise ShapeMismatch(f"conv2d: channel mismatch: {x.data.shape} vs {w.data.shape}")
    b = _as_tensor(bias, like=x) if bias is not None else None
    n, c, h, wd = x.data.shape
    f, _, kh, kw = w.data.shape
    xp = _pad_spatial(x.data, 2, padding)
    hp, wp = xp.shape[2], xp.shape[3]
    if hp < kh or wp < kw:
        raise ShapeMismatch(f"conv2d: kernel {w.data.shape} larger than padded input {xp.shape}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]                       # (N,C,Ho,Wo,kh,kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = w.data.reshape(f, c * kh * kw)
    out2 = cols @ wmat.T                                      # (N*Ho*Wo, F)
    if b is not None:
        out2 = out2 + b.data.reshape(1, f)
    out = out2.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
        if w.requires_grad:
            w.accumulate((g2.T @ cols).reshape(w.data.shape))
        if b is not None and b.requires_grad:
            b.accumulate(g2.sum(axis=0).reshape(b.data.shape))
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
            gxp = np.zeros((n, c, hp, wp), dtype=x.data.dtype)
            gtap = gcols.transpose(0, 3, 1, 2, 4, 5)          # (N,C,Ho,Wo,kh,kw)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + ho * stride:stride, j:j + wo * stride:stride] += gtap[..., i, j]
            if padding:
                gxp = gxp[:, :, padding:padding + h, padding:padding + wd]
            x.accumulate(gxp)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, backward)


def conv3d(x, w, bias=None, stride=1, padding=0):
    """3-d convolution (cross-correlation): x (N,C,D,H,W), w (F,C,kd,kh,kw)."""
    x = _as_tensor(x)
    w = _as_tensor(w, like=x)
    if x.data.ndim != 5 or w.data.ndim != 5:
        raise ShapeMismatch(f"conv3d: expects x (N,C,D,H,W) and w (F,C,kd,kh,kw), got {x.data.shape} and {w.data.shape}")
    if x.data.shape[1] != w.data.shape[1]:
        raise ShapeMismatch(f"conv3d: channel mismatch: {x.data.shape} vs {w.data.shape}")
    b = _as_tensor(bias, like=x) if bias is not None else None
    n, c, d, h, wd = x.data.shape
    f, _, kd, kh, kw = w.data.shape
    xp = _pad_spatial(x.data, 3, padding)
    dp, hp, wp = xp.shape[2], xp.shape[3], xp.shape[4]
    if dp < kd or hp < kh or wp < kw:
        raise ShapeMismatch(f"conv3d: kernel {w.data.shape} larger than padded input {xp.shape}")
    do = (dp - kd) // stride + 1
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kd, kh, kw), axis=(2, 3, 4))
    win = win[:, :, ::stride, ::stride, ::stride]             # (N,C,Do,Ho,Wo,kd,kh,kw)
    cols = win.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(n * do * ho * wo, c * kd * kh * kw)
    wmat = w.data.reshape(f, c * kd * kh * kw)
    out2 = cols @ wmat.T
    if b is not None:
        out2 = out2 + b.data.reshape(1, f)
    out = out2.reshape(n, do, ho, wo, f).transpose(0, 4, 1, 2, 3)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 4, 1).reshape(n * do * ho * wo, f)
        if w.requires_grad:
            w.accumulate((g2.T @ cols).reshape(w.data.shape))
        if b is not None and b.requires_grad:
            b.accumulate(g2.sum(axis=0).reshape(b.data.shape))
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(n, do, ho, wo, c, kd, kh, kw)
            gxp = np.zeros((n, c, dp, hp, wp), dtype=x.data.dtype)
            gtap = gcols.transpose(0, 4, 1, 2, 3, 5, 6, 7)    # (N,C,Do,Ho,Wo,kd,kh,kw)
            for a in range(kd):
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :,
                            a:a + do * stride:stride,
                            i:i + ho * stride:stride,
                            j:j + wo * stride:stride] += gtap[..., a, i, j]
            if padding:
                gxp = gxp[:, :, padding:padding + d, padding:padding + h, padding:padding + wd]
            x.accumulate(gxp)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, backward)


# -- gradient checking --------------------------------------------------------

def numerical_gradient(fn, arrays, index, h=1e-5):
    """Central finite differences of scalar ``fn(arrays)`` w.r.t. arrays[index].

    Arrays should be float64 for the advertised accuracy.
    """
    base = [np.array(a, dtype=np.float64) for a in arrays]
    target = base[index]
    grad = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(base)
        flat[i] = orig - h
        fm = fn(base)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def gradcheck(build_loss, arrays, h=1e-5, tol=1e-4):
    """Compare tape gradients of ``build_loss`` against finite differences.

    ``build_loss(tensors) -> Tensor`` builds a scalar loss from float64
    leaf tensors. Returns the worst relative error over all inputs.
    """
    leaves = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = build_loss(leaves)
        tape.backward(loss, params=leaves)
    worst = 0.0
    for i, leaf in enumerate(leaves):
        def eval_fn(arrs, _i=i):
            probe = [Tensor(a) for a in arrs]
            return float(build_loss(probe).data)
        num = numerical_gradient(eval_fn, [l.data for l in leaves], i, h=h)
        ana = leaf.grad
        denom = np.maximum(np.abs(num) + np.abs(ana), 1e-6)
        rel = float(np.max(np.abs(num - ana) / denom)) if num.size else 0.0
        worst = max(worst, rel)
    if worst >= tol:
        raise AssertionError(f"gradcheck failed: worst relative error {worst:.3e} >= {tol:g}")
    return worst
