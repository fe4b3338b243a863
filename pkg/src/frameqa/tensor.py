"""Small dense tensor type with a reverse-mode tape.

Only the operations the quality model needs are provided. Every op checks
its output for NaN/Inf and raises :class:`NonFiniteError` naming the op.

Usage::

    with Tape() as tape:
        y = tanh(x @ w)
        loss = sum_(y * y)
    grads = tape.backward(loss, [w])
"""
from __future__ import annotations

import threading

import numpy as np


class NonFiniteError(FloatingPointError):
    pass


class ShapeError(ValueError):
    pass


_state = threading.local()


def _active_tape():
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.data.dtype})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return slice_(self, idx)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x, like=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if like is not None:
        return Tensor(x, dtype=like.data.dtype)
    return Tensor(x)


def _pair(a, b):
    # constants adopt the dtype of the tensor operand
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, as_tensor(b, like=a)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return as_tensor(a, like=b), b
    return as_tensor(a), as_tensor(b)


class Tape:
    """Ordered record of executed ops for gradient replay.

    Gradients accumulate additively where a tensor feeds several ops.
    ``backward`` does not consume the tape, so calling it twice gives the
    same result.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def record(self, op, out, inputs, backward_fn):
        self.nodes.append((op, out, inputs, backward_fn))

    def backward(self, loss: Tensor, params=None) -> dict:
        """Gradients of scalar ``loss`` w.r.t. ``params`` (default: all leaves).

        Parameters that do not reach the loss get zero gradients.
        """
        if loss.data.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        produced = set()
        leaves = {}
        for op, out, inputs, fn in reversed(self.nodes):
            produced.add(id(out))
            g = grads.pop(id(out), None)
            if g is None:
                continue
            in_grads = fn(g)
            for inp, ig in zip(inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
                leaves[key] = inp
        if params is None:
            return {leaves[k]: g for k, g in grads.items() if k not in produced and k in leaves}
        return {p: grads.get(id(p), np.zeros_like(p.data)) for p in params}


def _finish(op, data, inputs, backward_fn):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        tape.record(op, out, inputs, backward_fn)
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("add", a, b)
    return _finish("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("sub", a, b)
    return _finish("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("mul", a, b)
    return _finish("mul", a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def matmul(a, b) -> Tensor:
    """``a`` of shape (..., k) times a 2-D ``b`` of shape (k, n)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not conformable")

    def backward(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _finish("matmul", a.data @ b.data, (a, b), backward)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return _finish("transpose", np.transpose(a.data, axes), (a,),
                   lambda g: (np.transpose(g, inv),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _finish("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _finish("concat", data, tuple(tensors), backward)


def slice_(a, idx) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] += g
        return (full,)

    return _finish("slice", a.data[idx], (a,), backward)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)
    return _finish("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def _sigmoid(v):
    z = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _finish("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _finish("relu", np.where(mask, x.data, 0.0).astype(x.data.dtype), (x,),
                   lambda g: (g * mask,))


def softmax(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    z = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    y = z / z.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _finish("softmax", y, (x,), backward)


def sum_(x, axis=None) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _finish("sum", np.asarray(x.data.sum(axis=axis)), (x,), backward)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.shape[axis]

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return _finish("mean", np.asarray(x.data.mean(axis=axis)), (x,), backward)


def square(x) -> Tensor:
    x = as_tensor(x)
    return _finish("square", x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def conv1d_same(x, kernels, bias) -> Tensor:
    """Width-3 convolution over time with one frame of zero padding per side.

    ``x`` is (T, C_in), ``kernels`` is (N, C_in, 3) and ``bias`` is (N,).
    Kernel tap 0 looks at frame t-1, tap 2 at frame t+1. Output is (T, N).
    """
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    if x.ndim != 2 or kernels.ndim != 3 or kernels.shape[2] != 3:
        raise ShapeError(f"conv1d_same: bad shapes input {x.shape}, kernels {kernels.shape}")
    n_out, c_in, width = kernels.shape
    if x.shape[1] != c_in:
        raise ShapeError(f"conv1d_same: input has {x.shape[1]} channels, kernels expect {c_in}")
    t = x.shape[0]
    pad = Tensor(np.zeros((1, c_in), dtype=x.data.dtype))
    xp = concat([pad, x, pad], axis=0)
    cols = concat([xp[k:k + t] for k in range(width)], axis=1)  # (T, 3*C_in), tap-major
    kmat = reshape(transpose(kernels, (2, 1, 0)), (width * c_in, n_out))
    return cols @ kmat + bias


def _gate_sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# Processing layout for K stacked directions: gate-major [i, f, o, g], each gate
# block holding the K directions side by side. Sigmoid gates are then one
# contiguous slice and every per-step op works on flat vectors.
_PROC_GATES = (0, 1, 3, 2)  # standard block index (i, f, g, o) of each processing block


def _to_proc(pres, hid):
    """List of K (T, 4H) standard-layout arrays -> (T, K*4H) processing layout."""
    k = len(pres)
    blocks = [pres[d][:, g * hid:(g + 1) * hid] for g in _PROC_GATES for d in range(k)]
    return np.concatenate(blocks, axis=1)


def _from_proc(z, k, hid):
    """Inverse of :func:`_to_proc`."""
    out = [np.empty((z.shape[0], 4 * hid), dtype=z.dtype) for _ in range(k)]
    pos = 0
    for g in _PROC_GATES:
        for d in range(k):
            out[d][:, g * hid:(g + 1) * hid] = z[:, pos:pos + hid]
            pos += hid
    return out


def _block_recurrent(us, hid):
    """Block-diagonal (K*H, K*4H) recurrent matrix in processing layout."""
    k = len(us)
    big = np.zeros((k * hid, k * 4 * hid), dtype=us[0].dtype)
    pos = 0
    for g in _PROC_GATES:
        for d in range(k):
            big[d * hid:(d + 1) * hid, pos:pos + hid] = us[d][g * hid:(g + 1) * hid].T
            pos += hid
    return big


def _scan(pre, rec):
    """Run stacked LSTM recurrences over pre-activations ``pre`` (T, K*4H) in
    processing layout with block recurrent matrix ``rec`` (K*H, K*4H)."""
    steps, width = pre.shape
    kh = width // 4
    dtype = pre.dtype
    gates = np.empty((steps, width), dtype=dtype)  # post-activation, processing layout
    cells = np.empty((steps, kh), dtype=dtype)
    hs = np.zeros((steps + 1, kh), dtype=dtype)  # hs[0] is the initial state
    c = np.zeros(kh, dtype=dtype)
    s3 = 3 * kh
    for t in range(steps):
        z = pre[t] + hs[t] @ rec
        a = gates[t]
        a[:s3] = _gate_sigmoid(z[:s3])
        a[s3:] = np.tanh(z[s3:])
        c = a[kh:2 * kh] * c + a[:kh] * a[s3:]
        cells[t] = c
        hs[t + 1] = a[2 * kh:s3] * np.tanh(c)
    return gates, cells, hs


def _scan_backward(dh_seq, gates, cells, rec):
    """BPTT for :func:`_scan`; returns gradients w.r.t. the pre-activations."""
    steps, width = gates.shape
    kh = width // 4
    s3 = 3 * kh
    tc = np.tanh(cells)
    dz = np.empty_like(gates)
    rec_t = np.ascontiguousarray(rec.T)
    dh_next = np.zeros(kh, dtype=gates.dtype)
    dc_next = np.zeros(kh, dtype=gates.dtype)
    zero = np.zeros(kh, dtype=gates.dtype)
    for t in range(steps - 1, -1, -1):
        a = gates[t]
        i, f, o, gg = a[:kh], a[kh:2 * kh], a[2 * kh:s3], a[s3:]
        tct = tc[t]
        dh = dh_seq[t] + dh_next
        dc = dh * o * (1.0 - tct * tct) + dc_next
        c_prev = cells[t - 1] if t > 0 else zero
        d = dz[t]
        d[:kh] = dc * gg * i * (1.0 - i)
        d[kh:2 * kh] = dc * c_prev * f * (1.0 - f)
        d[2 * kh:s3] = dh * tct * o * (1.0 - o)
        d[s3:] = dc * i * (1.0 - gg * gg)
        dc_next = dc * f
        dh_next = d @ rec_t
    return dz


def _check_lstm(x, w, u, b):
    hid = u.shape[1]
    if w.shape[0] != 4 * hid or u.shape[0] != 4 * hid or b.shape != (4 * hid,) or x.shape[1] != w.shape[1]:
        raise ShapeError(f"lstm: bad shapes x {x.shape}, w {w.shape}, u {u.shape}, b {b.shape}")


def lstm_scan(x, w, u, b, reverse=False) -> Tensor:
    """Single-direction LSTM over a (T, D) sequence, zero initial state.

    ``w`` is (4H, D), ``u`` is (4H, H), ``b`` is (4H,), gate blocks ordered
    input, forget, cell, output. Returns hidden states (T, H) aligned with
    the input frames; ``reverse`` runs the recurrence from the last frame.

    The recurrence is one tape node with an explicit backward-through-time
    pass; finite-difference tests cover it like every other op.
    """
    x, w, u, b = as_tensor(x), as_tensor(w), as_tensor(u), as_tensor(b)
    _check_lstm(x, w, u, b)
    hid = u.shape[1]
    xs = np.ascontiguousarray(x.data[::-1] if reverse else x.data)
    rec = _block_recurrent([u.data], hid)
    gates, cells, hs = _scan(_to_proc([xs @ w.data.T + b.data], hid), rec)
    out = hs[1:]

    def backward(g):
        gs = g[::-1] if reverse else g
        (dz,) = _from_proc(_scan_backward(gs, gates, cells, rec), 1, hid)
        dx = dz @ w.data
        return (np.ascontiguousarray(dx[::-1]) if reverse else dx), dz.T @ xs, dz.T @ hs[:-1], dz.sum(axis=0)

    return _finish("lstm_scan", np.ascontiguousarray(out[::-1] if reverse else out), (x, w, u, b), backward)


def bilstm_scan(x, w_f, u_f, b_f, w_b, u_b, b_b) -> Tensor:
    """Forward and backward LSTMs over ``x`` (T, D), concatenated to (T, 2H).

    Numerically equivalent to concatenating two :func:`lstm_scan` calls;
    both directions advance in one time loop.
    """
    x = as_tensor(x)
    w_f, u_f, b_f, w_b, u_b, b_b = (as_tensor(v) for v in (w_f, u_f, b_f, w_b, u_b, b_b))
    _check_lstm(x, w_f, u_f, b_f)
    _check_lstm(x, w_b, u_b, b_b)
    if u_f.shape != u_b.shape:
        raise ShapeError("bilstm: directions must share a hidden size")
    hid = u_f.shape[1]
    xd = np.ascontiguousarray(x.data)
    rec = _block_recurrent([u_f.data, u_b.data], hid)
    pre = _to_proc([xd @ w_f.data.T + b_f.data, (xd @ w_b.data.T + b_b.data)[::-1]], hid)
    gates, cells, hs = _scan(pre, rec)
    out = np.concatenate([hs[1:, :hid], hs[1:, hid:][::-1]], axis=1)

    def backward(g):
        dh = np.concatenate([g[:, :hid], g[::-1, hid:]], axis=1)
        dz_f, dz_b = _from_proc(_scan_backward(dh, gates, cells, rec), 2, hid)
        dz_b = np.ascontiguousarray(dz_b[::-1])  # back to input time order
        hprev_f, hprev_b = hs[:-1, :hid], np.ascontiguousarray(hs[:-1, hid:][::-1])
        dx = dz_f @ w_f.data + dz_b @ w_b.data
        return (dx,
                dz_f.T @ xd, dz_f.T @ hprev_f, dz_f.sum(axis=0),
                dz_b.T @ xd, dz_b.T @ hprev_b, dz_b.sum(axis=0))

    return _finish("bilstm_scan", out, (x, w_f, u_f, b_f, w_b, u_b, b_b), backward)
