"""Dense tensors with a reverse-mode gradient tape.

Only the primitives the TextCNN needs are provided. Every op takes an
optional ``tape``; when given, the op appends a record holding its inputs and
an adjoint closure, and :func:`backward` replays those closures in reverse.
Without a tape the op is a plain forward computation.

All primitives work on numpy arrays and keep the dtype of their inputs, so a
float64 parameter set gives a float64 pass (used for gradient checks) while
training runs in float32.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError

__all__ = [
    "Tensor",
    "GradTape",
    "backward",
    "frobenius_inner",
    "mul",
    "sum_all",
    "embedding",
    "conv1d",
    "conv1d_forward",
    "relu",
    "identity",
    "max_pool1",
    "max_over_time",
    "concat",
    "affine",
    "dropout",
    "softmax_cross_entropy",
]


class Tensor:
    """A named numpy array participating in a gradient tape.

    Identity (not value) is used for hashing, so tensors can key gradient
    dictionaries.
    """

    __slots__ = ("data", "name")

    def __init__(self, data, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype})"


class GradTape:
    """Ordered record of ops from one forward pass; consumed by one backward."""

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._outputs: set[int] = set()
        self.consumed = False

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, inputs: Sequence[Tensor], adjoint: Callable) -> None:
        if self.consumed:
            raise RuntimeError("tape already consumed by a backward pass")
        self._records.append((out, tuple(inputs), adjoint))
        self._outputs.add(id(out))

    def is_leaf(self, t: Tensor) -> bool:
        return id(t) not in self._outputs


def _record(tape: GradTape | None, out: Tensor, inputs, adjoint) -> Tensor:
    if tape is not None:
        tape.record(out, inputs, adjoint)
    return out


def backward(tape: GradTape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Replay the tape in reverse from a scalar ``loss``.

    Returns the gradient of every leaf tensor reachable from the loss. The
    tape cannot be replayed twice.
    """
    if tape.consumed:
        raise RuntimeError("tape already consumed by a backward pass")
    if loss.data.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    tensors: dict[int, Tensor] = {id(loss): loss}
    for out, inputs, adjoint in reversed(tape._records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, gi in zip(inputs, adjoint(g)):
            if gi is None:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                tensors[key] = t

    result = {}
    for key, g in grads.items():
        t = tensors[key]
        if not tape.is_leaf(t):
            continue
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {t!r}")
        result[t] = g
    return result


def _check_same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def frobenius_inner(a: Tensor, b: Tensor, tape: GradTape | None = None) -> Tensor:
    """Sum of elementwise products of two equally shaped matrices."""
    _check_same_shape(a, b, "frobenius_inner")
    if a.data.ndim != 2:
        raise ValueError(f"frobenius_inner expects rank-2 tensors, got shape {a.shape}")
    out = Tensor(np.sum(a.data * b.data))
    return _record(tape, out, (a, b), lambda g: (g * b.data, g * a.data))


def mul(a: Tensor, b: Tensor, tape: GradTape | None = None) -> Tensor:
    _check_same_shape(a, b, "mul")
    out = Tensor(a.data * b.data)
    return _record(tape, out, (a, b), lambda g: (g * b.data, g * a.data))


def sum_all(x: Tensor, tape: GradTape | None = None) -> Tensor:
    out = Tensor(np.sum(x.data))
    return _record(tape, out, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def embedding(table: Tensor, ids: np.ndarray, tape: GradTape | None = None,
              padding_idx: int | None = 0) -> Tensor:
    """Row lookup ``table[ids]``; the padding id maps to a constant zero vector."""
    ids = np.asarray(ids)
    out_data = table.data[ids]
    keep = None
    if padding_idx is not None:
        keep = ids != padding_idx
        out_data = out_data * keep[..., None]
    out = Tensor(out_data)

    def adjoint(g):
        if keep is not None:
            g = g * keep[..., None]
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _record(tape, out, (table,), adjoint)


def _windows(x: np.ndarray, h: int) -> np.ndarray:
    # [B, n, d] -> [B, n-h+1, h*d], rows i..i+h-1 of each window flattened
    win = np.lib.stride_tricks.sliding_window_view(x, h, axis=1)
    b, length, d, _ = win.shape
    return win.transpose(0, 1, 3, 2).reshape(b, length, h * d)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, tape: GradTape | None = None) -> Tensor:
    """Unstrided, unpadded 1-D convolution over the sequence axis.

    ``x`` is [batch, n, d], ``weight`` is [channels, h, d] and ``bias`` is
    [channels]. Output position i of channel c is the Frobenius inner product
    of rows i..i+h-1 with filter c, plus the bias: shape [batch, n-h+1, channels].
    """
    if x.data.ndim != 3 or weight.data.ndim != 3:
        raise ValueError(f"conv1d expects [B,n,d] and [C,h,d], got {x.shape} and {weight.shape}")
    channels, h, d = weight.shape
    if x.shape[2] != d:
        raise ValueError(f"conv1d: embedding width {x.shape[2]} != filter width {d}")
    if bias.shape != (channels,):
        raise ValueError(f"conv1d: bias shape {bias.shape} != ({channels},)")
    n = x.shape[1]
    if n < h:
        raise ValueError(f"sequence shorter than filter (n={n}, h={h})")
    cols = _windows(x.data, h)
    wmat = weight.data.reshape(channels, h * d)
    out = Tensor(cols @ wmat.T + bias.data)

    def adjoint(g):
        # g: [B, L, C]
        gw = (g.reshape(-1, channels).T @ cols.reshape(-1, h * d)).reshape(weight.shape)
        gb = g.sum(axis=(0, 1))
        gcols = (g @ wmat).reshape(g.shape[0], g.shape[1], h, d)
        gx = np.zeros_like(x.data)
        length = g.shape[1]
        for k in range(h):
            gx[:, k:k + length, :] += gcols[:, :, k, :]
        return gx, gw, gb

    return _record(tape, out, (x, weight, bias), adjoint)


def relu(x: Tensor, tape: GradTape | None = None) -> Tensor:
    active = x.data > 0
    out = Tensor(np.where(active, x.data, 0).astype(x.dtype))
    return _record(tape, out, (x,), lambda g: (g * active,))


def identity(x: Tensor, tape: GradTape | None = None) -> Tensor:
    return x


def conv1d_forward(T: Tensor, W: Tensor, b, f: Callable = identity,
                   tape: GradTape | None = None) -> Tensor:
    """Single-filter feature map ``c_i = f(<T[i:i+h-1], W> + b)``.

    ``T`` is [n, d], ``W`` is [h, d] and ``b`` a scalar (float or 0-d/1-d
    Tensor). Returns a Tensor of length n-h+1.
    """
    if T.data.ndim != 2 or W.data.ndim != 2:
        raise ValueError(f"conv1d_forward expects [n,d] and [h,d], got {T.shape} and {W.shape}")
    if not isinstance(b, Tensor):
        b = Tensor(np.full((1,), b, dtype=W.dtype))
    x3 = _reshape(T, (1,) + T.shape, tape)
    w3 = _reshape(W, (1,) + W.shape, tape)
    b1 = _reshape(b, (1,), tape)
    pre = conv1d(x3, w3, b1, tape)
    act = f(pre, tape=tape)
    return _reshape(act, (act.shape[1],), tape)


def _reshape(x: Tensor, shape, tape: GradTape | None) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    return _record(tape, out, (x,), lambda g: (g.reshape(x.shape),))


def max_pool1(c: Tensor, tape: GradTape | None = None) -> Tensor:
    """1-max pooling of a feature map; ties send the gradient to the first index."""
    if c.data.ndim != 1:
        raise ValueError(f"max_pool1 expects a vector, got shape {c.shape}")
    if c.data.size == 0:
        raise ValueError("max_pool1 of an empty feature map")
    idx = int(np.argmax(c.data))
    out = Tensor(c.data[idx])

    def adjoint(g):
        gc = np.zeros_like(c.data)
        gc[idx] = g
        return (gc,)

    return _record(tape, out, (c,), adjoint)


def max_over_time(x: Tensor, tape: GradTape | None = None) -> Tensor:
    """Batched 1-max pooling: [B, L, C] -> [B, C], first argmax on ties."""
    if x.shape[1] == 0:
        raise ValueError("max_over_time of an empty feature map")
    idx = np.argmax(x.data, axis=1)  # [B, C]
    out = Tensor(np.take_along_axis(x.data, idx[:, None, :], axis=1)[:, 0, :])

    def adjoint(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx[:, None, :], g[:, None, :], axis=1)
        return (gx,)

    return _record(tape, out, (x,), adjoint)


def concat(xs: Sequence[Tensor], tape: GradTape | None = None) -> Tensor:
    """Concatenate along the last axis."""
    sizes = [t.shape[-1] for t in xs]
    out = Tensor(np.concatenate([t.data for t in xs], axis=-1))
    bounds = np.cumsum([0] + sizes)

    def adjoint(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return _record(tape, out, tuple(xs), adjoint)


def affine(x: Tensor, weight: Tensor, bias: Tensor, tape: GradTape | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as [in, out]."""
    if x.shape[-1] != weight.shape[0] or bias.shape != (weight.shape[1],):
        raise ValueError(f"affine: incompatible shapes x={x.shape} w={weight.shape} b={bias.shape}")
    out = Tensor(x.data @ weight.data + bias.data)
    return _record(tape, out, (x, weight, bias),
                   lambda g: (g @ weight.data.T, x.data.T @ g, g.sum(axis=0)))


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator | None = None,
            tape: GradTape | None = None) -> Tensor:
    """Inverted dropout: train mode zeroes with probability p and scales by 1/(1-p)."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs a random generator")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1 - p)
    out = Tensor(x.data * keep)
    return _record(tape, out, (x,), lambda g: (g * keep,))


def softmax_cross_entropy(logits: Tensor, labels, tape: GradTape | None = None) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` over the batch.

    Accepts a single logit vector [c] with an integer label, or a batch
    [B, c] with B labels.
    """
    z = logits.data
    single = z.ndim == 1
    z2 = z[None, :] if single else z
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, c = z2.shape
    if c < 2:
        raise ValueError(f"need at least 2 classes, got {c}")
    if y.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {y.shape}")
    if np.any(y < 0) or np.any(y >= c):
        raise ValueError(f"label out of range [0, {c}): {y.tolist()}")
    shifted = z2 - z2.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    losses = logsum - shifted[rows, y]
    value = losses.mean()
    if not np.isfinite(value):
        raise NumericalError(f"non-finite loss {value}")
    out = Tensor(np.asarray(value, dtype=z.dtype))

    def adjoint(g):
        probs = np.exp(shifted - logsum[:, None])
        probs[rows, y] -= 1
        gz = probs * (g / n)
        return (gz[0] if single else gz,)

    return _record(tape, out, (logits,), adjoint)
