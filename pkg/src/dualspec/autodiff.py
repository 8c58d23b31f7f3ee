"""Dense tensors with reverse-mode differentiation.

Only what the reconstruction network and its losses need is provided: a
handful of elementwise ops, 2D matmul, grouped 2D convolution, pooling,
softmax and channel slicing. Every op records a closure that pushes the
output gradient back to its parents; :meth:`Tensor.backward` runs those
closures in reverse topological order.

Feature maps are laid out channel-first, ``(C, H, W)``, with no batch axis.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ContractError, NumericError

logger = logging.getLogger(__name__)

_node_counter = 0


def _next_id() -> int:
    global _node_counter
    _node_counter += 1
    return _node_counter


class Tensor:
    """An array value plus an optional gradient slot and the op that made it."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward=None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id = _next_id()
        self._parents = _parents
        self._backward = _backward
        self._consumed = False

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Populate ``grad`` on every tensor reachable from this scalar."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise ContractError("backward() already ran on this graph; rebuild the forward pass first")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.node_id in seen:
                continue
            seen.add(node.node_id)
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and p.node_id not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        self._consumed = True

    # operator sugar
    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise ContractError("only division by a scalar is supported")
        return scale(self, 1.0 / float(other))


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    """Wrap a forward result, wiring ``backward`` only when a parent needs grads.

    Other modules use this to define fused differentiable ops.
    """
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=tuple(parents) if needs else (), _backward=backward if needs else None)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractError(f"shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)

    def _bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return make_op(a.data + b.data, (a, b), _bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)

    def _bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(-_unbroadcast(g, b.shape))

    return make_op(a.data - b.data, (a, b), _bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting (used for attention gates)."""
    _check_broadcast(a, b)

    def _bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return make_op(a.data * b.data, (a, b), _bw)


def scale(a: Tensor, c: float) -> Tensor:
    def _bw(g):
        a._accumulate(g * c)

    return make_op(a.data * c, (a,), _bw)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def _bw(g):
        a._accumulate(g * out * (1.0 - out))

    return make_op(out, (a,), _bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def _bw(g):
        a._accumulate(g * mask)

    return make_op(np.where(mask, a.data, 0.0).astype(a.data.dtype), (a,), _bw)


def absolute(a: Tensor) -> Tensor:
    sgn = np.sign(a.data)

    def _bw(g):
        a._accumulate(g * sgn)

    return make_op(np.abs(a.data), (a,), _bw)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    def _bw(g):
        a._accumulate(np.broadcast_to(g, a.shape))

    return make_op(np.asarray(a.data.sum()), (a,), _bw)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def _bw(g):
        a._accumulate(np.broadcast_to(g / n, a.shape))

    return make_op(np.asarray(a.data.mean()), (a,), _bw)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ContractError(f"cannot reshape {a.shape} to {shape}") from None

    def _bw(g):
        a._accumulate(g.reshape(a.shape))

    return make_op(out, (a,), _bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul needs (m,k)@(k,n), got {a.shape} @ {b.shape}")

    def _bw(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return make_op(a.data @ b.data, (a, b), _bw)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ContractError("concat of an empty list")
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def _bw(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p._accumulate(g[tuple(idx)])

    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ContractError(f"concat shape mismatch: {exc}") from None
    return make_op(out, tuple(parts), _bw)


def channel_slice(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= a.shape[0]:
        raise ContractError(f"channel slice [{start}:{stop}] out of range for {a.shape[0]} channels")

    def _bw(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        a._accumulate(full)

    return make_op(a.data[start:stop], (a,), _bw)


def channel_split(a: Tensor, groups: int) -> list[Tensor]:
    """Split along axis 0 into ``groups`` equal, ordered pieces."""
    c = a.shape[0]
    if groups < 1 or c % groups:
        raise ConfigError(f"{c} channels cannot be split into {groups} equal groups")
    step = c // groups
    return [channel_slice(a, i * step, (i + 1) * step) for i in range(groups)]


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise ContractError(f"axis {axis} out of range for rank {a.ndim}")
    if a.shape[axis] == 0:
        raise ContractError("softmax over an empty axis")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def _bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        a._accumulate(out * (g - dot))

    return make_op(out, (a,), _bw)


def global_avg_pool(a: Tensor) -> Tensor:
    """Mean over the two trailing spatial axes: (C, H, W) -> (C, 1, 1)."""
    if a.ndim != 3:
        raise ContractError(f"global_avg_pool expects (C,H,W), got {a.shape}")
    n = a.shape[1] * a.shape[2]

    def _bw(g):
        a._accumulate(np.broadcast_to(g / n, a.shape))

    return make_op(a.data.mean(axis=(1, 2), keepdims=True), (a,), _bw)


def max_pool3x3(a: Tensor) -> Tensor:
    """3x3 max pooling, stride 1, padding 1 (size preserving).

    Ties send the gradient to the first maximum in row-major window order.
    """
    if a.ndim != 3:
        raise ContractError(f"max_pool3x3 expects (C,H,W), got {a.shape}")
    c, h, w = a.shape
    padded = np.pad(a.data, ((0, 0), (1, 1), (1, 1)), constant_values=-np.inf)
    win = sliding_window_view(padded, (3, 3), axis=(1, 2)).reshape(c, h, w, 9)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def _bw(g):
        gp = np.zeros((c, h + 2, w + 2), dtype=g.dtype)
        ci, hi, wi = np.indices((c, h, w))
        np.add.at(gp, (ci, hi + arg // 3, wi + arg % 3), g)
        a._accumulate(gp[:, 1:-1, 1:-1])

    return make_op(np.ascontiguousarray(out), (a,), _bw)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    # rows ordered (channel, ki, kj) to match weight.reshape(C_out, -1)
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    return win.transpose(0, 3, 4, 1, 2).reshape(xp.shape[0] * k * k, ho * wo)


def _col2im(cols: np.ndarray, cin: int, k: int, stride: int, hp: int, wp: int, ho: int, wo: int) -> np.ndarray:
    out = np.zeros((cin, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(cin, k, k, ho, wo)
    for i in range(k):
        for j in range(k):
            out[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, i, j]
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """Grouped 2D cross-correlation on a single (C_in, H, W) feature map.

    ``weight`` has shape (C_out, C_in // groups, k, k). Each group is an
    independent matmul over its channel slice, so a grouped call is exactly
    the concatenation of per-group calls.
    """
    if x.ndim != 3 or weight.ndim != 4:
        raise ContractError(f"conv2d expects x (C,H,W) and weight (O,I,k,k); got {x.shape}, {weight.shape}")
    cin, h, w = x.shape
    cout, cg, kh, kw = weight.shape
    if groups < 1 or cin % groups or cout % groups:
        raise ConfigError(f"groups={groups} must divide C_in={cin} and C_out={cout}")
    if cg != cin // groups:
        raise ContractError(f"weight expects {cg} channels per group, input gives {cin // groups}")
    if kh != kw:
        raise ContractError(f"square kernels only, got {kh}x{kw}")
    if bias is not None and bias.shape != (cout,):
        raise ContractError(f"bias shape {bias.shape} != ({cout},)")
    k = kh
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < k or wp < k:
        raise ContractError(f"input {h}x{w} with padding {padding} is smaller than kernel {k}")
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    og = cout // groups
    wmat = weight.data.reshape(cout, cg * k * k)
    cols = []
    outs = []
    for gi in range(groups):
        col = _im2col(xp[gi * cg : (gi + 1) * cg], k, stride, ho, wo)
        cols.append(col)
        outs.append(wmat[gi * og : (gi + 1) * og] @ col)
    out = np.concatenate(outs, axis=0) if groups > 1 else outs[0]
    if bias is not None:
        out = out + bias.data[:, None]
    out = out.reshape(cout, ho, wo)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def _bw(g):
        gm = g.reshape(cout, ho * wo)
        if bias is not None and bias.requires_grad:
            bias._accumulate(gm.sum(axis=1))
        if weight.requires_grad:
            dw = np.concatenate([gm[gi * og : (gi + 1) * og] @ cols[gi].T for gi in range(groups)], axis=0)
            weight._accumulate(dw.reshape(weight.shape))
        if x.requires_grad:
            dxp = np.concatenate(
                [
                    _col2im(wmat[gi * og : (gi + 1) * og].T @ gm[gi * og : (gi + 1) * og], cg, k, stride, hp, wp, ho, wo)
                    for gi in range(groups)
                ],
                axis=0,
            )
            if padding:
                dxp = dxp[:, padding : padding + h, padding : padding + w]
            x._accumulate(dxp)

    return make_op(out, parents, _bw)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


class ParamStore:
    """Ordered, uniquely named collection of trainable tensors."""

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, copy=True), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def num_elements(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def flatten(self) -> np.ndarray:
        if not self._params:
            return np.zeros(0)
        return np.concatenate([t.data.reshape(-1) for t in self._params.values()])

    def load_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat)
        if flat.size != self.num_elements():
            raise ContractError(f"flat vector has {flat.size} values, store holds {self.num_elements()}")
        pos = 0
        for t in self._params.values():
            n = t.data.size
            t.data = flat[pos : pos + n].reshape(t.data.shape).astype(t.data.dtype)
            pos += n

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore()
        for name, t in self._params.items():
            out.add(name, t.data.astype(dtype))
        return out

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, t in self._params.items():
            out.add(name, t.data)
        return out


def uniform_init(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=tuple(shape))


# ---------------------------------------------------------------------------
# gradient check
# ---------------------------------------------------------------------------


def _sample_coordinates(params: ParamStore, n: int, rng: np.random.Generator) -> list[tuple[str, int]]:
    total = params.num_elements()
    if total <= n:
        return [(name, i) for name, t in params.items() for i in range(t.data.size)]
    names = list(params)
    coords: list[tuple[str, int]] = []
    # one per tensor first, then proportional to size
    for name in names:
        coords.append((name, int(rng.integers(params[name].data.size))))
    remaining = max(n - len(coords), 0)
    sizes = np.array([params[name].data.size for name in names], dtype=float)
    picks = rng.choice(len(names), size=remaining, p=sizes / sizes.sum())
    for i in picks:
        name = names[i]
        coords.append((name, int(rng.integers(params[name].data.size))))
    return coords


def finite_difference_check(
    f: Callable[[ParamStore], Tensor],
    params: ParamStore,
    eps: float = 1e-4,
    n_samples: int = 50,
    seed: int = 0,
) -> float:
    """Largest relative error between backprop and central differences.

    ``f`` must rebuild its graph from ``params`` on each call. At least
    ``n_samples`` coordinates are checked (all of them when the store is
    smaller), spread across every tensor in the store.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    params.zero_grad()
    loss = f(params)
    if not np.isfinite(loss.data).all():
        raise NumericError("f is non-finite at the base point")
    loss.backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for name, t in params.items()}

    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_at = None
    for name, idx in _sample_coordinates(params, n_samples, rng):
        flat = params[name].data.reshape(-1)
        orig = flat[idx]
        flat[idx] = orig + eps
        fp = float(f(params).data)
        flat[idx] = orig - eps
        fm = float(f(params).data)
        flat[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"f is non-finite when perturbing {name}[{idx}]")
        numeric = (fp - fm) / (2 * eps)
        a = float(analytic[name].reshape(-1)[idx])
        err = abs(a - numeric) / max(abs(a), 1e-8)
        if err > worst:
            worst, worst_at = err, (name, idx, a, numeric)
    if worst_at is not None:
        logger.debug("worst gradient mismatch at %s[%d]: analytic=%g numeric=%g", *worst_at)
    params.zero_grad()
    return worst
