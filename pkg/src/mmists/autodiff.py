"""Minimal dense-tensor engine with reverse-mode differentiation.

All math runs in float64. An op records onto a tape when at least one operand
is tape-tracked; with no tracked operand it evaluates eagerly as a constant,
which doubles as the no-grad path used for evaluation and finite differences.
Tape order is creation order, so reverse iteration is a topological sweep.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from . import kernels

LAYER_NORM_EPS = 1e-5


class ShapeMismatch(Exception):
    pass


class EmptyMask(Exception):
    pass


class AllMasked(Exception):
    pass


class NonFiniteResult(Exception):
    pass


class NotScalar(Exception):
    pass


class DisconnectedGraph(Exception):
    pass


class Node:
    __slots__ = ("parents", "vjp", "sink")

    def __init__(self, parents, vjp, sink=None):
        self.parents = parents
        self.vjp = vjp
        self.sink = sink


class Tape:
    """Ordered record of operations; backward visits each node exactly once."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes = []


class Tensor:
    __slots__ = ("data", "tape", "nid")

    def __init__(self, data, tape=None, nid=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.nid = nid

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, tracked={self.nid is not None})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, float(other))
        return mul(self, other)


def constant(data):
    return Tensor(data)


def _check_finite(arr):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteResult("op produced NaN or Inf")


def _tape_of(*tensors):
    tape = None
    for t in tensors:
        if t.nid is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError("operands live on different tapes")
            tape = t.tape
    return tape


def _emit(tape, data, parents, vjp):
    _check_finite(data)
    out = Tensor(data, tape)
    if tape is not None:
        out.nid = len(tape.nodes)
        tape.nodes.append(Node(parents, vjp))
    return out


def _pids(*tensors):
    return tuple(-1 if t.nid is None else t.nid for t in tensors)


# ---------------------------------------------------------------------------
# core ops


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul {a.data.shape} @ {b.data.shape}")
    tape = _tape_of(a, b)
    out = a.data @ b.data
    if tape is None:
        return _emit(None, out, (), None)
    na, nb = a.nid is not None, b.nid is not None
    ad, bd = a.data, b.data

    def vjp(g):
        return (g @ bd.T if na else None, ad.T @ g if nb else None)

    return _emit(tape, out, _pids(a, b), vjp)


def add(a, b):
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"add {a.data.shape} + {b.data.shape}")
    tape = _tape_of(a, b)
    if tape is None:
        return _emit(None, a.data + b.data, (), None)
    na, nb = a.nid is not None, b.nid is not None

    def vjp(g):
        return (g if na else None, g if nb else None)

    return _emit(tape, a.data + b.data, _pids(a, b), vjp)


def scalar_mul(x, c):
    c = float(c)
    tape = _tape_of(x)
    if tape is None:
        return _emit(None, x.data * c, (), None)

    def vjp(g):
        return (g * c,)

    return _emit(tape, x.data * c, _pids(x), vjp)


def sub(a, b):
    return add(a, scalar_mul(b, -1.0))


def mul(a, b):
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"mul {a.data.shape} * {b.data.shape}")
    tape = _tape_of(a, b)
    if tape is None:
        return _emit(None, a.data * b.data, (), None)
    na, nb = a.nid is not None, b.nid is not None
    ad, bd = a.data, b.data

    def vjp(g):
        return (g * bd if na else None, g * ad if nb else None)

    return _emit(tape, ad * bd, _pids(a, b), vjp)


def transpose(x):
    if x.data.ndim != 2:
        raise ShapeMismatch("transpose expects a matrix")
    tape = _tape_of(x)
    if tape is None:
        return _emit(None, x.data.T.copy(), (), None)

    def vjp(g):
        return (g.T,)

    return _emit(tape, x.data.T.copy(), _pids(x), vjp)


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ShapeMismatch("concat of nothing")
    tape = _tape_of(*tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    if tape is None:
        return _emit(None, out, (), None)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    tracked = [t.nid is not None for t in tensors]

    def vjp(g):
        parts = []
        for i in range(len(sizes)):
            if tracked[i]:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(offsets[i], offsets[i + 1])
                parts.append(g[tuple(sl)])
            else:
                parts.append(None)
        return tuple(parts)

    return _emit(tape, out, _pids(*tensors), vjp)


def slice_axis(x, axis, start, stop):
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    tape = _tape_of(x)
    out = x.data[sl].copy()
    if tape is None:
        return _emit(None, out, (), None)
    shape = x.data.shape

    def vjp(g):
        z = np.zeros(shape, dtype=np.float64)
        z[sl] = g
        return (z,)

    return _emit(tape, out, _pids(x), vjp)


def gather_rows(x, indices):
    if x.data.ndim != 2:
        raise ShapeMismatch("gather_rows expects a matrix")
    idx = np.asarray(indices, dtype=np.int64)
    tape = _tape_of(x)
    out = x.data[idx].copy()
    if tape is None:
        return _emit(None, out, (), None)
    shape = x.data.shape

    def vjp(g):
        z = np.zeros(shape, dtype=np.float64)
        np.add.at(z, idx, g)
        return (z,)

    return _emit(tape, out, _pids(x), vjp)


def row_softmax(x, key_mask=None):
    """Softmax along the last axis of a matrix.

    key_mask is an optional (C,) 0/1 vector; masked columns get probability
    exactly zero (logits treated as -inf), so they can never leak into sums.
    """
    if x.data.ndim != 2:
        raise ShapeMismatch("row_softmax expects a matrix")
    c = x.data.shape[1]
    if key_mask is None:
        km = np.ones(c, dtype=np.float64)
    else:
        km = np.asarray(key_mask, dtype=np.float64).reshape(-1)
        if km.shape[0] != c:
            raise ShapeMismatch("key mask length must match columns")
        if not np.any(km > 0.0):
            raise AllMasked("softmax row has no valid keys")
    probs = kernels.softmax_rows(np.ascontiguousarray(x.data), km)
    tape = _tape_of(x)
    if tape is None:
        return _emit(None, probs, (), None)

    def vjp(g):
        return (kernels.softmax_rows_vjp(probs, np.ascontiguousarray(g), km),)

    return _emit(tape, probs, _pids(x), vjp)


def layer_norm(x, gamma, beta, eps=LAYER_NORM_EPS):
    """Normalize each row to zero mean / unit variance, then affine scale."""
    if x.data.ndim != 2:
        raise ShapeMismatch("layer_norm expects a matrix")
    gd = gamma.data.reshape(-1)
    bd = beta.data.reshape(-1)
    if gd.shape[0] != x.data.shape[1] or bd.shape[0] != x.data.shape[1]:
        raise ShapeMismatch("layer_norm affine params must match columns")
    y, xhat, inv_std = kernels.layer_norm_fwd(
        np.ascontiguousarray(x.data), gd, bd, float(eps))
    tape = _tape_of(x, gamma, beta)
    if tape is None:
        return _emit(None, y, (), None)
    nx, ng, nb = x.nid is not None, gamma.nid is not None, beta.nid is not None
    gshape, bshape = gamma.data.shape, beta.data.shape

    def vjp(g):
        dx, dgamma, dbeta = kernels.layer_norm_vjp(
            np.ascontiguousarray(g), xhat, inv_std, gd)
        return (dx if nx else None,
                dgamma.reshape(gshape) if ng else None,
                dbeta.reshape(bshape) if nb else None)

    return _emit(tape, y, _pids(x, gamma, beta), vjp)


def relu(x):
    tape = _tape_of(x)
    out = np.maximum(x.data, 0.0)
    if tape is None:
        return _emit(None, out, (), None)
    gate = (x.data > 0.0).astype(np.float64)

    def vjp(g):
        return (g * gate,)

    return _emit(tape, out, _pids(x), vjp)


def sin(x):
    tape = _tape_of(x)
    out = np.sin(x.data)
    if tape is None:
        return _emit(None, out, (), None)
    cosx = np.cos(x.data)

    def vjp(g):
        return (g * cosx,)

    return _emit(tape, out, _pids(x), vjp)


def masked_mean(x, mask):
    """Mean over rows of a matrix restricted to rows where mask is 1.

    Returns a (1, C) matrix. Raises EmptyMask when no row is selected.
    """
    if x.data.ndim != 2:
        raise ShapeMismatch("masked_mean expects a matrix")
    m = np.asarray(mask, dtype=np.float64).reshape(-1)
    if m.shape[0] != x.data.shape[0]:
        raise ShapeMismatch("mask length must match rows")
    total = m.sum()
    if total <= 0.0:
        raise EmptyMask("masked_mean over an all-zero mask")
    out = (m[None, :] @ x.data) / total
    tape = _tape_of(x)
    if tape is None:
        return _emit(None, out, (), None)

    def vjp(g):
        return (np.outer(m, g[0]) / total,)

    return _emit(tape, out, _pids(x), vjp)


def broadcast_add(x, v):
    """Add a (C,), (1, C) or (R, 1) tensor to every row/column of a matrix."""
    if x.data.ndim != 2:
        raise ShapeMismatch("broadcast_add expects a matrix")
    r, c = x.data.shape
    vshape = v.data.shape
    ok = vshape in ((c,), (1, c), (r, 1))
    if not ok:
        raise ShapeMismatch(f"broadcast_add {x.data.shape} + {vshape}")
    tape = _tape_of(x, v)
    out = x.data + v.data
    if tape is None:
        return _emit(None, out, (), None)
    nx, nv = x.nid is not None, v.nid is not None

    def vjp(g):
        if not nv:
            gv = None
        elif vshape == (c,):
            gv = g.sum(axis=0)
        elif vshape == (1, c):
            gv = g.sum(axis=0, keepdims=True)
        else:
            gv = g.sum(axis=1, keepdims=True)
        return (g if nx else None, gv)

    return _emit(tape, out, _pids(x, v), vjp)


# ---------------------------------------------------------------------------
# parameters and backward


class ParamStore:
    """Named parameter tensors with accumulated gradients."""

    def __init__(self):
        self.params = {}
        self.grads = {}

    def add(self, name, value):
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        arr = np.array(value, dtype=np.float64)
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)
        return arr

    def tensor(self, name, tape=None):
        data = self.params[name]
        if tape is None:
            return Tensor(data)
        out = Tensor(data, tape, len(tape.nodes))
        tape.nodes.append(Node((), None, sink=(self, name)))
        return out

    def zero_grads(self):
        for g in self.grads.values():
            g[...] = 0.0

    def names(self):
        return list(self.params.keys())

    def copy_params(self):
        return {k: v.copy() for k, v in self.params.items()}

    def load_values(self, values):
        for k, v in values.items():
            self.params[k][...] = v


def backward(loss):
    """Accumulate d(loss)/d(param) into every ParamStore bound to the tape."""
    if loss.data.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss.tape is None or loss.nid is None:
        raise DisconnectedGraph("loss is not connected to any tape")
    tape = loss.tape
    grads = [None] * (loss.nid + 1)
    grads[loss.nid] = np.ones_like(loss.data)
    for i in range(loss.nid, -1, -1):
        g = grads[i]
        if g is None:
            continue
        node = tape.nodes[i]
        if node.sink is not None:
            store, name = node.sink
            store.grads[name] += g.reshape(store.grads[name].shape)
        if node.vjp is not None:
            for pid, pg in zip(node.parents, node.vjp(g)):
                if pid < 0 or pg is None:
                    continue
                grads[pid] = pg if grads[pid] is None else grads[pid] + pg
        grads[i] = None


# ---------------------------------------------------------------------------
# gradient checking oracle


def grad_check(f, x, eps=1e-6):
    """Max relative error between reverse-mode and central-difference gradients.

    f maps a Tensor to a scalar Tensor; x is a plain array of evaluation
    coordinates. Relative error uses denominator max(|a|, |b|, 1e-8).
    """
    if not (0.0 < eps <= 1e-2):
        raise ValueError("eps must lie in (0, 1e-2]")
    x = np.array(x, dtype=np.float64)
    store = ParamStore()
    store.add("x", x)
    tape = Tape()
    out = f(store.tensor("x", tape))
    backward(out)
    analytic = store.grads["x"].copy()

    numeric = np.zeros_like(x)
    flat = store.params["x"].reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(Tensor(store.params["x"])).item()
        flat[i] = orig - eps
        fm = f(Tensor(store.params["x"])).item()
        flat[i] = orig
        nflat[i] = (fp - fm) / (2.0 * eps)
    return _max_rel_error(analytic, numeric)


def grad_check_params(loss_fn, store, eps=1e-6, names=None):
    """Per-parameter-group gradient check for a full model.

    loss_fn(store, tape) must return a scalar Tensor; with tape=None it must
    evaluate the same loss without recording. Returns {name: max rel error}
    for the requested parameter groups (all of them by default).
    """
    if not (0.0 < eps <= 1e-2):
        raise ValueError("eps must lie in (0, 1e-2]")
    store.zero_grads()
    tape = Tape()
    backward(loss_fn(store, tape))
    analytic = {k: v.copy() for k, v in store.grads.items()}

    errors = {}
    for name, param in store.params.items():
        if names is not None and name not in names:
            continue
        numeric = np.zeros_like(param)
        flat = param.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = loss_fn(store, None).item()
            flat[i] = orig - eps
            fm = loss_fn(store, None).item()
            flat[i] = orig
            nflat[i] = (fp - fm) / (2.0 * eps)
        errors[name] = _max_rel_error(analytic[name], numeric)
    return errors


def _max_rel_error(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


# ---------------------------------------------------------------------------
# named-tensor checkpoint container

CHECKPOINT_MAGIC = b"MMCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, store, meta=None):
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        names = store.names()
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            nb = name.encode("utf-8")
            arr = store.params[name]
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
        for name in names:
            fh.write(store.params[name].astype("<f8").tobytes(order="C"))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        entries = []
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            entries.append((name, shape))
        store = ParamStore()
        for name, shape in entries:
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(n * 8), dtype="<f8").reshape(shape)
            store.add(name, data)
    return store, meta
