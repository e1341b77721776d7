"""Reverse-mode autodiff on a define-by-run tape, with exactly the dense ops
the matching model needs, plus an Adam optimizer and a finite-difference
gradient checker.

Everything is float64. A :class:`Tape` records operations in execution order,
so the recording itself is a topological order and ``backward`` is a single
reverse sweep. Leaves are pre-existing :class:`Tensor` objects (model
parameters or test inputs); their ``grad`` buffers are accumulated into, and
leaves on the tape that the loss does not reach are zero-filled.
"""

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Raised when an op is applied to incompatible shapes."""


class Tensor:
    """Dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)  # keeps 0-d scalars 0-d
        self.data = arr
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


class Parameter:
    """A named trainable tensor carrying Adam moment estimates."""

    __slots__ = ("name", "tensor", "m", "v", "step")

    def __init__(self, name, data):
        self.name = name
        self.tensor = Tensor(data)
        self.m = np.zeros_like(self.tensor.data)
        self.v = np.zeros_like(self.tensor.data)
        self.step = 0

    @property
    def data(self):
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    def size(self):
        return self.tensor.data.size

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.tensor.data.shape})"


class Node:
    __slots__ = ("kind", "inputs", "tensor", "ctx")

    def __init__(self, kind, inputs, tensor, ctx):
        self.kind = kind
        self.inputs = inputs
        self.tensor = tensor
        self.ctx = ctx


def _as_index_array(idx):
    arr = np.asarray(idx, dtype=np.int64)
    if arr.ndim != 1:
        raise ShapeError(f"index array must be 1-D, got shape {arr.shape}")
    return arr


def stable_sigmoid(x):
    """Numerically stable elementwise logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax_last(x):
    shifted = x - np.max(x, axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / np.sum(ex, axis=-1, keepdims=True)


def _reduce_to(g, shape):
    """Undo the broadcast of the second elementwise operand."""
    if g.shape == shape:
        return g
    if len(shape) == 1:  # row vector broadcast over 2-D
        return g.sum(axis=0)
    return g.sum(axis=1, keepdims=True)  # (n, 1) column broadcast


def _check_elementwise(kind, a, b):
    if a.shape == b.shape:
        return
    if a.ndim == 2 and b.shape == (a.shape[1],):
        return
    if a.ndim == 2 and b.shape == (a.shape[0], 1):
        return
    raise ShapeError(f"{kind}: incompatible shapes {a.shape} and {b.shape}")


class Tape:
    """Append-only computation graph; insertion order is topological order."""

    def __init__(self, rng=None):
        self.nodes = []
        self._leaves = {}
        self.rng = rng if rng is not None else np.random.default_rng()

    # -- construction ------------------------------------------------------

    def leaf(self, tensor):
        """Register a Tensor as a graph leaf; repeated calls reuse the node."""
        nid = self._leaves.get(id(tensor))
        if nid is None:
            nid = len(self.nodes)
            self.nodes.append(Node("leaf", (), tensor, {}))
            self._leaves[id(tensor)] = nid
        return nid

    def const(self, data):
        """Leaf holding a fixed value (gradients land there and are ignored)."""
        return self.leaf(Tensor(data))

    def value(self, nid):
        return self.nodes[nid].tensor.data

    def apply(self, kind, *inputs, **ctx):
        """Record one operation and return the id of its output node."""
        forward = _FORWARD.get(kind)
        if forward is None:
            raise ValueError(f"unknown op kind {kind!r}")
        arrays = [self.nodes[i].tensor.data for i in inputs]
        out = forward(self, arrays, ctx)
        nid = len(self.nodes)
        self.nodes.append(Node(kind, tuple(inputs), Tensor(out), ctx))
        return nid

    # -- convenience wrappers ---------------------------------------------

    def matmul(self, a, b):
        return self.apply("matmul", a, b)

    def add(self, a, b):
        return self.apply("add", a, b)

    def sub(self, a, b):
        return self.apply("sub", a, b)

    def mul(self, a, b):
        return self.apply("mul", a, b)

    def concat(self, a, b):
        return self.apply("concat", a, b)

    def mean_rows(self, a):
        return self.apply("mean_rows", a)

    def cos(self, a):
        return self.apply("cos", a)

    def sigmoid(self, a):
        return self.apply("sigmoid", a)

    def tanh(self, a):
        return self.apply("tanh", a)

    def relu(self, a):
        return self.apply("relu", a)

    def softmax(self, a):
        return self.apply("softmax", a)

    def log(self, a):
        return self.apply("log", a)

    def gather_rows(self, table, idx):
        return self.apply("gather_rows", table, idx=_as_index_array(idx))

    def scatter_mean(self, rows, groups, num_groups, counts):
        return self.apply(
            "scatter_mean",
            rows,
            groups=_as_index_array(groups),
            num_groups=int(num_groups),
            counts=np.asarray(counts, dtype=np.float64),
        )

    def conv1d(self, x, kernels_node):
        return self.apply("conv1d", x, kernels_node)

    def flatten(self, a):
        return self.apply("flatten", a)

    def dropout(self, a, rate, train):
        return self.apply("dropout", a, rate=float(rate), train=bool(train))

    def rows_dot_vector(self, m, v):
        return self.apply("rows_dot_vector", m, v)

    def cross_entropy(self, logits, target):
        return self.apply("cross_entropy", logits, target=target)

    def tile_rows(self, v, count):
        return self.apply("tile_rows", v, count=int(count))

    def stack_pair(self, a, b):
        return self.apply("stack_pair", a, b)

    def transpose(self, a):
        return self.apply("transpose", a)

    def vstack(self, a, b):
        return self.apply("vstack", a, b)

    def scale(self, a, factor):
        return self.apply("scale", a, factor=float(factor))

    def sum(self, a):
        return self.apply("sum", a)

    # -- differentiation ---------------------------------------------------

    def backward(self, loss_id):
        """Populate ``grad`` on every leaf tensor with d(loss)/d(leaf).

        Leaves not reachable from the loss are zero-filled. Accumulates into
        pre-existing grad buffers, so callers that reuse leaves across tapes
        should zero them first.
        """
        loss = self.nodes[loss_id].tensor.data
        if loss.shape != ():
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
        grads = [None] * len(self.nodes)
        grads[loss_id] = np.ones((), dtype=np.float64)
        for nid in range(loss_id, -1, -1):
            node = self.nodes[nid]
            g = grads[nid]
            if g is None or node.kind == "leaf":
                continue
            inputs = [self.nodes[i].tensor.data for i in node.inputs]
            for iid, ig in zip(
                node.inputs, _BACKWARD[node.kind](g, inputs, node.tensor.data, node.ctx)
            ):
                if ig is None:
                    continue
                if grads[iid] is None:
                    grads[iid] = np.zeros_like(self.nodes[iid].tensor.data)
                grads[iid] += ig
        for nid, node in enumerate(self.nodes):
            if node.kind != "leaf":
                continue
            tensor = node.tensor
            if tensor.grad is None:
                tensor.grad = np.zeros_like(tensor.data)
            if grads[nid] is not None:
                tensor.grad += grads[nid]

    def assert_finite(self):
        for nid, node in enumerate(self.nodes):
            if not np.all(np.isfinite(node.tensor.data)):
                raise FloatingPointError(f"non-finite value at node {nid} ({node.kind})")


# ---------------------------------------------------------------------------
# forward implementations


def _fw_matmul(tape, arrays, ctx):
    a, b = arrays
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return a @ b


def _fw_add(tape, arrays, ctx):
    a, b = arrays
    _check_elementwise("add", a, b)
    return a + b


def _fw_sub(tape, arrays, ctx):
    a, b = arrays
    _check_elementwise("sub", a, b)
    return a - b


def _fw_mul(tape, arrays, ctx):
    a, b = arrays
    _check_elementwise("mul", a, b)
    return a * b


def _fw_concat(tape, arrays, ctx):
    a, b = arrays
    if a.ndim != b.ndim or a.ndim not in (1, 2):
        raise ShapeError(f"concat: incompatible shapes {a.shape} and {b.shape}")
    if a.ndim == 2 and a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat: incompatible shapes {a.shape} and {b.shape}")
    return np.concatenate([a, b], axis=-1)


def _fw_mean_rows(tape, arrays, ctx):
    (a,) = arrays
    if a.ndim != 2 or a.shape[0] == 0:
        raise ShapeError(f"mean_rows: need a non-empty matrix, got shape {a.shape}")
    return a.mean(axis=0)


def _fw_cos(tape, arrays, ctx):
    return np.cos(arrays[0])


def _fw_sigmoid(tape, arrays, ctx):
    return stable_sigmoid(arrays[0])


def _fw_tanh(tape, arrays, ctx):
    return np.tanh(arrays[0])


def _fw_relu(tape, arrays, ctx):
    return np.maximum(arrays[0], 0.0)


def _fw_softmax(tape, arrays, ctx):
    (a,) = arrays
    if a.ndim == 0:
        raise ShapeError("softmax: needs at least one axis")
    return _softmax_last(a)


def _fw_log(tape, arrays, ctx):
    return np.log(arrays[0])


def _fw_gather_rows(tape, arrays, ctx):
    (table,) = arrays
    idx = ctx["idx"]
    if table.ndim != 2:
        raise ShapeError(f"gather_rows: table must be 2-D, got shape {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(
            f"gather_rows: index out of range for table of {table.shape[0]} rows"
        )
    return table[idx]


def _fw_scatter_mean(tape, arrays, ctx):
    (rows,) = arrays
    groups, counts = ctx["groups"], ctx["counts"]
    num_groups = ctx["num_groups"]
    if rows.ndim != 2 or groups.shape[0] != rows.shape[0]:
        raise ShapeError(
            f"scatter_mean: rows {rows.shape} vs groups {groups.shape}"
        )
    if counts.shape != (num_groups,):
        raise ShapeError(
            f"scatter_mean: counts {counts.shape} vs num_groups {num_groups}"
        )
    if groups.size and (groups.min() < 0 or groups.max() >= num_groups):
        raise ShapeError(f"scatter_mean: group id out of range [0, {num_groups})")
    total = kernels.segment_sum(rows, groups, num_groups)
    return total / counts[:, None]


def _fw_conv1d(tape, arrays, ctx):
    x, k = arrays
    squeezed = x.ndim == 2
    if squeezed:
        x = x[None]
    if x.ndim != 3 or k.ndim != 3 or x.shape[1] != k.shape[1] or k.shape[2] % 2 != 1:
        raise ShapeError(f"conv1d: incompatible shapes {arrays[0].shape} and {k.shape}")
    ctx["squeezed"] = squeezed
    out = kernels.conv1d_same(x, k)
    return out[0] if squeezed else out


def _fw_flatten(tape, arrays, ctx):
    (a,) = arrays
    if a.ndim == 3:  # keep the batch axis
        return a.reshape(a.shape[0], -1)
    return a.reshape(-1)


def _fw_dropout(tape, arrays, ctx):
    (a,) = arrays
    rate = ctx["rate"]
    if not 0.0 <= rate < 1.0:
        raise ShapeError(f"dropout: rate must be in [0, 1), got {rate}")
    if not ctx["train"] or rate == 0.0:
        ctx["mask"] = None
        return a.copy()
    keep = 1.0 - rate
    mask = (tape.rng.random(a.shape) < keep) / keep
    ctx["mask"] = mask
    return a * mask


def _fw_rows_dot_vector(tape, arrays, ctx):
    m, v = arrays
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"rows_dot_vector: incompatible shapes {m.shape} and {v.shape}")
    return m @ v


def _fw_cross_entropy(tape, arrays, ctx):
    (logits,) = arrays
    target = ctx["target"]
    if logits.ndim == 1:
        targets = np.asarray([target], dtype=np.int64)
        rows = logits[None]
    elif logits.ndim == 2:
        targets = _as_index_array(target)
        if targets.shape[0] != logits.shape[0]:
            raise ShapeError(
                f"cross_entropy: {logits.shape[0]} rows vs {targets.shape[0]} targets"
            )
        rows = logits
    else:
        raise ShapeError(f"cross_entropy: logits must be 1-D or 2-D, got {logits.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= rows.shape[1]):
        raise ShapeError(
            f"cross_entropy: target out of range for {rows.shape[1]} classes"
        )
    shifted = rows - np.max(rows, axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=1))
    picked = shifted[np.arange(rows.shape[0]), targets]
    ctx["targets"] = targets
    return np.asarray(np.sum(lse - picked))


def _fw_tile_rows(tape, arrays, ctx):
    (v,) = arrays
    if v.ndim != 1:
        raise ShapeError(f"tile_rows: need a vector, got shape {v.shape}")
    return np.broadcast_to(v, (ctx["count"], v.shape[0])).copy()


def _fw_stack_pair(tape, arrays, ctx):
    a, b = arrays
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"stack_pair: incompatible shapes {a.shape} and {b.shape}")
    return np.stack([a, b], axis=1)


def _fw_transpose(tape, arrays, ctx):
    (a,) = arrays
    if a.ndim != 2:
        raise ShapeError(f"transpose: need a matrix, got shape {a.shape}")
    return np.ascontiguousarray(a.T)


def _fw_vstack(tape, arrays, ctx):
    a, b = arrays
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"vstack: incompatible shapes {a.shape} and {b.shape}")
    return np.concatenate([a, b], axis=0)


def _fw_scale(tape, arrays, ctx):
    return arrays[0] * ctx["factor"]


def _fw_sum(tape, arrays, ctx):
    return np.asarray(np.sum(arrays[0]))


_FORWARD = {
    "matmul": _fw_matmul,
    "add": _fw_add,
    "sub": _fw_sub,
    "mul": _fw_mul,
    "concat": _fw_concat,
    "mean_rows": _fw_mean_rows,
    "cos": _fw_cos,
    "sigmoid": _fw_sigmoid,
    "tanh": _fw_tanh,
    "relu": _fw_relu,
    "softmax": _fw_softmax,
    "log": _fw_log,
    "gather_rows": _fw_gather_rows,
    "scatter_mean": _fw_scatter_mean,
    "conv1d": _fw_conv1d,
    "flatten": _fw_flatten,
    "dropout": _fw_dropout,
    "rows_dot_vector": _fw_rows_dot_vector,
    "cross_entropy": _fw_cross_entropy,
    "tile_rows": _fw_tile_rows,
    "stack_pair": _fw_stack_pair,
    "transpose": _fw_transpose,
    "vstack": _fw_vstack,
    "scale": _fw_scale,
    "sum": _fw_sum,
}


# ---------------------------------------------------------------------------
# backward implementations: (upstream grad, input arrays, output array, ctx)
# -> one grad (or None) per input


def _bw_matmul(g, inputs, out, ctx):
    a, b = inputs
    return [g @ b.T, a.T @ g]


def _bw_add(g, inputs, out, ctx):
    return [g, _reduce_to(g, inputs[1].shape)]


def _bw_sub(g, inputs, out, ctx):
    return [g, -_reduce_to(g, inputs[1].shape)]


def _bw_mul(g, inputs, out, ctx):
    a, b = inputs
    return [g * b, _reduce_to(g * a, b.shape)]


def _bw_concat(g, inputs, out, ctx):
    na = inputs[0].shape[-1]
    return [np.ascontiguousarray(g[..., :na]), np.ascontiguousarray(g[..., na:])]


def _bw_mean_rows(g, inputs, out, ctx):
    n = inputs[0].shape[0]
    return [np.broadcast_to(g / n, inputs[0].shape).copy()]


def _bw_cos(g, inputs, out, ctx):
    return [-np.sin(inputs[0]) * g]


def _bw_sigmoid(g, inputs, out, ctx):
    return [out * (1.0 - out) * g]


def _bw_tanh(g, inputs, out, ctx):
    return [(1.0 - out * out) * g]


def _bw_relu(g, inputs, out, ctx):
    return [g * (inputs[0] > 0)]


def _bw_softmax(g, inputs, out, ctx):
    dot = np.sum(g * out, axis=-1, keepdims=True)
    return [out * (g - dot)]


def _bw_log(g, inputs, out, ctx):
    return [g / inputs[0]]


def _bw_gather_rows(g, inputs, out, ctx):
    table = inputs[0]
    dt = np.zeros_like(table)
    kernels.index_add_rows(dt, ctx["idx"], np.ascontiguousarray(g))
    return [dt]


def _bw_scatter_mean(g, inputs, out, ctx):
    groups, counts = ctx["groups"], ctx["counts"]
    return [g[groups] / counts[groups][:, None]]


def _bw_conv1d(g, inputs, out, ctx):
    x, k = inputs
    g3 = g[None] if ctx["squeezed"] else g
    x3 = x[None] if ctx["squeezed"] else x
    g3 = np.ascontiguousarray(g3)
    dx = kernels.conv1d_grad_input(g3, k)
    dk = kernels.conv1d_grad_kernels(g3, np.ascontiguousarray(x3), k.shape[2])
    return [dx[0] if ctx["squeezed"] else dx, dk]


def _bw_flatten(g, inputs, out, ctx):
    return [g.reshape(inputs[0].shape)]


def _bw_dropout(g, inputs, out, ctx):
    mask = ctx["mask"]
    return [g.copy() if mask is None else g * mask]


def _bw_rows_dot_vector(g, inputs, out, ctx):
    m, v = inputs
    return [g[:, None] * v[None, :], m.T @ g]


def _bw_cross_entropy(g, inputs, out, ctx):
    (logits,) = inputs
    rows = logits[None] if logits.ndim == 1 else logits
    targets = ctx["targets"]
    soft = _softmax_last(rows)
    soft[np.arange(rows.shape[0]), targets] -= 1.0
    soft *= g
    return [soft[0] if logits.ndim == 1 else soft]


def _bw_tile_rows(g, inputs, out, ctx):
    return [g.sum(axis=0)]


def _bw_stack_pair(g, inputs, out, ctx):
    return [np.ascontiguousarray(g[:, 0, :]), np.ascontiguousarray(g[:, 1, :])]


def _bw_transpose(g, inputs, out, ctx):
    return [np.ascontiguousarray(g.T)]


def _bw_vstack(g, inputs, out, ctx):
    na = inputs[0].shape[0]
    return [np.ascontiguousarray(g[:na]), np.ascontiguousarray(g[na:])]


def _bw_scale(g, inputs, out, ctx):
    return [g * ctx["factor"]]


def _bw_sum(g, inputs, out, ctx):
    return [np.full_like(inputs[0], float(g))]


_BACKWARD = {
    "matmul": _bw_matmul,
    "add": _bw_add,
    "sub": _bw_sub,
    "mul": _bw_mul,
    "concat": _bw_concat,
    "mean_rows": _bw_mean_rows,
    "cos": _bw_cos,
    "sigmoid": _bw_sigmoid,
    "tanh": _bw_tanh,
    "relu": _bw_relu,
    "softmax": _bw_softmax,
    "log": _bw_log,
    "gather_rows": _bw_gather_rows,
    "scatter_mean": _bw_scatter_mean,
    "conv1d": _bw_conv1d,
    "flatten": _bw_flatten,
    "dropout": _bw_dropout,
    "rows_dot_vector": _bw_rows_dot_vector,
    "cross_entropy": _bw_cross_entropy,
    "tile_rows": _bw_tile_rows,
    "stack_pair": _bw_stack_pair,
    "transpose": _bw_transpose,
    "vstack": _bw_vstack,
    "scale": _bw_scale,
    "sum": _bw_sum,
}

OP_KINDS = tuple(sorted(_FORWARD))


# ---------------------------------------------------------------------------
# gradient checking and optimization


def grad_check(f, x, eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``f(tape, node_id) -> node_id`` must build a scalar loss from the leaf
    node of ``x`` and be deterministic (dropout off). The error metric per
    coordinate is |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    if eps <= 0:
        raise ValueError(f"grad_check: eps must be positive, got {eps}")

    def run(build_grad=False):
        tape = Tape()
        loss_id = f(tape, tape.leaf(x))
        loss = tape.nodes[loss_id].tensor.data
        if loss.shape != ():
            raise ShapeError(f"grad_check: f must return a scalar, got {loss.shape}")
        if build_grad:
            x.grad = None
            tape.backward(loss_id)
        return float(loss)

    run(build_grad=True)
    analytic = x.grad.copy()
    numeric = np.zeros_like(x.data)
    flat_x = x.data.reshape(-1)
    flat_n = numeric.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + eps
        upper = run()
        flat_x[i] = orig - eps
        lower = run()
        flat_x[i] = orig
        flat_n[i] = (upper - lower) / (2.0 * eps)
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


def zero_grads(params):
    for p in params:
        if p.tensor.grad is None:
            p.tensor.grad = np.zeros_like(p.tensor.data)
        else:
            p.tensor.grad.fill(0.0)


def clip_grad_norm(params, max_norm):
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    params = list(params)
    total = 0.0
    for p in params:
        if p.tensor.grad is None:
            raise ValueError(f"clip_grad_norm: parameter {p.name!r} has no gradient")
        total += float(np.sum(p.tensor.grad * p.tensor.grad))
    norm = np.sqrt(total)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in params:
            p.tensor.grad *= scale
    return norm


def adam_step(params, lr=0.001, betas=(0.9, 0.999), eps=1e-8):
    """Standard Adam update with bias correction, in place; zeroes grads."""
    params = list(params)
    for p in params:
        if p.tensor.grad is None:
            raise ValueError(f"adam_step: parameter {p.name!r} has no gradient")
    b1, b2 = betas
    for p in params:
        g = p.tensor.grad
        p.step += 1
        p.m *= b1
        p.m += (1.0 - b1) * g
        p.v *= b2
        p.v += (1.0 - b2) * (g * g)
        m_hat = p.m / (1.0 - b1**p.step)
        v_hat = p.v / (1.0 - b2**p.step)
        p.tensor.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
        g.fill(0.0)
