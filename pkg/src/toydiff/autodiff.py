"""Dense float64 tensors with reverse-mode differentiation on an explicit tape.

Tensors are immutable values backed by numpy arrays. An operation records
itself onto a :class:`Tape` whenever at least one operand is attached to
one; operations on plain (constant) tensors just compute. Leaves are
created with ``tape.leaf(...)`` and gradients retrieved with
``tape.gradients(output)``, after which the tape is cleared and must not
be reused.

Every primitive validates operand shapes (only scalar-with-tensor and
matching-shape combinations are accepted; explicit ``broadcast_to`` covers
everything else) and checks its output for non-finite values.

The tape also keeps a running count of the elements saved for the
backward pass (``retained_count``). Each node counts exactly the arrays
its backward closure needs, without deduplication across nodes, which
makes the count an activation-memory analog: recording k unrolled solver
steps retains about k times the elements of a single step.
"""

from __future__ import annotations

import numbers

import numpy as np

from .errors import ConfigError, NumericError, ShapeError, StaleTapeError


def _check_finite(op, arr):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op}: produced a non-finite value")


class Tensor:
    """Immutable dense float64 value, optionally attached to a Tape."""

    __slots__ = ("data", "_tape", "_nid")

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64)  # copies: caller keeps ownership
        _check_finite("tensor", arr)
        arr.setflags(write=False)
        self.data = arr
        self._tape = None
        self._nid = -1

    @classmethod
    def _wrap(cls, arr, tape=None, nid=-1):
        # Internal fast path: takes ownership of a freshly computed array.
        t = cls.__new__(cls)
        if arr.flags.writeable:
            arr.setflags(write=False)
        t.data = arr
        t._tape = tape
        t._nid = nid
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def tolist(self):
        return self.data.tolist()

    def __repr__(self):
        tag = " (recorded)" if self._tape is not None else ""
        return f"Tensor(shape={self.shape}{tag}, data={self.data!r})"

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        return _elementwise("add", self, other)

    def __radd__(self, other):
        return _elementwise("add", other, self)

    def __sub__(self, other):
        return _elementwise("sub", self, other)

    def __rsub__(self, other):
        return _elementwise("sub", other, self)

    def __mul__(self, other):
        return _elementwise("mul", self, other)

    def __rmul__(self, other):
        return _elementwise("mul", other, self)

    def __truediv__(self, other):
        return _elementwise("div", self, other)

    def __rtruediv__(self, other):
        return _elementwise("div", other, self)

    def __neg__(self):
        return _scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def scale(self, c: float) -> "Tensor":
        """Multiply by a plain scalar constant."""
        return _scale(self, float(c))

    def tanh(self) -> "Tensor":
        tape = _tape_of(self)
        out = np.tanh(self.data)
        _check_finite("tanh", out)
        if tape is None:
            return Tensor._wrap(out)
        y = out

        def backward(g):
            return (g * (1.0 - y * y),)

        return _emit(tape, "tanh", (self,), out, backward, saved=(y,))

    def sum(self) -> "Tensor":
        tape = _tape_of(self)
        out = np.array(self.data.sum())
        _check_finite("sum", out)
        if tape is None:
            return Tensor._wrap(out)
        shape = self.shape

        def backward(g):
            return (np.broadcast_to(g, shape).copy(),)

        return _emit(tape, "sum", (self,), out, backward, saved=())

    def mean(self) -> "Tensor":
        tape = _tape_of(self)
        out = np.array(self.data.mean())
        _check_finite("mean", out)
        if tape is None:
            return Tensor._wrap(out)
        shape, n = self.shape, self.size

        def backward(g):
            return (np.broadcast_to(g / n, shape).copy(),)

        return _emit(tape, "mean", (self,), out, backward, saved=())

    def l1(self) -> "Tensor":
        """Sum of absolute values. Subgradient uses sign(0) = 0."""
        tape = _tape_of(self)
        out = np.array(np.abs(self.data).sum())
        _check_finite("l1", out)
        if tape is None:
            return Tensor._wrap(out)
        s = np.sign(self.data)

        def backward(g):
            return (g * s,)

        return _emit(tape, "l1", (self,), out, backward, saved=(s,))

    def l2(self) -> "Tensor":
        """Euclidean norm. Subgradient at the zero vector is zero."""
        tape = _tape_of(self)
        norm = float(np.sqrt((self.data * self.data).sum()))
        out = np.array(norm)
        _check_finite("l2", out)
        if tape is None:
            return Tensor._wrap(out)
        x = self.data

        def backward(g):
            if norm == 0.0:
                return (np.zeros_like(x),)
            return (g * (x / norm),)

        return _emit(tape, "l2", (self,), out, backward, saved=(x,))

    def dot(self, other: "Tensor") -> "Tensor":
        other = _as_tensor(other)
        if self.ndim != 1 or other.ndim != 1 or self.shape != other.shape:
            raise ShapeError(f"dot: {self.shape} vs {other.shape}")
        tape = _tape_of(self, other)
        out = np.array(self.data @ other.data)
        _check_finite("dot", out)
        if tape is None:
            return Tensor._wrap(out)
        need_a, need_b = _on_tape(self), _on_tape(other)
        bd = other.data if need_a else None
        ad = self.data if need_b else None

        def backward(g):
            ga = g * bd if need_a else None
            gb = g * ad if need_b else None
            return (ga, gb)

        saved = tuple(a for a in (bd, ad) if a is not None)
        return _emit(tape, "dot", (self, other), out, backward, saved=saved)

    def broadcast_to(self, shape) -> "Tensor":
        shape = tuple(int(s) for s in shape)
        try:
            view = np.broadcast_to(self.data, shape)
        except ValueError:
            raise ShapeError(f"broadcast: {self.shape} -> {shape}") from None
        tape = _tape_of(self)
        out = np.ascontiguousarray(view)
        if tape is None:
            return Tensor._wrap(out)
        src_shape = self.shape

        def backward(g):
            return (_unbroadcast(g, src_shape),)

        return _emit(tape, "broadcast", (self,), out, backward, saved=())

    @staticmethod
    def concat(parts, axis: int = 0) -> "Tensor":
        parts = [_as_tensor(p) for p in parts]
        if not parts:
            raise ShapeError("concat: empty input list")
        try:
            out = np.concatenate([p.data for p in parts], axis=axis)
        except ValueError as exc:
            raise ShapeError(
                f"concat: {[p.shape for p in parts]} along axis {axis}"
            ) from exc
        _check_finite("concat", out)
        tape = _tape_of(*parts)
        if tape is None:
            return Tensor._wrap(out)
        sizes = [p.shape[axis] for p in parts]
        offsets = np.cumsum([0] + sizes)

        def backward(g):
            sl = [slice(None)] * g.ndim
            grads = []
            for i in range(len(sizes)):
                sl[axis] = slice(offsets[i], offsets[i + 1])
                grads.append(np.ascontiguousarray(g[tuple(sl)]))
            return tuple(grads)

        return _emit(tape, "concat", tuple(parts), out, backward, saved=())


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    if isinstance(x, numbers.Number):
        return Tensor._wrap(np.array(float(x)))
    return Tensor(x)


def _on_tape(t):
    return isinstance(t, Tensor) and t._tape is not None


def _tape_of(*tensors):
    tape = None
    for t in tensors:
        if _on_tape(t):
            if tape is None:
                tape = t._tape
            elif tape is not t._tape:
                raise StaleTapeError("operands recorded on different tapes")
    return tape


def _unbroadcast(g, src_shape):
    """Sum a gradient back down to the shape it was broadcast from."""
    extra = g.ndim - len(src_shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(
        i for i, (gs, ss) in enumerate(zip(g.shape, src_shape)) if ss == 1 and gs != 1
    )
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return np.ascontiguousarray(g.reshape(src_shape))


def _emit(tape, name, inputs, out_arr, backward, saved):
    nid = tape._push(name, tuple(t._nid for t in inputs), backward, saved)
    return Tensor._wrap(out_arr, tape, nid)


def _binary_shapes(name, a, b):
    # Allowed: equal shapes, or one operand is a scalar (0-d).
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    raise ShapeError(f"{name}: {a.shape} vs {b.shape}")


def _scale(x: Tensor, c: float) -> Tensor:
    tape = _tape_of(x)
    out = x.data * c
    _check_finite("scale", out)
    if tape is None:
        return Tensor._wrap(out)

    def backward(g):
        return (g * c,)

    return _emit(tape, "scale", (x,), out, backward, saved=())


def _elementwise(name, a, b):
    # Plain-number operands become the cheap constant-scalar path.
    if isinstance(b, numbers.Number) and isinstance(a, Tensor):
        c = float(b)
        if name == "add":
            return _shift(a, c)
        if name == "sub":
            return _shift(a, -c)
        if name == "mul":
            return _scale(a, c)
        if name == "div":
            return _scale(a, 1.0 / c)
    if isinstance(a, numbers.Number) and isinstance(b, Tensor):
        c = float(a)
        if name == "add":
            return _shift(b, c)
        if name == "mul":
            return _scale(b, c)
        # c - x and c / x fall through to the generic path.
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(name, a, b)
    tape = _tape_of(a, b)
    if name == "add":
        out = a.data + b.data
    elif name == "sub":
        out = a.data - b.data
    elif name == "mul":
        out = a.data * b.data
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = a.data / b.data
    _check_finite(name, out)
    if tape is None:
        return Tensor._wrap(out)

    need_a, need_b = _on_tape(a), _on_tape(b)
    ash, bsh = a.shape, b.shape
    saved = ()
    if name in ("add", "sub"):

        def backward(g):
            ga = _unbroadcast(g, ash) if need_a else None
            if need_b:
                gb = _unbroadcast(g, bsh)
                if name == "sub":
                    gb = -gb
            else:
                gb = None
            return (ga, gb)

    elif name == "mul":
        bd = b.data if need_a else None
        ad = a.data if need_b else None
        saved = tuple(x for x in (bd, ad) if x is not None)

        def backward(g):
            ga = _unbroadcast(g * bd, ash) if need_a else None
            gb = _unbroadcast(g * ad, bsh) if need_b else None
            return (ga, gb)

    else:  # div: grad_a = g / b, grad_b = -g * a / b^2
        bd = b.data
        ad = a.data if need_b else None
        saved = (bd,) + ((ad,) if ad is not None else ())

        def backward(g):
            ga = _unbroadcast(g / bd, ash) if need_a else None
            gb = _unbroadcast(-g * ad / (bd * bd), bsh) if need_b else None
            return (ga, gb)

    return _emit(tape, name, (a, b), out, backward, saved=saved)


def matmul(a, b) -> Tensor:
    """Matrix product for rank-1/rank-2 operands with exact shape checks."""
    a, b = _as_tensor(a), _as_tensor(b)
    ok = (
        (a.ndim == 2 and b.ndim == 2 and a.shape[1] == b.shape[0])
        or (a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0])
        or (a.ndim == 1 and b.ndim == 2 and a.shape[0] == b.shape[0])
    )
    if not ok:
        raise ShapeError(f"matmul: {a.shape} vs {b.shape}")
    tape = _tape_of(a, b)
    out = a.data @ b.data
    _check_finite("matmul", out)
    if tape is None:
        return Tensor._wrap(out)

    need_a, need_b = _on_tape(a), _on_tape(b)
    bd = b.data if need_a else None
    ad = a.data if need_b else None
    an, bn = a.ndim, b.ndim

    def backward(g):
        ga = gb = None
        if need_a:
            if an == 2 and bn == 2:
                ga = g @ bd.T
            elif an == 2 and bn == 1:
                ga = np.outer(g, bd)
            else:  # (k,) @ (k,n)
                ga = bd @ g
        if need_b:
            if an == 2 and bn == 2:
                gb = ad.T @ g
            elif an == 2 and bn == 1:
                gb = ad.T @ g
            else:
                gb = np.outer(ad, g)
        return (ga, gb)

    saved = tuple(x for x in (bd, ad) if x is not None)
    return _emit(tape, "matmul", (a, b), out, backward, saved=saved)


def _shift(x: Tensor, c: float) -> Tensor:
    tape = _tape_of(x)
    out = x.data + c
    _check_finite("add", out)
    if tape is None:
        return Tensor._wrap(out)

    def backward(g):
        return (np.array(g, copy=True),)

    return _emit(tape, "add", (x,), out, backward, saved=())


class _Node:
    __slots__ = ("name", "inputs", "backward", "saved_elems")

    def __init__(self, name, inputs, backward, saved_elems):
        self.name = name
        self.inputs = inputs
        self.backward = backward
        self.saved_elems = saved_elems


class Tape:
    """Ordered record of primitive ops; single-use, confined to one thread.

    ``retained_count`` tracks the total number of array elements saved for
    the backward pass; it grows monotonically while recording and resets
    to zero when the tape is cleared. ``peak_retained`` keeps the maximum
    ever reached, surviving ``clear()`` for reporting.
    """

    def __init__(self):
        self._nodes = []
        self._leaves = []
        self.retained_count = 0
        self.peak_retained = 0
        self._closed = False

    def _push(self, name, input_ids, backward, saved):
        if self._closed:
            raise StaleTapeError("tape already cleared; tapes are single-use")
        elems = sum(int(s.size) for s in saved)
        self.retained_count += elems
        if self.retained_count > self.peak_retained:
            self.peak_retained = self.retained_count
        self._nodes.append(_Node(name, input_ids, backward, elems))
        return len(self._nodes) - 1

    def leaf(self, value) -> Tensor:
        """Attach a value to the tape as a differentiable leaf."""
        arr = value.data if isinstance(value, Tensor) else None
        if arr is None:
            arr = np.array(value, dtype=np.float64)
        _check_finite("leaf", arr)
        nid = self._push("leaf", (), None, ())
        t = Tensor._wrap(arr, self, nid)
        self._leaves.append(t)
        return t

    @property
    def leaves(self):
        return list(self._leaves)

    @property
    def num_ops(self) -> int:
        """Number of recorded primitives (leaves excluded)."""
        return sum(1 for n in self._nodes if n.name != "leaf")

    def gradients(self, output: Tensor, seed: Tensor | None = None) -> dict:
        """Reverse sweep; returns ``{leaf tensor: gradient tensor}``.

        Leaves not reachable from the output get zero gradients. The tape
        is cleared afterwards.
        """
        if self._closed:
            raise StaleTapeError("tape already cleared; tapes are single-use")
        if output._tape is not self:
            raise ConfigError("output was not recorded on this tape")
        if seed is None:
            seed_arr = np.ones(output.shape)
        else:
            seed_arr = seed.data if isinstance(seed, Tensor) else np.asarray(seed, float)
            if seed_arr.shape != output.shape:
                raise ShapeError(f"seed: {seed_arr.shape} vs output {output.shape}")
        grads = [None] * len(self._nodes)
        grads[output._nid] = np.array(seed_arr, dtype=np.float64)
        for nid in range(len(self._nodes) - 1, -1, -1):
            g = grads[nid]
            node = self._nodes[nid]
            if g is None or node.backward is None:
                continue
            for in_id, gin in zip(node.inputs, node.backward(g)):
                if gin is None:
                    continue
                if grads[in_id] is None:
                    grads[in_id] = gin
                else:
                    grads[in_id] = grads[in_id] + gin
        result = {}
        for t in self._leaves:
            g = grads[t._nid]
            result[t] = Tensor._wrap(g if g is not None else np.zeros(t.shape))
        self.clear()
        return result

    def clear(self):
        """Drop all nodes and saved intermediates; the tape becomes stale."""
        self._nodes = []
        self._leaves = []
        self.retained_count = 0
        self._closed = True


def record(fn, *inputs):
    """Run ``fn`` over fresh leaves of ``inputs`` on a new tape.

    Returns ``(output tensor, tape)``; the leaves are available as
    ``tape.leaves`` in argument order.
    """
    tape = Tape()
    leaves = [tape.leaf(x) for x in inputs]
    return fn(*leaves), tape


def backward(tape: Tape, output: Tensor, seed: Tensor | None = None) -> dict:
    """Gradients of ``output`` for every leaf of ``tape`` (then clears it)."""
    return tape.gradients(output, seed)


def grad_check(fn, point, step: float = 1e-5) -> float:
    """Max relative error between recorded gradients and central differences.

    ``fn`` maps a single tensor to a scalar tensor. The relative error at
    each coordinate is ``|analytic - central| / max(|analytic|, |central|,
    1e-12)``.
    """
    if step <= 0:
        raise ConfigError(f"grad_check: step must be positive, got {step}")
    point = _as_tensor(point)
    tape = Tape()
    leaf = tape.leaf(point)
    out = fn(leaf)
    if out.size != 1:
        raise ConfigError("grad_check: fn must be scalar-valued")
    _check_finite("grad_check", out.data)
    analytic = tape.gradients(out)[leaf].data.ravel()

    x = np.array(point.data, dtype=np.float64)
    flat = x.ravel()
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        xp = x.copy()
        xp.ravel()[i] = orig + step
        xm = x.copy()
        xm.ravel()[i] = orig - step
        fp = fn(Tensor._wrap(xp)).item()
        fm = fn(Tensor._wrap(xm)).item()
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError("grad_check: fn non-finite near the probe point")
        central = (fp - fm) / (2.0 * step)
        denom = max(abs(analytic[i]), abs(central), 1e-12)
        err = abs(analytic[i] - central) / denom
        if err > worst:
            worst = err
    return worst
