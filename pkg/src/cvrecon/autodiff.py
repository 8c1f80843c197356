"""Define-by-run reverse-mode differentiation over the (re, im) real pair.

Every value on a :class:`Tape` is a :class:`ComplexTensor`.  Gradients of a
real scalar loss are stored in the same planar layout: the ``re`` slot holds
dL/d(re) and the ``im`` slot holds dL/d(im).  Non-holomorphic functions are
handled by giving each op its full 2x2 real Jacobian-transpose product.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ctensor import ComplexTensor, ShapeError, _check_conv, im2col

# backward(gre, gim) -> one (gre, gim) pair (or None) per input
Backward = Callable[[np.ndarray, np.ndarray], tuple]


class GradientError(ValueError):
    pass


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    backward: Backward | None = None
    name: str | None = None


@dataclass
class Tape:
    """Ordered record of a forward pass; node ids are positions in ``nodes``."""

    nodes: list[Node] = field(default_factory=list)
    values: list[ComplexTensor] = field(default_factory=list)

    def _push(self, node: Node, value: ComplexTensor) -> "Var":
        self.nodes.append(node)
        self.values.append(value)
        return Var(self, len(self.nodes) - 1)

    def leaf(self, value: ComplexTensor, name: str | None = None) -> "Var":
        """Trainable input; named leaves show up in the gradient set."""
        if not isinstance(value, ComplexTensor):
            value = ComplexTensor(value)
        return self._push(Node("leaf", (), None, name), value)

    def constant(self, value: ComplexTensor) -> "Var":
        if not isinstance(value, ComplexTensor):
            value = ComplexTensor(value)
        return self._push(Node("const", ()), value)

    def record(self, op: str, inputs, value: ComplexTensor, backward: Backward) -> "Var":
        ids = []
        for v in inputs:
            if v.tape is not self:
                raise ValueError(f"{op}: input belongs to a different tape")
            ids.append(v.id)
        return self._push(Node(op, tuple(ids), backward), value)

    def clear(self) -> None:
        """Drop recorded nodes and values.

        Backward closures reference Vars that point back at the tape, so a
        finished tape is a reference cycle holding large buffers; clearing it
        frees them without waiting for the cycle collector.
        """
        self.nodes.clear()
        self.values.clear()

    def leaves(self) -> dict[str, int]:
        return {n.name: i for i, n in enumerate(self.nodes) if n.op == "leaf" and n.name is not None}


class Var:
    __slots__ = ("tape", "id")

    def __init__(self, tape: Tape, id: int):
        self.tape = tape
        self.id = id

    @property
    def value(self) -> ComplexTensor:
        return self.tape.values[self.id]

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __repr__(self):
        return f"Var(id={self.id}, op={self.tape.nodes[self.id].op}, shape={self.shape})"


def backward(tape: Tape, loss: Var | int) -> dict[str, ComplexTensor]:
    """Gradient of a real scalar loss with respect to every named leaf.

    Leaves the loss does not depend on get an all-zero gradient.
    """
    loss_id = loss.id if isinstance(loss, Var) else int(loss)
    lv = tape.values[loss_id]
    if lv.size != 1:
        raise GradientError(f"loss must be a scalar, got shape {lv.shape}")
    if np.any(lv.im):
        raise GradientError("loss must be real-valued")

    grads: dict[int, list[np.ndarray]] = {loss_id: [np.ones(lv.shape), np.zeros(lv.shape)]}
    for i in range(loss_id, -1, -1):
        g = grads.get(i)
        node = tape.nodes[i]
        if g is None or node.backward is None:
            continue
        for j, gin in zip(node.inputs, node.backward(g[0], g[1])):
            if gin is None:
                continue
            acc = grads.get(j)
            if acc is None:
                grads[j] = [np.array(gin[0], dtype=np.float64), np.array(gin[1], dtype=np.float64)]
            else:
                acc[0] = acc[0] + gin[0]
                acc[1] = acc[1] + gin[1]

    out = {}
    for name, i in tape.leaves().items():
        g = grads.get(i)
        shape = tape.values[i].shape
        out[name] = ComplexTensor(np.zeros(shape)) if g is None else ComplexTensor(g[0].reshape(shape), g[1].reshape(shape))
    return out


def gradcheck(f, x, step: float = 1e-5, max_coords: int | None = None, seed: int = 0) -> float:
    """Worst relative error between backward() and central differences.

    ``f`` maps a Var (or a dict of named Vars when ``x`` is a dict of tensors)
    to a scalar Var.  Every real coordinate is perturbed unless ``max_coords``
    caps the number per tensor (sampled with ``seed``).
    """
    named = isinstance(x, dict)
    tensors = dict(x) if named else {"x": x}

    def evaluate(vals):
        tape = Tape()
        vars_ = {k: tape.leaf(v, name=k) for k, v in vals.items()}
        out = f(vars_ if named else vars_["x"])
        return tape, out

    tape, out = evaluate(tensors)
    analytic = backward(tape, out)
    tape.clear()

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, t in tensors.items():
        planes = (t.re, t.im)
        coords = [(p, j) for p in range(2) for j in range(t.size)]
        if max_coords is not None and len(coords) > max_coords:
            pick = rng.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[k] for k in sorted(pick)]
        for p, j in coords:
            fvals = []
            for sgn in (1.0, -1.0):
                re, im = t.re.copy(), t.im.copy()
                (re, im)[p].flat[j] += sgn * step
                trial = dict(tensors)
                trial[name] = ComplexTensor(re, im)
                t_, o = evaluate(trial)
                val = float(o.value.re.flat[0])
                t_.clear()
                if not np.isfinite(val):
                    raise GradientError(f"non-finite loss perturbing {name}[{'re' if p == 0 else 'im'}][{j}]")
                fvals.append(val)
            numeric = (fvals[0] - fvals[1]) / (2 * step)
            g = analytic[name]
            a = float((g.re, g.im)[p].flat[j])
            if not np.isfinite(a):
                raise GradientError(f"non-finite gradient at {name}[{'re' if p == 0 else 'im'}][{j}]")
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


# --- generic differentiable ops -------------------------------------------

def _pair(x):
    return (x.re, x.im)


def add(x: Var, y: Var) -> Var:
    if x.shape != y.shape:
        raise ShapeError(f"add: {x.shape} vs {y.shape}")
    a, b = x.value, y.value
    return x.tape.record("add", (x, y), ComplexTensor(a.re + b.re, a.im + b.im),
                         lambda gr, gi: ((gr, gi), (gr, gi)))


def sub(x: Var, y: Var) -> Var:
    if x.shape != y.shape:
        raise ShapeError(f"sub: {x.shape} vs {y.shape}")
    a, b = x.value, y.value
    return x.tape.record("sub", (x, y), ComplexTensor(a.re - b.re, a.im - b.im),
                         lambda gr, gi: ((gr, gi), (-gr, -gi)))


def scale(x: Var, c: float) -> Var:
    a = x.value
    return x.tape.record("scale", (x,), ComplexTensor(c * a.re, c * a.im),
                         lambda gr, gi: ((c * gr, c * gi),))


def cmul_const(x: Var, z: ComplexTensor) -> Var:
    """Elementwise product with a constant complex tensor."""
    a = x.value
    if a.shape != z.shape:
        raise ShapeError(f"cmul_const: {a.shape} vs {z.shape}")
    out = ComplexTensor(a.re * z.re - a.im * z.im, a.re * z.im + a.im * z.re)
    # adjoint of multiplication by z is multiplication by conj(z)
    return x.tape.record("cmul_const", (x,), out,
                         lambda gr, gi: ((gr * z.re + gi * z.im, gi * z.re - gr * z.im),))


def reshape(x: Var, shape) -> Var:
    old = x.shape
    return x.tape.record("reshape", (x,), x.value.reshape(shape),
                         lambda gr, gi: ((gr.reshape(old), gi.reshape(old)),))


def real_part(x: Var) -> Var:
    a = x.value
    return x.tape.record("real_part", (x,), ComplexTensor(a.re),
                         lambda gr, gi: ((gr, np.zeros_like(gi)),))


def sum_re(x: Var) -> Var:
    a = x.value
    return x.tape.record("sum_re", (x,), ComplexTensor([a.re.sum()]),
                         lambda gr, gi: ((np.full(a.shape, gr[0]), np.zeros(a.shape)),))


def sum_sq(x: Var) -> Var:
    """Squared l2 norm over the real pair."""
    a = x.value
    val = float(np.sum(a.re * a.re) + np.sum(a.im * a.im))
    return x.tape.record("sum_sq", (x,), ComplexTensor([val]),
                         lambda gr, gi: ((2 * gr[0] * a.re, 2 * gr[0] * a.im),))


def mean(xs: list[Var]) -> Var:
    """Mean of scalar Vars."""
    tape = xs[0].tape
    n = len(xs)
    val = sum(float(v.value.re[0]) for v in xs) / n
    return tape.record("mean", tuple(xs), ComplexTensor([val]),
                       lambda gr, gi: tuple((gr / n, np.zeros_like(gr)) for _ in range(n)))


def to_channels(x: Var) -> Var:
    """Complex [C, H, W] -> real [2C, H, W] (real planes first, then imaginary)."""
    a = x.value
    c = a.shape[0]
    out = ComplexTensor(np.concatenate([a.re, a.im], axis=0))
    return x.tape.record("to_channels", (x,), out, lambda gr, gi: ((gr[:c], gr[c:]),))


def from_channels(x: Var) -> Var:
    """Real [2C, H, W] -> complex [C, H, W]; inverse of :func:`to_channels`."""
    a = x.value
    if a.shape[0] % 2:
        raise ShapeError(f"from_channels needs an even channel count, got {a.shape[0]}", axis="channels")
    c = a.shape[0] // 2
    out = ComplexTensor(a.re[:c], a.re[c:])
    return x.tape.record("from_channels", (x,), out,
                         lambda gr, gi: ((np.concatenate([gr, gi], axis=0), np.zeros(a.shape)),))


def concat(xs: list[Var]) -> Var:
    """Concatenate along the channel axis."""
    vals = [v.value for v in xs]
    sizes = np.cumsum([v.shape[0] for v in vals])[:-1]
    out = ComplexTensor(np.concatenate([v.re for v in vals]), np.concatenate([v.im for v in vals]))

    def bwd(gr, gi):
        return tuple(zip(np.split(gr, sizes), np.split(gi, sizes)))

    return xs[0].tape.record("concat", tuple(xs), out, bwd)


def avg_pool2(x: Var) -> Var:
    a = x.value
    c, h, w = a.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even spatial dims, got {h}x{w}", axis="spatial")

    def pool(p):
        return p.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))

    def unpool(g):
        return np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) / 4.0

    return x.tape.record("avg_pool2", (x,), ComplexTensor(pool(a.re), pool(a.im)),
                         lambda gr, gi: ((unpool(gr), unpool(gi)),))


def upsample2(x: Var) -> Var:
    """Nearest-neighbour 2x upsampling."""
    a = x.value
    c, h, w = a.shape

    def up(p):
        return np.repeat(np.repeat(p, 2, axis=1), 2, axis=2)

    def down(g):
        return g.reshape(c, h, 2, w, 2).sum(axis=(2, 4))

    return x.tape.record("upsample2", (x,), ComplexTensor(up(a.re), up(a.im)),
                         lambda gr, gi: ((down(gr), down(gi)),))


def _flip_t(w: np.ndarray) -> np.ndarray:
    # weights for the input-gradient correlation: swap in/out, rotate 180 degrees
    return np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])


def _block(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Real block kernel [[X, -Y], [Y, X]] acting on stacked (re, im) channels."""
    return np.concatenate([np.concatenate([X, -Y], axis=1), np.concatenate([Y, X], axis=1)], axis=0)


def _correlate(x: np.ndarray, w: np.ndarray):
    """Same-padded real correlation; returns output [out, H*W] and the patch matrix."""
    cols = im2col(x, w.shape[-1])
    return w.reshape(w.shape[0], -1) @ cols, cols


def conv2d(x: Var, w: Var, bias: Var | None = None) -> Var:
    """Complex convolution of x [in, H, W] with weights W = X + iY [out, in, k, k].

    Evaluated as one real correlation of the stacked (re, im) planes with the
    block kernel [[X, -Y], [Y, X]].
    """
    a, W = x.value, w.value
    _check_conv(a.shape, W.shape, None if bias is None else bias.shape)
    out_ch, in_ch, k, _ = W.shape
    _, h, wd = a.shape
    Wb = _block(W.re, W.im)
    o, cols = _correlate(np.concatenate([a.re, a.im]), Wb)
    if bias is not None:
        o = o + np.concatenate([bias.value.re, bias.value.im])[:, None]
    out = ComplexTensor(o[:out_ch].reshape(out_ch, h, wd), o[out_ch:].reshape(out_ch, h, wd))

    def bwd(gr, gi):
        g = np.concatenate([gr, gi])
        gin, _ = _correlate(g, _flip_t(Wb))
        gin = gin.reshape(2 * in_ch, h, wd)
        g2 = g.reshape(2 * out_ch, -1)
        gW = (g2 @ cols.T).reshape(Wb.shape)
        gX = gW[:out_ch, :in_ch] + gW[out_ch:, in_ch:]
        gY = gW[out_ch:, :in_ch] - gW[:out_ch, in_ch:]
        grads = [(gin[:in_ch], gin[in_ch:]), (gX, gY)]
        if bias is not None:
            gb = g2.sum(axis=1)
            grads.append((gb[:out_ch], gb[out_ch:]))
        return tuple(grads)

    inputs = (x, w) if bias is None else (x, w, bias)
    return x.tape.record("conv2d", inputs, out, bwd)


def conv2d_real(x: Var, w: Var, bias: Var | None = None) -> Var:
    """Real convolution over the ``re`` planes; imaginary parts are ignored."""
    a, W = x.value, w.value
    _check_conv(a.shape, W.shape, None if bias is None else bias.shape)
    out_ch, in_ch, k, _ = W.shape
    _, h, wd = a.shape
    o, cols = _correlate(a.re, W.re)
    if bias is not None:
        o = o + bias.value.re[:, None]
    out = ComplexTensor(o.reshape(out_ch, h, wd))

    def bwd(gr, gi):
        gin, _ = _correlate(gr, _flip_t(W.re))
        g2 = gr.reshape(out_ch, -1)
        gX = (g2 @ cols.T).reshape(W.shape)
        grads = [(gin.reshape(a.shape), np.zeros(a.shape)), (gX, np.zeros(W.shape))]
        if bias is not None:
            grads.append((g2.sum(axis=1), np.zeros(out_ch)))
        return tuple(grads)

    inputs = (x, w) if bias is None else (x, w, bias)
    return x.tape.record("conv2d_real", inputs, out, bwd)
