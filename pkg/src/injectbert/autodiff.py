"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything downstream (tokenizer-aligned embeddings, the encoder, the
injection mechanisms, training) is composed from the operations in this
module. Tensors are 0-, 1- or 2-dimensional and always float64 so that
finite-difference gradient checks are meaningful. The only broadcasts
supported are bias-style row addition and row-wise vector scaling; keeping
the broadcast zoo this small keeps every gradient rule short enough to
audit by hand.

Graphs are built implicitly: each op records its inputs and a closure that
propagates the output gradient to them. Node creation order doubles as a
topological order (an op's output is always created after its inputs), so
``backward`` just replays reachable nodes in descending creation order.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ShapeError

Array = np.ndarray

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """A dense float64 array plus the bookkeeping for reverse-mode autodiff.

    Tensors are immutable after forward construction except for ``grad``,
    which is written only by ``backward`` (and cleared by ``zero_grad``).
    ``requires_grad`` marks trainable leaves; derived nodes inherit it from
    their inputs, and nodes with no differentiable ancestry carry no graph
    links at all, so inference-only forwards stay lightweight.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_inputs", "_rule", "_nid")

    _ids = itertools.count()

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeError(f"tensors are at most 2-d, got shape {arr.shape}")
        self.data: Array = arr
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._inputs: tuple[Tensor, ...] = ()
        self._rule: Callable[[Array], None] | None = None
        self._nid = next(Tensor._ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"


def _node(data: Array, inputs: tuple[Tensor, ...], rule: Callable[[Array], None]) -> Tensor:
    out = Tensor(data)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._inputs = inputs
        out._rule = rule
    return out


def _accum(t: Tensor, g: Array) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _check_2d(op: str, t: Tensor) -> None:
    if t.data.ndim != 2:
        raise ShapeError(f"{op}: expected a 2-d tensor, got shape {t.shape}")


@dataclass
class ComputationGraph:
    """Op records reachable from one output, in topological order.

    ``nodes`` is sorted by creation id; since every op's inputs exist before
    its output, ascending creation order is a valid topological order and the
    graph is acyclic by construction.
    """

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def trace(cls, output: Tensor) -> "ComputationGraph":
        seen: set[int] = set()
        stack = [output]
        found: list[Tensor] = []
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            found.append(t)
            stack.extend(t._inputs)
        found.sort(key=lambda t: t._nid)
        return cls(found)


def backward(loss: Tensor) -> ComputationGraph:
    """Populate ``grad`` on every tensor reachable from a scalar loss.

    Gradients of all reachable tensors are reset to zero first, so each call
    stands alone: there is no silent accumulation across batches. Tensors in
    the graph that do not influence the loss keep that zero. Returns the
    traced graph (mainly for introspection in tests).
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    graph = ComputationGraph.trace(loss)
    for t in graph.nodes:
        if t.requires_grad:
            t.grad = np.zeros_like(t.data)
    if not loss.requires_grad:
        return graph
    loss.grad = np.ones_like(loss.data)
    for t in reversed(graph.nodes):
        if t._rule is not None:
            t._rule(t.grad)
    return graph


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Standard 2-d matrix product."""
    _check_2d("matmul", a)
    _check_2d("matmul", b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def rule(g: Array) -> None:
        if a.requires_grad:
            _accum(a, g @ bd.T)
        if b.requires_grad:
            _accum(b, ad.T @ g)

    return _node(ad @ bd, (a, b), rule)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also supports adding a vector to every row (bias add)."""
    ad, bd = a.data, b.data
    if ad.shape == bd.shape:

        def rule(g: Array) -> None:
            if a.requires_grad:
                _accum(a, g)
            if b.requires_grad:
                _accum(b, g)

        return _node(ad + bd, (a, b), rule)
    if ad.ndim == 2 and bd.ndim == 1 and ad.shape[1] == bd.shape[0]:

        def rule(g: Array) -> None:
            if a.requires_grad:
                _accum(a, g)
            if b.requires_grad:
                _accum(b, g.sum(axis=0))

        return _node(ad + bd, (a, b), rule)
    if ad.ndim == 1 and bd.ndim == 2 and bd.shape[1] == ad.shape[0]:
        return add(b, a)
    raise ShapeError(f"add: incompatible shapes {ad.shape} and {bd.shape}")


def add_n(terms: Sequence[Tensor]) -> Tensor:
    """Sum of same-shaped tensors as a single graph node."""
    if not terms:
        raise ShapeError("add_n: needs at least one term")
    shape = terms[0].shape
    for t in terms:
        if t.shape != shape:
            raise ShapeError(f"add_n: mixed shapes {shape} and {t.shape}")
    total = terms[0].data.copy()
    for t in terms[1:]:
        total += t.data

    def rule(g: Array) -> None:
        for t in terms:
            if t.requires_grad:
                _accum(t, g)

    return _node(total, tuple(terms), rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; a 1-d operand scales every row of a 2-d one."""
    ad, bd = a.data, b.data
    if ad.shape == bd.shape:

        def rule(g: Array) -> None:
            if a.requires_grad:
                _accum(a, g * bd)
            if b.requires_grad:
                _accum(b, g * ad)

        return _node(ad * bd, (a, b), rule)
    if ad.ndim == 2 and bd.ndim == 1 and ad.shape[1] == bd.shape[0]:

        def rule(g: Array) -> None:
            if a.requires_grad:
                _accum(a, g * bd)
            if b.requires_grad:
                _accum(b, (g * ad).sum(axis=0))

        return _node(ad * bd, (a, b), rule)
    if ad.ndim == 1 and bd.ndim == 2 and bd.shape[1] == ad.shape[0]:
        return mul(b, a)
    raise ShapeError(f"mul: incompatible shapes {ad.shape} and {bd.shape}")


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python constant."""
    c = float(c)

    def rule(g: Array) -> None:
        if a.requires_grad:
            _accum(a, g * c)

    return _node(a.data * c, (a,), rule)


def transpose(a: Tensor) -> Tensor:
    _check_2d("transpose", a)

    def rule(g: Array) -> None:
        if a.requires_grad:
            _accum(a, g.T)

    return _node(a.data.T.copy(), (a,), rule)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def rule(g: Array) -> None:
        if a.requires_grad:
            _accum(a, g * (1.0 - y * y))

    return _node(y, (a,), rule)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only through strictly interior entries."""
    ad = a.data
    inside = (ad > lo) & (ad < hi)

    def rule(g: Array) -> None:
        if a.requires_grad:
            _accum(a, g * inside)

    return _node(np.clip(ad, lo, hi), (a,), rule)


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit, exact erf form."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def rule(g: Array) -> None:
        if a.requires_grad:
            pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
            _accum(a, g * (cdf + x * pdf))

    return _node(x * cdf, (a,), rule)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax along one axis."""
    x = a.data
    if x.ndim == 0:
        raise ShapeError("softmax: needs at least one axis")
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def rule(g: Array) -> None:
        if a.requires_grad:
            inner = (g * y).sum(axis=axis, keepdims=True)
            _accum(a, y * (g - inner))

    return _node(y, (a,), rule)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float) -> Tensor:
    """Per-row normalization over the last axis, scaled and shifted."""
    if eps <= 0:
        raise ShapeError(f"layer_norm: eps must be positive, got {eps}")
    _check_2d("layer_norm", x)
    d = x.shape[1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: gamma/beta shapes {gamma.shape}/{beta.shape} do not match row width {d}"
        )
    xd = x.data
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data

    def rule(g: Array) -> None:
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=0))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=0))
        if x.requires_grad:
            dxhat = g * gd
            m1 = dxhat.mean(axis=1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
            _accum(x, inv * (dxhat - m1 - xhat * m2))

    return _node(xhat * gd + beta.data, (x, gamma, beta), rule)


def embedding_lookup(table: Tensor, ids: Array) -> Tensor:
    """Gather rows of ``table``; the gradient scatter-adds back into it."""
    _check_2d("embedding_lookup", table)
    idx = np.asarray(ids)
    if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError(f"embedding_lookup: ids must be a 1-d integer array, got {idx.dtype} {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding_lookup: id out of range [0, {table.shape[0]}) in {idx.tolist()}"
        )

    def rule(g: Array) -> None:
        if table.requires_grad:
            acc = np.zeros_like(table.data)
            np.add.at(acc, idx, g)
            _accum(table, acc)

    return _node(table.data[idx], (table,), rule)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    _check_2d("slice_rows", a)
    if not (0 <= start < stop <= a.shape[0]):
        raise ShapeError(f"slice_rows: [{start}:{stop}] out of bounds for shape {a.shape}")

    def rule(g: Array) -> None:
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            acc[start:stop] = g
            _accum(a, acc)

    return _node(a.data[start:stop].copy(), (a,), rule)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    _check_2d("slice_cols", a)
    if not (0 <= start < stop <= a.shape[1]):
        raise ShapeError(f"slice_cols: [{start}:{stop}] out of bounds for shape {a.shape}")

    def rule(g: Array) -> None:
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            acc[:, start:stop] = g
            _accum(a, acc)

    return _node(a.data[:, start:stop].copy(), (a,), rule)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-d tensors with equal row counts along columns."""
    if not parts:
        raise ShapeError("concat_cols: needs at least one part")
    rows = parts[0].shape[0]
    for p in parts:
        _check_2d("concat_cols", p)
        if p.shape[0] != rows:
            raise ShapeError(f"concat_cols: row counts differ: {rows} vs {p.shape[0]}")
    widths = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def rule(g: Array) -> None:
        for p, j0, j1 in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                _accum(p, g[:, j0:j1])

    return _node(np.concatenate([p.data for p in parts], axis=1), tuple(parts), rule)


def sum_all(a: Tensor) -> Tensor:
    """Sum every entry into a scalar."""

    def rule(g: Array) -> None:
        if a.requires_grad:
            _accum(a, np.full_like(a.data, float(g)))

    return _node(a.data.sum(), (a,), rule)


def cross_entropy_logits(logits: Tensor, labels: Array) -> Tensor:
    """Mean cross-entropy of softmax(logits) against integer labels.

    Fusing the softmax keeps the forward stable (log-sum-exp) and gives the
    closed-form gradient (probs - onehot) / batch.
    """
    _check_2d("cross_entropy_logits", logits)
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != logits.shape[0]:
        raise ShapeError(
            f"cross_entropy_logits: labels shape {y.shape} does not match logits {logits.shape}"
        )
    n, c = logits.shape
    if y.size and (y.min() < 0 or y.max() >= c):
        raise ShapeError(f"cross_entropy_logits: label out of range [0, {c})")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))
    loss = float((lse[:, 0] - z[np.arange(n), y]).mean())

    def rule(g: Array) -> None:
        if logits.requires_grad:
            probs = np.exp(z - lse)
            probs[np.arange(n), y] -= 1.0
            _accum(logits, float(g) * probs / n)

    return _node(np.float64(loss), (logits,), rule)


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; the generator is always passed in, never ambient."""
    if not 0.0 <= rate < 1.0:
        raise ShapeError(f"dropout: rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return a
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)

    def rule(g: Array) -> None:
        if a.requires_grad:
            _accum(a, g * mask)

    return _node(a.data * mask, (a,), rule)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment estimates for one parameter list."""

    m: list[Array]
    v: list[Array]
    step: int = 0

    @classmethod
    def init(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[Array],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError(
            f"adam_step: {len(params)} params, {len(grads)} grads, {len(state.m)} moment slots"
        )
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape or m.shape != p.data.shape:
            raise ShapeError(f"adam_step: shape mismatch {g.shape} vs {p.data.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ---------------------------------------------------------------------------
# verification helpers
# ---------------------------------------------------------------------------


GRAD_CHECK_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    """Per-entry comparison of analytic and central-difference gradients.

    ``max_error`` is the spec formula |a - n| / max(|a|, |n|, floor) over all
    entries. Entries where both |a| and |n| sit at or below the floor carry
    no measurable signal at float64: the finite-difference quotient there is
    quantized at ulp(loss) / (2 eps), which already exceeds tight tolerances,
    so they are additionally summarized as ``max_error_measurable`` (entries
    above the floor on at least one side) plus a sub-floor count. A missing
    or spurious gradient always surfaces above the floor on one side, so the
    measurable maximum hides no detectable defect.
    """

    max_error: float
    max_error_measurable: float
    subfloor_entries: int
    total_entries: int


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must rebuild its graph from the live parameter values on every
    call and be deterministic. Relative error per entry is
    |a - n| / max(|a|, |n|, 1e-8).
    """
    return grad_check_detailed(f, params, eps).max_error


def grad_check_detailed(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
) -> GradCheckReport:
    if eps <= 0:
        raise ShapeError(f"grad_check: eps must be positive, got {eps}")
    zero_grad(params)
    backward(f())
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    worst_measurable = 0.0
    subfloor = 0
    total = 0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            scale_ = max(abs(aflat[i]), abs(numeric), GRAD_CHECK_FLOOR)
            err = abs(aflat[i] - numeric) / scale_
            worst = max(worst, err)
            total += 1
            if max(abs(aflat[i]), abs(numeric)) > GRAD_CHECK_FLOOR:
                worst_measurable = max(worst_measurable, err)
            else:
                subfloor += 1
    return GradCheckReport(
        max_error=worst,
        max_error_measurable=worst_measurable,
        subfloor_entries=subfloor,
        total_entries=total,
    )


def truncated_normal(rng: np.random.Generator, shape: tuple[int, ...], std: float) -> Array:
    """Normal(0, std) with draws beyond two standard deviations redrawn."""
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2.0 * std
    while bad.any():
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2.0 * std
    return x
