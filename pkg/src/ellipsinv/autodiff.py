"""Reverse-mode automatic differentiation on a flat tape of float64 arrays.

Scope is deliberately small: exactly the operation closure needed by the
inverse network and the complex-valued reconstruction objective.  Design
points that matter downstream:

* A ``Tape`` is an append-only list of nodes; inputs always reference
  earlier nodes, and ``backward`` walks the list once in exact reverse
  insertion order.  Same inputs give bit-identical primals and adjoints.
* All values are ``numpy`` float64 arrays (scalars are 0-d arrays).
  Elementwise ops broadcast; their backward un-broadcasts by summation.
* Complex quantities are pairs of real nodes (``DualComplex``), so complex
  arithmetic differentiates via real formulas only.  Division is guarded:
  a squared magnitude at or below ``EPS_DIV`` raises instead of clamping.
* Domain violations (sqrt of a negative, division by zero, shape
  mismatches) raise at construction time, never during backward.

A tape is single-threaded; run independent tapes on separate threads.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

EPS_DIV = 1e-30  # guard on squared magnitudes in complex division


class AutodiffError(ValueError):
    """Base class for tape construction failures."""


class DomainError(AutodiffError):
    """Operation applied outside its differentiable domain."""


class GuardedDivisionError(AutodiffError):
    """Complex division with |denominator|^2 <= EPS_DIV."""


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


class Tape:
    """Append-only computation graph with per-node adjoint storage."""

    def __init__(self):
        self.ops: list[str] = []
        self.inputs: list[tuple[int, ...]] = []
        self.values: list[np.ndarray] = []
        self.backwards: list = []  # callable(grad_out) -> tuple of input grads
        self.grads: list = []

    def __len__(self) -> int:
        return len(self.values)

    def _append(self, op: str, input_ids: tuple[int, ...], value: np.ndarray, backward) -> "Var":
        for i in input_ids:
            if not (0 <= i < len(self.values)):
                raise AutodiffError(f"op {op}: input id {i} not on tape")
        self.ops.append(op)
        self.inputs.append(input_ids)
        self.values.append(value)
        self.backwards.append(backward)
        return Var(self, len(self.values) - 1)

    def var(self, value) -> "Var":
        """Create a leaf node (parameter or input)."""
        return self._append("leaf", (), _as_array(value), None)

    def const(self, value) -> "Var":
        """Create a leaf node intended as a non-trained constant."""
        return self._append("const", (), _as_array(value), None)

    def backward(self, loss: "Var", seed: float = 1.0) -> None:
        """Populate adjoints of every node reachable from ``loss``.

        Fresh adjoint storage per call; visits nodes in strict reverse
        insertion order.
        """
        if loss.tape is not self:
            raise AutodiffError("loss lives on a different tape")
        if loss.value.shape != ():
            raise AutodiffError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        self.grads = [None] * len(self.values)
        self.grads[loss.node_id] = _as_array(seed)
        for nid in range(loss.node_id, -1, -1):
            g = self.grads[nid]
            if g is None or self.backwards[nid] is None:
                continue
            input_grads = self.backwards[nid](g)
            for iid, ig in zip(self.inputs[nid], input_grads):
                if ig is None:
                    continue
                if self.grads[iid] is None:
                    self.grads[iid] = ig.copy() if isinstance(ig, np.ndarray) else _as_array(ig)
                else:
                    self.grads[iid] = self.grads[iid] + ig


@dataclass(frozen=True)
class Var:
    """Handle to one tape node."""

    tape: Tape
    node_id: int

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.node_id]

    @property
    def grad(self):
        g = self.tape.grads[self.node_id] if self.tape.grads else None
        return np.zeros_like(self.value) if g is None else np.broadcast_to(g, self.value.shape)

    @property
    def shape(self):
        return self.value.shape

    def _lift(self, other) -> "Var":
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise AutodiffError("operands live on different tapes")
            return other
        return self.tape.const(other)

    def __add__(self, other):
        return add(self, self._lift(other))

    def __radd__(self, other):
        return add(self._lift(other), self)

    def __sub__(self, other):
        return sub(self, self._lift(other))

    def __rsub__(self, other):
        return sub(self._lift(other), self)

    def __mul__(self, other):
        return mul(self, self._lift(other))

    def __rmul__(self, other):
        return mul(self._lift(other), self)

    def __truediv__(self, other):
        return div(self, self._lift(other))

    def __rtruediv__(self, other):
        return div(self._lift(other), self)

    def __neg__(self):
        return neg(self)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _same_tape(*vs: Var) -> Tape:
    tape = vs[0].tape
    for v in vs[1:]:
        if v.tape is not tape:
            raise AutodiffError("operands live on different tapes")
    return tape


# ---------------------------------------------------------------------------
# elementwise primitives
# ---------------------------------------------------------------------------


def add(a: Var, b: Var) -> Var:
    tape = _same_tape(a, b)
    av, bv = a.value, b.value

    def bwd(g):
        return _unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)

    return tape._append("add", (a.node_id, b.node_id), av + bv, bwd)


def sub(a: Var, b: Var) -> Var:
    tape = _same_tape(a, b)
    av, bv = a.value, b.value

    def bwd(g):
        return _unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)

    return tape._append("sub", (a.node_id, b.node_id), av - bv, bwd)


def mul(a: Var, b: Var) -> Var:
    tape = _same_tape(a, b)
    av, bv = a.value, b.value

    def bwd(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return tape._append("mul", (a.node_id, b.node_id), av * bv, bwd)


def div(a: Var, b: Var) -> Var:
    tape = _same_tape(a, b)
    av, bv = a.value, b.value
    if np.any(bv == 0.0):
        raise DomainError("division by zero")
    out = av / bv

    def bwd(g):
        return _unbroadcast(g / bv, av.shape), _unbroadcast(-g * av / (bv * bv), bv.shape)

    return tape._append("div", (a.node_id, b.node_id), out, bwd)


def neg(a: Var) -> Var:
    def bwd(g):
        return (-g,)

    return a.tape._append("neg", (a.node_id,), -a.value, bwd)


def exp(a: Var) -> Var:
    out = np.exp(a.value)

    def bwd(g):
        return (g * out,)

    return a.tape._append("exp", (a.node_id,), out, bwd)


def sqrt(a: Var) -> Var:
    if np.any(a.value < 0.0):
        raise DomainError("sqrt of a negative value")
    out = np.sqrt(a.value)

    def bwd(g):
        return (g * 0.5 / out,)

    return a.tape._append("sqrt", (a.node_id,), out, bwd)


def sin(a: Var) -> Var:
    av = a.value

    def bwd(g):
        return (g * np.cos(av),)

    return a.tape._append("sin", (a.node_id,), np.sin(av), bwd)


def cos(a: Var) -> Var:
    av = a.value

    def bwd(g):
        return (g * -np.sin(av),)

    return a.tape._append("cos", (a.node_id,), np.cos(av), bwd)


def atan(a: Var) -> Var:
    av = a.value

    def bwd(g):
        return (g / (1.0 + av * av),)

    return a.tape._append("atan", (a.node_id,), np.arctan(av), bwd)


def atan2(y: Var, x: Var) -> Var:
    tape = _same_tape(y, x)
    yv, xv = y.value, x.value
    den = xv * xv + yv * yv
    if np.any(den == 0.0):
        raise DomainError("atan2 at the origin")

    def bwd(g):
        return _unbroadcast(g * xv / den, yv.shape), _unbroadcast(-g * yv / den, xv.shape)

    return tape._append("atan2", (y.node_id, x.node_id), np.arctan2(yv, xv), bwd)


def relu(a: Var) -> Var:
    mask = a.value > 0.0  # subgradient 0 at the kink

    def bwd(g):
        return (g * mask,)

    return a.tape._append("relu", (a.node_id,), a.value * mask, bwd)


def smooth_pos(a: Var) -> Var:
    """Smooth positivity map: identity for x >= 1, exp(x - 1) below.

    C^1 at the joint (value 1, slope 1) and strictly positive everywhere;
    used to keep predicted thicknesses out of the unphysical range.
    """
    av = a.value
    mask = av >= 1.0
    low = np.exp(np.minimum(av, 1.0) - 1.0)
    out = np.where(mask, av, low)

    def bwd(g):
        return (g * np.where(mask, 1.0, low),)

    return a.tape._append("smooth_pos", (a.node_id,), out, bwd)


def where_mask(mask: np.ndarray, a: Var, b: Var) -> Var:
    """Elementwise select by a constant boolean mask (mask is not a node)."""
    tape = _same_tape(a, b)
    m = np.asarray(mask, dtype=bool)
    av, bv = a.value, b.value
    out = np.where(m, av, bv)

    def bwd(g):
        return (
            _unbroadcast(np.where(m, g, 0.0), av.shape),
            _unbroadcast(np.where(m, 0.0, g), bv.shape),
        )

    return tape._append("where", (a.node_id, b.node_id), out, bwd)


# ---------------------------------------------------------------------------
# structural and reduction primitives
# ---------------------------------------------------------------------------


def reshape(a: Var, shape: tuple) -> Var:
    old = a.value.shape
    out = a.value.reshape(shape)

    def bwd(g):
        return (g.reshape(old),)

    return a.tape._append("reshape", (a.node_id,), out, bwd)


def take_column(a: Var, index: int) -> Var:
    """Select one column of a 2D array: (B, k) -> (B,)."""
    av = a.value
    if av.ndim != 2:
        raise AutodiffError(f"take_column needs a 2D array, got shape {av.shape}")
    if not 0 <= index < av.shape[1]:
        raise AutodiffError(f"column {index} out of range for shape {av.shape}")
    out = av[:, index].copy()

    def bwd(g):
        full = np.zeros_like(av)
        full[:, index] = g
        return (full,)

    return a.tape._append("take_column", (a.node_id,), out, bwd)


def swap_last2(a: Var) -> Var:
    if a.value.ndim < 2:
        raise AutodiffError(f"swap_last2 needs ndim >= 2, got {a.value.ndim}")
    out = np.swapaxes(a.value, -1, -2).copy()

    def bwd(g):
        return (np.swapaxes(g, -1, -2),)

    return a.tape._append("swap_last2", (a.node_id,), out, bwd)


def concat_last(parts: list[Var]) -> Var:
    """Concatenate along the last axis."""
    if not parts:
        raise AutodiffError("concat_last of nothing")
    tape = _same_tape(*parts)
    vals = [p.value for p in parts]
    lead = vals[0].shape[:-1]
    if any(v.shape[:-1] != lead for v in vals):
        raise AutodiffError(f"concat_last leading shapes differ: {[v.shape for v in vals]}")
    widths = [v.shape[-1] for v in vals]
    out = np.concatenate(vals, axis=-1)

    def bwd(g):
        grads = []
        start = 0
        for w in widths:
            grads.append(np.ascontiguousarray(g[..., start:start + w]))
            start += w
        return tuple(grads)

    return tape._append("concat_last", tuple(p.node_id for p in parts), out, bwd)


def matmul(a: Var, b: Var) -> Var:
    """Matrix product, (m,k)@(k,n) or batched (B,m,k)@(B,k,n)."""
    tape = _same_tape(a, b)
    av, bv = a.value, b.value
    if av.ndim == 2 and bv.ndim == 2:
        if av.shape[1] != bv.shape[0]:
            raise AutodiffError(f"matmul shape mismatch {av.shape} @ {bv.shape}")
    elif av.ndim == 3 and bv.ndim == 3:
        if av.shape[0] != bv.shape[0] or av.shape[2] != bv.shape[1]:
            raise AutodiffError(f"matmul shape mismatch {av.shape} @ {bv.shape}")
    else:
        raise AutodiffError(f"matmul supports 2D@2D or 3D@3D, got {av.ndim}D @ {bv.ndim}D")
    # einsum's sum-of-products loop accumulates each output element in a
    # fixed order regardless of the other dimensions; BLAS '@' dispatches
    # different kernels per shape, so row i of a batch would not be
    # bit-identical to the same row pushed through alone.
    spec = "ij,jk->ik" if av.ndim == 2 else "bij,bjk->bik"
    out = np.einsum(spec, av, bv, optimize=False)

    def bwd(g):
        return g @ np.swapaxes(bv, -1, -2), np.swapaxes(av, -1, -2) @ g

    return tape._append("matmul", (a.node_id, b.node_id), out, bwd)


def reduce_sum(a: Var) -> Var:
    shape = a.value.shape

    def bwd(g):
        return (np.broadcast_to(g, shape).astype(np.float64),)

    return a.tape._append("reduce_sum", (a.node_id,), np.asarray(a.value.sum()), bwd)


def reduce_mean(a: Var) -> Var:
    shape = a.value.shape
    n = a.value.size
    if n == 0:
        raise DomainError("reduce_mean of an empty array")

    def bwd(g):
        return (np.broadcast_to(g / n, shape).astype(np.float64),)

    return a.tape._append("reduce_mean", (a.node_id,), np.asarray(a.value.mean()), bwd)


def softmax_rowwise(a: Var) -> Var:
    """Softmax along the last axis, max-shifted for stability."""
    av = a.value
    shifted = av - av.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return a.tape._append("softmax_rowwise", (a.node_id,), out, bwd)


def affine_norm(x: Var, gamma: Var, beta: Var, eps: float = 1e-5) -> Var:
    """Per-sample feature normalization with learned scale and shift.

    Statistics are taken along the last axis of each sample independently
    (no batch statistics), so inference stays pure per sample.
    """
    tape = _same_tape(x, gamma, beta)
    xv = x.value
    if xv.ndim < 1 or gamma.value.shape != xv.shape[-1:] or beta.value.shape != xv.shape[-1:]:
        raise AutodiffError(
            f"affine_norm shapes: x {xv.shape}, gamma {gamma.value.shape}, beta {beta.value.shape}"
        )
    h = xv.shape[-1]
    mu = xv.mean(axis=-1, keepdims=True)
    xc = xv - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.value * xhat + beta.value

    def bwd(g):
        gxhat = g * gamma.value
        dvar = (gxhat * xc).sum(axis=-1, keepdims=True) * (-0.5) * inv**3
        dmu = (-gxhat * inv).sum(axis=-1, keepdims=True) + dvar * (-2.0 * xc.mean(axis=-1, keepdims=True))
        dx = gxhat * inv + dvar * 2.0 * xc / h + dmu / h
        dgamma = _unbroadcast(g * xhat, gamma.value.shape)
        dbeta = _unbroadcast(g, beta.value.shape)
        return dx, dgamma, dbeta

    return tape._append("affine_norm", (x.node_id, gamma.node_id, beta.node_id), out, bwd)


# ---------------------------------------------------------------------------
# complex arithmetic as (re, im) node pairs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DualComplex:
    re: Var
    im: Var

    @property
    def value(self) -> np.ndarray:
        return self.value_re + 1j * self.value_im

    @property
    def value_re(self) -> np.ndarray:
        return self.re.value

    @property
    def value_im(self) -> np.ndarray:
        return self.im.value


def complex_const(tape: Tape, z) -> DualComplex:
    z = np.asarray(z, dtype=np.complex128)
    return DualComplex(tape.const(z.real.copy()), tape.const(z.imag.copy()))


def complex_mul(a: DualComplex, b: DualComplex) -> DualComplex:
    return DualComplex(a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re)


def _den_squared(b: DualComplex) -> Var:
    return b.re * b.re + b.im * b.im


def complex_div(a: DualComplex, b: DualComplex) -> DualComplex:
    den = _den_squared(b)
    if np.any(den.value <= EPS_DIV):
        raise GuardedDivisionError(f"complex division with |denominator|^2 <= {EPS_DIV}")
    return DualComplex((a.re * b.re + a.im * b.im) / den, (a.im * b.re - a.re * b.im) / den)


def complex_div_excluding(a: DualComplex, b: DualComplex, include: np.ndarray) -> DualComplex:
    """Division that substitutes 1 for excluded denominators instead of raising.

    ``include`` must be False wherever the guard would trip; the caller is
    responsible for dropping excluded entries from any reduction.
    """
    include = np.asarray(include, dtype=bool)
    if np.any((_den_squared_value(b) <= EPS_DIV) & include):
        raise GuardedDivisionError("excluded-division mask does not cover all guarded entries")
    tape = b.re.tape
    one = tape.const(np.ones_like(b.re.value))
    zero = tape.const(np.zeros_like(b.re.value))
    safe_b = DualComplex(where_mask(include, b.re, one), where_mask(include, b.im, zero))
    den = _den_squared(safe_b)
    return DualComplex((a.re * safe_b.re + a.im * safe_b.im) / den, (a.im * safe_b.re - a.re * safe_b.im) / den)


def _den_squared_value(b: DualComplex) -> np.ndarray:
    return b.value_re * b.value_re + b.value_im * b.value_im


def complex_exp(z: DualComplex) -> DualComplex:
    m = exp(z.re)
    return DualComplex(m * cos(z.im), m * sin(z.im))


def complex_sqrt_decaying(z: DualComplex, medium: DualComplex) -> DualComplex:
    """Square root of z with the branch fixed by Im(medium * w) >= 0.

    Principal square root in polar form, then a sign flip wherever the
    primal value of Im(medium * w) is negative, matching the decaying-wave
    convention of the analytic forward model.  The flip mask is decided on
    primal values, so on the branch cut itself the principal-branch
    derivative applies.
    """
    r = sqrt(z.re * z.re + z.im * z.im)
    phi = atan2(z.im, z.re)
    s = sqrt(r)
    half = phi * 0.5
    w = DualComplex(s * cos(half), s * sin(half))
    test = medium.value_re * w.value_im + medium.value_im * w.value_re  # Im(medium * w)
    flip = test < 0.0
    w_re = where_mask(flip, -w.re, w.re)
    w_im = where_mask(flip, -w.im, w.im)
    return DualComplex(w_re, w_im)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GradCheckEntry:
    leaf: int
    index: tuple
    analytic: float
    numeric: float
    rel_err: float
    ok: bool


@dataclass
class GradCheckReport:
    max_rel_err: float
    n_checked: int
    failures: list[GradCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def grad_check(build, point: list, step: float = 1e-6, tol: float = 1e-5,
               atol: float = 1e-8) -> GradCheckReport:
    """Central-difference check of ``build`` at ``point``.

    ``build(tape, *leaves) -> scalar Var`` defines the function; ``point``
    holds one float64 array per leaf.  Each coordinate is perturbed by a
    magnitude-scaled step.  Non-finite analytic or numeric values are
    reported as failures rather than raised.

    The error is relative with an absolute floor: the denominator never
    drops below ``atol / tol``, so coordinates whose true gradient sits at
    or below the difference-quotient roundoff noise (about eps * |f| / h)
    are judged by ``|analytic - numeric| <= atol`` instead of a relative
    comparison the noise would dominate.
    """
    point = [_as_array(p) for p in point]
    tape = Tape()
    leaves = [tape.var(p) for p in point]
    loss = build(tape, *leaves)
    tape.backward(loss)
    analytic = [np.array(leaf.grad, dtype=np.float64) for leaf in leaves]

    def primal(pt) -> float:
        t = Tape()
        return float(build(t, *[t.var(p) for p in pt]).value)

    max_rel = 0.0
    n = 0
    failures = []
    for li, base in enumerate(point):
        flat = base.reshape(-1)
        for ci in range(flat.size):
            h = step * max(1.0, abs(flat[ci]))
            bumped = [p.copy() for p in point]
            bumped[li].reshape(-1)[ci] = flat[ci] + h
            f_hi = primal(bumped)
            bumped[li].reshape(-1)[ci] = flat[ci] - h
            f_lo = primal(bumped)
            fd = (f_hi - f_lo) / (2.0 * h)
            a = float(analytic[li].reshape(-1)[ci])
            idx = np.unravel_index(ci, base.shape) if base.shape else ()
            if not (math.isfinite(a) and math.isfinite(fd)):
                failures.append(GradCheckEntry(li, idx, a, fd, math.inf, False))
                n += 1
                continue
            rel = abs(a - fd) / max(abs(a), abs(fd), atol / tol)
            max_rel = max(max_rel, rel)
            ok = rel <= tol
            if not ok:
                failures.append(GradCheckEntry(li, idx, a, fd, rel, False))
            n += 1
    return GradCheckReport(max_rel_err=max_rel, n_checked=n, failures=failures)


# ---------------------------------------------------------------------------
# standard per-primitive check suite
# ---------------------------------------------------------------------------

def _weighted_scalar(tape: Tape, out: Var, seed: int) -> Var:
    """Scalarize with seed-fixed random weights so every adjoint is exercised.

    grad_check rebuilds the graph many times; the weights must be identical
    on every rebuild, hence a fresh generator from the same seed each call.
    """
    w = tape.const(np.random.default_rng(seed).uniform(-2.0, 2.0, size=out.value.shape))
    return reduce_sum(out * w)


# fixed medium for the decaying-sqrt case; its sampler rejects points near
# the branch flip so the difference quotient never straddles the sign change
_SQRT_MEDIUM = np.array([1.5 + 0.8j, 0.9 + 0.0j, 2.5 + 1.6j])

_EXCLUDE_MASK = np.array([True, False, True, True])


def _sample_sqrt_decaying(rng) -> list:
    while True:
        zr = rng.uniform(-2.0, 2.0, (3,))
        zi = rng.uniform(-2.0, 2.0, (3,))
        w = np.sqrt(zr + 1j * zi)
        test = (_SQRT_MEDIUM * w).imag
        if np.all(np.abs(zr + 1j * zi) >= 0.2) and np.all(np.abs(test) >= 1e-2):
            return [zr, zi]


def _build_sqrt_decaying(t: Tape, a: Var, b: Var, seed: int) -> Var:
    medium = DualComplex(t.const(_SQRT_MEDIUM.real), t.const(_SQRT_MEDIUM.imag))
    out = complex_sqrt_decaying(DualComplex(a, b), medium)
    return _weighted_scalar(t, out.re, seed) + _weighted_scalar(t, out.im, seed + 1)


def primitive_check_cases() -> dict:
    """One finite-difference case per primitive: name -> (sampler, builder).

    ``sampler(rng)`` draws leaf arrays inside the primitive's smooth domain;
    ``builder(tape, *leaves, seed)`` assembles a scalar from the primitive.
    """

    def pair(rng, lo=-2.0, hi=2.0, shape=(5,)):
        return [rng.uniform(lo, hi, shape), rng.uniform(lo, hi, shape)]

    def signed(rng, lo, hi, shape):
        return rng.uniform(lo, hi, shape) * rng.choice([-1.0, 1.0], shape)

    def complex_pair_builder(op):
        def build(t, ar, ai, br, bi, seed):
            out = op(DualComplex(ar, ai), DualComplex(br, bi))
            return _weighted_scalar(t, out.re, seed) + _weighted_scalar(t, out.im, seed + 1)

        return build

    cases = {
        "add": (lambda rng: pair(rng), lambda t, a, b, seed: _weighted_scalar(t, a + b, seed)),
        "sub": (lambda rng: pair(rng), lambda t, a, b, seed: _weighted_scalar(t, a - b, seed)),
        "mul": (lambda rng: pair(rng), lambda t, a, b, seed: _weighted_scalar(t, a * b, seed)),
        "div": (
            lambda rng: [rng.uniform(-2, 2, (5,)), signed(rng, 0.3, 2.0, (5,))],
            lambda t, a, b, seed: _weighted_scalar(t, a / b, seed),
        ),
        "neg": (lambda rng: [rng.uniform(-2, 2, (5,))], lambda t, a, seed: _weighted_scalar(t, -a, seed)),
        "exp": (lambda rng: [rng.uniform(-2, 2, (5,))], lambda t, a, seed: _weighted_scalar(t, exp(a), seed)),
        "sqrt": (lambda rng: [rng.uniform(0.1, 4.0, (5,))], lambda t, a, seed: _weighted_scalar(t, sqrt(a), seed)),
        "sin": (lambda rng: [rng.uniform(-3, 3, (5,))], lambda t, a, seed: _weighted_scalar(t, sin(a), seed)),
        "cos": (lambda rng: [rng.uniform(-3, 3, (5,))], lambda t, a, seed: _weighted_scalar(t, cos(a), seed)),
        "atan": (lambda rng: [rng.uniform(-3, 3, (5,))], lambda t, a, seed: _weighted_scalar(t, atan(a), seed)),
        "atan2": (
            lambda rng: [signed(rng, 0.3, 2.0, (5,)), signed(rng, 0.3, 2.0, (5,))],
            lambda t, y, x, seed: _weighted_scalar(t, atan2(y, x), seed),
        ),
        "relu": (
            lambda rng: [signed(rng, 0.05, 2.0, (6,))],
            lambda t, a, seed: _weighted_scalar(t, relu(a), seed),
        ),
        "smooth_pos": (
            lambda rng: [1.0 + signed(rng, 0.05, 2.0, (6,))],
            lambda t, a, seed: _weighted_scalar(t, smooth_pos(a), seed),
        ),
        "where_mask": (
            lambda rng: pair(rng, shape=(6,)),
            lambda t, a, b, seed: _weighted_scalar(t, where_mask(np.arange(6) % 2 == 0, a, b), seed),
        ),
        "reshape": (
            lambda rng: [rng.uniform(-2, 2, (6,))],
            lambda t, a, seed: _weighted_scalar(t, reshape(a, (2, 3)), seed),
        ),
        "swap_last2": (
            lambda rng: [rng.uniform(-2, 2, (2, 3))],
            lambda t, a, seed: _weighted_scalar(t, swap_last2(a), seed),
        ),
        "matmul2d": (
            lambda rng: [rng.uniform(-1, 1, (3, 4)), rng.uniform(-1, 1, (4, 2))],
            lambda t, a, b, seed: _weighted_scalar(t, matmul(a, b), seed),
        ),
        "matmul3d": (
            lambda rng: [rng.uniform(-1, 1, (2, 3, 4)), rng.uniform(-1, 1, (2, 4, 2))],
            lambda t, a, b, seed: _weighted_scalar(t, matmul(a, b), seed),
        ),
        "concat_last": (
            lambda rng: [rng.uniform(-2, 2, (3, 2)), rng.uniform(-2, 2, (3, 4))],
            lambda t, a, b, seed: _weighted_scalar(t, concat_last([a, b]), seed),
        ),
        "take_column": (
            lambda rng: [rng.uniform(-2, 2, (4, 3))],
            lambda t, a, seed: _weighted_scalar(t, take_column(a, 1), seed),
        ),
        "reduce_sum": (lambda rng: [rng.uniform(-2, 2, (7,))], lambda t, a, seed: reduce_sum(a)),
        "reduce_mean": (lambda rng: [rng.uniform(-2, 2, (7,))], lambda t, a, seed: reduce_mean(a)),
        "softmax_rowwise": (
            lambda rng: [rng.uniform(-3, 3, (3, 4))],
            lambda t, a, seed: _weighted_scalar(t, softmax_rowwise(a), seed),
        ),
        "affine_norm": (
            lambda rng: [rng.uniform(-2, 2, (3, 4)), rng.uniform(0.5, 1.5, (4,)), rng.uniform(-0.5, 0.5, (4,))],
            lambda t, x, g, b, seed: _weighted_scalar(t, affine_norm(x, g, b), seed),
        ),
        "complex_mul": (
            lambda rng: [rng.uniform(-2, 2, (4,)) for _ in range(4)],
            complex_pair_builder(complex_mul),
        ),
        "complex_div": (
            lambda rng: [
                rng.uniform(-2, 2, (4,)),
                rng.uniform(-2, 2, (4,)),
                signed(rng, 0.4, 2.0, (4,)),
                signed(rng, 0.4, 2.0, (4,)),
            ],
            complex_pair_builder(complex_div),
        ),
        "complex_div_excluding": (
            lambda rng: [
                rng.uniform(-2, 2, (4,)),
                rng.uniform(-2, 2, (4,)),
                signed(rng, 0.4, 2.0, (4,)),
                signed(rng, 0.4, 2.0, (4,)),
            ],
            complex_pair_builder(lambda a, b: complex_div_excluding(a, b, _EXCLUDE_MASK)),
        ),
        "complex_exp": (
            lambda rng: [rng.uniform(-1.5, 1.5, (4,)), rng.uniform(-3, 3, (4,))],
            lambda t, zr, zi, seed: _weighted_scalar(t, complex_exp(DualComplex(zr, zi)).re, seed)
            + _weighted_scalar(t, complex_exp(DualComplex(zr, zi)).im, seed + 1),
        ),
        "complex_sqrt_decaying": (_sample_sqrt_decaying, _build_sqrt_decaying),
    }
    return cases


def sweep_primitive(name: str, points: int, seed: int = 0, step: float = 1e-6, tol: float = 1e-5) -> GradCheckReport:
    """Run one primitive's finite-difference case at ``points`` random points.

    Returns a single merged report; a failure at any point appears in
    ``failures`` and flips ``passed``.
    """
    sampler, builder = primitive_check_cases()[name]
    rng = np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))
    max_rel = 0.0
    n = 0
    failures: list[GradCheckEntry] = []
    for _ in range(points):
        leaves = sampler(rng)
        seed_i = int(rng.integers(1 << 31))
        report = grad_check(lambda t, *vs: builder(t, *vs, seed_i), leaves, step=step, tol=tol)
        max_rel = max(max_rel, report.max_rel_err)
        n += report.n_checked
        failures.extend(report.failures)
    return GradCheckReport(max_rel_err=max_rel, n_checked=n, failures=failures)
