"""Autodiff engine tests: finite-difference agreement, determinism, linearity.

The per-primitive finite-difference sweeps here use a reduced point count;
the acceptance suite runs the same builders at full depth.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from ellipsinv import autodiff as ad
from ellipsinv.autodiff import (
    AutodiffError,
    DomainError,
    DualComplex,
    GuardedDivisionError,
    Tape,
    Var,
    grad_check,
    primitive_check_cases,
    sweep_primitive,
)


@pytest.mark.parametrize("name", sorted(primitive_check_cases()))
def test_primitive_gradients_match_finite_differences(name):
    report = sweep_primitive(name, points=25)
    assert report.passed, report.failures[:3]
    assert report.max_rel_err < 1e-5


def test_complex_sqrt_decaying_gradient():
    # keep points away from the branch-flip boundary so the difference
    # quotient does not straddle the sign change
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 25:
        zr = rng.uniform(-2, 2, (3,))
        zi = rng.uniform(-2, 2, (3,))
        med = rng.uniform(0.5, 3.0, (3,)) + 1j * rng.uniform(0.0, 2.0, (3,))
        w = np.sqrt(zr + 1j * zi)
        test = (med * w).imag
        if np.any(np.abs(zr + 1j * zi) < 0.2) or np.any(np.abs(test) < 1e-2):
            continue

        def build(t, a, b):
            m = DualComplex(t.const(med.real), t.const(med.imag))
            out = ad.complex_sqrt_decaying(DualComplex(a, b), m)
            wts = t.const(np.array([0.7, -1.1, 0.4]))
            return ad.reduce_sum(out.re * wts) + ad.reduce_sum(out.im * wts)

        report = grad_check(build, [zr, zi])
        assert report.passed, report.failures[:3]
        checked += 1


# ---------------------------------------------------------------------------
# trivial identities
# ---------------------------------------------------------------------------


def test_square_derivative_at_three():
    tape = Tape()
    x = tape.var(3.0)
    y = x * x
    tape.backward(y)
    assert float(x.grad) == 6.0


def test_reduce_mean_gradient_is_one_over_n():
    tape = Tape()
    x = tape.var(np.arange(8.0))
    tape.backward(ad.reduce_mean(x))
    assert np.all(x.grad == 1.0 / 8.0)


def test_complex_exp_of_zero_is_one():
    tape = Tape()
    z = DualComplex(tape.var(np.zeros(3)), tape.var(np.zeros(3)))
    out = ad.complex_exp(z)
    assert np.all(out.value_re == 1.0) and np.all(out.value_im == 0.0)


def test_complex_div_z_by_z_is_one():
    tape = Tape()
    z = DualComplex(tape.var(np.array([1.5, -0.3])), tape.var(np.array([0.7, 2.2])))
    out = ad.complex_div(z, z)
    assert np.allclose(out.value_re, 1.0, atol=1e-15)
    assert np.allclose(out.value_im, 0.0, atol=1e-15)


def test_grad_check_on_square_is_tight():
    report = grad_check(lambda t, x: x * x, [np.asarray(1.0)], step=1e-6)
    assert report.passed
    assert report.max_rel_err < 1e-8


# ---------------------------------------------------------------------------
# tape mechanics
# ---------------------------------------------------------------------------


def _messy_graph(tape: Tape, x: Var, y: Var) -> Var:
    s = x * y + ad.sin(x)
    return ad.reduce_mean(ad.exp(s * 0.3) + ad.atan(s) / 2.0)


def test_tape_replay_is_bit_identical():
    xv = np.linspace(-1.0, 2.0, 6)
    yv = np.linspace(0.5, 1.5, 6)
    results = []
    for _ in range(2):
        tape = Tape()
        x, y = tape.var(xv), tape.var(yv)
        loss = _messy_graph(tape, x, y)
        tape.backward(loss)
        results.append((loss.value.copy(), np.array(x.grad), np.array(y.grad)))
    assert np.array_equal(results[0][0], results[1][0])
    assert np.array_equal(results[0][1], results[1][1])
    assert np.array_equal(results[0][2], results[1][2])


def test_backward_is_linear_exactly_on_power_of_two_graph():
    # every backward factor in this graph is a power of two or a 0/1 mask,
    # so float scaling is exact and the linearity identity holds bitwise
    xv = np.linspace(-2.0, 3.0, 8)

    def f_part(tape, x):
        return ad.reduce_mean(ad.relu(x))

    def g_part(tape, x):
        return ad.reduce_mean(ad.relu(ad.relu(x) - 1.0))

    tape = Tape()
    x = tape.var(xv)
    tape.backward(f_part(tape, x))
    gf = np.array(x.grad)

    tape = Tape()
    x = tape.var(xv)
    tape.backward(g_part(tape, x))
    gg = np.array(x.grad)

    tape = Tape()
    x = tape.var(xv)
    tape.backward(f_part(tape, x) * 0.5 + g_part(tape, x) * 4.0)
    combined = np.array(x.grad)

    assert np.array_equal(combined, 0.5 * gf + 4.0 * gg)


def test_backward_linearity_on_general_graph():
    xv = np.linspace(0.2, 1.7, 5)

    def f_part(tape, x):
        return ad.reduce_mean(ad.exp(x * x))

    def g_part(tape, x):
        return ad.reduce_mean(ad.sin(x * x))

    tape = Tape()
    x = tape.var(xv)
    tape.backward(f_part(tape, x))
    gf = np.array(x.grad)
    tape = Tape()
    x = tape.var(xv)
    tape.backward(g_part(tape, x))
    gg = np.array(x.grad)
    tape = Tape()
    x = tape.var(xv)
    tape.backward(f_part(tape, x) * 0.5 + g_part(tape, x) * 2.0)
    combined = np.array(x.grad)
    assert np.allclose(combined, 0.5 * gf + 2.0 * gg, rtol=1e-12, atol=1e-15)


def test_backward_requires_scalar_and_same_tape():
    tape = Tape()
    x = tape.var(np.ones(3))
    with pytest.raises(AutodiffError):
        tape.backward(x)
    other = Tape()
    y = other.var(1.0)
    with pytest.raises(AutodiffError):
        x + y


def test_unused_leaf_has_zero_grad():
    tape = Tape()
    x = tape.var(2.0)
    y = tape.var(3.0)
    tape.backward(x * x)
    assert float(y.grad) == 0.0


def test_backward_grads_are_fresh_per_call():
    tape = Tape()
    x = tape.var(2.0)
    loss = x * x
    tape.backward(loss)
    first = float(x.grad)
    tape.backward(loss)
    assert float(x.grad) == first  # not accumulated to 2x


# ---------------------------------------------------------------------------
# domain guards
# ---------------------------------------------------------------------------


def test_domain_violations_raise_at_construction():
    tape = Tape()
    with pytest.raises(DomainError):
        ad.sqrt(tape.var(np.array([1.0, -0.1])))
    with pytest.raises(DomainError):
        tape.var(np.array([1.0])) / tape.var(np.array([0.0]))
    with pytest.raises(DomainError):
        ad.atan2(tape.var(np.array([0.0])), tape.var(np.array([0.0])))
    with pytest.raises(AutodiffError):
        ad.matmul(tape.var(np.ones((2, 3))), tape.var(np.ones((2, 3))))
    with pytest.raises(AutodiffError):
        ad.matmul(tape.var(np.ones((2, 3))), tape.var(np.ones(3)))
    with pytest.raises(AutodiffError):
        ad.affine_norm(tape.var(np.ones((2, 4))), tape.var(np.ones(3)), tape.var(np.zeros(4)))
    with pytest.raises(AutodiffError):
        ad.take_column(tape.var(np.ones((2, 3))), 3)
    with pytest.raises(AutodiffError):
        ad.take_column(tape.var(np.ones(4)), 0)


def test_guarded_complex_division():
    tape = Tape()
    a = DualComplex(tape.var(np.ones(2)), tape.var(np.ones(2)))
    tiny = DualComplex(tape.var(np.array([1.0, 1e-16])), tape.var(np.array([0.0, 0.0])))
    with pytest.raises(GuardedDivisionError):
        ad.complex_div(a, tiny)
    # masked variant substitutes a safe denominator on excluded lanes
    out = ad.complex_div_excluding(a, tiny, include=np.array([True, False]))
    assert np.isfinite(out.value_re).all() and np.isfinite(out.value_im).all()
    assert out.value_re[0] == 1.0 and out.value_im[0] == 1.0  # (1+i)/1
    # a mask that fails to exclude a guarded lane is an error
    with pytest.raises(GuardedDivisionError):
        ad.complex_div_excluding(a, tiny, include=np.array([True, True]))


def test_grad_check_reports_nonfinite_as_failure():
    with np.errstate(over="ignore"):
        report = grad_check(lambda t, x: ad.exp(x), [np.asarray(800.0)])
    assert not report.passed
    assert report.failures[0].rel_err == math.inf


def test_grad_check_flags_kink_disagreement():
    # centered difference across the relu kink reports 0.5 against the
    # subgradient 0; grad_check must flag it, not hide it
    report = grad_check(lambda t, x: ad.reduce_sum(ad.relu(x)), [np.asarray(0.0)], step=1e-6)
    assert not report.passed
    assert report.n_checked == 1
