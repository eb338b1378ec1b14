"""Training objectives: label fitting plus physics reconstruction.

The fitting loss compares normalized predictions against normalized labels.
The reconstruction loss rebuilds the complex reflectance ratio from the
predicted film parameters on the autodiff tape, mirroring the closed-form
forward model step for step, and compares it against the ratio implied by
the measured angles.  A prediction can therefore be rewarded for landing on
*any* film that reproduces the measurement, which is exactly the ambiguity
the fitting loss breaks: the two are combined, never substituted.

Conventions shared with the scalar forward model:

* N = n + ik, phase factor e^{-2i beta}.
* Transmission cosines use the principal square root flipped to keep
  Im(N cos) >= 0 (decaying waves in the lower medium).
* The ratio rho = r_pp / r_ss is guarded: samples whose |r_ss|^2 falls at
  or below the division floor are excluded from the batch mean and counted;
  a batch with more than ``max_excluded_fraction`` such samples errors out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DualComplex, Var
from .dataset import INPUT_COLUMNS, NormStats
from .optics import ExperimentConfig

# Incremented on every reconstruction-graph build; the ablation harness
# snapshots it to prove the no-reconstruction variant never pays for physics.
RECON_EVALS = 0


class LossError(ValueError):
    """Objective construction failure."""


class BatchExclusionError(LossError):
    """Too many samples hit the r_ss division guard in one batch."""


@dataclass(frozen=True)
class LossWeights:
    w_fit: float = 1.0
    w_recon: float = 1.0

    def __post_init__(self):
        if self.w_fit < 0 or self.w_recon < 0:
            raise LossError(f"loss weights must be >= 0, got ({self.w_fit}, {self.w_recon})")
        if self.w_fit + self.w_recon <= 0:
            raise LossError("at least one loss weight must be positive")


@dataclass(frozen=True)
class ReconKnown:
    """Per-sample measured quantities in physical units."""

    n3: np.ndarray
    k3: np.ndarray
    lambda_nm: np.ndarray
    psi_deg: np.ndarray
    delta_deg: np.ndarray

    def __post_init__(self):
        for name in ("n3", "k3", "lambda_nm", "psi_deg", "delta_deg"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, arr)
            if arr.ndim != 1 or arr.shape != self.n3.shape:
                raise LossError(f"{name} must be 1-D and match n3, got shape {arr.shape}")
        if self.n3.size == 0:
            raise LossError("empty batch")
        if np.any(self.lambda_nm <= 0):
            raise LossError("wavelengths must be positive")

    @property
    def n_samples(self) -> int:
        return self.n3.shape[0]


def known_from_raw_inputs(x_raw: np.ndarray) -> ReconKnown:
    """Raw (unnormalized) input matrix in dataset column order -> ReconKnown."""
    x_raw = np.asarray(x_raw, dtype=np.float64)
    if x_raw.ndim != 2 or x_raw.shape[1] != len(INPUT_COLUMNS):
        raise LossError(f"expected (N, {len(INPUT_COLUMNS)}) raw inputs, got {x_raw.shape}")
    col = {name: x_raw[:, i] for i, name in enumerate(INPUT_COLUMNS)}
    return ReconKnown(
        n3=col["n3"], k3=col["k3"], lambda_nm=col["lambda"],
        psi_deg=col["psi"], delta_deg=col["delta"],
    )


@dataclass(frozen=True)
class ReconInfo:
    n_samples: int
    n_excluded: int


def fit_loss(pred_norm: Var, target_norm: np.ndarray) -> Var:
    """Mean squared difference over all (batch, 3) normalized entries."""
    target = np.asarray(target_norm, dtype=np.float64)
    if pred_norm.shape != target.shape:
        raise LossError(f"prediction shape {pred_norm.shape} != target shape {target.shape}")
    diff = pred_norm - pred_norm.tape.const(target)
    return ad.reduce_mean(diff * diff)


# -- complex helpers on Var pairs -------------------------------------------


def _c_add(a: DualComplex, b: DualComplex) -> DualComplex:
    return DualComplex(a.re + b.re, a.im + b.im)


def _c_sub(a: DualComplex, b: DualComplex) -> DualComplex:
    return DualComplex(a.re - b.re, a.im - b.im)


def _snell_cos(n_in: DualComplex, n_out: DualComplex, sin_in_sq: float) -> DualComplex:
    ratio = ad.complex_div(n_in, n_out)
    ratio_sq = ad.complex_mul(ratio, ratio)
    arg = DualComplex(1.0 - ratio_sq.re * sin_in_sq, -(ratio_sq.im * sin_in_sq))
    return ad.complex_sqrt_decaying(arg, n_out)


def _fresnel_rp(n_up, n_down, cos_up, cos_down) -> DualComplex:
    a, b = ad.complex_mul(n_down, cos_up), ad.complex_mul(n_up, cos_down)
    return ad.complex_div(_c_sub(a, b), _c_add(a, b))


def _fresnel_rs(n_up, n_down, cos_up, cos_down) -> DualComplex:
    a, b = ad.complex_mul(n_up, cos_up), ad.complex_mul(n_down, cos_down)
    return ad.complex_div(_c_sub(a, b), _c_add(a, b))


def _stack_r(r_top: DualComplex, r_bottom: DualComplex, phase: DualComplex) -> DualComplex:
    one = ad.complex_const(r_top.re.tape, 1.0)
    num = _c_add(r_top, ad.complex_mul(r_bottom, phase))
    den = _c_add(one, ad.complex_mul(ad.complex_mul(r_top, r_bottom), phase))
    return ad.complex_div(num, den)


def predicted_rho(
    pred_norm: Var,
    known: ReconKnown,
    stats: NormStats,
    cfg: ExperimentConfig,
) -> tuple[DualComplex, np.ndarray]:
    """Reflectance ratio of the predicted films; (rho, include mask).

    Predictions are denormalized on the tape (affine, so gradients flow),
    the thickness is smoothly rectified (identity at or above 1 nm), and the
    final division is masked rather than raised so one degenerate sample
    cannot poison a batch.
    """
    b = known.n_samples
    if pred_norm.shape != (b, 3):
        raise LossError(f"expected ({b}, 3) normalized predictions, got {pred_norm.shape}")
    tape = pred_norm.tape
    t_mean, t_std = stats.target_mean, stats.target_std

    n2 = ad.take_column(pred_norm, 0) * t_std[0] + t_mean[0]
    k2 = ad.take_column(pred_norm, 1) * t_std[1] + t_mean[1]
    d_nm = ad.smooth_pos(ad.take_column(pred_norm, 2) * t_std[2] + t_mean[2])

    cos1 = cfg.cos_incidence.real
    sin1_sq = 1.0 - cos1 * cos1
    amb = cfg.ambient_index

    n1c = ad.complex_const(tape, np.full(b, amb))
    cos1c = ad.complex_const(tape, np.full(b, complex(cos1, 0.0)))
    n2c = DualComplex(n2, k2)
    n3c = DualComplex(tape.const(known.n3), tape.const(known.k3))

    cos2 = _snell_cos(n1c, n2c, sin1_sq)
    cos3 = _snell_cos(n1c, n3c, sin1_sq)

    rp12 = _fresnel_rp(n1c, n2c, cos1c, cos2)
    rs12 = _fresnel_rs(n1c, n2c, cos1c, cos2)
    rp23 = _fresnel_rp(n2c, n3c, cos2, cos3)
    rs23 = _fresnel_rs(n2c, n3c, cos2, cos3)

    # e^{-2i beta} with beta = 2 pi (d / lambda) N2 cos2
    scale = d_nm * tape.const(2.0 * math.pi / known.lambda_nm)
    n2cos2 = ad.complex_mul(n2c, cos2)
    phase = ad.complex_exp(DualComplex(2.0 * (scale * n2cos2.im), -(2.0 * (scale * n2cos2.re))))

    r_pp = _stack_r(rp12, rp23, phase)
    r_ss = _stack_r(rs12, rs23, phase)

    include = ad._den_squared_value(r_ss) > ad.EPS_DIV
    rho = ad.complex_div_excluding(r_pp, r_ss, include)
    return rho, include


def measured_rho(known: ReconKnown) -> np.ndarray:
    """Complex ratio tan(psi) e^{i delta} implied by the measured angles."""
    psi = np.radians(known.psi_deg)
    delta = np.radians(known.delta_deg)
    return np.tan(psi) * (np.cos(delta) + 1j * np.sin(delta))


def recon_loss(
    pred_norm: Var,
    known: ReconKnown,
    stats: NormStats,
    cfg: ExperimentConfig,
    max_excluded_fraction: float = 0.01,
) -> tuple[Var, ReconInfo]:
    """Half squared distance between predicted and measured rho, batch mean.

    Excluded samples (r_ss division guard) contribute nothing; the mean
    divides by the included count.  More than ``max_excluded_fraction`` of
    the batch excluded is an error, not a silent degradation.
    """
    global RECON_EVALS
    RECON_EVALS += 1
    tape = pred_norm.tape
    b = known.n_samples

    rho, include = predicted_rho(pred_norm, known, stats, cfg)
    n_excluded = int(b - include.sum())
    if n_excluded > max_excluded_fraction * b:
        raise BatchExclusionError(
            f"{n_excluded} of {b} samples hit the r_ss division guard "
            f"(limit {max_excluded_fraction:.0%})"
        )

    target = measured_rho(known)
    d_re = rho.re - tape.const(target.real.copy())
    d_im = rho.im - tape.const(target.imag.copy())
    per_sample = (d_re * d_re + d_im * d_im) * 0.5
    kept = ad.where_mask(include, per_sample, tape.const(np.zeros(b)))
    loss = ad.reduce_sum(kept) * (1.0 / (b - n_excluded))
    return loss, ReconInfo(b, n_excluded)


@dataclass
class LossBreakdown:
    """One optimization step's objective with per-term primal values."""

    total: Var
    fit: float
    recon: float
    n_samples: int
    n_excluded: int


def total_loss(
    pred_norm: Var,
    target_norm: np.ndarray,
    known: ReconKnown,
    stats: NormStats,
    cfg: ExperimentConfig,
    weights: LossWeights = LossWeights(),
) -> LossBreakdown:
    """w_fit * fit + w_recon * recon; a zero-weight term is never built.

    Skipping rather than multiplying by zero matters twice over: the
    remaining term's value is bit-identical to calling it alone, and a
    zero reconstruction weight provably never constructs the physics graph.
    """
    fit = fit_loss(pred_norm, target_norm)
    terms: list[Var] = []
    if weights.w_fit > 0:
        terms.append(fit * weights.w_fit if weights.w_fit != 1.0 else fit)
    recon_value = math.nan
    n_excluded = 0
    if weights.w_recon > 0:
        recon, info = recon_loss(pred_norm, known, stats, cfg)
        recon_value = float(recon.value)
        n_excluded = info.n_excluded
        terms.append(recon * weights.w_recon if weights.w_recon != 1.0 else recon)
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return LossBreakdown(
        total=total,
        fit=float(fit.value),
        recon=recon_value,
        n_samples=len(target_norm),
        n_excluded=n_excluded,
    )
