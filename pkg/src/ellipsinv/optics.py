"""Exact two-layer (ambient / film / substrate) ellipsometry forward model.

A single absorbing film of thickness ``d`` sits on an absorbing substrate.
Complex refractive indices follow the ``N = n + i*k`` convention with
``k >= 0``.  All refraction angles are carried as complex cosines; arc
functions are never evaluated, which sidesteps the branch ambiguities of
the complex arcsine.  The square-root branch is pinned so that
``Im(N * cos_theta) >= 0`` (transmitted waves decay into absorbing media).

Everything here is pure float64 arithmetic on Python complex numbers:
identical inputs give bit-identical outputs, and the functions are safe to
call concurrently.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi


class OpticsError(ValueError):
    """Base class for degenerate optical configurations."""


class DegenerateMediumError(OpticsError):
    """Refraction into a medium with zero complex index."""


class InterfaceDegeneracyError(OpticsError):
    """Fresnel denominator vanished (no reflected/transmitted split)."""


class ResonantDegeneracyError(OpticsError):
    """Film interference denominator ``1 + r12*r23*exp(-2i*beta)`` vanished."""


class InvalidWavelengthError(OpticsError):
    """Vacuum wavelength must be strictly positive."""


class UndefinedRhoError(OpticsError):
    """|r_ss| = 0: the polarization ratio is undefined."""


@dataclass(frozen=True)
class LayerStack:
    """Film (n2, k2, d_nm) on substrate (n3, k3).

    Thickness is in nanometres; indices are dimensionless.
    """

    n2: float
    k2: float
    d_nm: float
    n3: float
    k3: float

    def __post_init__(self):
        if not (self.n2 > 0 and self.n3 > 0):
            raise ValueError(f"refractive indices must be positive, got n2={self.n2}, n3={self.n3}")
        if self.k2 < 0 or self.k3 < 0:
            raise ValueError(f"extinction coefficients must be >= 0, got k2={self.k2}, k3={self.k3}")
        if self.d_nm < 0:
            raise ValueError(f"film thickness must be >= 0, got {self.d_nm}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Measurement geometry: incidence angle, ambient index, wavelength."""

    theta1_deg: float
    wavelength_nm: float
    n1: float = 1.0
    k1: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.theta1_deg < 90.0):
            raise ValueError(f"incidence angle must be in (0, 90) degrees, got {self.theta1_deg}")
        if self.wavelength_nm <= 0:
            raise InvalidWavelengthError(f"wavelength must be > 0 nm, got {self.wavelength_nm}")
        if self.n1 <= 0:
            raise ValueError(f"ambient index must be > 0, got {self.n1}")

    @property
    def ambient_index(self) -> complex:
        return complex(self.n1, self.k1)

    @property
    def cos_incidence(self) -> complex:
        return complex(math.cos(math.radians(self.theta1_deg)), 0.0)


@dataclass(frozen=True)
class PsiDelta:
    """Ellipsometric angles in degrees: psi in [0, 90], delta in (-180, 180]."""

    psi_deg: float
    delta_deg: float


def snell_cos(n_in: complex, n_out: complex, cos_in: complex) -> complex:
    """Cosine of the refraction angle across an interface.

    Applies ``n_in sin(t_in) = n_out sin(t_out)`` through
    ``cos_out = sqrt(1 - (n_in/n_out)^2 (1 - cos_in^2))``, taking the
    principal square root and negating it if ``Im(n_out * cos_out) < 0``
    so transmitted waves decay in absorbing media.
    """
    if abs(n_out) == 0.0:
        raise DegenerateMediumError("cannot refract into a medium with zero index")
    ratio = n_in / n_out
    cos_out = cmath.sqrt(1.0 - ratio * ratio * (1.0 - cos_in * cos_in))
    if (n_out * cos_out).imag < 0.0:
        cos_out = -cos_out
    return cos_out


def fresnel_rp(n_up: complex, n_down: complex, cos_up: complex, cos_down: complex) -> complex:
    """Single-interface reflection coefficient for p-polarized light."""
    den = n_down * cos_up + n_up * cos_down
    if abs(den) == 0.0:
        raise InterfaceDegeneracyError("p-polarization Fresnel denominator vanished")
    return (n_down * cos_up - n_up * cos_down) / den


def fresnel_rs(n_up: complex, n_down: complex, cos_up: complex, cos_down: complex) -> complex:
    """Single-interface reflection coefficient for s-polarized light."""
    den = n_up * cos_up + n_down * cos_down
    if abs(den) == 0.0:
        raise InterfaceDegeneracyError("s-polarization Fresnel denominator vanished")
    return (n_up * cos_up - n_down * cos_down) / den


def phase_beta(d_nm: float, wavelength_nm: float, n_film: complex, cos_film: complex) -> complex:
    """Complex phase accumulated per film traversal: 2*pi*(d/lambda)*N*cos."""
    if wavelength_nm <= 0:
        raise InvalidWavelengthError(f"wavelength must be > 0 nm, got {wavelength_nm}")
    if d_nm < 0:
        raise ValueError(f"film thickness must be >= 0, got {d_nm}")
    return TWO_PI * (d_nm / wavelength_nm) * n_film * cos_film


def stack_r(r_top: complex, r_bottom: complex, beta: complex) -> complex:
    """Combined reflection of the two interfaces through the film phase.

    ``(r_top + r_bottom e^{-2i beta}) / (1 + r_top r_bottom e^{-2i beta})``,
    used once with p-coefficients and once with s-coefficients.
    """
    ph = cmath.exp(-2j * beta)
    den = 1.0 + r_top * r_bottom * ph
    if abs(den) == 0.0:
        raise ResonantDegeneracyError("film interference denominator vanished")
    return (r_top + r_bottom * ph) / den


def reflectance_ratio(stack: LayerStack, cfg: ExperimentConfig) -> complex:
    """Complex polarization ratio rho = r_pp / r_ss of the full stack."""
    n1 = cfg.ambient_index
    n2 = complex(stack.n2, stack.k2)
    n3 = complex(stack.n3, stack.k3)
    cos1 = cfg.cos_incidence
    cos2 = snell_cos(n1, n2, cos1)
    cos3 = snell_cos(n1, n3, cos1)

    r12p = fresnel_rp(n1, n2, cos1, cos2)
    r23p = fresnel_rp(n2, n3, cos2, cos3)
    r12s = fresnel_rs(n1, n2, cos1, cos2)
    r23s = fresnel_rs(n2, n3, cos2, cos3)

    beta = phase_beta(stack.d_nm, cfg.wavelength_nm, n2, cos2)
    r_pp = stack_r(r12p, r23p, beta)
    r_ss = stack_r(r12s, r23s, beta)
    if abs(r_ss) == 0.0:
        raise UndefinedRhoError("|r_ss| = 0, polarization ratio undefined")
    return r_pp / r_ss


def forward(stack: LayerStack, cfg: ExperimentConfig) -> PsiDelta:
    """Ellipsometric angles of the stack: tan(psi) e^{i delta} = r_pp/r_ss."""
    rho = reflectance_ratio(stack, cfg)
    psi = math.degrees(math.atan(abs(rho)))
    delta = math.degrees(cmath.phase(rho))
    if delta <= -180.0:
        delta += 360.0
    return PsiDelta(psi, delta)


def lossless_thickness_period(n2: float, cfg: ExperimentConfig) -> float:
    """Thickness period of a transparent film: lambda / (2 n2 cos(t2)).

    Valid for k2 = 0 and a real refraction cosine; forward() is then exactly
    periodic in d with this period, the root of the thickness ambiguity.
    """
    cos2 = snell_cos(cfg.ambient_index, complex(n2, 0.0), cfg.cos_incidence)
    if abs(cos2.imag) > 1e-12:
        raise ValueError("thickness period requires a real refraction cosine")
    return cfg.wavelength_nm / (2.0 * n2 * cos2.real)
