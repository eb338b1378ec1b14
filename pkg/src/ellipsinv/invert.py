"""Multi-start damped least squares over (n2, k2, d) for one measurement.

This is the classical counterpart to the learned inverse: minimize the
squared distance between the modeled and measured complex reflectance
ratio.  The residual is literally the single-sample reconstruction loss
(shared code, not a reimplementation), so the two agree bit for bit.

A single-wavelength measurement carries two real numbers, so three unknowns
are generically underdetermined: exact solutions form curves, and for a
transparent film the thickness direction of that structure is the familiar
period lambda / (2 n2 cos theta2).  The solver makes no uniqueness promise;
it reports every deduplicated minimum it can defend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, reduce_sum
from .dataset import NormStats
from .loss import BatchExclusionError, LossError, ReconKnown, measured_rho, predicted_rho, recon_loss
from .optics import ExperimentConfig

# residual assigned to parameter points whose forward model degenerates
DEGENERATE_PENALTY = 1e30

# thickness scale (nm) used for deduplication and step control, matching
# the spread of the synthesis grid; (n2, k2) are already order-one
PARAM_SCALE = np.array([1.0, 1.0, 96.0])
DEDUP_RADIUS = 0.02

_IDENTITY_STATS = NormStats(
    input_mean=(0.0,) * 5, input_std=(1.0,) * 5,
    target_mean=(0.0, 0.0, 0.0), target_std=(1.0, 1.0, 1.0),
    constant_inputs=(False,) * 5, constant_targets=(False,) * 3,
)


class InvertError(ValueError):
    """Problem construction failure."""


@dataclass(frozen=True)
class FitProblem:
    """One measured point plus the search box.

    ``bounds`` is ((n2_lo, n2_hi), (k2_lo, k2_hi), (d_lo, d_hi)).
    """

    n3: float
    k3: float
    lambda_nm: float
    psi_deg: float
    delta_deg: float
    cfg: ExperimentConfig
    bounds: tuple[tuple[float, float], tuple[float, float], tuple[float, float]] = (
        (1.0, 5.0), (0.0, 5.0), (1.0, 200.0),
    )
    starts: int = 64
    tol: float = 1e-12
    seed: int = 0

    def __post_init__(self):
        if len(self.bounds) != 3 or any(len(b) != 2 for b in self.bounds):
            raise InvertError("bounds must be three (lo, hi) pairs")
        for lo, hi in self.bounds:
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise InvertError(f"degenerate bound ({lo}, {hi})")
        if self.starts < 1:
            raise InvertError(f"starts must be >= 1, got {self.starts}")
        if self.tol <= 0:
            raise InvertError(f"tol must be > 0, got {self.tol}")
        if self.lambda_nm <= 0:
            raise InvertError(f"wavelength must be > 0, got {self.lambda_nm}")

    def known(self) -> ReconKnown:
        def one(v: float) -> np.ndarray:
            return np.array([v], dtype=np.float64)

        return ReconKnown(n3=one(self.n3), k3=one(self.k3), lambda_nm=one(self.lambda_nm),
                          psi_deg=one(self.psi_deg), delta_deg=one(self.delta_deg))


@dataclass(frozen=True)
class Minimum:
    n2: float
    k2: float
    d_nm: float
    residual: float


@dataclass
class FitResult:
    minima: list[Minimum]
    converged_starts: int
    starts: int

    @property
    def found(self) -> bool:
        return bool(self.minima)


def residual(params, problem: FitProblem) -> tuple[float, bool]:
    """(value, degenerate): the single-sample reconstruction loss.

    Degenerate forward evaluations (r_ss guard) report the penalty value
    with the flag raised instead of raising.
    """
    arr = np.asarray(params, dtype=np.float64).reshape(1, 3)
    tape = Tape()
    try:
        value, _ = recon_loss(tape.var(arr), problem.known(), _IDENTITY_STATS, problem.cfg)
    except (BatchExclusionError, LossError):
        return DEGENERATE_PENALTY, True
    return float(value.value), False


def _residual_parts(params: np.ndarray, problem: FitProblem):
    """(cost, residual 2-vector, 2x3 Jacobian) or None when degenerate."""
    tape = Tape()
    leaf = tape.var(params.reshape(1, 3))
    try:
        rho, include = predicted_rho(leaf, problem.known(), _IDENTITY_STATS, problem.cfg)
    except LossError:
        return None
    if not include.all():
        return None
    target = measured_rho(problem.known())[0]
    r = np.array([rho.value_re[0] - target.real, rho.value_im[0] - target.imag])
    jac = np.zeros((2, 3))
    tape.backward(reduce_sum(rho.re))
    jac[0] = leaf.grad[0]
    tape.backward(reduce_sum(rho.im))
    jac[1] = leaf.grad[0]
    cost = 0.5 * float(r @ r)
    return cost, r, jac


def _latin_hypercube(problem: FitProblem) -> np.ndarray:
    """(starts, 3) stratified initial points inside the bounds."""
    rng = np.random.default_rng(np.random.SeedSequence([problem.seed]))
    n = problem.starts
    points = np.empty((n, 3))
    for j, (lo, hi) in enumerate(problem.bounds):
        strata = (rng.permutation(n) + rng.random(n)) / n
        points[:, j] = lo + strata * (hi - lo)
    return points


def _project(params: np.ndarray, problem: FitProblem) -> np.ndarray:
    lo = np.array([b[0] for b in problem.bounds])
    hi = np.array([b[1] for b in problem.bounds])
    return np.clip(params, lo, hi)


def _minimize_one(start: np.ndarray, problem: FitProblem, max_iter: int = 120) -> tuple[np.ndarray, float, bool]:
    """Damped Gauss-Newton from one start; (point, cost, converged).

    Converged means the iteration reached a stationary state: the cost hit
    the hard floor, the accepted step became negligible, or no damped step
    improved the cost (stalled at a local or boundary-pinned minimum).
    Hitting the iteration cap while still moving is not convergence.
    """
    p = _project(start.copy(), problem)
    parts = _residual_parts(p, problem)
    if parts is None:
        return p, DEGENERATE_PENALTY, False
    cost, r, jac = parts
    lo = np.array([b[0] for b in problem.bounds])
    hi = np.array([b[1] for b in problem.bounds])
    lam = 1e-3
    for _ in range(max_iter):
        if cost < 1e-28:
            return p, cost, True
        j_scaled = jac * PARAM_SCALE  # derivative w.r.t. scaled parameters
        g = j_scaled.T @ r
        # Freeze coordinates sitting on a bound whose gradient points out of
        # the box. Solving the unconstrained model and clipping afterwards
        # destroys the predicted decrease and stalls the damping loop, so the
        # step is restricted to the free coordinates instead.
        free = ~(((p <= lo) & (g > 0.0)) | ((p >= hi) & (g < 0.0)))
        if not free.any():
            return p, cost, True
        j_free = j_scaled[:, free]
        a = j_free.T @ j_free
        g_free = g[free]
        accepted = False
        moved = math.inf
        for _ in range(12):
            m = a + lam * np.diag(np.maximum(np.diag(a), 1e-12))
            try:
                delta_free = np.linalg.solve(m, -g_free)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            delta_u = np.zeros(3)
            delta_u[free] = delta_free
            candidate = _project(p + delta_u * PARAM_SCALE, problem)
            cand_parts = _residual_parts(candidate, problem)
            if cand_parts is not None and cand_parts[0] < cost:
                p, (cost, r, jac) = candidate, cand_parts
                lam = max(lam / 10.0, 1e-12)
                accepted = True
                moved = float(np.max(np.abs(delta_u)))
                break
            lam *= 10.0
        if not accepted or moved < 1e-11:
            return p, cost, True
    return p, cost, False


def _dedup(points: list[tuple[np.ndarray, float]]) -> list[tuple[np.ndarray, float]]:
    """Greedy ascending-residual clustering in scaled parameter space."""
    order = sorted(points, key=lambda item: item[1])
    kept: list[tuple[np.ndarray, float]] = []
    for p, cost in order:
        u = p / PARAM_SCALE
        if all(np.linalg.norm(u - q / PARAM_SCALE) > DEDUP_RADIUS for q, _ in kept):
            kept.append((p, cost))
    return kept


def solve(problem: FitProblem) -> FitResult:
    """Multi-start damped least squares; every minimum re-verified fresh.

    An empty ``minima`` list is the no-solution report; it is not an error.
    """
    starts = _latin_hypercube(problem)
    candidates: list[tuple[np.ndarray, float]] = []
    converged_starts = 0
    for i in range(problem.starts):
        point, cost, converged = _minimize_one(starts[i], problem)
        if converged:
            converged_starts += 1
        if cost < problem.tol:
            candidates.append((point, cost))
    minima = []
    for point, _ in _dedup(candidates):
        fresh, degenerate = residual(point, problem)
        if not degenerate and fresh < problem.tol:
            minima.append(Minimum(n2=float(point[0]), k2=float(point[1]),
                                  d_nm=float(point[2]), residual=fresh))
    minima.sort(key=lambda m: m.residual)
    return FitResult(minima=minima, converged_starts=converged_starts, starts=problem.starts)
