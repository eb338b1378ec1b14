"""Synthetic ellipsometry datasets: material tables, synthesis, splits, I/O.

A dataset is a flat list of single-wavelength records, each the exact
forward-model response of one (film, substrate, wavelength, thickness)
combination.  Real optical-constant tables are not bundled; a small library
of synthetic but physically shaped dispersion models (constant-index,
Cauchy, Lorentz oscillator, Drude metal) stands in, and user tables can be
ingested from CSV.

Everything downstream depends on two guarantees made here: records
round-trip through CSV bit-exactly (floats are written with 17 significant
digits), and splitting is a pure function of (records, ratios, seed).
"""

from __future__ import annotations

import cmath
import csv
import json
import logging
import math
import os
from bisect import bisect_left
from dataclasses import dataclass, field, replace
from zlib import crc32

import numpy as np

from .optics import ExperimentConfig, LayerStack, OpticsError, forward

log = logging.getLogger(__name__)

GENERATOR_VERSION = "ellipsinv-0.1.0"

# column order of the dataset CSV; fixed, also recorded in the manifest
COLUMN_ORDER = ("film_id", "substrate_id", "lambda", "n2", "k2", "d", "n3", "k3", "psi", "delta", "split")

# network input and regression target columns, in model order
INPUT_COLUMNS = ("delta", "psi", "n3", "k3", "lambda")
TARGET_COLUMNS = ("n2", "k2", "d")

SPLITS = ("train", "val", "test")

# wavelength coverage of the built-in material library, nm
LAMBDA_MIN = 380.28
LAMBDA_MAX = 999.87

_EV_NM = 1239.841984  # photon energy (eV) x wavelength (nm)


class DatasetError(ValueError):
    """Base class for dataset construction and I/O failures."""


class WavelengthRangeError(DatasetError):
    """Interpolation requested outside a table's sampled range."""


class DatasetParseError(DatasetError):
    """A dataset or material file failed to parse; message names the line."""


# ---------------------------------------------------------------------------
# material tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaterialTable:
    """Tabulated optical constants: (wavelength nm, n, k) rows.

    Rows must be strictly increasing in wavelength with n > 0 and k >= 0;
    lookups interpolate linearly and never extrapolate.
    """

    name: str
    role: str  # "film" or "substrate"
    samples: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        if self.role not in ("film", "substrate"):
            raise DatasetError(f"material {self.name!r}: role must be film or substrate, got {self.role!r}")
        if len(self.samples) < 2:
            raise DatasetError(f"material {self.name!r}: need at least 2 samples, got {len(self.samples)}")
        prev = -math.inf
        for lam, n, k in self.samples:
            if lam <= prev:
                raise DatasetError(f"material {self.name!r}: wavelengths must be strictly increasing at {lam}")
            if not n > 0:
                raise DatasetError(f"material {self.name!r}: n must be > 0, got {n} at {lam} nm")
            if k < 0:
                raise DatasetError(f"material {self.name!r}: k must be >= 0, got {k} at {lam} nm")
            prev = lam

    @property
    def lambda_min(self) -> float:
        return self.samples[0][0]

    @property
    def lambda_max(self) -> float:
        return self.samples[-1][0]


def interpolate_nk(table: MaterialTable, wavelength_nm: float) -> tuple[float, float]:
    """(n, k) at the given wavelength by piecewise-linear interpolation."""
    lams = [s[0] for s in table.samples]
    if not (lams[0] <= wavelength_nm <= lams[-1]):
        raise WavelengthRangeError(
            f"material {table.name!r}: {wavelength_nm} nm outside sampled range "
            f"[{lams[0]}, {lams[-1]}] and extrapolation is not allowed"
        )
    i = bisect_left(lams, wavelength_nm)
    if lams[i] == wavelength_nm:
        return table.samples[i][1], table.samples[i][2]
    lo, hi = table.samples[i - 1], table.samples[i]
    t = (wavelength_nm - lo[0]) / (hi[0] - lo[0])
    return lo[1] + t * (hi[1] - lo[1]), lo[2] + t * (hi[2] - lo[2])


def read_material_csv(path: str, name: str, role: str) -> MaterialTable:
    """Ingest a user material table from CSV with header lambda_nm,n,k."""
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["lambda_nm", "n", "k"]:
            raise DatasetParseError(f"{path} line 1: expected header lambda_nm,n,k, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DatasetParseError(f"{path} line {lineno}: expected 3 fields, got {len(row)}")
            try:
                rows.append((float(row[0]), float(row[1]), float(row[2])))
            except ValueError as e:
                raise DatasetParseError(f"{path} line {lineno}: non-numeric field ({e})") from None
    return MaterialTable(name, role, tuple(rows))


# ---------------------------------------------------------------------------
# built-in synthetic dispersion library
# ---------------------------------------------------------------------------

_KNOTS = 81


def _knot_grid() -> list[float]:
    return [LAMBDA_MIN + i * (LAMBDA_MAX - LAMBDA_MIN) / (_KNOTS - 1) for i in range(_KNOTS)]


def _table_from_model(name: str, role: str, nk_of_lambda) -> MaterialTable:
    samples = []
    for lam in _knot_grid():
        n, k = nk_of_lambda(lam)
        samples.append((lam, n, k))
    return MaterialTable(name, role, tuple(samples))


def constant_index_material(name: str, role: str, n: float, k: float = 0.0) -> MaterialTable:
    return _table_from_model(name, role, lambda lam: (n, k))


def cauchy_material(name: str, role: str, a: float, b_nm2: float) -> MaterialTable:
    """Transparent dielectric with n = A + B/lambda^2 (B in nm^2), k = 0."""
    return _table_from_model(name, role, lambda lam: (a + b_nm2 / (lam * lam), 0.0))


def _nk_from_epsilon(eps: complex) -> tuple[float, float]:
    # principal sqrt keeps Im N >= 0 whenever Im eps >= 0, i.e. k >= 0
    nc = cmath.sqrt(eps)
    return nc.real, nc.imag


def lorentz_material(name: str, role: str, eps_inf: float, strength: float, e0_ev: float, gamma_ev: float) -> MaterialTable:
    """Single-oscillator dielectric: eps = eps_inf + S*E0^2 / (E0^2 - E^2 - i*gamma*E)."""

    def nk(lam):
        e = _EV_NM / lam
        eps = eps_inf + strength * e0_ev**2 / complex(e0_ev**2 - e * e, -gamma_ev * e)
        return _nk_from_epsilon(eps)

    return _table_from_model(name, role, nk)


def drude_material(name: str, role: str, eps_inf: float, ep_ev: float, gamma_ev: float) -> MaterialTable:
    """Free-carrier metal: eps = eps_inf - Ep^2 / (E^2 + i*gamma*E)."""

    def nk(lam):
        e = _EV_NM / lam
        eps = eps_inf - ep_ev**2 / complex(e * e, gamma_ev * e)
        return _nk_from_epsilon(eps)

    return _table_from_model(name, role, nk)


def builtin_films() -> list[MaterialTable]:
    return [
        constant_index_material("film_const_a", "film", 1.40),
        constant_index_material("film_const_b", "film", 2.10),
        cauchy_material("film_cauchy_a", "film", 1.45, 3.5e3),
        cauchy_material("film_cauchy_b", "film", 1.65, 6.0e3),
        cauchy_material("film_cauchy_c", "film", 1.90, 1.0e4),
        cauchy_material("film_cauchy_d", "film", 2.20, 2.0e4),
        lorentz_material("film_lorentz_uv", "film", 2.1, 1.2, 4.4, 0.7),
        lorentz_material("film_lorentz_vis", "film", 1.8, 0.9, 2.6, 0.5),
        drude_material("film_drude_hard", "film", 1.0, 8.5, 0.35),
        drude_material("film_drude_soft", "film", 3.0, 4.0, 0.8),
    ]


def builtin_substrates() -> list[MaterialTable]:
    return [
        cauchy_material("sub_glass", "substrate", 1.50, 4.2e3),
        cauchy_material("sub_crystal", "substrate", 2.35, 1.2e4),
        lorentz_material("sub_semi", "substrate", 10.5, 2.0, 3.4, 0.25),
        drude_material("sub_metal", "substrate", 1.2, 9.0, 0.05),
    ]


# ---------------------------------------------------------------------------
# records and synthesis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EllipsometricRecord:
    film_id: str
    substrate_id: str
    lambda_nm: float
    n2: float
    k2: float
    d_nm: float
    n3: float
    k3: float
    psi_deg: float
    delta_deg: float
    split: str = ""


@dataclass(frozen=True)
class SynthesisPlan:
    """Cartesian recipe: films x substrates x wavelengths x thicknesses."""

    films: tuple[MaterialTable, ...]
    substrates: tuple[MaterialTable, ...]
    lambda_grid: tuple[float, ...]
    thickness_levels: tuple[float, ...]
    cfg: ExperimentConfig
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        if not self.films or not self.substrates or not self.lambda_grid:
            raise DatasetError("plan needs at least one film, substrate, and wavelength")
        if not self.thickness_levels:
            raise DatasetError("plan needs at least one thickness level")
        if any(d < 0 for d in self.thickness_levels):
            raise DatasetError("thickness levels must be >= 0")
        if any(r < 0 for r in self.split_ratios):
            raise DatasetError(f"split ratios must be >= 0, got {self.split_ratios}")
        if abs(sum(self.split_ratios) - 1.0) > 1e-12:
            raise DatasetError(f"split ratios must sum to 1, got {self.split_ratios}")


def uniform_grid(lo: float, hi: float, count: int) -> tuple[float, ...]:
    if count == 1:
        return (lo,)
    return tuple(lo + i * (hi - lo) / (count - 1) for i in range(count))


def default_plan(seed: int = 0, theta1_deg: float = 70.0, n_lambda: int = 64, n_thickness: int = 20) -> SynthesisPlan:
    """Desk-scale plan: 10 films x 4 substrates x 64 wavelengths x 20 thicknesses."""
    return SynthesisPlan(
        films=tuple(builtin_films()),
        substrates=tuple(builtin_substrates()),
        lambda_grid=uniform_grid(LAMBDA_MIN, LAMBDA_MAX, n_lambda),
        thickness_levels=uniform_grid(1.0, 96.0, n_thickness),
        cfg=ExperimentConfig(theta1_deg, LAMBDA_MIN),
        seed=seed,
    )


def _combo_key(film_id: str, substrate_id: str) -> str:
    return f"{film_id}|{substrate_id}"


def synthesize(plan: SynthesisPlan) -> list[EllipsometricRecord]:
    """One record per (film, substrate, wavelength, thickness); splits assigned.

    Wavelengths outside any table's range raise; forward-model degeneracies
    skip the single record with a logged reason.
    """
    records: list[EllipsometricRecord] = []
    for film in plan.films:
        for sub in plan.substrates:
            for lam in plan.lambda_grid:
                n2, k2 = interpolate_nk(film, lam)
                n3, k3 = interpolate_nk(sub, lam)
                cfg = replace(plan.cfg, wavelength_nm=lam)
                for d in plan.thickness_levels:
                    try:
                        pd = forward(LayerStack(n2, k2, d, n3, k3), cfg)
                    except OpticsError as e:
                        log.warning(
                            "skipping degenerate record film=%s substrate=%s lambda=%g d=%g: %s",
                            film.name, sub.name, lam, d, e,
                        )
                        continue
                    records.append(
                        EllipsometricRecord(film.name, sub.name, lam, n2, k2, d, n3, k3, pd.psi_deg, pd.delta_deg)
                    )
    return split_dataset(records, plan.split_ratios, plan.seed)


def _allocate(n: int, ratios: tuple[float, float, float]) -> list[int]:
    # largest-remainder allocation: each count within 1 of n*ratio
    floors = [math.floor(n * r) for r in ratios]
    remainders = [n * r - f for r, f in zip(ratios, floors)]
    short = n - sum(floors)
    order = sorted(range(3), key=lambda i: (-remainders[i], i))
    for i in order[:short]:
        floors[i] += 1
    return floors


def split_dataset(
    records: list[EllipsometricRecord],
    ratios: tuple[float, float, float],
    seed: int,
) -> list[EllipsometricRecord]:
    """Tag each record train/val/test, shuffled within its (film, substrate) group.

    Group sub-seeds mix the group name into the master seed, so a group's
    tagging does not depend on which other groups are present.
    """
    groups: dict[str, list[int]] = {}
    for idx, rec in enumerate(records):
        groups.setdefault(_combo_key(rec.film_id, rec.substrate_id), []).append(idx)

    out = list(records)
    for key, idxs in groups.items():
        rng = np.random.default_rng(np.random.SeedSequence([seed, crc32(key.encode())]))
        perm = rng.permutation(len(idxs))
        counts = _allocate(len(idxs), ratios)
        tags = ["train"] * counts[0] + ["val"] * counts[1] + ["test"] * counts[2]
        for pos, tag in zip(perm, tags):
            i = idxs[int(pos)]
            out[i] = replace(out[i], split=tag)
    return out


# ---------------------------------------------------------------------------
# normalization statistics
# ---------------------------------------------------------------------------


_COLUMN_GETTERS = {
    "delta": lambda r: r.delta_deg,
    "psi": lambda r: r.psi_deg,
    "n3": lambda r: r.n3,
    "k3": lambda r: r.k3,
    "lambda": lambda r: r.lambda_nm,
    "n2": lambda r: r.n2,
    "k2": lambda r: r.k2,
    "d": lambda r: r.d_nm,
}


@dataclass(frozen=True)
class NormStats:
    """Per-column mean/std (population convention) over the training split.

    Constant columns are flagged and their std replaced by 1 so z-scoring
    is always well defined.
    """

    input_mean: tuple[float, ...]
    input_std: tuple[float, ...]
    target_mean: tuple[float, ...]
    target_std: tuple[float, ...]
    constant_inputs: tuple[bool, ...]
    constant_targets: tuple[bool, ...]

    def __post_init__(self):
        if any(s <= 0 for s in self.input_std) or any(s <= 0 for s in self.target_std):
            raise DatasetError("normalization stds must be > 0")


def _mean_std(values: np.ndarray) -> tuple[float, float, bool]:
    mean = float(np.mean(values))
    std = float(np.std(values))  # population (ddof=0)
    if std == 0.0:
        return mean, 1.0, True
    return mean, std, False


def compute_norm_stats(train_records: list[EllipsometricRecord]) -> NormStats:
    if len(train_records) < 2:
        raise DatasetError(f"need at least 2 training records for statistics, got {len(train_records)}")
    in_m, in_s, in_c = [], [], []
    for col in INPUT_COLUMNS:
        m, s, c = _mean_std(np.array([_COLUMN_GETTERS[col](r) for r in train_records], dtype=np.float64))
        in_m.append(m); in_s.append(s); in_c.append(c)
    tg_m, tg_s, tg_c = [], [], []
    for col in TARGET_COLUMNS:
        m, s, c = _mean_std(np.array([_COLUMN_GETTERS[col](r) for r in train_records], dtype=np.float64))
        tg_m.append(m); tg_s.append(s); tg_c.append(c)
    return NormStats(tuple(in_m), tuple(in_s), tuple(tg_m), tuple(tg_s), tuple(in_c), tuple(tg_c))


def records_to_arrays(records: list[EllipsometricRecord]) -> tuple[np.ndarray, np.ndarray]:
    """(inputs (N,5), targets (N,3)) in INPUT_COLUMNS/TARGET_COLUMNS order."""
    x = np.array([[_COLUMN_GETTERS[c](r) for c in INPUT_COLUMNS] for r in records], dtype=np.float64)
    y = np.array([[_COLUMN_GETTERS[c](r) for c in TARGET_COLUMNS] for r in records], dtype=np.float64)
    return x.reshape(len(records), 5), y.reshape(len(records), 3)


def normalize(values: np.ndarray, mean: tuple[float, ...], std: tuple[float, ...]) -> np.ndarray:
    return (values - np.array(mean)) / np.array(std)


def denormalize(values: np.ndarray, mean: tuple[float, ...], std: tuple[float, ...]) -> np.ndarray:
    return values * np.array(std) + np.array(mean)


# ---------------------------------------------------------------------------
# dataset I/O
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Manifest:
    theta1_deg: float
    n1: float
    k1: float
    seed: int
    ratios: tuple[float, float, float]
    column_order: tuple[str, ...]
    norm: NormStats
    generator_version: str = GENERATOR_VERSION
    split_counts: dict = field(default_factory=dict)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as f:
        f.write(text)
    os.replace(tmp, path)


def write_dataset(dir_path: str, records: list[EllipsometricRecord], manifest: Manifest) -> None:
    """records.csv + manifest.json under dir_path; both written atomically."""
    os.makedirs(dir_path, exist_ok=True)
    lines = [",".join(COLUMN_ORDER)]
    for r in records:
        lines.append(
            ",".join(
                (
                    r.film_id, r.substrate_id, _fmt(r.lambda_nm), _fmt(r.n2), _fmt(r.k2), _fmt(r.d_nm),
                    _fmt(r.n3), _fmt(r.k3), _fmt(r.psi_deg), _fmt(r.delta_deg), r.split,
                )
            )
        )
    _atomic_write(os.path.join(dir_path, "records.csv"), "\n".join(lines) + "\n")

    m = {
        "theta1_deg": manifest.theta1_deg,
        "n1": manifest.n1,
        "k1": manifest.k1,
        "seed": manifest.seed,
        "ratios": list(manifest.ratios),
        "column_order": list(manifest.column_order),
        "norm": {
            "input_columns": list(INPUT_COLUMNS),
            "target_columns": list(TARGET_COLUMNS),
            "input_mean": list(manifest.norm.input_mean),
            "input_std": list(manifest.norm.input_std),
            "target_mean": list(manifest.norm.target_mean),
            "target_std": list(manifest.norm.target_std),
            "constant_inputs": list(manifest.norm.constant_inputs),
            "constant_targets": list(manifest.norm.constant_targets),
        },
        "generator_version": manifest.generator_version,
        "split_counts": manifest.split_counts,
    }
    _atomic_write(os.path.join(dir_path, "manifest.json"), json.dumps(m, indent=2, sort_keys=True) + "\n")


def read_dataset(dir_path: str) -> tuple[list[EllipsometricRecord], Manifest]:
    csv_path = os.path.join(dir_path, "records.csv")
    records: list[EllipsometricRecord] = []
    with open(csv_path, newline="") as f:
        header = f.readline().rstrip("\n")
        if tuple(header.split(",")) != COLUMN_ORDER:
            raise DatasetParseError(f"{csv_path} line 1: bad header {header!r}")
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(COLUMN_ORDER):
                raise DatasetParseError(f"{csv_path} line {lineno}: expected {len(COLUMN_ORDER)} fields, got {len(parts)}")
            try:
                records.append(
                    EllipsometricRecord(
                        parts[0], parts[1], float(parts[2]), float(parts[3]), float(parts[4]),
                        float(parts[5]), float(parts[6]), float(parts[7]), float(parts[8]),
                        float(parts[9]), parts[10],
                    )
                )
            except ValueError as e:
                raise DatasetParseError(f"{csv_path} line {lineno}: non-numeric field ({e})") from None

    with open(os.path.join(dir_path, "manifest.json")) as f:
        m = json.load(f)
    norm = NormStats(
        tuple(m["norm"]["input_mean"]), tuple(m["norm"]["input_std"]),
        tuple(m["norm"]["target_mean"]), tuple(m["norm"]["target_std"]),
        tuple(bool(b) for b in m["norm"]["constant_inputs"]),
        tuple(bool(b) for b in m["norm"]["constant_targets"]),
    )
    manifest = Manifest(
        theta1_deg=m["theta1_deg"], n1=m["n1"], k1=m["k1"], seed=m["seed"],
        ratios=tuple(m["ratios"]), column_order=tuple(m["column_order"]), norm=norm,
        generator_version=m["generator_version"], split_counts=m.get("split_counts", {}),
    )
    return records, manifest


def build_manifest(plan: SynthesisPlan, records: list[EllipsometricRecord]) -> Manifest:
    """Manifest for a synthesized record list: stats from the train split."""
    train = [r for r in records if r.split == "train"]
    norm = compute_norm_stats(train)
    counts = {s: 0 for s in SPLITS}
    for r in records:
        counts[r.split] += 1
    return Manifest(
        theta1_deg=plan.cfg.theta1_deg, n1=plan.cfg.n1, k1=plan.cfg.k1, seed=plan.seed,
        ratios=plan.split_ratios, column_order=COLUMN_ORDER, norm=norm, split_counts=counts,
    )
