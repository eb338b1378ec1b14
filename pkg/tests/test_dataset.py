"""Dataset module tests: interpolation, synthesis, splits, stats, round-trips."""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ellipsinv.dataset import (
    COLUMN_ORDER,
    INPUT_COLUMNS,
    LAMBDA_MAX,
    LAMBDA_MIN,
    TARGET_COLUMNS,
    DatasetError,
    DatasetParseError,
    EllipsometricRecord,
    Manifest,
    MaterialTable,
    NormStats,
    SynthesisPlan,
    WavelengthRangeError,
    build_manifest,
    builtin_films,
    builtin_substrates,
    cauchy_material,
    compute_norm_stats,
    constant_index_material,
    default_plan,
    denormalize,
    interpolate_nk,
    normalize,
    read_dataset,
    read_material_csv,
    records_to_arrays,
    split_dataset,
    synthesize,
    uniform_grid,
    write_dataset,
)
from ellipsinv.optics import ExperimentConfig, LayerStack, forward

THREE_POINT = MaterialTable("three", "film", ((400.0, 1.5, 0.0), (500.0, 1.8, 0.1), (700.0, 1.6, 0.3)))


def small_plan(seed: int = 0, films=None, substrates=None, n_lambda: int = 3, n_d: int = 4) -> SynthesisPlan:
    return SynthesisPlan(
        films=tuple(films or [constant_index_material("fa", "film", 1.7), cauchy_material("fb", "film", 2.0, 5e3)]),
        substrates=tuple(substrates or [cauchy_material("sa", "substrate", 1.5, 4e3)]),
        lambda_grid=uniform_grid(400.0, 900.0, n_lambda),
        thickness_levels=uniform_grid(1.0, 96.0, n_d),
        cfg=ExperimentConfig(70.0, 500.0),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------


def test_interpolate_at_knot_returns_sample_exactly():
    assert interpolate_nk(THREE_POINT, 500.0) == (1.8, 0.1)
    assert interpolate_nk(THREE_POINT, 400.0) == (1.5, 0.0)
    assert interpolate_nk(THREE_POINT, 700.0) == (1.6, 0.3)


def test_interpolate_midpoint_is_mean_of_neighbors():
    n, k = interpolate_nk(THREE_POINT, 450.0)
    assert n == pytest.approx((1.5 + 1.8) / 2, abs=1e-15)
    assert k == pytest.approx((0.0 + 0.1) / 2, abs=1e-15)


def test_interpolate_interior_blend_hand_computed():
    # t = (650-500)/(700-500) = 0.75: n = 1.8 + 0.75*(1.6-1.8), k = 0.1 + 0.75*(0.3-0.1)
    n, k = interpolate_nk(THREE_POINT, 650.0)
    assert n == pytest.approx(1.65, abs=1e-15)
    assert k == pytest.approx(0.25, abs=1e-15)


def test_interpolate_refuses_extrapolation():
    with pytest.raises(WavelengthRangeError):
        interpolate_nk(THREE_POINT, 399.999)
    with pytest.raises(WavelengthRangeError):
        interpolate_nk(THREE_POINT, 700.001)


def test_material_table_validation():
    with pytest.raises(DatasetError):
        MaterialTable("bad", "film", ((400.0, 1.5, 0.0),))  # too few samples
    with pytest.raises(DatasetError):
        MaterialTable("bad", "film", ((400.0, 1.5, 0.0), (400.0, 1.6, 0.0)))  # not increasing
    with pytest.raises(DatasetError):
        MaterialTable("bad", "film", ((400.0, 0.0, 0.0), (500.0, 1.6, 0.0)))  # n <= 0
    with pytest.raises(DatasetError):
        MaterialTable("bad", "film", ((400.0, 1.5, -0.1), (500.0, 1.6, 0.0)))  # k < 0
    with pytest.raises(DatasetError):
        MaterialTable("bad", "mirror", ((400.0, 1.5, 0.0), (500.0, 1.6, 0.0)))  # role


def test_builtin_library_is_valid_and_covers_range():
    films, subs = builtin_films(), builtin_substrates()
    assert len(films) >= 10 and len(subs) >= 4
    for t in films + subs:
        assert t.lambda_min <= LAMBDA_MIN and t.lambda_max >= LAMBDA_MAX
        assert len(t.samples) >= 2  # construction already enforced n > 0, k >= 0


def test_material_csv_ingestion(tmp_path):
    p = tmp_path / "mat.csv"
    p.write_text("lambda_nm,n,k\n400.0,1.5,0.0\n500.0,1.8,0.1\n")
    t = read_material_csv(str(p), "user", "film")
    assert t.samples == ((400.0, 1.5, 0.0), (500.0, 1.8, 0.1))
    p.write_text("lambda_nm,n,k\n400.0,1.5,0.0\n500.0,oops,0.1\n")
    with pytest.raises(DatasetParseError, match="line 3"):
        read_material_csv(str(p), "user", "film")
    p.write_text("wavelength,n,k\n400.0,1.5,0.0\n")
    with pytest.raises(DatasetParseError, match="line 1"):
        read_material_csv(str(p), "user", "film")


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------


def test_synthesize_cardinality_and_forward_consistency():
    plan = small_plan()
    records = synthesize(plan)
    assert len(records) == 2 * 1 * 3 * 4
    for r in records:
        pd = forward(LayerStack(r.n2, r.k2, r.d_nm, r.n3, r.k3), replace(plan.cfg, wavelength_nm=r.lambda_nm))
        assert (pd.psi_deg, pd.delta_deg) == (r.psi_deg, r.delta_deg)  # bit-exact


def test_synthesize_is_deterministic():
    assert synthesize(small_plan(seed=5)) == synthesize(small_plan(seed=5))


def test_synthesize_has_no_duplicate_settings():
    records = synthesize(small_plan())
    keys = [(r.film_id, r.substrate_id, r.lambda_nm, r.d_nm) for r in records]
    assert len(keys) == len(set(keys))


def test_plan_validation():
    good = small_plan()
    with pytest.raises(DatasetError):
        replace(good, split_ratios=(0.5, 0.2, 0.2))
    with pytest.raises(DatasetError):
        replace(good, split_ratios=(1.2, -0.1, -0.1))
    with pytest.raises(DatasetError):
        replace(good, thickness_levels=())
    with pytest.raises(DatasetError):
        replace(good, thickness_levels=(1.0, -2.0))
    with pytest.raises(DatasetError):
        replace(good, films=())


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


def _dummy_records(count: int, film: str = "f", sub: str = "s") -> list[EllipsometricRecord]:
    return [EllipsometricRecord(film, sub, 500.0 + i, 2.0, 0.0, float(i + 1), 1.5, 0.0, 10.0, 20.0) for i in range(count)]


def test_split_ten_records_gives_8_1_1():
    tagged = split_dataset(_dummy_records(10), (0.8, 0.1, 0.1), seed=1)
    counts = {s: sum(r.split == s for r in tagged) for s in ("train", "val", "test")}
    assert counts == {"train": 8, "val": 1, "test": 1}


def test_split_all_train_ratio():
    tagged = split_dataset(_dummy_records(7), (1.0, 0.0, 0.0), seed=1)
    assert all(r.split == "train" for r in tagged)


def test_split_deterministic_and_seed_sensitive():
    recs = _dummy_records(40)
    a = split_dataset(recs, (0.8, 0.1, 0.1), seed=3)
    b = split_dataset(recs, (0.8, 0.1, 0.1), seed=3)
    c = split_dataset(recs, (0.8, 0.1, 0.1), seed=4)
    assert a == b
    assert a != c


def test_split_group_tagging_independent_of_other_groups():
    solo = split_dataset(_dummy_records(20, "f1", "s1"), (0.8, 0.1, 0.1), seed=9)
    merged = split_dataset(
        _dummy_records(20, "f1", "s1") + _dummy_records(30, "f2", "s1"), (0.8, 0.1, 0.1), seed=9
    )
    assert merged[:20] == solo


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 60), st.sampled_from([(0.8, 0.1, 0.1), (0.6, 0.2, 0.2), (0.5, 0.25, 0.25), (0.34, 0.33, 0.33)]), st.integers(0, 10))
def test_split_counts_within_one_of_exact_ratio(n, ratios, seed):
    tagged = split_dataset(_dummy_records(n), ratios, seed)
    for ratio, split in zip(ratios, ("train", "val", "test")):
        got = sum(r.split == split for r in tagged)
        assert abs(got - ratio * n) < 1.0
    assert sum(r.split in ("train", "val", "test") for r in tagged) == n


# ---------------------------------------------------------------------------
# normalization statistics
# ---------------------------------------------------------------------------


def test_norm_stats_two_point_population_convention():
    recs = [
        EllipsometricRecord("f", "s", 500.0, 2.0, 0.0, 10.0, 1.5, 0.0, 10.0, 0.0, "train"),
        EllipsometricRecord("f", "s", 500.0, 2.0, 0.0, 10.0, 1.5, 0.0, 10.0, 2.0, "train"),
    ]
    stats = compute_norm_stats(recs)
    i = INPUT_COLUMNS.index("delta")
    assert stats.input_mean[i] == 1.0
    assert stats.input_std[i] == 1.0
    assert not stats.constant_inputs[i]
    # lambda is constant: flagged, std replaced by 1
    j = INPUT_COLUMNS.index("lambda")
    assert stats.constant_inputs[j]
    assert stats.input_std[j] == 1.0
    assert all(stats.constant_targets)


def test_norm_stats_match_naive_two_pass_oracle():
    rng = np.random.default_rng(11)
    recs = [
        EllipsometricRecord("f", "s", *rng.uniform(0.5, 5.0, size=8), "train")
        for _ in range(100)
    ]
    stats = compute_norm_stats(recs)
    for cols, means, stds in (
        (INPUT_COLUMNS, stats.input_mean, stats.input_std),
        (TARGET_COLUMNS, stats.target_mean, stats.target_std),
    ):
        for col, m, s in zip(cols, means, stds):
            getter = {
                "delta": lambda r: r.delta_deg, "psi": lambda r: r.psi_deg, "n3": lambda r: r.n3,
                "k3": lambda r: r.k3, "lambda": lambda r: r.lambda_nm, "n2": lambda r: r.n2,
                "k2": lambda r: r.k2, "d": lambda r: r.d_nm,
            }[col]
            vals = [getter(r) for r in recs]
            mean = sum(vals) / len(vals)
            var = sum((v - mean) ** 2 for v in vals) / len(vals)
            assert abs(m - mean) < 1e-12
            assert abs(s - math.sqrt(var)) < 1e-12


def test_norm_stats_requires_two_records():
    with pytest.raises(DatasetError):
        compute_norm_stats(_dummy_records(1))


def test_normalize_denormalize_roundtrip():
    rng = np.random.default_rng(2)
    vals = rng.normal(size=(50, 3))
    mean, std = (1.0, -2.0, 30.0), (0.5, 2.0, 28.0)
    back = denormalize(normalize(vals, mean, std), mean, std)
    assert np.allclose(back, vals, atol=1e-12)


def test_norm_stats_rejects_nonpositive_std():
    with pytest.raises(DatasetError):
        NormStats((0.0,) * 5, (1.0,) * 5, (0.0,) * 3, (1.0, 0.0, 1.0), (False,) * 5, (False,) * 3)


# ---------------------------------------------------------------------------
# file round-trips
# ---------------------------------------------------------------------------


def test_write_read_roundtrip_is_exact(tmp_path):
    plan = small_plan(seed=2)
    records = synthesize(plan)
    manifest = build_manifest(plan, records)
    write_dataset(str(tmp_path), records, manifest)
    back, mback = read_dataset(str(tmp_path))
    assert back == records
    assert mback.norm == manifest.norm
    assert mback.theta1_deg == manifest.theta1_deg
    assert mback.ratios == manifest.ratios
    assert tuple(mback.column_order) == COLUMN_ORDER


def test_roundtrip_forward_reverification(tmp_path):
    plan = small_plan(seed=4)
    write_dataset(str(tmp_path), synthesize(plan), build_manifest(plan, synthesize(plan)))
    back, mback = read_dataset(str(tmp_path))
    for r in back:
        cfg = ExperimentConfig(mback.theta1_deg, r.lambda_nm, mback.n1, mback.k1)
        pd = forward(LayerStack(r.n2, r.k2, r.d_nm, r.n3, r.k3), cfg)
        assert abs(pd.psi_deg - r.psi_deg) < 1e-9
        assert abs(pd.delta_deg - r.delta_deg) < 1e-9


def test_empty_dataset_roundtrip(tmp_path):
    norm = NormStats((0.0,) * 5, (1.0,) * 5, (0.0,) * 3, (1.0,) * 3, (True,) * 5, (True,) * 3)
    manifest = Manifest(70.0, 1.0, 0.0, 0, (0.8, 0.1, 0.1), COLUMN_ORDER, norm)
    write_dataset(str(tmp_path), [], manifest)
    back, mback = read_dataset(str(tmp_path))
    assert back == []
    assert mback.norm == norm


def test_parse_error_names_line(tmp_path):
    plan = small_plan()
    records = synthesize(plan)[:3]
    write_dataset(str(tmp_path), records, build_manifest(plan, synthesize(plan)))
    csv_path = tmp_path / "records.csv"
    lines = csv_path.read_text().splitlines()
    lines[2] = lines[2].replace(lines[2].split(",")[3], "not_a_number", 1)
    csv_path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetParseError, match="line 3"):
        read_dataset(str(tmp_path))
    lines[2] = "a,b,c"
    csv_path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetParseError, match="line 3"):
        read_dataset(str(tmp_path))


def test_records_to_arrays_column_order():
    r = EllipsometricRecord("f", "s", 500.0, 2.0, 0.25, 10.0, 1.5, 0.75, 11.0, -40.0, "train")
    x, y = records_to_arrays([r])
    assert x.shape == (1, 5) and y.shape == (1, 3)
    assert list(x[0]) == [-40.0, 11.0, 1.5, 0.75, 500.0]  # delta, psi, n3, k3, lambda
    assert list(y[0]) == [2.0, 0.25, 10.0]  # n2, k2, d


def test_default_plan_shape():
    plan = default_plan(seed=0)
    assert len(plan.films) == 10 and len(plan.substrates) == 4
    assert len(plan.lambda_grid) == 64 and len(plan.thickness_levels) == 20
    assert plan.thickness_levels[0] == 1.0 and plan.thickness_levels[-1] == 96.0
