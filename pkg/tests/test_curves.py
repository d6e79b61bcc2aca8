import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from fanova.curves import (
    FunctionalDataset,
    RawCurve,
    build_basis,
    evaluate_on_grid,
    fit_curve,
    gcv_scores,
    group_means,
    lambda_grid,
    load_dataset,
    select_lambda_gcv,
    smooth_dataset,
    write_curves_csv,
)
from fanova.errors import SingularFitError, ValidationError


def cox_de_boor(knots, degree, j, x):
    """Textbook recursion, right-continuous, last span closed."""
    if degree == 0:
        lo, hi = knots[j], knots[j + 1]
        if lo <= x < hi:
            return 1.0
        last = hi == knots[-1] and lo < hi
        return 1.0 if (last and x == hi) else 0.0
    out = 0.0
    d1 = knots[j + degree] - knots[j]
    if d1 > 0:
        out += (x - knots[j]) / d1 * cox_de_boor(knots, degree - 1, j, x)
    d2 = knots[j + degree + 1] - knots[j + 1]
    if d2 > 0:
        out += (knots[j + degree + 1] - x) / d2 * cox_de_boor(knots, degree - 1, j + 1, x)
    return out


# ---------------------------------------------------------------------------
# basis

def test_partition_of_unity_101_knots():
    basis = build_basis((0, 1), np.linspace(0, 1, 101), 3)
    x = np.random.default_rng(0).uniform(0, 1, 500)
    E = basis.evaluate(np.concatenate([x, [0.0, 1.0]]))
    np.testing.assert_allclose(E.sum(axis=1), 1.0, atol=1e-10)


@given(st.lists(st.floats(0.01, 0.99), min_size=0, max_size=12), st.integers(1, 5))
@settings(max_examples=60, deadline=None)
def test_partition_of_unity_property(knots, degree):
    basis = build_basis((0, 1), sorted(knots), degree)
    E = basis.evaluate(np.linspace(0, 1, 37))
    np.testing.assert_allclose(E.sum(axis=1), 1.0, atol=1e-10)


def test_dimension_for_49_observed_knots():
    basis = build_basis((0, 720), np.arange(0, 721, 15.0), 3)
    assert basis.dimension == 51
    assert basis.dimension == len(basis.interior_knots) + 3 + 1


def test_dimension_knots_plus_two_for_simulation_grid():
    assert build_basis((0, 1), np.linspace(0, 1, 101), 3).dimension == 103


def test_degree_zero_indicator():
    basis = build_basis((0, 1), [0.5], 0)
    np.testing.assert_array_equal(basis.evaluate(0.25)[0], [1.0, 0.0])
    np.testing.assert_array_equal(basis.evaluate(0.75)[0], [0.0, 1.0])


def test_basis_errors():
    with pytest.raises(ValidationError):
        build_basis((0, 1), [0.6, 0.2], 3)
    with pytest.raises(ValidationError):
        build_basis((1, 1), [], 3)
    with pytest.raises(ValidationError):
        build_basis((0, 1), [0.5, 1.5], 3)
    basis = build_basis((0, 1), [0.5], 3)
    with pytest.raises(ValidationError):
        basis.evaluate([1.2])


def test_random_coefficients_match_cox_de_boor():
    rng = np.random.default_rng(11)
    interior = np.sort(rng.uniform(0, 2, 6))
    basis = build_basis((0, 2), interior, 3)
    coef = rng.normal(size=basis.dimension)
    x = np.sort(rng.uniform(0, 2, 10))
    ours = basis.evaluate(x) @ coef
    knots = list(basis.knots)
    oracle = [sum(c * cox_de_boor(knots, 3, j, xi) for j, c in enumerate(coef)) for xi in x]
    np.testing.assert_allclose(ours, oracle, atol=1e-10)


def test_continuity_at_knots():
    basis = build_basis((0, 1), [0.3, 0.6], 3)
    coef = np.random.default_rng(2).normal(size=basis.dimension)
    for knot in (0.3, 0.6):
        left, mid, right = basis.evaluate([knot - 1e-9, knot, knot + 1e-9]) @ coef
        assert abs(left - mid) < 1e-7 and abs(right - mid) < 1e-7


def test_penalty_matrix_matches_dense_quadrature():
    basis = build_basis((0, 1), [0.2, 0.45, 0.7], 3)
    x = np.linspace(0, 1, 20001)
    D2 = basis.evaluate(x, deriv=2)
    w = np.full(x.size, x[1] - x[0])
    w[[0, -1]] /= 2
    dense = (D2 * w[:, None]).T @ D2
    np.testing.assert_allclose(basis.penalty_matrix, dense, rtol=1e-5, atol=1e-6)


# ---------------------------------------------------------------------------
# fitting

def _curve(t, y, sid="s", grp="A"):
    return RawCurve(sid, grp, t, y)


@pytest.mark.parametrize("lam", [0.0, 1e-4, 1.0, 1e3])
def test_constants_and_lines_reproduced(lam):
    t = np.linspace(0, 1, 25)
    basis = build_basis((0, 1), t, 3)
    dense = np.linspace(0, 1, 200)
    const = fit_curve(_curve(t, np.full(t.size, 4.2)), basis, lam)
    np.testing.assert_allclose(const(dense), 4.2, atol=1e-8)
    line = fit_curve(_curve(t, 1.5 - 2 * t), basis, lam)
    np.testing.assert_allclose(line(dense), 1.5 - 2 * dense, atol=1e-8)


def test_lambda_zero_interpolates():
    rng = np.random.default_rng(3)
    t = np.linspace(0, 1, 40)
    y = np.sin(6 * t) + rng.normal(0, 0.3, t.size)
    fit = fit_curve(_curve(t, y), build_basis((0, 1), t, 3), 0.0)
    assert np.sum((fit(t) - y) ** 2) < 1e-8 * np.sum(y ** 2)


def test_roughness_decreases_with_lambda():
    rng = np.random.default_rng(4)
    t = np.linspace(0, 1, 30)
    y = np.sin(2 * np.pi * t) + rng.normal(0, 0.2, t.size)
    basis = build_basis((0, 1), t, 3)
    dense = np.linspace(0, 1, 4001)
    rough = []
    lams = np.logspace(-8, 3, 20)
    for lam in lams:
        fit = fit_curve(_curve(t, y), basis, lam)
        d2 = basis.evaluate(dense, deriv=2) @ fit.coefficients
        rough.append(trapezoid(d2 ** 2, dense))
    assert np.all(np.diff(rough) <= 1e-9 * rough[0])
    # huge lambda approaches the least-squares line
    slope, icept = np.polyfit(t, y, 1)
    far = fit_curve(_curve(t, y), basis, 1e9)
    np.testing.assert_allclose(far(dense), icept + slope * dense, atol=1e-4)


def test_negative_lambda_rejected():
    t = np.linspace(0, 1, 10)
    with pytest.raises(ValidationError):
        fit_curve(_curve(t, t), build_basis((0, 1), t, 3), -1.0)


def test_singular_fit_names_configuration():
    # every observation in the first span: only 4 of 7 functions are seen
    t = np.linspace(0.0, 0.5, 8)
    basis = build_basis((0, 1), [0.6, 0.75, 0.9], 3)
    with pytest.raises(SingularFitError, match="degree-3 basis with 3 interior knots"):
        fit_curve(_curve(t, np.sin(t)), basis, 0.0)


def test_gcv_noise_selects_near_grid_max():
    rng = np.random.default_rng(5)
    t = np.linspace(0, 1, 50)
    raw = _curve(t, 3.0 + rng.normal(0, 1, t.size))
    basis = build_basis((0, 1), t, 3)
    lams = lambda_grid(t)
    chosen = select_lambda_gcv(raw, basis)
    assert chosen in lams
    assert chosen >= lams[len(lams) * 3 // 4]


def test_gcv_noiseless_line_selects_grid_max():
    t = np.linspace(0, 1, 30)
    basis = build_basis((0, 1), t, 3)
    assert select_lambda_gcv(_curve(t, 2 + 0.5 * t), basis) == lambda_grid(t)[-1]


def test_gcv_larger_gamma_smooths_at_least_as_much():
    rng = np.random.default_rng(6)
    t = np.linspace(0, 1, 60)
    for _ in range(10):
        raw = _curve(t, np.sin(4 * t) + rng.normal(0, 0.3, t.size))
        basis = build_basis((0, 1), t, 3)
        assert select_lambda_gcv(raw, basis, 1.4) >= select_lambda_gcv(raw, basis, 1.0)


def test_gcv_matches_brute_force_formula():
    rng = np.random.default_rng(7)
    t = np.linspace(0, 1, 20)
    raw = _curve(t, np.cos(3 * t) + rng.normal(0, 0.1, t.size))
    basis = build_basis((0, 1), np.linspace(0, 1, 8), 3)
    lam = 1e-3
    scores = gcv_scores(raw, basis, [lam], 1.4)
    # hat matrix by normal equations
    B = basis.evaluate(t)
    H = B @ np.linalg.solve(B.T @ B + lam * basis.penalty_matrix, B.T)
    rss = np.sum((raw.values - H @ raw.values) ** 2)
    n = t.size
    expected = n * rss / (n - 1.4 * np.trace(H)) ** 2
    assert scores[0] == pytest.approx(expected, rel=1e-8)


def test_gcv_all_infinite_raises():
    t = np.linspace(0, 1, 6)
    basis = build_basis((0, 1), t, 3)
    with pytest.raises(ValidationError, match="fewer basis functions"):
        select_lambda_gcv(_curve(t, np.sin(9 * t)), basis, 1.4, lams=[0.0, 1e-12])


def test_gcv_multiplier_below_one_rejected():
    t = np.linspace(0, 1, 10)
    with pytest.raises(ValidationError):
        select_lambda_gcv(_curve(t, t), build_basis((0, 1), t, 3), 0.5)


def test_evaluate_linear_in_coefficients():
    t = np.linspace(0, 1, 12)
    basis = build_basis((0, 1), t, 3)
    a = fit_curve(_curve(t, np.sin(t)), basis, 0.1)
    b = fit_curve(_curve(t, np.cos(t)), basis, 0.1)
    g = np.linspace(0, 1, 33)
    combo = evaluate_on_grid(a, g) * 2 - evaluate_on_grid(b, g)
    direct = basis.evaluate(g) @ (2 * a.coefficients - b.coefficients)
    np.testing.assert_allclose(combo, direct, atol=1e-12)


# ---------------------------------------------------------------------------
# loading

def _long_csv(subjects, groups, times, f):
    lines = ["subject,group,time,value"]
    for s, g in zip(subjects, groups):
        for t in times:
            lines.append(f"{s},{g},{t},{f(s, t)}")
    return "\n".join(lines) + "\n"


def test_load_long():
    times = np.arange(0, 721, 15)
    text = _long_csv(["s1", "s2", "s3"], ["A", "A", "B"], times, lambda s, t: t / 10)
    curves = load_dataset(text)
    assert len(curves) == 3
    assert {c.group for c in curves} == {"A", "B"}
    assert all(c.times.size == 49 for c in curves)


def test_load_long_unsorted_times_are_sorted():
    text = "subject,group,time,value\na,X,2,5\na,X,0,1\na,X,1,3\na,X,3,7\nb,Y,0,0\nb,Y,1,0\nb,Y,2,0\nb,Y,3,0\n"
    a = load_dataset(text)[0]
    np.testing.assert_array_equal(a.times, [0, 1, 2, 3])
    np.testing.assert_array_equal(a.values, [1, 3, 5, 7])


def test_load_wide():
    times = np.arange(0, 721, 15)
    head = "subject,group," + ",".join(f"t_{t}" for t in times)
    rows = [f"s{i},{'AB'[i % 2]}," + ",".join(str(i + t / 100) for t in times) for i in range(4)]
    curves = load_dataset("\n".join([head] + rows) + "\n")
    assert len(curves) == 4 and all(c.times.size == 49 for c in curves)
    assert curves[2].values[1] == pytest.approx(2.15)


@pytest.mark.parametrize(
    "text, message",
    [
        ("subject,group,time,value\na,X,0,1\na,Y,1,1\nb,Y,0,1\n", "line 3"),
        ("subject,group,time,value\na,X,0,1\na,X,0,2\nb,Y,0,1\n", "duplicate"),
        ("subject,group,time,value\na,X,0,oops\n", "line 2"),
        ("subject,group,time,value\na,X,0,1\na,X,1,1\na,X,2,1\na,X,3,1\n", "2 groups"),
        ("subject,time,value\na,0,1\n", "missing"),
        ("", "empty"),
    ],
)
def test_load_errors(text, message):
    with pytest.raises(ValidationError, match=message):
        load_dataset(io.StringIO(text))


def test_load_missing_path():
    with pytest.raises(ValidationError):
        load_dataset("/nonexistent/file.csv")


def test_write_then_load_roundtrip(tmp_path):
    t = np.linspace(0, 1, 6)
    curves = [RawCurve("a", "X", t, t ** 2), RawCurve("b", "Y", t, -t)]
    path = tmp_path / "c.csv"
    write_curves_csv(curves, path)
    back = load_dataset(str(path))
    for c0, c1 in zip(curves, back):
        np.testing.assert_allclose(c0.values, c1.values)
        assert (c0.subject_id, c0.group) == (c1.subject_id, c1.group)


def test_raw_curve_validation():
    with pytest.raises(ValidationError):
        RawCurve("a", "X", [0, 1, 2], [1, 2, 3])
    with pytest.raises(ValidationError):
        RawCurve("a", "X", [0, 2, 1, 3], [1, 2, 3, 4])
    with pytest.raises(ValidationError):
        RawCurve("a", "X", [0, 1, 2, 3], [1, np.nan, 3, 4])


def test_raw_curve_does_not_freeze_caller_arrays():
    t = np.linspace(0, 1, 5)
    RawCurve("a", "X", t, t)
    t[0] = -1.0  # still writable


# ---------------------------------------------------------------------------
# datasets and means

def test_group_means_weighted_grand_mean():
    grid = np.linspace(0, 1, 5)
    groups = ["A"] * 2 + ["B"] * 3 + ["C"] * 5
    values = np.array([[{"A": 1, "B": 2, "C": 3}[g]] * 5 for g in groups], float)
    means, grand = group_means(FunctionalDataset.from_values(values, groups, grid))
    np.testing.assert_allclose(means[:, 0], [1, 2, 3])
    np.testing.assert_allclose(grand, 2.3, atol=1e-12)


def test_group_means_centering_identity():
    rng = np.random.default_rng(8)
    groups = ["A"] * 3 + ["B"] * 6 + ["C"] * 2
    ds = FunctionalDataset.from_values(rng.normal(size=(11, 9)), groups, np.linspace(0, 1, 9))
    means, grand = group_means(ds)
    np.testing.assert_allclose(ds.group_sizes @ (means - grand), 0, atol=1e-9)


def test_group_means_balanced_and_identical():
    grid = np.linspace(0, 1, 7)
    y = np.sin(grid)
    ds = FunctionalDataset.from_values(np.vstack([y] * 4), ["A", "A", "B", "B"], grid)
    means, grand = group_means(ds)
    np.testing.assert_allclose(means, np.vstack([y, y]))
    rng = np.random.default_rng(9)
    ds = FunctionalDataset.from_values(rng.normal(size=(4, 7)), ["A", "A", "B", "B"], grid)
    means, grand = group_means(ds)
    np.testing.assert_allclose(grand, means.mean(axis=0), atol=1e-12)


def test_dataset_needs_two_groups():
    with pytest.raises(ValidationError):
        FunctionalDataset.from_values(np.zeros((2, 3)), ["A", "A"], [0, 1, 2])


def test_smooth_dataset_interpolating_reproduces_data():
    rng = np.random.default_rng(10)
    t = np.linspace(0, 1, 21)
    curves = [RawCurve(f"s{i}", "AB"[i % 2], t, rng.normal(size=t.size)) for i in range(6)]
    ds = smooth_dataset(curves, lam=0.0)
    np.testing.assert_allclose(ds.values, np.vstack([c.values for c in curves]), atol=1e-8)
    assert ds.group_names == ("A", "B")
    assert len(ds.curves) == 6


def test_smooth_dataset_gcv_and_equispaced_knots():
    rng = np.random.default_rng(12)
    t = np.linspace(0, 720, 49)
    curves = [RawCurve(f"s{i}", "AB"[i % 2], t, 50 * np.tanh(t / 200) + rng.normal(0, 1, t.size)) for i in range(4)]
    ds = smooth_dataset(curves, knots=12, lam="gcv")
    assert ds.curves[0].basis.dimension == 14
    assert all(c.lam > 0 for c in ds.curves)


def test_smooth_dataset_domains_must_agree():
    a = RawCurve("a", "X", np.linspace(0, 1, 6), np.zeros(6))
    b = RawCurve("b", "Y", np.linspace(0, 2, 6), np.zeros(6))
    with pytest.raises(ValidationError, match="1%"):
        smooth_dataset([a, b], lam=0.0)
