import json
import math

import numpy as np
import pytest

from app.core.errors import DomainError, UnsupportedCombinationError
from app.models.enums import Norm
from app.services.systems import LOG2, load_system, make_paper_example
from app.services.transition import (
    TransitionCache, growth_table, min_gain, paper_example_case_offsets, paper_example_closed_form,
    transition,
)
from conftest import assert_same_operator, random_dense_system


def test_transition_examples(example2_cache):
    assert transition(example2_cache, 4, 2).log_mag[0] == pytest.approx(2 * LOG2)
    assert transition(example2_cache, 3, 1).log_mag[0] == pytest.approx(math.log(16.0))
    identity = transition(example2_cache, 7, 7)
    assert identity.log_mag[0] == 0.0 and not identity.is_zero


def test_transition_domain_error(example2_cache):
    with pytest.raises(DomainError):
        transition(example2_cache, 2, 5)
    with pytest.raises(DomainError):
        min_gain(example2_cache, 0, 1)


def test_cache_extends_on_demand(example2):
    cache = TransitionCache(example2, 0)
    value = transition(cache, 50, 3).log_mag[0]
    assert value == pytest.approx(paper_example_closed_form(2.0, 50, 3), abs=1e-9)
    assert cache.horizon == 50


def test_min_gain_examples(const2, diag23):
    assert min_gain(TransitionCache(const2), 5, 2) == pytest.approx(3 * LOG2)
    # 对角元分别为 2^3 和 3^3，取较小者
    assert min_gain(TransitionCache(diag23), 4, 1, Norm.INFINITY) == pytest.approx(3 * LOG2)


def _singular_dense_system():
    identity = [[1.0, 0.0], [0.0, 1.0]]
    return load_system(json.dumps({
        "kind": "explicit",
        "representation": "dense",
        "coeffs": [identity, identity, identity, [[1.0, 0.0], [1.0, 0.0]], [[2.0, 0.0], [0.0, 2.0]]],
        "extension": "constant-tail",
    }))


def test_min_gain_singular_dense():
    cache = TransitionCache(_singular_dense_system(), 8)
    assert min_gain(cache, 2, 0) == pytest.approx(0.0, abs=1e-12)
    assert min_gain(cache, 5, 1) == -math.inf
    assert min_gain(cache, 3, 2) == -math.inf
    assert min_gain(cache, 6, 3) == pytest.approx(3 * LOG2)
    table = growth_table(cache, 6)
    assert table.has_singular
    assert table.value(4, 0) == -math.inf
    assert table.value(6, 3) == pytest.approx(3 * LOG2)


def test_dense_rejects_other_norms():
    cache = TransitionCache(random_dense_system(0, 2), 4)
    with pytest.raises(UnsupportedCombinationError):
        min_gain(cache, 3, 1, Norm.ONE)
    with pytest.raises(UnsupportedCombinationError):
        growth_table(cache, 3, Norm.INFINITY)


def test_dense_min_gain_matches_direct_svd():
    system = random_dense_system(3, 3)
    cache = TransitionCache(system, 10, stride=4)
    product = np.eye(3)
    for step in range(2, 9):
        product = system.coeff_at(step).to_matrix() @ product
    expected = math.log(np.linalg.svd(product, compute_uv=False)[-1])
    assert min_gain(cache, 8, 1) == pytest.approx(expected, abs=1e-9)


def test_growth_table_trivial_window(example2_cache):
    table = growth_table(example2_cache, 0)
    assert table.entries == 1
    assert table.value(0, 0) == 0.0


def test_growth_table_constant(const2):
    frame = growth_table(TransitionCache(const2), 3).to_frame()
    assert len(frame) == 10
    np.testing.assert_allclose(frame["g"], (frame["m"] - frame["n"]) * LOG2, atol=1e-12)


def test_growth_table_example_entry(example2_cache):
    assert growth_table(example2_cache, 4).value(2, 1) == pytest.approx(-LOG2)


@pytest.mark.parametrize("c", [0.5, 1.0, 2.0, math.e])
def test_closed_form_oracle(c):
    system = make_paper_example(c)
    cache = TransitionCache(system, 200)
    frame = growth_table(cache, 200).to_frame()
    expected = [paper_example_closed_form(c, m, n) for m, n in zip(frame["m"], frame["n"])]
    np.testing.assert_allclose(frame["g"], expected, rtol=0, atol=1e-9)
    for m, n in [(200, 0), (199, 2), (150, 75), (101, 100)]:
        assert transition(cache, m, n).log_mag[0] == pytest.approx(paper_example_closed_form(c, m, n), abs=1e-9)


def test_closed_form_examples():
    assert paper_example_closed_form(1.0, 6, 2) == 0.0
    assert paper_example_closed_form(1.0, 5, 2) == pytest.approx(6 * LOG2)
    assert paper_example_closed_form(3.0, 4, 3) == pytest.approx(math.log(3.0) - 4 * LOG2)
    assert paper_example_closed_form(3.0, 9, 9) == 0.0
    with pytest.raises(DomainError):
        paper_example_closed_form(1.0, 1, 2)


def _assert_cocycle(cache, horizon, rtol=1e-9):
    """对全部 m >= n >= p 检查 𝒜_m^p = 𝒜_m^n 𝒜_n^p"""
    products = {(m, n): transition(cache, m, n) for m in range(horizon + 1) for n in range(m + 1)}
    for m in range(horizon + 1):
        for n in range(m + 1):
            left = products[m, n]
            for p in range(n + 1):
                assert_same_operator(products[m, p], left.compose(products[n, p]), rtol)


@pytest.mark.parametrize("fixture", ["example2", "random_diag", "diag23"])
def test_cocycle_scalar_and_diagonal(fixture, request):
    cache = TransitionCache(request.getfixturevalue(fixture), 64)
    _assert_cocycle(cache, 64)


@pytest.mark.parametrize("seed", range(20))
def test_cocycle_dense(seed):
    system = random_dense_system(seed, 1 + seed % 4)
    _assert_cocycle(TransitionCache(system, 32, stride=8), 32, rtol=1e-8)


def test_dense_cache_matches_direct_product():
    system = random_dense_system(5, 2)
    cache = TransitionCache(system, 40, stride=8)
    direct = np.eye(2)
    for step in range(4, 31):
        direct = system.coeff_at(step).to_matrix() @ direct
    result = transition(cache, 30, 3)
    np.testing.assert_allclose(result.to_matrix(), direct, rtol=1e-9, atol=1e-9 * np.max(np.abs(direct)))


def test_query_order_does_not_matter():
    system = random_dense_system(7, 3)
    eager = TransitionCache(system, 40, stride=8)
    lazy = TransitionCache(system, 0, stride=8)
    pairs = [(40, 1), (17, 9), (33, 0), (8, 8), (25, 24)]
    results = [transition(lazy, m, n) for m, n in reversed(pairs)][::-1]
    for (m, n), result in zip(pairs, results):
        assert transition(eager, m, n).same_as(result)


@pytest.mark.parametrize("seed", [0, 4, 9])
def test_min_gain_supermultiplicative(seed):
    table = growth_table(TransitionCache(random_dense_system(seed, 3), 24, stride=4), 24)
    grid = table.grid
    for n in range(25):
        combined = grid[n:, n][:, None] + grid[n, :n + 1][None, :]
        assert np.all(grid[n:, :n + 1] >= combined - 1e-9)


def test_identity_row_is_exact(random_diag):
    for table in (growth_table(TransitionCache(random_diag), 20),
                  growth_table(TransitionCache(random_dense_system(1, 2)), 12)):
        for n in range(table.horizon + 1):
            assert table.value(n, n) == 0.0


def test_growth_csv_export(tmp_path):
    system = load_system('{"kind": "explicit", "coeffs": [1.0, 0.0, 2.0], "extension": "constant-tail"}')
    table = growth_table(TransitionCache(system), 2)
    path = table.to_csv(tmp_path / "growth.csv")
    lines = path.read_text().splitlines()
    assert lines == ["m,n,g", "0,0,0", "1,0,-inf", "1,1,0", "2,0,-inf", "2,1,0.69314718055994529", "2,2,0"]
    summary = table.summary()
    assert summary.neg_inf_entries == 2
    assert summary.g_min == -math.inf


def test_long_window_stays_finite():
    """M = 10^4 时系数早已超出双精度范围，增长表仍是有限的对数和"""
    system = make_paper_example(2.0)
    table = growth_table(TransitionCache(system, 10_000), 10_000)
    assert not table.has_singular
    assert table.value(10_000, 9_999) == pytest.approx(paper_example_closed_form(2.0, 10_000, 9_999), abs=1e-6)
    assert table.value(9_999, 0) == pytest.approx(paper_example_closed_form(2.0, 9_999, 0), abs=1e-6)
    summary = table.summary()
    assert summary.neg_inf_entries == 0
    assert math.isfinite(summary.g_max)
    assert summary.abs_max == pytest.approx(paper_example_closed_form(2.0, 9_999, 0), rel=1e-9)


def test_case_offsets_identify_binding_case():
    offsets = paper_example_case_offsets(2.0, LOG2, 0.0, 16)
    assert max(offsets, key=offsets.get) == "even-odd"
    assert offsets["even-odd"] == pytest.approx(16 * LOG2)
    offsets = paper_example_case_offsets(2.0, LOG2, LOG2, 16)
    assert offsets["even-odd"] == pytest.approx(LOG2)
