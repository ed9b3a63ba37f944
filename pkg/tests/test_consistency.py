import numpy as np
import pytest

from perturbench.data import ExpressionMatrix
from perturbench.metrics import (avg_cosine, consistency_test, group_avg_cosine,
                                 select_null_perturbations)
from perturbench.oracles import naive_avg_cosine

from conftest import make_meta


def test_avg_cosine_small_cases():
    assert avg_cosine([[3.0, 4.0]]) == pytest.approx(1.0)
    assert avg_cosine([[1.0, 0.0], [-1.0, 0.0]]) == pytest.approx(0.0)
    assert avg_cosine([[1.0, 2.0], [2.0, 4.0], [0.5, 1.0]]) == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(5))
def test_avg_cosine_matches_double_loop(seed):
    x = np.random.default_rng(seed).standard_normal((20, 7))
    assert avg_cosine(x) == pytest.approx(naive_avg_cosine(x), abs=1e-6)
    assert -1 <= avg_cosine(x) <= 1


def test_avg_cosine_drops_zero_rows():
    with pytest.warns(UserWarning):
        assert avg_cosine([[0.0, 0.0], [1.0, 1.0]]) == pytest.approx(1.0)


def test_group_avg_cosine():
    x = np.array([[1.0, 0], [0, 1], [2, 0], [1, 1]])
    got = group_avg_cosine(x, np.array(["a", "a", "b", "b"]))
    assert got["a"] == pytest.approx(0.5)
    assert got["b"] == pytest.approx((2 + 2 / np.sqrt(2)) / 4)


def _expr_with(ctl_profile, genes, n_ctl=4, n_other=2):
    rows = [ctl_profile] * n_ctl + [np.ones(len(genes)) * 100] * n_other
    perts = ["non-targeting"] * n_ctl + genes[:n_other]
    meta = make_meta(perts + [], ["b"] * len(perts))
    return ExpressionMatrix(np.array(rows, dtype=np.float32), genes), meta


def test_null_selection_unexpressed_gene():
    genes = ["G1", "G2", "G3"]
    expr, _ = _expr_with(np.array([0.0, 500, 500]), genes)
    meta = make_meta(["non-targeting"] * 4 + ["G1", "G2"], ["b"] * 6)
    assert select_null_perturbations(expr, meta, 0.01, min_null=1) == ["G1"]
    assert select_null_perturbations(expr, meta, np.inf, min_null=1) == ["G1", "G2"]
    with pytest.raises(ValueError, match="need 5"):
        select_null_perturbations(expr, meta, 0.01, min_null=5)


def test_null_selection_unmapped_labels_warn():
    expr = ExpressionMatrix(np.ones((3, 2), dtype=np.float32) * 10, ["G1", "G2"])
    meta = make_meta(["non-targeting", "G1", "XYZ"], ["b"] * 3)
    with pytest.warns(UserWarning, match="not gene ids"):
        assert select_null_perturbations(expr, meta, np.inf, min_null=1) == ["G1"]


def _pair_group(s):
    # two unit vectors whose avg_cosine is s: (1 + cos)/2 = s
    c = 2 * s - 1
    return [[1.0, 0.0], [c, np.sqrt(max(0.0, 1 - c * c))]]


def _hand_case():
    values = {"N1": 0.1, "N2": 0.2, "N3": 0.3, "N4": 0.4, "N5": 0.5, "T": 0.35, "U": 0.9}
    rows, labels = [], []
    for lab, s in values.items():
        rows += _pair_group(s)
        labels += [lab, lab]
    meta = make_meta(labels, ["b"] * len(labels))
    return np.array(rows), meta, ["N1", "N2", "N3", "N4", "N5"]


def test_right_tail_hand_case():
    x, meta, null = _hand_case()
    res = consistency_test(x, meta, null, alpha=0.25)
    assert res.null_size == 5
    assert res.per_perturbation["T"]["p_value"] == pytest.approx(2 / 5)
    # above every null value: floor at 1/K
    assert res.per_perturbation["U"]["p_value"] == pytest.approx(1 / 5)
    assert res.fraction_significant == pytest.approx(0.5)


def test_left_as_printed_hand_case():
    x, meta, null = _hand_case()
    res = consistency_test(x, meta, null, tail="left_as_printed")
    assert res.per_perturbation["T"]["p_value"] == pytest.approx(3 / 5)
    assert res.per_perturbation["U"]["p_value"] == pytest.approx(1.0)


def test_exchangeable_null_calibration():
    rng = np.random.default_rng(0)
    n_pert, K, reps, d = 1000, 1000, 4, 8
    labels = np.repeat([f"P{i}" for i in range(n_pert)] + [f"N{i}" for i in range(K)], reps)
    x = rng.standard_normal((len(labels), d)) + 0.3
    meta = make_meta(labels, ["b"] * len(labels))
    res = consistency_test(x, meta, [f"N{i}" for i in range(K)])
    assert res.fraction_significant == pytest.approx(0.05, abs=0.02)


def test_consistency_errors():
    x, meta, null = _hand_case()
    with pytest.raises(ValueError):
        consistency_test(x, meta, [])
    with pytest.raises(ValueError):
        consistency_test(x, meta, ["nope"])
    with pytest.raises(ValueError):
        consistency_test(x, meta, null, tail="both")
