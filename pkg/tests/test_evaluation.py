import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adhfr.evaluation import (EvalReport, ScoreMatrix, aggregate_folds, cosine_similarity, evaluate_scores,
                              rank1, read_report_csv, report_csv, roc_and_vr, roc_csv, roc_svg)
from oracles import brute_pairs, brute_rank1, brute_roc, brute_vr, random_instance


def worked_example():
    # probe 0 (id 0): genuine 0.9, impostors 0.8, 0.1 ; probe 1 (id 1): genuine 0.2, impostors 0.05, 0.0
    scores = np.array([[0.9, 0.8, 0.1], [0.05, 0.2, 0.0]])
    return ScoreMatrix(np.array([0, 1, 2]), np.array([0, 1]), scores)


def test_cosine_examples():
    a = np.array([1.0, 2.0, 3.0])
    assert cosine_similarity(a, a) == pytest.approx(1.0)
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity(2 * a, [3.0, -1.0, 0.5]) == pytest.approx(cosine_similarity(a, [3.0, -1.0, 0.5]))
    with pytest.raises(ValueError):
        cosine_similarity([0, 0], [1, 0])


def test_rank1_singleton_and_perfect_match():
    sm = ScoreMatrix.from_features(np.eye(2), [1, 2], np.array([[0.9, 0.1]]), [1])
    assert rank1(sm) == 1.0
    feats = np.random.default_rng(0).normal(size=(5, 8))
    assert rank1(ScoreMatrix.from_features(feats, range(5), feats, range(5))) == 1.0


def test_rank1_ties_go_to_lowest_gallery_index():
    sm = ScoreMatrix(np.array([7, 8]), np.array([8]), np.array([[0.5, 0.5]]))
    assert rank1(sm) == 0.0


def test_rank1_of_random_features_is_chance():
    rng = np.random.default_rng(3)
    g, n = 10, 4000
    sm = ScoreMatrix.from_features(rng.normal(size=(g, 256)), range(g), rng.normal(size=(n, 256)),
                                   rng.integers(0, g, size=n))
    p = 1 / g
    assert abs(rank1(sm) - p) < 3 * math.sqrt(p * (1 - p) / n)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 100))
def test_rank1_is_scale_invariant(seed, scale):
    rng = np.random.default_rng(seed)
    gal, probes = rng.normal(size=(6, 16)), rng.normal(size=(20, 16))
    ids = rng.integers(0, 6, size=20)
    a = ScoreMatrix.from_features(gal, range(6), probes, ids)
    b = ScoreMatrix.from_features(gal * scale, range(6), probes * rng.uniform(0.1, 10, size=(20, 1)), ids)
    assert rank1(a) == rank1(b)


def test_worked_vr_example():
    _, vr = roc_and_vr(worked_example(), [0.25])
    assert vr[0.25] == 0.5


def test_perfect_separation_gives_full_vr():
    sm = ScoreMatrix(np.array([0, 1]), np.array([0, 1, 0]), np.array([[0.9, -0.2], [0.1, 0.8], [0.7, 0.3]]))
    _, vr = roc_and_vr(sm, [1e-2, 1e-3, 1e-4])
    assert set(vr.values()) == {1.0}


def test_roc_shape_and_endpoints():
    roc, _ = roc_and_vr(worked_example())
    assert tuple(roc[0]) == (0.0, 0.0)
    assert tuple(roc[-1]) == (1.0, 1.0)
    assert np.all(np.diff(roc[:, 0]) >= 0) and np.all(np.diff(roc[:, 1]) >= 0)


def test_needs_genuine_and_impostor_pairs():
    with pytest.raises(ValueError):
        roc_and_vr(ScoreMatrix(np.array([0]), np.array([0, 0]), np.array([[0.3], [0.4]])))


def test_closed_set_and_range_checked():
    with pytest.raises(ValueError):
        ScoreMatrix(np.array([0, 1]), np.array([5]), np.array([[0.1, 0.2]]))
    with pytest.raises(ValueError):
        ScoreMatrix(np.array([0, 1]), np.array([1]), np.array([[0.1, 1.5]]))


@pytest.mark.parametrize("seed", range(10))
def test_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    gallery_ids, probe_ids, scores = random_instance(rng)
    sm = ScoreMatrix(np.array(gallery_ids), np.array(probe_ids), scores)
    genuine, impostor = brute_pairs(scores.tolist(), gallery_ids, probe_ids)
    if not genuine:
        pytest.skip("no genuine pairs drawn")
    targets = [0.5, 0.1, 1e-2, 1e-3, 1e-4]
    roc, vr = roc_and_vr(sm, targets)
    assert rank1(sm) == brute_rank1(scores.tolist(), gallery_ids, probe_ids)
    assert [tuple(p) for p in roc.tolist()] == brute_roc(genuine, impostor)
    for t in targets:
        assert vr[t] == brute_vr(genuine, impostor, t)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_vr_monotone_in_far_target(seed):
    gallery_ids, probe_ids, scores = random_instance(np.random.default_rng(seed), 8, 30)
    sm = ScoreMatrix(np.array(gallery_ids), np.array(probe_ids), scores)
    targets = [1.0, 0.5, 0.2, 0.1, 0.05, 0.01, 1e-3, 1e-4]
    _, vr = roc_and_vr(sm, targets)
    values = [vr[t] for t in targets]
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert all(0 <= v <= 1 for v in values)


def _fold(r1, vr):
    return EvalReport(r1, {1e-2: vr, 1e-3: vr / 2, 1e-4: vr / 4}, np.array([[0.0, 0.0], [1.0, 1.0]]))


def test_aggregate_examples():
    agg = aggregate_folds([_fold(0.96, 0.8), _fold(0.98, 0.8)])
    assert agg.rank1 == pytest.approx(0.97)
    assert agg.std["rank1"] == pytest.approx(math.sqrt(2) / 100)
    assert agg.std["vr@far=0.01"] == 0.0
    single = aggregate_folds([_fold(0.9, 0.5)])
    assert single.rank1 == 0.9 and single.std["rank1"] == 0.0


def test_aggregate_roc_is_monotone():
    a = EvalReport(0.5, {0.01: 0.1}, np.array([[0.0, 0.0], [0.2, 0.6], [1.0, 1.0]]))
    b = EvalReport(0.7, {0.01: 0.3}, np.array([[0.0, 0.0], [0.5, 0.9], [1.0, 1.0]]))
    roc = aggregate_folds([a, b]).roc
    assert np.all(np.diff(roc[:, 0]) > 0) and np.all(np.diff(roc[:, 1]) >= 0)
    np.testing.assert_allclose(roc[roc[:, 0] == 0.2, 1], [0.3])


def test_report_csv_round_trip(tmp_path):
    agg = aggregate_folds([_fold(0.96, 0.8), _fold(0.98, 0.6)])
    path = tmp_path / "r.csv"
    path.write_text(report_csv(agg))
    rows = read_report_csv(path)
    assert list(rows) == ["0", "1", "mean", "std"]
    assert rows["mean"]["rank1"] == agg.rank1
    assert rows["1"]["vr@far=0.01"] == 0.6


def test_roc_outputs():
    report = evaluate_scores(worked_example())
    text = roc_csv(report.roc)
    assert text.splitlines()[0] == "far,vr" and len(text.splitlines()) == len(report.roc) + 1
    svg = roc_svg(report.roc)
    assert svg.startswith("<svg") and "<polyline" in svg
