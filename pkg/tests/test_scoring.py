import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from concepttree import (
    BuildConfig,
    CandidatePair,
    ConsistencyReport,
    StopDecision,
    consistency,
    consistency_matrix,
    curate_training_set,
    evaluate_stop,
    measure_reconstruction,
    score_candidate,
    select_best_seed,
)
from concepttree.scoring import EmptyCandidatesError, ScoringError, render_heatmap

from conftest import vector_set


def cosine(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))


def brute_force_self(rows):
    n = len(rows)
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                total += cosine(rows[i], rows[j])
    return total / (n * (n - 1))


def brute_force_cross(rows_a, rows_b):
    total = 0.0
    for u in rows_a:
        for v in rows_b:
            total += cosine(u, v)
    return total / (len(rows_a) * len(rows_b))


def nonzero_rows(draw_rows, dim, rng):
    rows = rng.standard_normal((draw_rows, dim))
    rows[np.linalg.norm(rows, axis=1) < 1e-3] += 1.0
    return rows.astype(np.float32)


def test_self_consistency_matches_brute_force():
    rng = np.random.default_rng(0)
    for trial in range(20):
        n = int(rng.integers(2, 11))
        dim = int(rng.integers(4, 65))
        rows = nonzero_rows(n, dim, rng)
        image_set = vector_set(rows, cache=True)
        assert consistency(image_set, image_set) == pytest.approx(
            brute_force_self(rows), abs=1e-9
        )


def test_cross_consistency_matches_brute_force_and_is_symmetric():
    rng = np.random.default_rng(1)
    for trial in range(20):
        a = vector_set(nonzero_rows(int(rng.integers(1, 8)), 16, rng), prefix="a", cache=True)
        b = vector_set(nonzero_rows(int(rng.integers(1, 8)), 16, rng), prefix="b", cache=True)
        forward = consistency(a, b)
        assert forward == pytest.approx(
            brute_force_cross(a.cached_embeddings, b.cached_embeddings), abs=1e-9
        )
        assert forward == pytest.approx(consistency(b, a), abs=1e-12)
        assert -1.0 <= forward <= 1.0


def test_identical_rows_score_one():
    rows = np.tile(np.array([1.0, 2.0, 3.0], dtype=np.float32), (4, 1))
    s = vector_set(rows, cache=True)
    assert consistency(s, s) == pytest.approx(1.0, abs=1e-7)


def test_antipodal_rows_score_minus_one():
    rows = np.array([[1.0, 0.0], [-1.0, 0.0]], dtype=np.float32)
    a = vector_set(rows[:1], prefix="a", cache=True)
    b = vector_set(rows[1:], prefix="b", cache=True)
    assert consistency(a, b) == pytest.approx(-1.0, abs=1e-7)
    s = vector_set(rows, cache=True)
    assert consistency(s, s) == pytest.approx(-1.0, abs=1e-7)


@given(
    rows=hnp.arrays(
        np.float64,
        st.tuples(st.integers(2, 6), st.integers(2, 8)),
        elements=st.floats(-10, 10, allow_nan=False),
    ),
    scale=st.floats(0.01, 100.0),
)
@settings(max_examples=80, deadline=None)
def test_consistency_scale_invariance_and_bounds(rows, scale):
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms < 1e-6):
        rows = rows + np.eye(rows.shape[0], rows.shape[1]) * 20.0 + 1.0
    base = vector_set(rows.astype(np.float32), cache=True)
    scaled = vector_set((rows * scale).astype(np.float32), prefix="s", cache=True)
    a = consistency(base, base)
    b = consistency(scaled, scaled)
    assert abs(a - b) < 1e-5
    assert -1.0 - 1e-9 <= a <= 1.0 + 1e-9


def test_consistency_input_validation():
    single = vector_set(np.ones((1, 3), dtype=np.float32), cache=True)
    pair = vector_set(np.ones((2, 3), dtype=np.float32), prefix="p", cache=True)
    with pytest.raises(ScoringError):
        consistency(single, single)
    empty = vector_set(np.ones((0, 3), dtype=np.float32).reshape(0, 3), cache=False)
    with pytest.raises(ScoringError):
        consistency(pair, empty)
    zero = vector_set(np.zeros((2, 3), dtype=np.float32), prefix="z", cache=True)
    with pytest.raises(ScoringError):
        consistency(zero, zero)


def test_embedder_fills_cache_once():
    rows = np.eye(3, dtype=np.float32)
    image_set = vector_set(rows, cache=False)
    calls = []

    def embedder(image):
        calls.append(image.image_id)
        return np.asarray(image.payload)

    consistency(image_set, image_set, embedder)
    assert sorted(calls) == [img.image_id for img in image_set]
    consistency(image_set, image_set, embedder)
    assert len(calls) == 3
    np.testing.assert_allclose(image_set.cached_embeddings, rows)


def test_uncached_set_without_embedder_fails():
    image_set = vector_set(np.eye(2, dtype=np.float32), cache=False)
    with pytest.raises(ScoringError):
        consistency(image_set, image_set)


def test_score_candidate_assembles_report():
    left = vector_set(np.float32([[1, 0], [1, 0.1]]), prefix="l", cache=True)
    right = vector_set(np.float32([[0, 1], [0.1, 1]]), prefix="r", cache=True)
    report = score_candidate(left, right)
    assert report.self_left == pytest.approx(consistency(left, left))
    assert report.self_right == pytest.approx(consistency(right, right))
    assert report.cross == pytest.approx(consistency(left, right))
    expected = report.self_left + report.self_right + (report.min_self - report.cross)
    assert report.objective == pytest.approx(expected)
    assert report.min_self == min(report.self_left, report.self_right)


def make_candidate(seed, self_left, self_right, cross):
    samples = vector_set(np.eye(2, dtype=np.float32), prefix=f"c{seed}-", cache=True)
    return CandidatePair(
        seed=seed,
        left_embedding=np.zeros(2, np.float32),
        right_embedding=np.zeros(2, np.float32),
        left_samples=samples,
        right_samples=samples,
        report=ConsistencyReport.from_scores(self_left, self_right, cross),
    )


def test_select_best_seed_matches_exhaustive_argmax():
    rng = np.random.default_rng(5)
    for trial in range(100):
        size = int(rng.integers(1, 9))
        candidates = []
        for i in range(size):
            selves = np.round(rng.uniform(-0.5, 1.0, size=2), 6)
            cross = float(np.round(rng.uniform(-1.0, min(selves)), 6))
            candidates.append(
                make_candidate(int(rng.integers(0, 10_000)), selves[0], selves[1], cross)
            )
        best = select_best_seed(candidates)
        top = max(c.report.objective for c in candidates)
        winners = [c for c in candidates if c.report.objective == top]
        assert best is min(winners, key=lambda c: c.seed)


def test_select_best_seed_breaks_ties_by_lowest_seed():
    tied = [
        make_candidate(1234, 0.8, 0.7, 0.4),
        make_candidate(0, 0.8, 0.7, 0.4),
        make_candidate(1000, 0.8, 0.7, 0.4),
    ]
    assert select_best_seed(tied).seed == 0
    assert select_best_seed(tied[:1]).seed == 1234
    with pytest.raises(EmptyCandidatesError):
        select_best_seed([])


def test_curation_matches_brute_force_ranking():
    rng = np.random.default_rng(7)
    for trial in range(15):
        size = int(rng.integers(3, 12))
        rows = nonzero_rows(size, 8, rng)
        pool = vector_set(rows, cache=True)
        n = int(rng.integers(1, size + 1))
        kept = curate_training_set(pool, n)
        wide = rows.astype(np.float64)
        unit = wide / np.linalg.norm(wide, axis=1, keepdims=True)
        gram = unit @ unit.T
        mean_sim = (gram.sum(axis=1) - np.diag(gram)) / (size - 1)
        expected = sorted(range(size), key=lambda i: (-mean_sim[i], i))[:n]
        assert [img.image_id for img in kept] == [pool.images[i].image_id for i in expected]


def test_curation_keeps_the_coherent_core():
    rng = np.random.default_rng(11)
    core = np.tile([1.0, 0.0, 0.0, 0.0], (6, 1)) + 0.01 * rng.standard_normal((6, 4))
    outliers = rng.standard_normal((4, 4)) * 2.0
    rows = np.vstack([core, outliers]).astype(np.float32)
    pool = vector_set(rows, cache=True)
    kept = curate_training_set(pool, 6)
    kept_ids = {img.image_id for img in kept}
    assert kept_ids == {pool.images[i].image_id for i in range(6)}


def test_curation_validation():
    pool = vector_set(np.eye(3, dtype=np.float32), cache=True)
    with pytest.raises(ScoringError):
        curate_training_set(pool, 0)
    with pytest.raises(ScoringError):
        curate_training_set(pool, 4)
    single = vector_set(np.ones((1, 3), dtype=np.float32), cache=True)
    with pytest.raises(ScoringError):
        curate_training_set(single, 1)


def test_stop_rule_thresholds_and_precedence():
    config = BuildConfig()
    ok = ConsistencyReport.from_scores(0.9, 0.8, 0.3)
    assert evaluate_stop(ok, config) == StopDecision.SPLIT_OK
    weak = ConsistencyReport.from_scores(0.9, 0.55, 0.3)
    assert evaluate_stop(weak, config) == StopDecision.LEAF_INCOHERENT
    close = ConsistencyReport.from_scores(0.9, 0.8, 0.75)
    assert evaluate_stop(close, config) == StopDecision.LEAF_NOT_DISTINCT
    # an incoherent child wins even when the siblings also fail distinctness
    both = ConsistencyReport.from_scores(0.9, 0.55, 0.75)
    assert evaluate_stop(both, config) == StopDecision.LEAF_INCOHERENT
    # thresholds are inclusive for cross, exclusive for self
    edge_self = ConsistencyReport.from_scores(0.70, 0.70, 0.3)
    assert evaluate_stop(edge_self, config) == StopDecision.SPLIT_OK
    edge_cross = ConsistencyReport.from_scores(0.9, 0.8, 0.70)
    assert evaluate_stop(edge_cross, config) == StopDecision.LEAF_NOT_DISTINCT


def test_measure_reconstruction_is_cross_consistency():
    a = vector_set(np.float32([[1, 0], [0.9, 0.1]]), prefix="a", cache=True)
    b = vector_set(np.float32([[1, 0.05], [0.8, 0.1]]), prefix="b", cache=True)
    assert measure_reconstruction(a, b) == pytest.approx(consistency(a, b))


def test_consistency_matrix_layout():
    rng = np.random.default_rng(3)
    sets = {
        "v1": vector_set(nonzero_rows(3, 4, rng), prefix="a", cache=True),
        "v2": vector_set(nonzero_rows(4, 4, rng), prefix="b", cache=True),
        "v3": vector_set(nonzero_rows(2, 4, rng), prefix="c", cache=True),
    }
    matrix = consistency_matrix(sets)
    assert matrix.labels == ("v1", "v2", "v3")
    assert matrix.scores.shape == (3, 3)
    np.testing.assert_allclose(matrix.scores, matrix.scores.T, atol=1e-12)
    for i, label in enumerate(matrix.labels):
        s = sets[label]
        assert matrix.scores[i, i] == pytest.approx(consistency(s, s))
    assert matrix.scores[0, 1] == pytest.approx(consistency(sets["v1"], sets["v2"]))
    payload = matrix.to_json()
    assert payload["labels"] == ["v1", "v2", "v3"]
    with pytest.raises(ScoringError):
        consistency_matrix([])
    with pytest.raises(ScoringError):
        consistency_matrix([("x", sets["v1"]), ("x", sets["v2"])])


def test_render_heatmap_writes_png(tmp_path):
    rng = np.random.default_rng(4)
    sets = [
        ("v1", vector_set(nonzero_rows(3, 4, rng), prefix="a", cache=True)),
        ("v2", vector_set(nonzero_rows(3, 4, rng), prefix="b", cache=True)),
    ]
    matrix = consistency_matrix(sets)
    out = tmp_path / "heat.png"
    render_heatmap(matrix, out)
    data = out.read_bytes()
    assert data[:8] == b"\x89PNG\r\n\x1a\n"
    assert len(data) > 1000
