import math

import numpy as np
import pytest

from lesionsearch.retrieval import (
    EVAL_SETTINGS,
    Index,
    RankedList,
    average_precision_at_k,
    build_index,
    classification_report,
    evaluate,
    knn_classify,
    load_index,
    normalize_setting,
    precision_at_k,
    query,
    save_index,
)


def unit_rows(rng, n, dim):
    m = rng.standard_normal((n, dim))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def toy_index(rng, n=8, dim=4, patients=("p1", "p2"), labels=("L1", "L2")):
    emb = unit_rows(rng, n, dim)
    ids = [f"e{i}" for i in range(n)]
    pats = [patients[i % len(patients)] for i in range(n)]
    labs = [labels[(i // len(patients)) % len(labels)] for i in range(n)]
    studies = [f"s{i}" for i in range(n)]
    return build_index(ids, emb, pats, studies, labs)


def brute_force_ranking(index: Index, q, setting, query_patient, exclude_id):
    """Independent oracle: python-level filtering, distances, and sort."""
    rows = []
    for pos in range(index.count):
        pid = index.patient_ids[pos]
        if setting == "same_patient" and pid != query_patient:
            continue
        if setting == "cross_patient" and pid == query_patient:
            continue
        if index.ids[pos] == exclude_id:
            continue
        dist = 1.0 - float(np.dot(index.matrix[pos], q))
        rows.append((dist, pos, index.ids[pos]))
    rows.sort(key=lambda r: (r[0], r[1]))
    return [(rid, dist) for dist, _, rid in rows]


def brute_force_eval(index: Index, setting):
    """Independent oracle for the evaluation protocol."""
    aps, p1s, p10s = [], [], []
    for pos in range(index.count):
        q = index.matrix[pos]
        ranked = brute_force_ranking(index, q, setting, index.patient_ids[pos], index.ids[pos])
        if not ranked:
            continue
        pool_ids = {rid for rid, _ in ranked}
        relevant = {
            index.ids[j]
            for j in range(index.count)
            if index.lesion_types[j] == index.lesion_types[pos] and index.ids[j] in pool_ids
        }
        hits = 0
        ap = 0.0
        for rank, (rid, _) in enumerate(ranked[:10], start=1):
            if rid in relevant:
                hits += 1
                ap += hits / rank
        ap = ap / min(len(relevant), 10) if relevant else 0.0
        aps.append(ap)
        p1s.append(sum(1 for rid, _ in ranked[:1] if rid in relevant) / 1)
        p10s.append(sum(1 for rid, _ in ranked[:10] if rid in relevant) / 10)
    return np.mean(aps), np.mean(p1s), np.mean(p10s), len(aps)


class TestBuildIndex:
    def test_empty_index_queryable(self, rng):
        idx = build_index([], np.zeros((0, 4)), [], [], [])
        assert idx.count == 0
        assert len(query(idx, unit_rows(rng, 1, 4)[0])) == 0

    def test_duplicate_id_named(self, rng):
        emb = unit_rows(rng, 2, 3)
        with pytest.raises(ValueError, match="dup1"):
            build_index(["dup1", "dup1"], emb, ["p", "p"], ["s", "s"], ["a", "a"])

    def test_non_unit_vector_named(self, rng):
        emb = unit_rows(rng, 2, 3)
        emb[1] *= 1.5
        with pytest.raises(ValueError, match="bad"):
            build_index(["ok", "bad"], emb, ["p", "p"], ["s", "s"], ["a", "a"])

    def test_count_and_histogram(self, rng):
        idx = toy_index(rng)
        assert idx.count == 8
        hist = idx.label_histogram()
        assert sum(hist.values()) == 8


class TestQuery:
    def test_exact_match_first_at_zero(self, rng):
        idx = toy_index(rng)
        ranked = query(idx, idx.matrix[3], k=5)
        assert ranked.items[0][0] == "e3"
        assert ranked.items[0][1] <= 1e-12

    def test_k_larger_than_pool(self, rng):
        idx = toy_index(rng, n=4)
        assert len(query(idx, idx.matrix[0], k=50)) == 4

    def test_hand_ranked_toy(self):
        # distances 0.1, 0.4, 0.2 -> order e1, e3, e2
        q = np.array([1.0, 0.0])
        emb = np.array(
            [
                [0.9, math.sqrt(1 - 0.81)],
                [0.6, 0.8],
                [0.8, 0.6],
            ]
        )
        idx = build_index(["e1", "e2", "e3"], emb, ["p"] * 3, ["s"] * 3, ["a"] * 3)
        ranked = query(idx, q, k=3)
        assert ranked.ids() == ["e1", "e3", "e2"]
        assert [round(d, 12) for _, d in ranked.items] == [0.1, 0.2, 0.4]

    def test_matches_brute_force_oracle(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 64))
            idx = toy_index(rng, n=n, patients=("p1", "p2", "p3"))
            q = unit_rows(rng, 1, 4)[0]
            setting = EVAL_SETTINGS[int(rng.integers(3))]
            patient = "p1"
            exclude = idx.ids[int(rng.integers(n))] if rng.random() < 0.5 else None
            mine = query(idx, q, k=n, setting=setting, query_patient=patient, exclude_id=exclude)
            oracle = brute_force_ranking(idx, q, setting, patient, exclude)
            assert mine.ids() == [rid for rid, _ in oracle]
            np.testing.assert_allclose(
                [d for _, d in mine.items], [d for _, d in oracle], atol=1e-12
            )

    def test_ordering_invariant_under_monotone_transform(self, rng):
        idx = toy_index(rng, n=20)
        q = unit_rows(rng, 1, 4)[0]
        ranked = query(idx, q, k=20)
        dists = np.array([d for _, d in ranked.items])
        squared_order = np.argsort(dists**2, kind="stable")
        assert list(squared_order) == sorted(squared_order)

    def test_setting_filters(self, rng):
        idx = toy_index(rng)
        same = query(idx, idx.matrix[0], k=8, setting="same_patient", query_patient="p1")
        assert all(rid in {idx.ids[i] for i in range(8) if idx.patient_ids[i] == "p1"} for rid in same.ids())
        cross = query(idx, idx.matrix[0], k=8, setting="cross_patient", query_patient="p1")
        assert all(rid in {idx.ids[i] for i in range(8) if idx.patient_ids[i] != "p1"} for rid in cross.ids())
        assert len(same) + len(cross) == 8

    def test_empty_pool_returns_empty(self, rng):
        idx = toy_index(rng, patients=("solo",))
        ranked = query(idx, idx.matrix[0], k=3, setting="cross_patient", query_patient="solo")
        assert len(ranked) == 0

    def test_non_unit_query_rejected(self, rng):
        idx = toy_index(rng)
        with pytest.raises(ValueError, match="unit-norm"):
            query(idx, np.full(4, 0.9))

    def test_setting_aliases(self):
        assert normalize_setting("all") == "all_patients"
        with pytest.raises(ValueError):
            normalize_setting("sideways")


class TestMetrics:
    def ranked(self, ids):
        return RankedList(items=tuple((i, 0.1 * n) for n, i in enumerate(ids)))

    def test_precision_counting(self):
        ranked = self.ranked([f"r{i}" for i in range(12)])
        assert precision_at_k(ranked, {"r0", "r2"}, 10) == pytest.approx(0.2)
        assert precision_at_k(ranked, {"r0"}, 1) == 1.0
        assert precision_at_k(ranked, {"nope"}, 10) == 0.0

    def test_precision_short_list_keeps_denominator(self):
        ranked = self.ranked(["a", "b", "c"])
        assert precision_at_k(ranked, {"a", "b", "c"}, 10) == pytest.approx(0.3)

    def test_average_precision_example(self):
        # hits at ranks 1 and 3, two relevant total
        ranked = self.ranked([f"r{i}" for i in range(12)])
        got = average_precision_at_k(ranked, {"r0", "r2"}, 10)
        assert got == pytest.approx((1.0 + 2.0 / 3.0) / 2.0, rel=1e-12)

    def test_average_precision_all_relevant(self):
        ranked = self.ranked(["a", "b", "c"])
        assert average_precision_at_k(ranked, {"a", "b", "c"}, 10) == 1.0

    def test_average_precision_no_relevant_in_pool(self):
        ranked = self.ranked(["a", "b"])
        assert average_precision_at_k(ranked, {"zzz"}, 10) == 0.0


class TestEvaluate:
    def test_single_label_map_is_one(self, rng):
        emb = unit_rows(rng, 6, 3)
        idx = build_index(
            [f"e{i}" for i in range(6)], emb, ["p1", "p2"] * 3, ["s"] * 6, ["same"] * 6
        )
        report = evaluate(idx, "all_patients")
        assert report.map_at_10 == 1.0
        assert report.precision_at_1 == 1.0

    def test_matches_brute_force_toy(self, rng):
        idx = toy_index(rng)  # 2 patients x 2 labels, 8 entries
        for setting in EVAL_SETTINGS:
            report = evaluate(idx, setting)
            o_map, o_p1, o_p10, o_count = brute_force_eval(idx, setting)
            assert report.query_count == o_count
            assert report.map_at_10 == pytest.approx(o_map, abs=1e-12)
            assert report.precision_at_1 == pytest.approx(o_p1, abs=1e-12)
            assert report.precision_at_10 == pytest.approx(o_p10, abs=1e-12)

    def test_matches_brute_force_random_corpora(self, rng):
        for trial in range(60):
            n = int(rng.integers(4, 40))
            idx = toy_index(rng, n=n, patients=("p1", "p2", "p3"), labels=("a", "b", "c"))
            setting = EVAL_SETTINGS[trial % 3]
            report = evaluate(idx, setting)
            o_map, o_p1, o_p10, o_count = brute_force_eval(idx, setting)
            assert report.query_count == o_count
            assert report.map_at_10 == pytest.approx(o_map, abs=1e-12)
            assert report.precision_at_10 == pytest.approx(o_p10, abs=1e-12)

    def test_shuffle_invariance(self, rng):
        idx = toy_index(rng, n=12)
        perm = rng.permutation(12)
        shuffled = build_index(
            [idx.ids[i] for i in perm],
            idx.matrix[perm],
            [idx.patient_ids[i] for i in perm],
            [idx.study_ids[i] for i in perm],
            [idx.lesion_types[i] for i in perm],
        )
        a = evaluate(idx, "all_patients")
        b = evaluate(shuffled, "all_patients")
        assert a.map_at_10 == pytest.approx(b.map_at_10, abs=1e-12)

    def test_homogeneous_patients_same_beats_cross(self, rng):
        # patients hold a single label each; the same-patient pool is all
        # relevant while the cross pool mixes labels
        n_per = 12
        rows, ids, pats, labs = [], [], [], []
        for c, label in enumerate(("x", "y")):
            center = np.eye(3)[c]
            for i in range(n_per):
                v = center + 0.15 * rng.standard_normal(3)
                rows.append(v / np.linalg.norm(v))
                ids.append(f"{label}{i}")
                pats.append(f"pat_{label}")
                labs.append(label)
        idx = build_index(ids, np.array(rows), pats, ["s"] * len(ids), labs)
        same = evaluate(idx, "same_patient")
        cross = evaluate(idx, "cross_patient")
        assert same.precision_at_10 >= cross.precision_at_10

    def test_unusable_queries_raise(self, rng):
        emb = unit_rows(rng, 3, 3)
        idx = build_index(
            ["a", "b", "c"], emb, ["p1", "p2", "p3"], ["s"] * 3, ["L"] * 3
        )
        with pytest.raises(ValueError, match="same_patient"):
            evaluate(idx, "same_patient")  # singleton patients: empty pools

    def test_empty_index_rejected(self):
        idx = build_index([], np.zeros((0, 3)), [], [], [])
        with pytest.raises(ValueError, match="empty"):
            evaluate(idx, "all_patients")


class TestKnn:
    def test_exact_match_k1(self, rng):
        idx = toy_index(rng)
        assert knn_classify(idx, idx.matrix[2], k=1) == idx.lesion_types[2]

    def test_majority(self):
        q = np.array([1.0, 0.0])
        emb = np.array([[1.0, 0.0], [0.99, math.sqrt(1 - 0.9801)], [0.0, 1.0]])
        idx = build_index(["a1", "a2", "b1"], emb, ["p"] * 3, ["s"] * 3, ["A", "A", "B"])
        assert knn_classify(idx, q, k=3) == "A"

    def test_tie_breaks_by_mean_distance(self):
        q = np.array([1.0, 0.0])

        def at(c):
            return [c, math.sqrt(1 - c * c)]

        emb = np.array([at(0.9), at(0.7), at(0.8), at(0.6)])
        idx = build_index(
            ["a1", "a2", "b1", "b2"], emb, ["p"] * 4, ["s"] * 4, ["A", "A", "B", "B"]
        )
        # counts tie at 2; A mean distance (0.1 + 0.3)/2 beats B (0.2 + 0.4)/2
        assert knn_classify(idx, q, k=4) == "A"


class TestClassificationReport:
    def test_perfect(self):
        acc, f1 = classification_report(["A", "B"], ["A", "B"])
        assert acc == 1.0 and f1 == 1.0

    def test_confusion_arithmetic(self):
        acc, f1 = classification_report(["A", "B", "B", "B"], ["A", "A", "B", "B"])
        assert acc == pytest.approx(0.75)
        assert f1 == pytest.approx((2 / 3 + 0.8) / 2, rel=1e-12)

    def test_single_class_all_correct(self):
        acc, f1 = classification_report(["A", "A"], ["A", "A"])
        assert acc == 1.0 and f1 == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            classification_report(["A"], ["A", "B"])


class TestPersistence:
    def test_roundtrip_preserves_queries_exactly(self, tmp_path, rng):
        idx = toy_index(rng, n=10)
        path = tmp_path / "idx.bin"
        save_index(idx, path, meta={"index_version": 3})
        loaded, meta = load_index(path)
        assert meta == {"index_version": 3}
        assert loaded.ids == idx.ids
        np.testing.assert_array_equal(loaded.matrix, idx.matrix)
        probe = unit_rows(rng, 1, 4)[0]
        a = query(idx, probe, k=10)
        b = query(loaded, probe, k=10)
        assert a.items == b.items

    def test_header_fields(self, tmp_path, rng):
        import json

        idx = toy_index(rng)
        path = tmp_path / "idx.bin"
        save_index(idx, path)
        header = json.loads(path.read_bytes().split(b"\n", 1)[0])
        assert header["count"] == 8
        assert header["dim"] == 4
        assert set(header["label_set"]) == {"L1", "L2"}
