"""Evaluation metrics against brute-force and confusion-matrix oracles."""

import numpy as np
import pytest

from ueopt.datamodel import EmbeddingCache, ShiftSpec, make_shift_spec
from ueopt.metrics import (EvalReport, auc, curves_to_csv,
                           default_lambda_grid, detect, evaluate, load_report,
                           os_hos_curve, per_class_accuracy, save_report,
                           split_eval)
from ueopt.model import (ModelState, build_head, mcm_score, predict_class,
                         predict_probs)
from ueopt.synth import SynthConfig, generate
from ueopt.validation import ValidationError


def auc_brute(pos, neg):
    """Quadratic pair count, ties worth half."""
    total = 0.0
    for a in pos:
        for b in neg:
            if a > b:
                total += 1.0
            elif a == b:
                total += 0.5
    return total / (len(pos) * len(neg))


def os_hos_by_counts(preds, labels, scores, l_p, lam):
    """Independent per-class counting, python loops only."""
    keep = set(int(v) for v in l_p)
    known = sorted(set(int(l) for l in labels) & keep)
    accs = []
    for c in known:
        idx = [i for i, l in enumerate(labels) if int(l) == c]
        hit = sum(1 for i in idx
                  if scores[i] >= lam and int(preds[i]) == c)
        accs.append(hit / len(idx))
    ood = [i for i, l in enumerate(labels) if int(l) not in keep]
    unk = sum(1 for i in ood if scores[i] < lam) / len(ood)
    os_val = (sum(accs) + unk) / (len(known) + 1)
    ka = sum(accs) / len(known)
    hos = 0.0 if ka == 0.0 or unk == 0.0 else 2 * ka * unk / (ka + unk)
    return os_val, hos


class TestSplitEval:
    def test_open_shift_partition(self):
        rng = np.random.default_rng(0)
        cache = EmbeddingCache(rng.standard_normal((31, 4)), np.arange(31),
                               tuple(f"c{i}" for i in range(31)))
        spec = make_shift_spec("open", 25, 31, 3)
        id_idx, ood_idx = split_eval(cache, spec)
        assert set(cache.labels[id_idx]) == set(range(25))
        assert set(cache.labels[ood_idx]) == set(range(25, 31))

    def test_closed_shift_has_no_outliers(self):
        rng = np.random.default_rng(1)
        cache = EmbeddingCache(rng.standard_normal((5, 4)), np.arange(5),
                               tuple("abcde"))
        id_idx, ood_idx = split_eval(cache, make_shift_spec("closed", 5, 5))
        assert id_idx.size == 5 and ood_idx.size == 0

    def test_label_outside_eval_space(self):
        cache = EmbeddingCache(np.eye(3), np.array([0, 1, 2]), ("a", "b", "c"))
        spec = ShiftSpec((0,), (0,), (0, 1))
        with pytest.raises(ValidationError, match="outside"):
            split_eval(cache, spec)


class TestPerClassAccuracy:
    def test_hand_counts(self):
        preds = np.array([0, 0, 1, 2, 1])
        labels = np.array([0, 1, 1, 2, 2])
        per, macro = per_class_accuracy(preds, labels, [0, 1, 2])
        assert per == {0: 1.0, 1: 0.5, 2: 0.5}
        assert macro == pytest.approx(2.0 / 3.0, abs=1e-15)

    def test_absent_class_skipped(self):
        preds = np.array([0, 1])
        labels = np.array([0, 1])
        per, macro = per_class_accuracy(preds, labels, [0, 1, 9])
        assert set(per) == {0, 1}
        assert macro == 1.0

    def test_all_absent_errors(self):
        with pytest.raises(ValidationError):
            per_class_accuracy(np.array([0]), np.array([0]), [5, 6])

    def test_duplication_invariance(self):
        rng = np.random.default_rng(2)
        labels = rng.integers(0, 4, 30)
        preds = rng.integers(0, 4, 30)
        per1, macro1 = per_class_accuracy(preds, labels, range(4))
        per2, macro2 = per_class_accuracy(np.tile(preds, 3),
                                          np.tile(labels, 3), range(4))
        assert per1 == per2
        assert macro1 == macro2


class TestAuc:
    def test_perfect_separation(self):
        assert auc([0.9, 0.8], [0.1, 0.2]) == 1.0
        assert auc([0.1, 0.2], [0.9, 0.8]) == 0.0

    def test_full_tie(self):
        assert auc([0.5], [0.5]) == 0.5

    def test_matches_brute_force_with_ties(self):
        rng = np.random.default_rng(3)
        for trial in range(20):
            # coarse grid forces many ties
            pos = rng.integers(0, 6, size=int(rng.integers(1, 40))) / 5.0
            neg = rng.integers(0, 6, size=int(rng.integers(1, 40))) / 5.0
            assert auc(pos, neg) == auc_brute(pos, neg), trial

    def test_symmetry(self):
        rng = np.random.default_rng(4)
        pos, neg = rng.normal(1, 1, 15), rng.normal(0, 1, 25)
        assert auc(pos, neg) == 1.0 - auc(neg, pos)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(5)
        pos, neg = rng.normal(1, 1, 10), rng.normal(0, 1, 12)
        base = auc(pos, neg)
        assert auc(3 * pos + 2, 3 * neg + 2) == base
        assert auc(np.exp(pos), np.exp(neg)) == base

    def test_empty_side_errors(self):
        with pytest.raises(ValidationError, match="AUC undefined"):
            auc([], [0.5])
        with pytest.raises(ValidationError, match="AUC undefined"):
            auc([0.5], [])


class TestDetect:
    def test_threshold_inclusive(self):
        got = detect(np.array([0.2, 0.5, 0.8]), 0.5)
        assert got.tolist() == [False, True, True]


class TestLambdaGrid:
    def test_default_size_and_extremes(self):
        rng = np.random.default_rng(6)
        scores = rng.uniform(0, 1, 500)
        grid = default_lambda_grid(scores)
        assert grid.shape == (101,)
        assert grid[0] == scores.min()
        assert grid[-1] == scores.max()
        assert np.all(np.diff(grid) >= 0)

    def test_three_points(self):
        grid = default_lambda_grid(np.array([1.0, 2.0, 10.0]), n=3)
        assert grid.tolist() == [1.0, 2.0, 10.0]


class TestOsHosCurve:
    @staticmethod
    def random_instance(seed, n=60, n_known=4, n_unknown=2):
        rng = np.random.default_rng(seed)
        total = n_known + n_unknown
        labels = rng.integers(0, total, n)
        preds = rng.integers(0, n_known, n)
        scores = rng.uniform(0, 1, n)
        spec = make_shift_spec("open", n_known, total, n_unknown)
        return preds, labels, scores, spec

    def test_low_threshold_kills_unknown_accuracy(self):
        preds, labels, scores, spec = self.random_instance(7)
        lam = scores.min() - 1.0
        (os_pts, hos_pts) = os_hos_curve(preds, labels, scores, spec, [lam])
        assert hos_pts[0][1] == 0.0
        # below the minimum nothing is flagged unknown
        _, expect_hos = os_hos_by_counts(preds, labels, scores, spec.L_p, lam)
        assert expect_hos == 0.0

    def test_high_threshold_kills_known_accuracy(self):
        preds, labels, scores, spec = self.random_instance(8)
        lam = scores.max() + 1.0
        os_pts, hos_pts = os_hos_curve(preds, labels, scores, spec, [lam])
        assert hos_pts[0][1] == 0.0
        # every outlier is caught, every known class scores zero
        assert os_pts[0][1] == pytest.approx(1.0 / (4 + 1), abs=1e-12)

    def test_matches_counting_oracle(self):
        for seed in range(5):
            preds, labels, scores, spec = self.random_instance(seed)
            lambdas = np.quantile(scores, [0.1, 0.35, 0.6, 0.9])
            os_pts, hos_pts = os_hos_curve(preds, labels, scores, spec, lambdas)
            for (lam, os_val), (_, hos_val) in zip(os_pts, hos_pts):
                want_os, want_hos = os_hos_by_counts(preds, labels, scores,
                                                     spec.L_p, lam)
                assert os_val == pytest.approx(want_os, abs=1e-12)
                assert hos_val == pytest.approx(want_hos, abs=1e-12)

    def test_requires_outliers(self):
        preds = np.array([0, 1])
        labels = np.array([0, 1])
        scores = np.array([0.5, 0.6])
        spec = make_shift_spec("closed", 2, 2)
        with pytest.raises(ValidationError, match="outlier"):
            os_hos_curve(preds, labels, scores, spec, [0.5])


class TestEvaluate:
    @staticmethod
    def open_problem(seed=0):
        cfg = SynthConfig(d=16, n_classes=6, per_class=8, noise_sigma=0.3,
                          seed=seed)
        _, test, protos = generate(cfg)
        spec = make_shift_spec("open", 4, 6, 2)
        head = build_head(protos.features[:4], m=1, k=1)
        state = ModelState.initial(head, m=1, k=1)
        return state, test, spec

    def test_matches_direct_recompute(self):
        state, test, spec = self.open_problem()
        report = evaluate(state, test, spec)
        probs = predict_probs(state, test.features)
        preds = np.asarray(spec.L_p)[predict_class(probs)]
        scores = mcm_score(probs)
        id_mask = np.isin(test.labels, spec.L_p)
        _, want_macro = per_class_accuracy(preds[id_mask], test.labels[id_mask],
                                           spec.L_p)
        assert report.acc == pytest.approx(want_macro, abs=1e-15)
        assert report.auc == pytest.approx(
            auc_brute(scores[id_mask], scores[~id_mask]), abs=1e-12)
        assert report.counts == {"id": 32, "ood": 16}

    def test_closed_set_has_no_auc(self):
        cfg = SynthConfig(d=8, n_classes=3, per_class=4, seed=1)
        _, test, protos = generate(cfg)
        spec = make_shift_spec("closed", 3, 3)
        head = build_head(protos.features, m=1, k=1)
        report = evaluate(ModelState.initial(head, m=1, k=1), test, spec)
        assert report.auc is None
        assert report.os_curve == [] and report.hos_curve == []

    def test_curves_on_request(self):
        state, test, spec = self.open_problem()
        report = evaluate(state, test, spec, include_curves=True)
        assert len(report.os_curve) == 101
        assert len(report.hos_curve) == 101
        report2 = evaluate(state, test, spec, include_curves=True,
                           lambdas=[0.5])
        assert len(report2.os_curve) == 1

    def test_predictions_live_in_label_space(self):
        # non-contiguous predefined labels: head index i maps to L_p[i]
        rng = np.random.default_rng(9)
        protos = rng.standard_normal((3, 8))
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)
        head = build_head(protos, m=1, k=1)
        state = ModelState.initial(head, m=1, k=1)
        labels = np.array([3, 5, 7, 2, 3, 5])
        feats = rng.standard_normal((6, 8))
        cache = EmbeddingCache(feats, labels, tuple(f"c{i}" for i in range(8)))
        spec = ShiftSpec((3, 5, 7), (2, 3, 5, 7), (2, 3, 5, 7))
        report = evaluate(state, cache, spec)
        assert set(report.per_class_acc) <= {3, 5, 7}

    def test_head_size_mismatch(self):
        state, test, _ = self.open_problem()
        bad_spec = make_shift_spec("open", 5, 6, 1)
        with pytest.raises(ValidationError, match="head"):
            evaluate(state, test, bad_spec)

    def test_provenance_passthrough(self):
        state, test, spec = self.open_problem()
        report = evaluate(state, test, spec, provenance={"run": "x"})
        assert report.provenance == {"run": "x"}


class TestReportIo:
    def test_json_round_trip(self, tmp_path):
        state, test, spec = TestEvaluate.open_problem(seed=2)
        report = evaluate(state, test, spec, include_curves=True,
                          lambdas=[0.3, 0.7], provenance={"seed": 2})
        path = tmp_path / "report.json"
        save_report(path, report)
        assert load_report(path) == report

    def test_curves_csv(self, tmp_path):
        path = tmp_path / "curves.csv"
        curves_to_csv(path, [(0.25, 0.5), (0.75, 0.25)],
                      [(0.25, 0.4), (0.75, 0.2)])
        lines = path.read_text().splitlines()
        assert lines == ["lambda,os,hos", "0.25,0.5,0.4", "0.75,0.25,0.2"]
