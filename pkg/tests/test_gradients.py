"""Analytic gradients against the finite-difference oracle."""

import time

import numpy as np
import pytest

from ueopt.model import AdapterParams, ModelState, build_head
from ueopt.objectives import (METHODS, WEIGHT_FNS, GradResult, LossConfig,
                              check_gradients, finite_diff_grad, grad)
from ueopt.validation import ValidationError


def small_state(seed=0, n_classes=3, d=6, m=1, k=2):
    rng = np.random.default_rng(seed)
    protos = rng.standard_normal((n_classes, d))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    head = build_head(protos, m=m, k=k, tau=0.05, seed=seed)
    adapter = AdapterParams(rng.uniform(0.8, 1.2, d), rng.normal(0, 0.1, d),
                            rng.normal(0, 0.1, (m, k)))
    return ModelState(head, adapter)


class TestCheckGradients:
    def test_full_sweep_passes(self):
        start = time.monotonic()
        report = check_gradients(seed=0, trials=20)
        elapsed = time.monotonic() - start
        assert report.ok, f"max rel err {report.max_rel_err:.3e}"
        assert report.max_rel_err < 1e-4
        combos = {(e.method, e.weight_fn) for e in report.entries}
        assert combos == {(m, f) for m in METHODS for f in WEIGHT_FNS}
        assert elapsed < 10.0

    def test_zero_trials(self):
        report = check_gradients(trials=0)
        assert report.max_rel_err == 0.0
        assert report.ok

    def test_detects_corrupted_gradient(self):
        def corrupted(cfg, state, batch, w=None):
            g = grad(cfg, state, batch, w)
            return GradResult(g.loss, g.scale * 1.01, g.shift, g.context,
                              g.mean_entropy)

        report = check_gradients(seed=1, trials=3, methods=("ueo",),
                                 weight_fns=("inv",), grad_fn=corrupted)
        assert not report.ok


class TestGrad:
    def test_matches_finite_differences_single_case(self):
        rng = np.random.default_rng(10)
        state = small_state(seed=10, m=2, k=3)
        batch = rng.normal(0, 1, (5, 6))
        w = rng.uniform(0.1, 0.9, 5)
        cfg = LossConfig(method="ueo", weight_fn="one_minus", beta=1.5)
        a = grad(cfg, state, batch, w)
        f = finite_diff_grad(cfg, state, batch, w)
        assert a.loss == pytest.approx(f.loss, abs=1e-12)
        for name in ("scale", "shift", "context"):
            got, want = getattr(a, name), getattr(f, name)
            scale = max(np.abs(want).max(), 1e-3)
            assert np.allclose(got, want, atol=1e-4 * scale), name

    def test_weighted_method_requires_weights(self):
        state = small_state()
        batch = np.random.default_rng(0).normal(0, 1, (4, 6))
        with pytest.raises(ValidationError, match="requires"):
            grad(LossConfig(method="ueo"), state, batch)

    def test_unweighted_methods_accept_none(self):
        state = small_state()
        batch = np.random.default_rng(0).normal(0, 1, (4, 6))
        for method in ("entmin", "infomax"):
            out = grad(LossConfig(method=method), state, batch)
            assert np.isfinite(out.loss)

    def test_uniform_weights_beta_one_matches_infomax_gradient(self):
        rng = np.random.default_rng(11)
        state = small_state(seed=11, m=2, k=2)
        batch = rng.normal(0, 1, (8, 6))
        g_ueo = grad(LossConfig(method="ueo", beta=1.0), state, batch,
                     np.full(8, 0.6))
        g_im = grad(LossConfig(method="infomax"), state, batch)
        assert abs(g_ueo.loss - g_im.loss) < 1e-12
        for name in ("scale", "shift", "context"):
            got, want = getattr(g_ueo, name), getattr(g_im, name)
            scale = max(np.abs(want).max(), 1.0)
            assert np.allclose(got, want, atol=1e-9 * scale), name

    def test_stationary_at_aligned_antipodal_prototypes(self):
        # prototypes e1 and -e1, input along e1: every parameter direction
        # changes the cosines at second order only
        d = 4
        protos = np.zeros((2, d))
        protos[0, 0] = 1.0
        protos[1, 0] = -1.0
        head = build_head(protos, m=1, k=1, seed=0)
        state = ModelState.initial(head, m=1, k=1)
        batch = np.zeros((1, d))
        batch[0, 0] = 1.0
        out = grad(LossConfig(method="entmin"), state, batch)
        norm = (np.abs(out.scale).max() + np.abs(out.shift).max()
                + np.abs(out.context).max())
        assert norm < 1e-8

    def test_mean_entropy_matches_probs(self):
        from ueopt.model import predict_probs
        from ueopt.objectives import entropy

        rng = np.random.default_rng(12)
        state = small_state(seed=12)
        batch = rng.normal(0, 1, (6, 6))
        out = grad(LossConfig(method="entmin"), state, batch)
        expect = float(np.mean(entropy(predict_probs(state, batch))))
        assert out.mean_entropy == pytest.approx(expect, abs=1e-12)

    def test_oracle_weights_zero_one_stay_finite(self):
        # binary weights hit both clip ends; the loss must stay finite
        rng = np.random.default_rng(13)
        state = small_state(seed=13)
        batch = rng.normal(0, 1, (6, 6))
        w = np.array([1.0, 0.0, 1.0, 0.0, 1.0, 1.0])
        for weight_fn in WEIGHT_FNS:
            cfg = LossConfig(method="ueo_oracle", weight_fn=weight_fn)
            out = grad(cfg, state, batch, w)
            assert np.isfinite(out.loss)
            assert np.all(np.isfinite(out.scale))
