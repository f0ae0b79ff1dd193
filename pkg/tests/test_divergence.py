# test_divergence.py
import math

import numpy as np
import pytest

from fsdlab.errors import VocabMismatch
from fsdlab.models.schemas import DivergenceKind
from fsdlab.services.divergence import LN2, below_threshold, divergence, js, kl, tv
from fsdlab.services.prob_core import ProbDist


P = ProbDist([0.2, 0.8])
Q = ProbDist([0.6, 0.4])


class TestKnownValues:
    def test_kl(self):
        expected = 0.2 * math.log(0.2 / 0.6) + 0.8 * math.log(0.8 / 0.4)
        assert kl(P, Q) == pytest.approx(expected, abs=1e-12)
        assert kl(P, Q) == pytest.approx(0.3348, abs=1e-4)

    def test_kl_is_asymmetric(self):
        assert kl(Q, P) != pytest.approx(kl(P, Q))

    def test_tv(self):
        assert tv(P, Q) == pytest.approx(0.4)

    def test_js_disjoint_support(self):
        assert js(ProbDist([1, 0]), ProbDist([0, 1])) == pytest.approx(LN2)

    def test_kl_infinite_outside_support(self):
        assert kl(ProbDist([0.5, 0.5]), ProbDist([1.0, 0.0])) == math.inf

    def test_kl_zero_mass_terms_vanish(self):
        assert kl(ProbDist([1.0, 0.0]), ProbDist([0.5, 0.5])) == pytest.approx(math.log(2))


class TestProperties:
    @pytest.mark.parametrize("kind", list(DivergenceKind))
    def test_zero_on_identical(self, kind):
        assert divergence(kind, P, P) == 0.0

    @pytest.mark.parametrize("kind", [DivergenceKind.JS, DivergenceKind.TV])
    def test_symmetric(self, kind):
        assert divergence(kind, P, Q) == pytest.approx(divergence(kind, Q, P))

    def test_ranges_on_random_pairs(self):
        gen = np.random.default_rng(0)
        for _ in range(200):
            p = ProbDist(gen.dirichlet(np.ones(6)))
            q = ProbDist(gen.dirichlet(np.ones(6)))
            assert 0.0 <= js(p, q) <= LN2
            assert 0.0 <= tv(p, q) <= 1.0
            assert kl(p, q) >= 0.0

    def test_pinsker(self):
        gen = np.random.default_rng(1)
        for _ in range(200):
            p = ProbDist(gen.dirichlet(np.ones(5)))
            q = ProbDist(gen.dirichlet(np.ones(5)))
            assert tv(p, q) <= math.sqrt(kl(p, q) / 2) + 1e-12

    def test_vocab_mismatch(self):
        with pytest.raises(VocabMismatch):
            js(P, ProbDist([0.2, 0.3, 0.5]))


class TestBelowThreshold:
    def test_zero_threshold_never_accepts(self):
        assert not below_threshold(DivergenceKind.KL, P, P, 0.0)

    def test_strict_inequality(self):
        assert not below_threshold(DivergenceKind.TV, P, Q, tv(P, Q))
        assert below_threshold(DivergenceKind.TV, P, Q, tv(P, Q) + 1e-9)

    def test_infinite_divergence_rejected(self):
        assert not below_threshold(DivergenceKind.KL, ProbDist([0.5, 0.5]), ProbDist([1.0, 0.0]), 1e9)

    def test_js_above_ln2_accepts_everything(self):
        assert below_threshold(DivergenceKind.JS, ProbDist([1, 0]), ProbDist([0, 1]), LN2 + 1e-6)

    def test_negative_threshold(self):
        with pytest.raises(ValueError):
            below_threshold(DivergenceKind.JS, P, Q, -0.1)
