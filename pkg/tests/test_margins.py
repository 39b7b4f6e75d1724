"""Margin transforms and their derivative factor."""

import math

import numpy as np
import pytest

from unpg_kit.errors import ConfigInvalidError, OriginMismatchError
from unpg_kit.margins import (
    ARCFACE,
    COSFACE,
    SIN_EPSILON,
    SNPAIR,
    MarginConfig,
    arcface_chain_factor,
    positive_chain,
    positive_transform,
    sc_arcface,
    sc_cosface,
    sc_snpair,
)
from unpg_kit.pairs import LabeledBatch, PairIndexSet, mlpg
from unpg_kit.sphere import normalize_rows


def make_batch(labels, dim=5, seed=0):
    rng = np.random.default_rng(seed)
    emb = normalize_rows(rng.standard_normal((len(labels), dim)))
    return LabeledBatch(emb, np.asarray(labels))


class TestMarginConfig:
    def test_rejects_negative_margin(self):
        with pytest.raises(ConfigInvalidError):
            MarginConfig(COSFACE, -0.1)

    def test_arcface_margin_below_pi(self):
        with pytest.raises(ConfigInvalidError):
            MarginConfig(ARCFACE, math.pi)

    def test_snpair_requires_zero_margin(self):
        with pytest.raises(ConfigInvalidError):
            MarginConfig(SNPAIR, 0.3)
        MarginConfig(SNPAIR, 0.0)

    def test_unknown_variant(self):
        with pytest.raises(ConfigInvalidError):
            MarginConfig("sphereface", 0.5)


class TestScSnpair:
    def test_duplicate_embeddings_score_one(self):
        emb = normalize_rows(np.random.default_rng(1).standard_normal((1, 5)))
        batch = LabeledBatch(np.vstack([emb, emb]), np.array([0, 0]))
        pos, _ = mlpg(batch)
        scores = sc_snpair(pos, batch)
        np.testing.assert_allclose(scores.positive_scores, [1.0], atol=1e-12)

    def test_orthogonal_negatives_score_zero(self):
        emb = np.array([[1.0, 0.0], [0.0, 1.0]])
        batch = LabeledBatch(emb, np.array([0, 1]))
        _, neg = mlpg(batch)
        scores = sc_snpair(neg, batch)
        np.testing.assert_allclose(scores.negative_scores, [0.0], atol=1e-15)
        assert scores.negative_origins == ("ml",)

    def test_matches_pairwise_cosine_oracle(self):
        """Scores equal brute-force pairwise cosines on a random batch."""
        batch = make_batch([0, 0, 1, 2, 1, 0], seed=9)
        pos, neg = mlpg(batch)
        merged = PairIndexSet(pos.pairs + neg.pairs)
        scores = sc_snpair(merged, batch)
        emb = batch.embeddings
        expected_pos = [float(emb[p.left] @ emb[p.right]) for p in pos]
        expected_neg = [float(emb[p.left] @ emb[p.right]) for p in neg]
        np.testing.assert_allclose(scores.positive_scores, expected_pos, atol=1e-12)
        np.testing.assert_allclose(scores.negative_scores, expected_neg, atol=1e-12)

    def test_rejects_cl_pairs(self):
        batch = make_batch([0, 1], seed=2)
        from unpg_kit.pairs import CL, NEGATIVE, Pair

        with pytest.raises(OriginMismatchError):
            sc_snpair(PairIndexSet((Pair(0, 1, NEGATIVE, CL),)), batch)


class TestScCosface:
    def test_basic_subtraction(self):
        assert sc_cosface(0.7, 0.5) == pytest.approx(0.2, abs=1e-15)

    def test_zero_margin_identity(self):
        assert sc_cosface(0.42, 0.0) == 0.42

    def test_can_leave_unit_interval(self):
        assert sc_cosface(-1.0, 0.5) == pytest.approx(-1.5)


class TestScArcface:
    def test_angle_sum_hits_right_angle(self):
        assert sc_arcface(math.pi / 2 - 0.5, 0.5) == pytest.approx(0.0, abs=1e-15)

    def test_zero_margin_identity(self):
        theta = 1.234
        assert sc_arcface(theta, 0.0) == pytest.approx(math.cos(theta), abs=1e-15)

    def test_clamps_at_pi(self):
        assert sc_arcface(3.0, 0.5) == pytest.approx(-1.0, abs=1e-15)

    def test_output_always_in_unit_interval(self):
        rng = np.random.default_rng(4)
        thetas = rng.uniform(0, math.pi, 500)
        for m in (0.0, 0.5, 2.0):
            out = sc_arcface(thetas, m)
            assert np.all(out >= -1.0) and np.all(out <= 1.0)


class TestArcfaceChainFactor:
    def test_zero_margin_is_identity_factor(self):
        assert arcface_chain_factor(1.0, 0.0) == pytest.approx(1.0, abs=1e-12)

    def test_right_angle_value(self):
        # sin(pi/2 + 0.5) / sin(pi/2) = cos(0.5) ~ 0.877583
        got = arcface_chain_factor(math.pi / 2, 0.5)
        assert got == pytest.approx(math.cos(0.5), abs=1e-12)
        assert got == pytest.approx(0.8775825618903728, abs=1e-12)

    def test_small_angle_capped(self):
        got = arcface_chain_factor(0.0, 0.5)
        assert np.isfinite(got)
        assert got == pytest.approx(math.sin(0.5) / SIN_EPSILON)

    def test_zero_beyond_clamp(self):
        # the clamped branch of the forward is flat, so the factor is 0 there
        assert arcface_chain_factor(3.0, 0.5) == 0.0


class TestVariantProperties:
    def test_monotone_in_margin(self):
        rng = np.random.default_rng(6)
        cos_vals = rng.uniform(-1, 1, 50)
        for cfg_cls, margins in ((COSFACE, np.linspace(0, 1, 6)), (ARCFACE, np.linspace(0, 2, 6))):
            previous = None
            for m in margins:
                out = positive_transform(cos_vals, MarginConfig(cfg_cls, float(m)))
                if previous is not None:
                    assert np.all(out <= previous + 1e-12)
                previous = out

    def test_zero_margin_agreement_across_variants(self):
        rng = np.random.default_rng(8)
        cos_vals = rng.uniform(-1, 1, 100)
        sn = positive_transform(cos_vals, MarginConfig(SNPAIR, 0.0))
        cf = positive_transform(cos_vals, MarginConfig(COSFACE, 0.0))
        af = positive_transform(cos_vals, MarginConfig(ARCFACE, 0.0))
        np.testing.assert_allclose(sn, cf, atol=1e-12)
        np.testing.assert_allclose(sn, af, atol=1e-12)

    def test_chain_matches_finite_differences(self):
        """d transform / d cos checked against central differences away
        from the arccos endpoints."""
        rng = np.random.default_rng(10)
        cos_vals = rng.uniform(-0.95, 0.95, 200)
        h = 1e-7
        for variant, m in ((SNPAIR, 0.0), (COSFACE, 0.5), (ARCFACE, 0.5)):
            cfg = MarginConfig(variant, m)
            analytic = positive_chain(cos_vals, cfg)
            fd = (
                positive_transform(cos_vals + h, cfg) - positive_transform(cos_vals - h, cfg)
            ) / (2 * h)
            np.testing.assert_allclose(analytic, fd, rtol=1e-5, atol=1e-5)
