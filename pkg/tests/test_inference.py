import numpy as np
import pytest
from scipy.stats import norm

from smartdtr.estimators import IceStack
from smartdtr.inference import (InferenceError, RegimeValueVector, assemble_eic, contrast, individual_ci,
                                repair_correlation, simultaneous_ci, simultaneous_contrasts,
                                simultaneous_quantile, wald_ci)

Q_INDEP = float(norm.ppf((1 + np.sqrt(0.95)) / 2))  # max of two independent |N(0,1)|


class TestEic:
    def _stack(self, q3, q2, bounds=(0.0, 1.0)):
        q3, q2 = np.asarray(q3, float), np.asarray(q2, float)
        return IceStack(q3, q2, q3, q2, bounds=bounds)

    def test_non_follower_reduces_to_q2(self):
        stack = self._stack([0.3], [0.6])
        eic = assemble_eic(np.array([1.0]), stack, np.array([False]), np.array([False]),
                           np.array([0.5]), np.array([0.25]), 0.55)
        np.testing.assert_allclose(eic, [0.6 - 0.55])

    def test_degenerate_zero(self):
        psi = 0.4
        stack = self._stack([psi] * 3, [psi] * 3)
        eic = assemble_eic(np.full(3, psi), stack, np.ones(3, bool), np.ones(3, bool),
                           np.full(3, 0.5), np.full(3, 0.25), psi)
        np.testing.assert_allclose(eic, 0.0, atol=1e-15)

    def test_four_record_hand_values(self):
        ys = np.array([1.0, 0.0, 1.0, 0.0])
        q3 = np.array([0.8, 0.3, 0.6, 0.5])
        q2 = np.array([0.7, 0.4, 0.6, 0.5])
        f1 = np.array([True, True, True, False])
        f2 = np.array([True, False, True, False])
        cg1 = np.array([0.5, 0.5, 0.5, 0.5])
        cg2 = np.array([0.25, 0.25, 0.125, 0.25])
        psi = 0.55
        eic = assemble_eic(ys, self._stack(q3, q2), f1, f2, cg1, cg2, psi)
        # hand-evaluated: I2/g2*(Y-Q3) + I1/g1*(Q3-Q2) + Q2 - psi
        expected = [0.2 / 0.25 + 0.1 / 0.5 + 0.7 - 0.55,
                    0.0 + (-0.1) / 0.5 + 0.4 - 0.55,
                    0.4 / 0.125 + 0.0 + 0.6 - 0.55,
                    0.5 - 0.55]
        np.testing.assert_allclose(eic, expected, atol=1e-14)

    def test_outcome_range_rescales(self):
        stack = self._stack([0.3], [0.6], bounds=(-2.0, 6.0))
        eic = assemble_eic(np.array([1.0]), stack, np.array([False]), np.array([False]),
                           np.array([1.0]), np.array([1.0]), -2 + 8 * 0.5)
        np.testing.assert_allclose(eic, [8 * (0.6 - 0.5)])


class TestWald:
    def test_zero_ic_is_point(self):
        with pytest.warns(UserWarning, match="zero variance"):
            lo, hi = wald_ci(0.3, np.zeros(10))
        assert lo == hi == 0.3

    def test_half_width(self):
        ic = np.r_[np.full(50, 0.5), np.full(50, -0.5)]  # sigma = 0.5, n = 100
        lo, hi = wald_ci(0.0, ic)
        assert (hi - lo) / 2 == pytest.approx(1.959963984540054 * 0.05, abs=1e-12)

    def test_bad_level(self):
        with pytest.raises(InferenceError):
            wald_ci(0.0, np.ones(5), level=1.0)

    def test_individual_matches_wald(self, rng):
        ic = rng.normal(size=(200, 3))
        vec = RegimeValueVector(("a", "b", "c"), np.array([0.1, 0.2, 0.3]), ic)
        ci = individual_ci(vec)
        for j in range(3):
            np.testing.assert_allclose((ci.lower[j], ci.upper[j]), wald_ci(vec.psi[j], ic[:, j]))


class TestSimultaneous:
    def test_one_regime_is_normal_quantile(self):
        q, _ = simultaneous_quantile(np.eye(1), draws=100_000, seed=1)
        assert abs(q - 1.959964) < 0.01

    def test_independent_pair(self):
        q, _ = simultaneous_quantile(np.eye(2), draws=100_000, seed=0)
        assert abs(Q_INDEP - 2.2365) < 1e-4
        assert abs(q - Q_INDEP) < 0.01

    def test_independent_pair_unbiased_over_seeds(self):
        # one run has MC sd ~0.006 at 1e5 draws; the mean of ten is ~0.002
        qs = [simultaneous_quantile(np.eye(2), draws=100_000, seed=s)[0] for s in range(10)]
        assert abs(np.mean(qs) - Q_INDEP) < 0.006

    def test_perfect_correlation(self):
        q, flags = simultaneous_quantile(np.ones((2, 2)), draws=100_000, seed=3)
        assert abs(q - 1.96) < 0.01
        assert "psd_repair" not in flags

    def test_deterministic_given_seed(self):
        rho = np.array([[1, 0.3, 0.1], [0.3, 1, 0.5], [0.1, 0.5, 1]])
        assert simultaneous_quantile(rho, seed=5)[0] == simultaneous_quantile(rho, seed=5)[0]

    def test_psd_repair_flagged(self):
        rho = np.array([[1, 0.9, -0.9], [0.9, 1, 0.9], [-0.9, 0.9, 1]])
        fixed, perturb = repair_correlation(rho)
        assert perturb > 0
        assert np.linalg.eigvalsh(fixed).min() > -1e-10
        np.testing.assert_allclose(np.diag(fixed), 1.0)
        _, flags = simultaneous_quantile(rho, draws=2000, seed=0)
        assert "psd_repair" in flags

    def test_degenerate_columns(self):
        q, flags = simultaneous_quantile(np.eye(3), draws=50_000, seed=0, degenerate=np.array([True, False, True]))
        assert flags["degenerate_columns"] == 2
        assert abs(q - 1.96) < 0.02

    def test_wider_than_individual(self, rng):
        ic = rng.normal(size=(300, 5))
        vec = RegimeValueVector(tuple("abcde"), np.zeros(5), ic)
        sim, ind = simultaneous_ci(vec, seed=1), individual_ci(vec)
        assert sim.critical > ind.critical
        assert np.all(sim.width > ind.width)


class TestContrasts:
    def test_identical_ics(self, rng):
        ic = rng.normal(size=100)
        vec = RegimeValueVector(("a", "b"), np.array([0.4, 0.4]), np.column_stack([ic, ic]))
        c = contrast(vec, 0, 1)
        assert c.psi[0] == 0.0
        assert c.width[0] == 0.0

    def test_anticorrelated_variance(self, rng):
        z = rng.normal(size=400)
        s1, s2 = 1.5, 0.5
        vec = RegimeValueVector(("a", "b"), np.array([0.0, 0.0]), np.column_stack([s1 * z, -s2 * z]))
        c = contrast(vec, 0, 1)
        var = np.mean((s1 * z + s2 * z) ** 2) / 400
        sigma_i, sigma_j = np.sqrt(np.mean((s1 * z) ** 2)), np.sqrt(np.mean((s2 * z) ** 2))
        assert var == pytest.approx((sigma_i + sigma_j) ** 2 / 400)
        assert c.width[0] / 2 == pytest.approx(c.critical * np.sqrt(var))

    def test_single_pair_matches_individual(self, rng):
        vec = RegimeValueVector(("a", "b"), np.array([0.1, 0.3]), rng.normal(size=(200, 2)))
        one = contrast(vec, 0, 1)
        sim = simultaneous_contrasts(vec, [(0, 1)], seed=4)
        assert abs(sim.critical - one.critical) < 0.01
        np.testing.assert_allclose(sim.psi, one.psi)

    def test_duplicate_pairs_are_identical(self, rng):
        vec = RegimeValueVector(("a", "b", "c"), np.array([0.1, 0.3, 0.2]), rng.normal(size=(200, 3)))
        sim = simultaneous_contrasts(vec, [(0, 1), (0, 1)], seed=4)
        assert sim.lower[0] == sim.lower[1] and sim.upper[0] == sim.upper[1]

    def test_five_contrasts_wider(self, rng):
        vec = RegimeValueVector(tuple("abcdef"), np.zeros(6), rng.normal(size=(300, 6)))
        pairs = [(0, 1), (0, 2), (0, 3), (0, 4), (0, 5)]
        sim = simultaneous_contrasts(vec, pairs, seed=0)
        assert sim.critical > 1.96

    def test_index_out_of_range(self, rng):
        vec = RegimeValueVector(("a", "b"), np.zeros(2), rng.normal(size=(10, 2)))
        with pytest.raises(InferenceError, match="out of range"):
            contrast(vec, 0, 2)


def test_vector_shape_checks():
    with pytest.raises(InferenceError):
        RegimeValueVector(("a", "b"), np.zeros(2), np.zeros((5, 3)))
