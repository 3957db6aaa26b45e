import numpy as np
import pandas as pd
import pytest

from smartdtr.data import AllowableSetRule, KnownTable, NodeSchema, SmartDesign, TrialDataset, follows_regime
from smartdtr.estimators import (ArmConfig, EstimationError, StageMechanism, TreatmentMechanism, Workspace,
                                 cumulative_g, estimate_all, ice_gcomp_estimate, ipw_estimate, scale_outcome,
                                 tmle_estimate, unscale_outcome)
from smartdtr.learners import DesignSpec
from smartdtr.simulation import Dgp1Config, dgp1_sample

KNOWN = TreatmentMechanism(StageMechanism("known"), StageMechanism("known"))
SAT = TreatmentMechanism(StageMechanism("saturated"), StageMechanism("saturated"))


def toy_design(p1=0.6, p2a=0.3):
    """a1 in {0,1}; responders (l2=1) get a or b, non-responders always c."""
    schema = NodeSchema((), "a1", ("0", "1"), ("l2",), "a2", ("a", "b", "c"), "y",
                        tailoring2=("l2",), response="l2")
    rules = (AllowableSetRule(1, {}, ("0", "1")), AllowableSetRule(2, {"l2": 1}, ("a", "b")),
             AllowableSetRule(2, {"l2": 0}, ("c",)))
    known = KnownTable(stage1=(({}, {"0": 1 - p1, "1": p1}),),
                       stage2=(({"l2": 1}, {"a": p2a, "b": 1 - p2a}),))
    return SmartDesign(schema, rules, known)


def toy_data(design, rows):
    frame = pd.DataFrame(rows, columns=["a1", "l2", "a2", "y"])
    return TrialDataset(design.schema, frame)


def regime_by_rules(design, a1, resp, nonresp="c"):
    for r in design.regimes():
        if r.stage1[()] == a1 and r.stage2[(1.0,)] == resp and r.stage2[(0.0,)] == nonresp:
            return r
    raise LookupError


class TestScaling:
    def test_binary_identity(self):
        np.testing.assert_array_equal(scale_outcome(np.array([0.0, 1.0]), (0, 1)), [0.0, 1.0])

    def test_midpoint_and_boundary(self):
        assert scale_outcome(5.0, (0, 10)) == 0.5
        assert scale_outcome(-2.0, (-2, 6)) == 0.0

    def test_inverse(self):
        y = np.array([-2.0, 1.0, 6.0])
        np.testing.assert_allclose(unscale_outcome(scale_outcome(y, (-2, 6)), (-2, 6)), y)


class TestCumulativeG:
    def test_dgp1_known_quarter(self, dgp1, dgp1_small):
        mech = KNOWN.fit(dgp1_small, dgp1)
        for reg in dgp1.regimes():
            f = follows_regime(dgp1_small, reg, 2)
            g, trunc = cumulative_g(dgp1_small, reg, 2, mech)
            np.testing.assert_allclose(g[f], 0.25)
            assert not trunc.any()

    def test_adaptr_known(self, adaptr, adaptr_data):
        mech = KNOWN.fit(adaptr_data, adaptr)
        frame = adaptr_data.frame
        live = ~adaptr_data.voided
        reg1 = adaptr.regimes()[0]  # SOC; SOC if lapse; Continue otherwise
        g, _ = cumulative_g(adaptr_data, reg1, 2, mech)
        soc_nonresp = (frame["a1"] == "SOC").to_numpy() & (frame["l2"] == 0).to_numpy() & live
        np.testing.assert_allclose(g[soc_nonresp], 1 / 3)
        reg8 = adaptr.regimes()[7]  # SMS; Nav if lapse
        g, _ = cumulative_g(adaptr_data, reg8, 2, mech)
        sms_lapse = (frame["a1"] == "SMS").to_numpy() & (frame["l2"] == 1).to_numpy() & live
        np.testing.assert_allclose(g[sms_lapse], 1 / 9)

    def test_voided_stage_counts_as_one(self, adaptr, adaptr_data):
        mech = KNOWN.fit(adaptr_data, adaptr)
        reg = adaptr.regimes()[4]
        g, _ = cumulative_g(adaptr_data, reg, 2, mech)
        dead = adaptr_data.voided & (adaptr_data.frame["a1"] == "SMS").to_numpy()
        assert dead.any()
        np.testing.assert_allclose(g[dead], 1 / 3)

    def test_truncation(self, dgp1, dgp1_small):
        mech = TreatmentMechanism(StageMechanism("known"), StageMechanism("known"), bound=0.3).fit(dgp1_small, dgp1)
        g, trunc = cumulative_g(dgp1_small, dgp1.regimes()[0], 2, mech)
        assert trunc.all()
        np.testing.assert_allclose(g, 0.3)

    def test_missing_known_table(self, dgp1_small, dgp1):
        design = SmartDesign(dgp1.schema, dgp1.rules)
        with pytest.raises(EstimationError, match="declares none"):
            KNOWN.fit(dgp1_small, design)

    def test_modeled_probabilities_sum_to_one(self, adaptr, adaptr_data):
        spec = TreatmentMechanism(StageMechanism("modeled", "full"), StageMechanism("modeled", "full"))
        mech = spec.fit(adaptr_data, adaptr)
        live = ~adaptr_data.voided
        np.testing.assert_allclose(np.nansum(mech.stage1, axis=1), 1.0)
        np.testing.assert_allclose(np.nansum(mech.stage2[live], axis=1), 1.0)


class TestIpw:
    def test_degenerate_single_arm(self):
        schema = NodeSchema((), "a1", ("t",), (), "a2", ("u",), "y")
        design = SmartDesign(schema, (AllowableSetRule(1, {}, ("t",)), AllowableSetRule(2, {}, ("u",))),
                             KnownTable((), ()))
        data = TrialDataset(schema, pd.DataFrame({"a1": ["t"] * 4, "a2": ["u"] * 4, "y": [1.0, 0, 1, 1]}))
        reg = design.regimes()[0]
        for stab in (False, True):
            assert ipw_estimate(data, reg, KNOWN.fit(data, design), stab).psi == pytest.approx(0.75, abs=1e-15)

    def test_six_record_toy(self):
        design = toy_design()
        data = toy_data(design, [("1", 1, "a", 1.0), ("1", 1, "b", 1.0), ("1", 0, "c", 0.0),
                                 ("0", 1, "a", 1.0), ("1", 0, "c", 1.0), ("0", 0, "c", 0.0)])
        reg = regime_by_rules(design, "1", "a")
        mech = KNOWN.fit(data, design)
        # followers: rows 0, 2, 4 with g = .6*.3, .6, .6
        res = ipw_estimate(data, reg, mech, stabilized=False)
        assert res.psi == pytest.approx(65 / 54, rel=1e-12)
        assert res.n_follow == 3
        res = ipw_estimate(data, reg, mech, stabilized=True)
        assert res.psi == pytest.approx(0.8125, rel=1e-12)
        np.testing.assert_allclose(res.ic.sum(), 0.0, atol=1e-12)

    def test_dgp1_large_sample(self, dgp1):
        data = dgp1_sample(Dgp1Config(n=1_000_000, seed=2024))
        res = ipw_estimate(data, dgp1.regimes()[0], KNOWN.fit(data, dgp1))
        assert abs(res.psi - 0.6061) <= 0.002

    def test_variance_is_mean_ic_squared(self, dgp1, dgp1_data):
        res = ipw_estimate(dgp1_data, dgp1.regimes()[2], KNOWN.fit(dgp1_data, dgp1))
        assert res.variance == pytest.approx(np.mean(res.ic ** 2) / dgp1_data.n)
        np.testing.assert_allclose(res.ic.mean(), 0.0, atol=1e-12)

    def test_no_followers(self):
        design = toy_design()
        data = toy_data(design, [("0", 1, "a", 1.0), ("0", 0, "c", 0.0), ("1", 1, "b", 1.0)])
        with pytest.raises(EstimationError, match="no records follow"):
            ipw_estimate(data, regime_by_rules(design, "1", "a"), KNOWN.fit(data, design))


class TestIce:
    def test_saturated_gcomp_equals_ht_ipw(self, dgp1, dgp1_data):
        ws = Workspace(dgp1_data, dgp1)
        mech = ws.mechanism(SAT)
        for reg in dgp1.regimes():
            g = ice_gcomp_estimate(ws, reg, "saturated", "minimal")
            i = ipw_estimate(dgp1_data, reg, mech, stabilized=True)
            assert abs(g.psi - i.psi) < 1e-8
            assert g.ic is None and g.variance is None

    def test_constant_outcome(self, dgp1, dgp1_small):
        frame = dgp1_small.frame.copy()
        frame["y"] = 1.0
        data = TrialDataset(dgp1.schema, frame)
        ws = Workspace(data, dgp1, seed=1)
        for reg in dgp1.regimes():
            assert ice_gcomp_estimate(ws, reg, "library", "full", folds=5).psi == pytest.approx(1.0, abs=1e-8)

    def test_intercept_only_is_mean(self):
        design = toy_design()
        rows = [("1", 1, "a", 1.0), ("1", 1, "b", 0.0), ("1", 0, "c", 0.0), ("0", 1, "a", 1.0),
                ("1", 0, "c", 1.0), ("0", 0, "c", 0.0), ("0", 1, "b", 1.0), ("1", 1, "a", 1.0)]
        data = toy_data(design, rows)
        ws = Workspace(data, design)
        for reg in design.regimes():
            res = ice_gcomp_estimate(ws, reg, DesignSpec((), name="intercept"), "minimal")
            assert res.psi == pytest.approx(5 / 8, abs=1e-12)

    def test_continuous_outcome_scale(self):
        design = toy_design()
        schema = NodeSchema((), "a1", ("0", "1"), ("l2",), "a2", ("a", "b", "c"), "y", outcome_range=(-2, 6),
                            tailoring2=("l2",), response="l2")
        design = SmartDesign(schema, design.rules, design.known)
        rng = np.random.default_rng(1)
        n = 300
        a1 = rng.choice(["0", "1"], n)
        l2 = rng.integers(0, 2, n)
        a2 = np.where(l2 == 1, rng.choice(["a", "b"], n), "c")
        y = rng.uniform(-2, 6, n)
        data = TrialDataset(schema, pd.DataFrame({"a1": a1, "l2": l2, "a2": a2, "y": y}))
        ws = Workspace(data, design)
        mech = ws.mechanism(SAT)
        for reg in design.regimes():
            ipw = ipw_estimate(data, reg, mech, stabilized=True).psi
            assert ice_gcomp_estimate(ws, reg, "saturated", "minimal").psi == pytest.approx(ipw, abs=1e-8)
            assert tmle_estimate(ws, reg, mech, "saturated", "minimal").psi == pytest.approx(ipw, abs=1e-8)

    def test_missing_outcome_rejected(self, dgp1, dgp1_small):
        frame = dgp1_small.frame.copy()
        frame.loc[0, "y"] = np.nan
        with pytest.raises(EstimationError, match="complete_case_filter"):
            Workspace(TrialDataset(dgp1.schema, frame), dgp1)


class TestTmle:
    def test_saturated_equivalence_and_zero_fluctuation(self, dgp1, dgp1_data):
        ws = Workspace(dgp1_data, dgp1)
        mech = ws.mechanism(SAT)
        for reg in dgp1.regimes():
            t = tmle_estimate(ws, reg, mech, "saturated", "minimal")
            g = ice_gcomp_estimate(ws, reg, "saturated", "minimal")
            i = ipw_estimate(dgp1_data, reg, mech, stabilized=True)
            assert abs(t.psi - i.psi) < 1e-8
            # initial fits already solve the score equations
            np.testing.assert_allclose(t.diagnostics["epsilon"], 0.0, atol=1e-8)
            assert abs(t.psi - g.psi) < 1e-8

    def test_score_equation_library(self, dgp1, dgp1_data):
        arm = ArmConfig("tmle", "tmle", "full", g_source="modeled", g_adjustment="full", folds=5)
        res = estimate_all(dgp1_data, dgp1, dgp1.regimes(), [arm], seed=3)["tmle"]
        for r in res:
            assert all(r.diagnostics["fluctuation_converged"])
            assert abs(r.diagnostics["mean_eic"]) < 1e-8
            assert 0 <= r.psi <= 1
            assert r.variance == pytest.approx(np.mean(r.ic ** 2) / dgp1_data.n)

    def test_adaptr_with_deterministic_nodes(self, adaptr, adaptr_data):
        arms = [ArmConfig("ipw", "ipw_saturated", stabilized=True, g_adjustment="minimal"),
                ArmConfig("g", "gcomp", "minimal", learner="saturated"),
                ArmConfig("t", "tmle", "minimal", learner="saturated", g_source="saturated",
                          g_adjustment="minimal")]
        out = estimate_all(adaptr_data, adaptr, adaptr.regimes(), arms)
        for i, g, t in zip(out["ipw"], out["g"], out["t"]):
            assert abs(i.psi - g.psi) < 1e-8
            assert abs(i.psi - t.psi) < 1e-8
            assert abs(t.diagnostics["mean_eic"]) < 1e-8

    def test_narrower_than_ipw(self, dgp1, dgp1_data):
        arms = [ArmConfig("ipw", "ipw_adjusted", g_adjustment="full"),
                ArmConfig("tmle", "tmle", "full", g_source="modeled", g_adjustment="full", folds=5)]
        out = estimate_all(dgp1_data, dgp1, dgp1.regimes(), arms, seed=1)
        for a, b in zip(out["ipw"], out["tmle"]):
            assert b.se < a.se


class TestArmConfig:
    def test_round_trip(self):
        arm = ArmConfig("x", "tmle", "minimal", g_source="known", learner="glm")
        assert ArmConfig.from_dict(arm.to_dict()) == arm

    def test_rejects_unknown(self):
        with pytest.raises(ValueError, match="unknown estimator"):
            ArmConfig("x", "aipw")
        with pytest.raises(ValueError, match="unknown arm field"):
            ArmConfig.from_dict({"estimator": "tmle", "bogus": 1})
        with pytest.raises(ValueError, match="bound"):
            ArmConfig("x", "tmle", bound=0)

    def test_mechanism_defaults(self):
        assert ArmConfig("a", "ipw_known").mechanism().stage1.source == "known"
        assert ArmConfig("a", "ipw_saturated").mechanism().stage2.adjustment == "minimal"
        assert ArmConfig("a", "ipw_adjusted").mechanism().stage2.adjustment == "full"
        assert ArmConfig("a", "gcomp").mechanism() is None
