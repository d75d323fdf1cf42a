import json

import numpy as np
import pytest
from scipy.stats import norm

from shifteval import (
    DatasetKind,
    Estimand,
    EifVariant,
    TheoreticalVariance,
    compare_to_bound,
    constant_policy,
    true_policy_values,
)
from shifteval.errors import ShiftEvalError, VariantMismatch
from shifteval.montecarlo import (
    EstimatorSpec,
    EstimatorSummary,
    McConfig,
    McSummary,
    run_replications,
)

from conftest import make_config


def closed_form_values(config, policy):
    """Independent oracle: E[Q(X, d)] and E[C(X) d(X)] over N_p(0, I) in
    closed form for the linear outcome model and a linear decision rule."""
    c = config.outcome_coeffs
    p = config.p
    b0, bx = c[0], c[1 : p + 1]
    g0, gx = c[p + 1], c[p + 2 :]
    c0, cv = policy.intercept, policy.coeffs
    sigma_t = float(np.linalg.norm(cv))
    m = c0 / sigma_t
    mean_sign = 2 * norm.cdf(m) - 1
    # E[sign(T) G] for jointly normal (T, G), T = c0 + cv.X, G = g0 + gx.X
    cov_tg = float(cv @ gx)
    e_sign_g = g0 * mean_sign + (cov_tg / sigma_t) * 2 * norm.pdf(m)
    theta = b0 + e_sign_g  # E[bx.X] = 0 under the testing law
    theta1 = 2 * e_sign_g
    return theta, theta1


def oracle_menu():
    return tuple(
        EstimatorSpec(name=f"{e.value}_{k.value}", estimand=e, kind=k)
        for e in (Estimand.VALUE, Estimand.CONTRAST)
        for k in (DatasetKind.TYPE1, DatasetKind.TYPE2)
    )


class TestTruth:
    def test_matches_closed_form(self, policy):
        cfg = make_config(seed=1)
        truth = true_policy_values(cfg, policy, draws=400_000)
        theta, theta1 = closed_form_values(cfg, policy)
        assert truth["theta"] == pytest.approx(theta, abs=0.01)
        assert truth["theta1"] == pytest.approx(theta1, abs=0.01)

    def test_no_shift_constant_policy_closed_form(self):
        cfg = make_config(mu=(0.0, 0.0), seed=2)
        truth = true_policy_values(cfg, constant_policy(1, 2), draws=200_000)
        # theta = b0 + g0 exactly
        assert truth["theta"] == pytest.approx(1.25, abs=0.01)
        assert truth["theta1"] == pytest.approx(0.5, abs=0.01)


class TestRunReplications:
    def test_noiseless_oracle_unbiased(self, policy):
        cfg = make_config(n=500, noise_sd=0.0, seed=3)
        mc = McConfig(
            base=cfg, replications=2, policy=policy, estimators=oracle_menu()[:2],
            truth_draws=400_000, variance_draws=10_000,
        )
        s = run_replications(mc)
        for e in s.estimators:
            # only simulation noise in the covariate draw; generous bound
            assert abs(e.bias) < 0.2

    def test_deterministic_summary(self, policy):
        cfg = make_config(n=300, seed=4)
        mc = McConfig(base=cfg, replications=4, policy=policy, estimators=oracle_menu(),
                      truth_draws=50_000, variance_draws=10_000)
        s1 = run_replications(mc)
        s2 = run_replications(mc)
        assert json.dumps(s1.to_json_dict(), sort_keys=True) == json.dumps(
            s2.to_json_dict(), sort_keys=True
        )

    def test_parallel_equals_serial(self, policy):
        cfg = make_config(n=300, seed=5)
        serial = McConfig(base=cfg, replications=6, policy=policy, estimators=oracle_menu(),
                          truth_draws=50_000, variance_draws=10_000, n_jobs=1)
        parallel = McConfig(base=cfg, replications=6, policy=policy, estimators=oracle_menu(),
                            truth_draws=50_000, variance_draws=10_000, n_jobs=2)
        s1 = run_replications(serial)
        s2 = run_replications(parallel)
        assert json.dumps(s1.to_json_dict(), sort_keys=True) == json.dumps(
            s2.to_json_dict(), sort_keys=True
        )

    def test_replicate_failure_is_annotated_and_aborts(self, policy):
        cfg = make_config(n=12, seed=6)
        spec = EstimatorSpec(
            name="cf", estimand=Estimand.VALUE, kind=DatasetKind.TYPE2,
            weights="aipsw", propensity="logistic", outcome="linear", crossfit=True,
        )
        mc = McConfig(base=cfg, replications=20, policy=policy, estimators=(spec,),
                      crossfit_k=5, truth_draws=10_000, variance_draws=10_000)
        with pytest.raises(ShiftEvalError, match="replicate"):
            run_replications(mc)

    def test_runtime_not_serialized(self, policy):
        cfg = make_config(n=300, seed=7)
        mc = McConfig(base=cfg, replications=2, policy=policy, estimators=oracle_menu()[:1],
                      truth_draws=10_000, variance_draws=10_000)
        s = run_replications(mc)
        d = s.to_json_dict()
        assert "mean_runtime_s" not in d["estimators"][0]
        assert s.estimators[0].mean_runtime_s > 0.0

    def test_csv_columns(self, policy, tmp_path):
        cfg = make_config(n=300, seed=8)
        mc = McConfig(base=cfg, replications=2, policy=policy, estimators=oracle_menu()[:2],
                      truth_draws=10_000, variance_draws=10_000)
        s = run_replications(mc)
        path = tmp_path / "mc.csv"
        s.write_csv(path)
        header = path.read_text().splitlines()[0].split(",")
        assert header[:4] == ["name", "estimand", "kind", "weights"]
        assert "mean_runtime_s" not in header
        assert len(path.read_text().splitlines()) == 3


def summary_with(name, estimand, kind, var_sqrt_n, var_sqrt_n0=1.0):
    return McSummary(
        truth={"theta": 0.0, "theta1": 0.0},
        replications=10,
        n=100,
        estimators=[
            EstimatorSummary(
                name=name, estimand=estimand, kind=kind, weights="oracle",
                propensity="oracle", outcome="oracle", crossfit=False,
                mean_estimate=0.0, bias=0.0, var_sqrt_n=var_sqrt_n,
                var_sqrt_n0=var_sqrt_n0, coverage=0.95, nu_eff=1.0, zeta_eff=1.0,
                target_sqrt_n=4.0, target_sqrt_n0=1.0, mean_runtime_s=0.0,
            )
        ],
    )


class TestCompareToBound:
    def variant(self):
        return EifVariant(Estimand.VALUE, DatasetKind.TYPE2)

    def test_exact_match_passes(self):
        target = TheoreticalVariance(nu_eff=1.0, zeta_eff=1.0, variant=self.variant())
        s = summary_with("e", "theta", "type2", var_sqrt_n=4.0)
        rows = compare_to_bound(s, target, design=(50, 50), tolerance=0.10)
        assert rows[0]["ratio"] == pytest.approx(1.0)
        assert rows[0]["passed"]

    def test_equal_strata_target_arithmetic(self):
        # n1 = n0 -> gamma1^2 = gamma0^2 = 2 -> target = 2 (nu + zeta)
        target = TheoreticalVariance(nu_eff=1.5, zeta_eff=0.5, variant=self.variant())
        s = summary_with("e", "theta", "type2", var_sqrt_n=4.0)
        rows = compare_to_bound(s, target, design=(50, 50))
        assert rows[0]["target"] == pytest.approx(2 * (1.5 + 0.5))

    def test_small_calibration_scaling(self):
        target = TheoreticalVariance(nu_eff=9.0, zeta_eff=1.1, variant=self.variant())
        s = summary_with("e", "theta", "type2", var_sqrt_n=99.0, var_sqrt_n0=1.0)
        rows = compare_to_bound(s, target, design=(5000, 50), scaling="sqrt_n0", tolerance=0.15)
        assert rows[0]["target"] == pytest.approx(1.1)
        assert rows[0]["ratio"] == pytest.approx(1.0 / 1.1)
        assert rows[0]["passed"]

    def test_variant_mismatch(self):
        target = TheoreticalVariance(
            nu_eff=1.0, zeta_eff=1.0, variant=EifVariant(Estimand.CONTRAST, DatasetKind.TYPE1)
        )
        s = summary_with("e", "theta", "type2", var_sqrt_n=4.0)
        with pytest.raises(VariantMismatch):
            compare_to_bound(s, target, design=(50, 50))
