import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shifteval import (
    DatasetKind,
    Observation,
    PooledDataset,
    constant_policy,
    LinearPolicy,
    SimulationConfig,
    read_dataset_csv,
    simulate_gaussian_shift,
    split_cross_fit_folds,
    true_log_odds_gaussian,
    true_weight_gaussian,
    validate_dataset,
    write_dataset_csv,
)
from shifteval.errors import (
    DimensionMismatch,
    EmptyStratum,
    InvalidConfig,
    InvalidRho,
    MissingnessMismatch,
    StratumTooSmall,
)

from conftest import make_config


def obs(x, a, y, s):
    return Observation(x=np.atleast_1d(np.asarray(x, dtype=float)), a=a, y=y, s=s)


class TestValidateDataset:
    def test_minimal_type1(self):
        rows = [obs(0.0, 1, 1.0, 1), obs(1.0, -1, 0.0, 1), obs(2.0, 1, 2.0, 0), obs(3.0, -1, 1.0, 0)]
        ds = validate_dataset(rows, DatasetKind.TYPE1)
        assert (ds.n1, ds.n0) == (2, 2)
        assert ds.kind is DatasetKind.TYPE1

    def test_minimal_type2(self):
        rows = [obs(0.0, 1, 1.0, 1), obs(1.0, None, None, 0)]
        ds = validate_dataset(rows, DatasetKind.TYPE2)
        assert (ds.n1, ds.n0) == (1, 1)

    def test_empty_stratum(self):
        rows = [obs(0.0, 1, 1.0, 1), obs(1.0, -1, 0.0, 1)]
        with pytest.raises(EmptyStratum):
            validate_dataset(rows, DatasetKind.TYPE1)

    def test_type2_with_observed_calibration_rejected(self):
        rows = [obs(0.0, 1, 1.0, 1), obs(1.0, 1, 1.0, 0)]
        with pytest.raises(MissingnessMismatch):
            validate_dataset(rows, DatasetKind.TYPE2)

    def test_type1_with_missing_calibration_rejected(self):
        rows = [obs(0.0, 1, 1.0, 1), obs(1.0, None, None, 0)]
        with pytest.raises(MissingnessMismatch):
            validate_dataset(rows, DatasetKind.TYPE1)

    def test_dimension_mismatch(self):
        rows = [obs([0.0, 1.0], 1, 1.0, 1), obs(1.0, None, None, 0)]
        with pytest.raises(DimensionMismatch):
            validate_dataset(rows, DatasetKind.TYPE2)

    def test_observation_invariants(self):
        with pytest.raises(MissingnessMismatch):
            Observation(x=np.zeros(1), a=1, y=None, s=0)
        with pytest.raises(MissingnessMismatch):
            Observation(x=np.zeros(1), a=None, y=None, s=1)
        with pytest.raises(InvalidConfig):
            Observation(x=np.zeros(1), a=2, y=1.0, s=1)

    def test_rows_round_trip(self):
        data, _ = simulate_gaussian_shift(make_config(n=30, seed=4))
        again = validate_dataset(data.rows, data.kind)
        np.testing.assert_array_equal(again.x, data.x)
        np.testing.assert_array_equal(again.s, data.s)
        np.testing.assert_array_equal(again.a, data.a)
        np.testing.assert_array_equal(again.y, data.y)


class TestTrueWeight:
    def test_zero_shift(self):
        assert true_weight_gaussian(np.array([3.0, -1.0]), np.zeros(2)) == 1.0

    def test_cancelling_exponent(self):
        assert true_weight_gaussian(np.array([0.5, 7.0]), np.array([1.0, 0.0])) == pytest.approx(1.0, abs=1e-15)

    def test_closed_form_at_origin(self):
        w = true_weight_gaussian(np.array([0.0, 0.0]), np.array([1.0, 0.0]))
        assert w == pytest.approx(np.exp(0.5), abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            true_weight_gaussian(np.zeros(3), np.zeros(2))


class TestTrueLogOdds:
    def test_symmetric(self):
        x = np.array([[0.3, -2.0], [1.0, 1.0]])
        np.testing.assert_allclose(true_log_odds_gaussian(x, np.zeros(2), 0.5), 0.0)

    def test_cancelling(self):
        assert true_log_odds_gaussian(np.array([0.5, 0.0]), np.array([1.0, 0.0]), 0.5) == pytest.approx(0.0, abs=1e-15)

    def test_closed_form(self):
        v = true_log_odds_gaussian(np.array([0.0, 0.0]), np.array([1.0, 0.0]), 0.75)
        assert v == pytest.approx(np.log(3.0) - 0.5, abs=1e-12)

    def test_invalid_rho(self):
        with pytest.raises(InvalidRho):
            true_log_odds_gaussian(np.zeros(2), np.zeros(2), 1.5)

    @given(
        st.integers(1, 4),
        st.floats(0.05, 0.95),
        st.integers(0, 10_000),
    )
    @settings(max_examples=40, deadline=None)
    def test_consistency_with_weight(self, p, rho, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(6, p))
        mu = rng.normal(scale=0.8, size=p)
        log_odds = true_log_odds_gaussian(x, mu, rho)
        w = true_weight_gaussian(x, mu)
        recon = (rho / (1 - rho)) * np.exp(-log_odds)
        np.testing.assert_allclose(w, recon, rtol=1e-12, atol=1e-12)


class TestSimulate:
    def test_no_shift_oracle_weight_is_one(self):
        data, oracle = simulate_gaussian_shift(make_config(mu=(0.0, 0.0), n=50, seed=1))
        np.testing.assert_array_equal(oracle.weight(data.x), np.ones(data.n))

    def test_zero_model_gives_zero_outcomes(self):
        cfg = make_config(outcome_coeffs=np.zeros(6), noise_sd=0.0, n=40, seed=2)
        data, _ = simulate_gaussian_shift(cfg)
        np.testing.assert_array_equal(data.y, np.zeros(data.n))

    def test_deterministic(self):
        cfg = make_config(n=200, seed=99)
        d1, _ = simulate_gaussian_shift(cfg)
        d2, _ = simulate_gaussian_shift(cfg)
        assert np.array_equal(d1.x, d2.x)
        assert np.array_equal(d1.a, d2.a)
        assert np.array_equal(d1.y, d2.y)
        assert np.array_equal(d1.s, d2.s)

    def test_selection_fraction_matches_rho(self):
        cfg = make_config(n=10_000, rho_s=0.4, seed=3)
        data, _ = simulate_gaussian_shift(cfg)
        se = np.sqrt(0.4 * 0.6 / 10_000)
        assert abs(data.n1 / data.n - 0.4) <= 3 * se

    def test_training_mean_weight_near_one(self):
        cfg = make_config(n=20_000, seed=5)
        data, oracle = simulate_gaussian_shift(cfg)
        w = oracle.weight(data.x[data.s == 1])
        assert abs(w.mean() - 1.0) <= 3 * w.std(ddof=1) / np.sqrt(w.shape[0])

    def test_invalid_configs(self):
        with pytest.raises(InvalidConfig):
            make_config(rho_s=1.2)
        with pytest.raises(InvalidConfig):
            make_config(noise_sd=-1.0)
        with pytest.raises(InvalidConfig):
            make_config(propensity=0.0)
        with pytest.raises(InvalidConfig):
            make_config(outcome_coeffs=np.zeros(5))
        with pytest.raises(InvalidConfig):
            make_config(mu=(0.5,))

    def test_config_json_round_trip(self):
        cfg = make_config(seed=17)
        again = SimulationConfig.from_json_dict(cfg.to_json_dict())
        assert again.to_json_dict() == cfg.to_json_dict()


class TestFolds:
    def test_even_split(self):
        data, _ = simulate_gaussian_shift(make_config(n=60, seed=11))
        folds = split_cross_fit_folds(data, 2, seed=0)
        for stratum in (1, 0):
            sizes = [np.sum((folds.bag_of == k) & (data.s == stratum)) for k in (1, 2)]
            assert max(sizes) - min(sizes) <= 1

    def test_exact_divisibility_and_remainders(self):
        x = np.arange(8.0)[:, None]
        ds = PooledDataset.from_arrays(x, [1] * 8, [0.0] * 8, [1, 1, 1, 1, 0, 0, 0, 0], DatasetKind.TYPE1)
        folds = split_cross_fit_folds(ds, 2, seed=1)
        for stratum in (1, 0):
            sizes = sorted(int(np.sum((folds.bag_of == k) & (ds.s == stratum))) for k in (1, 2))
            assert sizes == [2, 2]
        ds2 = PooledDataset.from_arrays(x, [1] * 8, [0.0] * 8, [1, 1, 1, 1, 1, 0, 0, 0], DatasetKind.TYPE1)
        folds2 = split_cross_fit_folds(ds2, 2, seed=1)
        train_sizes = sorted(int(np.sum((folds2.bag_of == k) & (ds2.s == 1))) for k in (1, 2))
        calib_sizes = sorted(int(np.sum((folds2.bag_of == k) & (ds2.s == 0))) for k in (1, 2))
        assert train_sizes == [2, 3]
        assert calib_sizes == [1, 2]

    def test_stratum_too_small(self):
        data, _ = simulate_gaussian_shift(make_config(n=20, seed=12))
        with pytest.raises(StratumTooSmall):
            split_cross_fit_folds(data, min(data.n1, data.n0) + 1, seed=0)

    def test_deterministic(self):
        data, _ = simulate_gaussian_shift(make_config(n=100, seed=13))
        f1 = split_cross_fit_folds(data, 5, seed=42)
        f2 = split_cross_fit_folds(data, 5, seed=42)
        assert np.array_equal(f1.bag_of, f2.bag_of)

    @given(st.integers(2, 6), st.integers(0, 5000))
    @settings(max_examples=30, deadline=None)
    def test_partition_property(self, k, seed):
        data, _ = simulate_gaussian_shift(make_config(n=25 + 7 * k, seed=seed % 97))
        if min(data.n1, data.n0) < k:
            return
        folds = split_cross_fit_folds(data, k, seed=seed)
        assert folds.bag_of.shape == (data.n,)
        assert set(np.unique(folds.bag_of)) <= set(range(1, k + 1))
        for stratum in (1, 0):
            sizes = [np.sum((folds.bag_of == b) & (data.s == stratum)) for b in range(1, k + 1)]
            assert max(sizes) - min(sizes) <= 1


class TestCsv:
    def test_round_trip_type1_bitwise(self, tmp_path):
        data, _ = simulate_gaussian_shift(make_config(n=80, seed=21))
        path = tmp_path / "d.csv"
        write_dataset_csv(data, path)
        again = read_dataset_csv(path)
        assert again.kind is DatasetKind.TYPE1
        assert np.array_equal(again.x, data.x)
        assert np.array_equal(again.a, data.a)
        assert np.array_equal(again.y, data.y)
        assert np.array_equal(again.s, data.s)

    def test_round_trip_type2(self, tmp_path):
        data, _ = simulate_gaussian_shift(make_config(n=80, seed=22))
        masked = data.as_type2()
        path = tmp_path / "d.csv"
        write_dataset_csv(masked, path)
        again = read_dataset_csv(path)
        assert again.kind is DatasetKind.TYPE2
        assert np.array_equal(again.x, masked.x)
        calib = again.s == 0
        assert np.isnan(again.a[calib]).all() and np.isnan(again.y[calib]).all()

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("u,v,w\n1,2,3\n")
        with pytest.raises(InvalidConfig):
            read_dataset_csv(path)

    def test_half_missing_cell_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x_1,a,y,s\n0.0,1,1.0,1\n1.0,,2.0,0\n")
        with pytest.raises(MissingnessMismatch):
            read_dataset_csv(path)


class TestPolicy:
    def test_sign_zero_is_plus_one(self):
        pol = LinearPolicy(0.0, np.array([1.0]))
        assert pol(np.zeros(1)) == 1

    def test_constant_policy(self):
        pol = constant_policy(-1, 2)
        assert np.array_equal(pol(np.random.default_rng(0).normal(size=(5, 2))), -np.ones(5))

    def test_deterministic(self):
        pol = LinearPolicy(0.3, np.array([1.0, -2.0]))
        x = np.random.default_rng(1).normal(size=(10, 2))
        assert np.array_equal(pol(x), pol(x))
