"""Efficient and plug-in estimators of testing-population policy values.

Two estimands are supported for a fixed deterministic rule d:

* the policy value  theta  = E_test[Y(d)], and
* the contrast      theta1 = E_test[Y(d) - Y(-d)] = E_test[C(X) d(X)].

Each has a Type-1 and a Type-2 efficient estimator depending on whether
calibration rows carry observed treatments and outcomes. The population
sampling rate is always replaced by the realized n1/n (and 1 - rho by n0/n).

Per-row efficient-influence-function contributions drive the reported
standard errors; with the self-consistent point estimate their sample mean
is zero by construction.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.stats import norm

from .data_model import (
    DatasetKind,
    FoldAssignment,
    Observation,
    Policy,
    PooledDataset,
)
from .errors import (
    DegenerateDenominator,
    InvalidConfig,
    InvalidLevel,
    MissingField,
    MissingStratum,
    ShiftEvalError,
)
from .nuisance import (
    InstrumentSet,
    KernelSpec,
    NuisanceSet,
    SimulationTruth,
    fit_outcome_regression,
    fit_propensity_logistic,
    fit_weights_aipsw,
    fit_weights_entropy_balancing,
    fit_weights_kulsif,
    merge_propensity,
)

__all__ = [
    "Estimand",
    "EifVariant",
    "EstimateReport",
    "TheoreticalVariance",
    "FitRecipe",
    "assemble_nuisances",
    "eif_contribution",
    "estimate_efficient",
    "estimate_plugin_identification",
    "cross_fit_estimate",
    "theoretical_variance",
    "wald_ci",
]

DEFAULT_LEVEL = 0.95


class Estimand(enum.Enum):
    VALUE = "theta"  # E_test[Y(d)]
    CONTRAST = "theta1"  # E_test[Y(d) - Y(-d)]


@dataclass(frozen=True)
class EifVariant:
    """One of the four estimator variants: estimand x dataset kind."""

    estimand: Estimand
    kind: DatasetKind


@dataclass(frozen=True, eq=False)
class EstimateReport:
    estimate: float
    se: float
    ci: tuple
    level: float
    variant: EifVariant
    method: str
    nuisance: dict
    n: int
    n1: int
    n0: int

    def __post_init__(self):
        if self.se < 0:
            raise InvalidConfig("standard error must be >= 0")

    def to_json_dict(self) -> dict:
        return {
            "estimand": self.variant.estimand.value,
            "kind": self.variant.kind.value,
            "estimate": self.estimate,
            "se": self.se,
            "ci": [self.ci[0], self.ci[1]],
            "level": self.level,
            "method": self.method,
            "nuisance": self.nuisance,
            "n": self.n,
            "n1": self.n1,
            "n0": self.n0,
        }


@dataclass(frozen=True, eq=False)
class TheoreticalVariance:
    """Closed-form asymptotic variance components, integrated by Monte Carlo.

    ``nu_eff`` is the training-stratum component, ``zeta_eff`` the
    calibration-stratum component; the *_se fields are integration errors.
    """

    nu_eff: float
    zeta_eff: float
    variant: EifVariant
    nu_se: float = 0.0
    zeta_se: float = 0.0

    def sqrt_n_target(self, n1: int, n0: int) -> float:
        """Variance of sqrt(n)(estimate - truth): gamma1^2 nu + gamma0^2 zeta."""
        n = n1 + n0
        return (n / n1) * self.nu_eff + (n / n0) * self.zeta_eff


def wald_ci(estimate: float, se: float, level: float = DEFAULT_LEVEL) -> tuple:
    """Normal-quantile confidence interval estimate +- z_{(1+level)/2} * se."""
    if not 0.0 < level < 1.0:
        raise InvalidLevel(f"confidence level must lie in (0, 1), got {level}")
    if se < 0:
        raise InvalidLevel("standard error must be >= 0")
    z = norm.ppf(0.5 * (1.0 + level))
    return (float(estimate - z * se), float(estimate + z * se))


# ---------------------------------------------------------------------------
# Per-row nuisance values and the shared aggregation core
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class _PerRowParts:
    """Row-level quantities entering the estimator sums.

    Training arrays follow the order of rows with s = 1, calibration arrays
    the order of rows with s = 0. Calibration residual pieces are None for
    Type-2 evaluation, which never reads calibration (a, y).
    """

    d: NDArray  # (n,) policy decisions
    w_tr: NDArray  # (n1,)
    pi_tr: NDArray  # (n1,) pi_A(A_i | X_i, 1)
    resid_tr: NDArray  # (n1,) Y_i - Q(X_i, A_i)
    a_tr: NDArray  # (n1,)
    target_cal: NDArray  # (n0,) Q(X_i, d) or C(X_i) d(X_i)
    pi_cal: NDArray | None = None  # (n0,) pi_A(A_i | X_i, 0)
    resid_cal: NDArray | None = None  # (n0,)
    a_cal: NDArray | None = None  # (n0,)


def _coupler(estimand: Estimand, d: NDArray, a: NDArray) -> NDArray:
    if estimand is Estimand.VALUE:
        return (d == a).astype(float)
    return d * a


def _check_positive(name: str, arr: NDArray) -> None:
    if np.any(arr <= 0.0):
        raise DegenerateDenominator(f"{name} contains non-positive values")


def _build_parts(
    data: PooledDataset,
    nuisances: NuisanceSet,
    policy: Policy,
    estimand: Estimand,
    kind: DatasetKind,
) -> _PerRowParts:
    train = data.s == 1
    calib = ~train
    d = np.asarray(policy(data.x), dtype=float)

    x_tr = data.x[train]
    a_tr = data.a[train]
    w_tr = np.asarray(nuisances.weight(x_tr), dtype=float)
    pi_tr = np.asarray(nuisances.propensity.prob(a_tr, x_tr, 1), dtype=float)
    _check_positive("training propensities", pi_tr)
    resid_tr = data.y[train] - nuisances.outcome.q(x_tr, a_tr)

    x_cal = data.x[calib]
    d_cal = d[calib]
    if estimand is Estimand.VALUE:
        target_cal = nuisances.outcome.q(x_cal, d_cal)
    else:
        target_cal = nuisances.outcome.cte(x_cal) * d_cal

    parts = _PerRowParts(
        d=d, w_tr=w_tr, pi_tr=pi_tr, resid_tr=resid_tr, a_tr=a_tr, target_cal=target_cal
    )
    if kind is DatasetKind.TYPE1:
        if not data.observed[calib].all():
            raise MissingField(
                "Type-1 evaluation requires observed (a, y) on calibration rows"
            )
        a_cal = data.a[calib]
        pi_cal = np.asarray(nuisances.propensity.prob(a_cal, x_cal, 0), dtype=float)
        _check_positive("calibration propensities", pi_cal)
        parts.pi_cal = pi_cal
        parts.resid_cal = data.y[calib] - nuisances.outcome.q(x_cal, a_cal)
        parts.a_cal = a_cal
    return parts


def _combine(
    data: PooledDataset, parts: _PerRowParts, estimand: Estimand, kind: DatasetKind
):
    """Point estimate and per-row influence contributions at the estimate."""
    n, n1, n0 = data.n, data.n1, data.n0
    train = data.s == 1
    d = parts.d
    coup_tr = _coupler(estimand, d[train], parts.a_tr)
    term_tr = parts.w_tr * coup_tr / parts.pi_tr * parts.resid_tr

    if kind is DatasetKind.TYPE2:
        phi = float(np.mean(term_tr))
        estimate = phi + float(np.mean(parts.target_cal))
        eif = np.empty(n)
        eif[train] = (n / n1) * term_tr
        eif[~train] = (n / n0) * (parts.target_cal - estimate)
    else:
        coup_cal = _coupler(estimand, d[~train], parts.a_cal)
        term_cal = coup_cal / parts.pi_cal * parts.resid_cal
        estimate = (n1 / n) * float(np.mean(term_tr)) + float(
            np.mean((n0 / n) * term_cal + parts.target_cal)
        )
        eif = np.empty(n)
        eif[train] = term_tr
        eif[~train] = term_cal + (n / n0) * (parts.target_cal - estimate)
    return estimate, eif


def _finish_report(
    data, estimate, eif, variant, method, nuisance, level
) -> EstimateReport:
    n = data.n
    se = float(np.std(eif, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return EstimateReport(
        estimate=estimate,
        se=se,
        ci=wald_ci(estimate, se, level),
        level=level,
        variant=variant,
        method=method,
        nuisance=nuisance,
        n=n,
        n1=data.n1,
        n0=data.n0,
    )


# ---------------------------------------------------------------------------
# Public estimators
# ---------------------------------------------------------------------------


def estimate_efficient(
    data: PooledDataset,
    nuisances: NuisanceSet,
    policy: Policy,
    estimand: Estimand,
    kind: DatasetKind | None = None,
    level: float = DEFAULT_LEVEL,
) -> EstimateReport:
    """Semiparametric efficient estimate of the chosen estimand.

    The dataset kind selects the estimator form; a Type-1 dataset may be
    evaluated with ``kind=DatasetKind.TYPE2`` to ignore calibration (a, y).
    The standard error is the sample standard deviation of the per-row
    influence contributions at the self-consistent estimate, divided by
    sqrt(n).
    """
    kind = data.kind if kind is None else kind
    parts = _build_parts(data, nuisances, policy, estimand, kind)
    estimate, eif = _combine(data, parts, estimand, kind)
    return _finish_report(
        data,
        estimate,
        eif,
        EifVariant(estimand, kind),
        "efficient",
        nuisances.provenance(),
        level,
    )


def eif_contribution(
    obs: Observation,
    nuisances: NuisanceSet,
    policy: Policy,
    variant: EifVariant,
    theta_ref: float,
) -> float:
    """Influence-function value at one observation.

    The sampling rate rho is taken from ``nuisances.rho_hat`` (the n1/n
    plug-in when the set was built for a concrete dataset).
    """
    rho = nuisances.rho_hat
    x = obs.x[None, :]
    d = float(policy(obs.x))
    if obs.s == 1:
        if obs.a is None:
            raise MissingField("training row lacks (a, y)")
        w = float(nuisances.weight(obs.x))
        pi = float(nuisances.propensity.prob(obs.a, x, 1)[0])
        if pi <= 0.0:
            raise DegenerateDenominator("training propensity is non-positive")
        resid = obs.y - float(nuisances.outcome.q(x, obs.a)[0])
        coup = float(d == obs.a) if variant.estimand is Estimand.VALUE else d * obs.a
        scale = 1.0 if variant.kind is DatasetKind.TYPE1 else 1.0 / rho
        return scale * w * coup / pi * resid

    if variant.estimand is Estimand.VALUE:
        target = float(nuisances.outcome.q(x, d)[0])
    else:
        target = float(nuisances.outcome.cte(x)[0]) * d
    value = (target - theta_ref) / (1.0 - rho)
    if variant.kind is DatasetKind.TYPE1:
        if obs.a is None:
            raise MissingField("Type-1 influence function needs calibration (a, y)")
        pi = float(nuisances.propensity.prob(obs.a, x, 0)[0])
        if pi <= 0.0:
            raise DegenerateDenominator("calibration propensity is non-positive")
        resid = obs.y - float(nuisances.outcome.q(x, obs.a)[0])
        coup = float(d == obs.a) if variant.estimand is Estimand.VALUE else d * obs.a
        value += coup / pi * resid
    return value


_PLUGIN_FORMS = ("calibration_mean", "weighted_pooled", "weighted_training")


def estimate_plugin_identification(
    data: PooledDataset,
    nuisances: NuisanceSet,
    policy: Policy,
    estimand: Estimand,
    form: str,
    level: float = DEFAULT_LEVEL,
) -> EstimateReport:
    """Plug-in estimate from one of the three identification expressions.

    ``calibration_mean`` averages Q(X, d) (or C(X) d(X)) over calibration
    rows; ``weighted_pooled`` mixes weighted training rows with calibration
    rows; ``weighted_training`` uses weighted training rows only, normalized
    by the realized sampling rate. Standard errors are delta-method sample
    variances of the per-row terms.
    """
    if form not in _PLUGIN_FORMS:
        raise InvalidConfig(f"unknown identification form {form!r}")
    train = data.s == 1

    def target_on(x, d):
        if estimand is Estimand.VALUE:
            return nuisances.outcome.q(x, d)
        return nuisances.outcome.cte(x) * d

    if form == "calibration_mean":
        if not (~train).any():
            raise MissingStratum("calibration_mean requires calibration rows")
        x0 = data.x[~train]
        terms = target_on(x0, np.asarray(policy(x0), dtype=float))
    else:
        d = np.asarray(policy(data.x), dtype=float)
        target = target_on(data.x, d)
        w = np.asarray(nuisances.weight(data.x[train]), dtype=float)
        if form == "weighted_pooled":
            terms = target.copy()
            terms[train] = w * target[train]
        else:  # weighted_training
            terms = np.zeros(data.n)
            terms[train] = (data.n / data.n1) * w * target[train]

    estimate = float(np.mean(terms))
    m = terms.shape[0]
    se = float(np.std(terms, ddof=1) / np.sqrt(m)) if m > 1 else 0.0
    nuis = dict(nuisances.provenance())
    nuis["form"] = form
    return EstimateReport(
        estimate=estimate,
        se=se,
        ci=wald_ci(estimate, se, level),
        level=level,
        variant=EifVariant(estimand, data.kind),
        method=f"plugin:{form}",
        nuisance=nuis,
        n=data.n,
        n1=data.n1,
        n0=data.n0,
    )


# ---------------------------------------------------------------------------
# Cross-fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FitRecipe:
    """Which backend estimates each nuisance function.

    ``weights`` in {oracle, aipsw, kulsif, eb}; ``propensity`` in
    {oracle, logistic}; ``outcome`` in {oracle, linear, kernel_ridge}.
    ``oracle`` must be supplied when any component is oracle.
    """

    weights: str = "aipsw"
    propensity: str = "logistic"
    outcome: str = "linear"
    oracle: NuisanceSet | None = None
    kernel: KernelSpec | None = None
    instruments: InstrumentSet | None = None

    def __post_init__(self):
        if self.weights not in ("oracle", "aipsw", "kulsif", "eb"):
            raise InvalidConfig(f"unknown weight backend {self.weights!r}")
        if self.propensity not in ("oracle", "logistic"):
            raise InvalidConfig(f"unknown propensity backend {self.propensity!r}")
        if self.outcome not in ("oracle", "linear", "kernel_ridge"):
            raise InvalidConfig(f"unknown outcome backend {self.outcome!r}")
        if "oracle" in (self.weights, self.propensity, self.outcome) and self.oracle is None:
            raise InvalidConfig("recipe uses oracle components but no oracle set supplied")

    def describe(self) -> dict:
        return {
            "weights": self.weights,
            "propensity": self.propensity,
            "outcome": self.outcome,
        }


def assemble_nuisances(data: PooledDataset, recipe: FitRecipe) -> NuisanceSet:
    """Fit (or take from the oracle) all three nuisance functions on ``data``."""
    if recipe.weights == "oracle":
        weight = recipe.oracle.weight
    elif recipe.weights == "aipsw":
        weight = fit_weights_aipsw(data)
    elif recipe.weights == "kulsif":
        weight = fit_weights_kulsif(data, recipe.kernel or KernelSpec())
    else:
        weight = fit_weights_entropy_balancing(
            data, recipe.instruments or InstrumentSet.default(data.p)
        )

    if recipe.propensity == "oracle":
        propensity = recipe.oracle.propensity
    else:
        propensity = fit_propensity_logistic(data, 1)
        if data.observed[data.s == 0].any():
            propensity = merge_propensity(propensity, fit_propensity_logistic(data, 0))

    if recipe.outcome == "oracle":
        outcome = recipe.oracle.outcome
    else:
        outcome = fit_outcome_regression(data, method=recipe.outcome, spec=recipe.kernel)

    return NuisanceSet(
        weight=weight, propensity=propensity, outcome=outcome, rho_hat=data.n1 / data.n
    )


def cross_fit_estimate(
    data: PooledDataset,
    folds: FoldAssignment,
    recipe: FitRecipe,
    policy: Policy,
    estimand: Estimand,
    kind: DatasetKind | None = None,
    level: float = DEFAULT_LEVEL,
) -> EstimateReport:
    """Cross-fitted efficient estimate with out-of-bag nuisance functions.

    For each bag, nuisances are fitted on all rows outside the bag and
    evaluated on the bag's rows; the pooled per-row values then enter the
    same aggregation as :func:`estimate_efficient`. With a fully oracle
    recipe the result equals the non-cross-fitted estimate exactly.
    """
    kind = data.kind if kind is None else kind
    if folds.bag_of.shape[0] != data.n:
        raise InvalidConfig("fold assignment does not match dataset size")
    train = data.s == 1
    calib = ~train
    n1, n0 = data.n1, data.n0
    tr_pos = np.cumsum(train) - 1  # global row -> training-array position
    cal_pos = np.cumsum(calib) - 1

    d = np.asarray(policy(data.x), dtype=float)
    w_tr = np.empty(n1)
    pi_tr = np.empty(n1)
    resid_tr = np.empty(n1)
    target_cal = np.empty(n0)
    pi_cal = np.empty(n0) if kind is DatasetKind.TYPE1 else None
    resid_cal = np.empty(n0) if kind is DatasetKind.TYPE1 else None
    if kind is DatasetKind.TYPE1 and not data.observed[calib].all():
        raise MissingField("Type-1 evaluation requires observed (a, y) on calibration rows")

    per_bag = []
    for k in range(1, folds.k + 1):
        in_bag = folds.bag_of == k
        try:
            nus = assemble_nuisances(data.subset(~in_bag), recipe)
        except ShiftEvalError as e:
            raise type(e)(f"bag {k}: {e}") from e

        bt = in_bag & train
        if bt.any():
            xb, ab = data.x[bt], data.a[bt]
            idx = tr_pos[bt]
            w_tr[idx] = nus.weight(xb)
            pi_tr[idx] = nus.propensity.prob(ab, xb, 1)
            resid_tr[idx] = data.y[bt] - nus.outcome.q(xb, ab)
        bc = in_bag & calib
        if bc.any():
            xb, db = data.x[bc], d[bc]
            idx = cal_pos[bc]
            if estimand is Estimand.VALUE:
                target_cal[idx] = nus.outcome.q(xb, db)
            else:
                target_cal[idx] = nus.outcome.cte(xb) * db
            if kind is DatasetKind.TYPE1:
                ab = data.a[bc]
                pi_cal[idx] = nus.propensity.prob(ab, xb, 0)
                resid_cal[idx] = data.y[bc] - nus.outcome.q(xb, ab)
        diag = {"bag": k, "nuisance": nus.provenance()}
        for key in ("converged", "iterations"):
            if key in nus.weight.info:
                diag[f"weight_{key}"] = nus.weight.info[key]
        per_bag.append(diag)

    _check_positive("training propensities", pi_tr)
    if pi_cal is not None:
        _check_positive("calibration propensities", pi_cal)
    parts = _PerRowParts(
        d=d,
        w_tr=w_tr,
        pi_tr=pi_tr,
        resid_tr=resid_tr,
        a_tr=data.a[train],
        target_cal=target_cal,
        pi_cal=pi_cal,
        resid_cal=resid_cal,
        a_cal=data.a[calib] if kind is DatasetKind.TYPE1 else None,
    )
    estimate, eif = _combine(data, parts, estimand, kind)
    nuis = recipe.describe()
    nuis["crossfit_k"] = folds.k
    nuis["per_bag"] = per_bag
    return _finish_report(
        data, estimate, eif, EifVariant(estimand, kind), "crossfit", nuis, level
    )


# ---------------------------------------------------------------------------
# Closed-form asymptotic variances by Monte Carlo integration
# ---------------------------------------------------------------------------


def theoretical_variance(
    truth: SimulationTruth,
    policy: Policy,
    variant: EifVariant,
    rho_s: float | None = None,
    mc_draws: int = 1_000_000,
    seed: int = 0,
) -> TheoreticalVariance:
    """Evaluate the asymptotic variance components of one estimator variant.

    Expectations over the stratum-specific covariate laws are integrated by
    Monte Carlo with ``mc_draws`` draws per stratum; the *_se fields report
    the integration error.
    """
    if mc_draws < 1000:
        raise InvalidConfig("mc_draws must be at least 1000")
    rho = truth.rho_s if rho_s is None else rho_s
    rng = np.random.default_rng(seed)
    nus = truth.nuisances

    x1 = truth.sample_training(rng, mc_draws)
    d1 = np.asarray(policy(x1), dtype=float)
    w = np.asarray(nus.weight(x1), dtype=float)
    if variant.estimand is Estimand.VALUE:
        pi_d = np.asarray(nus.propensity.prob(d1, x1, 1), dtype=float)
        integrand = w**2 * truth.sigma2(x1, 1, d1) / pi_d
    else:
        pi_p = np.asarray(nus.propensity.prob(1, x1, 1), dtype=float)
        pi_m = np.asarray(nus.propensity.prob(-1, x1, 1), dtype=float)
        integrand = w**2 * (
            truth.sigma2(x1, 1, 1) / pi_p + truth.sigma2(x1, 1, -1) / pi_m
        )
    nu = float(np.mean(integrand))
    nu_se = float(np.std(integrand, ddof=1) / np.sqrt(mc_draws))
    if variant.kind is DatasetKind.TYPE1:
        nu, nu_se = rho**2 * nu, rho**2 * nu_se

    x0 = truth.sample_calibration(rng, mc_draws)
    d0 = np.asarray(policy(x0), dtype=float)
    if variant.estimand is Estimand.VALUE:
        target = nus.outcome.q(x0, d0)
    else:
        target = nus.outcome.cte(x0) * d0
    centered = target - np.mean(target)
    var_target = float(np.mean(centered**2))
    var_target_se = float(
        np.sqrt(max(np.mean(centered**4) - var_target**2, 0.0) / mc_draws)
    )
    zeta, zeta_se = var_target, var_target_se
    if variant.kind is DatasetKind.TYPE1:
        if variant.estimand is Estimand.VALUE:
            pi_d0 = np.asarray(nus.propensity.prob(d0, x0, 0), dtype=float)
            extra = truth.sigma2(x0, 0, d0) / pi_d0
        else:
            pi_p0 = np.asarray(nus.propensity.prob(1, x0, 0), dtype=float)
            pi_m0 = np.asarray(nus.propensity.prob(-1, x0, 0), dtype=float)
            extra = truth.sigma2(x0, 0, 1) / pi_p0 + truth.sigma2(x0, 0, -1) / pi_m0
        zeta = (1.0 - rho) ** 2 * float(np.mean(extra)) + var_target
        zeta_se = float(
            np.hypot((1.0 - rho) ** 2 * np.std(extra, ddof=1) / np.sqrt(mc_draws), var_target_se)
        )
    return TheoreticalVariance(
        nu_eff=nu, zeta_eff=zeta, variant=variant, nu_se=nu_se, zeta_se=zeta_se
    )
