"""Domain types, dataset validation, fold splitting, and the Gaussian-shift simulator.

A pooled dataset mixes rows from a training population (s = 1) and a
calibration/testing population (s = 0). Treatments a take values in {+1, -1}
and may be missing together with the outcome y on calibration rows, depending
on the dataset kind.

All randomness flows through ``numpy.random.Generator`` seeded with PCG64
(``numpy.random.default_rng``), so every simulation is bitwise reproducible
from its seed.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import (
    DimensionMismatch,
    EmptyStratum,
    InvalidConfig,
    InvalidRho,
    MissingnessMismatch,
    StratumTooSmall,
)

__all__ = [
    "DatasetKind",
    "Observation",
    "PooledDataset",
    "Policy",
    "LinearPolicy",
    "FunctionPolicy",
    "constant_policy",
    "SimulationConfig",
    "FoldAssignment",
    "validate_dataset",
    "simulate_gaussian_shift",
    "true_weight_gaussian",
    "true_log_odds_gaussian",
    "split_cross_fit_folds",
    "read_dataset_csv",
    "write_dataset_csv",
]


class DatasetKind(enum.Enum):
    """Whether calibration rows carry observed treatments and outcomes."""

    TYPE1 = "type1"  # (a, y) observed on every row
    TYPE2 = "type2"  # (a, y) observed only where s = 1


def _as_matrix(x: NDArray) -> NDArray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :]
    if x.ndim != 2:
        raise DimensionMismatch(f"covariates must be 1- or 2-dimensional, got ndim={x.ndim}")
    return x


@dataclass(frozen=True, eq=False)
class Observation:
    """One pooled-data row: covariates, treatment, outcome, selection indicator.

    ``a`` and ``y`` are either both present or both ``None``; rows with
    s = 1 always carry both.
    """

    x: NDArray
    a: int | None
    y: float | None
    s: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 1:
            raise DimensionMismatch("observation covariates must be a 1-d vector")
        if not np.all(np.isfinite(x)):
            raise DimensionMismatch("observation covariates contain missing coordinates")
        object.__setattr__(self, "x", x)
        if self.s not in (0, 1):
            raise InvalidConfig(f"selection indicator must be 0 or 1, got {self.s}")
        if (self.a is None) != (self.y is None):
            raise MissingnessMismatch("treatment and outcome must be missing together")
        if self.a is not None and self.a not in (-1, 1):
            raise InvalidConfig(f"treatment must be +1 or -1, got {self.a}")
        if self.s == 1 and self.a is None:
            raise MissingnessMismatch("training rows (s = 1) must carry treatment and outcome")


@dataclass(frozen=True, eq=False)
class PooledDataset:
    """Immutable array-backed pooled dataset.

    Missing treatments/outcomes are held as NaN in the ``a``/``y`` arrays;
    the ``observed`` mask is the authoritative missingness indicator and all
    estimators consult it before touching ``a`` or ``y``.
    """

    x: NDArray  # (n, p)
    a: NDArray  # (n,)  values in {-1, +1} or NaN
    y: NDArray  # (n,)  float or NaN
    s: NDArray  # (n,)  values in {0, 1}
    kind: DatasetKind

    @classmethod
    def from_arrays(cls, x, a, y, s, kind: DatasetKind) -> "PooledDataset":
        x = np.ascontiguousarray(np.asarray(x, dtype=float))
        a = np.asarray(a, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        s = np.asarray(s).ravel()
        if x.ndim != 2:
            raise DimensionMismatch("covariate matrix must be 2-dimensional")
        n = x.shape[0]
        if not (a.shape[0] == y.shape[0] == s.shape[0] == n):
            raise DimensionMismatch("x, a, y, s must have one entry per row")
        if not np.all(np.isfinite(x)):
            raise DimensionMismatch("covariates contain missing coordinates")
        if not np.isin(s, (0, 1)).all():
            raise InvalidConfig("selection indicator must be 0 or 1 on every row")
        s = s.astype(np.int64)

        observed = ~np.isnan(a)
        if np.any(observed != ~np.isnan(y)):
            raise MissingnessMismatch("treatment and outcome must be missing together")
        if not np.isin(a[observed], (-1.0, 1.0)).all():
            raise InvalidConfig("observed treatments must be +1 or -1")
        if not np.all(np.isfinite(y[observed])):
            raise MissingnessMismatch("observed outcomes must be finite")
        if np.any(~observed & (s == 1)):
            raise MissingnessMismatch("training rows (s = 1) must carry treatment and outcome")
        if kind is DatasetKind.TYPE1 and not observed.all():
            raise MissingnessMismatch("Type-1 datasets require (a, y) on every row")
        if kind is DatasetKind.TYPE2 and np.any(observed & (s == 0)):
            raise MissingnessMismatch(
                "Type-2 datasets must not carry (a, y) on calibration rows"
            )

        n1 = int(np.sum(s == 1))
        n0 = n - n1
        if n1 == 0 or n0 == 0:
            raise EmptyStratum(f"both strata must be non-empty, got n1={n1}, n0={n0}")
        return cls(x=x, a=a, y=y, s=s, kind=kind)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def n1(self) -> int:
        return int(np.sum(self.s == 1))

    @property
    def n0(self) -> int:
        return int(np.sum(self.s == 0))

    @property
    def observed(self) -> NDArray:
        """Boolean mask of rows with (a, y) observed."""
        return ~np.isnan(self.a)

    @property
    def rows(self) -> list[Observation]:
        out = []
        for i in range(self.n):
            missing = np.isnan(self.a[i])
            out.append(
                Observation(
                    x=self.x[i],
                    a=None if missing else int(self.a[i]),
                    y=None if missing else float(self.y[i]),
                    s=int(self.s[i]),
                )
            )
        return out

    def subset(self, mask: NDArray) -> "PooledDataset":
        mask = np.asarray(mask, dtype=bool)
        return PooledDataset.from_arrays(
            self.x[mask], self.a[mask], self.y[mask], self.s[mask], self.kind
        )

    def as_type2(self) -> "PooledDataset":
        """Mask calibration (a, y) and re-label the dataset as Type-2."""
        a = self.a.copy()
        y = self.y.copy()
        calib = self.s == 0
        a[calib] = np.nan
        y[calib] = np.nan
        return PooledDataset.from_arrays(self.x, a, y, self.s, DatasetKind.TYPE2)


def validate_dataset(rows: Sequence[Observation], kind: DatasetKind) -> PooledDataset:
    """Build a validated :class:`PooledDataset` from row objects.

    Raises
    ------
    EmptyStratum
        If either stratum is empty.
    MissingnessMismatch
        If the (a, y) missingness pattern contradicts ``kind``.
    DimensionMismatch
        If covariate vectors disagree in length.
    """
    if len(rows) == 0:
        raise EmptyStratum("dataset has no rows")
    p = rows[0].x.shape[0]
    for r in rows:
        if r.x.shape[0] != p:
            raise DimensionMismatch(
                f"covariate dimension differs across rows: {r.x.shape[0]} vs {p}"
            )
    x = np.stack([r.x for r in rows])
    a = np.array([np.nan if r.a is None else float(r.a) for r in rows])
    y = np.array([np.nan if r.y is None else float(r.y) for r in rows])
    s = np.array([r.s for r in rows])
    return PooledDataset.from_arrays(x, a, y, s, kind)


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


class Policy:
    """Deterministic decision rule x -> {+1, -1} with a descriptive label."""

    label: str = "policy"

    def decide(self, x: NDArray) -> NDArray:
        raise NotImplementedError

    def __call__(self, x: NDArray) -> NDArray:
        """Evaluate the rule; accepts (n, p) matrices or single (p,) vectors."""
        single = np.asarray(x).ndim == 1
        d = self.decide(_as_matrix(x))
        return int(d[0]) if single else d


@dataclass(frozen=True, eq=False)
class LinearPolicy(Policy):
    """d(x) = sign(intercept + coeffs . x), with sign(0) = +1."""

    intercept: float
    coeffs: NDArray
    label: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float).ravel())

    def decide(self, x: NDArray) -> NDArray:
        score = self.intercept + x @ self.coeffs
        return np.where(score >= 0.0, 1, -1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class FunctionPolicy(Policy):
    """Wrap an arbitrary deterministic rule (mainly for tests)."""

    fn: Callable[[NDArray], NDArray]
    label: str = "function"

    def decide(self, x: NDArray) -> NDArray:
        return np.asarray(self.fn(x), dtype=np.int64)


def constant_policy(sign: int, p: int) -> LinearPolicy:
    if sign not in (-1, 1):
        raise InvalidConfig("constant policy sign must be +1 or -1")
    return LinearPolicy(intercept=float(sign), coeffs=np.zeros(p), label=f"always{sign:+d}")


# ---------------------------------------------------------------------------
# Gaussian-shift simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SimulationConfig:
    """Configuration of the Gaussian covariate-shift data-generating process.

    Covariates are N_p(mu, I) in the training stratum and N_p(0, I) in the
    calibration/testing stratum, so the covariate weight function (the
    testing-over-training density ratio) is exp(||mu||^2/2 - mu . x) and the
    selection log-odds are affine with slope mu. Outcomes follow the linear
    model

        y = b0 + bx . x + a * (g0 + gx . x) + eps,   eps ~ N(0, noise_sd^2),

    with ``outcome_coeffs`` laid out as [b0, bx_1..bx_p, g0, gx_1..gx_p].
    Treatment is randomized with a constant probability of a = +1.
    """

    p: int
    mu: NDArray
    rho_s: float
    n: int
    outcome_coeffs: NDArray
    noise_sd: float
    propensity: float
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float).ravel())
        object.__setattr__(
            self, "outcome_coeffs", np.asarray(self.outcome_coeffs, dtype=float).ravel()
        )
        if self.p < 1:
            raise InvalidConfig("covariate dimension must be >= 1")
        if self.mu.shape[0] != self.p:
            raise InvalidConfig(f"mu must have length p={self.p}")
        if not 0.0 < self.rho_s < 1.0:
            raise InvalidConfig("rho_s must lie in (0, 1)")
        if self.n < 2:
            raise InvalidConfig("n must be at least 2")
        if self.outcome_coeffs.shape[0] != 2 * self.p + 2:
            raise InvalidConfig(
                f"outcome_coeffs must have length 2p+2={2 * self.p + 2}, "
                f"got {self.outcome_coeffs.shape[0]}"
            )
        if self.noise_sd < 0.0:
            raise InvalidConfig("noise_sd must be >= 0")
        if not 0.0 < self.propensity < 1.0:
            raise InvalidConfig("propensity must lie in (0, 1)")
        if self.seed < 0:
            raise InvalidConfig("seed must be a non-negative integer")

    def outcome_mean(self, x: NDArray, a) -> NDArray:
        """True Q(x, a) under the linear outcome model."""
        x = _as_matrix(x)
        c = self.outcome_coeffs
        b0, bx = c[0], c[1 : self.p + 1]
        g0, gx = c[self.p + 1], c[self.p + 2 :]
        return b0 + x @ bx + np.asarray(a, dtype=float) * (g0 + x @ gx)

    def to_json_dict(self) -> dict:
        return {
            "p": self.p,
            "mu": self.mu.tolist(),
            "rho_s": self.rho_s,
            "n": self.n,
            "outcome_coeffs": self.outcome_coeffs.tolist(),
            "noise_sd": self.noise_sd,
            "propensity": self.propensity,
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SimulationConfig":
        try:
            return cls(
                p=int(d["p"]),
                mu=np.asarray(d["mu"], dtype=float),
                rho_s=float(d["rho_s"]),
                n=int(d["n"]),
                outcome_coeffs=np.asarray(d["outcome_coeffs"], dtype=float),
                noise_sd=float(d["noise_sd"]),
                propensity=float(d["propensity"]),
                seed=int(d["seed"]),
            )
        except KeyError as e:
            raise InvalidConfig(f"simulation config missing field {e}") from e

    @classmethod
    def from_json(cls, text: str) -> "SimulationConfig":
        return cls.from_json_dict(json.loads(text))


def true_weight_gaussian(x: NDArray, mu: NDArray) -> NDArray:
    """Density ratio of N_p(0, I) over N_p(mu, I): exp(||mu||^2 / 2 - mu . x).

    This is the testing-over-training covariate density ratio when training
    covariates are N_p(mu, I) and testing covariates are N_p(0, I); its mean
    over the training law is 1.
    """
    mu = np.asarray(mu, dtype=float).ravel()
    single = np.asarray(x).ndim == 1
    xm = _as_matrix(x)
    if xm.shape[1] != mu.shape[0]:
        raise DimensionMismatch(
            f"x has dimension {xm.shape[1]} but mu has dimension {mu.shape[0]}"
        )
    w = np.exp(0.5 * float(mu @ mu) - xm @ mu)
    return float(w[0]) if single else w


def true_log_odds_gaussian(x: NDArray, mu: NDArray, rho_s: float) -> NDArray:
    """Log-odds of s = 1 given x under the Gaussian-shift design.

    Equals log(rho_s / (1 - rho_s)) - ||mu||^2 / 2 + mu . x, the affine
    function a correctly specified logistic selection model recovers.
    """
    if not 0.0 < rho_s < 1.0:
        raise InvalidRho(f"rho_s must lie in (0, 1), got {rho_s}")
    mu = np.asarray(mu, dtype=float).ravel()
    single = np.asarray(x).ndim == 1
    xm = _as_matrix(x)
    if xm.shape[1] != mu.shape[0]:
        raise DimensionMismatch(
            f"x has dimension {xm.shape[1]} but mu has dimension {mu.shape[0]}"
        )
    out = np.log(rho_s / (1.0 - rho_s)) - 0.5 * float(mu @ mu) + xm @ mu
    return float(out[0]) if single else out


def simulate_gaussian_shift(config: SimulationConfig):
    """Simulate a pooled dataset under Gaussian covariate shift.

    Draw order (fixed for reproducibility): selection indicators, covariate
    noise, treatment uniforms, outcome noise. Returns the dataset (Type-1:
    every row carries (a, y)) together with the oracle nuisance set whose
    weight, propensity, and outcome functions are the data-generating truth.

    Returns
    -------
    (PooledDataset, NuisanceSet)
    """
    from .nuisance import gaussian_oracle_nuisances

    rng = np.random.default_rng(config.seed)
    n, p = config.n, config.p
    s = rng.binomial(1, config.rho_s, size=n).astype(np.int64)
    z = rng.standard_normal((n, p))
    x = z + np.outer(s == 1, config.mu)
    u = rng.random(n)
    a = np.where(u < config.propensity, 1.0, -1.0)
    eps = config.noise_sd * rng.standard_normal(n)
    y = config.outcome_mean(x, a) + eps
    data = PooledDataset.from_arrays(x, a, y, s, DatasetKind.TYPE1)
    oracle = gaussian_oracle_nuisances(config, rho_hat=data.n1 / data.n)
    return data, oracle


# ---------------------------------------------------------------------------
# Cross-fitting folds
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    """Stratified assignment of rows to K bags (values 1..k)."""

    k: int
    bag_of: NDArray

    def __post_init__(self):
        object.__setattr__(self, "bag_of", np.asarray(self.bag_of, dtype=np.int64).ravel())
        if self.k < 2:
            raise InvalidConfig("number of bags must be >= 2")
        if not np.isin(self.bag_of, np.arange(1, self.k + 1)).all():
            raise InvalidConfig("bag indices must lie in 1..k")


def split_cross_fit_folds(data: PooledDataset, k: int, seed: int) -> FoldAssignment:
    """Randomly split each stratum into k bags of near-equal size.

    Within each stratum the bag sizes differ by at most one. Deterministic
    given ``seed``.
    """
    if k < 2:
        raise InvalidConfig("number of bags must be >= 2")
    if min(data.n1, data.n0) < k:
        raise StratumTooSmall(
            f"each stratum needs at least k={k} rows, got n1={data.n1}, n0={data.n0}"
        )
    rng = np.random.default_rng(seed)
    bag_of = np.zeros(data.n, dtype=np.int64)
    for stratum in (1, 0):
        idx = np.flatnonzero(data.s == stratum)
        perm = rng.permutation(idx)
        bag_of[perm] = np.arange(perm.shape[0]) % k + 1
    return FoldAssignment(k=k, bag_of=bag_of)


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_dataset_csv(data: PooledDataset, path) -> None:
    """Write the dataset with header x_1..x_p,a,y,s; 17 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x_{j + 1}" for j in range(data.p)] + ["a", "y", "s"])
        observed = data.observed
        for i in range(data.n):
            row = [_fmt(v) for v in data.x[i]]
            if observed[i]:
                row += [str(int(data.a[i])), _fmt(data.y[i])]
            else:
                row += ["", ""]
            row.append(str(int(data.s[i])))
            writer.writerow(row)


def read_dataset_csv(path) -> PooledDataset:
    """Read a dataset CSV, inferring Type-1 vs Type-2 from empty (a, y) cells."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyStratum("dataset CSV is empty")
        expected_tail = ["a", "y", "s"]
        if len(header) < 4 or header[-3:] != expected_tail:
            raise InvalidConfig("dataset CSV header must be x_1..x_p,a,y,s")
        p = len(header) - 3
        if header[:p] != [f"x_{j + 1}" for j in range(p)]:
            raise InvalidConfig("dataset CSV header must be x_1..x_p,a,y,s")
        xs, as_, ys, ss = [], [], [], []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != p + 3:
                raise DimensionMismatch(f"line {line_no}: expected {p + 3} cells")
            xs.append([float(v) for v in row[:p]])
            a_cell, y_cell, s_cell = row[p], row[p + 1], row[p + 2]
            if (a_cell == "") != (y_cell == ""):
                raise MissingnessMismatch(f"line {line_no}: a and y must be missing together")
            as_.append(np.nan if a_cell == "" else float(a_cell))
            ys.append(np.nan if y_cell == "" else float(y_cell))
            ss.append(int(s_cell))
    a = np.asarray(as_)
    kind = DatasetKind.TYPE2 if np.isnan(a).any() else DatasetKind.TYPE1
    return PooledDataset.from_arrays(np.asarray(xs), a, np.asarray(ys), np.asarray(ss), kind)
