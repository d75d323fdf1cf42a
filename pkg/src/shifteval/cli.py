"""Batch command-line front end.

Subcommands:

* ``simulate``   -- SimulationConfig JSON -> dataset CSV + truth JSON
* ``estimate``   -- dataset CSV + estimator config -> estimate report JSON
* ``calibrate``  -- dataset + candidate rules JSON -> selection JSON
* ``montecarlo`` -- replication config -> summary JSON + CSV

Every emitted report embeds the SHA-256 hash of the effective
(flag-overridden) configuration and the package version. Exit codes:
0 on success, 2 on usage errors, 1 on data or validation errors (with a
structured JSON error message on stderr).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import candidates_from_json, select_policy
from .data_model import (
    DatasetKind,
    LinearPolicy,
    SimulationConfig,
    read_dataset_csv,
    simulate_gaussian_shift,
    split_cross_fit_folds,
    write_dataset_csv,
)
from .errors import InvalidConfig, ShiftEvalError
from .estimators import (
    Estimand,
    FitRecipe,
    assemble_nuisances,
    cross_fit_estimate,
    estimate_efficient,
)
from .montecarlo import EstimatorSpec, McConfig, run_replications
from .nuisance import KernelSpec, NuisanceSet, gaussian_oracle_nuisances

PI_A_NOTE = (
    "The policy-action propensity pi_A(d|x,s) is evaluated as pi_A(d(x)|x,s) "
    "in all variance formulas."
)


def canonical_hash(config: dict) -> str:
    """SHA-256 of the canonicalized (sorted, compact) JSON encoding."""
    text = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _policy_from_dict(d: dict) -> LinearPolicy:
    try:
        if d["type"] != "linear":
            raise InvalidConfig(f"unsupported policy type {d['type']!r}")
        return LinearPolicy(
            intercept=float(d["intercept"]),
            coeffs=np.asarray(d["coeffs"], dtype=float),
            label=d.get("label", "linear"),
        )
    except KeyError as e:
        raise InvalidConfig(f"policy specification missing field {e}") from e


def _sim_config_from_truth(truth: dict) -> SimulationConfig:
    return SimulationConfig.from_json_dict(truth)


def _oracle_from_truth(truth_path, rho_hat: float) -> NuisanceSet:
    truth = _load_json(truth_path)
    return gaussian_oracle_nuisances(_sim_config_from_truth(truth), rho_hat=rho_hat)


def _kind_from_string(text: str) -> DatasetKind:
    try:
        return DatasetKind(text)
    except ValueError:
        raise InvalidConfig(f"unknown dataset kind {text!r}") from None


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    config = _load_json(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    sim = SimulationConfig.from_json_dict(config)
    effective = sim.to_json_dict()
    effective["kind"] = args.kind
    data, _ = simulate_gaussian_shift(sim)
    if args.kind == "type2":
        data = data.as_type2()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset_csv(data, out / "dataset.csv")
    truth = sim.to_json_dict()
    truth["model"] = "gaussian_shift_linear"
    truth["weight_form"] = {"form": "exponential_tilt_gaussian", "mu": sim.mu.tolist()}
    truth["config_sha256"] = canonical_hash(effective)
    truth["spec_version"] = __version__
    _write_json(out / "truth.json", truth)
    print(f"wrote {out / 'dataset.csv'} ({data.n} rows) and {out / 'truth.json'}")
    return 0


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------


def _kernel_from_config(config: dict) -> KernelSpec | None:
    k = config.get("kernel")
    if k is None:
        return None
    return KernelSpec(
        family=k.get("family", "rbf"),
        bandwidth=k.get("bandwidth"),
        ridge=k.get("ridge"),
    )


def cmd_estimate(args) -> int:
    config = _load_json(args.config)
    if args.variant is not None:
        config["estimand"] = args.variant
    if args.kind is not None:
        config["kind"] = args.kind
    if args.weights is not None:
        config["weights"] = args.weights
    if args.crossfit is not None:
        config["crossfit"] = args.crossfit
    if args.seed is not None:
        config["seed"] = args.seed

    data = read_dataset_csv(config["dataset"])
    estimand = Estimand(config.get("estimand", "theta"))
    kind = _kind_from_string(config["kind"]) if "kind" in config else data.kind
    policy = _policy_from_dict(config["policy"])
    weights = config.get("weights", "oracle")
    propensity = config.get("propensity", "oracle")
    outcome = config.get("outcome", "oracle")
    level = float(config.get("level", 0.95))
    crossfit = int(config.get("crossfit", 0))
    seed = int(config.get("seed", 0))

    eval_data = data.as_type2() if kind is DatasetKind.TYPE2 and data.kind is DatasetKind.TYPE1 else data
    oracle = None
    if "oracle" in (weights, propensity, outcome):
        if "truth" not in config:
            raise InvalidConfig("oracle nuisances requested but no 'truth' path configured")
        oracle = _oracle_from_truth(config["truth"], rho_hat=eval_data.n1 / eval_data.n)
    recipe = FitRecipe(
        weights=weights,
        propensity=propensity,
        outcome=outcome,
        oracle=oracle,
        kernel=_kernel_from_config(config),
    )

    if crossfit >= 2:
        folds = split_cross_fit_folds(eval_data, crossfit, seed=seed)
        report = cross_fit_estimate(
            eval_data, folds, recipe, policy, estimand, kind=kind, level=level
        )
    else:
        all_oracle = (weights, propensity, outcome) == ("oracle",) * 3
        nuisances = oracle if all_oracle else assemble_nuisances(eval_data, recipe)
        report = estimate_efficient(
            eval_data, nuisances, policy, estimand, kind=kind, level=level
        )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = report.to_json_dict()
    payload["config_sha256"] = canonical_hash(config)
    payload["spec_version"] = __version__
    payload["notes"] = [PI_A_NOTE]
    _write_json(out / "estimate_report.json", payload)
    print(f"estimate={report.estimate:.17g} se={report.se:.17g} -> {out / 'estimate_report.json'}")
    return 0


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------


def cmd_calibrate(args) -> int:
    config = _load_json(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    data = read_dataset_csv(config["dataset"])
    with open(config["candidates"]) as fh:
        candidates = candidates_from_json(fh.read())
    method = config.get("method", "covariates_only")
    stratum = int(config.get("ipw_propensity_stratum", 1))

    weights = config.get("weights", "aipsw")
    propensity = config.get("propensity", "oracle")
    outcome = config.get("outcome", "oracle")
    oracle = None
    if "oracle" in (weights, propensity, outcome):
        if "truth" not in config:
            raise InvalidConfig("oracle nuisances requested but no 'truth' path configured")
        oracle = _oracle_from_truth(config["truth"], rho_hat=data.n1 / data.n)
    recipe = FitRecipe(
        weights=weights,
        propensity=propensity,
        outcome=outcome,
        oracle=oracle,
        kernel=_kernel_from_config(config),
    )
    nuisances = assemble_nuisances(data, recipe)
    result = select_policy(
        candidates, data, method, nuisances, ipw_propensity_stratum=stratum
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = result.to_json_dict()
    payload["config_sha256"] = canonical_hash(config)
    payload["spec_version"] = __version__
    _write_json(out / "selection.json", payload)
    print(f"chose c={result.chosen_c:g} ({result.chosen_policy.label}) -> {out / 'selection.json'}")
    return 0


# ---------------------------------------------------------------------------
# montecarlo
# ---------------------------------------------------------------------------


def cmd_montecarlo(args) -> int:
    config = _load_json(args.config)
    if args.seed is not None:
        config.setdefault("base", {})
        config["base"]["seed"] = args.seed
    base = SimulationConfig.from_json_dict(config["base"])
    policy = _policy_from_dict(config["policy"])
    try:
        specs = tuple(
            EstimatorSpec(
                name=e["name"],
                estimand=Estimand(e.get("estimand", "theta")),
                kind=_kind_from_string(e.get("kind", "type2")),
                weights=e.get("weights", "oracle"),
                propensity=e.get("propensity", "oracle"),
                outcome=e.get("outcome", "oracle"),
                crossfit=bool(e.get("crossfit", False)),
            )
            for e in config["estimators"]
        )
    except KeyError as e:
        raise InvalidConfig(f"estimator entry missing field {e}") from e
    mc = McConfig(
        base=base,
        replications=int(config["replications"]),
        policy=policy,
        estimators=specs,
        crossfit_k=int(config.get("crossfit_k", 5)),
        level=float(config.get("level", 0.95)),
        n_jobs=int(config.get("n_jobs", 1)),
        truth_draws=int(config.get("truth_draws", 1_000_000)),
        variance_draws=int(config.get("variance_draws", 1_000_000)),
    )
    tic = time.perf_counter()
    summary = run_replications(mc)
    elapsed = time.perf_counter() - tic

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = summary.to_json_dict()
    payload["config_sha256"] = canonical_hash(config)
    payload["spec_version"] = __version__
    payload["notes"] = [PI_A_NOTE]
    _write_json(out / "mc_summary.json", payload)
    summary.write_csv(out / "mc_summary.csv")
    # runtimes go to the console only so the emitted files stay reproducible
    for e in summary.estimators:
        print(f"{e.name}: bias={e.bias:+.5f} coverage={e.coverage:.3f} "
              f"mean_runtime={e.mean_runtime_s * 1e3:.2f}ms")
    print(f"completed {mc.replications} replicates in {elapsed:.1f}s -> {out}")
    return 0


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shifteval",
        description="Policy-value estimation on a shifted testing population.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate a Gaussian-shift pooled dataset")
    sim.add_argument("--config", required=True, help="SimulationConfig JSON path")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--seed", type=int, default=None, help="override the config seed")
    sim.add_argument("--kind", choices=["type1", "type2"], default="type1")
    sim.set_defaults(func=cmd_simulate)

    est = sub.add_parser("estimate", help="estimate a policy value from a dataset")
    est.add_argument("--config", required=True)
    est.add_argument("--out", required=True)
    est.add_argument("--seed", type=int, default=None)
    est.add_argument("--kind", choices=["type1", "type2"], default=None)
    est.add_argument("--variant", choices=["theta", "theta1"], default=None)
    est.add_argument("--weights", choices=["oracle", "aipsw", "kulsif", "eb"], default=None)
    est.add_argument("--crossfit", type=int, default=None, metavar="K")
    est.set_defaults(func=cmd_estimate)

    cal = sub.add_parser("calibrate", help="select a candidate rule on calibration data")
    cal.add_argument("--config", required=True)
    cal.add_argument("--out", required=True)
    cal.add_argument("--seed", type=int, default=None)
    cal.set_defaults(func=cmd_calibrate)

    mc = sub.add_parser("montecarlo", help="run a replicated simulation study")
    mc.add_argument("--config", required=True)
    mc.add_argument("--out", required=True)
    mc.add_argument("--seed", type=int, default=None)
    mc.set_defaults(func=cmd_montecarlo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except ShiftEvalError as e:
        print(json.dumps({"error": e.name, "message": str(e)}), file=sys.stderr)
        return 1
    except (FileNotFoundError, json.JSONDecodeError) as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
