"""Command-line front end: sample, oracle, corrupt, learn, verify, experiment.

Exit codes: 0 success, 1 numeric failure, 2 usage or input error,
3 refusal because the external-field feasibility inequality fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .contamination import ATTACKS, AttackSpec, corrupt
from .glauber import ChainConfig, chain_key, read_samples, sample_batch, write_samples
from .ising import (
    DEFAULT_ENUM_CAP,
    CapacityError,
    DobrushinSpec,
    DomainError,
    IsingParameters,
    NumericError,
    ParameterError,
    exact_summary,
    exact_tv,
    load_model,
    random_dobrushin,
    save_model,
)
from .learner import (
    ConstraintError,
    LearnerConfig,
    robust_learn_ising_external,
    robust_learn_ising_zero_field,
    write_trace,
)
from . import verify as V

RESULT_COLUMNS = ("rep", "eps", "frobenius_error", "tv_error_if_enumerable", "wall_ms")


def fmt(x) -> str:
    return f"{float(x):.17g}"


def fmt_vec(v) -> str:
    return ",".join(fmt(x) for x in np.ravel(v))


def _constants(arg) -> LearnerConfig:
    if not arg:
        return LearnerConfig()
    p = Path(arg)
    data = json.loads(p.read_text()) if p.exists() else json.loads(arg)
    return LearnerConfig.from_dict(data)


def cmd_sample(a) -> int:
    params = load_model(a.model)
    cfg = ChainConfig(gamma=a.gamma, mixingConstant=a.mixing, masterSeed=a.seed)
    X = sample_batch(params, a.n, cfg)
    write_samples(a.out, X, seed=a.seed)
    return 0


def cmd_oracle(a) -> int:
    params = load_model(a.model)
    want = [s.strip() for s in a.stats.split(",") if s.strip()]
    bad = set(want) - {"partition", "mean", "cov", "tv"}
    if bad:
        raise ParameterError(f"unknown statistics: {sorted(bad)}")
    s = exact_summary(params, cap=a.cap)
    if "partition" in want:
        print(f"logZ={fmt(s.logZ)}")
    if "mean" in want:
        print(f"mean={fmt_vec(s.mean)}")
        print(f"suffstat_mean={fmt_vec(s.suffStatMean)}")
    if "cov" in want:
        for i, row in enumerate(s.suffStatCov):
            print(f"suffstat_cov[{i}]={fmt_vec(row)}")
    if "tv" in want:
        if not a.other:
            raise ParameterError("--stats tv needs --other")
        print(f"tv={fmt(exact_tv(params, load_model(a.other), cap=a.cap))}")
    return 0


def cmd_corrupt(a) -> int:
    X = read_samples(a.inp)
    payload = json.loads(a.payload) if a.payload else {}
    out = corrupt(X, AttackSpec(a.attack, a.eps, payload, a.seed))
    write_samples(a.out, out, seed=a.seed)
    return 0


def _learn(X, eps, mode, cfg, eta=None, M=None, alpha=None, c0=None, truth=None):
    if mode == "zero-field":
        if eta is None:
            raise ParameterError("zero-field mode needs --eta")
        params, trace = robust_learn_ising_zero_field(X, eps, eta, cfg, truth)
        return params, trace, None
    if None in (M, alpha, c0):
        raise ParameterError("external mode needs --M, --alpha and --c0")
    params, rec, trace = robust_learn_ising_external(X, eps, DobrushinSpec.bounded(M, alpha), c0, cfg, truth)
    return params, trace, rec


def cmd_learn(a) -> int:
    X = read_samples(a.inp)
    cfg = _constants(a.constants)
    if a.seed is not None:
        cfg = LearnerConfig.from_dict({**cfg.to_dict(), "seed": a.seed})
    params, trace, rec = _learn(X, a.eps, a.mode, cfg, a.eta, a.M, a.alpha, a.c0)
    save_model(params, a.out)
    if a.trace:
        write_trace(trace, a.trace)
    if rec is not None:
        print(f"center={fmt_vec(rec.v)}")
    return 0


def cmd_verify(a) -> int:
    params = load_model(a.model)
    if a.check == "anticoncentration":
        reps = V.mc_variance_lower_bound(params, a.trials, a.n, a.linear, a.seed, a.gamma)
    elif a.check == "upper":
        reps = V.mc_variance_upper_bound(params, a.trials, a.n, a.seed, a.gamma)
    elif a.check == "linear":
        reps = V.mc_linear_anticoncentration(params, a.trials, a.n, a.seed, a.gamma)
    else:
        X = sample_batch(params, a.n, ChainConfig(gamma=a.gamma, masterSeed=a.seed)).astype(float)
        v = exact_summary(params).mean if params.d <= DEFAULT_ENUM_CAP else X.mean(axis=0)
        rng = np.random.default_rng(chain_key(a.seed, 1 << 20))
        thresholds = np.linspace(0.25, 12.0, 48)
        print("trial,fitted_rate,truncated")
        for i in range(a.trials):
            A, b = V.random_pair(params.d, rng, a.linear)
            rep = V.mc_tail_check(params, A, b, v, a.n, thresholds, samples=X)
            print(f"{i},{fmt(rep.fittedRate)},{int(rep.truncated)}")
        return 0
    if a.out_csv:
        V.write_reports(reps, a.out_csv, a.out_json)
    summary = V.summarize(reps)
    for k, val in summary.items():
        print(f"{k}={val if isinstance(val, int) else fmt(val)}")
    return 0


def _model_from_config(spec: dict, base: Path) -> IsingParameters:
    if "file" in spec:
        p = Path(spec["file"])
        return load_model(p if p.is_absolute() else base / p)
    return random_dobrushin(
        int(spec["d"]),
        float(spec.get("rowSum", 1.0 - float(spec.get("eta", 0.5)))),
        float(spec.get("alpha", 0.0)),
        seed=int(spec.get("seed", 0)),
        exact_rows=bool(spec.get("exactRows", True)),
    )


def resolve_config(cfg: dict) -> dict:
    """Fill defaults so the result is a complete, self-describing experiment description."""
    out = dict(cfg)
    if "model" not in out:
        raise ParameterError("config needs a 'model' block")
    out.setdefault("nSamples", 10_000)
    out.setdefault("eps", 0.0)
    out.setdefault("attack", {"kind": "mean-shift-direction", "payload": {}})
    out.setdefault("mode", "zero-field")
    out.setdefault("repetitions", 1)
    out.setdefault("seed", 0)
    out.setdefault("gamma", 0.01)
    out.setdefault("mixingConstant", 20.0)
    if out["mode"] == "zero-field":
        out.setdefault("eta", 0.5)
    elif out["mode"] == "external":
        for key in ("M", "alpha", "c0"):
            if key not in out:
                raise ParameterError(f"external mode needs '{key}'")
    else:
        raise ParameterError(f"unknown mode {out['mode']!r}")
    out["constants"] = LearnerConfig.from_dict(out.get("constants", {})).to_dict()
    if not (0 <= out["eps"] < 0.5):
        raise ParameterError("eps must lie in [0, 0.5)")
    if int(out["repetitions"]) < 1:
        raise ParameterError("repetitions must be at least 1")
    return out


def run_experiment(cfg: dict, outdir, base: Path = Path(".")) -> list:
    cfg = resolve_config(cfg)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    truth = _model_from_config(cfg["model"], base)
    attack = cfg["attack"]
    rows = []
    for rep in range(int(cfg["repetitions"])):
        t0 = time.perf_counter()
        rseed = chain_key(int(cfg["seed"]), rep)
        X = sample_batch(truth, int(cfg["nSamples"]), ChainConfig(cfg["gamma"], cfg["mixingConstant"], rseed))
        Xc = corrupt(X, AttackSpec(attack["kind"], float(cfg["eps"]), attack.get("payload", {}), rseed % (1 << 63)))
        lc = LearnerConfig.from_dict({**cfg["constants"], "seed": rseed})
        params, _, _ = _learn(Xc, float(cfg["eps"]), cfg["mode"], lc, cfg.get("eta"), cfg.get("M"), cfg.get("alpha"), cfg.get("c0"))
        err = math.sqrt(float(np.sum((params.interaction - truth.interaction) ** 2) + np.sum((params.field - truth.field) ** 2)))
        tv = fmt(exact_tv(params, truth)) if truth.d <= DEFAULT_ENUM_CAP else ""
        rows.append([rep, fmt(cfg["eps"]), fmt(err), tv, fmt(1e3 * (time.perf_counter() - t0))])
    with open(outdir / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        w.writerows(rows)
    manifest = {**cfg, "version": __version__}
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return rows


def cmd_experiment(a) -> int:
    path = Path(a.config)
    cfg = json.loads(path.read_text())
    cfg.pop("version", None)
    run_experiment(cfg, a.out, path.parent)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robust-ising", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="draw Glauber samples from a model file")
    s.add_argument("--model", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--gamma", type=float, default=0.01)
    s.add_argument("--mixing", type=float, default=20.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("oracle", help="exact quantities by enumeration")
    s.add_argument("--model", required=True)
    s.add_argument("--stats", default="partition,mean")
    s.add_argument("--other")
    s.add_argument("--cap", type=int, default=DEFAULT_ENUM_CAP)
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("corrupt", help="replace an eps fraction of samples adversarially")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--attack", choices=ATTACKS, required=True)
    s.add_argument("--payload", help="attack parameters as JSON")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_corrupt)

    s = sub.add_parser("learn", help="robustly learn parameters from corrupted samples")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--mode", choices=("zero-field", "external"), default="zero-field")
    s.add_argument("--eta", type=float)
    s.add_argument("--M", type=float)
    s.add_argument("--alpha", type=float)
    s.add_argument("--c0", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--constants", help="JSON file or string overriding learner constants")
    s.add_argument("--out", required=True)
    s.add_argument("--trace")
    s.set_defaults(func=cmd_learn)

    s = sub.add_parser("verify", help="Monte Carlo variance and tail checks")
    s.add_argument("--model", required=True)
    s.add_argument("--check", choices=("anticoncentration", "tails", "upper", "linear"), required=True)
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--n", type=int, default=100_000)
    s.add_argument("--linear", action="store_true", help="include a linear term b^T x")
    s.add_argument("--gamma", type=float, default=0.01)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-csv")
    s.add_argument("--out-json")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("experiment", help="generate, corrupt, learn and score with repetitions")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return a.func(a)
    except ConstraintError as e:
        print(f"refused: {e}", file=sys.stderr)
        print(f"lhs={fmt(e.lhs)}", file=sys.stderr)
        print(f"rhs={fmt(e.rhs)}", file=sys.stderr)
        return 3
    except (ParameterError, DomainError, FileNotFoundError, json.JSONDecodeError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (NumericError, CapacityError, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
