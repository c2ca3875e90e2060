"""Command-line front end.

Subcommands: ``infer``, ``example``, ``pp-test``, ``tail-demo`` and ``ns``.
Settings come from built-in defaults, then an optional JSON ``--config``
file, then command-line flags. The resolved configuration, its fingerprint
and the seed are written into every output.

Exit codes: 0 success, 2 usage or input error, 3 numerical or pipeline
failure.
"""

import argparse
import copy
import csv
import datetime
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import testbeds as tb
from .dpgmm import _fingerprint
from .evidence import (
    InputError,
    PipelineConfig,
    PipelineError,
    SupportError,
    bayes_factor_posterior,
    harmonic_mean_log_evidence,
    infer_log_evidence,
    read_samples_csv,
    retargeted_harmonic_mean_log_evidence,
)
from .probcore import make_rng, mvn_logpdf

logger = logging.getLogger("hierevidence")

SCHEMA = 1
EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 2, 3
EXAMPLES = ("neal", "nix2", "bivariate", "model-pair")
ANALYTIC = ("neal", "nix2")
NS_PROBLEMS = ("neal", "nix2", "bivariate", "gaussian", "gennormal")

DEFAULTS = {
    "seed": 0,
    "out": ".",
    "threads": 1,
    "pipeline": PipelineConfig().to_dict(),
    "infer": {"samples": None},
    "example": {
        "name": None,
        "n_samples": {"neal": 3000, "nix2": 14050},
        "subset_size": {"neal": 200, "nix2": 1000, "bivariate": 200, "model-pair": 200},
        "mcmc": {"chains": 4, "steps": 6000, "burn_in": 2000, "thin": 4},
        "ns": {"live_points": 1000, "dlogz": 0.01},
        "pair_count": 10000,
    },
    "pp_test": {"problem": "neal", "realizations": 100, "n_samples": 3000, "level": 0.9,
                "simultaneous": False},
    "tail_demo": {"sample_count": 10000, "dof": 10.0, "grid_min": -10.0, "grid_max": 10.0,
                  "grid_points": 401},
    "ns": {"problem": "neal", "live_points": 1000, "dlogz": 0.01},
}


class UsageError(Exception):
    pass


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def resolve_config(args):
    """Defaults, then the ``--config`` file, then flags."""
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise UsageError(f"cannot read config {args.config}: {err}") from err
        if not isinstance(user, dict):
            raise UsageError(f"config {args.config} must hold a JSON object")
        unknown = sorted(set(user) - set(DEFAULTS))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        cfg = _merge(cfg, user)
    for key in ("seed", "out", "threads"):
        val = getattr(args, key)
        if val is not None:
            cfg[key] = val
    section = args.command.replace("-", "_")
    for key, val in vars(args).get("section_flags", {}).items():
        if val is not None:
            cfg[section][key] = val
    if not isinstance(cfg["seed"], int) or not 0 <= cfg["seed"] < 2**64:
        raise UsageError("seed must be an integer in [0, 2^64)")
    if not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
        raise UsageError("threads must be a positive integer")
    try:
        PipelineConfig.from_dict(cfg["pipeline"])
    except (TypeError, ValueError) as err:
        raise UsageError(f"invalid pipeline config: {err}") from err
    return cfg


def _header(cfg, command):
    """Fields shared by every JSON output."""
    resolved = {k: v for k, v in cfg.items() if k != "out"}
    return {
        "schema": SCHEMA,
        "command": command,
        "seed": cfg["seed"],
        "config_fingerprint": _fingerprint(resolved),
        "config": resolved,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, allow_nan=True)
        fh.write("\n")


def _write_csv(path, header, columns, head):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# seed={head['seed']} config_fingerprint={head['config_fingerprint']}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(v)) if not isinstance(v, str) else v for v in row])


def _pipeline(cfg, **overrides):
    d = dict(cfg["pipeline"])
    d.update(overrides)
    return PipelineConfig.from_dict(d)


def _summary(post):
    return post.to_dict(include_draws=False)


def cmd_infer(cfg):
    path = cfg["infer"]["samples"]
    if not path:
        raise UsageError("infer needs a samples file")
    samples = read_samples_csv(path)
    post = infer_log_evidence(samples, _pipeline(cfg), make_rng(cfg["seed"]))
    head = _header(cfg, "infer")
    result = dict(head, **post.to_dict())
    result["input"] = {"path": os.path.basename(path), "n_samples": len(samples), "dim": samples.dim}
    result["pipeline_fingerprint"] = post.fingerprint
    _write_json(os.path.join(cfg["out"], "evidence.json"), result)
    _write_csv(os.path.join(cfg["out"], "log_z_draws.csv"), ["log_z"], [post.log_z], head)
    return result


def _gaussian_phi(samples, shrink=0.5):
    """Normalized Gaussian matched to the samples, with its spread reduced
    so that it stays well inside the posterior bulk."""
    mean = samples.points.mean(axis=0)
    cov = np.atleast_2d(np.cov(samples.points, rowvar=False)) * shrink**2

    def phi(x):
        return mvn_logpdf(x, mean, cov)

    return phi, mean, cov


def _baselines(problem, samples, rng):
    out = {"harmonic_mean": harmonic_mean_log_evidence(samples)}
    phi, mean, cov = _gaussian_phi(samples)
    try:
        draws = rng.multivariate_normal(mean, cov, size=2000)
        out["retargeted_harmonic_mean"] = retargeted_harmonic_mean_log_evidence(
            samples, phi, problem.log_posterior, draws
        )
    except SupportError as err:
        out["retargeted_harmonic_mean"] = None
        out["retargeted_note"] = str(err)
    return out


def _draw_samples(problem, ex, rng, seed):
    if problem.posterior_sampler is not None and problem.name in ex["n_samples"]:
        return tb.weighted_samples(problem, problem.posterior_sampler(rng, ex["n_samples"][problem.name]))
    return tb.metropolis_sample(problem, tb.McmcConfig(seed=seed, **ex["mcmc"]), rng)


def _ns(problem, ex, seed):
    return tb.nested_sampling_log_evidence(problem, tb.NsConfig(seed=seed, **ex["ns"]))


def cmd_example(cfg):
    ex = cfg["example"]
    name = ex["name"]
    if name not in EXAMPLES:
        raise UsageError(f"unknown example {name!r}; valid names: {', '.join(EXAMPLES)}")
    seed = cfg["seed"]
    rng = make_rng(seed)
    pipe = _pipeline(cfg, subset_size=ex["subset_size"][name])
    head = _header(cfg, "example")
    result = dict(head, example=name)

    if name == "model-pair":
        h_n, h_gn = tb.model_pair_gaussian_gennormal()
        models = {}
        posts = []
        for k, p in enumerate((h_n, h_gn)):
            sub = make_rng(seed, stream=k + 1)
            samples = _draw_samples(p, ex, sub, seed)
            post = infer_log_evidence(samples, pipe, sub)
            ns = _ns(p, ex, seed + k)
            models[p.name] = dict(hierarchical=_summary(post), ns={"log_z": ns[0], "err": ns[1]},
                                  **_baselines(p, samples, sub))
            posts.append((post, ns))
        bf = bayes_factor_posterior(posts[0][0], posts[1][0], ex["pair_count"], rng)
        mean, sd, ((lo, hi),) = tb.ns_gaussian_bayes_factor(posts[0][1], posts[1][1])
        overlap = max(bf.lower90, lo) <= min(bf.upper90, hi)
        result.update(
            models=models,
            log_bayes_factor=_summary(bf),
            ns_log_bayes_factor={"mean": mean, "sd": sd, "lower90": lo, "upper90": hi},
            agreement={"interval_overlap": bool(overlap), "positive_median": bf.median > 0},
        )
        result["agree"] = bool(overlap and bf.median > 0)
    else:
        problem = tb.neal_problem() if name == "neal" else (
            tb.nix2_problem() if name == "nix2" else tb.bivariate_params_problem())
        samples = _draw_samples(problem, ex, rng, seed)
        post = infer_log_evidence(samples, pipe, rng)
        result.update(hierarchical=_summary(post), n_samples=len(samples), **_baselines(problem, samples, rng))
        if problem.log_evidence is not None:
            ref = problem.log_evidence
            result["reference"] = {"kind": "analytic", "log_z": ref}
            if name == "nix2":
                result["reference"]["paper_rounded"] = -9.3
            result["agree"] = bool(post.lower90 <= ref <= post.upper90)
        else:
            log_z, err = _ns(problem, ex, seed)
            result["reference"] = {"kind": "nested-sampling", "log_z": log_z, "err": err}
            half = 0.5 * (post.upper68 - post.lower68)
            result["agree"] = bool(abs(post.median - log_z) < 3 * np.hypot(half, err))
    _write_json(os.path.join(cfg["out"], f"example_{name}.json"), result)
    return result


def _pp_worker(task):
    name, seed, pipe_dict, n_samples = task
    problem = tb.neal_problem() if name == "neal" else tb.nix2_problem()
    return tb.pp_realization(problem, seed, PipelineConfig.from_dict(pipe_dict), n_samples)


def cmd_pp_test(cfg):
    pp = cfg["pp_test"]
    name = pp["problem"]
    if name not in ANALYTIC:
        raise UsageError(f"pp-test needs an analytic problem ({', '.join(ANALYTIC)}), got {name!r}")
    if pp["realizations"] < 1:
        raise UsageError("realizations must be positive")
    seeds = tb.pp_seeds(make_rng(cfg["seed"]), pp["realizations"])
    tasks = [(name, s, cfg["pipeline"], pp["n_samples"]) for s in seeds]
    if cfg["threads"] > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg["threads"]) as pool:
            out = list(pool.map(_pp_worker, tasks))
    else:
        out = [_pp_worker(t) for t in tasks]
    qs = [q for q, _ in out]
    res = tb.pp_quantile_check(qs, pp["level"], pp["simultaneous"])
    head = _header(cfg, "pp-test")
    result = dict(
        head,
        problem=name,
        realizations=len(qs),
        band_level=pp["level"],
        band_simultaneous=pp["simultaneous"],
        band_check=res.band_check,
        ks_pvalue=res.ks_pvalue,
        passed=bool(res.band_check and res.ks_pvalue > 0.01),
        quantiles=res.quantiles.tolist(),
        medians=[m for _, m in out],
    )
    if res.low_power:
        result["warnings"] = {"low_power": f"only {len(qs)} realizations; the test has little power"}
    _write_json(os.path.join(cfg["out"], "pp_verdict.json"), result)
    _write_csv(os.path.join(cfg["out"], "pp_quantiles.csv"), ["quantile"], [res.quantiles], head)
    _write_csv(os.path.join(cfg["out"], "pp_band.csv"), ["p", "ecdf", "lower", "upper"],
               [res.grid, res.ecdf, res.lower, res.upper], head)
    return result


def cmd_tail_demo(cfg):
    td = cfg["tail_demo"]
    grid = np.linspace(td["grid_min"], td["grid_max"], td["grid_points"])
    curves = tb.student_t_tail_demo(td["sample_count"], make_rng(cfg["seed"]), td["dof"], grid)
    head = _header(cfg, "tail-demo")
    cols = ["x", "truth_logpdf", "median_logpdf", "lo68", "hi68", "lo90", "hi90"]
    _write_csv(os.path.join(cfg["out"], "tail_demo.csv"), cols, [curves[c] for c in cols], head)
    result = dict(head, sample_max=curves["sample_max"], grid_points=len(grid))
    _write_json(os.path.join(cfg["out"], "tail_demo.json"), result)
    return result


def _ns_problem(name):
    if name == "neal":
        return tb.neal_problem()
    if name == "nix2":
        return tb.nix2_problem()
    if name == "bivariate":
        return tb.bivariate_params_problem()
    h_n, h_gn = tb.model_pair_gaussian_gennormal()
    return h_n if name == "gaussian" else h_gn


def cmd_ns(cfg):
    opts = dict(cfg["ns"])
    name = opts.pop("problem")
    if name not in NS_PROBLEMS:
        raise UsageError(f"unknown problem {name!r}; valid names: {', '.join(NS_PROBLEMS)}")
    problem = _ns_problem(name)
    log_z, err = tb.nested_sampling_log_evidence(problem, tb.NsConfig(seed=cfg["seed"], **opts))
    result = dict(_header(cfg, "ns"), problem=name, log_z=log_z, err=err)
    if problem.log_evidence is not None:
        result["analytic_log_z"] = problem.log_evidence
    _write_json(os.path.join(cfg["out"], f"ns_{name}.json"), result)
    return result


COMMANDS = {
    "infer": cmd_infer,
    "example": cmd_example,
    "pp-test": cmd_pp_test,
    "tail-demo": cmd_tail_demo,
    "ns": cmd_ns,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _section(dest):
    """Store a flag under ``section_flags[dest]``."""

    class Store(argparse.Action):
        def __call__(self, parser, namespace, values, option_string=None):
            flags = dict(getattr(namespace, "section_flags", None) or {})
            flags[dest] = values
            namespace.section_flags = flags

    return Store


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with settings (flags win)")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--out", help="output directory (default: current)")
    common.add_argument("--threads", type=int, help="maximum worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="hierevidence", description="Bayesian evidence from posterior samples.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("infer", parents=[common], help="evidence posterior from a sample CSV")
    p.add_argument("samples", nargs="?", action=_section("samples"),
                   help="CSV with parameter columns, log_likelihood and log_prior")

    p = sub.add_parser("example", parents=[common], help="run a testbed end to end")
    p.add_argument("name", nargs="?", action=_section("name"), help=" | ".join(EXAMPLES))

    p = sub.add_parser("pp-test", parents=[common], help="calibration over repeated realizations")
    p.add_argument("--problem", action=_section("problem"), help=" | ".join(ANALYTIC))
    p.add_argument("--realizations", type=int, action=_section("realizations"))
    p.add_argument("--n-samples", type=int, action=_section("n_samples"))

    p = sub.add_parser("tail-demo", parents=[common], help="Student-t reconstruction curves")
    p.add_argument("--sample-count", type=int, action=_section("sample_count"))

    p = sub.add_parser("ns", parents=[common], help="nested-sampling oracle")
    p.add_argument("problem", nargs="?", action=_section("problem"), help=" | ".join(NS_PROBLEMS))
    p.add_argument("--live-points", type=int, action=_section("live_points"))
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "section_flags") or args.section_flags is None:
        args.section_flags = {}
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        os.makedirs(cfg["out"], exist_ok=True)
        result = COMMANDS[args.command](cfg)
    except (UsageError, InputError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except PipelineError as err:
        print(f"pipeline failure in stage '{err.stage}': {err}", file=sys.stderr)
        return EXIT_FAILURE
    except (tb.SamplerError, ValueError, ArithmeticError, np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_FAILURE
    summary = {k: result[k] for k in ("median", "lower68", "upper68", "agree", "passed", "log_z", "err")
               if k in result}
    print(json.dumps(summary or {"status": "ok"}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
