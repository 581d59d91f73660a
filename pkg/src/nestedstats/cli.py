"""Command-line front end.

    nestedstats analyze  DATA.csv  --effect welch --model re --scheme invvar -o report.json
    nestedstats meta     SUMMARY.csv --model re -o report.json
    nestedstats simulate sim1 --seed 1 --outdir out/
    nestedstats stouffer PVALUES.csv -o report.json

Exit codes: 0 success, 2 usage, 3 input parse error, 4 estimation failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import __version__
from .combine import (
    GroupAnalysis,
    Model,
    Policy,
    Scheme,
    analyze,
    correlation_group,
    stouffer_combine,
    stouffer_z,
)
from .effect import (
    EffectKind,
    PairedData,
    RegressionData,
    SubjectEffect,
    TwoSampleData,
    auc_effect,
    mean_effect,
    ols_coef_effect,
    ols_fit,
    paired_diff_effect,
    pearson_effect,
    welch_diff_effect,
)
from .errors import NestedStatsError
from .simulate import pooling_demo, run_simulation1, run_simulation2
from .tables import (
    ParseError,
    atomic_write_text,
    csv_text,
    read_long_single,
    read_long_two_sample,
    read_regression,
    read_summary,
    read_pvalues,
    read_wide_paired,
)

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_ESTIMATION = 0, 2, 3, 4
SEED_ENV = "NESTEDSTATS_SEED"
DEFAULT_SEED = 0
EFFECTS = ("mean", "paired", "welch", "auc", "pearson", "ols:K")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# Subject-level estimation from files
# ---------------------------------------------------------------------------

def _estimate(sid: str, fn: Callable[[], SubjectEffect]) -> SubjectEffect:
    try:
        return fn().with_id(sid)
    except (NestedStatsError, IndexError) as exc:
        raise CliError(EXIT_ESTIMATION, f"subject {sid!r}: {exc}") from exc


def parse_effect(text: str) -> tuple[str, Optional[int]]:
    if text.startswith("ols:"):
        try:
            k = int(text[4:])
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad coefficient index in {text!r}") from None
        if k < 0:
            raise argparse.ArgumentTypeError("coefficient index must be >= 0")
        return "ols", k
    if text not in EFFECTS[:-1]:
        raise argparse.ArgumentTypeError(f"unknown effect {text!r}; choose from {', '.join(EFFECTS)}")
    return text, None


def subject_effects(path, effect: str, k: Optional[int] = None,
                    class_x: str = "X", class_y: str = "Y") -> list[SubjectEffect]:
    """Read a nested data file and estimate one effect per subject."""
    if effect == "mean":
        groups = read_long_single(path)
        items = [(sid, lambda v=v: mean_effect(v)) for sid, v in groups.items()]
    elif effect in ("welch", "auc"):
        groups = read_long_two_sample(path, class_x, class_y)
        fn = welch_diff_effect if effect == "welch" else auc_effect
        items = [(sid, lambda xy=xy: fn(TwoSampleData(*xy))) for sid, xy in groups.items()]
    elif effect in ("paired", "pearson"):
        groups = read_wide_paired(path)
        fn = paired_diff_effect if effect == "paired" else pearson_effect
        items = [(sid, lambda xy=xy: fn(PairedData(*xy))) for sid, xy in groups.items()]
    elif effect == "ols":
        _, groups = read_regression(path)
        items = [(sid, lambda Xy=Xy: ols_coef_effect(ols_fit(RegressionData(*Xy)), k))
                 for sid, Xy in groups.items()]
    else:
        raise CliError(EXIT_USAGE, f"unknown effect {effect!r}")
    if not items:
        raise CliError(EXIT_PARSE, f"{path}: no data rows")
    return [_estimate(sid, fn) for sid, fn in items]


def _canonical(effects: Sequence[SubjectEffect]) -> list[SubjectEffect]:
    # fixed subject order so that reordered input rows give identical output
    return sorted(effects, key=lambda e: e.subject_id)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def _group_payload(ga: GroupAnalysis) -> dict:
    res, test = ga.result, ga.test
    out = {
        "theta_hat": res.theta_hat,
        "var_hat": res.var_hat,
        "tau2": res.tau2,
        "z": test.statistic,
        "p_two": test.p_two,
        "p_one_low": test.p_one_low,
        "p_one_high": test.p_one_high,
        "reference": test.dist,
        "df": test.df,
        "q": ga.heterogeneity.statistic if ga.heterogeneity else None,
        "q_df": ga.heterogeneity.df if ga.heterogeneity else None,
        "q_p": ga.heterogeneity.p_one_high if ga.heterogeneity else None,
        "ci_low": ga.ci[0],
        "ci_high": ga.ci[1],
        "S": res.S,
        "model": res.model.value,
        "scheme": res.scheme.value,
        "theta0": ga.theta0,
        "weights": list(res.weights),
    }
    return out


def _subject_payload(effects: Sequence[SubjectEffect]) -> list[dict]:
    return [{"subject_id": e.subject_id, "theta_hat": e.theta_hat, "var_hat": e.var_hat,
             "kind": e.kind.value, "n": list(e.n), "df": e.df} for e in effects]


def _fmt_p(p: Optional[float]) -> str:
    return "n/a" if p is None else f"{p:.4g}"


def render_text(report: dict) -> str:
    lines = [f"nestedstats {report['version']} {report['command']}"]
    cfg = report["config"]
    lines.append("config: " + ", ".join(f"{k}={v}" for k, v in cfg.items()))
    for w in report.get("warnings", []):
        lines.append(f"warning: {w}")
    if report.get("subjects"):
        lines.append("")
        lines.append(f"{'subject':<16}{'theta_hat':>14}{'var_hat':>14}")
        for s in report["subjects"]:
            lines.append(f"{s['subject_id']:<16}{s['theta_hat']:>14.6g}{s['var_hat']:>14.6g}")
    r = report["result"]
    lines.append("")
    if "theta_hat" in r:
        lines.append(f"group effect   {r['theta_hat']:.6g}  (var {r['var_hat']:.6g}, "
                     f"95% CI [{r['ci_low']:.6g}, {r['ci_high']:.6g}])")
        lines.append(f"tau2           {r['tau2']:.6g}   model={r['model']} scheme={r['scheme']} S={r['S']}")
        if "rho_hat" in r:
            lines.append(f"correlation    {r['rho_hat']:.6g}  (95% CI [{r['rho_ci_low']:.6g}, "
                         f"{r['rho_ci_high']:.6g}])")
        if r["q"] is not None:
            lines.append(f"Cochran Q      {r['q']:.6g}  df={r['q_df']:g}  p={_fmt_p(r['q_p'])}")
    ref = r.get("reference", "normal")
    ref_txt = f"t({r['df']:g})" if ref == "t" else "N(0,1)"
    lines.append(f"test statistic {r['z']:.6g} ~ {ref_txt}   p_two={_fmt_p(r['p_two'])}  "
                 f"p_low={_fmt_p(r['p_one_low'])}  p_high={_fmt_p(r['p_one_high'])}")
    return "\n".join(lines) + "\n"


def _emit(report: dict, output: Optional[str], extra: Optional[dict[str, str]] = None) -> None:
    """Print the text report and write JSON (and siblings) atomically."""
    text = render_text(report)
    if output:
        out = Path(output)
        atomic_write_text(out, json.dumps(report, indent=2) + "\n")
        atomic_write_text(out.with_suffix(".txt"), text)
        for suffix, body in (extra or {}).items():
            atomic_write_text(out.with_suffix(suffix), body)
    sys.stdout.write(text)


def _group_report(command: str, config: dict, effects: list[SubjectEffect], model: Model,
                  scheme: Scheme, policy: Policy, theta0: float) -> dict:
    warn: list[str] = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if len(effects) == 1 and model is Model.RANDOM:
            warn.append("single subject: random-effects model not estimable, using fixed effect")
            model = Model.FIXED
        try:
            ga = analyze(effects, model, scheme, policy, theta0)
            corr = None
            if all(e.kind is EffectKind.FISHER_Z for e in effects):
                corr = correlation_group(effects, model, scheme,
                                         policy if len(effects) > 1 else Policy.Z)
        except NestedStatsError as exc:
            raise CliError(EXIT_ESTIMATION, str(exc)) from exc
    warn.extend(dict.fromkeys(str(w.message) for w in caught))
    result = _group_payload(ga)
    if corr is not None:
        result.update(rho_hat=corr.rho, rho_ci_low=corr.ci_low, rho_ci_high=corr.ci_high)
    return {
        "tool": "nestedstats",
        "version": __version__,
        "command": command,
        "config": config,
        "warnings": warn,
        "subjects": _subject_payload(effects),
        "result": result,
    }


def subjects_csv(effects: Sequence[SubjectEffect]) -> str:
    return csv_text(("subject_id", "theta_hat", "var_hat", "n"),
                    ((e.subject_id, e.theta_hat, e.var_hat, sum(e.n)) for e in effects))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _default_theta0(effect: str) -> float:
    return 0.5 if effect == "auc" else 0.0


def cmd_analyze(args) -> int:
    effect, k = args.effect
    theta0 = _default_theta0(effect) if args.theta0 is None else args.theta0
    effects = _canonical(subject_effects(args.input, effect, k, args.class_x, args.class_y))
    config = {
        "input": str(args.input), "effect": args.effect_text, "model": args.model,
        "scheme": args.scheme, "policy": args.policy, "theta0": theta0,
        "class_x": args.class_x, "class_y": args.class_y,
    }
    report = _group_report("analyze", config, effects, Model(args.model), Scheme(args.scheme),
                           Policy(args.policy), theta0)
    _emit(report, args.output, {".subjects.csv": subjects_csv(effects)})
    return EXIT_OK


def cmd_meta(args) -> int:
    rows = read_summary(args.input)
    effects = _canonical([
        SubjectEffect(r.theta_hat, r.var_hat, EffectKind.MEAN, (r.n,) if r.n else (), None, r.subject_id)
        for r in rows
    ])
    config = {"input": str(args.input), "model": args.model, "scheme": args.scheme,
              "policy": args.policy, "theta0": args.theta0}
    report = _group_report("meta", config, effects, Model(args.model), Scheme(args.scheme),
                           Policy(args.policy), args.theta0)
    _emit(report, args.output)
    return EXIT_OK


def cmd_stouffer(args) -> int:
    rows = read_pvalues(args.input)
    ps = [p for _, p in rows]
    test = stouffer_combine(ps)
    report = {
        "tool": "nestedstats",
        "version": __version__,
        "command": "stouffer",
        "config": {"input": str(args.input)},
        "subjects": [],
        "result": {"z": test.statistic, "p_one_low": test.p_one_low, "p_one_high": test.p_one_high,
                   "p_two": test.p_two, "S": len(ps), "reference": "normal", "df": None},
    }
    _emit(report, args.output)
    return EXIT_OK


def _curve_rows(panel, seed: int):
    for curve in panel.curves:
        for d, rate, se in zip(curve.d, curve.rates, curve.se):
            yield (curve.method.value, d, rate, se, curve.reps, seed)


def cmd_simulate(args) -> int:
    seed = args.seed
    outdir = Path(args.outdir)
    manifest = {"tool": "nestedstats", "version": __version__, "scenario": args.scenario,
                "seed": seed, "reps": args.reps, "panels": []}
    files: dict[str, str] = {}
    figures = []
    if args.scenario in ("sim1", "sim2"):
        run = run_simulation1 if args.scenario == "sim1" else run_simulation2
        panels = run(seed, reps=args.reps, workers=args.workers)
        for panel in panels:
            name = f"{panel.name}.csv"
            files[name] = csv_text(("method", "d", "rejection_rate", "se", "reps", "seed"),
                                   _curve_rows(panel, seed))
            manifest["panels"].append({"name": panel.name, "file": name,
                                       "methods": [c.method.value for c in panel.curves],
                                       "config": panel.config.to_dict()})
            figures.append(panel)
    else:
        demo = pooling_demo(seed)
        rows = [(f"s{i + 1}", p, r, rp) for i, (p, r, rp) in
                enumerate(zip(demo.subject_welch_p, demo.subject_r, demo.subject_pearson_p))]
        rows.append(("pooled", demo.pooled_welch_p, demo.pooled_r, demo.pooled_pearson_p))
        files["pooling_demo.csv"] = csv_text(("subject", "welch_p_two", "pearson_r", "pearson_p_two"), rows)
        manifest["panels"].append({"name": "pooling_demo", "file": "pooling_demo.csv",
                                   "config": {"S": 4, "n": 20, "shift": 1.0, "within_var": 4.0,
                                              "offset_sd": demo.offset_sd, "seed": seed}})
        figures.append(demo)
    files["manifest.json"] = json.dumps(manifest, indent=2) + "\n"
    for name, body in files.items():
        atomic_write_text(outdir / name, body)
    if args.plot:
        from . import plotting

        for item in figures:
            if args.scenario == "pooling-demo":
                plotting.plot_pooling_demo(item, outdir / "pooling_demo.png")
            else:
                plotting.plot_panel(item, outdir / f"{item.name}.png")
    for name in files:
        print(outdir / name)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _env_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return DEFAULT_SEED
    try:
        seed = int(raw)
    except ValueError:
        raise CliError(EXIT_USAGE, f"{SEED_ENV} must be an integer, got {raw!r}") from None
    if seed < 0:
        raise CliError(EXIT_USAGE, f"{SEED_ENV} must be nonnegative")
    return seed


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _seed_arg(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _group_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=[m.value for m in Model], default="re")
    p.add_argument("--scheme", choices=[s.value for s in Scheme], default="invvar")
    p.add_argument("--policy", choices=[q.value for q in Policy], default="z",
                   help="reference distribution: z (default) or t with S-1 df")
    p.add_argument("-o", "--output", help="JSON report path (.txt written alongside)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nestedstats",
                                     description="Group-level inference for nested data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="estimate per-subject effects, then combine")
    pa.add_argument("input")
    pa.add_argument("--effect", required=True, dest="effect_text",
                    help="mean | paired | welch | auc | pearson | ols:K")
    pa.add_argument("--theta0", type=float, default=None,
                    help="null value (default 0.5 for auc, else 0)")
    pa.add_argument("--class-x", default="X")
    pa.add_argument("--class-y", default="Y")
    _group_flags(pa)
    pa.set_defaults(func=cmd_analyze)

    pm = sub.add_parser("meta", help="combine per-subject summaries")
    pm.add_argument("input")
    pm.add_argument("--theta0", type=float, default=0.0)
    _group_flags(pm)
    pm.set_defaults(func=cmd_meta)

    ps = sub.add_parser("simulate", help="Monte Carlo scenarios")
    ps.add_argument("scenario", choices=("sim1", "sim2", "pooling-demo"))
    ps.add_argument("--seed", type=_seed_arg, default=None,
                    help=f"default from ${SEED_ENV}, else {DEFAULT_SEED}")
    ps.add_argument("--reps", type=_positive_int, default=1000)
    ps.add_argument("--workers", type=_positive_int, default=1)
    ps.add_argument("--outdir", default="sim_out")
    ps.add_argument("--plot", action="store_true", help="also render PNG figures (needs matplotlib)")
    ps.set_defaults(func=cmd_simulate)

    pz = sub.add_parser("stouffer", help="combine one-sided p-values")
    pz.add_argument("input")
    pz.add_argument("-o", "--output")
    pz.set_defaults(func=cmd_stouffer)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    try:
        if args.command == "analyze":
            try:
                args.effect = parse_effect(args.effect_text)
            except argparse.ArgumentTypeError as exc:
                parser.error(str(exc))
        if args.command == "simulate" and args.seed is None:
            args.seed = _env_seed()
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except NestedStatsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
