"""Command-line entry point: ``tcgm {gen,train,eval,verify,sweep}``.

Exit codes: 0 success, 1 a verification check failed, 2 usage error.
A flat JSON file given with ``--config`` supplies flag defaults (keys are the
long flag names with dashes replaced by underscores); explicit flags win.
``TCGM_OUTPUT_DIR`` overrides the default output directory.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional

import numpy as np

from .datagen import (GaussianModalitySpec, MultiModalDataset, bayes_accuracy, gaussian_preset,
                      generate_discrete, generate_gaussian)
from .probcore import DiscreteJointTable
from .trainer import TrainConfig, build_nets, evaluate, load_checkpoints, train
from .verify import CHECKS, DEFAULT_CHECKS, run_checks, summarize

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _out_dir(args, command):
    if args.out:
        return args.out
    return os.environ.get("TCGM_OUTPUT_DIR", os.path.join("out", command))


def _float_list(value) -> List[float]:
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    return [float(v) for v in str(value).split(",") if v.strip()]


def _int_list(value) -> List[int]:
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    return [int(v) for v in str(value).split(",") if v.strip()]


def _label_rate(value) -> float:
    rate = float(value)
    if not 0 < rate <= 1:
        raise argparse.ArgumentTypeError(f"label rate must be in (0, 1], got {value}")
    return rate


def _add_generator_flags(p):
    p.add_argument("--preset", choices=["gaussian3", "discrete"], default="gaussian3")
    p.add_argument("--spec-file", help="Gaussian spec JSON (gaussian3) or table JSON (discrete)")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--radius", type=float, default=2.5)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--modalities", type=int, default=3)
    p.add_argument("--dim", type=int, default=2)


def _add_train_flags(p):
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--warmup-epochs", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--gamma-l", type=float, default=0.01, help="learning rate of the CE phase")
    p.add_argument("--gamma-u", type=float, default=0.0001, help="learning rate of the TCg phase")
    p.add_argument("--prior-mode", choices=["uniform", "given", "estimated"], default="estimated")
    p.add_argument("--prior", help="comma-separated prior for --prior-mode given")
    p.add_argument("--reestimate-prior", action="store_true")
    p.add_argument("--penalty", choices=["full", "sampled"], default="full")
    p.add_argument("--penalty-samples", type=int)
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--hidden", default="32", help="comma-separated hidden widths")
    p.add_argument("--activation", choices=["relu", "tanh"], default="relu")
    p.add_argument("--align", action="store_true",
                   help="score after aligning class indices on the labeled training records")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tcgm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="flat JSON file with flag defaults")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, default=0)
        return p

    p = add("gen", "generate a synthetic dataset")
    _add_generator_flags(p)
    p.add_argument("--label-rate", type=_label_rate, default=1.0)

    p = add("train", "train per-modality classifiers")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--method", choices=["tcgm", "ce", "tc"], default="tcgm")
    _add_train_flags(p)

    p = add("eval", "score saved checkpoints on a split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")

    p = add("verify", "run the exact information-identity checks")
    p.add_argument("--checks", help=f"comma-separated subset of {','.join(CHECKS)}")
    p.add_argument("--perturb", action="store_true", help="add the perturbation dominance check")

    p = add("sweep", "grid over methods, label rates and seeds")
    _add_generator_flags(p)
    _add_train_flags(p)
    p.add_argument("--methods", default="tcgm,ce")
    p.add_argument("--label-rates", default="0.05,0.1,0.3,0.5,1.0")
    p.add_argument("--seeds", default="5", help="a count N (seeds 0..N-1) or a comma list")
    p.add_argument("--workers", type=int, default=1)
    parser._subparsers_map = sub.choices
    return parser


def parse_args(argv: Optional[List[str]] = None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in parser._subparsers_map), None)
    if known.config and command:
        try:
            with open(known.config) as fh:
                config = json.load(fh)
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read config file: {exc}")
        if not isinstance(config, dict):
            parser.error("config file must hold a flat JSON object")
        subparser = parser._subparsers_map[command]
        actions = {a.dest: a for a in subparser._actions}
        unknown = sorted(set(config) - set(actions) - {"config"})
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        for key in config:
            if key in actions:
                actions[key].required = False
        subparser.set_defaults(**{k: v for k, v in config.items() if k != "config"})
    return parser.parse_args(argv)


# -- gen -----------------------------------------------------------------

def _generator_spec(args):
    if args.preset == "gaussian3":
        if args.spec_file:
            with open(args.spec_file) as fh:
                return GaussianModalitySpec.from_dict(json.load(fh))
        return gaussian_preset("gaussian3", radius=args.radius, n_classes=args.classes,
                               n_modalities=args.modalities, dim=args.dim)
    if not args.spec_file:
        raise UsageError("--preset discrete needs --spec-file with a table JSON")
    with open(args.spec_file) as fh:
        return DiscreteJointTable.from_json(fh.read())


def _generate(spec, n, seed, label_rate):
    if isinstance(spec, DiscreteJointTable):
        return generate_discrete(spec, n, seed, label_rate)
    return generate_gaussian(spec, n, seed, label_rate)


def cmd_gen(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    args.label_rate = _label_rate(args.label_rate)
    spec = _generator_spec(args)
    ds = _generate(spec, args.n, args.seed, args.label_rate)
    out = _out_dir(args, "gen")
    ds.save(out)
    print(f"wrote {out}: n={len(ds)} M={ds.n_modalities} classes={ds.n_classes} "
          f"label_rate={args.label_rate} labeled_train={int(np.sum((ds.splits == 'train') & (ds.labels >= 0)))}")
    return EXIT_OK


# -- train / eval ----------------------------------------------------------

def _train_config(args, method, label_rate=None, seed=None) -> TrainConfig:
    prior = _float_list(args.prior) if args.prior else None
    return TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr_labeled=args.gamma_l,
        lr_unlabeled=args.gamma_u, method=method, prior_mode=args.prior_mode, prior=prior,
        reestimate_prior=args.reestimate_prior, penalty_mode=args.penalty,
        penalty_samples=args.penalty_samples, optimizer=args.optimizer,
        label_rate=label_rate, align=args.align, warmup_epochs=args.warmup_epochs,
        seed=args.seed if seed is None else seed)


def _load_dataset(path) -> MultiModalDataset:
    if not os.path.isfile(os.path.join(path, "manifest.json")):
        raise UsageError(f"no dataset found in {path}")
    return MultiModalDataset.load(path)


def cmd_train(args) -> int:
    ds = _load_dataset(args.data)
    config = _train_config(args, args.method, ds.meta.get("label_rate"))
    nets = build_nets(ds.dims, ds.n_classes, _int_list(args.hidden), args.activation, args.seed)
    out = _out_dir(args, "train")
    os.makedirs(out, exist_ok=True)
    report = train(ds, nets, config, checkpoint_dir=os.path.join(out, "checkpoints"))
    with open(os.path.join(out, "report.json"), "w") as fh:
        fh.write(report.to_json())
    with open(os.path.join(out, "report.csv"), "w", newline="") as fh:
        fh.write(report.to_csv())
    print(f"wrote {out}: epochs={len(report.epochs)} test_acc_agg={report.final.get('acc_agg')}")
    return EXIT_OK


def _bayes(ds, split):
    gen = ds.meta.get("generator") or {}
    if gen.get("kind") != "gaussian":
        return None
    return bayes_accuracy(GaussianModalitySpec.from_dict(gen["spec"]), ds, split)


def cmd_eval(args) -> int:
    ds = _load_dataset(args.data)
    if not os.path.isfile(os.path.join(args.checkpoints, "manifest.json")):
        raise UsageError(f"no checkpoints found in {args.checkpoints}")
    nets, prior = load_checkpoints(args.checkpoints)
    result = evaluate(nets, prior, ds.split(args.split))
    result["bayes_acc"] = _bayes(ds, args.split)
    out = _out_dir(args, "eval")
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "eval.json"), "w") as fh:
        json.dump(result, fh, indent=2)
    print(json.dumps(result))
    return EXIT_OK


# -- verify ----------------------------------------------------------------

def cmd_verify(args) -> int:
    names = [c.strip() for c in args.checks.split(",") if c.strip()] if args.checks else list(DEFAULT_CHECKS)
    if args.perturb and "perturb" not in names:
        names.append("perturb")
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise UsageError(f"unknown checks: {', '.join(unknown)}")
    results = run_checks(names, seed=args.seed)
    summary = summarize(results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name:<10} max_error={r.max_error:.3e} "
              f"tol={r.tolerance:g} cases={r.cases}  {r.detail}")
    out = _out_dir(args, "verify")
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "verify.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    return EXIT_OK if summary["passed"] else EXIT_FAIL


# -- sweep -----------------------------------------------------------------

def _run_job(job) -> dict:
    args, method, rate, seed = job
    spec = _generator_spec(args)
    ds = _generate(spec, args.n, seed, rate)
    nets = build_nets(ds.dims, ds.n_classes, _int_list(args.hidden), args.activation, seed)
    report = train(ds, nets, _train_config(args, method, rate, seed))
    final = report.final
    row = {"method": method, "label_rate": rate, "seed": seed, "acc_agg": final["acc_agg"]}
    for m, acc in enumerate(final["acc_modalities"]):
        row[f"acc_m{m + 1}"] = acc
    row["auc"] = final["auc"]
    row["bayes_acc"] = _bayes(ds, "test")
    row["tcg_value"] = final["tcg_value"]
    return row


def _csv_text(rows, columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(["" if row.get(c) is None else (repr(row[c]) if isinstance(row[c], float) else row[c])
                         for c in columns])
    return buf.getvalue()


def aggregate_rows(rows) -> List[dict]:
    groups = {}
    for row in rows:
        groups.setdefault((row["method"], row["label_rate"]), []).append(row)
    out = []
    for (method, rate), members in groups.items():
        acc = np.array([r["acc_agg"] for r in members], dtype=np.float64)
        bayes = [r["bayes_acc"] for r in members if r["bayes_acc"] is not None]
        out.append({
            "method": method, "label_rate": rate, "runs": len(members),
            "acc_agg_mean": float(acc.mean()),
            "acc_agg_std": float(acc.std(ddof=1)) if acc.size > 1 else 0.0,
            "bayes_acc_mean": float(np.mean(bayes)) if bayes else None,
        })
    return out


def cmd_sweep(args) -> int:
    methods = [m.strip() for m in str(args.methods).split(",") if m.strip()]
    rates = _float_list(args.label_rates)
    seeds_spec = _int_list(args.seeds)
    seeds = list(range(seeds_spec[0])) if len(seeds_spec) == 1 and "," not in str(args.seeds) else seeds_spec
    if not methods or not rates or not seeds:
        raise UsageError("empty sweep grid")
    bad = [m for m in methods if m not in ("tcgm", "ce", "tc")]
    if bad:
        raise UsageError(f"unknown methods: {', '.join(bad)}")
    for r in rates:
        _label_rate(r)
    jobs = [(args, m, r, s) for m in methods for r in rates for s in seeds]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_run_job, jobs))
    else:
        rows = [_run_job(j) for j in jobs]
    m = len([k for k in rows[0] if k.startswith("acc_m")])
    detail_cols = ["method", "label_rate", "seed", "acc_agg", *[f"acc_m{i + 1}" for i in range(m)],
                   "auc", "bayes_acc", "tcg_value"]
    agg_cols = ["method", "label_rate", "runs", "acc_agg_mean", "acc_agg_std", "bayes_acc_mean"]
    out = _out_dir(args, "sweep")
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "sweep_detail.csv"), "w", newline="") as fh:
        fh.write(_csv_text(rows, detail_cols))
    agg = aggregate_rows(rows)
    with open(os.path.join(out, "sweep_aggregate.csv"), "w", newline="") as fh:
        fh.write(_csv_text(agg, agg_cols))
    for row in agg:
        print(f"{row['method']:<5} rate={row['label_rate']:<5} acc={row['acc_agg_mean']:.4f} "
              f"+/- {row['acc_agg_std']:.4f} (n={row['runs']})")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "verify": cmd_verify,
            "sweep": cmd_sweep}


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ValueError, OSError, argparse.ArgumentTypeError) as exc:
        print(f"tcgm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
