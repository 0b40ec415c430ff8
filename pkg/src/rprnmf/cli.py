"""Command-line front end.

Subcommands: factorize, syn1, syn2, param-sweep, convert, crossvalidate,
extract-constraints.  Every command is a deterministic function of its input
files, flags and seed; results CSVs carry a header row and a trailing
comment with the experiment digest and tool version.

Exit codes: 0 success, 1 runtime error, 2 usage or file error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .constraints import (
    ConstraintSet,
    ConstraintTriple,
    Measure,
    Target,
    constraints_to_label_matrix,
    constraints_to_weight_matrix,
    generate_chain_constraints,
    generate_chain_plan,
    read_constraints,
    write_constraints,
)
from .exceptions import (
    MalformedLineError,
    NonNumericCsvError,
    RaggedCsvError,
    RprNmfError,
    TooFewPointsError,
)
from .io import (
    make_cv_split,
    read_dense_csv,
    read_mask_csv,
    read_ratings,
    ratings_to_matrix,
    write_dense_csv,
    write_report,
    zeros_as_missing,
)
from .matrix import DenseMatrix, MaskMatrix
from .metrics import f1_score, md, msl, rmse
from .solver import SolverConfig, run as run_solver


@dataclass
class ExperimentSpec:
    """Serialisable record of one experiment invocation."""

    kind: str
    params: dict

    def digest(self) -> str:
        blob = json.dumps({"kind": self.kind, "params": self.params}, sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _write_rows(path, fieldnames, rows, spec: ExperimentSpec) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})
        fh.write(f"# experiment={spec.digest()} tool=rprnmf/{__version__}\n")


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return v


def _threads(args) -> int:
    env = os.environ.get("RPRNMF_THREADS")
    if env:
        return max(1, int(env))
    return max(1, getattr(args, "threads", 1))


def _run_tasks(worker, tasks, threads):
    """Run worker over tasks, results ordered by task index regardless of pool."""
    if threads <= 1 or len(tasks) <= 1:
        return [worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, tasks))


def _measure(name: str) -> Measure:
    return Measure.EUCLIDEAN if name == "euc" else Measure.DIVERGENCE


def _derive_seed(*parts: int) -> int:
    """Stable child seed from integer components."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _err_metric(measure: Measure, v, w, h, mask=None) -> float:
    return msl(v, w, h, mask) if measure is Measure.EUCLIDEAN else md(v, w, h, mask)


def _chain_plan(n_triples: int, per_chain: int = 5) -> list[int]:
    """Split a triple budget into chain sizes (triples per chain)."""
    plan = []
    left = n_triples
    while left > per_chain:
        plan.append(per_chain)
        left -= per_chain
    if left:
        plan.append(left)
    return plan


def _generate_chains_plan(ground_truth, target, plan, measure, seed):
    """Disjoint chains with the planned triples-per-chain sizes, as one set."""
    # chain_len counts distances: t triples need t+1 distances
    return generate_chain_plan(ground_truth, target, [t + 1 for t in plan], measure, seed)


# ---------------------------------------------------------------- factorize


def cmd_factorize(args) -> int:
    v = read_dense_csv(args.matrix)
    mask = None
    if args.mask:
        mask = read_mask_csv(args.mask)
    elif args.treat_zero_as_missing:
        mask = zeros_as_missing(v)
    set_w = set_h = None
    if args.constraints:
        set_w, set_h = read_constraints(args.constraints)
    measure = _measure(args.measure)
    config = SolverConfig(
        k=args.k, measure=measure, lambda_w=args.lambda_w, lambda_h=args.lambda_h,
        max_iters=args.max_iters, rel_tol=args.rel_tol, seed=args.seed, mask=mask,
    )
    report = run_solver(v, (set_w, set_h), config)
    err = _err_metric(measure, v, report.w, report.h, mask)
    metrics = {"msl" if measure is Measure.EUCLIDEAN else "md": err, "csr": report.csr}
    if args.out:
        write_report(args.out, report, config, metrics)
    print(f"iterations={report.iterations}")
    print(f"objective={report.final_objective:.10g}")
    for key, value in metrics.items():
        print(f"{key}={'n/a' if value is None else format(value, '.10g')}")
    print(f"wall_time_s={report.wall_time_s:.3f}")
    return 0


# ------------------------------------------------------------------- syn1


def _syn_run(task: dict) -> dict:
    """One synthetic factorisation: build V = W0 @ H0, constrain H, solve."""
    rng = np.random.default_rng([task["seed"], task["group"], task["rep"], 1])
    n, m, k = task["n"], task["m"], task["k"]
    w0 = rng.uniform(0.0, 1.0, size=(n, k))
    h0 = rng.uniform(0.0, 1.0, size=(k, m))
    v = DenseMatrix(w0 @ h0)
    measure = _measure(task["measure"])
    plan = _chain_plan(task["n_constraints"], task["triples_per_chain"])
    set_h = _generate_chains_plan(
        DenseMatrix(h0), Target.H_COLS, plan, measure,
        seed=[task["seed"], task["group"], task["rep"], 2],
    )
    config = SolverConfig(
        k=k, measure=measure, lambda_h=task["lambda_h"],
        max_iters=task["max_iters"], rel_tol=task["rel_tol"],
        seed=_derive_seed(task["seed"], task["group"], task["rep"], 3),
    )
    report = run_solver(v, (None, set_h), config)
    return {
        "algorithm": "rprnmf" if task["lambda_h"] > 0 else "nmf",
        "measure": task["measure"],
        "n": n,
        "m": m,
        "n_constraints": len(set_h),
        "repetition": task["rep"],
        "msl_or_md": _err_metric(measure, v, report.w, report.h),
        "csr": report.csr,
        "wall_time_s": report.wall_time_s,
    }


def _syn1_tasks(args) -> list[dict]:
    groups = [int(g) for g in args.groups.split(",")] if "," in str(args.groups) else list(
        range(1, int(args.groups) + 1))
    tasks = []
    for g in groups:
        for rep in range(args.reps):
            for meas in args.measures.split(","):
                for lam in (0.0, args.lambda_h):
                    tasks.append({
                        "seed": args.seed, "group": g, "rep": rep, "measure": meas,
                        "n": args.n, "m": args.m, "k": args.k,
                        "n_constraints": g * args.triples_per_group,
                        "triples_per_chain": args.triples_per_group,
                        "lambda_h": lam, "max_iters": args.max_iters,
                        "rel_tol": args.rel_tol,
                    })
    return tasks


def cmd_syn1(args) -> int:
    tasks = _syn1_tasks(args)
    rows = _run_tasks(_syn_run, tasks, _threads(args))
    for row in rows:
        row.pop("n", None)
        row.pop("m", None)
    spec = ExperimentSpec("syn1", {k: v for k, v in vars(args).items() if k != "func"})
    fields = ["algorithm", "measure", "n_constraints", "repetition", "msl_or_md", "csr", "wall_time_s"]
    _write_rows(args.out, fields, rows, spec)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


# ------------------------------------------------------------------- syn2


def cmd_syn2(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    tasks = []
    for size in sizes:
        k = max(1, size // 5)
        for rep in range(args.reps):
            for meas in args.measures.split(","):
                for lam in (0.0, args.lambda_h):
                    tasks.append({
                        "seed": args.seed, "group": size, "rep": rep, "measure": meas,
                        "n": size, "m": size, "k": k,
                        "n_constraints": k, "triples_per_chain": 5,
                        "lambda_h": lam, "max_iters": args.max_iters,
                        "rel_tol": args.rel_tol,
                    })
    rows = _run_tasks(_syn_run, tasks, _threads(args))
    spec = ExperimentSpec("syn2", {k: v for k, v in vars(args).items() if k != "func"})
    fields = ["algorithm", "measure", "n", "m", "n_constraints", "repetition",
              "msl_or_md", "csr", "wall_time_s"]
    _write_rows(args.out, fields, rows, spec)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


# ------------------------------------------------------------- param-sweep


def _sweep_run(task: dict) -> dict:
    rng = np.random.default_rng([task["seed"], task["grid_index"], task["rep"], 1])
    n, m, k = task["n"], task["m"], task["k"]
    w0 = rng.uniform(0.0, 1.0, size=(n, k))
    h0 = rng.uniform(0.0, 1.0, size=(k, m))
    v = DenseMatrix(w0 @ h0)
    measure = _measure(task["measure"])
    # independent triples (single-triple chains): the coefficient sweep varies
    # penalty strength, so the constraints themselves carry no chain coupling
    set_w = generate_chain_constraints(DenseMatrix(w0), Target.W_ROWS, 2, task["n_constraints"],
                                       measure, seed=[task["seed"], task["rep"], 2])
    set_h = generate_chain_constraints(DenseMatrix(h0), Target.H_COLS, 2, task["n_constraints"],
                                       measure, seed=[task["seed"], task["rep"], 3])
    config = SolverConfig(
        k=k, measure=measure, lambda_w=task["lam"], lambda_h=task["lam"],
        max_iters=task["max_iters"], rel_tol=task["rel_tol"],
        seed=_derive_seed(task["seed"], task["rep"], 4),
    )
    report = run_solver(v, (set_w, set_h), config)
    return {
        "lambda": task["lam"],
        "measure": task["measure"],
        "repetition": task["rep"],
        "msl_or_md": _err_metric(measure, v, report.w, report.h),
        "csr": report.csr,
    }


def default_lambda_grid() -> list[float]:
    return [round(0.4 * i, 10) for i in range(1, 11)] + [20.0, 40.0, 60.0, 80.0, 100.0]


def cmd_param_sweep(args) -> int:
    grid = [float(x) for x in args.lambdas.split(",")] if args.lambdas else default_lambda_grid()
    tasks = []
    for gi, lam in enumerate(grid):
        for rep in range(args.reps):
            for meas in args.measures.split(","):
                tasks.append({
                    "seed": args.seed, "grid_index": gi, "rep": rep, "measure": meas,
                    "lam": lam, "n": args.n, "m": args.m, "k": args.k,
                    "n_constraints": args.n_constraints or max(1, args.n // 10),
                    "max_iters": args.max_iters, "rel_tol": args.rel_tol,
                })
    rows = _run_tasks(_sweep_run, tasks, _threads(args))
    spec = ExperimentSpec("param-sweep", {k: v for k, v in vars(args).items() if k != "func"})
    _write_rows(args.out, ["lambda", "measure", "repetition", "msl_or_md", "csr"], rows, spec)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


# ----------------------------------------------------------------- convert


def cmd_convert(args) -> int:
    set_w, set_h = read_constraints(args.constraints)
    cset = set_h if set_h is not None else set_w
    if cset is None:
        raise RprNmfError(f"no constraints found in {args.constraints}")
    if cset.target is not Target.H_COLS:
        cset = ConstraintSet(Target.H_COLS, cset.triples)
    m = args.m or cset.max_index()
    if args.to == "weights":
        wm = constraints_to_weight_matrix(m, cset, args.mins, args.maxs)
        write_dense_csv(args.out, wm.s)
        print(f"max_depth={wm.max_depth}")
    else:
        lm = constraints_to_label_matrix(m, cset)
        write_dense_csv(args.out, DenseMatrix(lm.b) if lm.b.size else DenseMatrix(np.zeros((1, m))))
        print(f"classes={lm.n_classes}")
    return 0


# ----------------------------------------------------------- crossvalidate


def _cv_task(task: dict) -> dict:
    v = DenseMatrix(task["v"])
    training = MaskMatrix(task["training"])
    heldout = MaskMatrix(task["heldout"])
    measure = _measure(task["measure"])
    config = SolverConfig(
        k=task["k"], measure=measure, lambda_w=task["lam_w"], lambda_h=task["lam_h"],
        max_iters=task["max_iters"], rel_tol=task["rel_tol"],
        seed=task["seed"] + task["fold"], mask=training,
    )
    report = run_solver(v, (task["set_w"], task["set_h"]), config)
    wh = report.w.a @ report.h.a
    f1 = f1_score(v, wh, training, heldout)
    return {
        "fold": task["fold"],
        "algorithm": "rprnmf" if (task["lam_w"] or task["lam_h"]) else "nmf",
        "measure": task["measure"],
        "msl_or_md": _err_metric(measure, v, report.w, report.h, training),
        "csr": report.csr if report.csr is not None else "",
        "rmse": rmse(v, wh, heldout),
        "f1": f1.f1,
    }


def cmd_crossvalidate(args) -> int:
    table = read_ratings(args.ratings, args.format)
    v, observed = ratings_to_matrix(table)
    set_w = set_h = None
    if args.constraints:
        set_w, set_h = read_constraints(args.constraints)
    split = make_cv_split(observed, args.folds, args.seed)
    lambdas = [(0.0, 0.0)]
    if set_w is not None or set_h is not None:
        lambdas.append((args.lambda_w, args.lambda_h))
    tasks = []
    for fold in range(split.n_folds):
        for lam_w, lam_h in lambdas:
            tasks.append({
                "v": v.a, "training": split.training_mask(fold).bits,
                "heldout": split.fold_masks[fold].bits,
                "set_w": set_w, "set_h": set_h, "fold": fold,
                "lam_w": lam_w, "lam_h": lam_h, "measure": args.measure,
                "k": args.k, "max_iters": args.max_iters, "rel_tol": args.rel_tol,
                "seed": args.seed,
            })
    rows = _run_tasks(_cv_task, tasks, _threads(args))
    spec = ExperimentSpec("crossvalidate", {k: v for k, v in vars(args).items() if k != "func"})
    _write_rows(args.out, ["fold", "algorithm", "measure", "msl_or_md", "csr", "rmse", "f1"],
                rows, spec)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


# ---------------------------------------------------- extract-constraints


def read_labels_file(path) -> list[int]:
    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                labels.append(int(line))
            except ValueError as exc:
                raise RprNmfError(f"line {lineno}: labels must be integers") from exc
    return labels


def cmd_extract_constraints(args) -> int:
    labels = read_labels_file(args.labels)
    rng = np.random.default_rng(args.seed)
    by_class: dict[int, list[int]] = {}
    for idx, lab in enumerate(labels, start=1):
        by_class.setdefault(lab, []).append(idx)
    classes = sorted(by_class)
    if len(classes) < 2:
        raise TooFewPointsError("need at least two classes to build triples")
    triples = []
    for lab in classes:
        members = by_class[lab]
        if len(members) < args.per_class:
            raise TooFewPointsError(
                f"class {lab} has {len(members)} members, need {args.per_class}")
        chosen = sorted(rng.choice(len(members), size=args.per_class, replace=False).tolist())
        picked = [members[i] for i in chosen]
        other_classes = [c for c in classes if c != lab]
        for a, b in zip(picked[:-1], picked[1:]):
            oc = other_classes[rng.integers(len(other_classes))]
            s = by_class[oc][rng.integers(len(by_class[oc]))]
            triples.append(ConstraintTriple(a, b, s))
    if args.both_ways:
        # cross-class similarity ordered by class-id distance; chains of these
        # typically close cycles in the pair graph
        for lab in classes:
            ranked = sorted((c for c in classes if c != lab), key=lambda c: abs(c - lab))
            if len(ranked) < 2:
                continue
            near, far = ranked[0], ranked[-1]
            q = by_class[lab][rng.integers(len(by_class[lab]))]
            r = by_class[near][rng.integers(len(by_class[near]))]
            s = by_class[far][rng.integers(len(by_class[far]))]
            if len({q, r, s}) == 3:
                triples.append(ConstraintTriple(q, r, s))
    cset = ConstraintSet(Target.H_COLS, triples)
    write_constraints(args.out, set_h=cset)
    print(f"wrote {len(cset)} triples to {args.out}")
    return 0


# ------------------------------------------------------------------ parser


def _add_solver_flags(p, lambda_w=0.0, lambda_h=0.0, max_iters=500, rel_tol=1e-6):
    p.add_argument("--k", type=int, required=False, default=20)
    p.add_argument("--measure", choices=("euc", "div"), default="euc")
    p.add_argument("--lambda-w", dest="lambda_w", type=float, default=lambda_w)
    p.add_argument("--lambda-h", dest="lambda_h", type=float, default=lambda_h)
    p.add_argument("--max-iters", dest="max_iters", type=int, default=max_iters)
    p.add_argument("--rel-tol", dest="rel_tol", type=float, default=rel_tol)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rprnmf", description=__doc__)
    parser.add_argument("--version", action="version", version=f"rprnmf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("factorize", help="factorise one matrix and write a JSON report")
    p.add_argument("--matrix", required=True)
    p.add_argument("--constraints")
    p.add_argument("--mask")
    p.add_argument("--treat-zero-as-missing", action="store_true")
    p.add_argument("--out")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_factorize)

    p = sub.add_parser("syn1", help="sweep the constraint-group count on synthetic data")
    p.add_argument("--out", required=True)
    p.add_argument("--groups", default="10", help="max group count, or explicit comma list")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--triples-per-group", dest="triples_per_group", type=int, default=5)
    p.add_argument("--measures", default="euc,div")
    p.add_argument("--threads", type=int, default=1)
    _add_solver_flags(p, lambda_h=1.0, max_iters=800, rel_tol=1e-9)
    p.set_defaults(func=cmd_syn1)

    p = sub.add_parser("syn2", help="sweep the matrix size on synthetic data")
    p.add_argument("--out", required=True)
    p.add_argument("--sizes", default="20,40,60,80,100,120,140,160,180,200")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--measures", default="euc,div")
    p.add_argument("--threads", type=int, default=1)
    _add_solver_flags(p, lambda_h=1.0, max_iters=800, rel_tol=1e-9)
    p.set_defaults(func=cmd_syn2)

    p = sub.add_parser("param-sweep", help="sweep the penalty coefficient grid")
    p.add_argument("--out", required=True)
    p.add_argument("--lambdas", help="comma list; default 0.4..4 step 0.4 plus 20..100 step 20")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--n-constraints", dest="n_constraints", type=int, default=None,
                   help="triples per side (default n/10)")
    p.add_argument("--measures", default="euc,div")
    p.add_argument("--threads", type=int, default=1)
    _add_solver_flags(p, max_iters=1000, rel_tol=1e-9)
    p.set_defaults(func=cmd_param_sweep)

    p = sub.add_parser("convert", help="convert constraints to a weight or label matrix")
    p.add_argument("--constraints", required=True)
    p.add_argument("--to", choices=("weights", "labels"), required=True)
    p.add_argument("--m", type=int, default=None, help="column dimension (default: max index)")
    p.add_argument("--mins", type=float, default=0.0)
    p.add_argument("--maxs", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("crossvalidate", help="masked factorisation over CV folds of a ratings file")
    p.add_argument("--ratings", required=True)
    p.add_argument("--format", choices=("ml1m", "csv"), default="ml1m")
    p.add_argument("--constraints")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_crossvalidate)

    p = sub.add_parser("extract-constraints", help="build triples from a class-label file")
    p.add_argument("--labels", required=True)
    p.add_argument("--per-class", dest="per_class", type=int, default=2)
    p.add_argument("--both-ways", dest="both_ways", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract_constraints)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 2
    except (OSError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RaggedCsvError, NonNumericCsvError, MalformedLineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RprNmfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
