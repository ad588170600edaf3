"""Command line entry point ``relkit``.

Exit codes: 0 success, 1 other errors, 2 infeasible evidence, 3 parse or
usage error, 4 learning did not converge.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from relkit.core import ConstraintClass, validate_relation
from relkit.datasets import build_pair_dataset, ingest_idx, ingest_sentences
from relkit.errors import InfeasibleEvidenceError, NonConvergenceError, ParseError, RelkitError
from relkit.experiment import ExperimentManifest, run_experiment
from relkit.io import (
    load_features,
    load_model,
    load_relation,
    read_cost_triplets,
    read_evidence,
    save_features,
    save_model,
    save_relation,
    write_csv,
)
from relkit.lifting import LiftSpec, lift_features
from relkit.metrics import (
    MetricRow,
    PartitionView,
    PermutationView,
    cayley_distance,
    hamming_distance,
    kendall_distance,
    pair_disagreement,
    rand_error,
    variation_of_information,
)
from relkit.models import OneVsRestModel, cost_matrix, learn_bernoulli, learn_logistic, one_vs_rest_learn
from relkit.solvers import solve

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE, EXIT_PARSE, EXIT_NONCONVERGENCE = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_PARSE, f"{self.prog}: error: {message}\n")


def _exit_code(exc: BaseException) -> int:
    # a failed experiment stage wraps the original error
    while exc is not None:
        if isinstance(exc, InfeasibleEvidenceError):
            return EXIT_INFEASIBLE
        if isinstance(exc, ParseError):
            return EXIT_PARSE
        if isinstance(exc, NonConvergenceError):
            return EXIT_NONCONVERGENCE
        exc = exc.__cause__
    return EXIT_ERROR


def _lift_spec(args) -> LiftSpec:
    return LiftSpec(mode=args.lift_mode, degree=args.degree, width=args.width, seed=args.lift_seed)


def _sigma(args) -> float:
    if args.sigma_inv_sq_exp is not None:
        return 2.0 ** (-args.sigma_inv_sq_exp / 2)
    return args.sigma


def _emit(obj) -> None:
    print(json.dumps(obj, indent=1, sort_keys=True))


# -- subcommands --------------------------------------------------------------


def cmd_ingest(args) -> int:
    if args.corpus:
        ds = ingest_sentences(args.corpus, args.dictionary_size, min_length=2)
        store, y = ds.training_store()
        save_features(args.out, store, y=y, dictionary=np.array(ds.dictionary))
        _emit({"sentences": len(ds), "dictionary_size": ds.k, "pairs": store.num_pairs})
        return EXIT_OK
    if not (args.images and args.labels):
        raise ParseError("ingest needs --images and --labels, or --corpus")
    store, labels = ingest_idx(args.images, args.labels, bit_expand=not args.binarize)
    save_features(args.out, store, labels=labels)
    _emit({"elements": store.num_pairs, "features": store.num_features})
    return EXIT_OK


def cmd_pairs(args) -> int:
    elements, extras = load_features(args.elements)
    if "labels" not in extras:
        raise ParseError(f"{args.elements}: no element labels stored")
    store, y = build_pair_dataset(elements, extras["labels"], args.n_pairs, stratified=not args.unstratified,
                                  seed=args.seed)
    save_features(args.out, store, y=y)
    _emit({"pairs": store.num_pairs, "positive": int(y.sum()), "features": store.num_features})
    return EXIT_OK


def cmd_learn(args) -> int:
    store, extras = load_features(args.features)
    spec = _lift_spec(args)
    lifted = lift_features(store, spec)
    sigma = _sigma(args)
    opts = {"tol": args.tol, "max_iter": args.max_iter, "method": args.method}
    if args.one_vs_rest:
        if "labels" not in extras:
            raise ParseError(f"{args.features}: one-vs-rest needs element labels")
        model = one_vs_rest_learn(lifted.matrix, extras["labels"], sigma, lift=spec, **opts)
    else:
        if "y" not in extras:
            raise ParseError(f"{args.features}: no pair targets stored")
        if args.model_kind == "bernoulli":
            model = learn_bernoulli(lifted, extras["y"], sigma, lift=spec)
        else:
            model = learn_logistic(lifted, extras["y"], sigma, lift=spec, **opts)
    save_model(args.out, model)
    _emit({"kind": model.kind, "sigma": model.sigma, "parameters": int(np.asarray(model.theta).size),
           **{k: v for k, v in model.info.items() if isinstance(v, (int, float, bool))}})
    return EXIT_OK


def _report_dict(report) -> dict:
    summary = report.summary()
    check = validate_relation(report.relation)
    summary["valid"] = bool(check)
    return summary


def _solve_and_write(costs, args) -> int:
    evidence = read_evidence(args.evidence) if args.evidence else None
    report = solve(costs, args.constraint, method=args.method, evidence=evidence, seed=args.seed)
    if args.out:
        save_relation(args.out, report.relation)
    _emit(_report_dict(report))
    return EXIT_OK


def cmd_infer(args) -> int:
    model = load_model(args.model)
    store, _ = load_features(args.features)
    spec = model.lift or LiftSpec()
    lifted = lift_features(store, spec)
    if isinstance(model, OneVsRestModel):
        costs = cost_matrix(model, lifted.matrix)
    else:
        costs = cost_matrix(model, lifted)
    return _solve_and_write(costs, args)


def cmd_solve(args) -> int:
    return _solve_and_write(read_cost_triplets(args.costs), args)


def _metric_rows(instance: str, pred, truth) -> list[MetricRow]:
    cls = truth.constraint_class
    if pred.constraint_class is not cls or pred.shape != truth.shape:
        raise ParseError("predicted and true relations differ in class or shape")
    n = truth.shape[0]
    if cls is ConstraintClass.EQUIVALENCE:
        p, q = PartitionView.from_relation(pred), PartitionView.from_relation(truth)
        ri = rand_error(p, q)
        return [MetricRow(instance, n, "rand_error", ri, ri),
                MetricRow(instance, n, "vi", variation_of_information(p, q), variation_of_information(p, q))]
    if cls is ConstraintClass.LINEAR_ORDER:
        p, q = PermutationView.from_relation(pred), PermutationView.from_relation(truth)
        return [
            MetricRow(instance, n, "pair_disagreement", kendall_distance(p, q), pair_disagreement(p, q)),
            MetricRow(instance, n, "cayley", cayley_distance(p, q), cayley_distance(p, q, normalized=True)),
            MetricRow(instance, n, "hamming", hamming_distance(p, q), hamming_distance(p, q, normalized=True)),
        ]
    wrong = int(np.sum(pred.bits != truth.bits))
    if cls is ConstraintClass.MAP:
        errors = int(np.sum(np.any(pred.bits != truth.bits, axis=1)))
        return [MetricRow(instance, n, "error", errors, errors / n)]
    return [MetricRow(instance, n, "pair_error", wrong, wrong / truth.bits.size)]


def cmd_eval(args) -> int:
    rows = _metric_rows(args.instance, load_relation(args.pred), load_relation(args.truth))
    if args.out:
        write_csv(args.out, MetricRow.HEADER, [r.as_tuple() for r in rows])
    else:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(MetricRow.HEADER)
        writer.writerows(r.as_tuple() for r in rows)
    return EXIT_OK


def cmd_run(args) -> int:
    manifest = ExperimentManifest.load(args.manifest)
    if args.output_dir:
        manifest.output_dir = args.output_dir
    target = run_experiment(manifest)
    _emit({"output_dir": str(target)})
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def _add_lift(p) -> None:
    g = p.add_argument_group("lifting")
    g.add_argument("--lift-mode", choices=["exact", "sketch"], default="exact")
    g.add_argument("--degree", type=int, default=1, help="monomial degree (exact) or polynomial degree (sketch)")
    g.add_argument("--width", type=int, help="sketch width m")
    g.add_argument("--lift-seed", type=int, help="sketch hash seed")


def _add_solver(p) -> None:
    p.add_argument("--constraint", choices=[c.value for c in ConstraintClass], required=True)
    p.add_argument("--method", choices=["auto", "exact", "heuristic"], default="auto")
    p.add_argument("--evidence", help="file of pinned pairs, one 'a b value' per line")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the relation as JSON here")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="relkit", description="Learn and infer constrained binary relations.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="IDX images or a sentence corpus to a feature file")
    p.add_argument("--images")
    p.add_argument("--labels")
    p.add_argument("--binarize", action="store_true", help="one feature per pixel (pixel > 0) instead of 8 bits")
    p.add_argument("--corpus", help="UTF-8 text, one sentence per line")
    p.add_argument("--dictionary-size", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("pairs", help="sample labelled element pairs")
    p.add_argument("--elements", required=True)
    p.add_argument("--n-pairs", type=int, required=True)
    p.add_argument("--unstratified", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pairs)

    p = sub.add_parser("learn", help="fit a model to a feature file")
    p.add_argument("--features", required=True)
    p.add_argument("--model-kind", choices=["logistic", "bernoulli"], default="logistic")
    p.add_argument("--one-vs-rest", action="store_true", help="per-label logistic models on element features")
    s = p.add_mutually_exclusive_group()
    s.add_argument("--sigma", type=float, default=1.0)
    s.add_argument("--sigma-inv-sq-exp", type=int, help="sigma^-2 = 2^E")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=5000)
    p.add_argument("--method", choices=["lbfgs", "gradient", "fixed"], default="lbfgs")
    p.add_argument("--out", required=True)
    _add_lift(p)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("infer", help="infer a relation from a model and features")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    _add_solver(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("solve", help="solve a cost matrix given in triplet format")
    p.add_argument("--costs", required=True)
    _add_solver(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("eval", help="compare a predicted relation with the truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--instance", default="0")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="run an experiment manifest")
    p.add_argument("manifest")
    p.add_argument("--output-dir", help="override the manifest's output directory")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (RelkitError, ValueError, OSError) as exc:
        print(f"relkit {args.command}: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
