"""Manifest-driven experiments: ingest, lift, learn, infer, evaluate, report.

A manifest is a JSON object::

    {
      "task": "classify" | "cluster" | "order" | "semisup",
      "data": {...},                        # task specific, see below
      "output_dir": "out",                  # relative to the manifest file
      "lift": {"mode": "exact", "degree": 1, "width": null, "seed": null},
      "model_kind": "logistic" | "bernoulli",
      "sigma_inv_sq_exponents": [4, 7],     # sigma^-2 = 2^e, or instead
      "sigmas": [1.0],                      # explicit sigma values
      "solver": "auto" | "exact" | "heuristic",
      "learn": {"tol": 1e-6, "max_iter": 5000, "method": "lbfgs", "strict": true},
      "instances": 10,
      "seed": 0
    }

Every random choice draws from ``derive_seed(seed, stage, index)``, which
hashes the root seed with a fixed stage number through
``numpy.random.SeedSequence``.  Grid points and instances therefore get the
same streams whatever order they run in.
"""

from __future__ import annotations

import json
import platform
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy.sparse as sp

import relkit
from relkit.core import (
    ConstraintClass,
    Evidence,
    FeatureStore,
    labels_from_equivalence,
    validate_relation,
)
from relkit.datasets import (
    SentenceDataset,
    all_pairs_store,
    build_pair_dataset,
    ingest_idx,
    ingest_sentences,
    planted_blocks,
    synthetic_order_corpus,
)
from relkit.errors import ParseError, RelkitError
from relkit.io import save_model, write_csv
from relkit.lifting import LiftMode, LiftSpec, lift_features
from relkit.metrics import (
    MetricRow,
    PartitionView,
    PermutationView,
    cayley_distance,
    hamming_distance,
    pair_disagreement,
    rand_error,
    random_order_baseline,
    summarize,
    variation_of_information,
)
from relkit.models import cost_matrix, learn_bernoulli, learn_logistic, one_vs_rest_learn
from relkit.solvers import solve, solve_alternating, solve_map
from relkit.solvers.report import Stopwatch

__all__ = ["TASKS", "ExperimentManifest", "StageError", "derive_seed", "run_experiment"]

TASKS = ("classify", "cluster", "order", "semisup")

# stage numbers feeding derive_seed; never renumber, outputs depend on them
SEED_TRAIN, SEED_INSTANCE, SEED_SOLVER, SEED_LIFT, SEED_SPLIT, SEED_EVIDENCE = range(6)


def derive_seed(root: int, *path: int) -> int:
    return int(np.random.SeedSequence(entropy=int(root), spawn_key=tuple(int(p) for p in path)).generate_state(1)[0])


class StageError(RelkitError):
    """A pipeline stage failed; the original exception is ``__cause__``."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage


@contextmanager
def _stage(name: str, timings: dict):
    clock = Stopwatch()
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    finally:
        timings[name] = timings.get(name, 0.0) + clock.elapsed


@dataclass
class ExperimentManifest:
    task: str
    data: dict
    output_dir: str = "out"
    lift: LiftSpec = field(default_factory=LiftSpec)
    model_kind: str = "logistic"
    sigma_inv_sq_exponents: list | None = None
    sigmas: list | None = None
    solver: str = "auto"
    learn: dict = field(default_factory=dict)
    instances: int = 1
    seed: int = 0
    base_dir: Path = field(default=Path("."), repr=False)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ParseError(f"unknown task {self.task!r}; expected one of {', '.join(TASKS)}")
        if self.model_kind not in ("logistic", "bernoulli"):
            raise ParseError(f"unknown model_kind {self.model_kind!r}")
        if self.solver not in ("auto", "exact", "heuristic"):
            raise ParseError(f"unknown solver {self.solver!r}")
        if self.sigma_inv_sq_exponents is None and self.sigmas is None:
            self.sigmas = [1.0]
        if not isinstance(self.lift, LiftSpec):
            self.lift = LiftSpec.from_dict(self.lift)
        if self.lift.mode is LiftMode.SKETCH and self.lift.seed is None:
            raise ParseError("sketch lifting needs an explicit seed in the manifest")
        self.instances = int(self.instances)
        self.seed = int(self.seed)

    @classmethod
    def from_dict(cls, data: dict, base_dir=".") -> "ExperimentManifest":
        known = {f.name for f in fields(cls)} - {"base_dir"}
        unknown = set(data) - known
        if unknown:
            raise ParseError(f"unknown manifest keys: {', '.join(sorted(unknown))}")
        if "task" not in data or "data" not in data:
            raise ParseError("manifest needs 'task' and 'data'")
        try:
            return cls(**data, base_dir=Path(base_dir))
        except (TypeError, ValueError) as exc:
            raise ParseError(f"invalid manifest: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ExperimentManifest":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ParseError(f"{path}: manifest must be a JSON object")
        return cls.from_dict(data, base_dir=path.parent)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "data": self.data,
            "output_dir": self.output_dir,
            "lift": self.lift.to_dict(),
            "model_kind": self.model_kind,
            "sigma_inv_sq_exponents": self.sigma_inv_sq_exponents,
            "sigmas": self.sigmas,
            "solver": self.solver,
            "learn": self.learn,
            "instances": self.instances,
            "seed": self.seed,
        }

    def path(self, value) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def sigma_grid(self) -> list[tuple[str, float, float]]:
        """``(label, sigma, sigma^-2)`` for every grid point."""
        if self.sigma_inv_sq_exponents is not None:
            return [(f"2^{int(e)}", 2.0 ** (-int(e) / 2), 2.0 ** int(e)) for e in self.sigma_inv_sq_exponents]
        return [(format(float(s) ** -2, "g"), float(s), float(s) ** -2) for s in self.sigmas]


@dataclass
class _Outputs:
    metrics: list = field(default_factory=list)
    plot: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    models: dict = field(default_factory=dict)


def _learn_kwargs(manifest: ExperimentManifest) -> dict:
    allowed = {"tol", "max_iter", "method", "strict"}
    extra = set(manifest.learn) - allowed
    if extra:
        raise ParseError(f"unknown learn options: {', '.join(sorted(extra))}")
    return dict(manifest.learn)


def _learn(manifest, store: FeatureStore, y, sigma: float):
    if manifest.model_kind == "bernoulli":
        return learn_bernoulli(store, y, sigma, lift=manifest.lift)
    return learn_logistic(store, y, sigma, lift=manifest.lift, **_learn_kwargs(manifest))


def _lift(manifest, store: FeatureStore) -> FeatureStore:
    return lift_features(store, manifest.lift)


def _checked(relation):
    check = validate_relation(relation)
    if not check:
        raise RelkitError(f"solver returned an infeasible relation: {check.violation}")
    return relation


def _record(out: _Outputs, instance: str, report) -> None:
    out.reports.append({"instance": instance, **report.summary()})


def _plot_rows(out: _Outputs, label, inv_sq, name, values, baseline="") -> None:
    mean, std = summarize(values)
    out.plot.append((label, _f(inv_sq), name, _f(mean), _f(std), baseline if baseline == "" else _f(baseline)))


def _f(v) -> str:
    return format(float(v), ".12g")


# -- elements -----------------------------------------------------------------


def _elements(manifest: ExperimentManifest, split: str) -> tuple[sp.csr_matrix, np.ndarray]:
    """Element features and labels of the ``train`` or ``test`` split."""
    data = manifest.data
    source = data.get("source", "idx")
    if source == "idx":
        store, labels = ingest_idx(
            manifest.path(data[f"{split}_images"]),
            manifest.path(data[f"{split}_labels"]),
            bit_expand=bool(data.get("bit_expand", True)),
        )
        X = sp.csr_matrix(store.matrix)
        limit = data.get(f"n_{split}")
        if limit is not None:
            X, labels = X[: int(limit)], labels[: int(limit)]
        return X, labels
    if source == "synthetic":
        n = int(data[f"n_{split}"])
        stage = 0 if split == "train" else 1
        return planted_blocks(
            n,
            int(data["n_blocks"]),
            int(data["n_features"]),
            flip=float(data.get("flip", 0.0)),
            seed=derive_seed(manifest.seed, SEED_SPLIT, stage),
            prototype_seed=derive_seed(manifest.seed, SEED_SPLIT, 2),
        )
    raise ParseError(f"unknown data source {source!r}")


def _stratified_subset(labels: np.ndarray, size: int, seed: int) -> np.ndarray:
    """``size`` elements spread as evenly as possible over the labels."""
    rng = np.random.default_rng(seed)
    values = np.unique(labels)
    per = np.full(values.size, size // values.size)
    per[rng.permutation(values.size)[: size % values.size]] += 1
    picks = []
    for v, k in zip(values, per):
        members = np.flatnonzero(labels == v)
        if k > members.size:
            raise ValueError(f"label {v} has {members.size} elements, {k} needed")
        picks.append(rng.choice(members, size=k, replace=False))
    return np.sort(np.concatenate(picks))


# -- tasks --------------------------------------------------------------------


def _classify(manifest, out: _Outputs, timings: dict) -> None:
    with _stage("ingest", timings):
        X_train, y_train = _elements(manifest, "train")
        X_test, y_test = _elements(manifest, "test")
        n_labels = int(max(y_train.max(), y_test.max())) + 1
    with _stage("lift", timings):
        L_train = _lift(manifest, FeatureStore.grid((X_train.shape[0], 1), X_train)).matrix
        L_test = _lift(manifest, FeatureStore.grid((X_test.shape[0], 1), X_test)).matrix
    for label, sigma, inv_sq in manifest.sigma_grid():
        with _stage("learn", timings):
            model = one_vs_rest_learn(L_train, y_train, sigma, n_labels=n_labels, lift=manifest.lift,
                                      **_learn_kwargs(manifest))
            out.models[f"model_sigma_inv_sq_{label}"] = model
        errors = {}
        for split, L, y in (("train", L_train, y_train), ("test", L_test, y_test)):
            with _stage("infer", timings):
                report = solve_map(cost_matrix(model, L))
                _checked(report.relation)
                _record(out, f"{split}/sigma_inv_sq={label}", report)
            with _stage("evaluate", timings):
                pred = np.argmax(report.relation.bits, axis=1)
                wrong = int(np.sum(pred != y))
                errors[split] = wrong / y.size
                out.metrics.append(MetricRow(f"{split}/sigma_inv_sq={label}", int(y.size), "error", wrong, errors[split]))
        out.plot.append((label, _f(inv_sq), "train_error", _f(errors["train"]), "0", ""))
        out.plot.append((label, _f(inv_sq), "test_error", _f(errors["test"]), "0", _f(1 - 1 / n_labels)))


def _pair_training_set(manifest, X, labels) -> tuple[FeatureStore, np.ndarray]:
    data = manifest.data
    n_pairs = int(data.get("n_train_pairs", X.shape[0] * (X.shape[0] - 1) // 2))
    store, y = build_pair_dataset(
        X, labels, n_pairs, stratified=bool(data.get("stratified_pairs", False)),
        seed=derive_seed(manifest.seed, SEED_TRAIN),
    )
    return _lift(manifest, store), y


def _cluster(manifest, out: _Outputs, timings: dict) -> None:
    data = manifest.data
    size = int(data.get("subset_size", 60))
    with _stage("ingest", timings):
        X_train, y_train = _elements(manifest, "train")
        X_test, y_test = _elements(manifest, "test")
        subsets = [
            _stratified_subset(y_test, size, derive_seed(manifest.seed, SEED_INSTANCE, i))
            for i in range(manifest.instances)
        ]
    with _stage("lift", timings):
        train_store, train_y = _pair_training_set(manifest, X_train, y_train)
        test_stores = [_lift(manifest, all_pairs_store(X_test[idx])) for idx in subsets]
    for label, sigma, inv_sq in manifest.sigma_grid():
        with _stage("learn", timings):
            model = _learn(manifest, train_store, train_y, sigma)
            out.models[f"model_sigma_inv_sq_{label}"] = model
        collected = {"rand_error": [], "vi": [], "rand_error_independent": [], "rand_error_singletons": []}
        for i, (idx, store) in enumerate(zip(subsets, test_stores)):
            name = f"subset={i}/sigma_inv_sq={label}"
            with _stage("infer", timings):
                costs = cost_matrix(model, store)
                report = solve(costs, ConstraintClass.EQUIVALENCE, manifest.solver,
                               seed=derive_seed(manifest.seed, SEED_SOLVER, i))
                _checked(report.relation)
                _record(out, name, report)
            with _stage("evaluate", timings):
                truth = PartitionView(y_test[idx])
                found = PartitionView(labels_from_equivalence(report.relation))
                values = {
                    "rand_error": rand_error(found, truth),
                    "vi": variation_of_information(found, truth),
                    "rand_error_independent": _independent_pair_error(costs.costs, y_test[idx]),
                    "rand_error_singletons": rand_error(PartitionView(np.arange(len(idx))), truth),
                }
                for metric, v in values.items():
                    collected[metric].append(v)
                    out.metrics.append(MetricRow(name, len(idx), metric, v, v))
        for metric, vals in collected.items():
            _plot_rows(out, label, inv_sq, metric, vals)


def _independent_pair_error(c: np.ndarray, labels: np.ndarray) -> float:
    """Error of deciding each unordered pair on its own: related iff its folded cost is negative."""
    a, b = np.triu_indices(labels.size, 1)
    pred = (c[a, b] + c[b, a]) < 0
    return float(np.mean(pred != (labels[a] == labels[b])))


def _sentences(manifest) -> SentenceDataset:
    data = manifest.data
    if "corpus" in data:
        lines = manifest.path(data["corpus"])
    else:
        syn = data.get("synthetic", {})
        lines = synthetic_order_corpus(
            int(syn.get("n_sentences", 1000)),
            vocabulary=int(syn.get("vocabulary", 20)),
            length=int(syn.get("length", 8)),
            noise=float(syn.get("noise", 0.1)),
            seed=derive_seed(manifest.seed, SEED_SPLIT, 3),
        )
    return ingest_sentences(lines, int(data.get("dictionary_size", 1000)), min_length=2)


def _order(manifest, out: _Outputs, timings: dict) -> None:
    data = manifest.data
    with _stage("ingest", timings):
        ds = _sentences(manifest)
        perm = np.random.default_rng(derive_seed(manifest.seed, SEED_SPLIT, 4)).permutation(len(ds))
        n_train = int(round(float(data.get("train_fraction", 0.8)) * len(ds)))
        train_ids, test_ids = np.sort(perm[:n_train]), np.sort(perm[n_train:])
        if data.get("max_test") is not None:
            test_ids = test_ids[: int(data["max_test"])]
        if n_train == 0 or test_ids.size == 0:
            raise ValueError("train/test split leaves an empty side")
    with _stage("lift", timings):
        train_store, train_y = ds.training_store(train_ids)
        train_store = _lift(manifest, train_store)
        test_stores = [_lift(manifest, ds.features(int(i))) for i in test_ids]
    for label, sigma, inv_sq in manifest.sigma_grid():
        with _stage("learn", timings):
            model = _learn(manifest, train_store, train_y, sigma)
            out.models[f"model_sigma_inv_sq_{label}"] = model
        collected = {"pair_disagreement": [], "cayley": [], "hamming": []}
        for i, store in zip(test_ids.tolist(), test_stores):
            name = f"sentence={i}/sigma_inv_sq={label}"
            n = store.shape[0]
            with _stage("infer", timings):
                report = solve(cost_matrix(model, store), ConstraintClass.LINEAR_ORDER, manifest.solver,
                               seed=derive_seed(manifest.seed, SEED_SOLVER, i))
                _checked(report.relation)
                _record(out, name, report)
            with _stage("evaluate", timings):
                found = PermutationView.from_relation(report.relation)
                truth = PermutationView(np.arange(n))
                rows = {
                    "pair_disagreement": (pair_disagreement(found, truth),) * 2,
                    "cayley": (cayley_distance(found, truth), cayley_distance(found, truth, normalized=True)),
                    "hamming": (hamming_distance(found, truth), hamming_distance(found, truth, normalized=True)),
                }
                for metric, (raw, norm) in rows.items():
                    collected[metric].append(norm)
                    out.metrics.append(MetricRow(name, n, metric, raw, norm))
        lengths = [s.shape[0] for s in test_stores]
        for metric, vals in collected.items():
            base = float(np.mean([random_order_baseline(metric, n) for n in lengths]))
            _plot_rows(out, label, inv_sq, metric, vals, base)


def _semisup(manifest, out: _Outputs, timings: dict) -> None:
    data = manifest.data
    size = int(data.get("subset_size", 8))
    fraction = float(data.get("pinned_fraction", 0.3))
    with _stage("ingest", timings):
        X, labels = _elements(manifest, "test")
    for label, sigma, inv_sq in manifest.sigma_grid():
        collected = {"rand_error": [], "rounds": []}
        for i in range(manifest.instances):
            name = f"subset={i}/sigma_inv_sq={label}"
            with _stage("lift", timings):
                idx = _stratified_subset(labels, size, derive_seed(manifest.seed, SEED_INSTANCE, i))
                store = _lift(manifest, all_pairs_store(X[idx]))
                evidence = _pinned_pairs(labels[idx], fraction, derive_seed(manifest.seed, SEED_EVIDENCE, i))
            with _stage("infer", timings):
                model, report = solve_alternating(store, sigma, manifest.model_kind, ConstraintClass.EQUIVALENCE,
                                                  evidence, solver=manifest.solver,
                                                  learn_kwargs=_learn_kwargs(manifest) or None)
                _checked(report.relation)
                _record(out, name, report)
                out.models[f"model_subset_{i}_sigma_inv_sq_{label}"] = model
            with _stage("evaluate", timings):
                err = rand_error(PartitionView(labels_from_equivalence(report.relation)), PartitionView(labels[idx]))
                rounds = int(report.info["rounds"])
                collected["rand_error"].append(err)
                collected["rounds"].append(rounds)
                out.metrics.append(MetricRow(name, size, "rand_error", err, err))
                out.metrics.append(MetricRow(name, size, "rounds", rounds, rounds))
        for metric, vals in collected.items():
            _plot_rows(out, label, inv_sq, metric, vals)


def _pinned_pairs(labels: np.ndarray, fraction: float, seed: int) -> Evidence:
    """Pin a random ``fraction`` of unordered pairs (both orientations) to the truth,
    always including at least one related and one unrelated pair."""
    rng = np.random.default_rng(seed)
    a, b = np.triu_indices(labels.size, 1)
    same = labels[a] == labels[b]
    k = max(2, int(round(fraction * a.size)))
    chosen = set(rng.choice(a.size, size=min(k, a.size), replace=False).tolist())
    for want in (True, False):
        if not any(same[j] == want for j in chosen) and np.any(same == want):
            chosen.add(int(rng.choice(np.flatnonzero(same == want))))
    pinned = {}
    for j in sorted(chosen):
        v = int(same[j])
        pinned[(int(a[j]), int(b[j]))] = v
        pinned[(int(b[j]), int(a[j]))] = v
    return Evidence(pinned)


_RUNNERS = {"classify": _classify, "cluster": _cluster, "order": _order, "semisup": _semisup}

METRICS_FILE = "metrics.csv"
PLOT_FILE = "plot_data.csv"
REPORTS_FILE = "solve_reports.jsonl"
ECHO_FILE = "manifest_echo.json"


def run_experiment(manifest: ExperimentManifest) -> Path:
    """Run ``manifest`` and write its outputs; returns the output directory.

    ``metrics.csv`` and ``plot_data.csv`` carry no timing and are
    byte-identical across runs of the same manifest.  Wall times live in
    ``solve_reports.jsonl`` and ``manifest_echo.json``.
    """
    clock = Stopwatch()
    timings: dict[str, float] = {}
    out = _Outputs()
    _RUNNERS[manifest.task](manifest, out, timings)
    with _stage("write", timings):
        target = manifest.path(manifest.output_dir)
        target.mkdir(parents=True, exist_ok=True)
        write_csv(target / METRICS_FILE, MetricRow.HEADER, [r.as_tuple() for r in out.metrics])
        write_csv(target / PLOT_FILE, ("sigma_inv_sq", "sigma_inv_sq_value", "metric", "mean", "std", "baseline"),
                  out.plot)
        with open(target / REPORTS_FILE, "w", encoding="utf-8") as fh:
            for rec in out.reports:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        for name, model in out.models.items():
            save_model(target / f"{name}.json", model)
        echo = {
            "manifest": manifest.to_dict(),
            "resolved": {
                "sigma_grid": [{"label": l, "sigma": s, "sigma_inv_sq": v} for l, s, v in manifest.sigma_grid()],
                "seeds": {
                    "train": derive_seed(manifest.seed, SEED_TRAIN),
                    "instances": [derive_seed(manifest.seed, SEED_INSTANCE, i) for i in range(manifest.instances)],
                    "split": [derive_seed(manifest.seed, SEED_SPLIT, s) for s in range(5)],
                },
                "relkit_version": relkit.__version__,
                "numpy_version": np.__version__,
                "python_version": platform.python_version(),
            },
            "wall_time": {k: round(v, 3) for k, v in timings.items()} | {"total": round(clock.elapsed, 3)},
        }
        (target / ECHO_FILE).write_text(json.dumps(echo, indent=1) + "\n", encoding="utf-8")
    return target
