"""Experiment harness: identification runs, rolling-vote accuracy, user-count
scaling, cross-game transfer, game recognition, and report emission.

All entry points are deterministic for a fixed spec, dataset, and seed; the
JSON writer sorts keys so identical runs produce byte-identical reports.
"""
from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .classifiers import MODEL_KINDS, make_model
from .core import (
    DEFAULT_TEST_S,
    DEFAULT_TRAIN_S,
    DEFAULT_WINDOW_S,
    Dataset,
    SplitError,
    TraceRecord,
)
from .features import (
    DEFAULT_BIN_S,
    FEATURE_SET_NAMES,
    FeatureVector,
    MinMaxScaler,
    build_features,
)
from .ingest import atomic_write_text

#: Feature-set column order used by the summary accuracy table.
TABLE_FEATURE_ORDER = (
    "movement",
    "traffic",
    "movement_norm_height",
    "combined",
    "combined_norm_height",
)

DEFAULT_SUBSET_SIZES = (5, 10, 15, 20, 25, 30)


# ---- metrics ----------------------------------------------------------------

def _label_pair(y_true, y_pred) -> tuple[np.ndarray, np.ndarray]:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.ndim != 1 or y_true.shape != y_pred.shape:
        raise ValueError(
            f"label arrays must be 1-D and equal length, got {y_true.shape} and {y_pred.shape}"
        )
    if y_true.size == 0:
        raise ValueError("label arrays are empty")
    return y_true, y_pred


def accuracy(y_true, y_pred) -> float:
    """Fraction of exact matches."""
    y_true, y_pred = _label_pair(y_true, y_pred)
    return float(np.mean(y_true == y_pred))


def macro_f1(y_true, y_pred, labels=None) -> float:
    """Unweighted mean of per-label F1; empty precision/recall count as 0."""
    y_true, y_pred = _label_pair(y_true, y_pred)
    if labels is None:
        labels = np.unique(y_true)
    else:
        labels = np.asarray(labels)
        missing = set(np.unique(y_true)) - set(labels)
        if missing:
            raise ValueError(f"labels must cover all true values; missing {sorted(missing)}")
    scores = []
    for lab in labels:
        tp = float(np.sum((y_true == lab) & (y_pred == lab)))
        n_pred = float(np.sum(y_pred == lab))
        n_true = float(np.sum(y_true == lab))
        precision = tp / n_pred if n_pred else 0.0
        recall = tp / n_true if n_true else 0.0
        denom = precision + recall
        scores.append(2.0 * precision * recall / denom if denom else 0.0)
    return float(np.mean(scores))


def confusion_matrix(y_true, y_pred, labels) -> np.ndarray:
    """(k, k) count matrix, rows = true label, columns = predicted label."""
    y_true, y_pred = _label_pair(y_true, y_pred)
    labels = np.asarray(labels)
    index = {lab: i for i, lab in enumerate(labels.tolist())}
    out = np.zeros((labels.shape[0], labels.shape[0]), dtype=np.int64)
    for t, p in zip(y_true.tolist(), y_pred.tolist()):
        if t not in index or p not in index:
            raise ValueError(f"label pair ({t!r}, {p!r}) outside the label set")
        out[index[t], index[p]] += 1
    return out


def per_label_metrics(confusion: np.ndarray, labels) -> dict[str, dict[str, float]]:
    out = {}
    for i, lab in enumerate(np.asarray(labels).tolist()):
        tp = float(confusion[i, i])
        n_pred = float(confusion[:, i].sum())
        n_true = float(confusion[i, :].sum())
        precision = tp / n_pred if n_pred else 0.0
        recall = tp / n_true if n_true else 0.0
        denom = precision + recall
        out[str(lab)] = {
            "precision": precision,
            "recall": recall,
            "f1": 2.0 * precision * recall / denom if denom else 0.0,
        }
    return out


# ---- experiment specification ------------------------------------------------

@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment cell: which game, which feature set, which model."""

    game_id: str
    feature_set: str = "combined"
    model_kind: str = "extra_trees"
    seed: int = 0
    train_s: float = DEFAULT_TRAIN_S
    test_s: float = DEFAULT_TEST_S
    window_s: float = DEFAULT_WINDOW_S
    bin_s: float = DEFAULT_BIN_S
    vote_k: int = 1
    model_params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.feature_set not in FEATURE_SET_NAMES:
            known = ", ".join(sorted(FEATURE_SET_NAMES))
            raise ValueError(f"unknown feature set {self.feature_set!r}; expected one of: {known}")
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(
                f"unknown model kind {self.model_kind!r}; expected one of {MODEL_KINDS}"
            )
        if self.vote_k < 1 or self.vote_k % 2 == 0:
            raise ValueError(f"vote_k must be odd and >= 1, got {self.vote_k}")


@dataclass(frozen=True)
class PredictionStream:
    """Temporally ordered test predictions of a single trace."""

    true_label: str
    preds: np.ndarray  # (n,) predicted labels
    probas: np.ndarray  # (n, k) rows follow ``labels``
    labels: np.ndarray  # (k,) sorted label order


@dataclass
class EvaluationReport:
    spec: ExperimentSpec
    labels: tuple[str, ...]
    accuracy: float
    macro_f1: float
    vote_accuracy: float
    confusion: np.ndarray
    per_label: dict[str, dict[str, float]]
    train_counts: dict[str, int]
    test_counts: dict[str, int]
    streams: list[PredictionStream]


# ---- core evaluation ---------------------------------------------------------

def _split_vectors(
    vectors: list[FeatureVector], record: TraceRecord, spec: ExperimentSpec
) -> tuple[list[FeatureVector], list[FeatureVector]]:
    for name, span in (("train_s", spec.train_s), ("test_s", spec.test_s)):
        if span <= 0 or (span / spec.window_s) != int(span / spec.window_s):
            raise ValueError(
                f"{name}={span} is not a positive multiple of window_s={spec.window_s}"
            )
    needed = spec.train_s + spec.test_s
    tr = record.trace
    if needed > tr.duration_s:
        raise SplitError(
            f"trace {tr.user_id}/{tr.game_id} lasts {tr.duration_s:.3f} s; "
            f"train+test needs {needed:.3f} s ({needed - tr.duration_s:.3f} s short)"
        )
    train = [v for v in vectors if v.t_start < spec.train_s]
    test = [v for v in vectors if spec.train_s <= v.t_start < needed]
    return train, test


def _trace_split(spec: ExperimentSpec, record: TraceRecord):
    vectors = build_features(record.trace, spec.feature_set, spec.window_s, spec.bin_s)
    return _split_vectors(vectors, record, spec)


def _evaluate(spec: ExperimentSpec, entries) -> EvaluationReport:
    """Fit and score one cell. ``entries`` is a list of (label, train feature
    vectors, test feature vectors), one per trace; the label is a user id for
    identification and a game id for game recognition."""
    distinct = sorted({label for label, _, _ in entries})
    if len(distinct) < 2:
        raise ValueError(f"evaluation needs at least 2 distinct labels, got {len(distinct)}")
    train_rows, train_labels = [], []
    test_rows, test_labels = [], []
    bounds = []
    train_counts: dict[str, int] = {}
    test_counts: dict[str, int] = {}
    for label, train_vecs, test_vecs in entries:
        train_counts[label] = train_counts.get(label, 0) + len(train_vecs)
        test_counts[label] = test_counts.get(label, 0) + len(test_vecs)
        train_rows.extend(v.values for v in train_vecs)
        train_labels.extend([label] * len(train_vecs))
        start = len(test_rows)
        test_rows.extend(v.values for v in test_vecs)
        test_labels.extend([label] * len(test_vecs))
        bounds.append((label, start, len(test_rows)))
    if not train_rows:
        raise ValueError("no training windows survived windowing")
    if not test_rows:
        raise ValueError("no test windows survived windowing")

    scaler = MinMaxScaler().fit(np.vstack(train_rows))
    X_train = scaler.transform(np.vstack(train_rows))
    X_test = scaler.transform(np.vstack(test_rows))
    y_train = np.array(train_labels)
    y_test = np.array(test_labels)

    model = make_model(spec.model_kind, seed=spec.seed, **spec.model_params)
    model.fit(X_train, y_train)
    probas = model.predict_proba(X_test)
    preds = model.labels_[np.argmax(probas, axis=1)]

    streams = [
        PredictionStream(
            true_label=label,
            preds=preds[start:stop],
            probas=probas[start:stop],
            labels=model.labels_,
        )
        for label, start, stop in bounds
        if stop > start
    ]
    labels = tuple(str(lab) for lab in model.labels_.tolist())
    conf = confusion_matrix(y_test, preds, model.labels_)
    return EvaluationReport(
        spec=spec,
        labels=labels,
        accuracy=accuracy(y_test, preds),
        macro_f1=macro_f1(y_test, preds, model.labels_),
        vote_accuracy=majority_vote_eval(streams, spec.vote_k),
        confusion=conf,
        per_label=per_label_metrics(conf, model.labels_),
        train_counts=train_counts,
        test_counts=test_counts,
        streams=streams,
    )


def run_identification(spec: ExperimentSpec, dataset: Dataset) -> EvaluationReport:
    """Per-window user identification for one (game, feature set, model) cell:
    chronological train/test split per trace, scaler fitted on train rows."""
    records = sorted(dataset.for_game(spec.game_id), key=lambda r: r.user_id)
    if len(records) < 2:
        raise ValueError(f"identification needs at least 2 users, got {len(records)}")
    entries = [(r.user_id, *_trace_split(spec, r)) for r in records]
    return _evaluate(spec, entries)


def cell_matrices(
    spec: ExperimentSpec, dataset: Dataset
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Scaled (X_train, y_train, X_test, y_test) for one identification cell,
    split and scaled exactly as run_identification does it."""
    records = sorted(dataset.for_game(spec.game_id), key=lambda r: r.user_id)
    if len(records) < 2:
        raise ValueError(f"identification needs at least 2 users, got {len(records)}")
    train_rows, train_labels, test_rows, test_labels = [], [], [], []
    for record in records:
        train_vecs, test_vecs = _trace_split(spec, record)
        train_rows.extend(v.values for v in train_vecs)
        train_labels.extend([record.user_id] * len(train_vecs))
        test_rows.extend(v.values for v in test_vecs)
        test_labels.extend([record.user_id] * len(test_vecs))
    if not train_rows or not test_rows:
        raise ValueError("no usable windows on one side of the split")
    scaler = MinMaxScaler().fit(np.vstack(train_rows))
    return (
        scaler.transform(np.vstack(train_rows)),
        np.array(train_labels),
        scaler.transform(np.vstack(test_rows)),
        np.array(test_labels),
    )


def majority_vote_eval(streams: list[PredictionStream], k: int) -> float:
    """Accuracy of rolling majority votes over k consecutive test windows.

    Every stride-1 position of every stream casts one vote: the plurality
    label of the k window predictions, ties resolved by the largest summed
    predicted probability over the position, then by lowest label index.
    k=1 reproduces plain per-window accuracy.
    """
    if k < 1 or k % 2 == 0:
        raise ValueError(f"vote window k must be odd and >= 1, got {k}")
    if not streams:
        raise ValueError("no prediction streams to vote over")
    correct = 0
    total = 0
    for stream in streams:
        n = stream.preds.shape[0]
        if k > n:
            raise ValueError(
                f"vote window k={k} exceeds the {n} test windows of the "
                f"{stream.true_label!r} stream"
            )
        idx = np.searchsorted(stream.labels, stream.preds)
        n_labels = stream.labels.shape[0]
        for start in range(n - k + 1):
            counts = np.bincount(idx[start : start + k], minlength=n_labels)
            top = counts.max()
            tied = counts == top
            if int(tied.sum()) == 1:
                winner = int(np.argmax(counts))
            else:
                sums = stream.probas[start : start + k].sum(axis=0)
                winner = int(np.argmax(np.where(tied, sums, -np.inf)))
            correct += bool(stream.labels[winner] == stream.true_label)
            total += 1
    return correct / total


# ---- scaling / transfer experiments -------------------------------------------

@dataclass
class SubsetResult:
    unit: int
    sizes: tuple[int, ...]
    group_users: dict[int, list[tuple[str, ...]]]
    group_accuracy: dict[int, list[float]]
    mean_accuracy: dict[int, float]


def user_subset_experiment(
    spec: ExperimentSpec,
    dataset: Dataset,
    sizes=DEFAULT_SUBSET_SIZES,
    unit: int = 5,
) -> SubsetResult:
    """Mean identification accuracy as the user count grows.

    Users sort into fixed units of ``unit``; size m*unit evaluates the
    cyclically contiguous unit groups (g, g+1, ..., g+m-1 mod n_units) for
    every starting unit g, so each size reports n_units groups. Duplicate
    user sets (the full-size group) are trained once and reported per group.
    """
    records = sorted(dataset.for_game(spec.game_id), key=lambda r: r.user_id)
    users = [r.user_id for r in records]
    if unit < 1 or len(users) % unit != 0:
        raise ValueError(f"user count {len(users)} is not divisible by unit {unit}")
    n_units = len(users) // unit
    units = [tuple(users[i * unit : (i + 1) * unit]) for i in range(n_units)]
    split_cache = {r.user_id: _trace_split(spec, r) for r in records}

    group_users: dict[int, list[tuple[str, ...]]] = {}
    group_accuracy: dict[int, list[float]] = {}
    mean_accuracy: dict[int, float] = {}
    eval_cache: dict[tuple[str, ...], float] = {}
    for size in sizes:
        m, rem = divmod(size, unit)
        if rem or m < 1 or m > n_units:
            raise ValueError(
                f"size {size} is not a multiple of unit {unit} within {len(users)} users"
            )
        group_users[size] = []
        group_accuracy[size] = []
        for g in range(n_units):
            members = tuple(
                sorted(u for j in range(m) for u in units[(g + j) % n_units])
            )
            if members not in eval_cache:
                entries = [(u, *split_cache[u]) for u in members]
                eval_cache[members] = _evaluate(spec, entries).accuracy
            group_users[size].append(members)
            group_accuracy[size].append(eval_cache[members])
        mean_accuracy[size] = float(np.mean(group_accuracy[size]))
    return SubsetResult(
        unit=unit,
        sizes=tuple(sizes),
        group_users=group_users,
        group_accuracy=group_accuracy,
        mean_accuracy=mean_accuracy,
    )


def cross_game_eval(
    spec: ExperimentSpec, dataset: Dataset, train_game: str, test_game: str
) -> float:
    """Accuracy when fitting on one game and testing on another.

    Different games use every window of both traces (no chronological split;
    the games themselves separate train from test). The same game on both
    sides falls back to the standard split so no window is tested on a model
    that saw it.
    """
    if train_game == test_game:
        return run_identification(
            dataclasses.replace(spec, game_id=train_game), dataset
        ).accuracy
    train_recs = sorted(dataset.for_game(train_game), key=lambda r: r.user_id)
    test_recs = sorted(dataset.for_game(test_game), key=lambda r: r.user_id)
    train_users = [r.user_id for r in train_recs]
    if train_users != [r.user_id for r in test_recs]:
        raise ValueError(
            f"games {train_game!r} and {test_game!r} cover different user sets"
        )
    if len(train_users) < 2:
        raise ValueError(f"cross-game evaluation needs at least 2 users, got {len(train_users)}")

    def all_rows(recs):
        rows, labels = [], []
        for rec in recs:
            vectors = build_features(rec.trace, spec.feature_set, spec.window_s, spec.bin_s)
            rows.extend(v.values for v in vectors)
            labels.extend([rec.user_id] * len(vectors))
        return np.vstack(rows), np.array(labels)

    X_train, y_train = all_rows(train_recs)
    X_test, y_test = all_rows(test_recs)
    scaler = MinMaxScaler().fit(X_train)
    model = make_model(spec.model_kind, seed=spec.seed, **spec.model_params)
    model.fit(scaler.transform(X_train), y_train)
    return accuracy(y_test, model.predict(scaler.transform(X_test)))


def game_recognition_eval(spec: ExperimentSpec, dataset: Dataset) -> float:
    """Same pipeline and split, but the label is the game id."""
    games = dataset.game_ids()
    if len(games) < 2:
        raise ValueError(f"game recognition needs at least 2 games, got {len(games)}")
    entries = []
    for record in sorted(dataset.records, key=lambda r: (r.game_id, r.user_id)):
        entries.append((record.game_id, *_trace_split(spec, record)))
    return _evaluate(spec, entries).accuracy


# ---- experiment matrices -------------------------------------------------------

def experiment_cells(
    games, feature_sets, model_kinds, seed: int = 0, **spec_kwargs
) -> list[ExperimentSpec]:
    """Cartesian product of games, feature sets, and model kinds."""
    return [
        ExperimentSpec(
            game_id=g, feature_set=fs, model_kind=mk, seed=seed, **spec_kwargs
        )
        for g in games
        for fs in feature_sets
        for mk in model_kinds
    ]


_POOL_DATASET: Dataset | None = None


def _pool_init(dataset: Dataset) -> None:
    global _POOL_DATASET
    _POOL_DATASET = dataset


def _pool_cell(spec: ExperimentSpec) -> EvaluationReport:
    return run_identification(spec, _POOL_DATASET)


def run_matrix(
    specs: list[ExperimentSpec], dataset: Dataset, jobs: int = 1
) -> list[EvaluationReport]:
    """Evaluate every cell, in spec order; cells are independent, so jobs > 1
    fans them out across processes (results still assemble in spec order)."""
    if jobs < 1:
        raise ValueError(f"jobs must be >= 1, got {jobs}")
    if jobs == 1 or len(specs) <= 1:
        return [run_identification(spec, dataset) for spec in specs]
    with ProcessPoolExecutor(
        max_workers=jobs, initializer=_pool_init, initargs=(dataset,)
    ) as pool:
        return list(pool.map(_pool_cell, specs))


# ---- report emission -----------------------------------------------------------

def report_to_dict(report: EvaluationReport) -> dict:
    spec = dataclasses.asdict(report.spec)
    return {
        "spec": spec,
        "labels": list(report.labels),
        "accuracy": report.accuracy,
        "macro_f1": report.macro_f1,
        "vote_k": report.spec.vote_k,
        "vote_accuracy": report.vote_accuracy,
        "confusion": report.confusion.tolist(),
        "per_label": report.per_label,
        "train_windows": report.train_counts,
        "test_windows": report.test_counts,
        "n_train_windows": int(sum(report.train_counts.values())),
        "n_test_windows": int(sum(report.test_counts.values())),
        "streams": [
            {
                "true_label": s.true_label,
                "preds": s.preds.tolist(),
                "probas": s.probas.tolist(),
            }
            for s in report.streams
        ],
    }


def write_json(path: str, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_confusion_csv(path: str, report: EvaluationReport) -> None:
    lines = ["true_label," + ",".join(report.labels)]
    for lab, row in zip(report.labels, report.confusion):
        lines.append(lab + "," + ",".join(str(int(v)) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_table_csv(path: str, reports: list[EvaluationReport]) -> None:
    """Wide accuracy grid: one row per (game, model), one column per feature set."""
    cells: dict[tuple[str, str], dict[str, float]] = {}
    for rep in reports:
        key = (rep.spec.game_id, rep.spec.model_kind)
        cells.setdefault(key, {})[rep.spec.feature_set] = rep.accuracy
    lines = ["game,model," + ",".join(TABLE_FEATURE_ORDER)]
    for (game, model), row in sorted(cells.items()):
        vals = [repr(row[fs]) if fs in row else "" for fs in TABLE_FEATURE_ORDER]
        lines.append(f"{game},{model}," + ",".join(vals))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_curve_csv(path: str, header: tuple[str, str], points) -> None:
    """Two-column series (voting curves, subset-scaling curves)."""
    lines = [",".join(header)]
    lines.extend(f"{x},{repr(float(y))}" for x, y in points)
    atomic_write_text(path, "\n".join(lines) + "\n")
