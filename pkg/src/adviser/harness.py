"""Experiment protocols and result tables.

Accuracy is the percentage of images whose chosen-keypoint error is below
30 degrees; the second statistic is the median chosen error in degrees.
Every table is checked against the oracle sandwich before it is returned.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .advisee import AdviseeRecord, SyntheticAdviseeParams, ingest_records, synthetic_records
from .labels import LabelConfig
from .model import TrainConfig, fit, scores
from .selection import (
    Policy,
    PolicyKind,
    expected_accuracy,
    expected_error,
    frequency_prior_ranking,
    performance_prior_ranking,
    select_keypoint,
)
from .taxonomy import CLASSES, ObjectClass

log = logging.getLogger(__name__)

ACC_THRESHOLD_DEG = 30.0
SANDWICH_TOL = 1e-9

LOWER = "Lower-bound"
EXPECTED = "Expected (advisee)"
FREQUENCY = "Frequency Prior"
PERFORMANCE = "Performance Prior"
ADVISER = "Adviser"
UPPER = "Upper-bound"

# Published per-class values (bus, car, motorbike, mean) on the full Pascal 3D+
# vehicle test set: (accuracy %, median error in degrees).
REFERENCE_TABLE1 = {
    LOWER: ((88.61, 82.37, 79.65, 83.54), (3.81, 6.63, 13.93, 8.12)),
    EXPECTED: ((90.04, 85.59, 80.83, 85.49), (3.54, 6.17, 13.41, 7.71)),
    FREQUENCY: ((93.59, 87.63, 82.01, 87.74), (3.51, 5.78, 13.27, 7.52)),
    PERFORMANCE: ((93.95, 87.96, 83.78, 88.56), (3.54, 5.77, 12.93, 7.41)),
    ADVISER: ((93.95, 89.25, 84.37, 89.19), (3.48, 5.75, 12.89, 7.37)),
    UPPER: ((95.02, 92.47, 87.32, 91.60), (3.00, 5.32, 11.76, 6.69)),
}

# Image-only estimators, quoted for context; never evaluated here.
EXTERNAL_ROWS = {
    "Render For CNN": ((89.32, 78.39, 76.99, 81.57), (5.21, 8.29, 15.00, 9.50)),
    "Render For CNN-FT": ((88.26, 80.00, 83.48, 83.91), (3.61, 6.83, 12.22, 7.55)),
}


class SandwichViolation(AssertionError):
    pass


def accuracy(errors_deg, threshold_deg: float = ACC_THRESHOLD_DEG) -> float:
    errors = np.asarray(errors_deg, dtype=float)
    return 100.0 * float(np.mean(errors < threshold_deg))


def median_error(errors_deg) -> float:
    return float(np.median(np.asarray(errors_deg, dtype=float)))


@dataclass(frozen=True)
class ClassResult:
    accuracy: float
    median: float
    count: int


def evaluate_policy(policy: Policy, test_records, scores_by_record=None) -> dict[ObjectClass, ClassResult]:
    """Per-class accuracy and median error of ``policy`` on ``test_records``.

    Each record contributes exactly one value: the error of the chosen
    keypoint, or for the expected policy the record's mean error and mean
    below-threshold indicator. Classes with no records are absent.
    """
    chosen = {cls: [] for cls in CLASSES}
    hits = {cls: [] for cls in CLASSES}
    for i, rec in enumerate(test_records):
        if policy.kind is PolicyKind.EXPECTED:
            chosen[rec.cls].append(expected_error(rec))
            hits[rec.cls].append(expected_accuracy(rec, ACC_THRESHOLD_DEG))
        else:
            s = None if scores_by_record is None else scores_by_record[i]
            err = rec.errors[select_keypoint(policy, rec, s)]
            chosen[rec.cls].append(err)
            hits[rec.cls].append(float(err < ACC_THRESHOLD_DEG))
    return {
        cls: ClassResult(100.0 * float(np.mean(hits[cls])), median_error(chosen[cls]), len(chosen[cls]))
        for cls in CLASSES
        if chosen[cls]
    }


@dataclass
class Row:
    """One policy's cells. ``acc``/``median`` map class -> value; absent classes are missing keys."""

    name: str
    acc: dict
    median: dict
    acc_std: dict | None = None
    median_std: dict | None = None
    mean_acc_std: float | None = None
    mean_median_std: float | None = None

    @property
    def mean_acc(self) -> float:
        return float(np.mean(list(self.acc.values()))) if self.acc else math.nan

    @property
    def mean_median(self) -> float:
        return float(np.mean(list(self.median.values()))) if self.median else math.nan

    @classmethod
    def from_results(cls, name, results: dict[ObjectClass, ClassResult]) -> "Row":
        return cls(name, {c: r.accuracy for c, r in results.items()}, {c: r.median for c, r in results.items()})


@dataclass
class ResultsTable:
    title: str
    rows: list[Row]
    external: list[Row] = field(default_factory=list)

    def row(self, name: str) -> Row:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    @property
    def aggregated(self) -> bool:
        return any(r.acc_std is not None for r in self.rows)

    def check_sandwich(self, tol: float = SANDWICH_TOL) -> None:
        """Raise unless the upper oracle dominates every row and every row dominates the lower oracle."""
        upper, lower = self.row(UPPER), self.row(LOWER)
        for r in self.rows:
            for cls in r.acc:
                if not lower.acc[cls] - tol <= r.acc[cls] <= upper.acc[cls] + tol:
                    raise SandwichViolation(f"{self.title}: accuracy of {r.name} on {cls.value} escapes the oracle bounds")
                if not upper.median[cls] - tol <= r.median[cls] <= lower.median[cls] + tol:
                    raise SandwichViolation(f"{self.title}: median of {r.name} on {cls.value} escapes the oracle bounds")
            if not lower.mean_acc - tol <= r.mean_acc <= upper.mean_acc + tol:
                raise SandwichViolation(f"{self.title}: mean accuracy of {r.name} escapes the oracle bounds")
            if not upper.mean_median - tol <= r.mean_median <= lower.mean_median + tol:
                raise SandwichViolation(f"{self.title}: mean median of {r.name} escapes the oracle bounds")

    def _cell(self, value, std) -> str:
        if value is None:
            return "—"
        if std is None:
            return f"{value:.2f}"
        return f"{value:.2f} ± {std:.2f}"

    def _cells(self, row: Row):
        acc, med = [], []
        for cls in CLASSES:
            acc.append(self._cell(row.acc.get(cls), None if row.acc_std is None else row.acc_std.get(cls)))
            med.append(self._cell(row.median.get(cls), None if row.median_std is None else row.median_std.get(cls)))
        acc.append(self._cell(row.mean_acc if row.acc else None, row.mean_acc_std))
        med.append(self._cell(row.mean_median if row.median else None, row.mean_median_std))
        return acc, med

    def to_text(self) -> str:
        heads = [c.value for c in CLASSES] + ["mean"]
        body = [(r.name, *self._cells(r)) for r in self.rows]
        ext = [(r.name + " [external]", *self._cells(r)) for r in self.external]
        everything = body + ext
        name_w = max(len("policy"), *(len(b[0]) for b in everything))
        col_w = max(9, *(len(c) for b in everything for part in b[1:] for c in part))
        group_w = len(heads) * (col_w + 1) - 1

        def line(name, acc, med):
            return f"{name:<{name_w}} | " + " ".join(f"{c:>{col_w}}" for c in acc) + " | " + " ".join(
                f"{c:>{col_w}}" for c in med
            )

        out = [self.title, ""]
        out.append(f"{'':<{name_w}} | {'Accuracy pi/6 (%)':^{group_w}} | {'Median geodesic error (deg)':^{group_w}}")
        out.append(line("policy", heads, heads))
        sep = "-" * len(out[-1])
        out.append(sep)
        for b in ext:
            out.append(line(*b))
        if ext:
            out.append(sep)
        for b in body:
            out.append(line(*b))
        return "\n".join(out) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = ["policy", "source"]
        for stat in ("acc", "median"):
            for c in [cls.value for cls in CLASSES] + ["mean"]:
                header.append(f"{stat}_{c}")
                if self.aggregated:
                    header.append(f"{stat}_{c}_std")
        writer.writerow(header)

        def fmt(v):
            return "" if v is None else repr(float(v))

        for source, rows in (("evaluated", self.rows), ("external", self.external)):
            for r in rows:
                cells = [r.name, source]
                for vals, stds, mean, mean_std in (
                    (r.acc, r.acc_std, r.mean_acc, r.mean_acc_std),
                    (r.median, r.median_std, r.mean_median, r.mean_median_std),
                ):
                    for cls in CLASSES:
                        cells.append(fmt(vals.get(cls)))
                        if self.aggregated:
                            cells.append(fmt(None if stds is None else stds.get(cls)))
                    cells.append(fmt(mean if vals else None))
                    if self.aggregated:
                        cells.append(fmt(mean_std))
                writer.writerow(cells)
        return buf.getvalue()

    def write(self, out_dir, stem: str) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.txt").write_text(self.to_text())
        (out / f"{stem}.csv").write_text(self.to_csv())


def external_rows() -> list[Row]:
    rows = []
    for name, (acc, med) in EXTERNAL_ROWS.items():
        rows.append(Row(name, dict(zip(CLASSES, acc)), dict(zip(CLASSES, med))))
    return rows


def compare_to_reference(table: ResultsTable, reference=REFERENCE_TABLE1, tol: float = 0.01) -> list[str]:
    """Cells of ``table`` that differ from ``reference`` by more than ``tol`` after rounding to 2 decimals."""
    problems = []
    for name, (acc, med) in reference.items():
        try:
            row = table.row(name)
        except KeyError:
            continue
        got_acc = [row.acc.get(c) for c in CLASSES] + [row.mean_acc]
        got_med = [row.median.get(c) for c in CLASSES] + [row.mean_median]
        for label, got, want in (("acc", got_acc, acc), ("median", got_med, med)):
            for col, g, w in zip([c.value for c in CLASSES] + ["mean"], got, want):
                if g is None or abs(round(g, 2) - w) > tol + 1e-9:
                    problems.append(f"{name} {label} {col}: got {g}, expected {w}")
    return problems


# --- configuration ---


def derive_seed(seed: int, *tags) -> int:
    text = ":".join(str(t) for t in (seed, *tags))
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "little")


EXPERIMENT_MODES = ("full", "small", "compare", "sweep", "generate", "ingest", "train", "evaluate")


@dataclass
class ExperimentConfig:
    mode: str = "full"
    seed: int = 0
    out: str = "results"
    records: str | None = None
    train_records: str | None = None
    test_records: str | None = None
    checkpoint: str | None = None
    n_train: int = 2000
    n_test: int = 800
    n_records: int = 1000
    split_fraction: float = 0.7
    repetitions: int = 6
    temperatures: tuple[float, ...] = (0.1, 1.0, 10.0)
    label: LabelConfig = field(default_factory=LabelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synthetic: SyntheticAdviseeParams = field(default_factory=SyntheticAdviseeParams)

    def __post_init__(self):
        if self.mode not in EXPERIMENT_MODES:
            raise ValueError(f"mode must be one of {EXPERIMENT_MODES}")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must lie in (0, 1)")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if any(t <= 0 for t in self.temperatures):
            raise ValueError("temperatures must be positive")


_NESTED = {"label": LabelConfig, "train": TrainConfig, "synthetic": SyntheticAdviseeParams}
# keys owned by the experiment, not settable on nested configs
_RESERVED = {"seed", "mode"}


def _parse_value(text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        return text.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        items = [t for t in (s.strip() for s in text.split(",")) if t]
        kind = type(default[0]) if default else int
        return tuple(kind(t) for t in items)
    if text.lower() in ("", "none"):
        return None
    return text


def _field_defaults(cls) -> dict:
    inst = cls()
    return {f.name: getattr(inst, f.name) for f in fields(cls)}


def config_from_mapping(values: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply flat ``key -> text`` overrides to ``base``."""
    base = base or ExperimentConfig()
    top = {}
    nested = {name: {} for name in _NESTED}
    top_defaults = {f.name: getattr(base, f.name) for f in fields(ExperimentConfig) if f.name not in _NESTED}
    nested_defaults = {name: _field_defaults(cls) for name, cls in _NESTED.items()}
    for key, text in values.items():
        key = key.strip().replace("-", "_")
        if key == "difficulty_range":
            nested["synthetic"][key] = _parse_value(text, (0.0, 1.0))
            continue
        if key in top_defaults:
            default = top_defaults[key]
            if default is None:
                top[key] = _parse_value(text, "")
            else:
                top[key] = _parse_value(text, default)
            continue
        for name, defaults in nested_defaults.items():
            if key in defaults and key not in _RESERVED:
                nested[name][key] = _parse_value(text, defaults[key])
                break
        else:
            raise ValueError(f"unknown config key {key!r}")
    cfg = replace(base, **top)
    for name, overrides in nested.items():
        if overrides:
            cfg = replace(cfg, **{name: replace(getattr(cfg, name), **overrides)})
    return cfg


def read_config_file(path) -> dict:
    """Flat ``key = value`` text; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def config_to_text(cfg: ExperimentConfig) -> str:
    def fmt(v):
        if isinstance(v, tuple):
            return ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        if isinstance(v, float):
            return repr(v)
        return "none" if v is None else str(v)

    lines = []
    for f in fields(ExperimentConfig):
        value = getattr(cfg, f.name)
        if f.name in _NESTED:
            for sub in fields(value):
                if sub.name not in _RESERVED:
                    lines.append(f"{sub.name} = {fmt(getattr(value, sub.name))}")
        else:
            lines.append(f"{f.name} = {fmt(value)}")
    return "\n".join(lines) + "\n"


# --- data sources ---


def split_records(records, fraction: float, seed: int):
    """Seeded shuffle split into ``fraction`` train and the rest test."""
    order = np.random.default_rng(seed).permutation(len(records))
    cut = int(round(fraction * len(records)))
    return [records[i] for i in sorted(order[:cut])], [records[i] for i in sorted(order[cut:])]


def load_train_test(cfg: ExperimentConfig):
    if cfg.train_records and cfg.test_records:
        return ingest_records(cfg.train_records), ingest_records(cfg.test_records)
    if cfg.records:
        return split_records(ingest_records(cfg.records), cfg.split_fraction, derive_seed(cfg.seed, "split"))
    train = synthetic_records(cfg.synthetic, cfg.n_train, derive_seed(cfg.seed, "train-data"))
    test = synthetic_records(cfg.synthetic, cfg.n_test, derive_seed(cfg.seed, "test-data"))
    return train, test


def load_pool(cfg: ExperimentConfig):
    """Single record set for the repeated-split protocol."""
    if cfg.records:
        return ingest_records(cfg.records)
    if cfg.test_records:
        return ingest_records(cfg.test_records)
    return synthetic_records(cfg.synthetic, cfg.n_records, derive_seed(cfg.seed, "pool-data"))


# --- protocols ---


def baseline_rows(test_records) -> dict[str, Row]:
    """Non-learned rows; both priors are built from ``test_records`` themselves."""
    policies = {
        LOWER: Policy(PolicyKind.ORACLE_LOWER),
        EXPECTED: Policy(PolicyKind.EXPECTED),
        FREQUENCY: Policy(PolicyKind.FREQUENCY_PRIOR, frequency_prior_ranking(test_records)),
        PERFORMANCE: Policy(PolicyKind.PERFORMANCE_PRIOR, performance_prior_ranking(test_records)),
        UPPER: Policy(PolicyKind.ORACLE_UPPER),
    }
    return {name: Row.from_results(name, evaluate_policy(p, test_records)) for name, p in policies.items()}


def adviser_row(name, net, mode, test_records) -> Row:
    kind = PolicyKind.ADVISER_CLASSIFICATION if mode == "classification" else PolicyKind.ADVISER_REGRESSION
    s = scores(net, test_records, mode)
    return Row.from_results(name, evaluate_policy(Policy(kind), test_records, s))


def _table(title, base: dict[str, Row], learned: list[Row], external=()) -> ResultsTable:
    rows = [base[LOWER], base[EXPECTED], base[FREQUENCY], base[PERFORMANCE], *learned, base[UPPER]]
    table = ResultsTable(title, rows, list(external))
    table.check_sandwich()
    return table


def baseline_table(test_records, title="Non-learned policies") -> ResultsTable:
    return _table(title, baseline_rows(test_records), [])


def _train_config(cfg: ExperimentConfig, mode: str, *tags) -> TrainConfig:
    return replace(cfg.train, mode=mode, seed=derive_seed(cfg.seed, "adviser", *tags))


def full_table(train_records, test_records, cfg: ExperimentConfig, net=None, mode="classification"):
    """Train (unless ``net`` is given) and evaluate every policy; returns ``(table, net)``."""
    if net is None:
        net, _ = fit(train_records, _train_config(cfg, mode), cfg.label)
    rows = baseline_rows(test_records)
    table = _table("Full split", rows, [adviser_row(ADVISER, net, mode, test_records)], external_rows())
    return table, net


def run_full_experiment(cfg: ExperimentConfig) -> ResultsTable:
    train, test = load_train_test(cfg)
    log.info("full experiment: %d train / %d test records", len(train), len(test))
    table, _ = full_table(train, test, cfg)
    return table


def _mean_std(values) -> tuple[float, float]:
    # identical repetitions give exactly zero spread rather than rounding noise
    if all(v == values[0] for v in values):
        return float(values[0]), 0.0
    return float(np.mean(values)), float(np.std(values))


def aggregate(tables: list[ResultsTable], title: str) -> ResultsTable:
    """Cell-wise mean and population std across repetitions of identically shaped tables."""
    rows = []
    for i, first in enumerate(tables[0].rows):
        per_rep = [t.rows[i] for t in tables]
        acc, acc_std, med, med_std = {}, {}, {}, {}
        for cls in CLASSES:
            a = [r.acc[cls] for r in per_rep if cls in r.acc]
            m = [r.median[cls] for r in per_rep if cls in r.median]
            if a:
                acc[cls], acc_std[cls] = _mean_std(a)
                med[cls], med_std[cls] = _mean_std(m)
        rows.append(
            Row(
                first.name,
                acc,
                med,
                acc_std,
                med_std,
                _mean_std([r.mean_acc for r in per_rep])[1],
                _mean_std([r.mean_median for r in per_rep])[1],
            )
        )
    table = ResultsTable(title, rows)
    table.check_sandwich()
    return table


def run_small_protocol(records, cfg: ExperimentConfig) -> tuple[ResultsTable, list[ResultsTable]]:
    """Repeated seeded splits of one record set; returns the aggregate and each repetition."""
    for cls in CLASSES:
        n = sum(r.cls == cls for r in records)
        if n < 10:
            raise ValueError(f"need at least 10 records per class, {cls.value} has {n}")
    per_rep = []
    for rep in range(cfg.repetitions):
        train, test = split_records(records, cfg.split_fraction, derive_seed(cfg.seed, "small-split", rep))
        net, _ = fit(train, _train_config(cfg, "classification", "small", rep), cfg.label)
        table = _table(
            f"Repetition {rep}", baseline_rows(test), [adviser_row(ADVISER, net, "classification", test)]
        )
        per_rep.append(table)
    pct = round(100 * cfg.split_fraction)
    title = f"Repeated {pct}:{100 - pct} splits, mean ± std over {cfg.repetitions} repetitions"
    return aggregate(per_rep, title), per_rep


COMPARE_ROWS = (
    ("Classification", "classification"),
    ("Regression (degrees)", "regression-degrees"),
    ("Regression (radians)", "regression-radians"),
)


def compare_classification_regression(cfg: ExperimentConfig, data=None) -> ResultsTable:
    train, test = data if data is not None else load_train_test(cfg)
    learned = []
    for name, mode in COMPARE_ROWS:
        # identical seed for all three so only the targets differ
        net, _ = fit(train, _train_config(cfg, mode), cfg.label)
        learned.append(adviser_row(name, net, mode, test))
    return _table("Classification vs regression targets", baseline_rows(test), learned)


def temperature_sweep(cfg: ExperimentConfig, temperatures=None, data=None) -> ResultsTable:
    temperatures = tuple(cfg.temperatures if temperatures is None else temperatures)
    if any(t <= 0 for t in temperatures):
        raise ValueError("temperatures must be positive")
    train, test = data if data is not None else load_train_test(cfg)
    learned = []
    for t in temperatures:
        net, _ = fit(train, _train_config(cfg, "classification"), replace(cfg.label, temperature=t))
        learned.append(adviser_row(f"Adviser (T={t:g})", net, "classification", test))
    return _table("Label temperature sweep", baseline_rows(test), learned)


def adviser_spread(table: ResultsTable) -> float:
    """Max minus min mean accuracy over the adviser rows of a sweep table."""
    accs = [r.mean_acc for r in table.rows if r.name.startswith(ADVISER)]
    return max(accs) - min(accs)


def records_summary(records: list[AdviseeRecord]) -> str:
    lines = [f"{len(records)} records"]
    for cls in CLASSES:
        subset = [r for r in records if r.cls == cls]
        if subset:
            n_vis = np.mean([len(r.errors) for r in subset])
            lines.append(f"  {cls.value}: {len(subset)} records, {n_vis:.2f} visible keypoints on average")
    with_features = sum(r.features is not None for r in records)
    lines.append(f"  records with features: {with_features}")
    return "\n".join(lines) + "\n"
