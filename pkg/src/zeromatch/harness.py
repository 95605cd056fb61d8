"""Suite execution, aggregation over seeds, acceptance checks and report files."""
from __future__ import annotations

import csv
import json
import logging
import math
import operator
import os
import re
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import oracle as fm
from .config import derive_seed, fingerprint, parse_method
from .data import gen_blobs, load_dataset, split_semisupervised
from .exceptions import ConfigurationError, ParseError
from .train import NEEDS_PSEUDO_LABELS, evaluate, train

log = logging.getLogger(__name__)

RUNS_FILE = "runs.jsonl"
SUMMARY_COLUMNS = ("method", "oracle", "k", "median_acc", "std_acc", "n_seeds")
ZERO_SHOT = "zero_shot"
FLOAT_SLACK = 1e-12


@dataclass
class RunResult:
    fingerprint: str
    method: str
    oracle: str | None
    oracle_desc: str | None
    k: int
    seed: int
    test_acc: float | None
    zero_shot_acc: float | None
    stage1_steps: int
    stage2_steps: int
    wall_seconds: float
    final_mask_rate: float | None
    error: str | None = None

    @property
    def ok(self):
        return self.error is None

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=False, separators=(", ", ": "))

    @classmethod
    def from_dict(cls, d):
        names = [f.name for f in fields(cls)]
        return cls(**{n: d.get(n) for n in names})


RUN_COLUMNS = tuple(f.name for f in fields(RunResult))


# data / oracle construction ------------------------------------------------


def build_dataset(config, seed):
    spec = config.data
    if "path" in spec:
        return load_dataset(os.path.join(config.base_dir, spec["path"]))
    return gen_blobs(
        int(spec.get("classes", 4)),
        int(spec.get("dim", 16)),
        int(spec.get("n_per_class", 250)),
        float(spec.get("separation", 4.0)),
        seed=derive_seed(config.master_seed, "data", seed),
        test_fraction=float(spec.get("test_fraction", 0.2)),
    )


def build_pseudo_labels(config, oracle_name, ds, seed):
    path = config.oracle_path(oracle_name)
    if path is not None:
        pls = fm.load(path)
        if pls.num_classes != ds.num_classes:
            raise ConfigurationError(f"{path}: K={pls.num_classes}, dataset K={ds.num_classes}")
        return pls
    spec = config.oracle_spec(oracle_name, derive_seed(config.master_seed, "oracle", oracle_name, seed))
    return fm.generate(spec, ds, include_test=True)


class _Cache:
    def __init__(self, config):
        self.config = config
        self.datasets = {}
        self.labels = {}

    def dataset(self, seed):
        if seed not in self.datasets:
            self.datasets[seed] = build_dataset(self.config, seed)
        return self.datasets[seed]

    def pseudo_labels(self, oracle_name, seed):
        key = (oracle_name, seed)
        if key not in self.labels:
            self.labels[key] = build_pseudo_labels(self.config, oracle_name, self.dataset(seed), seed)
        return self.labels[key]


def run_cell(config, cell, cache=None):
    """Train and evaluate one ``(method, oracle, k, seed)`` cell.

    Datasets depend only on ``seed``, pseudo-labels on ``(oracle, seed)``, and
    the label split and training streams on ``(seed, k)``; every method in a
    cell row therefore sees the same data, teacher and batch order.
    """
    method, oracle_name, k, seed = cell
    cache = cache or _Cache(config)
    fp = fingerprint(config, method, oracle_name, k, seed)
    start = time.perf_counter()
    base, overrides = parse_method(method)
    try:
        hyper = config.hyper_for(overrides)
        ds = split_semisupervised(cache.dataset(seed), k, derive_seed(config.master_seed, "split", seed, k))
        pls = cache.pseudo_labels(oracle_name, seed) if oracle_name is not None else None
        if base in NEEDS_PSEUDO_LABELS and pls is None:
            raise ConfigurationError(f"{base} requires an oracle")
        result = train(base, ds, pls, hyper, seed=derive_seed(config.master_seed, "train", seed, k))
        return RunResult(
            fingerprint=fp,
            method=method,
            oracle=oracle_name,
            oracle_desc=pls.source if pls is not None else None,
            k=k,
            seed=seed,
            test_acc=evaluate(result.model, ds, "test", pls),
            zero_shot_acc=fm.zero_shot_accuracy(pls, ds, "test") if pls is not None else None,
            stage1_steps=result.stage1_steps,
            stage2_steps=result.stage2_steps,
            wall_seconds=round(time.perf_counter() - start, 3),
            final_mask_rate=result.final_mask_rate,
        )
    except Exception as exc:  # recorded, suite continues
        log.exception("cell %s failed", cell)
        return RunResult(fp, method, oracle_name, None, k, seed, None, None, 0, 0,
                         round(time.perf_counter() - start, 3), None,
                         error=f"{type(exc).__name__}: {exc}")


def _run_cell_worker(args):
    config, cell = args
    return run_cell(config, cell)


def read_runs(path):
    """Parse a raw results table written as JSON lines or CSV."""
    if not os.path.exists(path):
        return []
    if str(path).endswith(".csv"):
        return _read_runs_csv(path)
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    out.append(RunResult.from_dict(json.loads(line)))
                except (json.JSONDecodeError, TypeError) as exc:
                    raise ParseError(f"bad result record: {exc}", line=lineno) from None
    return out


def run_suite(config, out_dir=None, workers=None):
    """Run every configured cell not already present in ``<out_dir>/runs.jsonl``.

    Finished cells are appended to the results file as they complete, so an
    interrupted suite resumes where it stopped. Returns results in cell order.
    """
    out_dir = out_dir or config.output_dir
    workers = workers or config.workers
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, RUNS_FILE)
    done = {r.fingerprint: r for r in read_runs(path) if r.ok}
    cells = config.cells()
    todo = [c for c in cells if fingerprint(config, *c) not in done]
    log.info("%d cells, %d already complete", len(cells), len(cells) - len(todo))

    with open(path, "a") as fh:
        def write(r):
            fh.write(r.to_json() + "\n")
            fh.flush()
            done.setdefault(r.fingerprint, r)
            log.info("%s %s k=%d seed=%d acc=%s", r.method, r.oracle, r.k, r.seed, r.test_acc)
            if not r.ok:
                failed.append(r)

        failed = []
        if workers > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for r in pool.map(_run_cell_worker, [(config, c) for c in todo]):
                    write(r)
        else:
            cache = _Cache(config)
            for c in todo:
                write(run_cell(config, c, cache))

    by_fp = dict(done)
    for r in failed:
        by_fp[r.fingerprint] = r
    return [by_fp[fingerprint(config, *c)] for c in cells]


# aggregation ----------------------------------------------------------------


@dataclass(frozen=True)
class SummaryRow:
    method: str
    oracle: str | None
    k: int
    median_acc: float
    std_acc: float
    n_seeds: int


def _aggregate(values):
    values = sorted(values)
    return statistics.median(values), float(np.std(values)) if len(values) > 1 else 0.0


def summarize(results):
    """Median and population std of test accuracy over seeds per ``(method, oracle, k)``.

    Zero-shot teacher accuracy is summarized as an extra ``zero_shot`` method
    per ``(oracle, k)``.
    """
    groups, zero_shot = {}, {}
    for r in results:
        if not r.ok:
            continue
        groups.setdefault((r.method, r.oracle, r.k), {})[r.seed] = r.test_acc
        if r.zero_shot_acc is not None:
            zero_shot.setdefault((ZERO_SHOT, r.oracle, r.k), {})[r.seed] = r.zero_shot_acc
    groups.update(zero_shot)
    rows = []
    for (method, oracle, k), by_seed in groups.items():
        med, std = _aggregate(by_seed.values())
        rows.append(SummaryRow(method, oracle, k, med, std, len(by_seed)))
    rows.sort(key=lambda r: (r.oracle or "", r.k, r.method))
    return rows


# acceptance criteria ----------------------------------------------------------

_OPS = {">=": operator.ge, "<=": operator.le, ">": operator.gt, "<": operator.lt}
_TERM = r"(\S+?)(?:\s*([+-])\s*(\d+(?:\.\d*)?(?:[eE][+-]?\d+)?))?"
_COMPARISON = re.compile(rf"^\s*{_TERM}\s*(>=|<=|>|<)\s*{_TERM}\s*$")
_CELL = re.compile(r"^(?P<method>[^@]+)@(?P<oracle>[^/]+)/(?P<k>\d+)$")


@dataclass
class CriterionResult:
    name: str
    passed: bool
    details: list


def parse_criteria(text):
    """Criteria lines look like ``id | cell OP cell [+|- number] [or ...]``.

    A cell is ``method@oracle/k`` and evaluates to that cell's median test
    accuracy (``zero_shot@oracle/k`` gives the teacher's). Lines sharing an
    id must all hold for the criterion to pass; ``or`` joins alternatives
    within one line.
    """
    criteria = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "|" not in line:
            raise ParseError("expected 'id | expression'", line=lineno)
        name, expr = (s.strip() for s in line.split("|", 1))
        alternatives = []
        for part in re.split(r"\s+or\s+", expr):
            m = _COMPARISON.match(part)
            if not m:
                raise ParseError(f"cannot parse comparison {part!r}", line=lineno)
            lhs = (m.group(1), m.group(2), m.group(3))
            rhs = (m.group(5), m.group(6), m.group(7))
            alternatives.append((lhs, m.group(4), rhs, part.strip()))
        criteria.setdefault(name, []).append(alternatives)
    return criteria


def _term_value(term, table):
    operand, sign, number = term
    cell = _CELL.match(operand)
    if cell:
        key = (cell["method"], cell["oracle"], int(cell["k"]))
        if key not in table:
            raise LookupError(f"coverage: no results for {operand}")
        value = table[key]
    else:
        value = float(operand)
    if sign:
        shown = f"({value:.4f} {sign} {number})"
        value = value + float(number) if sign == "+" else value - float(number)
    else:
        shown = f"{value:.4f}"
    return value, shown


def check_acceptance(results, criteria_text):
    table = {(r.method, r.oracle, r.k): r.median_acc for r in summarize(results)}
    out = []
    for name, lines in parse_criteria(criteria_text).items():
        passed, details = True, []
        for alternatives in lines:
            line_ok, notes = False, []
            for lhs, op, rhs, text in alternatives:
                try:
                    (a, a_text), (b, b_text) = _term_value(lhs, table), _term_value(rhs, table)
                except LookupError as exc:
                    notes.append(f"{text}: FAIL ({exc})")
                    continue
                ok = _OPS[op](a, b)
                if not ok and op in (">=", "<=") and math.isclose(a, b, rel_tol=0, abs_tol=FLOAT_SLACK):
                    ok = True
                notes.append(f"{text}: {a_text} {op} {b_text} -> {'ok' if ok else 'FAIL'}")
                line_ok = line_ok or ok
            passed = passed and line_ok
            details.append(" OR ".join(notes))
        out.append(CriterionResult(name, passed, details))
    return out


def format_acceptance(report):
    lines = []
    for c in report:
        lines.append(f"[{'PASS' if c.passed else 'FAIL'}] criterion {c.name}: " + "; ".join(c.details))
    return "\n".join(lines)


# report files ------------------------------------------------------------------


def _cell_text(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _read_runs_csv(path):
    types = {f.name: f.type for f in fields(RunResult)}
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RUN_COLUMNS:
            raise ParseError("unexpected run-table columns", line=1)
        for row in reader:
            rec = {}
            for name, text in row.items():
                t = str(types[name])
                if text == "":
                    rec[name] = None
                elif t.startswith("int"):
                    rec[name] = int(text)
                elif t.startswith("float"):
                    rec[name] = float(text)
                else:
                    rec[name] = text
            out.append(RunResult(**rec))
    return out


def write_summary_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([r.method, _cell_text(r.oracle), r.k, repr(r.median_acc), repr(r.std_acc),
                        r.n_seeds])


def report(results, out_dir, fmt="csv"):
    """Write the raw run table (``runs.csv`` or ``runs.jsonl``), ``summary.csv`` and ``summary.txt``.

    Output bytes depend only on ``results``.
    """
    if fmt not in ("csv", "jsonl"):
        raise ValueError("format must be 'csv' or 'jsonl'")
    os.makedirs(out_dir, exist_ok=True)
    raw_path = os.path.join(out_dir, f"runs.{fmt}")
    if fmt == "csv":
        with open(raw_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RUN_COLUMNS)
            for r in results:
                w.writerow([_cell_text(getattr(r, c)) for c in RUN_COLUMNS])
    else:
        with open(raw_path, "w") as fh:
            for r in results:
                fh.write(r.to_json() + "\n")
    rows = summarize(results)
    write_summary_csv(rows, os.path.join(out_dir, "summary.csv"))
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write(format_summary(rows))
    return raw_path


def format_summary(rows):
    head = "# median and population std of test accuracy across seeds\n"
    lines = [f"{'method':<40} {'oracle':<10} {'k':>3} {'median':>8} {'std':>8} {'n':>3}"]
    for r in rows:
        lines.append(f"{r.method:<40} {r.oracle or '-':<10} {r.k:>3} {r.median_acc:>8.4f} "
                     f"{r.std_acc:>8.4f} {r.n_seeds:>3}")
    return head + "\n".join(lines) + "\n"
