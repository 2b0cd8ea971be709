"""Benchmark protocols: a synthetic single-user sweep and a grouped-dataset run.

Both compare the optimal mechanism against the two mollifier projections by
the TV distance and KL divergence between each user's distribution ``p`` and
the distribution their released sample is drawn from.

Ingestion format (UTF-8 CSV, header required)::

    user_id,group_id,category,count

one row per (user, category), ``count`` a nonnegative integer. Absent
(user, category) pairs count as zero.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from collections import OrderedDict
from typing import Iterable, Sequence

import numpy as np

from ldpsampler._io import atomic_write_text
from ldpsampler.core import (
    Distribution,
    check_epsilon,
    kl_divergence,
    tv_distance,
)
from ldpsampler.exceptions import (
    EmptyAfterFiltering,
    GridOutOfRange,
    InconsistentCategories,
    MalformedRow,
    TooShort,
    ValidationError,
)
from ldpsampler.mechanism import build_optimal
from ldpsampler.mollifier import project_kl, project_tv
from ldpsampler.sampler import RandomStream

logger = logging.getLogger(__name__)

INGEST_COLUMNS = ("user_id", "group_id", "category", "count")
REPORT_COLUMNS = ("group_id", "method", "epsilon", "user_id", "tv", "kl")
AGGREGATE_USER = "__aggregate__"
PRIOR_SMOOTHING = 1e-6

OPTIMAL = "optimal"
MOLLIFIER_KL = "mollifierKL"
MOLLIFIER_TV = "mollifierTV"
METHODS = (OPTIMAL, MOLLIFIER_KL, MOLLIFIER_TV)
_METHOD_ALIASES = {
    "optimal": OPTIMAL,
    "mollifierkl": MOLLIFIER_KL,
    "mollifier-kl": MOLLIFIER_KL,
    "mollifier_kl": MOLLIFIER_KL,
    "mollifiertv": MOLLIFIER_TV,
    "mollifier-tv": MOLLIFIER_TV,
    "mollifier_tv": MOLLIFIER_TV,
}


def canonical_method(name: str) -> str:
    try:
        return _METHOD_ALIASES[name.strip().lower()]
    except KeyError:
        raise ValidationError(f"unknown method {name!r}; expected one of {METHODS}") from None


def prior_from_counts(counts) -> Distribution:
    """Average of the row-normalised count vectors.

    Categories with zero mass get ``PRIOR_SMOOTHING`` added before
    renormalising, since both the mechanism and the mollifier need a strictly
    positive prior.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim == 1:
        counts = counts[None, :]
    totals = counts.sum(axis=1)
    if np.any(totals <= 0):
        raise ValidationError("every histogram needs at least one event")
    prior = np.mean(counts / totals[:, None], axis=0)
    if np.any(prior == 0):
        prior = prior + PRIOR_SMOOTHING
    return Distribution(prior / prior.sum())


@dataclasses.dataclass(frozen=True)
class UserHistogram:
    user_id: str
    group_id: str
    counts: np.ndarray

    @property
    def distribution(self) -> Distribution:
        return Distribution(self.counts / self.counts.sum())


@dataclasses.dataclass(frozen=True)
class GroupDataset:
    """Users of one group over a shared category list, plus the group prior."""

    group_id: str
    categories: tuple
    users: tuple
    prior: Distribution

    def __post_init__(self):
        for user in self.users:
            if len(user.counts) != len(self.categories):
                raise InconsistentCategories(
                    f"user {user.user_id!r} has {len(user.counts)} counts for "
                    f"{len(self.categories)} categories"
                )
        if self.prior.n != len(self.categories):
            raise InconsistentCategories("prior length differs from category count")

    @classmethod
    def from_users(cls, group_id, categories, users) -> "GroupDataset":
        users = tuple(users)
        prior = prior_from_counts(np.stack([u.counts for u in users]))
        return cls(group_id, tuple(categories), users, prior)


def _parse_rows(fh):
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedRow(1, "missing header") from None
    header = [h.strip() for h in header]
    if header and header[0].startswith("﻿"):
        header[0] = header[0][1:]
    unknown = [h for h in header if h not in INGEST_COLUMNS]
    missing = [c for c in INGEST_COLUMNS if c not in header]
    if unknown or missing or len(header) != len(INGEST_COLUMNS):
        raise MalformedRow(1, f"header must be {','.join(INGEST_COLUMNS)}, got {','.join(header)}")
    pos = {name: header.index(name) for name in INGEST_COLUMNS}
    for line, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise MalformedRow(line, f"expected {len(header)} fields, got {len(row)}")
        user, group, category, raw = (row[pos[c]].strip() for c in INGEST_COLUMNS)
        if not user or not group or not category:
            raise MalformedRow(line, "empty user_id, group_id or category")
        try:
            count = int(raw)
        except ValueError:
            raise MalformedRow(line, f"count {raw!r} is not an integer") from None
        if count < 0:
            raise MalformedRow(line, f"count {count} is negative")
        yield line, user, group, category, count


def ingest_counts(
    source,
    min_events: int = 20,
    top_k: int = 100,
    min_group_size: int = 1000,
) -> list[GroupDataset]:
    """Load grouped user histograms and apply the benchmark filters.

    Per group: keep the ``top_k`` categories by group-wide count (ties broken
    by first appearance in the file), drop users with fewer than
    ``min_events`` events on those categories, then drop the group if fewer
    than ``min_group_size`` users remain. Categories keep their file order.

    Args:
      source: a path or an open text file.

    Raises:
      MalformedRow: bad header, field count, or count value (carries the line).
      EmptyAfterFiltering: no group survives.
    """
    if hasattr(source, "read"):
        rows = list(_parse_rows(source))
    else:
        with open(source, newline="", encoding="utf-8") as fh:
            rows = list(_parse_rows(fh))

    categories: "OrderedDict[str, int]" = OrderedDict()
    user_group: dict = {}
    groups: "OrderedDict[str, OrderedDict]" = OrderedDict()
    for line, user, group, category, count in rows:
        categories.setdefault(category, len(categories))
        if user_group.setdefault(user, group) != group:
            raise MalformedRow(line, f"user {user!r} appears in groups {user_group[user]!r} and {group!r}")
        users = groups.setdefault(group, OrderedDict())
        hist = users.setdefault(user, {})
        if category in hist:
            raise MalformedRow(line, f"duplicate row for user {user!r}, category {category!r}")
        hist[category] = count

    labels = list(categories)
    out = []
    for group, users in groups.items():
        matrix = np.zeros((len(users), len(labels)), dtype=np.int64)
        for r, hist in enumerate(users.values()):
            for category, count in hist.items():
                matrix[r, categories[category]] = count
        totals = matrix.sum(axis=0)
        ranked = sorted(
            (j for j in range(len(labels)) if totals[j] > 0),
            key=lambda j: (-totals[j], j),
        )
        keep = sorted(ranked[:top_k])
        if len(keep) < 2:
            logger.info("group %s dropped: fewer than 2 categories with events", group)
            continue
        sub = matrix[:, keep]
        kept = [
            UserHistogram(uid, group, sub[r].astype(np.float64))
            for r, uid in enumerate(users)
            if sub[r].sum() >= max(min_events, 1)
        ]
        if len(kept) < min_group_size:
            logger.info("group %s dropped: %d users < %d", group, len(kept), min_group_size)
            continue
        out.append(GroupDataset.from_users(group, [labels[j] for j in keep], kept))
    if not out:
        raise EmptyAfterFiltering("no group survives the filters")
    return out


@dataclasses.dataclass(frozen=True)
class UserScore:
    user_id: str
    tv: float
    kl: float


def _stderr(values, runs):
    if runs < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(runs))


@dataclasses.dataclass(frozen=True)
class BenchReport:
    """Per-user distances for one group, method, and budget, plus aggregates."""

    group_id: str
    method: str
    epsilon: float
    per_user: tuple
    max_tv: float
    mean_tv: float
    mean_kl: float
    stderr_tv: float
    stderr_kl: float
    runs: int
    max_kl: float

    @classmethod
    def from_scores(cls, group_id, method, epsilon, scores: Iterable[UserScore], runs=1):
        scores = tuple(sorted(scores, key=lambda s: s.user_id))
        tv = np.array([s.tv for s in scores])
        kl = np.array([s.kl for s in scores])
        if len(scores) == 0:
            nan = math.nan
            return cls(group_id, method, epsilon, scores, nan, nan, nan, 0.0, 0.0, runs, nan)
        return cls(
            group_id,
            method,
            float(epsilon),
            scores,
            float(tv.max()),
            float(tv.mean()),
            float(kl.mean()),
            _stderr(tv, runs),
            _stderr(kl, runs),
            runs,
            float(kl.max()),
        )

    def to_dict(self) -> dict:
        return {
            "groupId": self.group_id,
            "method": self.method,
            "epsilon": self.epsilon,
            "perUser": [{"userId": s.user_id, "tv": s.tv, "kl": s.kl} for s in self.per_user],
            "maxTV": self.max_tv,
            "meanTV": self.mean_tv,
            "meanKL": self.mean_kl,
            "stderrTV": self.stderr_tv,
            "stderrKL": self.stderr_kl,
            "runs": self.runs,
            "maxKL": self.max_kl,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BenchReport":
        scores = tuple(UserScore(u["userId"], float(u["tv"]), float(u["kl"])) for u in d["perUser"])
        return cls(
            d["groupId"], d["method"], float(d["epsilon"]), scores,
            float(d["maxTV"]), float(d["meanTV"]), float(d["meanKL"]),
            float(d["stderrTV"]), float(d["stderrKL"]), int(d["runs"]), float(d["maxKL"]),
        )


def sampling_distributions(method, p_rows, prior, epsilon, bundle=None):
    """Rows of the distributions each user's sample is drawn from under ``method``."""
    method = canonical_method(method)
    if method == OPTIMAL:
        if bundle is None:
            bundle = build_optimal(prior, epsilon)
        out = p_rows @ bundle.kernel.entries
        return out / out.sum(axis=1, keepdims=True)
    project = project_kl if method == MOLLIFIER_KL else project_tv
    return np.stack([project(p, prior, epsilon).projected.probs for p in p_rows])


def dataset_benchmark(
    groups: Sequence[GroupDataset],
    epsilon: float,
    methods: Iterable[str] = METHODS,
) -> list[BenchReport]:
    """Score every user of every group under each method.

    The optimal mechanism is built once per group from the group prior; the
    mollifier methods project each user separately. Reports come out in
    group order, then method order, with users sorted by id.
    """
    eps = check_epsilon(epsilon)
    methods = [canonical_method(m) for m in methods]
    if not groups:
        raise EmptyAfterFiltering("no groups to benchmark")
    reports = []
    for group in groups:
        p_rows = np.stack([u.distribution.probs for u in group.users])
        bundle = build_optimal(group.prior, eps) if OPTIMAL in methods else None
        for method in methods:
            sampled = sampling_distributions(method, p_rows, group.prior, eps, bundle)
            scores = [
                UserScore(u.user_id, tv_distance(p, s), kl_divergence(p, s))
                for u, p, s in zip(group.users, p_rows, sampled)
            ]
            reports.append(BenchReport.from_scores(group.group_id, method, eps, scores))
    return reports


def default_grid(n: int, points: int = 20) -> np.ndarray:
    if points < 2:
        raise GridOutOfRange("a grid needs at least 2 points")
    return np.linspace(1.0 / n, 1.0, points)


def first_coordinate_family(n: int, p1: float) -> np.ndarray:
    """``(p1, (1 - p1)/(n - 1), ..., (1 - p1)/(n - 1))``."""
    p = np.full(n, (1.0 - p1) / (n - 1))
    p[0] = p1
    return p


@dataclasses.dataclass(frozen=True)
class SweepReport:
    """Per-grid-point means and standard errors over runs, keyed by method.

    ``tv[method]`` and ``kl[method]`` are ``(runs, len(grid))`` arrays of raw
    distances.
    """

    n: int
    epsilon: float
    runs: int
    grid: np.ndarray
    tv: dict
    kl: dict

    def mean_tv(self, method):
        return self.tv[method].mean(axis=0)

    def mean_kl(self, method):
        return self.kl[method].mean(axis=0)

    def stderr_tv(self, method):
        return np.array([_stderr(col, self.runs) for col in self.tv[method].T])

    def stderr_kl(self, method):
        return np.array([_stderr(col, self.runs) for col in self.kl[method].T])

    def rows(self):
        for method in METHODS:
            mtv, stv = self.mean_tv(method), self.stderr_tv(method)
            mkl, skl = self.mean_kl(method), self.stderr_kl(method)
            for i, p1 in enumerate(self.grid):
                yield {
                    "p1": float(p1),
                    "method": method,
                    "mean_tv": float(mtv[i]),
                    "stderr_tv": float(stv[i]),
                    "mean_kl": float(mkl[i]),
                    "stderr_kl": float(skl[i]),
                }

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "epsilon": self.epsilon,
            "runs": self.runs,
            "rows": list(self.rows()),
        }


def synthetic_sweep(
    n: int,
    epsilon: float,
    runs: int,
    p1grid,
    rng: RandomStream,
) -> SweepReport:
    """Single-user sweep from uniform ``p`` (``p1 = 1/n``) to a point mass (``p1 = 1``).

    Each run draws a fresh prior by normalising ``n`` uniform variates, then
    scores every grid point under the three methods.
    """
    eps = check_epsilon(epsilon)
    if n < 2:
        raise TooShort(f"n must be >= 2, got {n}")
    if runs < 1:
        raise ValidationError("runs must be >= 1")
    grid = np.asarray(p1grid, dtype=np.float64)
    lo = 1.0 / n
    if grid.ndim != 1 or grid.size == 0 or np.any(grid < lo - 1e-12) or np.any(grid > 1.0):
        raise GridOutOfRange(f"grid values must lie in [1/n, 1] = [{lo}, 1]")
    grid = np.clip(grid, lo, 1.0)
    tv = {m: np.empty((runs, grid.size)) for m in METHODS}
    kl = {m: np.empty((runs, grid.size)) for m in METHODS}
    for r in range(runs):
        q = rng.uniform(n)
        q = q / q.sum()
        bundle = build_optimal(q, eps)
        for i, p1 in enumerate(grid):
            p = first_coordinate_family(n, p1)
            sampled = {
                OPTIMAL: p @ bundle.kernel.entries,
                MOLLIFIER_KL: project_kl(p, q, eps).projected.probs,
                MOLLIFIER_TV: project_tv(p, q, eps).projected.probs,
            }
            for method, s in sampled.items():
                tv[method][r, i] = tv_distance(p, s)
                kl[method][r, i] = kl_divergence(p, s)
    return SweepReport(n, eps, runs, grid, tv, kl)


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def report_rows(reports: Iterable[BenchReport]):
    """CSV rows: one per user, then one aggregate row (max TV, max KL) per report."""
    for rep in reports:
        base = {"group_id": rep.group_id, "method": rep.method, "epsilon": rep.epsilon}
        for s in rep.per_user:
            yield {**base, "user_id": s.user_id, "tv": s.tv, "kl": s.kl}
        yield {**base, "user_id": AGGREGATE_USER, "tv": rep.max_tv, "kl": rep.max_kl}


def write_report(reports: Sequence[BenchReport], path, format: str = "json") -> None:
    reports = list(reports)
    if format == "json":
        text = json.dumps({"reports": [r.to_dict() for r in reports]}, indent=2) + "\n"
    elif format == "csv":
        text = _csv_text(REPORT_COLUMNS, report_rows(reports))
    else:
        raise ValidationError(f"format must be 'json' or 'csv', got {format!r}")
    atomic_write_text(path, text)


def read_report(path, format: str = "json") -> list[BenchReport]:
    """Inverse of :func:`write_report`. CSV aggregates are recomputed from user rows."""
    with open(path, encoding="utf-8", newline="") as fh:
        if format == "json":
            return [BenchReport.from_dict(d) for d in json.load(fh)["reports"]]
        grouped: "OrderedDict[tuple, list]" = OrderedDict()
        for row in csv.DictReader(fh):
            key = (row["group_id"], row["method"], float(row["epsilon"]))
            scores = grouped.setdefault(key, [])
            if row["user_id"] != AGGREGATE_USER:
                scores.append(UserScore(row["user_id"], float(row["tv"]), float(row["kl"])))
    return [BenchReport.from_scores(g, m, e, s) for (g, m, e), s in grouped.items()]


def write_sweep(sweep: SweepReport, path, format: str = "csv") -> None:
    if format == "csv":
        text = _csv_text(("p1", "method", "mean_tv", "stderr_tv", "mean_kl", "stderr_kl"), sweep.rows())
    elif format == "json":
        text = json.dumps(sweep.to_dict(), indent=2) + "\n"
    else:
        raise ValidationError(f"format must be 'json' or 'csv', got {format!r}")
    atomic_write_text(path, text)
