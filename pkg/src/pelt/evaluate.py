"""Leave-one-out re-identification evaluation.

Every image whose identity appears at least twice serves as a query against
all remaining images; identities with a single image stay in the database but
are never queried (no correct answer exists) and are counted as excluded.
Rankings sort by descending similarity with ascending-id tie-breaks, so runs
are deterministic across platforms.

AP is the interpolation-free retrieval form: the mean of precision@r over the
ranks r holding a relevant item, divided by the number of relevant items.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from .matching import SimilarityMatrix


class EvalError(ValueError):
    pass


@dataclass
class RankedRetrieval:
    query_id: str
    ranked_ids: list
    relevant: list  # parallel bools: same identity as the query

    def first_relevant_rank(self) -> int:
        """1-based rank of the first correct hit."""
        return self.relevant.index(True) + 1


@dataclass
class VariantMetrics:
    name: str
    map_pct: float
    top_k_pct: dict  # k -> percentage
    failures: int | None = None
    improvements: int | None = None


@dataclass
class EvalReport:
    variants: list = field(default_factory=list)  # VariantMetrics rows
    excluded_queries: int = 0
    per_query: list = field(default_factory=list)

    def row_values(self, v: VariantMetrics) -> list:
        vals = [v.name, f"{v.map_pct:.1f}"]
        vals += [f"{v.top_k_pct[k]:.1f}" for k in (1, 3, 5, 10)]
        vals.append("" if v.failures is None else str(v.failures))
        vals.append("" if v.improvements is None else str(v.improvements))
        return vals


REPORT_COLUMNS = ["Name", "mAP", "Top-1", "Top-3", "Top-5", "Top-10",
                  "Failures", "Improvements"]


def leave_one_out(matrix: SimilarityMatrix, labels: dict) -> list[RankedRetrieval]:
    """One ranked retrieval per eligible query (identity seen >= 2 times)."""
    ids = matrix.ids
    missing = [i for i in ids if i not in labels]
    if missing:
        raise EvalError(f"labels missing for ids {missing}")
    counts = {}
    for i in ids:
        counts[labels[i]] = counts.get(labels[i], 0) + 1
    retrievals = []
    for qi, q in enumerate(ids):
        if counts[labels[q]] < 2:
            continue
        rest = [(-(matrix.values[qi, j]), ids[j]) for j in range(len(ids)) if j != qi]
        rest.sort()
        ranked = [r for _, r in rest]
        retrievals.append(RankedRetrieval(
            query_id=q, ranked_ids=ranked,
            relevant=[labels[r] == labels[q] for r in ranked]))
    if not retrievals:
        raise EvalError("no eligible queries (every identity is a singleton)")
    return retrievals


def excluded_query_count(matrix: SimilarityMatrix, labels: dict) -> int:
    counts = {}
    for i in matrix.ids:
        counts[labels[i]] = counts.get(labels[i], 0) + 1
    return sum(1 for i in matrix.ids if counts[labels[i]] < 2)


def top_k(retrievals: list[RankedRetrieval], k: int) -> float:
    """Percentage of queries with a relevant hit in the first min(k, db) ranks."""
    if k < 1:
        raise EvalError(f"k must be >= 1, got {k}")
    if not retrievals:
        raise EvalError("no retrievals")
    hits = 0
    for r in retrievals:
        kk = min(k, len(r.ranked_ids))
        if any(r.relevant[:kk]):
            hits += 1
    return 100.0 * hits / len(retrievals)


def mean_average_precision(retrievals: list[RankedRetrieval]) -> float:
    if not retrievals:
        raise EvalError("no retrievals")
    total = 0.0
    for r in retrievals:
        n_rel = sum(r.relevant)
        if n_rel == 0:
            raise EvalError(f"query {r.query_id!r} has no relevant entries")
        hits = 0
        ap = 0.0
        for rank, rel in enumerate(r.relevant, start=1):
            if rel:
                hits += 1
                ap += hits / rank
        total += ap / n_rel
    return 100.0 * total / len(retrievals)


def compare_variants(original: list[RankedRetrieval],
                     unwrapped: list[RankedRetrieval]) -> tuple[int, int]:
    """(failures, improvements) of rank-1 outcomes, original vs unwrapped."""
    o = {r.query_id: r for r in original}
    u = {r.query_id: r for r in unwrapped}
    if set(o) != set(u):
        raise EvalError("variant query sets differ")
    failures = improvements = 0
    for q, ro in o.items():
        hit_o = ro.relevant[0]
        hit_u = u[q].relevant[0]
        if hit_o and not hit_u:
            failures += 1
        elif hit_u and not hit_o:
            improvements += 1
    return failures, improvements


def metrics_for(name: str, retrievals: list[RankedRetrieval]) -> VariantMetrics:
    return VariantMetrics(
        name=name,
        map_pct=mean_average_precision(retrievals),
        top_k_pct={k: top_k(retrievals, k) for k in (1, 3, 5, 10)})


def emit_report(report: EvalReport, fmt: str) -> str:
    """Render the report as 'csv' or 'markdown' with identical numeric text."""
    rows = [report.row_values(v) for v in report.variants]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        writer.writerows(rows)
        return buf.getvalue()
    if fmt == "markdown":
        lines = ["| " + " | ".join(REPORT_COLUMNS) + " |",
                 "|" + "|".join(["---"] * len(REPORT_COLUMNS)) + "|"]
        for row in rows:
            lines.append("| " + " | ".join(row) + " |")
        return "\n".join(lines) + "\n"
    raise EvalError(f"unknown report format {fmt!r}")


def per_query_records(variant_retrievals: dict) -> list:
    """Per-query JSON-ready records: rank of the first relevant hit per variant."""
    queries = sorted({r.query_id for rs in variant_retrievals.values() for r in rs})
    byv = {name: {r.query_id: r for r in rs}
           for name, rs in variant_retrievals.items()}
    records = []
    for q in queries:
        rec = {"query_id": q}
        for name, lookup in byv.items():
            r = lookup.get(q)
            rec[f"rank_first_relevant_{name}"] = (
                None if r is None else r.first_relevant_rank())
        records.append(rec)
    return records


def save_per_query_records(records: list, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(records, f, indent=2)
        f.write("\n")
