"""Ranking metrics (binary-relevance NDCG, average position) and run reports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence


class MetricError(ValueError):
    pass


def ndcg_at_k(ranked: Sequence[str], relevant: Iterable[str], k: int = 10) -> float:
    """Binary-gain NDCG with discount 1/log2(p+1); positions beyond k score 0."""
    relevant = set(relevant)
    if not relevant:
        raise MetricError("relevant set is empty")
    if k < 1:
        raise MetricError("k must be >= 1")
    dcg = 0.0
    for p, item in enumerate(ranked[:k], start=1):
        if item in relevant:
            dcg += 1.0 / math.log2(p + 1)
    idcg = sum(1.0 / math.log2(j + 1) for j in range(1, min(len(relevant), k) + 1))
    return dcg / idcg


def positions(ranked: Sequence[str], relevant: Iterable[str]) -> list[int]:
    index = {item: p for p, item in enumerate(ranked, start=1)}
    out = []
    for item in relevant:
        if item not in index:
            raise MetricError(f"relevant item {item!r} is not in the ranked list")
        out.append(index[item])
    return out


def average_position(ranked: Sequence[str], relevant: Iterable[str]) -> float:
    pos = positions(ranked, relevant)
    if not pos:
        raise MetricError("relevant set is empty")
    return sum(pos) / len(pos)


@dataclass
class UserResult:
    user_id: str
    mode: str
    ndcg: float
    gt_avg_pos: float
    hit: bool
    repair_applied: bool = False
    prompt_version: int | None = None


REPORT_COLUMNS = ("user_id", "mode", "ndcg_at_10", "gt_avg_pos", "repair_applied", "prompt_version")


@dataclass
class MetricReport:
    mode: str
    n_users: int
    mean_ndcg_at_k: float
    mean_gt_position: float
    hit_rate_at_k: float
    repair_rate: float
    rows: list[UserResult] = field(default_factory=list)
    n_failed: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow(
                [
                    r.user_id,
                    r.mode,
                    f"{r.ndcg:.6f}",
                    f"{r.gt_avg_pos:.4f}",
                    int(r.repair_applied),
                    "" if r.prompt_version is None else r.prompt_version,
                ]
            )
        return buf.getvalue()

    def summary(self) -> str:
        lines = [
            f"mode:          {self.mode}",
            f"users:         {self.n_users}",
            f"mean N@10:     {self.mean_ndcg_at_k:.4f}",
            f"mean GT pos:   {self.mean_gt_position:.3f}",
            f"hit rate@10:   {self.hit_rate_at_k:.3f}",
            f"repair rate:   {self.repair_rate:.3f}",
        ]
        if self.n_failed:
            lines.append(f"failed users:  {self.n_failed} (excluded)")
        return "\n".join(lines)


def build_report(results: Sequence[UserResult], mode: str, n_failed: int = 0) -> MetricReport:
    if not results:
        raise MetricError("cannot build a report from zero users")
    n = len(results)
    return MetricReport(
        mode=mode,
        n_users=n,
        mean_ndcg_at_k=sum(r.ndcg for r in results) / n,
        mean_gt_position=sum(r.gt_avg_pos for r in results) / n,
        hit_rate_at_k=sum(r.hit for r in results) / n,
        repair_rate=sum(r.repair_applied for r in results) / n,
        rows=list(results),
        n_failed=n_failed,
    )


def score_user(
    user_id: str,
    ranked: Sequence[str],
    relevant: Sequence[str],
    mode: str,
    *,
    k: int = 10,
    repair_applied: bool = False,
    prompt_version: int | None = None,
) -> UserResult:
    pos = positions(ranked, relevant)
    return UserResult(
        user_id=user_id,
        mode=mode,
        ndcg=ndcg_at_k(ranked, relevant, k),
        gt_avg_pos=sum(pos) / len(pos),
        hit=min(pos) <= k,
        repair_applied=repair_applied,
        prompt_version=prompt_version,
    )
