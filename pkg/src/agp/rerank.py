"""Listwise reranking of a baseline top-k list, and parsing/repair of model output."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from . import templates as T
from .dataset import BaselineRanking, UserRecord
from .gateway import ChatRequest, Gateway
from .profile import UserProfile

MODES = ("agp", "dir", "cot", "base")

_MARKER = re.compile(r"^\s*(?:\d+\s*[.):]|[-*•])\s+")
_BRACKET = re.compile(r"\[(\d+)\]")
_NUMBERS_ONLY = re.compile(r"^[\d\s,;>]+$")
_LEADING_NUMBER = re.compile(r"^(\d+)\b")


class UnparseableRankingError(ValueError):
    pass


class UserMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class RerankedList:
    user_id: str
    items: tuple[str, ...]
    mode: str
    repair_applied: bool = False
    prompt_version: int | None = None

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "mode": self.mode,
            "items": list(self.items),
            "repair_applied": self.repair_applied,
            "prompt_version": self.prompt_version,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class ParsedRanking:
    items: tuple[str, ...]
    repair_applied: bool


def _entry_refs(line: str, baseline: BaselineRanking) -> list[str | None]:
    """Item ids referenced by one list entry; None marks an unknown reference."""
    k = baseline.k
    ids = baseline.item_ids

    def by_index(n: int) -> str | None:
        return ids[n - 1] if 1 <= n <= k else None

    brackets = _BRACKET.findall(line)
    if brackets:
        return [by_index(int(b)) for b in brackets]
    low = line.lower()
    hits = []
    # longest titles first so "Saga" does not shadow "Saga II"
    for item_id, title in sorted(baseline.items, key=lambda it: -len(it[1])):
        t = title.lower()
        at = low.find(t)
        if at >= 0:
            hits.append((at, item_id))
            low = low[:at] + "\0" * len(t) + low[at + len(t):]
    if hits:
        return [item_id for _, item_id in sorted(hits)]
    if _NUMBERS_ONLY.match(line):
        return [by_index(int(n)) for n in re.findall(r"\d+", line)]
    m = _LEADING_NUMBER.match(line)
    if m:
        return [by_index(int(m.group(1)))]
    return []


def parse_ranking(response_text: str, baseline: BaselineRanking) -> ParsedRanking:
    """Turn model output into a permutation of the baseline's item ids.

    Accepts numbered lists of candidate indices ("[3]" or bare numbers) or
    titles, and a trailing ``FINAL:`` line. Unknown entries are dropped,
    duplicates keep their first occurrence, and missing items are appended
    in baseline order; any of these sets ``repair_applied``.
    """
    text = response_text
    if T.FINAL_MARKER in text:
        text = text.rsplit(T.FINAL_MARKER, 1)[1]
    refs: list[str | None] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        is_entry = bool(_MARKER.match(line))
        body = _MARKER.sub("", line, count=1).strip()
        found = _entry_refs(body, baseline)
        if not found and is_entry:
            found = [None]
        refs.extend(found)

    repaired = False
    seen: set[str] = set()
    ordered: list[str] = []
    for r in refs:
        if r is None:
            repaired = True
        elif r in seen:
            repaired = True
        else:
            seen.add(r)
            ordered.append(r)
    if 2 * len(ordered) < baseline.k or not ordered:
        raise UnparseableRankingError(
            f"recognised {len(ordered)} of {baseline.k} candidates in response: {response_text[:120]!r}"
        )
    missing = [i for i in baseline.item_ids if i not in seen]
    if missing:
        repaired = True
        ordered.extend(missing)
    return ParsedRanking(tuple(ordered), repaired)


def rerank_request(profile: UserProfile, baseline: BaselineRanking, scope: str = "") -> ChatRequest:
    user = T.RERANK_AGP_USER.format(
        profile_header=T.PROFILE_HEADER,
        profile=profile.text,
        candidates_header=T.CANDIDATES_HEADER,
        candidates=T.candidate_lines(baseline.items),
        k=baseline.k,
    )
    return ChatRequest.build("rerank", T.RERANK_SYSTEM, user, scope=scope)


def direct_request(user: UserRecord, baseline: BaselineRanking, mode: str, scope: str = "") -> ChatRequest:
    body = T.RERANK_DIR_USER.format(
        history_header=T.HISTORY_HEADER,
        history=T.numbered(user.titles),
        candidates_header=T.CANDIDATES_HEADER,
        candidates=T.candidate_lines(baseline.items),
        k=baseline.k,
    )
    system = T.COT_SYSTEM if mode == "cot" else T.RERANK_SYSTEM
    return ChatRequest.build("rerank", system, body, scope=scope)


def rerank_with_profile(
    profile: UserProfile, baseline: BaselineRanking, gateway: Gateway, scope: str = ""
) -> RerankedList:
    if profile.user_id != baseline.user_id:
        raise UserMismatchError(f"profile for {profile.user_id!r}, ranking for {baseline.user_id!r}")
    if not baseline.items:
        raise ValueError("baseline ranking is empty")
    resp = gateway.complete(rerank_request(profile, baseline, scope))
    parsed = parse_ranking(resp.text, baseline)
    return RerankedList(baseline.user_id, parsed.items, "agp", parsed.repair_applied, profile.prompt_version)


def rerank_direct(
    user: UserRecord, baseline: BaselineRanking, mode: str, gateway: Gateway, scope: str = ""
) -> RerankedList:
    """Single-pass baselines: ``dir`` (plain prompt) or ``cot`` (chain of thought)."""
    if mode not in ("dir", "cot"):
        raise ValueError(f"direct rerank mode must be 'dir' or 'cot', got {mode!r}")
    if user.user_id != baseline.user_id:
        raise UserMismatchError(f"user {user.user_id!r}, ranking for {baseline.user_id!r}")
    if not baseline.items:
        raise ValueError("baseline ranking is empty")
    resp = gateway.complete(direct_request(user, baseline, mode, scope))
    parsed = parse_ranking(resp.text, baseline)
    return RerankedList(baseline.user_id, parsed.items, mode, parsed.repair_applied)


def rerank_base(baseline: BaselineRanking) -> RerankedList:
    return RerankedList(baseline.user_id, tuple(baseline.item_ids), "base")
