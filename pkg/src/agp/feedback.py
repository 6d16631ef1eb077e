"""Position-based feedback: per-item (actual, target) pairs and the derived weights."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

from . import templates as T
from .dataset import BaselineRanking, UserRecord
from .gateway import ChatRequest, Gateway
from .metrics import ndcg_at_k
from .profile import PromptState, UserProfile
from .rerank import RerankedList


class MissingGroundTruthError(ValueError):
    pass


class EmptyBatchError(ValueError):
    pass


@dataclass(frozen=True)
class FeedbackPair:
    item_id: str
    actual_pos: int
    target_pos: int

    @property
    def as_tuple(self) -> tuple[int, int]:
        return (self.actual_pos, self.target_pos)


@dataclass(frozen=True)
class FeedbackSet:
    user_id: str
    pairs: tuple[FeedbackPair, ...]
    avg_pos: float
    weight: float
    diagnosis: str = ""
    ndcg: float = field(default=0.0, compare=False)

    @property
    def at_target(self) -> bool:
        return all(p.actual_pos == p.target_pos for p in self.pairs)

    def log_record(self, epoch: int, batch_index: int) -> str:
        return json.dumps(
            {
                "user_id": self.user_id,
                "pairs": [list(p.as_tuple) for p in self.pairs],
                "avg_pos": self.avg_pos,
                "weight": self.weight,
                "diagnosis": self.diagnosis,
                "epoch": epoch,
                "batch_index": batch_index,
            },
            sort_keys=True,
        )


def compute_feedback(reranked: RerankedList, ground_truth: Sequence[str], k: int = 10) -> FeedbackSet:
    """Pairs (actual rank, target rank) for each ground-truth item.

    The j-th ground-truth item (in list order) targets rank j.
    """
    index = {item: p for p, item in enumerate(reranked.items, start=1)}
    pairs = []
    for target, item in enumerate(ground_truth, start=1):
        if item not in index:
            raise MissingGroundTruthError(
                f"ground-truth item {item!r} missing from reranked list of {reranked.user_id!r}"
            )
        pairs.append(FeedbackPair(item, index[item], target))
    if not pairs:
        raise MissingGroundTruthError(f"user {reranked.user_id!r} has no ground-truth items")
    avg_pos = sum(p.actual_pos for p in pairs) / len(pairs)
    return FeedbackSet(
        user_id=reranked.user_id,
        pairs=tuple(pairs),
        avg_pos=avg_pos,
        weight=1.0 / avg_pos,
        ndcg=ndcg_at_k(reranked.items, ground_truth, k),
    )


def batch_weight(feedbacks: Sequence[FeedbackSet]) -> float:
    """Reciprocal of the unweighted mean of per-user average positions."""
    if not feedbacks:
        raise EmptyBatchError("batch has no feedback")
    mean = sum(f.avg_pos for f in feedbacks) / len(feedbacks)
    return 1.0 / mean


def loss_request(
    fs: FeedbackSet,
    profile: UserProfile,
    user: UserRecord,
    baseline: BaselineRanking,
    reranked: RerankedList,
    prompt: PromptState,
    pbf: bool = True,
    scope: str = "",
) -> ChatRequest:
    common = dict(
        prompt_open=T.PROMPT_OPEN,
        prompt=prompt.text,
        prompt_close=T.PROMPT_CLOSE,
        history_header=T.HISTORY_HEADER,
        history=T.numbered(user.titles),
        profile_header=T.PROFILE_HEADER,
        profile=profile.text,
    )
    if not pbf:
        body = T.LOSS_USER_METRIC.format(metric_header=T.METRIC_HEADER, ndcg=fs.ndcg, **common)
        return ChatRequest.build("loss", T.LOSS_SYSTEM_METRIC, body, scope=scope)
    titles = dict(baseline.items)
    ranked = T.numbered(f"{titles.get(i, i)} (id: {i})" for i in reranked.items)
    pairs = "\n".join(
        f'- "{titles.get(p.item_id, p.item_id)}" (id: {p.item_id}): '
        f"position {p.actual_pos}, target {p.target_pos}"
        for p in fs.pairs
    )
    body = T.LOSS_USER_PBF.format(
        ranked_header=T.RANKED_HEADER,
        ranked=ranked,
        feedback_header=T.FEEDBACK_HEADER,
        pairs=pairs,
        **common,
    )
    return ChatRequest.build("loss", T.LOSS_SYSTEM, body, scope=scope)


def verbalize_feedback(
    fs: FeedbackSet,
    profile: UserProfile,
    gateway: Gateway,
    *,
    user: UserRecord,
    baseline: BaselineRanking,
    reranked: RerankedList,
    prompt: PromptState,
    pbf: bool = True,
    scope: str = "",
) -> FeedbackSet:
    """One loss call turning the pairs (or, with ``pbf`` off, only NDCG) into a diagnosis."""
    req = loss_request(fs, profile, user, baseline, reranked, prompt, pbf, scope)
    text = gateway.complete(req).text.strip()
    if pbf:
        # keep the positional signal even if the model paraphrased it away
        absent = [
            p for p in fs.pairs
            if f"position {p.actual_pos}, target {p.target_pos}" not in text
            and not (str(p.actual_pos) in text and str(p.target_pos) in text)
        ]
        if absent:
            text += "\n" + "\n".join(
                f"- {p.item_id}: position {p.actual_pos}, target {p.target_pos}." for p in absent
            )
    return replace(fs, diagnosis=text)
