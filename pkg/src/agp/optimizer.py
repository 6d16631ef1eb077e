"""Batched prompt optimization: weighted feedback summaries, textual updates, epochs."""

from __future__ import annotations

import csv
import io
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

from . import templates as T
from .dataset import DatasetBundle, TitleIndex, truncate_history, validation_ranking
from .feedback import FeedbackSet, batch_weight, compute_feedback, verbalize_feedback
from .gateway import AuthError, CallLedger, ChatRequest, Gateway, GatewayError
from .metrics import MetricReport, UserResult, build_report, score_user
from .profile import EmptyResponseError, PromptState, PromptStore, generate_profile, seed_prompt
from .rerank import (
    RerankedList,
    UnparseableRankingError,
    rerank_base,
    rerank_direct,
    rerank_with_profile,
)

log = logging.getLogger(__name__)

X = TypeVar("X")
Y = TypeVar("Y")

LABELS = ("HIGH", "MED", "LOW")
METRIC_COLUMNS = ("epoch", "split", "ndcg@10", "avg_pos", "repair_rate")


class ConfigError(ValueError):
    pass


class TrainingAborted(RuntimeError):
    """Unrecoverable gateway failure; ``state`` is persisted and resumable."""

    def __init__(self, message: str, state: "RunState"):
        super().__init__(message)
        self.state = state


@dataclass
class TrainConfig:
    batch_size: int = 10
    history_len: int = 5
    max_epochs: int = 10
    patience: int = 3
    summarization_enabled: bool = True
    pbf_enabled: bool = True
    seed: int = 0
    parallelism: int = 1
    k: int = 10
    # whose validation items drive early stopping: "eval" or "train" users
    validation_users: str = "eval"

    def validate(self) -> None:
        for name in ("batch_size", "history_len", "max_epochs", "patience", "parallelism", "k"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.validation_users not in ("eval", "train"):
            raise ConfigError("validation_users must be 'eval' or 'train'")


@dataclass(frozen=True)
class Batch:
    epoch: int
    index: int
    user_ids: tuple[str, ...]

    @property
    def scope(self) -> str:
        return f"train/e{self.epoch}/b{self.index}"


@dataclass(frozen=True)
class BatchFeedbackSummary:
    text: str
    contributing: tuple[tuple[str, float], ...]
    batch_wt: float
    presented: str = ""


@dataclass(frozen=True)
class TextualGradient:
    instruction_text: str
    intensity: str


def intensity_for(batch_wt: float) -> str:
    if batch_wt >= 1.0 - 1e-12:
        return "none"
    if batch_wt >= 0.5:
        return "light"
    if batch_wt >= 0.2:
        return "moderate"
    return "aggressive"


def _pmap(fn: Callable[[X], Y], xs: Sequence[X], parallelism: int) -> list[Y]:
    if parallelism <= 1 or len(xs) <= 1:
        return [fn(x) for x in xs]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(fn, xs))


def weighted_blocks(feedbacks: Sequence[FeedbackSet]) -> str:
    """Diagnoses sorted by descending weight, each tagged with its tercile label."""
    ordered = sorted(feedbacks, key=lambda f: (-f.weight, f.user_id))
    n = len(ordered)
    blocks = []
    for rank, fs in enumerate(ordered):
        label = LABELS[rank * 3 // n]
        blocks.append(f"[{label} w={fs.weight:.3f}] user {fs.user_id}\n{fs.diagnosis}")
    return "\n\n".join(blocks)


def summarize_batch(
    feedbacks: Sequence[FeedbackSet], cfg: TrainConfig, gateway: Gateway, scope: str = ""
) -> BatchFeedbackSummary:
    presented = weighted_blocks(feedbacks)
    contributing = tuple((f.user_id, f.weight) for f in feedbacks)
    wt = batch_weight(feedbacks)
    if not cfg.summarization_enabled:
        return BatchFeedbackSummary(presented, contributing, wt, presented)
    req = ChatRequest.build(
        "summarize",
        T.SUMMARIZE_SYSTEM,
        T.SUMMARIZE_USER.format(n=len(feedbacks), blocks=presented),
        scope=scope,
    )
    text = gateway.complete(req).text.strip()
    return BatchFeedbackSummary(text, contributing, wt, presented)


def textual_gradient(summary: BatchFeedbackSummary) -> TextualGradient:
    intensity = intensity_for(summary.batch_wt)
    if intensity == "none":
        return TextualGradient("", intensity)
    return TextualGradient(T.INTENSITY_DIRECTIVES[intensity].format(wt=summary.batch_wt), intensity)


_FENCE = re.compile(r"^```[a-zA-Z]*\n(.*?)\n```$", re.S)


def _clean_prompt(text: str) -> str:
    text = text.strip()
    m = _FENCE.match(text)
    if m:
        text = m.group(1).strip()
    if text.startswith(T.PROMPT_OPEN) and text.endswith(T.PROMPT_CLOSE):
        text = text[len(T.PROMPT_OPEN) : -len(T.PROMPT_CLOSE)].strip()
    return text


def _digest(summary: str, limit: int = 160) -> str:
    flat = " ".join(summary.split())
    return flat if len(flat) <= limit else flat[: limit - 3] + "..."


def apply_update(
    prompt: PromptState,
    summary: BatchFeedbackSummary,
    cfg: TrainConfig,
    gateway: Gateway,
    scope: str = "",
) -> PromptState:
    """One optimize call; returns ``prompt`` itself when nothing changes."""
    if not summary.text.strip():
        raise ValueError("empty feedback summary")
    grad = textual_gradient(summary)
    if grad.intensity == "none":
        return prompt
    body = T.OPTIMIZE_USER.format(
        prompt_open=T.PROMPT_OPEN,
        prompt=prompt.text,
        prompt_close=T.PROMPT_CLOSE,
        summary_open=T.SUMMARY_OPEN,
        summary=summary.text,
        summary_close=T.SUMMARY_CLOSE,
        directive=grad.instruction_text,
    )
    resp = gateway.complete(ChatRequest.build("optimize", T.OPTIMIZE_SYSTEM, body, scope=scope))
    new_text = _clean_prompt(resp.text)
    if not new_text or new_text == prompt.text.strip():
        log.info("optimizer returned a degenerate update (%s); prompt kept at v%d", scope, prompt.version)
        return prompt
    return prompt.child(new_text, _digest(summary.text))


@dataclass
class RunState:
    prompts: list[PromptState]
    metrics: list[dict] = field(default_factory=list)
    best_version: int = 0
    best_score: float | None = None
    epoch: int = 1
    batch_cursor: int = 0
    stale_epochs: int = 0
    partial: dict = field(default_factory=dict)
    ledger: dict = field(default_factory=dict)
    finished: bool = False
    stop_reason: str = ""

    @property
    def prompt(self) -> PromptState:
        return self.prompts[-1]

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunState":
        d = json.loads(text)
        d["prompts"] = [PromptState(**p) for p in d["prompts"]]
        return cls(**d)

    def validation_history(self) -> list[float]:
        return [m["ndcg@10"] for m in self.metrics if m["split"] == "validation"]

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for m in self.metrics:
            w.writerow(
                [m["epoch"], m["split"], f"{m['ndcg@10']:.6f}", f"{m['avg_pos']:.6f}", f"{m['repair_rate']:.6f}"]
            )
        return buf.getvalue()


class RunDir:
    """prompts/, metrics.csv, ledger.csv, feedback.log and run.json under one root."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.prompts = PromptStore(self.root / "prompts")

    @property
    def state_path(self) -> Path:
        return self.root / "run.json"

    def load_state(self) -> RunState:
        return RunState.from_json(self.state_path.read_text(encoding="utf-8"))

    def save_state(self, state: RunState, ledger: CallLedger) -> None:
        state.ledger = ledger.snapshot()
        tmp = self.state_path.with_suffix(".tmp")
        tmp.write_text(state.to_json(), encoding="utf-8")
        tmp.replace(self.state_path)
        (self.root / "metrics.csv").write_text(state.metrics_csv(), encoding="utf-8")
        (self.root / "ledger.csv").write_text(ledger.to_csv(), encoding="utf-8")

    def log_feedback(self, lines: Iterable[str]) -> None:
        with (self.root / "feedback.log").open("a", encoding="utf-8") as fh:
            for line in lines:
                fh.write(line + "\n")


def epoch_batches(train_ids: Sequence[str], cfg: TrainConfig, epoch: int) -> list[Batch]:
    rng = np.random.default_rng([cfg.seed, epoch])
    order = [train_ids[i] for i in rng.permutation(len(train_ids))]
    return [
        Batch(epoch, j, tuple(order[s : s + cfg.batch_size]))
        for j, s in enumerate(range(0, len(order), cfg.batch_size))
    ]


def _validation_ids(bundle: DatasetBundle, cfg: TrainConfig) -> list[str]:
    ids = bundle.eval if cfg.validation_users == "eval" and bundle.eval else bundle.train
    return list(ids)


def score_validation(
    bundle: DatasetBundle,
    prompt: PromptState,
    cfg: TrainConfig,
    gateway: Gateway,
    scope: str,
    titles: TitleIndex | None = None,
) -> list[UserResult]:
    """Profile + rerank with ``prompt``, scoring each user's validation item."""
    titles = titles or TitleIndex.from_bundle(bundle)

    def one(uid: str) -> UserResult:
        user = truncate_history(bundle.user(uid), cfg.history_len)
        title = user.validation_title or titles.get(user.validation_item)
        ranking = validation_ranking(user, bundle.ranking(uid), title)
        profile = generate_profile(user, prompt, gateway, scope)
        rr = rerank_with_profile(profile, ranking, gateway, scope)
        return score_user(
            uid, rr.items, [user.validation_item], "agp", k=cfg.k,
            repair_applied=rr.repair_applied, prompt_version=prompt.version,
        )

    return _pmap(one, _validation_ids(bundle, cfg), cfg.parallelism)


def _row(epoch: int, split: str, ndcg: float, avg_pos: float, repair: float) -> dict:
    return {"epoch": epoch, "split": split, "ndcg@10": ndcg, "avg_pos": avg_pos, "repair_rate": repair}


def run_batch(
    bundle: DatasetBundle,
    batch: Batch,
    prompt: PromptState,
    cfg: TrainConfig,
    gateway: Gateway,
) -> tuple[PromptState, list[FeedbackSet], list[RerankedList]]:
    """Profiles, reranks, feedback, summary and one prompt update for a batch."""
    scope = batch.scope
    users = [truncate_history(bundle.user(u), cfg.history_len) for u in batch.user_ids]
    rankings = [bundle.ranking(u) for u in batch.user_ids]
    profiles = _pmap(lambda u: generate_profile(u, prompt, gateway, scope), users, cfg.parallelism)
    reranked = _pmap(
        lambda pr: rerank_with_profile(pr[0], pr[1], gateway, scope),
        list(zip(profiles, rankings)),
        cfg.parallelism,
    )
    raw = [compute_feedback(rr, u.ground_truth, cfg.k) for rr, u in zip(reranked, users)]

    def verbalize(i: int) -> FeedbackSet:
        return verbalize_feedback(
            raw[i], profiles[i], gateway,
            user=users[i], baseline=rankings[i], reranked=reranked[i],
            prompt=prompt, pbf=cfg.pbf_enabled, scope=scope,
        )

    feedbacks = _pmap(verbalize, list(range(len(users))), cfg.parallelism)
    summary = summarize_batch(feedbacks, cfg, gateway, scope)
    new_prompt = apply_update(prompt, summary, cfg, gateway, scope)
    return new_prompt, feedbacks, reranked


def train(
    bundle: DatasetBundle,
    cfg: TrainConfig,
    gateway: Gateway,
    *,
    run_dir: str | Path | None = None,
    seed: PromptState | None = None,
    state: RunState | None = None,
    on_epoch: Callable[[int, dict, dict], None] | None = None,
) -> RunState:
    """Optimize the profile prompt on ``bundle.train``.

    Pass ``state`` (e.g. ``RunDir(...).load_state()``) to resume. Stops at
    ``cfg.max_epochs`` or after ``cfg.patience`` epochs without a validation
    NDCG@10 improvement.
    """
    cfg.validate()
    train_ids = list(bundle.train)
    if not train_ids:
        raise ConfigError("bundle has no train users")
    if cfg.batch_size > len(train_ids):
        raise ConfigError(f"batch_size={cfg.batch_size} exceeds {len(train_ids)} train users")
    missing = [u for u in train_ids if u not in bundle.rankings]
    if missing:
        raise ConfigError(f"train users without baseline rankings: {missing[:5]}")

    rd = RunDir(run_dir) if run_dir is not None else None
    if state is None:
        state = RunState(prompts=[seed or seed_prompt()])
        if rd:
            rd.prompts.save(state.prompt)
    elif state.ledger and gateway.ledger.total == 0:
        gateway.ledger = CallLedger.from_snapshot(state.ledger)
    titles = TitleIndex.from_bundle(bundle)

    def persist():
        if rd:
            rd.save_state(state, gateway.ledger)

    while not state.finished and state.epoch <= cfg.max_epochs:
        epoch = state.epoch
        acc = state.partial or {"ndcg": 0.0, "pos": 0.0, "repair": 0, "n": 0}
        for batch in epoch_batches(train_ids, cfg, epoch)[state.batch_cursor :]:
            try:
                new_prompt, feedbacks, reranked = run_batch(bundle, batch, state.prompt, cfg, gateway)
            except GatewayError as exc:
                state.partial = acc
                persist()
                raise TrainingAborted(f"epoch {epoch} batch {batch.index}: {exc}", state) from exc
            for fs, rr in zip(feedbacks, reranked):
                acc["ndcg"] += fs.ndcg
                acc["pos"] += fs.avg_pos
                acc["repair"] += int(rr.repair_applied)
                acc["n"] += 1
            if new_prompt is not state.prompt:
                state.prompts.append(new_prompt)
                if rd:
                    rd.prompts.save(new_prompt)
            if rd:
                rd.log_feedback(fs.log_record(epoch, batch.index) for fs in feedbacks)
            state.batch_cursor = batch.index + 1
            state.partial = acc
            persist()

        n = acc["n"]
        train_row = _row(epoch, "train", acc["ndcg"] / n, acc["pos"] / n, acc["repair"] / n)
        try:
            results = score_validation(bundle, state.prompt, cfg, gateway, f"validation/e{epoch}", titles)
        except GatewayError as exc:
            persist()
            raise TrainingAborted(f"validation after epoch {epoch}: {exc}", state) from exc
        rep = build_report(results, "agp")
        val_row = _row(epoch, "validation", rep.mean_ndcg_at_k, rep.mean_gt_position, rep.repair_rate)
        state.metrics.extend([train_row, val_row])

        if state.best_score is None or rep.mean_ndcg_at_k > state.best_score + 1e-12:
            state.best_score = rep.mean_ndcg_at_k
            state.best_version = state.prompt.version
            state.stale_epochs = 0
        else:
            state.stale_epochs += 1
        log.info(
            "epoch %d: train N@10 %.4f, validation N@10 %.4f, prompt v%d",
            epoch, train_row["ndcg@10"], val_row["ndcg@10"], state.prompt.version,
        )
        if on_epoch:
            on_epoch(epoch, train_row, val_row)

        state.epoch += 1
        state.batch_cursor = 0
        state.partial = {}
        if state.stale_epochs >= cfg.patience:
            state.finished = True
            state.stop_reason = f"no validation improvement for {cfg.patience} epoch(s)"
        elif state.epoch > cfg.max_epochs:
            state.finished = True
            state.stop_reason = f"reached max_epochs={cfg.max_epochs}"
        persist()
    return state


def best_prompt(state: RunState) -> PromptState:
    return next(p for p in state.prompts if p.version == state.best_version)


@dataclass
class EvalOutcome:
    report: MetricReport
    reranked: list[RerankedList]


def evaluate_run(
    bundle: DatasetBundle,
    prompt: PromptState | None,
    mode: str,
    gateway: Gateway | None,
    *,
    history_len: int = 5,
    k: int = 10,
    parallelism: int = 1,
) -> EvalOutcome:
    """Rerank every eval user in ``mode`` and score the ground truth."""
    if mode not in ("agp", "dir", "cot", "base"):
        raise ValueError(f"unknown mode {mode!r}")
    if not bundle.eval:
        raise ValueError("eval split is empty")
    if mode == "agp" and prompt is None:
        raise ValueError("agp mode needs a prompt")
    if mode != "base" and gateway is None:
        raise ValueError(f"{mode} mode needs a gateway")
    scope = f"eval/{mode}"

    def one(uid: str) -> tuple[RerankedList | None, UserResult | None]:
        user = truncate_history(bundle.user(uid), history_len)
        ranking = bundle.ranking(uid)
        try:
            if mode == "base":
                rr = rerank_base(ranking)
            elif mode == "agp":
                profile = generate_profile(user, prompt, gateway, scope)
                rr = rerank_with_profile(profile, ranking, gateway, scope)
            else:
                rr = rerank_direct(user, ranking, mode, gateway, scope)
        except AuthError:
            raise
        except (GatewayError, UnparseableRankingError, EmptyResponseError) as exc:
            log.warning("eval %s failed for %s: %s", mode, uid, exc)
            return None, None
        res = score_user(
            uid, rr.items, list(user.ground_truth), mode, k=k,
            repair_applied=rr.repair_applied,
            prompt_version=prompt.version if mode == "agp" else None,
        )
        return rr, res

    out = _pmap(one, list(bundle.eval), parallelism)
    results = [r for _, r in out if r is not None]
    lists = [rr for rr, _ in out if rr is not None]
    return EvalOutcome(build_report(results, mode, n_failed=len(out) - len(results)), lists)
