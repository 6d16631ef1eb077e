"""The shared profile-generation prompt, its lineage, and per-user profiles."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from . import templates as T
from .dataset import UserRecord
from .gateway import ChatRequest, Gateway

BUILTIN_TEMPLATES = {"default": T.DEFAULT_SEED_PROMPT}


class MissingTemplateError(LookupError):
    pass


class EmptyResponseError(RuntimeError):
    pass


@dataclass(frozen=True)
class PromptState:
    text: str
    version: int = 0
    parent_version: int | None = None
    created_by: str = "seed"
    note: str = ""

    def child(self, text: str, note: str = "") -> "PromptState":
        return PromptState(text, self.version + 1, self.version, "optimizer", note)

    def lineage_record(self) -> dict:
        d = asdict(self)
        d.pop("text")
        return d


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    text: str
    prompt_version: int


def seed_prompt(template: str = "default") -> PromptState:
    """Version-0 prompt from a built-in template name or a file path."""
    if template in BUILTIN_TEMPLATES:
        return PromptState(BUILTIN_TEMPLATES[template])
    path = Path(template)
    if path.is_file():
        return PromptState(path.read_text(encoding="utf-8"))
    raise MissingTemplateError(f"no built-in template or file named {template!r}")


def profile_request(user: UserRecord, prompt: PromptState, scope: str = "") -> ChatRequest:
    history = T.numbered(user.titles)
    return ChatRequest.build(
        "profile",
        prompt.text,
        T.PROFILE_USER.format(header=T.HISTORY_HEADER, history=history),
        scope=scope,
    )


def generate_profile(
    user: UserRecord, prompt: PromptState, gateway: Gateway, scope: str = ""
) -> UserProfile:
    if not user.history:
        raise ValueError(f"user {user.user_id!r} has an empty history")
    resp = gateway.complete(profile_request(user, prompt, scope))
    text = resp.text.strip()
    if not text:
        raise EmptyResponseError(f"blank profile for user {user.user_id!r}")
    return UserProfile(user.user_id, text, prompt.version)


class PromptStore:
    """Checkpoints as ``prompt_v{n}.txt`` plus a ``lineage.jsonl`` index."""

    def __init__(self, directory: str | Path):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)

    @property
    def index_path(self) -> Path:
        return self.dir / "lineage.jsonl"

    def save(self, state: PromptState) -> None:
        (self.dir / f"prompt_v{state.version}.txt").write_text(state.text, encoding="utf-8")
        existing = {r["version"] for r in self._records()}
        if state.version not in existing:
            with self.index_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(state.lineage_record(), sort_keys=True) + "\n")

    def _records(self) -> list[dict]:
        if not self.index_path.exists():
            return []
        lines = self.index_path.read_text(encoding="utf-8").splitlines()
        return [json.loads(x) for x in lines if x.strip()]

    def versions(self) -> list[int]:
        return sorted(r["version"] for r in self._records())

    def load(self, version: int) -> PromptState:
        recs = {r["version"]: r for r in self._records()}
        if version not in recs:
            raise MissingTemplateError(f"no checkpoint for prompt version {version}")
        text = (self.dir / f"prompt_v{version}.txt").read_text(encoding="utf-8")
        r = recs[version]
        return PromptState(text, r["version"], r["parent_version"], r["created_by"], r["note"])

    def lineage(self) -> list[PromptState]:
        return [self.load(v) for v in self.versions()]
