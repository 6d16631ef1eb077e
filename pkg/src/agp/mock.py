"""Deterministic stand-in for a chat model over synthetic genre-tagged worlds.

Every response is a pure function of the request text. The profile call
extracts genres from the bracketed tags in history titles; how well it does
so depends on which control tokens appear in the profile-generation prompt:

FOCUS_RECURRING_GENRES       keep only genres seen in two or more titles
WEIGHT_RECENT_ITEMS          weight titles by recency
IGNORE_NOISE_TITLES          drop titles that share no genre with the rest
RANK_BY_PREFERENCE_STRENGTH  emit graded genre weights instead of a flat list

The loss call names the missing tokens next to each misplaced ground-truth
item; the optimize call only acts on statements that carry a position, so
metric-only feedback never moves the prompt.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

from . import templates as T
from .dataset import SyntheticWorldSpec
from .gateway import ChatRequest, ChatResponse

CONTROL_TOKENS = (
    "FOCUS_RECURRING_GENRES",
    "WEIGHT_RECENT_ITEMS",
    "IGNORE_NOISE_TITLES",
    "RANK_BY_PREFERENCE_STRENGTH",
)

TOKEN_HINTS = {
    "FOCUS_RECURRING_GENRES": "build the profile around genres that recur across several titles",
    "WEIGHT_RECENT_ITEMS": "give recent interactions more weight than old ones",
    "IGNORE_NOISE_TITLES": "set aside one-off titles that match nothing else in the history",
    "RANK_BY_PREFERENCE_STRENGTH": "state how strongly each genre is preferred, strongest first",
}

GENRE_TAG = re.compile(r"\[([a-z0-9 ]+)\]\s*$")
POSITION = re.compile(r"position (\d+), target (\d+)")
PIN_RULE = re.compile(r'when the history includes "(.+?)", rank "(.+?)" first')
CANDIDATE = re.compile(r"^\[(\d+)\] (.*) \(id: (.+)\)$")
NUMBERED = re.compile(r"^\d+\.\s+(.*)$")
BLOCK_HEAD = re.compile(r"^\[(HIGH|MED|LOW) w=([0-9.]+)\] user (\S+)$")
PIN_BOOST = 1000.0


@dataclass(frozen=True)
class MockWorldState:
    spec: SyntheticWorldSpec | None = None
    control_tokens: tuple[str, ...] = CONTROL_TOKENS
    hints: dict = field(default_factory=lambda: dict(TOKEN_HINTS), compare=False, hash=False)


def genres_of(title: str) -> list[str]:
    m = GENRE_TAG.search(title)
    return m.group(1).split() if m else []


def _section(text: str, header: str) -> list[str]:
    """Lines after ``header`` up to the next blank line."""
    lines = text.splitlines()
    try:
        start = next(i for i, line in enumerate(lines) if line.strip().startswith(header))
    except StopIteration:
        return []
    out = []
    for line in lines[start + 1 :]:
        if not line.strip():
            break
        out.append(line.rstrip())
    return out


def _between(text: str, open_: str, close: str) -> str:
    i = text.find(open_)
    j = text.find(close, i + len(open_)) if i >= 0 else -1
    if i < 0 or j < 0:
        return ""
    return text[i + len(open_) : j].strip("\n")


def _history(text: str) -> list[str]:
    out = []
    for line in _section(text, T.HISTORY_HEADER):
        m = NUMBERED.match(line.strip())
        out.append(m.group(1) if m else line.strip())
    return out


def _pins(prompt: str) -> list[tuple[str, str]]:
    return [(m.group(1), m.group(2)) for m in PIN_RULE.finditer(prompt)]


@dataclass
class Extraction:
    genres: list[tuple[str, float]]
    graded: bool
    favored: list[str]


def extract(titles: list[str], tokens: set[str], pins=()) -> Extraction:
    tagged = [genres_of(t) for t in titles]
    n = len(titles)
    occurrences = Counter(g for gs in tagged for g in set(gs))
    outlier = [bool(gs) and all(occurrences[g] == 1 for g in gs) for gs in tagged]
    use = [i for i in range(n) if not ("IGNORE_NOISE_TITLES" in tokens and outlier[i])]
    if not use:
        use = list(range(n))

    score: dict[str, float] = {}
    count: Counter[str] = Counter()
    first_seen: dict[str, int] = {}
    for i in use:
        w = (i + 1) / n if "WEIGHT_RECENT_ITEMS" in tokens else 1.0
        for g in tagged[i]:
            score[g] = score.get(g, 0.0) + w
            count[g] += 1
            first_seen.setdefault(g, i)

    kept = list(score)
    if "FOCUS_RECURRING_GENRES" in tokens and kept:
        recurring = [g for g in kept if count[g] >= 2]
        if recurring:
            kept = recurring
        else:
            top = max(count[g] for g in kept)
            kept = [g for g in kept if count[g] == top]

    if {"FOCUS_RECURRING_GENRES", "RANK_BY_PREFERENCE_STRENGTH"} & tokens:
        kept.sort(key=lambda g: (-score[g], first_seen[g], g))
    else:
        kept.sort(key=lambda g: (first_seen[g], g))

    graded = "RANK_BY_PREFERENCE_STRENGTH" in tokens
    genres = [(g, round(score[g], 2) if graded else 1.0) for g in kept]
    history = set(titles)
    favored = [target for trigger, target in pins if trigger in history]
    return Extraction(genres, graded, favored)


def render_profile(ex: Extraction) -> str:
    if not ex.genres:
        line = "Preferred genres: (none identified)"
    elif ex.graded:
        line = "Preferred genres: " + ", ".join(f"{g} ({w:.2f})" for g, w in ex.genres)
    else:
        line = "Preferred genres: " + ", ".join(g for g, _ in ex.genres)
    lines = [line]
    lines.extend(f'Favor: "{t}"' for t in ex.favored)
    return "\n".join(lines)


def parse_profile(lines: list[str]) -> tuple[dict[str, float], list[str]]:
    weights: dict[str, float] = {}
    favored = []
    for line in lines:
        if line.startswith("Preferred genres:"):
            body = line.split(":", 1)[1].strip()
            if body.startswith("(none"):
                continue
            for part in body.split(","):
                m = re.match(r"\s*([a-z0-9]+)(?:\s*\(([0-9.]+)\))?\s*$", part)
                if m:
                    weights[m.group(1)] = float(m.group(2)) if m.group(2) else 1.0
        elif line.startswith("Favor:"):
            favored.append(line.split(":", 1)[1].strip().strip('"'))
    return weights, favored


def _mock_profile(req: ChatRequest, world: MockWorldState) -> str:
    prompt = req.system
    tokens = {t for t in world.control_tokens if t in prompt}
    return render_profile(extract(_history(req.user), tokens, _pins(prompt)))


def _mock_rerank(req: ChatRequest, world: MockWorldState) -> str:
    text = req.user
    cands = []
    for line in _section(text, T.CANDIDATES_HEADER):
        m = CANDIDATE.match(line.strip())
        if m:
            cands.append((int(m.group(1)), m.group(2), m.group(3)))
    if T.PROFILE_HEADER in text:
        weights, favored = parse_profile(_section(text, T.PROFILE_HEADER))
    else:
        ex = extract(_history(text), set())
        weights, favored = dict(ex.genres), []

    def score(c):
        _, title, _ = c
        s = sum(weights.get(g, 0.0) for g in genres_of(title))
        return s + (PIN_BOOST if title in favored else 0.0)

    ranked = sorted(cands, key=lambda c: (-score(c), c[2]))
    if T.FINAL_MARKER in req.system:
        top = ranked[0][1] if ranked else "nothing"
        liked = ", ".join(weights) or "no clear genres"
        return (
            f"Step 1: the history points to {liked}.\n"
            f"Step 2: candidates sharing those genres go first; \"{top}\" fits best.\n"
            f"{T.FINAL_MARKER} " + ",".join(str(c[0]) for c in ranked)
        )
    return "\n".join(f"{i}. [{c[0]}]" for i, c in enumerate(ranked, start=1))


def _missing_tokens(prompt: str, world: MockWorldState) -> list[str]:
    return [t for t in world.control_tokens if t not in prompt]


def _outliers(titles: list[str]) -> list[str]:
    tagged = [genres_of(t) for t in titles]
    occ = Counter(g for gs in tagged for g in set(gs))
    return [t for t, gs in zip(titles, tagged) if gs and all(occ[g] == 1 for g in gs)]


def _mock_loss(req: ChatRequest, world: MockWorldState) -> str:
    text = req.user
    prompt = _between(text, T.PROMPT_OPEN, T.PROMPT_CLOSE)
    missing = _missing_tokens(prompt, world)
    if T.FEEDBACK_HEADER not in text:
        m = re.search(r"NDCG@10 = ([0-9.]+)", text)
        ndcg = float(m.group(1)) if m else 0.0
        if ndcg >= 1.0:
            return f"- NDCG@10 is {ndcg:.4f}; no correction needed."
        lines = [f"- NDCG@10 is {ndcg:.4f}; the profile under-ranks what the user chose next."]
        lines += [f"- Consider {t} ({world.hints.get(t, '')})." for t in missing]
        return "\n".join(lines)

    pairs = []
    for line in _section(text, T.FEEDBACK_HEADER):
        m = re.match(r'^- "(.*)" \(id: (.+)\): position (\d+), target (\d+)$', line.strip())
        if m:
            pairs.append((m.group(1), m.group(2), int(m.group(3)), int(m.group(4))))
    lines = []
    for title, item_id, actual, target in pairs:
        if actual == target:
            lines.append(f'- "{title}" (id: {item_id}) is at position {actual}, target {target}; no correction needed.')
        else:
            lines.append(f'- "{title}" (id: {item_id}) is at position {actual}, target {target}.')
    wrong = [p for p in pairs if p[2] != p[3]]
    if not wrong:
        return "- No correction needed: every ground-truth item is at its target position."
    title, _, actual, target = max(wrong, key=lambda p: (p[2] - p[3], p[1]))
    for t in missing:
        lines.append(
            f"- Ground truth at position {actual}, target {target}: apply {t} ({world.hints.get(t, '')})."
        )
    odd = _outliers(_history(text))
    if odd:
        lines.append(
            f'- Ground truth at position {actual}, target {target}: '
            f'when the history includes "{odd[0]}", rank "{title}" first.'
        )
    return "\n".join(lines)


def _blocks(text: str) -> list[tuple[str, float, str, list[str]]]:
    blocks = []
    for line in text.splitlines():
        m = BLOCK_HEAD.match(line.strip())
        if m:
            blocks.append((m.group(1), float(m.group(2)), m.group(3), []))
        elif blocks and line.strip():
            blocks[-1][3].append(line.strip())
    return blocks


def _mock_summarize(req: ChatRequest, world: MockWorldState) -> str:
    blocks = _blocks(req.user)
    token_evidence: dict[str, list[tuple[str, int, int]]] = {}
    support: dict[str, set[str]] = {}
    order: list[str] = []
    for label, _, uid, lines in blocks:
        for line in lines:
            stmt = line.lstrip("- ").strip()
            named = [t for t in world.control_tokens if t in stmt]
            pos = POSITION.search(stmt)
            if named:
                for t in named:
                    if pos:
                        token_evidence.setdefault(t, []).append((label, int(pos.group(1)), int(pos.group(2))))
                    else:
                        token_evidence.setdefault(t, [])
                continue
            if stmt not in support:
                support[stmt] = set()
                order.append(stmt)
            support[stmt].add(uid)

    out = []
    for t in world.control_tokens:
        if t not in token_evidence:
            continue
        ev = token_evidence[t]
        if ev:
            label = min((e[0] for e in ev), key=("HIGH", "MED", "LOW").index)
            worst = max(ev, key=lambda e: e[1] - e[2])
            out.append(
                f"- Apply {t} ({label}; {len(ev)} users; worst at position {worst[1]}, target {worst[2]})."
            )
        else:
            out.append(f"- Consider {t}.")
    dropped = 0
    for stmt in order:
        user_specific = bool(POSITION.search(stmt)) or '"' in stmt
        if user_specific and len(support[stmt]) < 2:
            dropped += 1
            continue
        out.append(f"- {stmt}")
    if dropped:
        out.append(f"- Set aside {dropped} user-specific note(s).")
    return "\n".join(out) if out else "- No changes needed."


def _mock_optimize(req: ChatRequest, world: MockWorldState) -> str:
    text = req.user
    prompt = _between(text, T.PROMPT_OPEN, T.PROMPT_CLOSE)
    summary = _between(text, T.SUMMARY_OPEN, T.SUMMARY_CLOSE)
    eligible = [line for line in summary.splitlines() if POSITION.search(line)]
    named = {t for line in eligible for t in world.control_tokens if t in line}
    for t in world.control_tokens:
        if t in named and t not in prompt:
            return f"{prompt}\n- {t}: {world.hints.get(t, '')}."
    present = set(_pins(prompt))
    for line in eligible:
        m = PIN_RULE.search(line)
        if m and (m.group(1), m.group(2)) not in present:
            return f'{prompt}\n- PIN: when the history includes "{m.group(1)}", rank "{m.group(2)}" first.'
    return prompt


_HANDLERS = {
    "profile": _mock_profile,
    "rerank": _mock_rerank,
    "loss": _mock_loss,
    "summarize": _mock_summarize,
    "optimize": _mock_optimize,
}


def mock_complete(request: ChatRequest, world: MockWorldState) -> ChatResponse:
    try:
        handler = _HANDLERS[request.purpose]
    except KeyError:
        raise ValueError(f"mock backend does not recognise purpose {request.purpose!r}") from None
    return ChatResponse(text=handler(request, world))


class MockBackend:
    def __init__(self, world: MockWorldState | None = None):
        self.world = world or MockWorldState()

    def send(self, request: ChatRequest) -> ChatResponse:
        return mock_complete(request, self.world)
