"""User histories, baseline rankings, leave-one-out splitting and synthetic worlds."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_GENRES = (
    "fantasy",
    "noir",
    "scifi",
    "romance",
    "horror",
    "comedy",
    "history",
    "mystery",
)

_ADJECTIVES = (
    "Silent", "Crimson", "Hidden", "Broken", "Golden", "Last", "Distant", "Frozen",
    "Burning", "Hollow", "Secret", "Iron", "Wandering", "Fallen", "Velvet", "Shattered",
    "Quiet", "Midnight", "Pale", "Endless", "Wild", "Lost", "Bright", "Northern",
)
_NOUNS = (
    "Harbor", "Ember", "Crown", "Garden", "Signal", "River", "Empire", "Letter",
    "Machine", "Orchard", "Tower", "Voyage", "Mirror", "Engine", "Lantern", "Frontier",
    "Archive", "Meadow", "Citadel", "Circus", "Compass", "Winter", "Canyon", "Saga",
)


class DatasetError(ValueError):
    """Base class for data loading and validation failures."""


class ParseError(DatasetError):
    def __init__(self, path: str | Path, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = str(path)
        self.line_no = line_no


class ReferentialIntegrityError(DatasetError):
    def __init__(self, user_id: str, reason: str = "ranking references unknown user"):
        super().__init__(f"{reason}: {user_id!r}")
        self.user_id = user_id


class GroundTruthAbsentError(DatasetError):
    def __init__(self, user_id: str, missing: Sequence[str]):
        super().__init__(
            f"baseline ranking for {user_id!r} does not contain ground-truth item(s) {list(missing)}"
        )
        self.user_id = user_id
        self.missing = list(missing)


class TooFewInteractionsError(DatasetError):
    def __init__(self, dropped: Sequence[str]):
        super().__init__(f"users with fewer than 3 interactions: {list(dropped)}")
        self.dropped = list(dropped)


class InsufficientUsersError(DatasetError):
    pass


class InfeasibleSpecError(DatasetError):
    pass


@dataclass(frozen=True)
class InteractionRecord:
    item_id: str
    title: str
    timestamp: int

    def __post_init__(self):
        if not self.title.strip():
            raise DatasetError(f"item {self.item_id!r} has an empty title")

    def to_dict(self) -> dict:
        return {"item_id": self.item_id, "title": self.title, "timestamp": self.timestamp}


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    history: tuple[InteractionRecord, ...]
    validation_item: str
    ground_truth: tuple[str, ...]
    # optional; lets validation scoring render the item without a catalog
    validation_title: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "history", tuple(self.history))
        object.__setattr__(self, "ground_truth", tuple(self.ground_truth))
        if not self.ground_truth:
            raise DatasetError(f"user {self.user_id!r} has no ground-truth items")
        if len(set(self.ground_truth)) != len(self.ground_truth):
            raise DatasetError(f"user {self.user_id!r} has duplicate ground-truth items")
        keys = [_order_key(r) for r in self.history]
        if keys != sorted(keys):
            raise DatasetError(f"history of user {self.user_id!r} is not time-ordered")
        seen = {r.item_id for r in self.history}
        leaked = seen.intersection((self.validation_item, *self.ground_truth))
        if leaked:
            raise DatasetError(f"user {self.user_id!r}: held-out items {sorted(leaked)} appear in history")

    @property
    def titles(self) -> list[str]:
        return [r.title for r in self.history]

    def to_dict(self) -> dict:
        d = {
            "user_id": self.user_id,
            "history": [r.to_dict() for r in self.history],
            "validation_item": self.validation_item,
            "ground_truth": list(self.ground_truth),
        }
        if self.validation_title is not None:
            d["validation_title"] = self.validation_title
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "UserRecord":
        history = [
            InteractionRecord(str(h["item_id"]), str(h["title"]), int(h["timestamp"]))
            for h in d["history"]
        ]
        history.sort(key=_order_key)
        return cls(
            user_id=str(d["user_id"]),
            history=tuple(history),
            validation_item=str(d["validation_item"]),
            ground_truth=tuple(str(g) for g in d["ground_truth"]),
            validation_title=d.get("validation_title"),
        )


@dataclass(frozen=True)
class BaselineRanking:
    user_id: str
    source_model: str
    items: tuple[tuple[str, str], ...]  # (item_id, title)

    def __post_init__(self):
        object.__setattr__(self, "items", tuple((str(i), str(t)) for i, t in self.items))
        ids = self.item_ids
        if len(set(ids)) != len(ids):
            raise DatasetError(f"baseline ranking for {self.user_id!r} has duplicate items")
        for item_id, title in self.items:
            if not title.strip():
                raise DatasetError(f"baseline item {item_id!r} for {self.user_id!r} has an empty title")

    @property
    def item_ids(self) -> list[str]:
        return [i for i, _ in self.items]

    @property
    def k(self) -> int:
        return len(self.items)

    def title_of(self, item_id: str) -> str:
        return dict(self.items)[item_id]

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "source_model": self.source_model,
            "items": [{"item_id": i, "title": t} for i, t in self.items],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "BaselineRanking":
        return cls(
            user_id=str(d["user_id"]),
            source_model=str(d.get("source_model", "unknown")),
            items=tuple((str(x["item_id"]), str(x["title"])) for x in d["items"]),
        )


@dataclass(frozen=True)
class DatasetBundle:
    users: Mapping[str, UserRecord]
    rankings: Mapping[str, BaselineRanking]
    train: tuple[str, ...] = ()
    eval: tuple[str, ...] = ()
    allow_overlap: bool = False

    def __post_init__(self):
        for uid in self.rankings:
            if uid not in self.users:
                raise ReferentialIntegrityError(uid)
        for uid in (*self.train, *self.eval):
            if uid not in self.users:
                raise ReferentialIntegrityError(uid, "split references unknown user")
        if not self.allow_overlap and set(self.train) & set(self.eval):
            raise DatasetError("train and eval splits overlap")

    def user(self, user_id: str) -> UserRecord:
        return self.users[user_id]

    def ranking(self, user_id: str) -> BaselineRanking:
        return self.rankings[user_id]

    def users_jsonl(self) -> str:
        return "".join(_dumps(self.users[u].to_dict()) + "\n" for u in sorted(self.users))

    def rankings_jsonl(self) -> str:
        return "".join(_dumps(self.rankings[u].to_dict()) + "\n" for u in sorted(self.rankings))

    def to_bytes(self) -> bytes:
        return (self.users_jsonl() + "\x00" + self.rankings_jsonl()).encode("utf-8")

    def save(self, users_path: str | Path, rankings_path: str | Path) -> None:
        Path(users_path).write_text(self.users_jsonl(), encoding="utf-8")
        Path(rankings_path).write_text(self.rankings_jsonl(), encoding="utf-8")


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def _order_key(r: InteractionRecord) -> tuple[int, str]:
    # timestamp ties broken by item_id
    return (r.timestamp, r.item_id)


def _read_jsonl(path: Path) -> Iterable[tuple[int, dict]]:
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, line_no, f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ParseError(path, line_no, "expected a JSON object")
            yield line_no, obj


def load_bundle(users_path: str | Path, rankings_path: str | Path) -> DatasetBundle:
    """Load and cross-validate the users and rankings files.

    Raises ``ParseError`` (with line number), ``ReferentialIntegrityError`` or
    ``GroundTruthAbsentError``.
    """
    users_path, rankings_path = Path(users_path), Path(rankings_path)
    for p in (users_path, rankings_path):
        if not p.exists():
            raise FileNotFoundError(str(p))

    users: dict[str, UserRecord] = {}
    for line_no, obj in _read_jsonl(users_path):
        try:
            user = UserRecord.from_dict(obj)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(users_path, line_no, str(exc)) from None
        users[user.user_id] = user

    rankings: dict[str, BaselineRanking] = {}
    for line_no, obj in _read_jsonl(rankings_path):
        try:
            ranking = BaselineRanking.from_dict(obj)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(rankings_path, line_no, str(exc)) from None
        if ranking.user_id not in users:
            raise ReferentialIntegrityError(ranking.user_id)
        ids = set(ranking.item_ids)
        missing = [g for g in users[ranking.user_id].ground_truth if g not in ids]
        if missing:
            raise GroundTruthAbsentError(ranking.user_id, missing)
        rankings[ranking.user_id] = ranking

    return DatasetBundle(users=users, rankings=rankings)


def loo_split(
    raw_interactions: Mapping[str, Sequence[InteractionRecord]], strict: bool = False
) -> dict[str, UserRecord]:
    """Leave-one-out: last interaction is the test item, second-to-last validation.

    Users with fewer than three interactions are dropped with a warning, or
    rejected with ``TooFewInteractionsError`` when ``strict`` is set.
    """
    out: dict[str, UserRecord] = {}
    dropped = []
    for uid, records in raw_interactions.items():
        ordered = sorted(records, key=_order_key)
        if len(ordered) < 3:
            dropped.append(uid)
            continue
        out[uid] = UserRecord(
            user_id=uid,
            history=tuple(ordered[:-2]),
            validation_item=ordered[-2].item_id,
            ground_truth=(ordered[-1].item_id,),
            validation_title=ordered[-2].title,
        )
    if dropped:
        if strict:
            raise TooFewInteractionsError(dropped)
        log.warning("dropped %d user(s) with fewer than 3 interactions: %s", len(dropped), dropped)
    return out


def sample_split(
    bundle: DatasetBundle, n_train: int, n_eval: int, seed: int, allow_overlap: bool = False
) -> DatasetBundle:
    """Draw seeded train and eval user sets, disjoint unless ``allow_overlap``."""
    pool = sorted(u for u in bundle.users if u in bundle.rankings)
    rng = np.random.default_rng(seed)
    if allow_overlap:
        if max(n_train, n_eval) > len(pool):
            raise InsufficientUsersError(
                f"need {max(n_train, n_eval)} users with rankings, have {len(pool)}"
            )
        train = rng.permutation(pool)[:n_train]
        eval_ = rng.permutation(pool)[:n_eval]
    else:
        if n_train + n_eval > len(pool):
            raise InsufficientUsersError(
                f"need {n_train + n_eval} users with rankings, have {len(pool)}"
            )
        perm = rng.permutation(pool)
        train, eval_ = perm[:n_train], perm[n_train : n_train + n_eval]
    return DatasetBundle(
        users=bundle.users,
        rankings=bundle.rankings,
        train=tuple(str(u) for u in train),
        eval=tuple(str(u) for u in eval_),
        allow_overlap=allow_overlap,
    )


def truncate_history(user: UserRecord, max_len: int) -> UserRecord:
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if len(user.history) <= max_len:
        return user
    return UserRecord(
        user_id=user.user_id,
        history=user.history[-max_len:],
        validation_item=user.validation_item,
        ground_truth=user.ground_truth,
        validation_title=user.validation_title,
    )


def validation_ranking(user: UserRecord, ranking: BaselineRanking, title: str) -> BaselineRanking:
    """Candidate list for scoring the validation item.

    The test item is swapped for the validation item in place, so validation
    never sees the held-out test label.
    """
    if user.validation_item in ranking.item_ids:
        return ranking
    gt = set(user.ground_truth)
    items = []
    swapped = False
    for item_id, t in ranking.items:
        if item_id in gt and not swapped:
            items.append((user.validation_item, title))
            swapped = True
        elif item_id not in gt:
            items.append((item_id, t))
    return BaselineRanking(ranking.user_id, ranking.source_model, tuple(items))


# ---------------------------------------------------------------------------
# synthetic worlds


@dataclass(frozen=True)
class SyntheticWorldSpec:
    seed: int = 0
    genre_vocabulary: tuple[str, ...] = DEFAULT_GENRES
    n_users: int = 100
    n_items: int = 400
    history_length: int = 8
    list_length: int = 10
    noise_rate: float = 0.2
    # fraction of distractors sharing one of the user's secondary genres
    partial_relevance_rate: float = 0.5
    # fraction of distractors carrying the user's top genre
    hard_negative_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "genre_vocabulary", tuple(self.genre_vocabulary))

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["genre_vocabulary"] = list(self.genre_vocabulary)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticWorldSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InfeasibleSpecError(f"unknown synthetic world fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class _Item:
    item_id: str
    title: str
    genres: tuple[str, ...]


def item_title(name: str, genres: Sequence[str]) -> str:
    return f"{name} [{' '.join(genres)}]"


def _check_spec(spec: SyntheticWorldSpec) -> None:
    if len(spec.genre_vocabulary) < 4:
        raise InfeasibleSpecError("genre vocabulary needs at least 4 genres")
    if len(set(spec.genre_vocabulary)) != len(spec.genre_vocabulary):
        raise InfeasibleSpecError("genre vocabulary has duplicates")
    if any((not g) or (not g.isalnum()) or g != g.lower() for g in spec.genre_vocabulary):
        raise InfeasibleSpecError("genres must be lowercase alphanumeric tokens")
    if spec.n_items < spec.list_length:
        raise InfeasibleSpecError(
            f"n_items={spec.n_items} is smaller than list_length={spec.list_length}"
        )
    if spec.n_users < 1 or spec.history_length < 1 or spec.list_length < 1:
        raise InfeasibleSpecError("n_users, history_length and list_length must be positive")
    for name in ("noise_rate", "partial_relevance_rate", "hard_negative_rate"):
        v = getattr(spec, name)
        if not 0.0 <= v <= 1.0:
            raise InfeasibleSpecError(f"{name} must lie in [0, 1], got {v}")


def _make_catalog(spec: SyntheticWorldSpec, rng: np.random.Generator) -> list[_Item]:
    vocab = list(spec.genre_vocabulary)
    names = [f"{a} {n}" for a in _ADJECTIVES for n in _NOUNS]
    order = rng.permutation(len(names))
    items = []
    for idx in range(spec.n_items):
        base = names[order[idx % len(names)]]
        name = base if idx < len(names) else f"{base} {idx // len(names) + 1}"
        # every genre gets single-genre items first so no genre is empty
        if idx < len(vocab):
            genres = (vocab[idx],)
        elif rng.random() < 0.5:
            genres = (vocab[rng.integers(len(vocab))],)
        else:
            a, b = rng.choice(len(vocab), size=2, replace=False)
            genres = tuple(sorted((vocab[a], vocab[b])))
        items.append(_Item(f"i{idx:04d}", item_title(name, genres), genres))
    return items


def generate_synthetic_world(spec: SyntheticWorldSpec) -> DatasetBundle:
    """Build a reproducible world of genre-tagged items and users.

    Each user has a hidden top genre plus a few weaker secondary genres.
    On-taste interactions always carry the top genre; a ``noise_rate``
    fraction of history slots are off-taste picks. The last two interactions
    (validation and test) are always on-taste. Baseline lists hold the test
    item at a uniformly random position among distractors of mixed relevance.
    """
    _check_spec(spec)
    rng = np.random.default_rng(spec.seed)
    vocab = list(spec.genre_vocabulary)
    items = _make_catalog(spec, rng)
    by_genre = {g: [it for it in items if g in it.genres] for g in vocab}

    users: dict[str, UserRecord] = {}
    rankings: dict[str, BaselineRanking] = {}
    n_timeline = spec.history_length + 2
    for u in range(spec.n_users):
        uid = f"u{u:04d}"
        top = vocab[rng.integers(len(vocab))]
        others = [g for g in vocab if g != top]
        n_sec = min(len(others), 2)
        secondary = [others[i] for i in rng.choice(len(others), size=n_sec, replace=False)]
        sec_w = {g: w for g, w in zip(secondary, (2.0, 1.0))}

        on_taste = by_genre[top]
        weights = np.array(
            [1.0 + sum(sec_w.get(g, 0.0) for g in it.genres if g != top) for it in on_taste]
        )
        # single-genre top items count as strongly on-taste
        weights += np.array([1.0 if it.genres == (top,) else 0.0 for it in on_taste])
        off_taste = [it for it in items if top not in it.genres]

        is_noise = rng.random(n_timeline) < spec.noise_rate
        is_noise[-2:] = False
        if (~is_noise).sum() > len(on_taste) or is_noise.sum() > len(off_taste):
            raise InfeasibleSpecError(f"catalog too small to draw a timeline for {uid}")
        picked: list[_Item] = []
        used: set[str] = set()
        for noisy in is_noise:
            pool = off_taste if noisy else on_taste
            w = None if noisy else weights
            mask = np.array([it.item_id not in used for it in pool])
            if noisy:
                probs = mask / mask.sum()
            else:
                probs = np.where(mask, w, 0.0)
                probs = probs / probs.sum()
            choice = pool[rng.choice(len(pool), p=probs)]
            used.add(choice.item_id)
            picked.append(choice)

        t0 = 1_600_000_000 + u * 10_000_000
        timeline = [
            InteractionRecord(it.item_id, it.title, t0 + j * 86_400) for j, it in enumerate(picked)
        ]
        user = loo_split({uid: timeline})[uid]
        users[uid] = user

        gt_item = picked[-1]
        history_genres = {g for it in picked[:-2] for g in it.genres}
        liked = {top, *secondary}
        excluded = used
        n_distract = spec.list_length - 1
        hard = [it for it in on_taste if it.item_id not in excluded]
        partial = [
            it
            for it in off_taste
            if it.item_id not in excluded and set(it.genres) & set(secondary)
        ]
        cold = [
            it
            for it in off_taste
            if it.item_id not in excluded and not set(it.genres) & (liked | history_genres)
        ]
        if not cold:
            cold = [it for it in off_taste if it.item_id not in excluded and not set(it.genres) & liked]
        distractors: list[_Item] = []
        chosen: set[str] = set()
        for _ in range(n_distract):
            r = rng.random()
            if r < spec.hard_negative_rate:
                pool = hard
            elif r < spec.hard_negative_rate + (1 - spec.hard_negative_rate) * spec.partial_relevance_rate:
                pool = partial
            else:
                pool = cold
            avail = [it for it in pool if it.item_id not in chosen]
            if not avail:
                avail = [
                    it
                    for it in (*cold, *partial, *hard)
                    if it.item_id not in chosen
                ]
            if not avail:
                avail = [it for it in items if it.item_id not in excluded and it.item_id not in chosen]
            if not avail:
                raise InfeasibleSpecError(f"not enough distractor items for {uid}")
            pick = avail[rng.integers(len(avail))]
            chosen.add(pick.item_id)
            distractors.append(pick)
        slot = int(rng.integers(spec.list_length))
        ordered = distractors[:slot] + [gt_item] + distractors[slot:]
        rankings[uid] = BaselineRanking(
            uid, "synthetic", tuple((it.item_id, it.title) for it in ordered)
        )

    return DatasetBundle(users=users, rankings=rankings)


@dataclass
class TitleIndex:
    """Lookup of item titles across history, rankings and optional extras."""

    titles: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_bundle(cls, bundle: DatasetBundle, extra: Mapping[str, str] | None = None) -> "TitleIndex":
        titles: dict[str, str] = {}
        for user in bundle.users.values():
            for r in user.history:
                titles.setdefault(r.item_id, r.title)
        for ranking in bundle.rankings.values():
            for item_id, title in ranking.items:
                titles.setdefault(item_id, title)
        if extra:
            for k, v in extra.items():
                titles.setdefault(k, v)
        return cls(titles)

    def get(self, item_id: str) -> str:
        return self.titles.get(item_id, item_id)
