import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agp.dataset import (
    BaselineRanking,
    DatasetBundle,
    DatasetError,
    GroundTruthAbsentError,
    InfeasibleSpecError,
    InsufficientUsersError,
    InteractionRecord,
    ParseError,
    ReferentialIntegrityError,
    SyntheticWorldSpec,
    TooFewInteractionsError,
    UserRecord,
    generate_synthetic_world,
    load_bundle,
    loo_split,
    sample_split,
    truncate_history,
    validation_ranking,
)
from agp.mock import genres_of

from conftest import rec, write_jsonl


def test_load_bundle_round_trip(tmp_path, three_users):
    three_users.save(tmp_path / "users.jsonl", tmp_path / "rankings.jsonl")
    bundle = load_bundle(tmp_path / "users.jsonl", tmp_path / "rankings.jsonl")
    assert len(bundle.users) == 3 and len(bundle.rankings) == 3
    assert bundle.users == three_users.users
    assert bundle.rankings == three_users.rankings
    assert bundle.to_bytes() == three_users.to_bytes()


def test_load_bundle_unknown_user(tmp_path, three_users):
    three_users.save(tmp_path / "users.jsonl", tmp_path / "rankings.jsonl")
    write_jsonl(
        tmp_path / "rankings.jsonl",
        [{"user_id": "u999", "source_model": "m", "items": [{"item_id": "d", "title": "T [x]"}]}],
    )
    with pytest.raises(ReferentialIntegrityError) as err:
        load_bundle(tmp_path / "users.jsonl", tmp_path / "rankings.jsonl")
    assert err.value.user_id == "u999"


def test_load_bundle_ground_truth_absent(tmp_path, three_users):
    three_users.save(tmp_path / "users.jsonl", tmp_path / "rankings.jsonl")
    write_jsonl(
        tmp_path / "rankings.jsonl",
        [{"user_id": "u1", "source_model": "m", "items": [{"item_id": "x", "title": "Noir Night [noir]"}]}],
    )
    with pytest.raises(GroundTruthAbsentError) as err:
        load_bundle(tmp_path / "users.jsonl", tmp_path / "rankings.jsonl")
    assert err.value.user_id == "u1" and err.value.missing == ["d"]


def test_load_bundle_parse_error_has_line_number(tmp_path, three_users):
    three_users.save(tmp_path / "users.jsonl", tmp_path / "rankings.jsonl")
    lines = (tmp_path / "users.jsonl").read_text().splitlines()
    lines[1] = "{not json"
    (tmp_path / "users.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as err:
        load_bundle(tmp_path / "users.jsonl", tmp_path / "rankings.jsonl")
    assert err.value.line_no == 2


def test_load_bundle_missing_field_is_parse_error(tmp_path, three_users):
    three_users.save(tmp_path / "users.jsonl", tmp_path / "rankings.jsonl")
    write_jsonl(tmp_path / "users.jsonl", [{"user_id": "u1", "history": []}])
    with pytest.raises(ParseError):
        load_bundle(tmp_path / "users.jsonl", tmp_path / "rankings.jsonl")


def test_user_record_invariants():
    with pytest.raises(DatasetError):
        UserRecord("u", (rec("a", "A [x]", 1),), "a", ("b",))  # validation in history
    with pytest.raises(DatasetError):
        UserRecord("u", (rec("a", "A [x]", 1),), "c", ("b", "b"))
    with pytest.raises(DatasetError):
        UserRecord("u", (rec("a", "A [x]", 2), rec("b", "B [x]", 1)), "c", ("d",))
    with pytest.raises(DatasetError):
        InteractionRecord("a", "   ", 1)


def test_loo_split_definition():
    raw = {"u": [rec(x, x.upper() + " [g]", i) for i, x in enumerate("abcd")]}
    out = loo_split(raw)["u"]
    assert [r.item_id for r in out.history] == ["a", "b"]
    assert out.validation_item == "c"
    assert out.ground_truth == ("d",)


def test_loo_split_drops_short_users(caplog):
    raw = {"short": [rec("a", "A [g]", 1), rec("b", "B [g]", 2)], "ok": [rec(x, x, i) for i, x in enumerate("abc")]}
    out = loo_split(raw)
    assert set(out) == {"ok"}
    assert "short" in caplog.text
    with pytest.raises(TooFewInteractionsError) as err:
        loo_split(raw, strict=True)
    assert err.value.dropped == ["short"]


def test_loo_split_five_users_of_ten():
    raw = {f"u{n}": [rec(f"i{n}_{j}", f"T{j} [g]", 100 + j) for j in range(10)] for n in range(5)}
    out = loo_split(raw)
    assert len(out) == 5
    assert all(len(u.history) == 8 for u in out.values())


def test_loo_split_tie_break_by_item_id():
    raw = {"u": [rec("z", "Z", 5), rec("a", "A", 5), rec("m", "M", 1)]}
    out = loo_split(raw)["u"]
    # (5, "a") sorts before (5, "z")
    assert [r.item_id for r in out.history] == ["m"]
    assert out.validation_item == "a" and out.ground_truth == ("z",)


@given(
    st.lists(st.tuples(st.integers(0, 20), st.text("abcdef", min_size=1, max_size=3)), min_size=3, max_size=12, unique_by=lambda t: t[1])
)
def test_loo_split_ordering_property(events):
    raw = {"u": [rec(item, f"{item} [g]", ts) for ts, item in events]}
    user = loo_split(raw)["u"]
    key = {item: (ts, item) for ts, item in events}
    v, g = key[user.validation_item], key[user.ground_truth[0]]
    assert v < g
    assert all(key[r.item_id] < v for r in user.history)


def _world_split(n_users=500, seed=7, n_train=100, n_eval=300):
    users = {f"u{i:03d}": UserRecord(f"u{i:03d}", (rec("a", "A [g]", 1),), "b", ("c",)) for i in range(n_users)}
    rankings = {u: BaselineRanking(u, "m", (("c", "C [g]"),)) for u in users}
    return sample_split(DatasetBundle(users, rankings), n_train, n_eval, seed)


def test_sample_split_deterministic_and_disjoint():
    a = _world_split()
    b = _world_split()
    assert len(a.train) == 100 and len(a.eval) == 300
    assert not set(a.train) & set(a.eval)
    assert a.train == b.train and a.eval == b.eval


def test_sample_split_seed_changes_train():
    assert set(_world_split(seed=7).train) != set(_world_split(seed=8).train)


def test_sample_split_insufficient_users():
    with pytest.raises(InsufficientUsersError):
        _world_split(n_users=350)


def test_sample_split_overlap_flag():
    users = {f"u{i}": UserRecord(f"u{i}", (rec("a", "A", 1),), "b", ("c",)) for i in range(10)}
    rankings = {u: BaselineRanking(u, "m", (("c", "C"),)) for u in users}
    split = sample_split(DatasetBundle(users, rankings), 8, 8, 0, allow_overlap=True)
    assert len(split.train) == 8 and len(split.eval) == 8


def _user_with(n):
    return UserRecord("u", tuple(rec(f"i{j}", f"T{j}", j) for j in range(n)), "v", ("g",))


@pytest.mark.parametrize(
    "n,max_len,kept",
    [(8, 5, ["i3", "i4", "i5", "i6", "i7"]), (3, 10, ["i0", "i1", "i2"]), (20, 20, [f"i{j}" for j in range(20)])],
)
def test_truncate_history(n, max_len, kept):
    out = truncate_history(_user_with(n), max_len)
    assert [r.item_id for r in out.history] == kept


@given(st.integers(1, 25), st.integers(1, 25))
def test_truncate_idempotent(n, L):
    u = _user_with(n)
    once = truncate_history(u, L)
    assert truncate_history(once, L) == once


def test_truncate_rejects_zero():
    with pytest.raises(ValueError):
        truncate_history(_user_with(3), 0)


def test_validation_ranking_swaps_test_item(three_users):
    u1 = three_users.user("u1")
    r = validation_ranking(u1, three_users.ranking("u1"), "Valid [fantasy]")
    assert r.item_ids == ["x", "c"]
    assert "d" not in r.item_ids


def test_synthetic_world_deterministic():
    spec = SyntheticWorldSpec(seed=1, n_users=30)
    assert generate_synthetic_world(spec).to_bytes() == generate_synthetic_world(spec).to_bytes()
    other = SyntheticWorldSpec(seed=2, n_users=30)
    assert generate_synthetic_world(other).to_bytes() != generate_synthetic_world(spec).to_bytes()


def test_synthetic_world_noise_free_histories_carry_top_genre():
    spec = SyntheticWorldSpec(seed=3, n_users=40, noise_rate=0.0)
    bundle = generate_synthetic_world(spec)
    for user in bundle.users.values():
        tagged = [set(genres_of(t)) for t in user.titles]
        common = set.intersection(*tagged)
        # the user's top genre is present in every history title
        assert common, user.user_id
        gt_title = dict(bundle.ranking(user.user_id).items)[user.ground_truth[0]]
        assert common & set(genres_of(gt_title))


def test_synthetic_world_invariants():
    spec = SyntheticWorldSpec(seed=4, n_users=25, history_length=6, list_length=10)
    bundle = generate_synthetic_world(spec)
    for uid, user in bundle.users.items():
        r = bundle.ranking(uid)
        assert r.k == 10
        assert user.ground_truth[0] in r.item_ids
        assert len(user.history) == 6
        assert user.validation_title and user.validation_item not in r.item_ids


def test_synthetic_world_gt_position_spread():
    bundle = generate_synthetic_world(SyntheticWorldSpec(seed=5, n_users=200))
    pos = [bundle.ranking(u).item_ids.index(bundle.user(u).ground_truth[0]) for u in bundle.users]
    assert set(pos) == set(range(10))


@pytest.mark.parametrize(
    "kw",
    [dict(n_items=5, list_length=10), dict(genre_vocabulary=("a", "b", "c")), dict(noise_rate=1.5)],
)
def test_synthetic_world_infeasible(kw):
    with pytest.raises(InfeasibleSpecError):
        generate_synthetic_world(SyntheticWorldSpec(**kw))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_synthetic_round_trip(tmp_path_factory, seed):
    d = tmp_path_factory.mktemp("w")
    bundle = generate_synthetic_world(SyntheticWorldSpec(seed=seed, n_users=8, n_items=150))
    bundle.save(d / "u.jsonl", d / "r.jsonl")
    assert load_bundle(d / "u.jsonl", d / "r.jsonl").to_bytes() == bundle.to_bytes()
