import pytest

from agp import templates as T
from agp.dataset import UserRecord
from agp.gateway import ChatResponse, Gateway
from agp.profile import (
    EmptyResponseError,
    MissingTemplateError,
    PromptState,
    PromptStore,
    generate_profile,
    profile_request,
    seed_prompt,
)


class Recorder:
    def __init__(self, reply="Likes fantasy."):
        self.reply = reply
        self.requests = []

    def send(self, request):
        self.requests.append(request)
        return ChatResponse(self.reply)


def test_seed_prompt_default_is_version_zero():
    p = seed_prompt()
    assert p.version == 0 and p.parent_version is None
    assert p.text == T.DEFAULT_SEED_PROMPT


def test_seed_prompt_from_file(tmp_path):
    f = tmp_path / "p.txt"
    f.write_text("custom prompt")
    assert seed_prompt(str(f)).text == "custom prompt"


def test_seed_prompt_missing():
    with pytest.raises(MissingTemplateError):
        seed_prompt("no-such-template")


def test_profile_request_carries_prompt_and_numbered_history(three_users):
    req = profile_request(three_users.user("u1"), PromptState("PGEN"))
    assert req.purpose == "profile"
    assert req.system == "PGEN"
    assert "1. Saga of Ember [fantasy]\n2. Dark Alley [noir]" in req.user


def test_generate_profile_tags_version(three_users):
    rec = Recorder()
    prof = generate_profile(three_users.user("u1"), PromptState("P", version=3), Gateway(rec))
    assert prof.prompt_version == 3 and prof.text == "Likes fantasy."
    assert len(rec.requests) == 1


def test_generate_profile_empty_history():
    user = UserRecord("u", (), "v", ("g",))
    with pytest.raises(ValueError):
        generate_profile(user, PromptState("P"), Gateway(Recorder()))


def test_generate_profile_blank_reply(three_users):
    with pytest.raises(EmptyResponseError):
        generate_profile(three_users.user("u1"), PromptState("P"), Gateway(Recorder("   ")))


def test_lineage_chain():
    v0 = seed_prompt()
    v1 = v0.child("a", "first")
    v2 = v1.child("b")
    assert [v.version for v in (v0, v1, v2)] == [0, 1, 2]
    assert v2.parent_version == 1 and v1.parent_version == 0
    assert v1.created_by == "optimizer"


def test_prompt_store_round_trip(tmp_path):
    store = PromptStore(tmp_path / "prompts")
    v0 = PromptState("seed")
    v1 = v0.child("seed plus", "note")
    store.save(v0)
    store.save(v1)
    store.save(v1)  # idempotent
    assert store.versions() == [0, 1]
    assert store.lineage() == [v0, v1]
    assert (tmp_path / "prompts" / "prompt_v1.txt").read_text() == "seed plus"
    with pytest.raises(MissingTemplateError):
        store.load(7)
