import pytest
from hypothesis import given
from hypothesis import strategies as st

from agp.dataset import BaselineRanking, UserRecord
from agp.feedback import (
    EmptyBatchError,
    FeedbackSet,
    MissingGroundTruthError,
    batch_weight,
    compute_feedback,
    verbalize_feedback,
)
from agp.gateway import ChatResponse, Gateway
from agp.profile import PromptState, UserProfile
from agp.rerank import RerankedList

from conftest import rec


def rr(items):
    return RerankedList("u", tuple(items), "agp")


ITEMS = [f"i{j}" for j in range(1, 11)]


def test_single_item_at_three():
    fs = compute_feedback(rr(ITEMS), ["i3"])
    assert [p.as_tuple for p in fs.pairs] == [(3, 1)]
    assert fs.avg_pos == 3 and fs.weight == pytest.approx(1 / 3)


def test_single_item_on_target():
    fs = compute_feedback(rr(ITEMS), ["i1"])
    assert fs.weight == 1.0 and fs.at_target


def test_two_items():
    fs = compute_feedback(rr(ITEMS), ["i5", "i2"])
    assert [p.as_tuple for p in fs.pairs] == [(5, 1), (2, 2)]
    assert fs.avg_pos == 3.5 and fs.weight == pytest.approx(2 / 7)


def test_missing_ground_truth():
    with pytest.raises(MissingGroundTruthError):
        compute_feedback(rr(ITEMS), ["zz"])


def _fs(avg):
    return FeedbackSet("u", (), avg, 1 / avg)


@pytest.mark.parametrize("avgs,expected", [([1, 1, 1], 1.0), ([2, 4], 1 / 3), ([5], 0.2)])
def test_batch_weight(avgs, expected):
    assert batch_weight([_fs(a) for a in avgs]) == pytest.approx(expected, abs=1e-12)


def test_batch_weight_empty():
    with pytest.raises(EmptyBatchError):
        batch_weight([])


@given(st.permutations(ITEMS), st.integers(1, 10))
def test_weight_bounds(order, n_gt):
    gt = ITEMS[:n_gt]
    fs = compute_feedback(rr(order), gt)
    assert 0 < fs.weight <= 1
    assert fs.weight == pytest.approx(1 / (sum(order.index(g) + 1 for g in gt) / n_gt), abs=1e-12)


@given(st.permutations(ITEMS), st.data())
def test_promoting_the_item_never_lowers_weight(order, data):
    item = data.draw(st.sampled_from(ITEMS))
    p = order.index(item)
    q = data.draw(st.integers(0, p))
    moved = order[:p] + order[p + 1 :]
    moved.insert(q, item)
    assert compute_feedback(rr(moved), [item]).weight >= compute_feedback(rr(order), [item]).weight


class Recorder:
    def __init__(self, reply):
        self.reply = reply
        self.requests = []

    def send(self, request):
        self.requests.append(request)
        return ChatResponse(self.reply)


def _verbalize(reply, pbf):
    user = UserRecord("u", (rec("a", "Alpha [x]", 1),), "v", ("g",))
    baseline = BaselineRanking("u", "m", (("n", "Noise [y]"), ("g", "Gold [x]")))
    reranked = RerankedList("u", ("n", "g"), "agp")
    fs = compute_feedback(reranked, ["g"])
    backend = Recorder(reply)
    out = verbalize_feedback(
        fs, UserProfile("u", "Preferred genres: y", 0), Gateway(backend),
        user=user, baseline=baseline, reranked=reranked, prompt=PromptState("seed"), pbf=pbf,
    )
    return out, backend.requests[0]


def test_verbalize_pbf_request_has_pairs():
    out, req = _verbalize("The profile missed the x genre.", pbf=True)
    assert '"Gold [x]" (id: g): position 2, target 1' in req.user
    assert "seed" in req.user and "Preferred genres: y" in req.user
    # pairs the model left out are restored
    assert out.diagnosis.endswith("- g: position 2, target 1.")


def test_verbalize_metric_only_hides_positions():
    out, req = _verbalize("Be more specific.", pbf=False)
    assert "position" not in req.user and "target" not in req.user
    assert "NDCG@10 = 0.6309" in req.user
    assert out.diagnosis == "Be more specific."
