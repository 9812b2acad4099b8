import re

import pytest

from agenttune.core.memory import JaccardSimilarity, MemoryStore, TfidfSimilarity, apply_vote
from agenttune.errors import SessionStateError
from agenttune.models.memory import Insight, Prediction, Tier, VoteRecord

# --- DATASETS ---

PARAMS = ["write_buffer_mb", "block_cache_mb", "background_jobs", "compression", "max_open_files"]
WORKLOADS = ["fillrandom", "readrandom", "mixgraph", "seekrandom"]
CONFIDENCES = [0.9, 0.45, 0.7, 0.45, 0.2, 0.85, 0.6, 0.6, 0.3, 0.95, 0.5, 0.75, 0.4, 0.65, 0.8, 0.35, 0.55, 0.25, 0.7, 0.5]


def corpus() -> list[Insight]:
    """Twenty insights over five params and four workloads, with repeated confidences to force id tie-breaks."""
    insights = []
    for n in range(20):
        param, workload = PARAMS[n % 5], WORKLOADS[n % 4]
        verb = "increase" if n % 3 else "decrease"
        insights.append(Insight(
            id=f"ins-{n + 1:04d}",
            text=f"{verb} {param} improves throughput_kops under {workload} workload",
            confidence=CONFIDENCES[n],
            tier=Tier.LTM if n % 2 else Tier.STM,
            source_nodes=["n0000"],
            tags=[workload, "simkv"],
        ))
    return insights


def tokens(text: str) -> set[str]:
    return set(re.findall(r"[a-z0-9_]+", text.lower()))


def brute_force(insights: list[Insight], context: str, tags: list[str], k: int) -> list[str]:
    query = tokens(context + " " + " ".join(sorted(tags)))
    scored = []
    for insight in insights:
        doc = tokens(insight.text + " " + " ".join(insight.tags))
        jaccard = len(query & doc) / len(query | doc)
        scored.append((jaccard * insight.confidence, insight.id))
    scored.sort(key=lambda s: (-s[0], s[1]))
    return [insight_id for _, insight_id in scored[:k]]


def insight(confidence: float = 0.5, tier: Tier = Tier.STM, insight_id: str = "ins-0001", **prediction) -> Insight:
    prediction = {"param": "write_buffer_mb", "direction": "increase", "metric": "throughput_kops",
                  "effect": "improves", **prediction}
    return Insight(id=insight_id, text="increase write_buffer_mb improves throughput_kops", confidence=confidence,
                   tier=tier, prediction=Prediction(**prediction), source_nodes=["n0000", "n0001"])


# --- RETRIEVAL ---

@pytest.mark.parametrize("k", [1, 8, 20])
@pytest.mark.parametrize("context", [
    "increase write_buffer_mb for fillrandom throughput_kops",
    "block_cache_mb readrandom",
    "nothing in common at all",
])
def test_retrieve_matches_brute_force(k, context):
    insights = corpus()
    store = MemoryStore(stm=[i for i in insights if i.tier == Tier.STM], ltm=[i for i in insights if i.tier == Tier.LTM])
    tags = ["fillrandom", "simkv"]

    # Action
    retrieved = [i.id for i in store.retrieve(context, tags, k)]

    # Assert
    expected = brute_force(insights, context, tags, k)
    assert retrieved == expected, f"k={k}: expected {expected}, got {retrieved}"


def test_retrieve_similarity_only_ignores_confidence():
    low = insight(0.1, insight_id="ins-0001").model_copy(update={"text": "write_buffer_mb fillrandom"})
    high = insight(0.9, insight_id="ins-0002").model_copy(update={"text": "background_jobs mixgraph"})
    store = MemoryStore(stm=[low, high])

    product = store.retrieve("background_jobs write_buffer_mb fillrandom", [], 1)
    plain = store.retrieve("background_jobs write_buffer_mb fillrandom", [], 1, score_mode="similarity-only")

    assert product[0].id == "ins-0002"
    assert plain[0].id == "ins-0001"


def test_retrieve_workload_scope_filters_ltm_only():
    insights = corpus()
    store = MemoryStore(stm=[i for i in insights if i.tier == Tier.STM], ltm=[i for i in insights if i.tier == Tier.LTM])

    retrieved = store.retrieve("throughput_kops", ["readrandom"], 20, ltm_scope="workload", workload_tag="readrandom")

    assert all(i.tier == Tier.STM or "readrandom" in i.tags for i in retrieved)
    assert len(retrieved) == len(store.stm) + sum(1 for i in store.ltm if "readrandom" in i.tags)


def test_retrieve_edge_cases():
    assert MemoryStore().retrieve("anything", [], 5) == []
    with pytest.raises(ValueError):
        MemoryStore(stm=[insight()]).retrieve("anything", [], 0)


def test_similarity_providers_agree_on_the_obvious_match():
    documents = ["increase write_buffer_mb fillrandom", "decrease block_cache_mb readrandom"]

    for provider in (JaccardSimilarity(), TfidfSimilarity()):
        scores = provider.scores("write_buffer_mb fillrandom", documents)
        assert scores[0] > scores[1], f"{type(provider).__name__} ranked the wrong document first"


def test_tfidf_handles_empty_vocabulary():
    assert TfidfSimilarity().scores("!!!", ["???", "..."]) == [0.0, 0.0]


# --- CONFIDENCE LIFECYCLE ---

def test_four_upvotes_then_promotion():
    store = MemoryStore(stm=[insight(0.5)])
    seen = []

    # Action
    for _ in range(4):
        seen.append(store.vote("ins-0001", "up").confidence)

    # Assert
    assert seen == pytest.approx([0.6, 0.68, 0.744, 0.7952], abs=1e-9)
    assert store.get("ins-0001").tier == Tier.STM, "confidence below 0.8 must not promote"

    promoted = store.vote("ins-0001", "up")
    assert promoted.confidence == pytest.approx(0.83616, abs=1e-9)
    assert promoted.tier == Tier.LTM
    assert [i.id for i in store.ltm] == ["ins-0001"] and store.stm == []


def test_high_confidence_needs_three_upvotes_to_promote():
    updated = apply_vote(insight(0.79), "up")

    assert updated.confidence > 0.8
    assert updated.upvotes == 1
    assert updated.tier == Tier.STM


@pytest.mark.parametrize("confidence, tier, expected_tier, kept", [
    (0.24, Tier.STM, None, False),          # 0.192 < 0.2: discarded
    (0.3, Tier.STM, Tier.STM, True),        # 0.24 stays
    (0.55, Tier.LTM, Tier.STM, True),       # 0.44 < 0.5: demoted
    (0.9, Tier.LTM, Tier.LTM, True),        # 0.72 stays in LTM
])
def test_downvote_outcomes(confidence, tier, expected_tier, kept):
    store = MemoryStore(stm=[insight(confidence)] if tier == Tier.STM else [],
                        ltm=[insight(confidence, tier=Tier.LTM)] if tier == Tier.LTM else [])

    updated = store.vote("ins-0001", "down")

    assert (updated is not None) is kept
    if kept:
        assert updated.confidence == pytest.approx(confidence * 0.8)
        assert updated.tier == expected_tier
        assert store.get("ins-0001").downvotes == 1
    else:
        assert store.get("ins-0001") is None


def test_vote_rejects_unknown_inputs():
    store = MemoryStore(stm=[insight()])

    with pytest.raises(KeyError):
        store.vote("ins-9999", "up")
    with pytest.raises(ValueError):
        store.vote("ins-0001", "sideways")


# --- STORE ---

@pytest.mark.parametrize("stored, incoming", [(0.9, 0.6), (0.6, 0.9)])
def test_add_merges_same_prediction(stored, incoming):
    store = MemoryStore(ltm=[insight(stored, tier=Tier.LTM)])
    duplicate = insight(incoming, insight_id="ins-0002").model_copy(update={"source_nodes": ["n0004", "n0001"]})

    merged = store.add(duplicate)

    assert merged.id == "ins-0001"
    assert merged.confidence == 0.9
    assert merged.source_nodes == ["n0000", "n0001", "n0004"]
    assert store.stm == []


def test_ids_are_unique_and_never_reused():
    with pytest.raises(ValueError):
        MemoryStore(stm=[insight()], ltm=[insight(tier=Tier.LTM)])

    store = MemoryStore(stm=[insight(insight_id="ins-0002")],
                        vote_log=[VoteRecord(insight_id="ins-0007", vote="down", accepted=True)])
    assert store.next_id() == "ins-0008", "ids of discarded insights stay reserved through the vote log"


def test_document_round_trip(tmp_path):
    path = tmp_path / "ltm.json"
    MemoryStore.dump_document([insight(0.9, tier=Tier.LTM)], path)

    loaded = MemoryStore.load_document(path)

    assert loaded == [insight(0.9, tier=Tier.LTM)]
    assert MemoryStore.load_document(tmp_path / "missing.json") == []


def test_malformed_document_raises(tmp_path):
    path = tmp_path / "ltm.json"
    path.write_text('{"insights": [{"id": "ins-0001"}]}')

    with pytest.raises(SessionStateError):
        MemoryStore.load_document(path)


def test_static_insights_enter_stm_and_skip_collisions(tmp_path):
    path = tmp_path / "static.json"
    MemoryStore.dump_document([insight(0.7, tier=Tier.LTM), insight(0.4, insight_id="ins-0100")], path)
    store = MemoryStore(ltm=[insight(0.9, tier=Tier.LTM)])

    added = store.load_static(path)

    assert added == 1
    assert [(i.id, i.tier) for i in store.stm] == [("ins-0100", Tier.STM)]


def test_vote_log_appends_incrementally(tmp_path):
    path = tmp_path / "vote_log.jsonl"
    store = MemoryStore(stm=[insight()])
    store.record(VoteRecord(insight_id="ins-0001", vote="up", accepted=True))
    written = store.append_vote_log(path)
    store.record(VoteRecord(insight_id="ins-0001", vote="down", accepted=False, reason="contradicted"))

    written = store.append_vote_log(path, written)

    assert written == 2
    assert [r.vote for r in MemoryStore.read_vote_log(path)] == ["up", "down"]
