import logging
import re
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Iterable, Optional

from pydantic import ValidationError
from sklearn.feature_extraction.text import TfidfVectorizer
from sklearn.metrics.pairwise import cosine_similarity

from agenttune.errors import SessionStateError
from agenttune.models.memory import Insight, MemoryDocument, Tier, VoteRecord

logger = logging.getLogger(__name__)

UPVOTE_STEP = 0.2
DOWNVOTE_FACTOR = 0.8
PROMOTE_CONFIDENCE = 0.8
PROMOTE_UPVOTES = 3
DISCARD_BELOW = 0.2
DEMOTE_BELOW = 0.5

_WORD = re.compile(r"[a-z0-9_]+")


def words(text: str) -> set[str]:
    return set(_WORD.findall(text.lower()))


# --- 1. SIMILARITY ---
class SimilarityProvider(ABC):
    @abstractmethod
    def scores(self, query: str, documents: list[str]) -> list[float]:
        ...


class JaccardSimilarity(SimilarityProvider):
    def scores(self, query: str, documents: list[str]) -> list[float]:
        q = words(query)
        out = []
        for doc in documents:
            d = words(doc)
            union = q | d
            out.append(len(q & d) / len(union) if union else 0.0)
        return out


class TfidfSimilarity(SimilarityProvider):
    """Cosine similarity of TF-IDF vectors fitted on the documents plus the query."""

    def scores(self, query: str, documents: list[str]) -> list[float]:
        if not documents:
            return []
        vectorizer = TfidfVectorizer(token_pattern=r"[a-z0-9_]+", lowercase=True)
        try:
            matrix = vectorizer.fit_transform(documents + [query])
        except ValueError:
            # empty vocabulary
            return [0.0] * len(documents)
        return [float(s) for s in cosine_similarity(matrix[-1], matrix[:-1])[0]]


SIMILARITY_PROVIDERS: dict[str, type[SimilarityProvider]] = {
    "jaccard": JaccardSimilarity,
    "tfidf": TfidfSimilarity,
}


# --- 2. VOTE ARITHMETIC ---
def apply_vote(insight: Insight, vote: str) -> Insight:
    """
    Confidence update plus tier transitions. Discarding from STM is the store's job since it
    removes the insight; this only reports the new state.
    """
    c = insight.confidence
    if vote == "up":
        update = {"confidence": min(1.0, c + UPVOTE_STEP * (1 - c)), "upvotes": insight.upvotes + 1}
    elif vote == "down":
        update = {"confidence": max(0.0, c * DOWNVOTE_FACTOR), "downvotes": insight.downvotes + 1}
    else:
        raise ValueError(f"vote must be 'up' or 'down', got {vote!r}")
    updated = insight.model_copy(update=update)

    if updated.tier == Tier.STM and updated.confidence >= PROMOTE_CONFIDENCE and updated.upvotes >= PROMOTE_UPVOTES:
        updated.tier = Tier.LTM
    elif updated.tier == Tier.LTM and updated.confidence < DEMOTE_BELOW:
        updated.tier = Tier.STM
    return updated


# --- 3. STORE ---
class MemoryStore:
    """
    STM and LTM tiers plus the append-only vote log. Insight ids are unique across both tiers.
    """
    def __init__(self, stm: Optional[list[Insight]] = None, ltm: Optional[list[Insight]] = None,
                 vote_log: Optional[list[VoteRecord]] = None):
        self.stm: list[Insight] = list(stm or [])
        self.ltm: list[Insight] = list(ltm or [])
        self._vote_log: list[VoteRecord] = list(vote_log or [])
        ids = [i.id for i in self.all()]
        if len(ids) != len(set(ids)):
            raise ValueError("insight ids must be unique across STM and LTM")

    @property
    def vote_log(self) -> tuple[VoteRecord, ...]:
        return tuple(self._vote_log)

    def all(self) -> list[Insight]:
        return self.stm + self.ltm

    def get(self, insight_id: str) -> Optional[Insight]:
        return next((i for i in self.all() if i.id == insight_id), None)

    def next_id(self) -> str:
        used = [i.id for i in self.all()] + [r.insight_id for r in self._vote_log]
        numbers = [int(m.group(1)) for m in (re.fullmatch(r"ins-(\d+)", u) for u in used) if m]
        return f"ins-{max(numbers, default=0) + 1:04d}"

    def find_by_prediction(self, key: tuple) -> Optional[Insight]:
        return next((i for i in self.all() if i.prediction is not None and i.prediction.key() == key), None)

    def add(self, insight: Insight) -> Insight:
        """Adds to STM, or merges into an existing insight with the same prediction keeping the higher confidence."""
        if insight.prediction is not None:
            existing = self.find_by_prediction(insight.prediction.key())
            if existing is not None:
                merged = existing.model_copy(update={
                    "confidence": max(existing.confidence, insight.confidence),
                    "source_nodes": list(dict.fromkeys(existing.source_nodes + insight.source_nodes)),
                })
                self._replace(merged)
                return merged
        if self.get(insight.id) is not None:
            raise ValueError(f"duplicate insight id {insight.id}")
        stored = insight.model_copy(update={"tier": Tier.STM})
        self.stm.append(stored)
        return stored

    def _replace(self, insight: Insight) -> None:
        tier = self.ltm if insight.tier == Tier.LTM else self.stm
        for index, current in enumerate(tier):
            if current.id == insight.id:
                tier[index] = insight
                return
        self.stm = [i for i in self.stm if i.id != insight.id]
        self.ltm = [i for i in self.ltm if i.id != insight.id]
        (self.ltm if insight.tier == Tier.LTM else self.stm).append(insight)

    def record(self, record: VoteRecord) -> None:
        self._vote_log.append(record)

    def vote(self, insight_id: str, vote: str) -> Optional[Insight]:
        """Applies a validated vote. Returns the updated insight, or None when it was discarded."""
        insight = self.get(insight_id)
        if insight is None:
            raise KeyError(insight_id)
        updated = apply_vote(insight, vote)
        if updated.tier != insight.tier:
            logger.info(f"{insight_id} moved {insight.tier} -> {updated.tier} at confidence {updated.confidence:.3f}")
        if updated.tier == Tier.STM and updated.confidence < DISCARD_BELOW:
            logger.info(f"discarding {insight_id} at confidence {updated.confidence:.3f}")
            self.stm = [i for i in self.stm if i.id != insight_id]
            self.ltm = [i for i in self.ltm if i.id != insight_id]
            return None
        self._replace(updated)
        return updated

    def retrieve(self, context: str, tags: Iterable[str], k: int,
                 provider: Optional[SimilarityProvider] = None, score_mode: str = "product",
                 ltm_scope: str = "all", workload_tag: Optional[str] = None) -> list[Insight]:
        """Top-k insights by similarity times confidence, ties by id."""
        if k < 1:
            raise ValueError("k must be >= 1")
        provider = provider or JaccardSimilarity()
        pool = list(self.stm)
        if ltm_scope == "workload" and workload_tag is not None:
            pool += [i for i in self.ltm if workload_tag in i.tags]
        else:
            pool += self.ltm
        if not pool:
            return []
        query = " ".join([context, *sorted(tags)])
        similarity = provider.scores(query, [" ".join([i.text, *i.tags]) for i in pool])
        weighted = [
            (s * i.confidence if score_mode == "product" else s, i)
            for s, i in zip(similarity, pool)
        ]
        weighted.sort(key=lambda si: (-si[0], si[1].id))
        return [i for _, i in weighted[:k]]

    # --- 4. PERSISTENCE ---
    @staticmethod
    def load_document(path: str | Path) -> list[Insight]:
        path = Path(path)
        if not path.exists():
            return []
        try:
            return MemoryDocument.model_validate_json(path.read_bytes()).insights
        except ValidationError as e:
            raise SessionStateError(f"memory document {path} does not parse: {e}") from e

    @staticmethod
    def dump_document(insights: list[Insight], path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(MemoryDocument(insights=insights).model_dump_json(indent=2))

    def load_static(self, path: str | Path) -> int:
        """Loads curated insights into STM; ids already present are skipped."""
        added = 0
        for insight in self.load_document(path):
            if self.get(insight.id) is not None:
                logger.warning(f"static insight {insight.id} collides with an existing id, skipping")
                continue
            self.stm.append(insight.model_copy(update={"tier": Tier.STM}))
            added += 1
        logger.info(f"loaded {added} static insights from {path}")
        return added

    def append_vote_log(self, path: str | Path, start: int = 0) -> int:
        with Path(path).open("a") as f:
            for record in self._vote_log[start:]:
                f.write(record.model_dump_json() + "\n")
        return len(self._vote_log)

    @staticmethod
    def read_vote_log(path: str | Path) -> list[VoteRecord]:
        path = Path(path)
        if not path.exists():
            return []
        return [VoteRecord.model_validate_json(line) for line in path.read_text().splitlines() if line.strip()]
