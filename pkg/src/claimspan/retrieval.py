"""Okapi BM25 retrieval and the tweet-query vs span-query comparison.

The experiment: retrieve evidence documents once using each post's full text
as the query and once using only its annotated claim spans, then compare mean
P@k and nDCG@k between the two conditions against shared relevance judgments.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .preprocess import AnnotatedPost, CorpusFormatError, normalize_text, tokenize

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75


def index_terms(text: str) -> list[str]:
    """Query/document terms: URL-stripped, tokenized, lowercased; tokens with
    no alphanumeric character are dropped."""
    clean, _ = normalize_text(text)
    return [t.surface.lower() for t in tokenize(clean)
            if any(c.isalnum() for c in t.surface)]


@dataclass(frozen=True)
class Bm25Index:
    doc_ids: tuple[str, ...]
    doc_terms: tuple[dict, ...]          # term -> tf per document
    doc_lengths: tuple[int, ...]
    doc_freq: dict
    avgdl: float
    k1: float
    b: float

    @property
    def n_docs(self) -> int:
        return len(self.doc_ids)


def build_index(docs: list[dict], k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> Bm25Index:
    """``docs`` entries need "id" and "text"; duplicate ids are rejected."""
    ids, term_maps, lengths = [], [], []
    doc_freq: dict[str, int] = {}
    seen = set()
    for doc in docs:
        doc_id = doc["id"]
        if doc_id in seen:
            raise ValueError(f"duplicate document id {doc_id!r}")
        seen.add(doc_id)
        terms = index_terms(doc["text"])
        tf: dict[str, int] = {}
        for term in terms:
            tf[term] = tf.get(term, 0) + 1
        for term in tf:
            doc_freq[term] = doc_freq.get(term, 0) + 1
        ids.append(doc_id)
        term_maps.append(tf)
        lengths.append(len(terms))
    avgdl = sum(lengths) / len(lengths) if lengths else 0.0
    return Bm25Index(tuple(ids), tuple(term_maps), tuple(lengths), doc_freq, avgdl, k1, b)


def idf(index: Bm25Index, term: str) -> float:
    df = index.doc_freq.get(term, 0)
    return math.log((index.n_docs - df + 0.5) / (df + 0.5) + 1.0)


def query(index: Bm25Index, text: str, k: int) -> list[tuple[str, float]]:
    """Top-k (doc_id, score), score-descending with ties broken by doc id.

    Every occurrence of a query term contributes; documents sharing no term
    with the query are not returned, so an all-unknown query yields [].
    """
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    terms = index_terms(text)
    scores: dict[int, float] = {}
    for term in terms:
        term_idf = idf(index, term)
        for di in range(index.n_docs):
            tf = index.doc_terms[di].get(term, 0)
            if tf == 0:
                continue
            norm = index.k1 * (1.0 - index.b + index.b * index.doc_lengths[di] / index.avgdl)
            scores[di] = scores.get(di, 0.0) + term_idf * tf * (index.k1 + 1.0) / (tf + norm)
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], index.doc_ids[kv[0]]))
    return [(index.doc_ids[di], s) for di, s in ranked[:k]]


# ---------------------------------------------------------------------------
# Ranking quality

@dataclass
class RetrievalJudgment:
    query_id: str
    ranked: list[str]
    relevant: set = field(default_factory=set)

    def __post_init__(self):
        if len(set(self.ranked)) != len(self.ranked):
            raise ValueError(f"query {self.query_id}: ranked list repeats a document")


def precision_at_k(judged: RetrievalJudgment, k: int) -> float:
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    hits = sum(1 for d in judged.ranked[:k] if d in judged.relevant)
    return hits / k


def ndcg_at_k(judged: RetrievalJudgment, k: int) -> float:
    """Binary-relevance nDCG; 0 when the query has no relevant documents."""
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    dcg = sum(1.0 / math.log2(i + 2)
              for i, d in enumerate(judged.ranked[:k]) if d in judged.relevant)
    ideal_hits = min(k, len(judged.relevant))
    idcg = sum(1.0 / math.log2(i + 2) for i in range(ideal_hits))
    if idcg == 0.0:
        return 0.0
    return dcg / idcg


# ---------------------------------------------------------------------------
# Tweet vs span conditions

def span_query_text(post: AnnotatedPost) -> str:
    return " ".join(post.text[s.start:s.end] for s in post.spans)


def compare_conditions(posts: list[AnnotatedPost], docs: list[dict],
                       relevant_by_query: dict[str, set],
                       k_list: tuple[int, ...] = (3, 5),
                       k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> dict:
    """Mean P@k and nDCG@k per condition over all posts.

    A post with no annotated spans gets an empty span-condition query and
    scores 0 there; both conditions always cover every post.
    """
    if not posts:
        raise ValueError("no query posts")
    index = build_index(docs, k1, b)
    max_k = max(k_list)
    conditions = {"tweets": lambda p: p.text, "spans": span_query_text}
    report: dict = {"k_list": list(k_list), "n_queries": len(posts), "conditions": {}}
    for name, to_query in conditions.items():
        sums = {f"p@{k}": 0.0 for k in k_list}
        sums.update({f"ndcg@{k}": 0.0 for k in k_list})
        for post in posts:
            ranked = [d for d, _s in query(index, to_query(post), max_k)]
            judged = RetrievalJudgment(post.id, ranked,
                                       relevant_by_query.get(post.id, set()))
            for k in k_list:
                sums[f"p@{k}"] += precision_at_k(judged, k)
                sums[f"ndcg@{k}"] += ndcg_at_k(judged, k)
        report["conditions"][name] = {key: val / len(posts) for key, val in sums.items()}
    return report


# ---------------------------------------------------------------------------
# File formats

def load_documents(path) -> list[dict]:
    """Line-delimited JSON objects with "id" and "text"."""
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            if not isinstance(doc, dict) or "id" not in doc or "text" not in doc:
                raise CorpusFormatError(f"{path}:{lineno}: need \"id\" and \"text\" fields")
            docs.append({"id": str(doc["id"]), "text": str(doc["text"])})
    return docs


def load_judgments(path) -> dict[str, set]:
    """Line-delimited {"query_id", "relevant": [...]} records."""
    out: dict[str, set] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            if not isinstance(rec, dict) or "query_id" not in rec or "relevant" not in rec:
                raise CorpusFormatError(f"{path}:{lineno}: need \"query_id\" and \"relevant\"")
            qid = str(rec["query_id"])
            if qid in out:
                raise CorpusFormatError(f"{path}:{lineno}: duplicate query_id {qid!r}")
            out[qid] = {str(d) for d in rec["relevant"]}
    return out


def save_judgments(path, judgments: list[RetrievalJudgment]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for j in judgments:
            fh.write(json.dumps({"query_id": j.query_id, "ranked": j.ranked,
                                 "relevant": sorted(j.relevant)}) + "\n")
