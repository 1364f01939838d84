"""Ranking protocols (full / partial, raw / filtered) and MRR / Hits@K."""

import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import THREADS
from .graph import reciprocal_queries
from .models import Metrics, NodeStates, Protocol, RankMode, RelationTable, ScoreKind
from .scoring import object_grad

logger = logging.getLogger(__name__)

HITS_AT = (1, 3, 10)


class FilterIndex:
    """Known-true objects per (subject, relation), over train ∪ valid ∪ test."""

    def __init__(self):
        self._objects: dict[tuple[int, int], set[int]] = defaultdict(set)
        self._frozen: dict[tuple[int, int], np.ndarray] = {}

    @classmethod
    def from_triples(cls, *splits, base_relations: int | None = None) -> "FilterIndex":
        """
        Index every split. With base_relations set, base triples are also indexed in
        their reciprocal direction (o, r + |R|, s).
        """
        index = cls()
        for split in splits:
            arr = np.asarray(split, dtype=np.int64).reshape(-1, 3)
            index.add(arr)
            if base_relations is not None:
                index.add(reciprocal_queries(arr[arr[:, 1] < base_relations], base_relations))
        return index

    def add(self, triples: np.ndarray) -> None:
        for s, r, o in np.asarray(triples, dtype=np.int64).reshape(-1, 3).tolist():
            self._objects[(s, r)].add(o)
            self._frozen.pop((s, r), None)

    def known(self, subject: int, relation: int) -> np.ndarray:
        key = (subject, relation)
        out = self._frozen.get(key)
        if out is None:
            out = np.fromiter(sorted(self._objects.get(key, ())), dtype=np.int64)
            self._frozen[key] = out
        return out

    def __contains__(self, triple) -> bool:
        s, r, o = (int(x) for x in triple)
        return o in self._objects.get((s, r), ())

    def __len__(self) -> int:
        return sum(len(v) for v in self._objects.values())


def _mean_rank(scores: np.ndarray, gold_score: float) -> float:
    """1 + #higher + (#ties excluding gold) / 2; scores include the gold itself."""
    higher = int(np.count_nonzero(scores > gold_score))
    ties = int(np.count_nonzero(scores == gold_score)) - 1
    return 1.0 + higher + ties / 2.0


def rank_query(
    h: NodeStates,
    psi: RelationTable,
    query,
    protocol: Protocol,
    filt: FilterIndex | None,
    rng: np.random.Generator | None = None,
    kind: ScoreKind = ScoreKind.DISTMULT,
) -> float:
    """Rank of the gold object of (v, r, w) under the protocol's candidate pool."""
    v, r, w = (int(x) for x in query)
    n_ent = h.shape[0]
    if not 0 <= w < n_ent or not 0 <= v < n_ent:
        raise IndexError(f"query {query} references an entity outside the states")
    q = object_grad(kind, h[v], psi[r])

    if protocol.mode is RankMode.FULL:
        cands = np.arange(n_ent)
        scores = h @ q
    else:
        if rng is None:
            raise ValueError("partial ranking needs an rng")
        pool = np.delete(np.arange(n_ent), w)
        negatives = rng.choice(pool, size=min(protocol.k, pool.size), replace=False)
        cands = np.concatenate([[w], negatives])
        scores = h[cands] @ q

    keep = np.ones(cands.size, dtype=bool)
    if protocol.filtered and filt is not None:
        keep &= ~np.isin(cands, filt.known(v, r)) | (cands == w)
    gold_score = scores[cands == w][0]
    return _mean_rank(scores[keep], gold_score)


def metrics_from_ranks(ranks, protocol: str = "full", filtered: bool = True) -> Metrics:
    ranks = np.asarray(ranks, dtype=float)
    if ranks.size == 0:
        raise ValueError("no ranks to aggregate")
    if np.any(ranks < 1):
        raise ValueError("ranks must be >= 1")
    h1, h3, h10 = (float(np.mean(ranks <= k)) for k in HITS_AT)
    return Metrics(
        mrr=float(np.mean(1.0 / ranks)), hits1=h1, hits3=h3, hits10=h10,
        n_queries=int(ranks.size), protocol=protocol, filtered=filtered,
    )


def metrics_by_relation(ranks, relations, labels: list[str] | None = None,
                        protocol: str = "full", filtered: bool = True) -> dict[str, Metrics]:
    ranks = np.asarray(ranks, dtype=float)
    relations = np.asarray(relations, dtype=np.int64)
    if ranks.shape != relations.shape:
        raise ValueError("ranks and relations must align")
    out = {}
    for rel in np.unique(relations).tolist():
        name = labels[rel] if labels is not None else str(rel)
        out[name] = metrics_from_ranks(ranks[relations == rel], protocol, filtered)
    return out


def query_ranks(
    h: NodeStates,
    psi: RelationTable,
    triples,
    protocol: Protocol,
    filt: FilterIndex | None,
    kind: ScoreKind = ScoreKind.DISTMULT,
    *,
    base_relations: int | None = None,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Rank every evaluation triple, plus its reciprocal query when base_relations is set.

    Returns (ranks, base relation id per query). Query i draws its partial-ranking
    negatives from default_rng([seed, i]), so ranks do not depend on thread scheduling.
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    queries = triples
    if base_relations is not None:
        queries = np.concatenate([triples, reciprocal_queries(triples, base_relations)])
    if queries.shape[0] == 0:
        raise ValueError("no evaluation triples")

    def one(i: int) -> float:
        rng = np.random.default_rng([seed, i]) if protocol.mode is RankMode.PARTIAL else None
        return rank_query(h, psi, queries[i], protocol, filt, rng, kind)

    logger.info("Ranking %d queries (%s, %s)", queries.shape[0], protocol.label,
                "filtered" if protocol.filtered else "raw")
    with ThreadPoolExecutor(max_workers=THREADS) as pool:
        ranks = np.fromiter(pool.map(one, range(queries.shape[0])), dtype=float, count=queries.shape[0])

    relations = queries[:, 1]
    if base_relations is not None:
        relations = relations % base_relations
    return ranks, relations


def evaluate(
    h: NodeStates,
    psi: RelationTable,
    triples,
    protocol: Protocol,
    filt: FilterIndex | None,
    kind: ScoreKind = ScoreKind.DISTMULT,
    *,
    base_relations: int | None = None,
    seed: int = 0,
) -> Metrics:
    ranks, _ = query_ranks(h, psi, triples, protocol, filt, kind, base_relations=base_relations, seed=seed)
    return metrics_from_ranks(ranks, protocol.label, protocol.filtered)
