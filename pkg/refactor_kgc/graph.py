"""Triple-file ingestion, reciprocal augmentation, neighbourhoods, and node features."""

import csv
import io
import logging
from pathlib import Path

import numpy as np

from .config import INVERSE_SUFFIX
from .errors import GraphFormatError, VocabularyError
from .models import DatasetBundle, KnowledgeGraph, NodeFeatures, Vocabulary

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def build_graph(vocab: Vocabulary, triples, reciprocal: bool = False,
                base_relations: int | None = None) -> KnowledgeGraph:
    """Index a triple array into an immutable KnowledgeGraph."""
    arr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    n_ent, n_rel = vocab.n_entities, vocab.n_relations
    if arr.size:
        if arr[:, [0, 2]].min() < 0 or arr[:, [0, 2]].max() >= n_ent:
            raise IndexError("triple references an entity outside the vocabulary")
        if arr[:, 1].min() < 0 or arr[:, 1].max() >= n_rel:
            raise IndexError("triple references a relation outside the vocabulary")
    out_nbrs: list[list[tuple[int, int]]] = [[] for _ in range(n_ent)]
    in_nbrs: list[list[tuple[int, int]]] = [[] for _ in range(n_ent)]
    for s, r, o in arr.tolist():
        out_nbrs[s].append((r, o))
        in_nbrs[o].append((r, s))
    arr.setflags(write=False)
    return KnowledgeGraph(
        vocab=vocab,
        triples=arr,
        out_nbrs=tuple(tuple(n) for n in out_nbrs),
        in_nbrs=tuple(tuple(n) for n in in_nbrs),
        reciprocal=reciprocal,
        base_relations=n_rel if base_relations is None else base_relations,
    )


def load_triples(
    text: str,
    existing_vocab: Vocabulary | None = None,
    *,
    freeze_entities: bool = False,
    freeze_relations: bool = False,
) -> KnowledgeGraph:
    """
    Parse tab-separated "subject<TAB>relation<TAB>object" lines.

    Ids are assigned in first-seen order, extending a copy of existing_vocab when
    given. Duplicate lines are dropped; self-loops and malformed lines raise
    GraphFormatError with the 1-based line number.
    """
    vocab = existing_vocab.copy() if existing_vocab is not None else Vocabulary()
    seen: set[tuple[int, int, int]] = set()
    rows: list[tuple[int, int, int]] = []

    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise GraphFormatError(f"line {lineno}: expected 3 tab-separated fields, got {len(parts)}")
        s_label, r_label, o_label = (p.strip() for p in parts)
        if not s_label or not r_label or not o_label:
            raise GraphFormatError(f"line {lineno}: empty field")
        if s_label == o_label:
            raise GraphFormatError(f"line {lineno}: self-loop triple on {s_label!r}")

        s = _lookup(vocab, s_label, freeze_entities, "entity", lineno)
        r = _lookup(vocab, r_label, freeze_relations, "relation", lineno)
        o = _lookup(vocab, o_label, freeze_entities, "entity", lineno)
        key = (s, r, o)
        if key not in seen:
            seen.add(key)
            rows.append(key)

    return build_graph(vocab, rows)


def _lookup(vocab: Vocabulary, label: str, frozen: bool, kind: str, lineno: int) -> int:
    get = vocab.entity_id if kind == "entity" else vocab.relation_id
    idx = get(label)
    if idx is not None:
        return idx
    if frozen:
        raise VocabularyError(f"line {lineno}: unknown {kind} label {label!r}")
    return vocab.add_entity(label) if kind == "entity" else vocab.add_relation(label)


def _read_text(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise GraphFormatError(f"{path}: not valid UTF-8 (byte {e.start})")


def load_triple_file(path: str | Path, existing_vocab: Vocabulary | None = None, **freeze) -> KnowledgeGraph:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Triple file not found: {path}")
    graph = load_triples(_read_text(path), existing_vocab, **freeze)
    logger.info("Loaded %s: %d entities, %d relations, %d triples",
                path.name, graph.n_entities, graph.n_relations, graph.n_triples)
    return graph


def dump_triples(g: KnowledgeGraph) -> str:
    """Write the original (non-reciprocal) triples back in the triple-file format."""
    ents, rels = g.vocab.entity_labels, g.vocab.relation_labels
    rows = g.triples[: g.n_triples // 2] if g.reciprocal else g.triples
    return "".join(f"{ents[s]}\t{rels[r]}\t{ents[o]}\n" for s, r, o in rows.tolist())


def add_reciprocals(g: KnowledgeGraph) -> KnowledgeGraph:
    """Append (w, r + |R|, v) for every (v, r, w); relation labels gain an inverse suffix."""
    if g.reciprocal:
        raise ValueError("graph already carries reciprocal triples")
    n_rel = g.n_relations
    inverse_labels = [label + INVERSE_SUFFIX for label in g.vocab.relation_labels]
    clashes = [label for label in inverse_labels if g.vocab.relation_id(label) is not None]
    if clashes:
        raise VocabularyError(f"relation label {clashes[0]!r} collides with a generated inverse label")
    vocab = Vocabulary(list(g.vocab.entity_labels), list(g.vocab.relation_labels) + inverse_labels)
    inverse = g.triples[:, [2, 1, 0]].copy()
    inverse[:, 1] += n_rel
    triples = np.concatenate([g.triples, inverse], axis=0)
    return build_graph(vocab, triples, reciprocal=True, base_relations=n_rel)


def reciprocal_queries(triples: np.ndarray, base_relations: int) -> np.ndarray:
    """Mirror evaluation triples onto the inverse relations, (w, r + |R|, v)."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    inverse = triples[:, [2, 1, 0]].copy()
    inverse[:, 1] += base_relations
    return inverse


def neighborhoods(g: KnowledgeGraph, v: int) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """Return (N¹₊[v], N¹₋[v]) as lists of (relation, neighbour)."""
    if not 0 <= v < g.n_entities:
        raise IndexError(f"entity id {v} out of range [0, {g.n_entities})")
    return list(g.out_nbrs[v]), list(g.in_nbrs[v])


# ---------------------------------------------------------------------------
# Node features
# ---------------------------------------------------------------------------

def random_features(n_entities: int, dim: int, seed: int) -> NodeFeatures:
    """Frozen i.i.d. Normal(0, 1/sqrt(K)) rows."""
    rng = np.random.default_rng([seed, 0x58])
    matrix = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(n_entities, dim))
    return NodeFeatures(matrix=matrix, source="random", seed=seed)


def load_features(text: str, vocab: Vocabulary, dim: int, *,
                  fill_random: bool = False, seed: int = 0) -> NodeFeatures:
    """
    Parse header-free "label,f1,...,fK" rows into a |E| x K matrix in vocab order.

    Entities missing from the file are an error unless fill_random is set, in which
    case their rows come from random_features(seed).
    """
    matrix = np.full((vocab.n_entities, dim), np.nan)
    present = np.zeros(vocab.n_entities, dtype=bool)

    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or not any(cell.strip() for cell in row):
            continue
        label, values = row[0].strip(), row[1:]
        if len(values) != dim:
            raise GraphFormatError(f"feature line {lineno}: expected {dim} values, got {len(values)}")
        idx = vocab.entity_id(label)
        if idx is None:
            raise GraphFormatError(f"feature line {lineno}: unknown entity {label!r}")
        try:
            vec = np.array([float(v) for v in values])
        except ValueError as e:
            raise GraphFormatError(f"feature line {lineno}: {e}")
        if not np.all(np.isfinite(vec)):
            raise GraphFormatError(f"feature line {lineno}: non-finite value for {label!r}")
        matrix[idx] = vec
        present[idx] = True

    missing = np.flatnonzero(~present)
    if missing.size:
        if not fill_random:
            names = ", ".join(repr(vocab.entity_labels[i]) for i in missing[:5])
            raise GraphFormatError(f"{missing.size} entities have no features, e.g. {names}")
        filler = random_features(vocab.n_entities, dim, seed).matrix
        matrix[missing] = filler[missing]
        logger.info("Filled %d feature rows with seeded random vectors", missing.size)

    return NodeFeatures(matrix=matrix, source="file", seed=seed if missing.size else None)


def load_feature_file(path: str | Path, vocab: Vocabulary, dim: int, **kwargs) -> NodeFeatures:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Feature file not found: {path}")
    feats = load_features(_read_text(path), vocab, dim, **kwargs)
    feats.path = str(path)
    return feats


# ---------------------------------------------------------------------------
# Dataset bundles
# ---------------------------------------------------------------------------

def load_bundle(train_path, valid_path="", test_path="", reciprocals: bool = True) -> DatasetBundle:
    """Load a transductive split; valid/test must only use training labels."""
    train = load_triple_file(train_path)
    frozen = dict(freeze_entities=True, freeze_relations=True)
    valid = load_triple_file(valid_path, train.vocab, **frozen).triples if valid_path else np.empty((0, 3), np.int64)
    test = load_triple_file(test_path, train.vocab, **frozen).triples if test_path else np.empty((0, 3), np.int64)
    if reciprocals:
        train = add_reciprocals(train)
    return DatasetBundle(train=train, valid_triples=np.asarray(valid), test_triples=np.asarray(test))


def bind_inductive(train: KnowledgeGraph, test: KnowledgeGraph, *,
                   valid_triples=None, test_triples=None, queries=None) -> DatasetBundle:
    """Pair a training graph with an inductive test graph over new entities."""
    if train.base_relation_labels != test.base_relation_labels:
        raise VocabularyError("inductive graph relation vocabulary differs from training")
    overlap = set(train.vocab.entity_labels) & set(test.vocab.entity_labels)
    if overlap:
        sample = ", ".join(repr(x) for x in sorted(overlap)[:5])
        raise VocabularyError(f"{len(overlap)} entities shared with the training graph, e.g. {sample}")
    empty = np.empty((0, 3), np.int64)
    return DatasetBundle(
        train=train,
        valid_triples=empty if valid_triples is None else np.asarray(valid_triples),
        test_triples=empty if test_triples is None else np.asarray(test_triples),
        inductive_test=test,
        inductive_queries=None if queries is None else np.asarray(queries),
    )


def load_inductive(bundle: DatasetBundle, graph_path, queries_path, reciprocals: bool = True) -> DatasetBundle:
    """Load an `_ind` graph and its query file with relations frozen to the training vocab."""
    base_vocab = Vocabulary([], list(bundle.train.base_relation_labels))
    test = load_triple_file(graph_path, base_vocab, freeze_relations=True)
    queries = load_triple_file(queries_path, test.vocab, freeze_relations=True)
    if queries.n_entities > test.n_entities:
        # Query-only entities get isolated rows in the inductive graph.
        test = build_graph(queries.vocab, test.triples)
    if reciprocals:
        test = add_reciprocals(test)
    return bind_inductive(
        bundle.train, test, valid_triples=bundle.valid_triples,
        test_triples=bundle.test_triples, queries=queries.triples,
    )


def random_graph(rng: np.random.Generator, max_entities: int = 12, max_relations: int = 4,
                 max_triples: int = 40) -> KnowledgeGraph:
    """Draw a small self-loop-free graph (used by the equivalence sweep)."""
    n_ent = int(rng.integers(2, max_entities + 1))
    n_rel = int(rng.integers(1, max_relations + 1))
    n_tri = int(rng.integers(1, max_triples + 1))
    vocab = Vocabulary([f"e{i}" for i in range(n_ent)], [f"r{i}" for i in range(n_rel)])
    s = rng.integers(0, n_ent, size=n_tri)
    o = (s + rng.integers(1, n_ent, size=n_tri)) % n_ent
    r = rng.integers(0, n_rel, size=n_tri)
    rows = list(dict.fromkeys(zip(s.tolist(), r.tolist(), o.tolist())))
    return build_graph(vocab, rows)
