"""Data classes for graphs, model state, configs, and metrics."""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .cache import NodeStateCache

# Row-major float64 matrices: |E| x K node states (φ / h^l) and |R| x K relation table ψ.
NodeStates = np.ndarray
RelationTable = np.ndarray
CandidateSet = np.ndarray


class ScoreKind(str, Enum):
    DISTMULT = "distmult"
    COMPLEX = "complex"


class Slot(str, Enum):
    SUBJECT = "subject"
    OBJECT = "object"
    RELATION = "relation"


class Role(str, Enum):
    SUBJECT = "subject"
    OBJECT = "object"
    NONPARTICIPANT = "nonparticipant"


class Direction(str, Enum):
    OUTGOING = "outgoing"   # w is an object neighbour of v
    INCOMING = "incoming"   # w is a subject neighbour of v


class GradConvention(str, Enum):
    # Γ(v, r, v) inside the normaliser only differentiated through the subject slot.
    SUBJECT_SLOT = "subject_slot"
    STRICT_AUTOGRAD = "strict_autograd"


class OptimizerKind(str, Enum):
    SGD = "sgd"
    ADAGRAD = "adagrad"


class Mode(str, Enum):
    PURE_FM = "pure_fm"
    REFACTOR = "refactor"


class CandidateStrategy(str, Enum):
    FULL = "full"
    SAMPLED = "sampled"


class Directions(str, Enum):
    BOTH = "both"
    OUTGOING = "outgoing"
    INCOMING = "incoming"


class CacheEvent(str, Enum):
    CLEARED = "cleared"
    KEPT = "kept"


class ClearUnit(str, Enum):
    PASS = "pass"
    BATCH = "batch"


class RankMode(str, Enum):
    FULL = "full"
    PARTIAL = "partial"


# ---------------------------------------------------------------------------
# Graph data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Triple:
    subject: int
    relation: int
    object: int


@dataclass
class Vocabulary:
    entity_labels: list[str] = field(default_factory=list)
    relation_labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self._entities = {label: i for i, label in enumerate(self.entity_labels)}
        self._relations = {label: i for i, label in enumerate(self.relation_labels)}
        if len(self._entities) != len(self.entity_labels) or len(self._relations) != len(self.relation_labels):
            raise ValueError("Vocabulary labels must be unique")

    @property
    def n_entities(self) -> int:
        return len(self.entity_labels)

    @property
    def n_relations(self) -> int:
        return len(self.relation_labels)

    def entity_id(self, label: str) -> int | None:
        return self._entities.get(label)

    def relation_id(self, label: str) -> int | None:
        return self._relations.get(label)

    def add_entity(self, label: str) -> int:
        idx = self._entities.get(label)
        if idx is None:
            idx = len(self.entity_labels)
            self.entity_labels.append(label)
            self._entities[label] = idx
        return idx

    def add_relation(self, label: str) -> int:
        idx = self._relations.get(label)
        if idx is None:
            idx = len(self.relation_labels)
            self.relation_labels.append(label)
            self._relations[label] = idx
        return idx

    def copy(self) -> "Vocabulary":
        return Vocabulary(list(self.entity_labels), list(self.relation_labels))


@dataclass(frozen=True)
class KnowledgeGraph:
    vocab: Vocabulary
    triples: np.ndarray                        # (|T|, 3) int64 rows (subject, relation, object)
    out_nbrs: tuple[tuple[tuple[int, int], ...], ...]   # N¹₊[v]: (relation, object)
    in_nbrs: tuple[tuple[tuple[int, int], ...], ...]    # N¹₋[v]: (relation, subject)
    reciprocal: bool = False
    base_relations: int = 0                    # |R| before reciprocal augmentation

    @property
    def n_entities(self) -> int:
        return self.vocab.n_entities

    @property
    def n_relations(self) -> int:
        return self.vocab.n_relations

    @property
    def n_triples(self) -> int:
        return int(self.triples.shape[0])

    @property
    def base_relation_labels(self) -> list[str]:
        return self.vocab.relation_labels[: self.base_relations]

    def triple_list(self) -> list[Triple]:
        return [Triple(int(s), int(r), int(o)) for s, r, o in self.triples]


@dataclass
class NodeFeatures:
    matrix: np.ndarray
    source: str = "random"        # "random" (frozen, seeded) or "file"
    seed: int | None = None
    path: str | None = None

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])


@dataclass
class DatasetBundle:
    train: KnowledgeGraph
    valid_triples: np.ndarray
    test_triples: np.ndarray
    inductive_test: KnowledgeGraph | None = None
    inductive_queries: np.ndarray | None = None


@dataclass(frozen=True)
class Scope:
    """
    The triples one step (or one layer evaluation) sees, plus the softmax candidates.

    Its triple count is the |T| of α = β/|T| and of n[v]. Nodes are the batch
    endpoints and the candidates; every other row is left untouched.
    """
    triples: np.ndarray
    candidates: np.ndarray
    n_entities: int

    def __post_init__(self):
        triples = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        cands = np.asarray(self.candidates, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "triples", triples)
        object.__setattr__(self, "candidates", cands)
        if cands.size == 0:
            raise ValueError("empty candidate set")
        if np.unique(cands).size != cands.size:
            raise ValueError("candidate set has duplicates")
        if cands.min() < 0 or cands.max() >= self.n_entities:
            raise IndexError("candidate id out of range")

    @classmethod
    def full(cls, graph: KnowledgeGraph) -> "Scope":
        return cls(np.asarray(graph.triples), np.arange(graph.n_entities), graph.n_entities)

    @property
    def size(self) -> int:
        return int(self.triples.shape[0])

    @property
    def nodes(self) -> np.ndarray:
        return np.union1d(np.union1d(self.triples[:, 0], self.triples[:, 2]), self.candidates)

    def columns(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.triples[:, 0], self.triples[:, 1], self.triples[:, 2]

    def positions(self, ids: np.ndarray) -> np.ndarray:
        """Position of each id inside the candidate list (-1 when absent)."""
        index = np.full(self.n_entities, -1, dtype=np.int64)
        index[self.candidates] = np.arange(self.candidates.size)
        return index[ids]

    def gold_positions(self) -> np.ndarray:
        pos = self.positions(self.triples[:, 2])
        if np.any(pos < 0):
            raise ValueError("gold object missing from the candidate set")
        return pos


# ---------------------------------------------------------------------------
# Optimisation state and configs
# ---------------------------------------------------------------------------

@dataclass
class StepSizes:
    beta: float
    batch_size: int
    alpha_override: float | None = None

    @property
    def alpha(self) -> float:
        if self.alpha_override is not None:
            return self.alpha_override
        return self.beta / self.batch_size


@dataclass
class OptimizerState:
    kind: OptimizerKind = OptimizerKind.SGD
    eps: float = 1e-10
    node_accum: np.ndarray | None = None
    relation_accum: np.ndarray | None = None

    @classmethod
    def create(cls, kind: OptimizerKind, eps: float, n_entities: int, n_relations: int, dim: int):
        if kind is OptimizerKind.ADAGRAD:
            if eps <= 0:
                raise ValueError("AdaGrad eps must be > 0")
            return cls(kind, eps, np.zeros((n_entities, dim)), np.zeros((n_relations, dim)))
        return cls(kind, eps)

    def reset_nodes(self) -> None:
        if self.node_accum is not None:
            self.node_accum[:] = 0.0

    def copy(self) -> "OptimizerState":
        return OptimizerState(
            self.kind, self.eps,
            None if self.node_accum is None else self.node_accum.copy(),
            None if self.relation_accum is None else self.relation_accum.copy(),
        )


@dataclass
class RefactorConfig:
    score: ScoreKind = ScoreKind.DISTMULT
    beta: float = 0.1
    alpha: float | None = None          # None → β / |B|
    n3_lambda: float = 0.0
    optimizer: OptimizerKind = OptimizerKind.SGD
    adagrad_eps: float = 1e-10
    include_global_term: bool = True
    candidates: CandidateStrategy = CandidateStrategy.FULL
    directions: Directions = Directions.BOTH

    def __post_init__(self):
        if self.beta < 0 or (self.alpha is not None and self.alpha < 0):
            raise ValueError("step sizes must be >= 0")
        if self.n3_lambda < 0 or not math.isfinite(self.n3_lambda):
            raise ValueError("n3_lambda must be finite and >= 0")
        if self.optimizer is OptimizerKind.ADAGRAD and self.alpha is not None:
            raise ValueError("AdaGrad derives alpha from beta; an explicit alpha is SGD-only")

    def sizes(self, batch_size: int) -> StepSizes:
        return StepSizes(self.beta, batch_size, self.alpha)


@dataclass
class TrainConfig:
    score: ScoreKind = ScoreKind.DISTMULT
    dim: int = 128
    beta: float = 0.1
    eta: float | None = None
    alpha: float | None = None
    epochs: int = 20
    batch_size: int = 256
    negatives: int | None = None
    global_negatives: int = 1
    layers: float = math.inf
    n3_lambda: float = 0.0
    optimizer: OptimizerKind = OptimizerKind.ADAGRAD
    adagrad_eps: float = 1e-10
    seed: int = 0
    mode: Mode = Mode.REFACTOR
    candidates: CandidateStrategy = CandidateStrategy.FULL
    include_global_term: bool = True
    directions: Directions = Directions.BOTH
    clear_unit: ClearUnit = ClearUnit.PASS
    patience: int = 5

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.score is ScoreKind.COMPLEX and self.dim % 2:
            raise ValueError("complex scoring needs an even dim")

    @property
    def psi_rate(self) -> float:
        return self.beta if self.eta is None else self.eta

    def refactor_config(self) -> RefactorConfig:
        return RefactorConfig(
            score=self.score, beta=self.beta, alpha=self.alpha, n3_lambda=self.n3_lambda,
            optimizer=self.optimizer, adagrad_eps=self.adagrad_eps,
            include_global_term=self.include_global_term, candidates=self.candidates,
            directions=self.directions,
        )


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    valid_mrr: float | None
    seconds: float
    cache_event: str = ""


@dataclass
class TrainedModel:
    psi: RelationTable
    cache: "NodeStateCache"
    config: TrainConfig
    log: list[EpochRecord] = field(default_factory=list)

    @property
    def n_parameters(self) -> int:
        """Trainable parameter count: ψ for ReFactor, φ and ψ for a pure FM."""
        count = int(self.psi.size)
        if self.config.mode is Mode.PURE_FM:
            count += int(self.cache.states.size)
        return count


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Protocol:
    mode: RankMode = RankMode.FULL
    k: int = 50
    filtered: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("partial ranking needs k >= 1")

    @property
    def label(self) -> str:
        return "full" if self.mode is RankMode.FULL else f"partial-{self.k}"


@dataclass
class Metrics:
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    n_queries: int
    protocol: str = "full"
    filtered: bool = True

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "filtered": self.filtered,
            "mrr": round(self.mrr, 6),
            "hits@1": round(self.hits1, 6),
            "hits@3": round(self.hits3, 6),
            "hits@10": round(self.hits10, 6),
            "n_queries": self.n_queries,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Metrics":
        return cls(
            mrr=data["mrr"], hits1=data["hits@1"], hits3=data["hits@3"], hits10=data["hits@10"],
            n_queries=data["n_queries"], protocol=data.get("protocol", "full"),
            filtered=data.get("filtered", True),
        )
