"""
The ReFactor layer: one gradient-descent step on node states, computed as message passing.

    h'[v] = h[v] + α Σ_{(r,w) ∈ N¹[v]} q_M(h[v], r, h[w]) − β n[v]

with outgoing messages ∇_{h_v}Γ(v,r,w), incoming messages
(1 − P(v|w,r)) ∇_{h_v}Γ(w,r,v), and the global term n[v] collecting the
normaliser contributions of every triple in scope. All probabilities come from
the pre-layer states.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .dynamics import adagrad_rescale, check_no_self_loops, full_gd_step, n3_gradient
from .models import (
    Direction, Directions, GradConvention, KnowledgeGraph, NodeStates, OptimizerKind,
    OptimizerState, RefactorConfig, RelationTable, Scope, ScoreKind,
)
from .scoring import candidate_probs, object_grad, score_all, softmax_nll, subject_grad

logger = logging.getLogger(__name__)


@dataclass
class Message:
    target: int
    value: np.ndarray
    kind: Direction


def message(kind: ScoreKind, h_v: np.ndarray, psi_r: np.ndarray, h_w: np.ndarray,
            direction: Direction, p_incoming: float | None = None) -> np.ndarray:
    """q_M along one edge; p_incoming is P(v | w, r) for incoming edges."""
    if direction is Direction.OUTGOING:
        return subject_grad(kind, psi_r, h_w)
    if p_incoming is None or not 0.0 <= p_incoming <= 1.0:
        raise ValueError(f"incoming message needs P in [0, 1], got {p_incoming}")
    return (1.0 - p_incoming) * object_grad(kind, h_w, psi_r)


# ---------------------------------------------------------------------------
# Per-node reference path
# ---------------------------------------------------------------------------

def _query_probs(scope: Scope, h: NodeStates, psi: RelationTable, kind: ScoreKind, i: int) -> np.ndarray:
    s, r, o = (int(x) for x in scope.triples[i])
    scores = score_all(kind, h[s], psi[r], h, scope.candidates)
    probs, _ = softmax_nll(scores, int(scope.gold_positions()[i]))
    return probs


def collect_messages(scope: Scope, h: NodeStates, psi: RelationTable,
                     cfg: RefactorConfig, v: int) -> list[Message]:
    """All messages v receives from its 1-hop neighbourhood inside the scope."""
    kind = cfg.score
    msgs: list[Message] = []
    for i, (s, r, o) in enumerate(scope.triples.tolist()):
        if s == v and cfg.directions is not Directions.INCOMING:
            value = message(kind, h[v], psi[r], h[o], Direction.OUTGOING)
            msgs.append(Message(v, value, Direction.OUTGOING))
        elif o == v and cfg.directions is not Directions.OUTGOING:
            p = _query_probs(scope, h, psi, kind, i)[scope.positions(np.array([v]))[0]]
            value = message(kind, h[v], psi[r], h[s], Direction.INCOMING, float(p))
            msgs.append(Message(v, value, Direction.INCOMING))
    return msgs


def global_term(scope: Scope, h: NodeStates, psi: RelationTable, v: int,
                cfg: RefactorConfig) -> np.ndarray:
    """
    n[v] as exact sums over the scope:
    (1/|T|) [ Σ_{(v,r,w)} Σ_u P(u|v,r) ∇_{h_v}Γ(v,r,u) + Σ_{(s,r,o) ∈ T⁻ᵛ} P(v|s,r) ∇_{h_v}Γ(s,r,v) ].
    """
    kind = cfg.score
    total = np.zeros(h.shape[1])
    if scope.size == 0:
        return total
    hc = h[scope.candidates]
    pos_v = int(scope.positions(np.array([v]))[0])
    for i, (s, r, o) in enumerate(scope.triples.tolist()):
        if s == v:
            probs = _query_probs(scope, h, psi, kind, i)
            total += subject_grad(kind, psi[r], probs @ hc)
        elif o != v and pos_v >= 0:
            probs = _query_probs(scope, h, psi, kind, i)
            total += probs[pos_v] * object_grad(kind, h[s], psi[r])
    return total / scope.size


def node_update(scope: Scope, h: NodeStates, psi: RelationTable, cfg: RefactorConfig, v: int) -> np.ndarray:
    """q_U for a single node under SGD, composed from collect_messages and global_term."""
    if cfg.optimizer is not OptimizerKind.SGD:
        raise ValueError("node_update composes the SGD update only")
    sizes = cfg.sizes(scope.size)
    z = sum((m.value for m in collect_messages(scope, h, psi, cfg, v)), np.zeros(h.shape[1]))
    out = h[v] + sizes.alpha * z - cfg.beta * n3_gradient(h[v], cfg.n3_lambda)
    if cfg.include_global_term:
        out = out - cfg.beta * global_term(scope, h, psi, v, cfg)
    return out


# ---------------------------------------------------------------------------
# Vectorised layer
# ---------------------------------------------------------------------------

def layer_terms(scope: Scope, h: NodeStates, psi: RelationTable,
                cfg: RefactorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Aggregated messages z and global terms n for every row (zero outside the scope)."""
    kind = cfg.score
    s, r, o = scope.columns()
    cands = scope.candidates
    gold = scope.gold_positions()
    hc = h[cands]
    probs, queries = candidate_probs(kind, h[s], psi[r], hc)

    z = np.zeros_like(h)
    if cfg.directions is not Directions.INCOMING:
        np.add.at(z, s, subject_grad(kind, psi[r], h[o]))
    if cfg.directions is not Directions.OUTGOING:
        p_in = probs[np.arange(scope.size), gold]
        np.add.at(z, o, (1.0 - p_in)[:, None] * queries)

    n = np.zeros_like(h)
    np.add.at(n, s, subject_grad(kind, psi[r], probs @ hc))
    outside = (cands[None, :] != s[:, None]) & (cands[None, :] != o[:, None])
    n[cands] += (probs * outside).T @ queries
    n /= scope.size
    return z, n


def layer_apply(
    scope: Scope,
    h: NodeStates,
    psi: RelationTable,
    cfg: RefactorConfig,
    state: OptimizerState | None = None,
) -> NodeStates:
    """
    Apply one ReFactor layer to every node of the scope; returns a fresh matrix.

    N3 covers every scope node, candidates included, matching apply_node_gradient.
    """
    if scope.size == 0:
        raise ValueError("empty scope")
    check_no_self_loops(scope)
    z, n = layer_terms(scope, h, psi, cfg)
    nodes = scope.nodes
    rows = h[nodes]
    reg = n3_gradient(rows, cfg.n3_lambda)
    global_rows = n[nodes] if cfg.include_global_term else 0.0

    out = h.copy()
    if cfg.optimizer is OptimizerKind.SGD:
        alpha = cfg.sizes(scope.size).alpha
        out[nodes] = rows + alpha * z[nodes] - cfg.beta * global_rows - cfg.beta * reg
        return out

    if state is None or state.node_accum is None:
        raise ValueError("AdaGrad needs an OptimizerState with node accumulators")
    grad = -z[nodes] / scope.size + global_rows + reg
    scaled, state.node_accum[nodes] = adagrad_rescale(grad, state.node_accum[nodes], state.eps)
    out[nodes] = rows - cfg.beta * scaled
    return out


# ---------------------------------------------------------------------------
# GD ≡ message passing
# ---------------------------------------------------------------------------

def verify_gd_equivalence(
    g: KnowledgeGraph,
    phi: NodeStates,
    psi: RelationTable,
    cfg: RefactorConfig,
    steps: int,
    convention: GradConvention = GradConvention.SUBJECT_SLOT,
) -> float:
    """
    Run `steps` full-graph layers and `steps` GD steps from the same start and
    return the largest elementwise gap seen at any step.
    """
    scope = Scope.full(g)
    state_mp = OptimizerState.create(cfg.optimizer, cfg.adagrad_eps, g.n_entities, g.n_relations, phi.shape[1])
    state_gd = state_mp.copy()
    h_mp, h_gd = phi.copy(), phi.copy()
    worst = 0.0
    for step in range(steps):
        h_mp = layer_apply(scope, h_mp, psi, cfg, state_mp)
        h_gd = full_gd_step(scope, h_gd, psi, cfg, state_gd, convention)
        gap = float(np.max(np.abs(h_mp - h_gd)))
        worst = max(worst, gap)
        logger.debug("step %d divergence %.3e", step + 1, gap)
    return worst
