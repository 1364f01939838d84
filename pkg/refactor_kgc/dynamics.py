"""
Reference optimisation dynamics of factorisation models.

full_gd_step is the edge-view oracle: it sums exact per-triple gradients of the
batch NLL and applies them once. The message-passing layer in layer.py must
reproduce it.
"""

import logging

import numpy as np

from .config import PROB_SUM_TOL
from .errors import NumericalError
from .models import (
    GradConvention, NodeStates, OptimizerKind, OptimizerState, RefactorConfig,
    RelationTable, Role, Scope, ScoreKind, StepSizes,
)
from .scoring import candidate_probs, log_likelihood_loss, object_grad, subject_grad

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Edge view
# ---------------------------------------------------------------------------

def edge_update(
    role: Role,
    row: np.ndarray,
    psi_r: np.ndarray,
    partner: np.ndarray,
    probs: np.ndarray,
    sizes: StepSizes,
    *,
    kind: ScoreKind = ScoreKind.DISTMULT,
    cand_rows: np.ndarray | None = None,
    position: int | None = None,
) -> np.ndarray:
    """
    Update one node row from a single edge (v, r, w).

    Subject: partner is φ[w], cand_rows are the candidate states P is over.
    Object: partner is φ[v], position is w's index in P.
    Nonparticipant u: partner is φ[v], position is u's index in P.
    """
    probs = np.asarray(probs, dtype=float)
    if abs(probs.sum() - 1.0) > PROB_SUM_TOL:
        raise NumericalError(f"probabilities sum to {probs.sum():.12f}, not 1")
    alpha = sizes.alpha

    if role is Role.SUBJECT:
        if cand_rows is None:
            raise ValueError("subject update needs the candidate rows")
        expected = probs @ cand_rows
        return row + alpha * subject_grad(kind, psi_r, partner - expected)

    if position is None:
        raise ValueError(f"{role.value} update needs a candidate position")
    message = object_grad(kind, partner, psi_r)
    if role is Role.OBJECT:
        return row + alpha * (1.0 - probs[position]) * message
    return row - alpha * probs[position] * message


# ---------------------------------------------------------------------------
# Regulariser and optimiser
# ---------------------------------------------------------------------------

def n3_gradient(row: np.ndarray, lam: float) -> np.ndarray:
    """λ·sign(x)·x², the constant 3 of d|x|³/dx absorbed into λ."""
    row = np.asarray(row, dtype=float)
    return lam * np.sign(row) * row * row


def adagrad_rescale(grad: np.ndarray, accum: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Accumulate grad², then divide grad by sqrt(accum) + eps."""
    grad = np.asarray(grad, dtype=float)
    new_accum = accum + grad * grad
    denom = np.sqrt(new_accum) + eps
    rescaled = np.divide(grad, denom, out=np.zeros_like(grad), where=denom > 0)
    return rescaled, new_accum


def apply_node_gradient(
    phi: NodeStates,
    fit_sum: np.ndarray,
    nodes: np.ndarray,
    cfg: RefactorConfig,
    batch_size: int,
    state: OptimizerState | None,
) -> NodeStates:
    """
    φ' = φ − α·Σ∇ − β·N3 (SGD), or the AdaGrad-rescaled mean gradient.

    N3 shrinks every row in `nodes` (batch endpoints and candidates), so with full
    candidates every entity is regularised once per batch; layer_apply does the same.
    """
    out = phi.copy()
    rows = phi[nodes]
    reg = n3_gradient(rows, cfg.n3_lambda)
    if cfg.optimizer is OptimizerKind.SGD:
        out[nodes] = rows - cfg.sizes(batch_size).alpha * fit_sum[nodes] - cfg.beta * reg
        return out
    if state is None or state.node_accum is None:
        raise ValueError("AdaGrad needs an OptimizerState with node accumulators")
    grad = fit_sum[nodes] / batch_size + reg
    scaled, state.node_accum[nodes] = adagrad_rescale(grad, state.node_accum[nodes], state.eps)
    out[nodes] = rows - cfg.beta * scaled
    return out


# ---------------------------------------------------------------------------
# Full gradient-descent operator
# ---------------------------------------------------------------------------

def check_no_self_loops(scope: Scope) -> None:
    s, _, o = scope.columns()
    if np.any(s == o):
        raise ValueError("self-loop triple in scope; the GD/message-passing identity assumes none")


def fit_gradient(
    scope: Scope,
    phi: NodeStates,
    psi: RelationTable,
    kind: ScoreKind,
    convention: GradConvention = GradConvention.SUBJECT_SLOT,
) -> tuple[np.ndarray, float]:
    """
    Σ over the scope's triples of ∇_φ[−log P(w | v, r)], and the mean loss.

    Under SUBJECT_SLOT the normaliser term Γ(v, r, v) is differentiated only
    through its subject slot; STRICT_AUTOGRAD also adds the object slot.
    """
    s, r, o = scope.columns()
    cands = scope.candidates
    gold = scope.gold_positions()
    n = scope.size

    hc = phi[cands]
    probs, queries = candidate_probs(kind, phi[s], psi[r], hc)
    grad = np.zeros_like(phi)

    # Subject slot: −∇Γ(v,r,w) + Σ_u P(u) ∇Γ(v,r,u), linear in the object row.
    np.add.at(grad, s, subject_grad(kind, psi[r], probs @ hc - phi[o]))

    # Object slot of every candidate: (P(u) − [u = w]) ∇_{h_u}Γ(v,r,u).
    coef = probs.copy()
    coef[np.arange(n), gold] -= 1.0
    if convention is GradConvention.SUBJECT_SLOT:
        coef[cands[None, :] == s[:, None]] = 0.0
    grad[cands] += coef.T @ queries

    return grad, log_likelihood_loss(probs, gold)


def full_gd_step(
    scope: Scope,
    phi: NodeStates,
    psi: RelationTable,
    cfg: RefactorConfig,
    state: OptimizerState | None = None,
    convention: GradConvention = GradConvention.SUBJECT_SLOT,
) -> NodeStates:
    """One synchronous gradient step on the node embeddings over the whole scope."""
    if scope.size == 0:
        raise ValueError("empty scope")
    check_no_self_loops(scope)
    fit_sum, _ = fit_gradient(scope, phi, psi, cfg.score, convention)
    return apply_node_gradient(phi, fit_sum, scope.nodes, cfg, scope.size, state)
