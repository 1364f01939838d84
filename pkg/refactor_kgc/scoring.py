"""
Score functions, their closed-form gradients, and the softmax / NLL machinery.

Both scores are multilinear in (subject, relation, object), so every slot gradient
is independent of the argument it is taken against. All helpers broadcast over
leading axes; the last axis is the embedding dimension K. ComplEx rows are laid
out as [real (0:d) | imaginary (d:)] with d = K/2.
"""

import numpy as np

from .models import CandidateSet, NodeStates, ScoreKind, Slot


def _halves(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = x.shape[-1] // 2
    return x[..., :d], x[..., d:]


def _check(kind: ScoreKind, *vecs: np.ndarray) -> None:
    dims = {np.shape(v)[-1] for v in vecs}
    if len(dims) != 1:
        raise ValueError(f"dimension mismatch: {sorted(dims)}")
    if kind is ScoreKind.COMPLEX and dims.pop() % 2:
        raise ValueError("ComplEx needs an even embedding dimension")


def subject_grad(kind: ScoreKind, psi_r: np.ndarray, hw: np.ndarray) -> np.ndarray:
    """∇_{h_v} Γ(v, r, w)."""
    if kind is ScoreKind.DISTMULT:
        return psi_r * hw
    r_re, r_im = _halves(psi_r)
    w_re, w_im = _halves(hw)
    return np.concatenate([r_re * w_re + r_im * w_im, r_re * w_im - r_im * w_re], axis=-1)


def object_grad(kind: ScoreKind, hv: np.ndarray, psi_r: np.ndarray) -> np.ndarray:
    """∇_{h_w} Γ(v, r, w); also the query vector whose dot product with h_w is the score."""
    if kind is ScoreKind.DISTMULT:
        return psi_r * hv
    r_re, r_im = _halves(psi_r)
    v_re, v_im = _halves(hv)
    return np.concatenate([r_re * v_re - r_im * v_im, r_re * v_im + r_im * v_re], axis=-1)


def relation_grad(kind: ScoreKind, hv: np.ndarray, hw: np.ndarray) -> np.ndarray:
    """∇_{ψ_r} Γ(v, r, w)."""
    if kind is ScoreKind.DISTMULT:
        return hv * hw
    v_re, v_im = _halves(hv)
    w_re, w_im = _halves(hw)
    return np.concatenate([v_re * w_re + v_im * w_im, v_re * w_im - v_im * w_re], axis=-1)


def score(kind: ScoreKind, hv, psi_r, hw) -> float:
    hv, psi_r, hw = (np.asarray(x, dtype=float) for x in (hv, psi_r, hw))
    _check(kind, hv, psi_r, hw)
    if kind is ScoreKind.DISTMULT:
        return float(np.sum(hv * psi_r * hw))
    r_re, r_im = _halves(psi_r)
    v_re, v_im = _halves(hv)
    w_re, w_im = _halves(hw)
    return float(
        np.sum(r_re * v_re * w_re) + np.sum(r_re * v_im * w_im)
        + np.sum(r_im * v_re * w_im) - np.sum(r_im * v_im * w_re)
    )


def score_all(kind: ScoreKind, hv, psi_r, states: NodeStates, cands: CandidateSet) -> np.ndarray:
    """Scores of (v, r, u) for every u in cands, in candidate order."""
    cands = np.asarray(cands, dtype=np.int64)
    if cands.size == 0:
        raise ValueError("empty candidate set")
    hv, psi_r = np.asarray(hv, dtype=float), np.asarray(psi_r, dtype=float)
    _check(kind, hv, psi_r, states[0])
    return states[cands] @ object_grad(kind, hv, psi_r)


def grad_score(kind: ScoreKind, slot: Slot, hv, psi_r, hw) -> np.ndarray:
    hv, psi_r, hw = (np.asarray(x, dtype=float) for x in (hv, psi_r, hw))
    _check(kind, hv, psi_r, hw)
    if slot is Slot.SUBJECT:
        return subject_grad(kind, psi_r, hw)
    if slot is Slot.OBJECT:
        return object_grad(kind, hv, psi_r)
    return relation_grad(kind, hv, hw)


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_nll(scores, gold_index: int) -> tuple[np.ndarray, float]:
    scores = np.asarray(scores, dtype=float)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if not 0 <= gold_index < scores.shape[0]:
        raise IndexError(f"gold index {gold_index} out of range")
    shifted = scores - scores.max()
    log_z = np.log(np.exp(shifted).sum())
    probs = np.exp(shifted - log_z)
    return probs, float(log_z - shifted[gold_index])


def candidate_probs(kind: ScoreKind, hs: np.ndarray, psi_r: np.ndarray,
                    hc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Batched P(u | s, r) over candidate rows hc.

    Returns (probs, queries): probs is (n, m); queries[i] = ∇_{h_u} Γ(s_i, r_i, u).
    """
    queries = object_grad(kind, hs, psi_r)
    return softmax_rows(queries @ hc.T), queries


def log_likelihood_loss(probs: np.ndarray, gold_pos: np.ndarray) -> float:
    """Mean −log P(gold) over a batch of probability rows."""
    picked = probs[np.arange(probs.shape[0]), gold_pos]
    return float(-np.mean(np.log(np.maximum(picked, np.finfo(float).tiny))))
