"""Reordered sequential prediction with a dynamic global-label vector.

Clauses are visited nearest-first (0, -1, +1, -2, +2, ...). Slot ``k`` of the
label vector records the decision for the ``k``-th visited clause as +1
(cause) or -1 (not a cause); unvisited slots stay 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .numerics import affine, cross_entropy, softmax, softmax_cross_entropy

ORDER_MODES = ("reordered", "original")
INFER_MODES = ("predicted", "oracle")


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class ReorderPlan:
    positions: Tuple[int, ...]  # document order
    order: Tuple[int, ...]  # clause indices in visiting order

    @property
    def visited_positions(self) -> Tuple[int, ...]:
        return tuple(self.positions[i] for i in self.order)

    def inverse(self) -> Tuple[int, ...]:
        inv = [0] * len(self.order)
        for step, i in enumerate(self.order):
            inv[i] = step
        return tuple(inv)

    def to_document_order(self, values: Sequence) -> list:
        """Map per-step values back onto clause indices."""
        out = [None] * len(self.order)
        for step, i in enumerate(self.order):
            out[i] = values[step]
        return out


def reorder(positions: Sequence[int], mode: str = "reordered") -> ReorderPlan:
    """Visit order by (|position|, negative-first); ties keep document order."""
    positions = tuple(int(p) for p in positions)
    if mode == "reordered":
        order = sorted(range(len(positions)), key=lambda i: (abs(positions[i]), positions[i] > 0))
    elif mode == "original":
        order = list(range(len(positions)))
    else:
        raise ValueError(f"unknown order mode {mode!r}; expected one of {ORDER_MODES}")
    return ReorderPlan(positions, tuple(order))


@dataclass(frozen=True)
class DGLState:
    vector: Tuple[int, ...]
    step: int = 0

    @property
    def q(self) -> int:
        return len(self.vector)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.vector, dtype=np.float64)


def dgl_init(q: int) -> DGLState:
    if q < 1:
        raise ValueError(f"label vector length must be positive, got {q}")
    return DGLState((0,) * q, 0)


def dgl_update(state: DGLState, is_cause: bool) -> DGLState:
    if state.step >= state.q:
        raise CapacityError(f"label vector of length {state.q} is full")
    vec = list(state.vector)
    vec[state.step] = 1 if is_cause else -1
    return DGLState(tuple(vec), state.step + 1)


def teacher_forced_states(labels_in_order: Sequence[bool], q: int) -> np.ndarray:
    """Row ``k`` is the label vector seen before step ``k`` when built from ``labels_in_order``."""
    n = len(labels_in_order)
    if n > q:
        raise CapacityError(f"{n} clauses exceed label vector length {q}")
    signs = np.where(np.asarray(labels_in_order, dtype=bool), 1.0, -1.0)
    G = np.zeros((n, q))
    rows, cols = np.tril_indices(n, k=-1)
    G[rows, cols] = signs[cols]
    return G


@dataclass
class CauseHead:
    W: np.ndarray  # 2 x (d + q)
    b: np.ndarray  # 2


def predict_cause(r, state: DGLState, head: CauseHead) -> np.ndarray:
    """Two-class distribution from ``[r; label vector]``; index 1 is "cause"."""
    x = np.concatenate([np.asarray(r, dtype=np.float64), state.as_array()])
    return softmax(affine(x, head.W, head.b))


def decide(y_hat) -> bool:
    # exact ties go to the non-cause class
    return bool(y_hat[1] > y_hat[0])


def cause_loss(predictions: Sequence[np.ndarray], gold: Sequence[bool]) -> float:
    if len(predictions) != len(gold):
        raise ValueError(f"{len(predictions)} predictions for {len(gold)} labels")
    total = 0.0
    for y_hat, g in zip(predictions, gold):
        truth = np.array([0.0, 1.0]) if g else np.array([1.0, 0.0])
        total += cross_entropy(y_hat, truth)
    return total


def cause_head_loss(features, labels, W, b):
    """Batched cause loss. Returns ``(loss, probs, dfeatures, dW, db)``."""
    targets = np.asarray(labels, dtype=np.int64)
    loss, probs, dlogits = softmax_cross_entropy(affine(features, W, b), targets)
    return loss, probs, dlogits @ W, dlogits.T @ features, dlogits.sum(axis=0)


def sequential_predict(
    features: np.ndarray,
    plan: ReorderPlan,
    head: CauseHead,
    q: int,
    gold: Sequence[bool] | None = None,
) -> List[bool]:
    """Greedy reordered prediction over precomputed clause features.

    When ``gold`` is given the label vector is filled from gold labels
    (oracle mode); predictions are still the model's own.
    """
    n = len(plan.order)
    if n > q:
        raise CapacityError(f"{n} clauses exceed label vector length {q}")
    state = dgl_init(q)
    labels = []
    for i in plan.order:
        pred = decide(predict_cause(features[i], state, head))
        labels.append(pred)
        state = dgl_update(state, gold[i] if gold is not None else pred)
    return plan.to_document_order(labels)


def infer_document(doc, model, mode: str = "predicted") -> List[bool]:
    """Predict cause labels for ``doc``, returned in document order.

    Models without a label vector predict every clause independently.
    """
    if mode not in INFER_MODES:
        raise ValueError(f"unknown inference mode {mode!r}; expected one of {INFER_MODES}")
    spec = model.spec
    if len(doc) > spec.q:
        raise CapacityError(f"document {doc.doc_id} has {len(doc)} clauses; model capacity is {spec.q}")
    feats = model.features(doc).features
    head = CauseHead(model.store["cause_head.W"], model.store["cause_head.b"])
    if not spec.use_dgl:
        probs = softmax(affine(feats, head.W, head.b))
        return [bool(p[1] > p[0]) for p in probs]
    plan = reorder(model.positions(doc), spec.order_mode)
    gold = doc.gold_causes if mode == "oracle" else None
    return sequential_predict(feats, plan, head, spec.q, gold)
