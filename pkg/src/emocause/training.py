"""Combined loss, teacher-forced training and the SGD optimizer."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import DEFAULT_CLIP, DEFAULT_Q_MAX, Document, build_vocab
from .dgl import ORDER_MODES, CapacityError, cause_head_loss, reorder, teacher_forced_states
from .model import L2_PARAMS, POSITION_MODES, Model, ModelSpec, init_params, l2_penalty
from .numerics import ParameterStore
from .pae import position_head_loss

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lambda_p: float = 1.0
    lambda_c: float = 1.0
    l2: float = 1e-5
    learning_rate: float = 0.005
    epochs: int = 10
    clip_norm: float = 5.0
    optimizer: str = "sgd"
    seed: int = 0
    use_position: bool = True
    use_pae_loss: bool = True
    use_dgl: bool = True
    order_mode: str = "reordered"
    position_mode: str = "PAE"
    word_dim: int = 200
    position_dim: int = 50
    hidden: int = 100
    attention_dim: int = 100
    clip: int = DEFAULT_CLIP
    q_max: int = DEFAULT_Q_MAX
    min_count: int = 1
    init_scale: float = 0.01

    def validate(self) -> None:
        for name in ("lambda_p", "lambda_c", "l2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {sorted(OPTIMIZERS)}")
        if self.order_mode not in ORDER_MODES:
            raise ValueError(f"order_mode must be one of {ORDER_MODES}")
        if self.position_mode not in POSITION_MODES[1:]:
            raise ValueError(f"position_mode must be one of {POSITION_MODES[1:]}")
        if self.use_pae_loss and not (self.use_position and self.position_mode == "PAE"):
            raise ValueError("the position loss needs use_position with position_mode PAE")

    def model_spec(self, vocab_size: int) -> ModelSpec:
        return ModelSpec(
            vocab_size=vocab_size,
            word_dim=self.word_dim,
            position_dim=self.position_dim,
            hidden=self.hidden,
            attention_dim=self.attention_dim,
            clip=self.clip,
            q=self.q_max,
            position_mode=self.position_mode if self.use_position else "none",
            position_head=self.use_pae_loss,
            use_dgl=self.use_dgl,
            order_mode=self.order_mode,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class LossBreakdown:
    position: float
    cause: float
    l2: float
    total: float
    lambda_p: float = 1.0
    lambda_c: float = 1.0
    lambda_l2: float = 0.0

    @classmethod
    def combine(cls, position, cause, l2, lambda_p, lambda_c, lambda_l2) -> "LossBreakdown":
        total = lambda_p * position + lambda_c * cause + lambda_l2 * l2
        return cls(position, cause, l2, total, lambda_p, lambda_c, lambda_l2)

    def recomputed_total(self) -> float:
        return self.lambda_p * self.position + self.lambda_c * self.cause + self.lambda_l2 * self.l2

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.position, self.cause, self.l2, self.total))


def active_l2_params(model: Model, cfg: TrainConfig) -> Tuple[str, ...]:
    """Penalized weights present in the model; an unused position head is left out."""
    position_task = model.spec.position_head and cfg.use_pae_loss and cfg.lambda_p > 0
    return tuple(
        n for n in L2_PARAMS
        if n in model.store and (position_task or not n.startswith("pos_head."))
    )


def document_loss(doc: Document, model: Model, cfg: TrainConfig, backward: bool = True) -> LossBreakdown:
    """Weighted document loss; with ``backward`` also accumulates gradients into the store.

    The label vector is filled from gold labels (teacher forcing), and the
    prediction at each step sees only the labels of earlier steps.
    """
    spec, store = model.spec, model.store
    if len(doc) > spec.q:
        raise CapacityError(f"document {doc.doc_id} has {len(doc)} clauses; capacity is {spec.q}")
    df = model.features(doc, keep_cache=backward)
    N = len(doc)
    dr = np.zeros_like(df.r)

    loss_p = 0.0
    if spec.position_head and cfg.use_pae_loss:
        loss_p, _, dr_p, dWs, dbs = position_head_loss(
            df.r, df.positions, store["pos_head.W"], store["pos_head.b"], spec.clip
        )
        if backward:
            dr += cfg.lambda_p * dr_p
            store.grad("pos_head.W")[...] += cfg.lambda_p * dWs
            store.grad("pos_head.b")[...] += cfg.lambda_p * dbs

    gold = np.asarray(doc.gold_causes, dtype=bool)
    if spec.use_dgl:
        order = np.asarray(reorder(df.positions, spec.order_mode).order)
        inputs = np.concatenate([df.features[order], teacher_forced_states(gold[order], spec.q)], axis=1)
    else:
        order = np.arange(N)
        inputs = df.features
    loss_c, _, dinputs, dWc, dbc = cause_head_loss(
        inputs, gold[order], store["cause_head.W"], store["cause_head.b"]
    )
    penalized = active_l2_params(model, cfg)
    l2 = l2_penalty(store, penalized)
    out = LossBreakdown.combine(loss_p, loss_c, l2, cfg.lambda_p, cfg.lambda_c, cfg.l2)
    if not backward:
        return out

    store.grad("cause_head.W")[...] += cfg.lambda_c * dWc
    store.grad("cause_head.b")[...] += cfg.lambda_c * dbc
    dfeat = np.zeros_like(df.features)
    dfeat[order] = cfg.lambda_c * dinputs[:, : spec.feature_dim]
    if cfg.l2:
        for name in penalized:
            store.grad(name)[...] += 2.0 * cfg.l2 * store[name]
    model.features_backward(df, dfeat, dr)
    return out


class SGD:
    """Plain gradient descent with global-norm clipping."""

    def __init__(self, learning_rate: float, clip_norm: float = 5.0):
        self.learning_rate = learning_rate
        self.clip_norm = clip_norm

    def step(self, store: ParameterStore) -> float:
        norm = store.grad_norm()
        scale = self.learning_rate
        if norm > self.clip_norm:
            scale *= self.clip_norm / norm
        if scale:
            for name in store:
                param = store[name]
                param -= scale * store.grad(name)
        return norm


class Adam:
    """Adam with the same global-norm clipping applied to the raw gradient."""

    def __init__(self, learning_rate: float, clip_norm: float = 5.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.clip_norm = clip_norm
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, store: ParameterStore) -> float:
        norm = store.grad_norm()
        scale = self.clip_norm / norm if norm > self.clip_norm else 1.0
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr = self.learning_rate * math.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for name in store:
            g = store.grad(name) * scale
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if lr:
                param = store[name]
                param -= lr * m / (np.sqrt(v) + self.eps)
        return norm


OPTIMIZERS = {"sgd": SGD, "adam": Adam}


@dataclass
class EpochLog:
    epoch: int
    loss: LossBreakdown
    grad_norm: float

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "grad_norm": self.grad_norm, **asdict(self.loss)}


def _mean_breakdown(items: Sequence[LossBreakdown], cfg: TrainConfig) -> LossBreakdown:
    n = len(items)
    return LossBreakdown.combine(
        sum(b.position for b in items) / n,
        sum(b.cause for b in items) / n,
        sum(b.l2 for b in items) / n,
        cfg.lambda_p, cfg.lambda_c, cfg.l2,
    )


def seeds_for(seed: int) -> Tuple[int, int]:
    """Independent (init, shuffle) seeds derived from one run seed."""
    init_ss, shuffle_ss = np.random.SeedSequence(seed).spawn(2)
    return int(init_ss.generate_state(1)[0]), int(shuffle_ss.generate_state(1)[0])


def train(
    corpus: Sequence[Document],
    cfg: TrainConfig,
    model: Optional[Model] = None,
    optimizer=None,
    on_epoch: Optional[Callable[[EpochLog], None]] = None,
) -> Tuple[Model, List[EpochLog]]:
    """One SGD step per document, documents shuffled each epoch from ``cfg.seed``."""
    cfg.validate()
    if not corpus:
        raise ValueError("cannot train on an empty corpus")
    init_seed, shuffle_seed = seeds_for(cfg.seed)
    if model is None:
        vocab = build_vocab(corpus, cfg.min_count)
        model = init_params(cfg.model_spec(len(vocab)), vocab, init_seed, cfg.init_scale)
    optimizer = optimizer or OPTIMIZERS[cfg.optimizer](cfg.learning_rate, cfg.clip_norm)
    rng = np.random.default_rng(shuffle_seed)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        losses, norms = [], []
        for k in rng.permutation(len(corpus)):
            doc = corpus[int(k)]
            model.store.zero_grad()
            lb = document_loss(doc, model, cfg)
            if not lb.is_finite():
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} on document {doc.doc_id}: {lb}"
                )
            norms.append(optimizer.step(model.store))
            losses.append(lb)
        entry = EpochLog(epoch, _mean_breakdown(losses, cfg), float(np.mean(norms)))
        history.append(entry)
        log.info("epoch %d total=%.4f cause=%.4f position=%.4f",
                 epoch, entry.loss.total, entry.loss.cause, entry.loss.position)
        if on_epoch is not None:
            on_epoch(entry)
    model.store.zero_grad()
    return model, history
