"""Clause encoder: position-augmented embeddings, Bi-LSTM and additive attention.

The batched routines below run every clause of a document at once. Clauses
are right-padded to a common length; padded steps are computed but never
read, because attention masks them out and the backward direction runs over
each clause reversed in place.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np

from .numerics import ShapeError, lstm_gates, lstm_gates_backward, softmax


def position_index(position: int, clip: int) -> int:
    """Row of the position table holding relative position ``position``."""
    if not -clip <= position <= clip:
        raise IndexError(f"relative position {position} outside [-{clip}, {clip}]")
    return position + clip


def position_value(index: int, clip: int) -> int:
    if not 0 <= index <= 2 * clip:
        raise IndexError(f"position class {index} outside [0, {2 * clip}]")
    return index - clip


@dataclass
class EmbeddingTables:
    word: np.ndarray  # |V| x m
    position: np.ndarray  # (2L+1) x n

    @property
    def clip(self) -> int:
        return (self.position.shape[0] - 1) // 2


def augment_embedding(token_ids: Sequence[int], position: int, tables: EmbeddingTables) -> np.ndarray:
    """Concatenate the clause's position vector onto each token's word vector."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= tables.word.shape[0]):
        raise IndexError(f"token id out of range for vocabulary of size {tables.word.shape[0]}")
    pos = tables.position[position_index(position, tables.clip)]
    words = tables.word[ids]
    return np.concatenate([words, np.broadcast_to(pos, (len(ids), pos.shape[0]))], axis=1)


@dataclass
class EncoderParams:
    fw_W: np.ndarray  # 4H x (in + H)
    fw_b: np.ndarray
    bw_W: np.ndarray
    bw_b: np.ndarray
    att_W: np.ndarray  # A x 2H
    att_b: np.ndarray
    att_v: np.ndarray  # A

    @property
    def hidden(self) -> int:
        return self.fw_W.shape[0] // 4

    @classmethod
    def from_store(cls, store) -> "EncoderParams":
        return cls(*(store[n] for n in ENCODER_PARAM_NAMES))


ENCODER_PARAM_NAMES = ("lstm_fw.W", "lstm_fw.b", "lstm_bw.W", "lstm_bw.b", "attn.W", "attn.b", "attn.v")


# ----------------------------------------------------------------------
# LSTM over a padded batch; both directions run as one stacked recurrence
# ----------------------------------------------------------------------


def _lstm_forward(X, W, b):
    """``X`` is ``(K, B, T, D)`` with one weight set per leading index ``K``."""
    K, B, T, D = X.shape
    H = W.shape[1] // 4
    if W.shape[2] != D + H:
        raise ShapeError(f"LSTM weight {W.shape[1:]} does not accept input dim {D} with hidden {H}")
    WxT = W[:, :, :D].transpose(0, 2, 1)
    WhT = W[:, :, D:].transpose(0, 2, 1)
    Z = (X.reshape(K, B * T, D) @ WxT).reshape(K, B, T, 4 * H) + b[:, None, None, :]
    h = np.zeros((K, B, H))
    c = np.zeros((K, B, H))
    Hs = np.empty((K, B, T, H))
    caches = []
    for t in range(T):
        z = Z[:, :, t] + h @ WhT
        h_prev = h
        h, c, gc = lstm_gates(z, c)
        Hs[:, :, t] = h
        caches.append((h_prev, gc))
    return Hs, (X, W, caches)


def _lstm_backward(dHs, cache):
    X, W, caches = cache
    K, B, T, D = X.shape
    H = W.shape[1] // 4
    Wh = W[:, :, D:]
    dZ = np.empty((K, B, T, 4 * H))
    dWh = np.zeros((K, 4 * H, H))
    dh = np.zeros((K, B, H))
    dc = np.zeros((K, B, H))
    for t in range(T - 1, -1, -1):
        h_prev, gc = caches[t]
        dz, dc = lstm_gates_backward(dh + dHs[:, :, t], dc, gc)
        dZ[:, :, t] = dz
        dWh += dz.transpose(0, 2, 1) @ h_prev
        dh = dz @ Wh
    dZ2 = dZ.reshape(K, B * T, 4 * H)
    dX = (dZ2 @ W[:, :, :D]).reshape(K, B, T, D)
    dWx = dZ2.transpose(0, 2, 1) @ X.reshape(K, B * T, D)
    return dX, np.concatenate([dWx, dWh], axis=2), dZ2.sum(axis=1)


def _reverse_index(lengths, T):
    t = np.arange(T)[None, :]
    L = np.asarray(lengths)[:, None]
    return np.where(t < L, L - 1 - t, t)


def bilstm_forward(X, lengths, p: EncoderParams):
    """Hidden states ``(B, T, 2H)``: forward half then backward half."""
    B, T, _ = X.shape
    rev = _reverse_index(lengths, T)
    rows = np.arange(B)[:, None]
    W = np.stack([p.fw_W, p.bw_W])
    b = np.stack([p.fw_b, p.bw_b])
    Hs, cache = _lstm_forward(np.stack([X, X[rows, rev]]), W, b)
    out = np.concatenate([Hs[0], Hs[1][rows, rev]], axis=2)
    return out, (cache, rev)


def bilstm_backward(dHs, cache):
    lcache, rev = cache
    H = dHs.shape[2] // 2
    rows = np.arange(dHs.shape[0])[:, None]
    dX2, dW, db = _lstm_backward(np.stack([dHs[:, :, :H], dHs[:, :, H:][rows, rev]]), lcache)
    dX = dX2[0] + dX2[1][rows, rev]
    return dX, {"lstm_fw.W": dW[0], "lstm_fw.b": db[0], "lstm_bw.W": dW[1], "lstm_bw.b": db[1]}


# ----------------------------------------------------------------------
# additive attention pooling
# ----------------------------------------------------------------------


def attention_forward(Hs, mask, W, b, v):
    """Pool hidden states into one vector per clause.

    Scores are ``v . tanh(W h_j + b)``; padded steps get zero weight.
    """
    U = np.tanh(Hs @ W.T + b)
    scores = np.where(mask, U @ v, -np.inf)
    alpha = softmax(scores)
    r = np.einsum("bt,btd->bd", alpha, Hs)
    return r, alpha, (Hs, U, alpha, W, v)


def attention_backward(dr, cache):
    Hs, U, alpha, W, v = cache
    dalpha = np.einsum("bd,btd->bt", dr, Hs)
    ds = alpha * (dalpha - np.sum(alpha * dalpha, axis=1, keepdims=True))
    dpre = ds[:, :, None] * v * (1.0 - U * U)
    A = W.shape[0]
    grads = {
        "attn.W": dpre.reshape(-1, A).T @ Hs.reshape(-1, Hs.shape[2]),
        "attn.b": dpre.sum(axis=(0, 1)),
        "attn.v": np.einsum("bt,bta->a", ds, U),
    }
    dHs = alpha[:, :, None] * dr[:, None, :] + dpre @ W
    return dHs, grads


# ----------------------------------------------------------------------
# full encoder
# ----------------------------------------------------------------------


@dataclass
class EncodedBatch:
    hidden: np.ndarray  # B x T x 2H
    r: np.ndarray  # B x 2H
    alpha: np.ndarray  # B x T
    cache: tuple


def encode_batch(X, lengths, params: EncoderParams) -> EncodedBatch:
    X = np.asarray(X, dtype=np.float64)
    lengths = np.asarray(lengths, dtype=np.int64)
    if X.ndim != 3 or X.shape[1] == 0 or lengths.min() < 1:
        raise ValueError("encoder needs a nonempty batch of nonempty sequences")
    mask = np.arange(X.shape[1])[None, :] < lengths[:, None]
    Hs, lcache = bilstm_forward(X, lengths, params)
    r, alpha, acache = attention_forward(Hs, mask, params.att_W, params.att_b, params.att_v)
    return EncodedBatch(Hs, r, alpha, (lcache, acache))


def encode_batch_backward(dr, enc: EncodedBatch) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Gradient wrt the padded inputs plus every encoder parameter."""
    lcache, acache = enc.cache
    dHs, grads = attention_backward(dr, acache)
    dX, lgrads = bilstm_backward(dHs, lcache)
    grads.update(lgrads)
    return dX, grads


def encode_clause(seq, params: EncoderParams):
    """Encode one clause. Returns ``(hidden states (l, 2H), r (2H,))``."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise ValueError("cannot encode an empty clause")
    enc = encode_batch(seq[None], [seq.shape[0]], params)
    return enc.hidden[0], enc.r[0]
