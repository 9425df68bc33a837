"""Model container: architecture spec, parameters, clause featurization, checkpoints."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .corpus import DEFAULT_CLIP, DEFAULT_Q_MAX, Document, Vocabulary, relative_positions
from .dgl import ORDER_MODES
from .encoder import EmbeddingTables, EncodedBatch, EncoderParams, encode_batch, encode_batch_backward
from .numerics import ParameterStore

POSITION_MODES = ("none", "PAE", "PL", "PEC")
# Weight matrices/vectors that carry the L2 penalty; biases and embeddings do not.
L2_PARAMS = ("lstm_fw.W", "lstm_bw.W", "attn.W", "attn.v", "pos_head.W", "cause_head.W")
INIT_SCALE = 0.01
CHECKPOINT_MAGIC = b"EMOCAUSE-CKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    vocab_size: int
    word_dim: int = 200
    position_dim: int = 50
    hidden: int = 100
    attention_dim: int = 100
    clip: int = DEFAULT_CLIP
    q: int = DEFAULT_Q_MAX
    position_mode: str = "PAE"
    position_head: bool = True
    use_dgl: bool = True
    order_mode: str = "reordered"

    def __post_init__(self):
        for name in ("vocab_size", "word_dim", "position_dim", "hidden", "attention_dim", "clip", "q"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.position_mode not in POSITION_MODES:
            raise ValueError(f"position_mode must be one of {POSITION_MODES}")
        if self.order_mode not in ORDER_MODES:
            raise ValueError(f"order_mode must be one of {ORDER_MODES}")

    @property
    def n_positions(self) -> int:
        return 2 * self.clip + 1

    @property
    def rep_dim(self) -> int:
        return 2 * self.hidden

    @property
    def lstm_input(self) -> int:
        return self.word_dim + (self.position_dim if self.position_mode == "PAE" else 0)

    @property
    def feature_dim(self) -> int:
        return self.rep_dim + (self.position_dim if self.position_mode == "PEC" else 0)

    @property
    def head_input(self) -> int:
        return self.feature_dim + (self.q if self.use_dgl else 0)

    def shapes(self) -> Dict[str, tuple]:
        H, A = self.hidden, self.attention_dim
        out = {"word_emb": (self.vocab_size, self.word_dim)}
        if self.position_mode != "none":
            pdim = self.word_dim if self.position_mode == "PL" else self.position_dim
            out["pos_emb"] = (self.n_positions, pdim)
        out.update({
            "lstm_fw.W": (4 * H, self.lstm_input + H),
            "lstm_fw.b": (4 * H,),
            "lstm_bw.W": (4 * H, self.lstm_input + H),
            "lstm_bw.b": (4 * H,),
            "attn.W": (A, self.rep_dim),
            "attn.b": (A,),
            "attn.v": (A,),
        })
        if self.position_head:
            out["pos_head.W"] = (self.n_positions, self.rep_dim)
            out["pos_head.b"] = (self.n_positions,)
        out["cause_head.W"] = (2, self.head_input)
        out["cause_head.b"] = (2,)
        return out


@dataclass
class DocumentFeatures:
    r: np.ndarray  # N x 2H
    features: np.ndarray  # N x feature_dim
    positions: List[int]
    encoded: Optional[EncodedBatch] = None
    token_ids: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None
    lengths: Optional[np.ndarray] = None


class Model:
    def __init__(self, spec: ModelSpec, vocab: Vocabulary, store: ParameterStore):
        if len(vocab) != spec.vocab_size:
            raise ValueError(f"vocabulary has {len(vocab)} entries, spec expects {spec.vocab_size}")
        self.spec = spec
        self.vocab = vocab
        self.store = store

    @property
    def tables(self) -> EmbeddingTables:
        return EmbeddingTables(self.store["word_emb"], self.store["pos_emb"])

    def positions(self, doc: Document) -> List[int]:
        return relative_positions(doc, self.spec.clip)

    def features(self, doc: Document, keep_cache: bool = False) -> DocumentFeatures:
        """Encode every clause of ``doc`` in one padded batch."""
        spec, store = self.spec, self.store
        positions = self.positions(doc)
        pidx = np.asarray(positions) + spec.clip
        word_lengths = np.array([len(c) for c in doc.clauses])
        extra = 1 if spec.position_mode == "PL" else 0
        lengths = word_lengths + extra
        N, T = len(doc), int(lengths.max())
        tok = np.zeros((N, T), dtype=np.int64)
        for i, clause in enumerate(doc.clauses):
            tok[i, : len(clause)] = self.vocab.ids(clause)
        wmask = np.arange(T)[None, :] < word_lengths[:, None]
        X = store["word_emb"][tok] * wmask[:, :, None]
        if spec.position_mode == "PAE":
            P = store["pos_emb"][pidx][:, None, :] * wmask[:, :, None]
            X = np.concatenate([X, P], axis=2)
        elif spec.position_mode == "PL":
            X[np.arange(N), word_lengths] = store["pos_emb"][pidx]
        enc = encode_batch(X, lengths, EncoderParams.from_store(store))
        feats = enc.r
        if spec.position_mode == "PEC":
            feats = np.concatenate([enc.r, store["pos_emb"][pidx]], axis=1)
        if not keep_cache:
            return DocumentFeatures(enc.r, feats, positions)
        return DocumentFeatures(enc.r, feats, positions, enc, tok, wmask, word_lengths)

    def features_backward(self, df: DocumentFeatures, dfeatures: np.ndarray, dr: np.ndarray) -> None:
        """Accumulate gradients given upstream grads on features and on ``r``."""
        spec, store = self.spec, self.store
        R = spec.rep_dim
        dr = dr + dfeatures[:, :R]
        pidx = np.asarray(df.positions) + spec.clip
        if spec.position_mode == "PEC":
            np.add.at(store.grad("pos_emb"), pidx, dfeatures[:, R:])
        dX, grads = encode_batch_backward(dr, df.encoded)
        for name, g in grads.items():
            store.grad(name)[...] += g
        m = spec.word_dim
        np.add.at(store.grad("word_emb"), df.token_ids[df.mask], dX[:, :, :m][df.mask])
        if spec.position_mode == "PAE":
            np.add.at(store.grad("pos_emb"), pidx, (dX[:, :, m:] * df.mask[:, :, None]).sum(axis=1))
        elif spec.position_mode == "PL":
            np.add.at(store.grad("pos_emb"), pidx, dX[np.arange(len(pidx)), df.lengths])


def init_params(spec: ModelSpec, vocab: Vocabulary, seed: int = 0, scale: float = INIT_SCALE) -> Model:
    """Every entry drawn i.i.d. from U(-scale, scale), in a fixed tensor order."""
    if scale <= 0:
        raise ValueError("init scale must be positive")
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    for name, shape in spec.shapes().items():
        store.add(name, rng.uniform(-scale, scale, size=shape))
    return Model(spec, vocab, store)


def l2_penalty(store: ParameterStore, names=L2_PARAMS) -> float:
    return float(sum(np.vdot(store[n], store[n]) for n in names if n in store))


# ----------------------------------------------------------------------
# checkpoints: magic line, JSON header line, then raw little-endian float64
# tensors in header order
# ----------------------------------------------------------------------


def save_checkpoint(model: Model, path) -> None:
    names = model.store.names()
    header = {
        "version": CHECKPOINT_VERSION,
        "tool_version": __version__,
        "spec": asdict(model.spec),
        "vocab": list(model.vocab.tokens),
        "tensors": [{"name": n, "shape": list(model.store[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + b"\n")
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(model.store[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> Model:
    data = Path(path).read_bytes()
    magic = CHECKPOINT_MAGIC + b"\n"
    if not data.startswith(magic):
        raise ValueError(f"{path} is not a checkpoint file")
    off = len(magic)
    (hlen,) = struct.unpack_from("<Q", data, off)
    off += 8
    header = json.loads(data[off: off + hlen].decode("utf-8"))
    off += hlen
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('version')}")
    known = {f.name for f in fields(ModelSpec)}
    spec = ModelSpec(**{k: v for k, v in header["spec"].items() if k in known})
    store = ParameterStore()
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
        off += 8 * count
        store.add(t["name"], arr)
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    return Model(spec, Vocabulary(tuple(header["vocab"])), store)
