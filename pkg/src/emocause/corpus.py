"""Documents, corpus files, relative positions and the synthetic generator."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

DEFAULT_CLIP = 6
DEFAULT_Q_MAX = 40
UNK = "<unk>"

# Share of annotated causes at each relative position in the benchmark corpus;
# the remaining 1.94% ("others") lies beyond +/-3.
BENCHMARK_POSITION_SHARES: Dict[int, float] = {
    -3: 0.0171,
    -2: 0.0771,
    -1: 0.5445,
    0: 0.2358,
    1: 0.0747,
    2: 0.0222,
    3: 0.0051,
}
BENCHMARK_OTHER_SHARE = 0.0194
# Share of documents with one, two and three causes.
BENCHMARK_CAUSE_COUNTS: Tuple[float, ...] = (0.9720, 0.0266, 0.0014)


class CorpusError(ValueError):
    """Malformed corpus record or invalid document."""

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.reason = message
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class Document:
    doc_id: str
    clauses: Tuple[Tuple[str, ...], ...]
    emotion_index: int
    gold_causes: Tuple[bool, ...]

    def __post_init__(self):
        clauses = tuple(tuple(c) for c in self.clauses)
        object.__setattr__(self, "clauses", clauses)
        object.__setattr__(self, "gold_causes", tuple(bool(g) for g in self.gold_causes))
        if not clauses:
            raise CorpusError("document has no clauses", field="clauses")
        for c in clauses:
            if not c or not all(isinstance(t, str) and t for t in c):
                raise CorpusError("clauses must be nonempty lists of nonempty strings", field="clauses")
        if not 0 <= self.emotion_index < len(clauses):
            raise CorpusError(
                f"emotion_index {self.emotion_index} outside [0, {len(clauses)})", field="emotion_index"
            )
        if len(self.gold_causes) != len(clauses):
            raise CorpusError(
                f"{len(self.gold_causes)} labels for {len(clauses)} clauses", field="gold_causes"
            )
        if not any(self.gold_causes):
            raise CorpusError("document has no gold cause", field="gold_causes")

    def __len__(self) -> int:
        return len(self.clauses)

    def to_record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "clauses": [list(c) for c in self.clauses],
            "emotion_index": self.emotion_index,
            "gold_causes": [int(g) for g in self.gold_causes],
        }

    def with_labels(self, labels: Sequence[bool]) -> "Document":
        return Document(self.doc_id, self.clauses, self.emotion_index, tuple(labels))


def relative_positions(doc: Document, clip: int = DEFAULT_CLIP) -> List[int]:
    """Signed clause distance to the emotion clause, clipped to ``[-clip, clip]``."""
    e = doc.emotion_index
    return [max(-clip, min(clip, i - e)) for i in range(len(doc))]


# ----------------------------------------------------------------------
# file I/O
# ----------------------------------------------------------------------

_FIELDS = ("doc_id", "clauses", "emotion_index", "gold_causes")


def _parse_record(obj, lineno: int, q_max: int) -> Document:
    if not isinstance(obj, dict):
        raise CorpusError("record is not an object", line=lineno)
    for name in _FIELDS:
        if name not in obj:
            raise CorpusError("missing field", line=lineno, field=name)
    if not isinstance(obj["doc_id"], str):
        raise CorpusError("doc_id must be a string", line=lineno, field="doc_id")
    clauses = obj["clauses"]
    if not isinstance(clauses, list) or not all(isinstance(c, list) for c in clauses):
        raise CorpusError("clauses must be an array of arrays", line=lineno, field="clauses")
    if len(clauses) > q_max:
        raise CorpusError(f"{len(clauses)} clauses exceeds q_max={q_max}", line=lineno, field="clauses")
    idx = obj["emotion_index"]
    if isinstance(idx, bool) or not isinstance(idx, int):
        raise CorpusError("emotion_index must be an integer", line=lineno, field="emotion_index")
    labels = obj["gold_causes"]
    if not isinstance(labels, list) or any(v not in (0, 1) or isinstance(v, float) for v in labels):
        raise CorpusError("gold_causes must be an array of 0/1", line=lineno, field="gold_causes")
    try:
        return Document(obj["doc_id"], clauses, idx, labels)
    except CorpusError as exc:
        raise CorpusError(exc.reason, line=lineno, field=exc.field) from None


def load_corpus(path, q_max: int = DEFAULT_Q_MAX) -> List[Document]:
    """Read a line-delimited JSON corpus; the first bad record aborts the load."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"corpus file not found: {path}")
    docs = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"invalid JSON ({exc.msg})", line=lineno) from None
            docs.append(_parse_record(obj, lineno, q_max))
    return docs


def dumps_corpus(docs: Iterable[Document]) -> str:
    return "".join(json.dumps(d.to_record(), ensure_ascii=False) + "\n" for d in docs)


def save_corpus(docs: Iterable[Document], path) -> None:
    Path(path).write_text(dumps_corpus(docs), encoding="utf-8")


# ----------------------------------------------------------------------
# vocabulary
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class Vocabulary:
    tokens: Tuple[str, ...]  # index 0 is UNK

    def __post_init__(self):
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        return self._index.get(token, 0)

    def ids(self, tokens: Iterable[str]) -> List[int]:
        return [self._index.get(t, 0) for t in tokens]

    def as_dict(self) -> Dict[str, int]:
        return dict(self._index)


def build_vocab(docs: Sequence[Document], min_count: int = 1) -> Vocabulary:
    """Tokens seen at least ``min_count`` times, by frequency then lexicographically."""
    if not docs:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts = Counter(t for d in docs for c in d.clauses for t in c)
    kept = sorted((t for t, n in counts.items() if n >= min_count and t != UNK),
                  key=lambda t: (-counts[t], t))
    return Vocabulary((UNK, *kept))


# ----------------------------------------------------------------------
# synthetic generator
# ----------------------------------------------------------------------


@dataclass
class GeneratorConfig:
    """Synthetic corpus knobs.

    Cause positions follow ``position_probs`` (with ``other_prob`` spread over
    every position beyond the table) and cause counts follow
    ``cause_count_probs``. Cause clauses carry a cause-marker token with
    probability ``content_signal``; any other clause except the emotion
    clause carries one with probability ``distractor_rate``, so content alone
    is ambiguous. ``emotion_clause_distractors`` lifts that exception.
    """

    docs: int = 5000
    clauses_before: Tuple[int, int] = (3, 6)
    clauses_after: Tuple[int, int] = (2, 5)
    clause_length: Tuple[int, int] = (3, 6)
    vocab_size: int = 200
    marker_types: int = 12
    emotion_types: int = 8
    position_probs: Dict[int, float] = field(default_factory=lambda: dict(BENCHMARK_POSITION_SHARES))
    other_prob: float = BENCHMARK_OTHER_SHARE
    cause_count_probs: Tuple[float, ...] = BENCHMARK_CAUSE_COUNTS
    content_signal: float = 0.7
    distractor_rate: float = 0.3
    emotion_clause_distractors: bool = False
    seed: int = 0

    def validate(self) -> None:
        if self.docs < 0:
            raise ValueError("docs must be nonnegative")
        for name in ("clauses_before", "clauses_after", "clause_length"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValueError(f"{name} must be a nondecreasing nonnegative range, got {(lo, hi)}")
        if self.clause_length[0] < 1:
            raise ValueError("clause_length must allow at least one token")
        if self.clauses_before[1] + self.clauses_after[1] + 1 > DEFAULT_Q_MAX:
            raise ValueError(f"documents could exceed q_max={DEFAULT_Q_MAX} clauses")
        if min(self.vocab_size, self.marker_types, self.emotion_types) < 1:
            raise ValueError("vocab_size, marker_types and emotion_types must be positive")
        if any(p < 0 for p in self.position_probs.values()) or self.other_prob < 0:
            raise ValueError("position probabilities must be nonnegative")
        if sum(self.position_probs.values()) + self.other_prob <= 0:
            raise ValueError("position probabilities are all zero")
        if any(p < 0 for p in self.cause_count_probs) or not np.isclose(sum(self.cause_count_probs), 1.0):
            raise ValueError("cause_count_probs must be nonnegative and sum to 1")
        for name in ("content_signal", "distractor_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["position_probs"] = {str(k): v for k, v in sorted(self.position_probs.items())}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        if "position_probs" in d:
            d["position_probs"] = {int(k): float(v) for k, v in d["position_probs"].items()}
        for name in ("clauses_before", "clauses_after", "clause_length", "cause_count_probs"):
            if name in d:
                d[name] = tuple(d[name])
        return cls(**d)


def _position_weights(cfg: GeneratorConfig, offsets: np.ndarray) -> np.ndarray:
    """Cause weight for each relative offset that exists in a document."""
    n_other = int(sum(1 for o in offsets if int(o) not in cfg.position_probs))
    per_other = cfg.other_prob / n_other if n_other else 0.0
    return np.array([cfg.position_probs.get(int(o), per_other) for o in offsets], dtype=np.float64)


def _sample_causes(cfg: GeneratorConfig, rng: np.random.Generator, offsets: np.ndarray) -> List[int]:
    weights = _position_weights(cfg, offsets)
    available = int(np.count_nonzero(weights))
    counts = np.asarray(cfg.cause_count_probs, dtype=np.float64)
    feasible = counts.copy()
    feasible[available:] = 0.0
    if feasible.sum() <= 0:
        raise ValueError(
            f"no feasible cause count: document has {available} eligible clauses"
        )
    while True:
        k = int(rng.choice(len(counts), p=counts / counts.sum())) + 1
        if k <= available:
            break
    chosen: List[int] = []
    w = weights.copy()
    for _ in range(k):
        j = int(rng.choice(len(w), p=w / w.sum()))
        chosen.append(j)
        w[j] = 0.0
    return chosen


def generate_synthetic(cfg: GeneratorConfig) -> List[Document]:
    """Build a seeded synthetic corpus following ``cfg``."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    filler = [f"w{k:03d}" for k in range(cfg.vocab_size)]
    markers = [f"cause{k:02d}" for k in range(cfg.marker_types)]
    emotions = [f"emo{k:02d}" for k in range(cfg.emotion_types)]
    width = len(str(max(cfg.docs - 1, 0)))
    docs = []
    for d in range(cfg.docs):
        before = int(rng.integers(cfg.clauses_before[0], cfg.clauses_before[1] + 1))
        after = int(rng.integers(cfg.clauses_after[0], cfg.clauses_after[1] + 1))
        n = before + after + 1
        offsets = np.arange(n) - before
        labels = [False] * n
        for j in _sample_causes(cfg, rng, offsets):
            labels[j] = True
        clauses = []
        for i in range(n):
            length = int(rng.integers(cfg.clause_length[0], cfg.clause_length[1] + 1))
            tokens = [filler[t] for t in rng.integers(0, len(filler), size=length)]
            if i == before:
                tokens[int(rng.integers(0, length))] = emotions[int(rng.integers(0, len(emotions)))]
            if labels[i]:
                p_marker = cfg.content_signal
            elif i != before or cfg.emotion_clause_distractors:
                p_marker = cfg.distractor_rate
            else:
                p_marker = 0.0
            if rng.random() < p_marker:
                slot = int(rng.integers(0, length + 1))
                tokens.insert(slot, markers[int(rng.integers(0, len(markers)))])
            clauses.append(tuple(tokens))
        docs.append(Document(f"syn{d:0{width}d}", tuple(clauses), before, tuple(labels)))
    return docs


def position_histogram(docs: Sequence[Document]) -> Dict[int, float]:
    """Share of gold causes at each unclipped relative position."""
    counts = Counter(
        i - d.emotion_index for d in docs for i, g in enumerate(d.gold_causes) if g
    )
    total = sum(counts.values())
    return {p: counts[p] / total for p in sorted(counts)} if total else {}
