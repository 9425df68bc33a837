"""Clause-level precision/recall/F1, cause-count statistics and the ablation runner."""

from __future__ import annotations

import json
import logging
import time
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import Document
from .dgl import infer_document
from .model import Model
from .training import TrainConfig, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Metrics:
    proposed: int
    annotated: int
    correct: int

    def __post_init__(self):
        if self.correct > min(self.proposed, self.annotated) or min(self.proposed, self.annotated, self.correct) < 0:
            raise ValueError(f"inconsistent counts {self}")

    @property
    def precision(self) -> float:
        return self.correct / self.proposed if self.proposed else 0.0

    @property
    def recall(self) -> float:
        return self.correct / self.annotated if self.annotated else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def to_dict(self) -> dict:
        return {**asdict(self), "precision": self.precision, "recall": self.recall, "f1": self.f1}


def compute_metrics(predicted: Sequence[Sequence[bool]], gold: Sequence[Sequence[bool]]) -> Metrics:
    """Counts pooled over every clause of every document."""
    if len(predicted) != len(gold):
        raise ValueError(f"{len(predicted)} predicted documents vs {len(gold)} gold documents")
    proposed = annotated = correct = 0
    for k, (p, g) in enumerate(zip(predicted, gold)):
        p = np.asarray(p, dtype=bool)
        g = np.asarray(g, dtype=bool)
        if p.shape != g.shape:
            raise ValueError(f"document {k}: {p.size} predictions for {g.size} gold labels")
        proposed += int(p.sum())
        annotated += int(g.sum())
        correct += int((p & g).sum())
    return Metrics(proposed, annotated, correct)


def cause_count_histogram(predicted: Sequence[Sequence[bool]], cap: int = 3) -> Dict[int, float]:
    """Fraction of documents with 0, 1, 2, ... predicted causes; counts >= ``cap`` pool at ``cap``."""
    if not predicted:
        raise ValueError("no predictions")
    counts = Counter(min(int(sum(bool(x) for x in p)), cap) for p in predicted)
    n = len(predicted)
    return {k: counts[k] / n for k in sorted(counts)}


def predict_corpus(model: Model, docs: Sequence[Document], mode: str = "predicted") -> List[List[bool]]:
    return [infer_document(d, model, mode) for d in docs]


# ----------------------------------------------------------------------
# ablation runner
# ----------------------------------------------------------------------

_FULL = dict(use_position=True, position_mode="PAE", use_pae_loss=True, use_dgl=True, order_mode="reordered")

# variant -> (TrainConfig overrides, inference mode)
VARIANTS: Dict[str, Tuple[dict, str]] = {
    "BiLSTM": (dict(use_position=False, use_pae_loss=False, use_dgl=False), "predicted"),
    "PL": (dict(use_position=True, position_mode="PL", use_pae_loss=False, use_dgl=False), "predicted"),
    "PEC": (dict(use_position=True, position_mode="PEC", use_pae_loss=False, use_dgl=False), "predicted"),
    "PAE": (dict(use_position=True, position_mode="PAE", use_pae_loss=True, use_dgl=False), "predicted"),
    "PAE-DGL": (dict(_FULL), "predicted"),
    "DGL-Po": (dict(_FULL, order_mode="original"), "predicted"),
    "DGL-UpperBound": (dict(_FULL), "oracle"),
}
_ALIASES = {"dgl-p°": "DGL-Po", "dgl-pr": "PAE-DGL", "dgl-upper-bound": "DGL-UpperBound", "bi-lstm": "BiLSTM"}


class UnknownVariant(ValueError):
    pass


def canonical_variant(name: str) -> str:
    key = name.strip().lower()
    for v in VARIANTS:
        if v.lower() == key:
            return v
    if key in _ALIASES:
        return _ALIASES[key]
    raise UnknownVariant(f"unknown variant {name!r}; valid: {', '.join(v.lower() for v in VARIANTS)}")


@dataclass(frozen=True)
class AblationSpec:
    variant: str
    overrides: Tuple[Tuple[str, object], ...]
    infer_mode: str = "predicted"
    repetitions: int = 5
    train_fraction: float = 0.9

    @classmethod
    def for_variant(cls, name: str, repetitions: int = 5, train_fraction: float = 0.9) -> "AblationSpec":
        v = canonical_variant(name)
        overrides, mode = VARIANTS[v]
        return cls(v, tuple(sorted(overrides.items())), mode, repetitions, train_fraction)

    def config(self, base: TrainConfig, seed: int) -> TrainConfig:
        return replace(base, seed=seed, **dict(self.overrides))


@dataclass
class RunRecord:
    variant: str
    repetition: int
    seed: int
    precision: float
    recall: float
    f1: float
    wall_seconds: float
    proposed: int = 0
    annotated: int = 0
    correct: int = 0
    zero_cause_share: float = 0.0
    multi_cause_share: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AblationResult:
    records: List[RunRecord]
    histograms: Dict[str, List[Dict[int, float]]] = field(default_factory=dict)

    def variants(self) -> List[str]:
        seen: List[str] = []
        for r in self.records:
            if r.variant not in seen:
                seen.append(r.variant)
        return seen

    def rows(self, variant: str) -> List[RunRecord]:
        return [r for r in self.records if r.variant == variant]

    def mean(self, variant: str, attr: str = "f1") -> float:
        rows = self.rows(variant)
        if not rows:
            raise KeyError(variant)
        return float(np.mean([getattr(r, attr) for r in rows]))

    def summary(self) -> List[dict]:
        return [
            {
                "variant": v,
                "runs": len(self.rows(v)),
                **{k: self.mean(v, k) for k in ("precision", "recall", "f1", "zero_cause_share", "multi_cause_share")},
            }
            for v in self.variants()
        ]

    def records_jsonl(self, timing: bool = True) -> str:
        """One JSON object per run; ``timing=False`` writes ``wall_seconds`` as null so replays match byte for byte."""
        rows = [r.to_dict() for r in self.records]
        if not timing:
            for row in rows:
                row["wall_seconds"] = None
        return "".join(json.dumps(row, sort_keys=True) + "\n" for row in rows)

    def table(self) -> str:
        """Aligned text table of per-variant means (timing omitted so the table is reproducible)."""
        head = f"{'variant':<16}{'runs':>5}{'P':>9}{'R':>9}{'F':>9}{'zero':>8}{'multi':>8}"
        lines = [head, "-" * len(head)]
        for s in self.summary():
            lines.append(
                f"{s['variant']:<16}{s['runs']:>5}{s['precision']:>9.4f}{s['recall']:>9.4f}{s['f1']:>9.4f}"
                f"{s['zero_cause_share']:>8.3f}{s['multi_cause_share']:>8.3f}"
            )
        return "\n".join(lines) + "\n"


def repetition_seed(seed: int, repetition: int) -> int:
    return int(np.random.SeedSequence([seed, repetition]).generate_state(1)[0])


def split_corpus(docs: Sequence[Document], train_fraction: float, seed: int):
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    perm = np.random.default_rng(seed).permutation(len(docs))
    n_train = int(round(train_fraction * len(docs)))
    if n_train == 0 or n_train == len(docs):
        raise ValueError(f"corpus of {len(docs)} documents is too small for a {train_fraction} split")
    return [docs[i] for i in perm[:n_train]], [docs[i] for i in perm[n_train:]]


def run_ablation(
    corpus: Sequence[Document],
    specs: Sequence[AblationSpec],
    seed: int = 0,
    base: Optional[TrainConfig] = None,
    on_record=None,
) -> AblationResult:
    """Train and score every (variant, repetition) cell.

    Repetition ``k`` uses the same split and training seed for every variant,
    and variants with identical training flags share one trained model, so
    DGL-UpperBound is scored on the exact PAE-DGL checkpoint.
    """
    base = base or TrainConfig()
    result = AblationResult([])
    reps = max((s.repetitions for s in specs), default=0)
    for rep in range(reps):
        rseed = repetition_seed(seed, rep)
        trained: Dict[tuple, Tuple[Model, float]] = {}
        splits: Dict[float, tuple] = {}
        for spec in specs:
            if rep >= spec.repetitions:
                continue
            if spec.train_fraction not in splits:
                splits[spec.train_fraction] = split_corpus(corpus, spec.train_fraction, rseed)
            train_docs, test_docs = splits[spec.train_fraction]
            key = (spec.overrides, spec.train_fraction)
            start = time.perf_counter()
            if key not in trained:
                model, _ = train(train_docs, spec.config(base, rseed))
                trained[key] = (model, time.perf_counter() - start)
            model, train_seconds = trained[key]
            t0 = time.perf_counter()
            pred = predict_corpus(model, test_docs, spec.infer_mode)
            m = compute_metrics(pred, [d.gold_causes for d in test_docs])
            hist = cause_count_histogram(pred)
            rec = RunRecord(
                spec.variant, rep, rseed, m.precision, m.recall, m.f1,
                train_seconds + time.perf_counter() - t0,
                m.proposed, m.annotated, m.correct,
                hist.get(0, 0.0), sum(v for k, v in hist.items() if k >= 2),
            )
            result.records.append(rec)
            result.histograms.setdefault(spec.variant, []).append(hist)
            log.info("%s rep %d: P=%.4f R=%.4f F=%.4f", spec.variant, rep, m.precision, m.recall, m.f1)
            if on_record is not None:
                on_record(rec)
    return result


def write_results(result: AblationResult, out_dir, figures: bool = True, timing: bool = True) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"records": out_dir / "results.jsonl", "table": out_dir / "results.txt"}
    paths["records"].write_text(result.records_jsonl(timing), encoding="utf-8")
    paths["table"].write_text(result.table(), encoding="utf-8")
    if figures and result.records:
        from .plotting import plot_ablation, plot_cause_counts

        paths["f1_figure"] = plot_ablation(result, out_dir / "ablation_f1.png")
        paths["counts_figure"] = plot_cause_counts(result, out_dir / "cause_counts.png")
    return paths
