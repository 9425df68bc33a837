"""Command-line entry point: ``emocause {generate,train,eval,ablate,gradcheck}``.

Option values resolve in this order, later sources winning: built-in
defaults (or the chosen training profile), a replayed ``--manifest``, a
``--config`` key-value file, the ``--variant`` flag assignment, and finally
flags given on the command line. The fully resolved values are written to a
JSON manifest next to every output, and passing that manifest back via
``--manifest`` reruns the command with identical settings.

Exit codes: 0 on success, 1 when the command ran but its contract failed
(bad input file, failed gradient check, diverged training), 2 for usage
errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import MISSING, fields
from pathlib import Path
from typing import Dict, List, Optional

from . import __version__
from .corpus import CorpusError, GeneratorConfig, build_vocab, generate_synthetic, load_corpus, save_corpus
from .dgl import CapacityError
from .evaluation import (
    VARIANTS,
    AblationSpec,
    UnknownVariant,
    canonical_variant,
    cause_count_histogram,
    compute_metrics,
    predict_corpus,
    run_ablation,
    write_results,
)
from .model import Model, init_params, load_checkpoint, save_checkpoint
from .numerics import grad_check
from .training import TrainConfig, TrainingDiverged, document_loss, train

log = logging.getLogger("emocause")

SEED_ENV = "EMOCAUSE_SEED"
MAX_OOV_FRACTION = 0.5

# Reduced-size training profile for running the ablation matrix on one CPU.
PROFILES: Dict[str, dict] = {
    "full": {},
    "desk": dict(word_dim=48, position_dim=16, hidden=32, attention_dim=32,
                 optimizer="adam", learning_rate=0.003, epochs=3),
}

GENERATOR_FLAGS = (
    "docs", "content_signal", "distractor_rate", "vocab_size", "marker_types",
    "emotion_types", "clauses_before", "clauses_after", "clause_length", "emotion_clause_distractors",
)


class UsageError(Exception):
    pass


class CommandFailed(Exception):
    pass


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={raw!r} is not an integer") from None


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_dataclass_flags(p, cls, names=None, skip=()):
    for f in fields(cls):
        if f.name in skip or (names is not None and f.name not in names):
            continue
        default = f.default if f.default is not MISSING else f.default_factory()
        kw = dict(default=argparse.SUPPRESS, dest=f.name)
        if isinstance(default, bool):
            p.add_argument(_flag(f.name), action=argparse.BooleanOptionalAction, **kw)
        elif isinstance(default, tuple):
            p.add_argument(_flag(f.name), type=type(default[0]), nargs=len(default), metavar=("LO", "HI")[: len(default)], **kw)
        else:
            p.add_argument(_flag(f.name), type=type(default), **kw)


def _common(p):
    p.add_argument("--config", default=argparse.SUPPRESS, help="key = value file; flags override it")
    p.add_argument("--manifest", default=argparse.SUPPRESS, help="rerun with the settings recorded in a manifest")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="emocause", description="Emotion-cause clause classifier toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic corpus")
    _common(g)
    _add_dataclass_flags(g, GeneratorConfig, names=GENERATOR_FLAGS + ("seed",))
    g.add_argument("--out", default=S, help="corpus path (JSON lines)")

    t = sub.add_parser("train", help="train one model and write a checkpoint")
    _common(t)
    t.add_argument("--corpus", default=S)
    t.add_argument("--out", default=S, help="checkpoint path")
    t.add_argument("--variant", default=S, help="flag assignment of a named variant")
    t.add_argument("--profile", choices=sorted(PROFILES), default=S)
    t.add_argument("--no-figures", dest="figures", action="store_false", default=S)
    _add_dataclass_flags(t, TrainConfig)

    e = sub.add_parser("eval", help="score a checkpoint on a corpus")
    _common(e)
    e.add_argument("--checkpoint", default=S)
    e.add_argument("--corpus", default=S)
    e.add_argument("--oracle-dgl", dest="oracle_dgl", action="store_true", default=S,
                   help="fill the label vector from gold labels instead of predictions")
    e.add_argument("--out", default=S, help="optional metrics JSON path")

    a = sub.add_parser("ablate", help="run the variant comparison")
    _common(a)
    a.add_argument("--corpus", default=S)
    a.add_argument("--variants", default=S, help="comma-separated: " + ",".join(v.lower() for v in VARIANTS))
    a.add_argument("--reps", type=int, default=S)
    a.add_argument("--split", type=float, default=S, help="training fraction of each split")
    a.add_argument("--out-dir", dest="out_dir", default=S)
    a.add_argument("--profile", choices=sorted(PROFILES), default=S)
    a.add_argument("--no-figures", dest="figures", action="store_false", default=S)
    a.add_argument("--timing", action=argparse.BooleanOptionalAction, default=S,
                   help="record wall-clock seconds per run (off makes results byte-reproducible)")
    _add_dataclass_flags(a, TrainConfig)

    c = sub.add_parser("gradcheck", help="finite-difference check of the full model gradient")
    _common(c)
    c.add_argument("--seed", type=int, default=S)
    c.add_argument("--tolerance", type=float, default=S)
    c.add_argument("--variant", default=S)
    return parser


COMMAND_DEFAULTS = {
    "generate": dict(out=None),
    "train": dict(corpus=None, out=None, variant=None, profile="full", figures=True),
    "eval": dict(checkpoint=None, corpus=None, oracle_dgl=False, out=None),
    "ablate": dict(corpus=None, variants="bilstm,pae,pae-dgl,dgl-po,dgl-upperbound", reps=5, split=0.9,
                   out_dir=None, profile="desk", figures=True, timing=True),
    "gradcheck": dict(tolerance=1e-4, variant="pae-dgl"),
}


# ----------------------------------------------------------------------
# option resolution
# ----------------------------------------------------------------------


def _coerce(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Values are JSON when they parse as JSON."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = _coerce(value)
    return out


def read_manifest(path) -> dict:
    try:
        m = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read manifest {path}: {exc}") from None
    if not isinstance(m, dict) or "args" not in m:
        raise UsageError(f"{path} is not a manifest")
    return m


def resolve(command: str, ns: argparse.Namespace) -> dict:
    explicit = {k: v for k, v in vars(ns).items() if k not in ("command", "config", "manifest", "verbose")}
    layers = []
    manifest_args = {}
    if hasattr(ns, "manifest"):
        m = read_manifest(ns.manifest)
        if m.get("command") != command:
            raise UsageError(f"manifest was written by '{m.get('command')}', not '{command}'")
        manifest_args = m["args"]
    file_args = read_config_file(ns.config) if hasattr(ns, "config") else {}

    values = dict(COMMAND_DEFAULTS[command])
    if command == "generate":
        values.update(GeneratorConfig().to_dict())
        values = {k: v for k, v in values.items() if k in GENERATOR_FLAGS + ("seed", "out")}
        values["seed"] = default_seed()
    elif command in ("train", "ablate"):
        values.update(TrainConfig().to_dict())
        values["seed"] = default_seed()
        profile = explicit.get("profile", file_args.get("profile", manifest_args.get("profile", values["profile"])))
        if profile not in PROFILES:
            raise UsageError(f"unknown profile {profile!r}; valid: {', '.join(sorted(PROFILES))}")
        values.update(PROFILES[profile])
    elif command == "gradcheck":
        values["seed"] = default_seed()

    layers = [manifest_args, file_args]
    variant = explicit.get("variant", file_args.get("variant", manifest_args.get("variant")))
    if command == "train" and variant is not None:
        try:
            name = canonical_variant(variant)
        except UnknownVariant as exc:
            raise UsageError(str(exc)) from None
        layers.append(dict(VARIANTS[name][0]))
    layers.append(explicit)
    for layer in layers:
        for k, v in layer.items():
            if k not in values:
                raise UsageError(f"unknown option {k!r} for '{command}'")
            values[k] = list(v) if isinstance(v, tuple) else v
    return values


def _train_config(values: dict) -> TrainConfig:
    names = {f.name for f in fields(TrainConfig)}
    cfg = TrainConfig(**{k: v for k, v in values.items() if k in names})
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def _require(values: dict, *names: str) -> None:
    missing = [_flag(n) for n in names if not values.get(n)]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join(missing)}")


def write_manifest(path, command: str, values: dict, config: Optional[dict], inputs: List[str], outputs: List[str]) -> Path:
    manifest = {
        "tool": "emocause",
        "version": __version__,
        "command": command,
        "seed": values.get("seed"),
        "args": values,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
    }
    path = Path(path)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _load_docs(path, q_max: int = 40):
    try:
        return load_corpus(path, q_max=q_max)
    except FileNotFoundError:
        raise CommandFailed(f"corpus not found: {path}") from None
    except CorpusError as exc:
        raise CommandFailed(f"{path}: {exc}") from None


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------


def cmd_generate(values: dict) -> int:
    _require(values, "out")
    if values["docs"] < 1:
        raise UsageError("--docs must be at least 1")
    gen = {k: (tuple(v) if isinstance(v, list) else v) for k, v in values.items() if k != "out"}
    try:
        cfg = GeneratorConfig(**gen)
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid generator config: {exc}") from None
    docs = generate_synthetic(cfg)
    out = Path(values["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_corpus(docs, out)
    write_manifest(f"{out}.manifest.json", "generate", values, cfg.to_dict(), [], [str(out)])
    print(f"wrote {len(docs)} documents to {out}")
    return 0


def cmd_train(values: dict) -> int:
    _require(values, "corpus", "out")
    cfg = _train_config(values)
    docs = _load_docs(values["corpus"], cfg.q_max)
    out = Path(values["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    loss_path = Path(f"{out}.loss.jsonl")
    try:
        model, history = train(docs, cfg)
    except (TrainingDiverged, CapacityError) as exc:
        raise CommandFailed(str(exc)) from None
    save_checkpoint(model, out)
    loss_path.write_text("".join(json.dumps(h.to_dict(), sort_keys=True) + "\n" for h in history), encoding="utf-8")
    outputs = [str(out), str(loss_path)]
    if values["figures"] and history:
        from .plotting import plot_loss_curves

        outputs.append(str(plot_loss_curves(history, f"{out}.loss.png")))
    write_manifest(f"{out}.manifest.json", "train", values, cfg.to_dict(), [values["corpus"]], outputs)
    for h in history:
        print(f"epoch {h.epoch:3d}  total {h.loss.total:.4f}  cause {h.loss.cause:.4f}  position {h.loss.position:.4f}")
    print(f"wrote checkpoint {out}")
    return 0


def check_compatibility(model: Model, docs) -> None:
    """Refuse corpora the checkpoint cannot meaningfully score."""
    vocab = model.vocab.as_dict()
    total = unknown = 0
    for d in docs:
        if len(d) > model.spec.q:
            raise CommandFailed(
                f"document {d.doc_id} has {len(d)} clauses; checkpoint label vector holds {model.spec.q}"
            )
        for clause in d.clauses:
            total += len(clause)
            unknown += sum(tok not in vocab for tok in clause)
    if total and unknown / total > MAX_OOV_FRACTION:
        raise CommandFailed(
            f"corpus vocabulary does not match the checkpoint: {unknown}/{total} tokens "
            f"({unknown / total:.0%}) are unknown to it (limit {MAX_OOV_FRACTION:.0%})"
        )


def cmd_eval(values: dict) -> int:
    _require(values, "checkpoint", "corpus")
    try:
        model = load_checkpoint(values["checkpoint"])
    except FileNotFoundError:
        raise CommandFailed(f"checkpoint not found: {values['checkpoint']}") from None
    except ValueError as exc:
        raise CommandFailed(str(exc)) from None
    docs = _load_docs(values["corpus"], model.spec.q)
    check_compatibility(model, docs)
    mode = "oracle" if values["oracle_dgl"] else "predicted"
    if mode == "oracle" and not model.spec.use_dgl:
        log.warning("checkpoint has no label vector; oracle mode has no effect")
    pred = predict_corpus(model, docs, mode)
    m = compute_metrics(pred, [d.gold_causes for d in docs])
    hist = cause_count_histogram(pred)
    print(f"mode       {mode}")
    print(f"precision  {m.precision:.4f}")
    print(f"recall     {m.recall:.4f}")
    print(f"f1         {m.f1:.4f}")
    print(f"counts     proposed={m.proposed} annotated={m.annotated} correct={m.correct}")
    print("causes/doc " + "  ".join(f"{k}{'+' if k == 3 else ''}: {v:.3f}" for k, v in hist.items()))
    if values["out"]:
        out = Path(values["out"])
        out.parent.mkdir(parents=True, exist_ok=True)
        report = {"mode": mode, **m.to_dict(), "cause_counts": {str(k): v for k, v in hist.items()}}
        out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        write_manifest(f"{out}.manifest.json", "eval", values, None,
                       [values["checkpoint"], values["corpus"]], [str(out)])
    return 0


def cmd_ablate(values: dict) -> int:
    _require(values, "corpus", "out_dir")
    if values["reps"] < 1:
        raise UsageError("--reps must be at least 1")
    try:
        names = [canonical_variant(v) for v in str(values["variants"]).split(",") if v.strip()]
        specs = [AblationSpec.for_variant(v, values["reps"], values["split"]) for v in names]
    except UnknownVariant as exc:
        raise UsageError(str(exc)) from None
    if not specs:
        raise UsageError("--variants is empty")
    if not 0 < values["split"] < 1:
        raise UsageError("--split must lie strictly between 0 and 1")
    base = _train_config(values)
    docs = _load_docs(values["corpus"], base.q_max)
    try:
        result = run_ablation(docs, specs, seed=values["seed"], base=base,
                              on_record=lambda r: log.info("%s rep %d F=%.4f", r.variant, r.repetition, r.f1))
    except (TrainingDiverged, CapacityError, ValueError) as exc:
        raise CommandFailed(str(exc)) from None
    paths = write_results(result, values["out_dir"], figures=values["figures"], timing=values["timing"])
    out_dir = Path(values["out_dir"])
    write_manifest(out_dir / "manifest.json", "ablate", values, base.to_dict(),
                   [values["corpus"]], [str(p) for p in paths.values()])
    sys.stdout.write(result.table())
    return 0


def gradcheck_report(seed: int = 0, tolerance: float = 1e-4, variant: str = "pae-dgl"):
    """Check every tensor of a tiny random model on a random three-clause document."""
    docs = generate_synthetic(GeneratorConfig(docs=1, seed=seed, clauses_before=(1, 1), clauses_after=(1, 1)))
    overrides, _ = VARIANTS[canonical_variant(variant)]
    cfg = TrainConfig(word_dim=4, position_dim=3, hidden=3, attention_dim=4, q_max=5, l2=0.1, **overrides)
    vocab = build_vocab(docs)
    model = init_params(cfg.model_spec(len(vocab)), vocab, seed, scale=0.5)
    return grad_check(lambda s: document_loss(docs[0], model, cfg).total, model.store, tolerance, seed=seed)


def cmd_gradcheck(values: dict) -> int:
    try:
        canonical_variant(values["variant"])
    except UnknownVariant as exc:
        raise UsageError(str(exc)) from None
    if not values["tolerance"] > 0:
        raise UsageError("--tolerance must be positive")
    report = gradcheck_report(values["seed"], values["tolerance"], values["variant"])
    print(report.format())
    if not report.passed:
        for name in report.failures:
            print(f"gradient check failed: {name} max relative error "
                  f"{report.max_rel_error[name]:.3e} >= {report.tolerance:.1e}", file=sys.stderr)
        return 1
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        values = resolve(ns.command, ns)
        return COMMANDS[ns.command](values)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"emocause {ns.command}: error: {exc}", file=sys.stderr)
        return 2
    except CommandFailed as exc:
        print(f"emocause {ns.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
