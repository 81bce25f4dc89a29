"""Command-line entry point: prepare, vocab, train, predict, evaluate.

Exit codes: 0 success, 2 usage or configuration error, 3 data mismatch.
Settings come from built-in defaults, then ``--config`` (flat ``key = value``
lines), then command-line flags.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from dataclasses import replace
from pathlib import Path

from . import align, corpus, preprocess
from .align import SubwordVocabulary
from .corpus import ContextWindow, SentenceRecord, iter_sentences
from .encoder import DataError, read_embedding_file
from .evaluation import AlignmentMismatch, compute_metrics, confusion_tsv, sentence_metrics
from .heads import REL_CLASSES, assign_tag_ids, decide
from .model import Featurizer
from .train import ConfigError, TrainConfig, load_checkpoint, train_loop

log = logging.getLogger("deftlab")

PREPARED_STAMP = "PREPARED"
REPORT = "prepare_report.tsv"
CORPUS_SUFFIXES = (".deft", ".tsv", ".txt")

DEFAULTS = {
    "prepare": {"task": "2", "mode": "finetune", "factors": None},
    "vocab": {"size": align.DEFAULT_VOCAB_SIZE, "mode": "finetune"},
    "train": {
        "task": "2",
        "mode": "finetune",
        "lr": 2e-5,
        "epochs": 100,
        "batch_size": 16,
        "seed": 0,
        "weights": "0.33,0.33,0.33",
        "dropout": None,
        "d_emb": 256,
        "d_out": 128,
        "hidden_layers": 1,
        "source": None,
        "dev": None,
        "vocab": None,
        "embeddings": None,
        "dev_embeddings": None,
    },
    "predict": {"task": None, "vocab": None, "embeddings": None},
    "evaluate": {"task": "2", "out_dir": None},
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def read_config_file(path) -> dict:
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise CliError(2, f"cannot read config file: {e}") from None
    for line_no, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CliError(2, f"{path}:{line_no}: expected 'key = value'")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def resolve_settings(command: str, args: argparse.Namespace) -> dict:
    """Defaults, overridden by the config file, overridden by explicit flags."""
    settings = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        for key, value in read_config_file(args.config).items():
            if key not in settings and not hasattr(args, key):
                raise CliError(2, f"unknown config key {key!r} for {command}")
            settings[key] = value
    for key, value in vars(args).items():
        if key in ("command", "config", "func"):
            continue
        if value is not None:
            settings[key] = value
    return settings


def _require(path, what: str) -> Path:
    if path is None:
        raise CliError(2, f"missing {what}")
    p = Path(path)
    if not p.exists():
        raise CliError(2, f"{what} not found: {p}")
    return p


# --- reading inputs -------------------------------------------------------


def corpus_files(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    return sorted(
        p for p in path.iterdir() if p.is_file() and p.suffix in CORPUS_SUFFIXES and p.name != REPORT
    )


def load_sentences_for_task1(path: Path) -> list[tuple[str, bool | None]]:
    """Task-1 rows from a DEFT file, a ``text\\tlabel`` file or plain sentence lines."""
    cols = corpus.sniff_columns(path)
    if cols == corpus.N_COLUMNS:
        return [(s.sentence_text, s.has_definition) for s in iter_sentences(corpus.parse_deft_file(path))]
    if cols == 2:
        return corpus.parse_task1_file(path)
    with open(path, encoding="utf-8") as f:
        return [(line.rstrip("\r\n"), None) for line in f if line.strip()]


def _parse_deft(path: Path) -> list[ContextWindow]:
    try:
        return corpus.parse_deft_file(path)
    except corpus.ParseError as e:
        raise CliError(3, str(e)) from None


# --- prepare --------------------------------------------------------------


def clean_window_tokens(windows, mode: str) -> list[ContextWindow]:
    out = []
    for w in windows:
        sents = []
        for s in w.sentences:
            texts = align.model_texts(s.tokens, lambda t: preprocess.clean_sentence(t, mode))
            tokens = [replace(t, text=x) for t, x in zip(s.tokens, texts)]
            sents.append(SentenceRecord.from_tokens(tokens))
        out.append(ContextWindow(tuple(sents), w.window_id))
    return out


def cmd_prepare(s: dict) -> int:
    src = _require(s.get("input"), "input corpus")
    out = Path(s["output"]) if s.get("output") else None
    if out is None:
        raise CliError(2, "missing --output")
    task, mode = str(s["task"]), s["mode"]
    if task not in ("1", "2"):
        raise CliError(2, f"prepare supports task 1 or 2, got {task!r}")
    if mode not in preprocess.MODES:
        raise CliError(2, f"unknown mode {mode!r}")
    files = corpus_files(src)
    if not files:
        raise CliError(2, f"no corpus files in {src}")
    already = src.is_dir() and (src / PREPARED_STAMP).exists()
    table = dict(preprocess.DEFAULT_FACTORS)
    if s.get("factors"):
        try:
            table = preprocess.load_factor_table(_require(s["factors"], "factor table"))
        except ValueError as e:
            raise CliError(2, str(e)) from None
    out.mkdir(parents=True, exist_ok=True)
    report_rows: list[str] = []
    if task == "1":
        pos0 = neg0 = pos1 = neg1 = 0
        for f in files:
            rows = [(preprocess.clean_sentence(t, mode), bool(l)) for t, l in load_sentences_for_task1(f)]
            pos0 += sum(l for _, l in rows)
            neg0 += sum(not l for _, l in rows)
            if not already:
                rows = preprocess.balance_task1(rows)
            pos1 += sum(l for _, l in rows)
            neg1 += sum(not l for _, l in rows)
            (out / (f.stem + ".tsv")).write_text(corpus.format_task1(rows), encoding="utf-8")
        report_rows = ["class\tinitial\tfinal", f"positive\t{pos0}\t{pos1}", f"negative\t{neg0}\t{neg1}"]
    else:
        initial = dict.fromkeys(corpus.BASE_TAGS, 0)
        final = dict.fromkeys(corpus.BASE_TAGS, 0)
        for f in files:
            windows = clean_window_tokens(_parse_deft(f), mode)
            sents = list(iter_sentences(windows))
            for k, v in preprocess.tag_counts(sents).items():
                initial[k] += v
            if already:
                emitted = windows
            else:
                emitted = corpus.windows_from_sentences(preprocess.oversample_task2(sents, table))
            for k, v in preprocess.tag_counts(iter_sentences(emitted)).items():
                final[k] += v
            corpus.write_deft_file(emitted, out / (f.stem + ".deft"))
        report_rows = ["tag\tinitial\tfinal\tfactor"]
        for tag in sorted(corpus.BASE_TAGS, key=lambda t: -initial[t]):
            report_rows.append(f"{tag}\t{initial[tag]}\t{final[tag]}\t{table[tag]}")
    if already and (src / REPORT).exists() and src.resolve() != out.resolve():
        shutil.copyfile(src / REPORT, out / REPORT)
    elif not already:
        (out / REPORT).write_text("\n".join(report_rows) + "\n", encoding="utf-8")
    stamp = {"task": task, "mode": mode, "factors": {k: table[k] for k in sorted(table)}}
    (out / PREPARED_STAMP).write_text(json.dumps(stamp, sort_keys=True) + "\n", encoding="utf-8")
    print((out / REPORT).read_text(encoding="utf-8") if (out / REPORT).exists() else "", end="")
    return 0


# --- vocab ----------------------------------------------------------------


def corpus_texts(path: Path, mode: str) -> list[str]:
    texts = []
    for f in corpus_files(path):
        if corpus.sniff_columns(f) == corpus.N_COLUMNS:
            for sent in iter_sentences(_parse_deft(f)):
                model_texts = align.model_texts(sent.tokens, lambda t: preprocess.clean_sentence(t, mode))
                texts.append(corpus.join_texts(model_texts)[0])
        else:
            texts.extend(preprocess.clean_sentence(t, mode) for t, _ in load_sentences_for_task1(f))
    return texts


def cmd_vocab(s: dict) -> int:
    src = _require(s.get("input"), "input corpus")
    if not s.get("output"):
        raise CliError(2, "missing --output")
    try:
        vocab = align.build_vocabulary(corpus_texts(src, s["mode"]), int(s["size"]))
    except align.VocabularyError as e:
        raise CliError(2, str(e)) from None
    vocab.save(s["output"])
    print(f"{len(vocab)} pieces -> {s['output']}")
    return 0


# --- train ----------------------------------------------------------------


def _train_config(s: dict) -> TrainConfig:
    try:
        weights = tuple(float(w) for w in str(s["weights"]).split(","))
        source = s["source"] or ("external" if s.get("embeddings") else "internal")
        return TrainConfig(
            lr=float(s["lr"]),
            epochs=int(s["epochs"]),
            batch_size=int(s["batch_size"]),
            mode=s["mode"],
            task=str(s["task"]),
            weights=weights,
            seed=int(s["seed"]),
            dropout=None if s["dropout"] in (None, "", "None") else float(s["dropout"]),
            checkpoint_dir=s.get("checkpoint_dir"),
            d_emb=int(s["d_emb"]),
            d_out=int(s["d_out"]),
            hidden_layers=int(s["hidden_layers"]),
            source=source,
        )
    except (ConfigError, ValueError) as e:
        raise CliError(2, f"invalid configuration: {e}") from None


def _examples(path: Path, task: str, featurizer: Featurizer):
    if task == "1":
        return featurizer.text_examples(load_sentences_for_task1(path))
    windows = _parse_deft(path)
    return featurizer.window_examples(windows, with_ids=task == "multitask")


def _featurizer(mode, vocab, embeddings_path, expected_d=None) -> Featurizer:
    if embeddings_path is None:
        return Featurizer(mode, vocab=vocab)
    try:
        d, blocks = read_embedding_file(_require(embeddings_path, "embedding file"))
    except DataError as e:
        raise CliError(3, str(e)) from None
    if expected_d is not None and d != expected_d:
        raise CliError(3, f"embedding width {d} does not match the model's {expected_d}")
    return Featurizer(mode, external=blocks)


def cmd_train(s: dict) -> int:
    config = _train_config(s)
    if not config.checkpoint_dir:
        raise CliError(2, "missing --checkpoint-dir")
    train_path = _require(s.get("train"), "training corpus")
    dev_path = _require(s["dev"], "development corpus") if s.get("dev") else train_path
    vocab = None
    extra = {}
    if config.source == "internal":
        vocab_path = _require(s.get("vocab"), "vocabulary (--vocab)")
        try:
            vocab = SubwordVocabulary.load(vocab_path)
        except align.VocabularyError as e:
            raise CliError(2, f"{vocab_path}: {e}") from None
        extra = {"vocab_digest": vocab.digest(), "vocab_path": str(Path(vocab_path).resolve())}
    elif not s.get("embeddings"):
        raise CliError(2, "external source needs --embeddings")
    try:
        train_fz = _featurizer(config.mode, vocab, s.get("embeddings"), config.d_emb if vocab is None else None)
        dev_emb = s.get("dev_embeddings") or (s.get("embeddings") if dev_path == train_path else None)
        if vocab is None and dev_emb is None:
            raise CliError(2, "external source with a separate dev corpus needs --dev-embeddings")
        dev_fz = _featurizer(config.mode, vocab, dev_emb, config.d_emb if vocab is None else None)
        train_ex = []
        for f in corpus_files(train_path):
            train_ex.extend(_examples(f, config.task, train_fz))
        dev_ex = []
        for f in corpus_files(dev_path):
            dev_ex.extend(_examples(f, config.task, dev_fz))
    except (DataError, align.AlignmentError) as e:
        raise CliError(3, str(e)) from None
    if dev_path == train_path:
        log.warning("no --dev corpus given; selecting the checkpoint on the training data")
    try:
        result = train_loop(config, train_ex, dev_ex, vocab_size=len(vocab) if vocab else 0, manifest_extra=extra)
    except ConfigError as e:
        raise CliError(2, str(e)) from None
    print(f"best dev metric {result.best_metric:.6f} at epoch {result.best_epoch} -> {config.checkpoint_dir}")
    return 0


# --- predict --------------------------------------------------------------


def cmd_predict(s: dict) -> int:
    ckpt = _require(s.get("checkpoint"), "checkpoint directory")
    src = _require(s.get("input"), "input file")
    if not s.get("output"):
        raise CliError(2, "missing --output")
    try:
        model, manifest = load_checkpoint(ckpt)
    except (OSError, ValueError, KeyError) as e:
        raise CliError(3, f"cannot load checkpoint: {e}") from None
    task = str(s["task"] or manifest["task"])
    if task not in ("1", "2", "multitask"):
        raise CliError(2, f"unknown task {task!r}")
    if (task == "1") != (model.task == "1"):
        raise CliError(3, f"checkpoint was trained for task {model.task}, cannot predict task {task}")
    mode = manifest["config"]["mode"]
    vocab = None
    if model.encoder.config.source == "internal":
        vocab_path = s.get("vocab") or manifest.get("vocab_path")
        vocab = SubwordVocabulary.load(_require(vocab_path, "vocabulary"))
        if vocab.digest() != manifest.get("vocab_digest") or len(vocab) != model.encoder.config.vocab_size:
            raise CliError(3, f"vocabulary {vocab_path} does not match the checkpoint")
    elif not s.get("embeddings"):
        raise CliError(2, "checkpoint uses external embeddings; pass --embeddings")
    fz = _featurizer(mode, vocab, s.get("embeddings"), model.encoder.config.d_emb if vocab is None else None)
    try:
        if task == "1":
            rows = load_sentences_for_task1(src)
            examples = fz.text_examples(rows)
            preds = [(t, decide(model.predict_probability(ex))) for ex, (t, _) in zip(examples, rows)]
            Path(s["output"]).write_text(corpus.format_task1(preds), encoding="utf-8")
            return 0
        windows = _parse_deft(src)
        examples = fz.window_examples(windows)
    except (DataError, align.AlignmentError) as e:
        raise CliError(3, str(e)) from None
    out_windows = []
    it = iter(examples)
    for w in windows:
        new_sents = []
        id_cats = []
        rels = []
        for sent in w.sentences:
            ex = next(it)
            if model.task == "multitask":
                tags, cats, rel = model.predict_multitask(ex)
                id_cats.append(cats)
                rels.append(rel)
            else:
                tags = model.predict_tags(ex)
            new_sents.append(sent.with_tags(tags))
        if model.task == "multitask":
            ids = assign_tag_ids(w, id_cats)
            new_sents = [
                SentenceRecord.from_tokens(
                    replace(t, tag_id=i, relation=REL_CLASSES[r]) for t, i, r in zip(ns.tokens, sid, srel)
                )
                for ns, sid, srel in zip(new_sents, ids, rels)
            ]
        out_windows.append(ContextWindow(tuple(new_sents), w.window_id))
    corpus.write_predictions(out_windows, "2", s["output"])
    return 0


# --- evaluate -------------------------------------------------------------


def _eval_task2(gold_path: Path, pred_path: Path):
    gold = list(iter_sentences(_parse_deft(gold_path)))
    pred = list(iter_sentences(_parse_deft(pred_path)))
    gold_tokens = [t for s in gold for t in s.tokens]
    pred_tokens = [t for s in pred for t in s.tokens]
    if len(gold_tokens) != len(pred_tokens):
        raise CliError(3, f"gold has {len(gold_tokens)} tokens, predictions {len(pred_tokens)}")
    for i, (g, p) in enumerate(zip(gold_tokens, pred_tokens)):
        if (g.text, g.start_char, g.end_char) != (p.text, p.start_char, p.end_char):
            raise CliError(3, f"token {i} differs: gold {g.text!r}@{g.start_char}, predicted {p.text!r}@{p.start_char}")
    # compare per gold sentence so one sentence boundary slip does not misalign the rest
    pred_iter = iter(pred_tokens)
    pred_seqs = [[next(pred_iter).tag for _ in s.tokens] for s in gold]
    return compute_metrics([s.tags for s in gold], pred_seqs)


def _eval_task1(gold_path: Path, pred_path: Path):
    gold = load_sentences_for_task1(gold_path)
    if corpus.sniff_columns(pred_path) != 2:
        raise CliError(3, f"{pred_path} is not a task-1 prediction file")
    try:
        pred = corpus.parse_task1_file(pred_path)
    except corpus.ParseError as e:
        raise CliError(3, str(e)) from None
    if len(gold) != len(pred):
        raise CliError(3, f"gold has {len(gold)} sentences, predictions {len(pred)}")
    for i, ((gt, gl), (pt, _)) in enumerate(zip(gold, pred)):
        if gl is None:
            raise CliError(3, f"gold sentence {i} carries no label")
        if gt != pt:
            raise CliError(3, f"sentence {i} text differs between gold and predictions")
    return sentence_metrics([l for _, l in gold], [l for _, l in pred])


def cmd_evaluate(s: dict) -> int:
    gold_path = _require(s.get("gold"), "gold file")
    pred_path = _require(s.get("pred"), "prediction file")
    task = str(s["task"])
    try:
        report = _eval_task1(gold_path, pred_path) if task == "1" else _eval_task2(gold_path, pred_path)
    except AlignmentMismatch as e:
        raise CliError(3, str(e)) from None
    out = Path(s["out_dir"]) if s.get("out_dir") else pred_path.with_name(pred_path.name + ".eval")
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.tsv").write_text(report.to_tsv(), encoding="utf-8")
    (out / "confusion.tsv").write_text(confusion_tsv(report.confusion, report.labels), encoding="utf-8")
    (out / "confusion_normalized.tsv").write_text(
        confusion_tsv(report.normalized, report.labels, "{:.6f}"), encoding="utf-8"
    )
    print(report.to_text(), end="")
    if report.positive is not None:
        print(f"positive-class F1 {report.f1[report.positive]:.4f}  macro-F1 {report.macro_f1:.4f}")
    else:
        print(f"macro-F1 {report.macro_f1:.4f}")
    return 0


# --- parser ---------------------------------------------------------------


def _d(command: str, key: str) -> str:
    return f"(default: {DEFAULTS[command][key]})"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deftlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="clean and balance a raw corpus")
    p.add_argument("--input", help="DEFT file or directory")
    p.add_argument("--output", help="output directory")
    p.add_argument("--task", choices=["1", "2"], help=_d("prepare", "task"))
    p.add_argument("--mode", choices=preprocess.MODES, help=_d("prepare", "mode"))
    p.add_argument("--factors", help="factor table file, 'tag = factor' lines (default: built-in table)")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("vocab", help="learn a subword vocabulary")
    p.add_argument("--input", help="corpus file or directory")
    p.add_argument("--output", help="vocabulary file")
    p.add_argument("--size", type=int, help=_d("vocab", "size"))
    p.add_argument("--mode", choices=preprocess.MODES, help=_d("vocab", "mode"))
    p.set_defaults(func=cmd_vocab)

    p = sub.add_parser("train", help="train a model, keeping the best checkpoint on dev")
    p.add_argument("--train", help="training corpus file or directory")
    p.add_argument("--dev", help="development corpus (default: the training corpus)")
    p.add_argument("--vocab", help="vocabulary file (internal embeddings)")
    p.add_argument("--embeddings", help="external embedding file for the training corpus")
    p.add_argument("--dev-embeddings", help="external embedding file for the dev corpus")
    p.add_argument("--source", choices=["internal", "external"], help="embedding source (default: inferred)")
    p.add_argument("--checkpoint-dir", help="output directory")
    p.add_argument("--task", choices=["1", "2", "multitask"], help=_d("train", "task"))
    p.add_argument("--mode", choices=preprocess.MODES, help=_d("train", "mode"))
    p.add_argument("--lr", type=float, help=_d("train", "lr"))
    p.add_argument("--epochs", type=int, help=_d("train", "epochs"))
    p.add_argument("--batch-size", type=int, help=_d("train", "batch_size"))
    p.add_argument("--seed", type=int, help=_d("train", "seed"))
    p.add_argument("--weights", help=f"loss weights l1,l2,l3 {_d('train', 'weights')}")
    p.add_argument("--dropout", type=float, help="hidden dropout (default: 0.8 finetune, 0.2 frozen)")
    p.add_argument("--d-emb", type=int, help=_d("train", "d_emb"))
    p.add_argument("--d-out", type=int, help=_d("train", "d_out"))
    p.add_argument("--hidden-layers", type=int, choices=[1, 2], help=_d("train", "hidden_layers"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="label a corpus with a trained checkpoint")
    p.add_argument("--checkpoint", help="checkpoint directory")
    p.add_argument("--input", help="DEFT file (task 2) or sentences (task 1)")
    p.add_argument("--output", help="prediction file")
    p.add_argument("--task", choices=["1", "2", "multitask"], help="(default: the checkpoint's task)")
    p.add_argument("--vocab", help="vocabulary file (default: the one recorded in the checkpoint)")
    p.add_argument("--embeddings", help="external embedding file for the input")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against gold labels")
    p.add_argument("--gold", help="gold file")
    p.add_argument("--pred", help="prediction file")
    p.add_argument("--task", choices=["1", "2", "multitask"], help=_d("evaluate", "task"))
    p.add_argument("--out-dir", help="directory for TSV reports (default: <pred>.eval)")
    p.set_defaults(func=cmd_evaluate)

    for sp in sub.choices.values():
        sp.add_argument("--config", help="flat 'key = value' file; flags override it")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    func = args.func
    del args.verbose
    try:
        settings = resolve_settings(args.command, args)
        return func(settings)
    except CliError as e:
        print(f"deftlab {args.command}: {e}", file=sys.stderr)
        return e.code
    except OSError as e:
        print(f"deftlab {args.command}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
