"""Command-line entry point: gen, train, parse, eval, gradcheck, inspect.

Exit codes: 0 success, 1 check or metric failure, 2 usage or configuration error.
Every run that writes files also writes ``<output>.manifest.json`` holding the
argument vector and resolved configuration, so ``synbias <argv...>`` replays it.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__
from . import tensor as T
from .checkpoint import load_checkpoint
from .checks import MODEL_CHECKS, TOLERANCE
from .errors import ConfigError, ContractError, ParseError, SynbiasError, TrainingDivergedError, VocabularyError
from .om import OmClassifier, om_forward, om_parse
from .onlstm import OnLstmClassifier, OnLstmLM, parse_distances
from .rng import make_rng
from .tasks import (RELATIONS, Vocab, build_vocab, filter_systematic_split, gen_listops, gen_logic,
                    gen_toy_corpus, listops_tree, read_jsonl, write_jsonl)
from .tasks.io import dumps
from .train import (ClassificationData, TextData, TrainConfig, build_model, evaluate_classifier, evaluate_lm,
                    evaluate_mlm, MetricReport, train_classifier, train_lm, train_mlm)
from .trees import distance_to_tree, to_bracket
from .udgn import Udgn, dependency_mask, extract_argmax, extract_chuliu, parser_forward, to_conll_heads

log = logging.getLogger("synbias")


class UsageError(SynbiasError):
    pass


# ---------------------------------------------------------------------------
# config files and manifests
# ---------------------------------------------------------------------------

def read_flat_config(path) -> dict:
    """``key = value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def parse_overrides(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not key=value")
        key, val = item.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def write_manifest(path, argv, config: dict, seed) -> None:
    body = {"argv": list(argv), "config": config, "seed": seed, "version": __version__}
    Path(path).write_text(json.dumps(body, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _manifest_for(out) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def cmd_gen(args, argv) -> int:
    rng = make_rng(args.seed)
    out = Path(args.out)
    params = {"task": args.task, "count": args.count, "seed": args.seed}
    if args.task == "listops":
        params.update(max_depth=args.max_depth, max_args=args.max_args, max_length=args.max_length,
                      nest_prob=args.nest_prob)
        if args.max_depth < 1 or args.max_args < 2:
            raise UsageError("--max-depth must be >= 1 and --max-args >= 2")
        exs = gen_listops(rng, args.count, args.max_depth, args.max_args, nest_prob=args.nest_prob,
                          max_length=args.max_length)
        records = [e.to_record() for e in exs]
        _write_dataset(out, records, params, "label")
    elif args.task == "logic":
        params.update(max_ops=args.max_ops, min_ops=args.min_ops, split=args.split)
        if not 0 <= args.min_ops <= args.max_ops <= 12:
            raise UsageError("need 0 <= --min-ops <= --max-ops <= 12")
        exs = gen_logic(rng, args.count, args.max_ops, args.min_ops)
        if args.split:
            train, test = filter_systematic_split(exs, args.split)
            stem = out.name[:-6] if out.name.endswith(".jsonl") else out.name
            for part, rows in (("train", train), ("test", test)):
                _write_dataset(out.with_name(f"{stem}.{part}.jsonl"), [e.to_record() for e in rows],
                               {**params, "part": part}, "label")
        else:
            _write_dataset(out, [e.to_record() for e in exs], params, "label")
    else:
        records = gen_toy_corpus(rng, args.count)
        _write_dataset(out, records, params, None)
    write_manifest(_manifest_for(out), argv, params, args.seed)
    return 0


def _write_dataset(path: Path, records, params: dict, label_key) -> None:
    meta = {"generator": params, "count": len(records)}
    if label_key:
        meta["labels"] = dict(sorted(Counter(str(r[label_key]) for r in records).items()))
    write_jsonl(path, records, meta)


# ---------------------------------------------------------------------------
# train / eval
# ---------------------------------------------------------------------------

def _resolve_config(args) -> TrainConfig:
    values = read_flat_config(args.config) if args.config else {}
    values.update(parse_overrides(args.overrides))
    if args.seed is not None:
        values["seed"] = str(args.seed)
    if "dataset_id" not in values:
        values["dataset_id"] = Path(args.data).name
    return TrainConfig.from_flat(values)


def _label_index(task: str, label) -> int:
    if task == "logic":
        if label not in RELATIONS:
            raise ConfigError(f"unknown relation {label!r}")
        return RELATIONS.index(label)
    return int(label)


def _classification_data(records, vocab: Vocab, task: str) -> ClassificationData:
    ids = [vocab.encode(r["tokens"]) for r in records]
    labels = np.array([_label_index(task, r["label"]) for r in records], dtype=np.int64)
    if task == "logic":
        ids2 = [vocab.encode(r["tokens2"]) for r in records]
        keys = [max(r["ops"]) for r in records]
        return ClassificationData(ids, labels, ids2=ids2, keys=keys)
    trees = [listops_tree(r["tokens"]) for r in records]
    return ClassificationData(ids, labels, trees=trees)


def _text_data(records, vocab: Vocab) -> TextData:
    recs = [r for r in records if len(r["tokens"]) >= 2]
    heads = [r["heads"] for r in recs] if recs and all("heads" in r for r in recs) else None
    return TextData([vocab.encode(r["tokens"]) for r in recs], heads)


def _corpus_tokens(records, task: str):
    for r in records:
        yield r["tokens"]
        if task == "logic":
            yield r["tokens2"]


def _num_classes(task: str) -> int:
    return len(RELATIONS) if task == "logic" else 10


def cmd_train(args, argv) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.checkpoint = str(out / "model.sbl1")
    records = read_jsonl(args.data)
    if not records:
        raise ConfigError(f"{args.data} holds no examples")
    eval_records = read_jsonl(args.eval) if args.eval else None
    vocab = build_vocab(_corpus_tokens(records, cfg.task), cfg.min_freq)
    meta = {"vocab": vocab.to_dict(), "kind": cfg.model, "task": cfg.task, "seed": cfg.seed,
            "dataset_id": cfg.dataset_id}
    model = build_model(cfg, len(vocab), _num_classes(cfg.task))
    write_manifest(out / "manifest.json", argv, cfg.to_dict(), cfg.seed)
    log_path = out / "log.csv"
    try:
        if cfg.task in ("listops", "logic"):
            data = _classification_data(records, vocab, cfg.task)
            ev = _classification_data(eval_records, vocab, cfg.task) if eval_records else None
            report = train_classifier(model, data, cfg, vocab.pad, ev, log_path, args.resume, meta)
        elif cfg.task == "mlm":
            data = _text_data(records, vocab)
            ev = _text_data(eval_records, vocab) if eval_records else None
            report = train_mlm(model, data, cfg, vocab, ev, log_path, args.resume, meta)
        else:
            data = _text_data(records, vocab)
            ev = _text_data(eval_records, vocab) if eval_records else None
            report = train_lm(model, data, cfg, vocab.pad, ev, log_path, args.resume, meta)
    except TrainingDivergedError as exc:
        report = exc.args[1]
        (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 1
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    print(report.to_json())
    return 0


def load_model(path):
    """Rebuild a model and its vocabulary from a checkpoint."""
    arrays, meta = load_checkpoint(path)
    if "config" not in meta or "vocab" not in meta:
        raise ConfigError(f"{path} lacks the config/vocab metadata written by training")
    cfg = TrainConfig.from_flat(meta["config"])
    vocab = Vocab.from_dict(meta["vocab"])
    model = build_model(cfg, len(vocab), _num_classes(cfg.task))
    try:
        model.load_state_dict({k: v for k, v in arrays.items() if not k.startswith("adam.")})
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path} does not match the model it describes: {exc}") from None
    return model, vocab, cfg


def cmd_eval(args, argv) -> int:
    model, vocab, cfg = load_model(args.checkpoint)
    records = read_jsonl(args.data)
    if cfg.task in ("listops", "logic"):
        metrics, buckets = evaluate_classifier(model, _classification_data(records, vocab, cfg.task), vocab.pad)
    elif cfg.task == "mlm":
        metrics, buckets = evaluate_mlm(model, _text_data(records, vocab), vocab, cfg.mask_rate, cfg.seed)
    else:
        metrics, buckets = evaluate_lm(model, _text_data(records, vocab), vocab.pad)
    report = MetricReport(metrics, Path(args.data).name, cfg.seed, cfg.to_dict(), buckets)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        write_manifest(_manifest_for(args.out), argv, cfg.to_dict(), cfg.seed)
    print(text)
    failed = []
    for req in args.require or []:
        name, _, bound = req.partition(">=")
        if not bound or name not in metrics:
            raise UsageError(f"bad --require {req!r}; expected metric>=value for one of {sorted(metrics)}")
        if not metrics[name] >= float(bound):
            failed.append(f"{name}={metrics[name]:.6g} < {bound}")
    if failed:
        print("check failed: " + "; ".join(failed), file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# parse / inspect
# ---------------------------------------------------------------------------

def _read_sentences(path) -> list[list[str]]:
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith(".jsonl"):
        return [json.loads(line)["tokens"] for line in text.splitlines() if line.strip()]
    return [line.split() for line in text.splitlines() if line.strip()]


def _constituency(model, ids: np.ndarray):
    with T.no_grad():
        if isinstance(model, OmClassifier):
            return om_parse(om_forward(ids[None], model.om).p[0])
        encoder = model.encoder
        _, dists = encoder.forward(ids[None])
        return distance_to_tree(parse_distances(dists).data[0, 1:], len(ids))


def cmd_parse(args, argv) -> int:
    model, vocab, cfg = load_model(args.checkpoint)
    dependency = args.mode.startswith("dependency")
    if dependency != isinstance(model, Udgn):
        raise ConfigError(f"mode {args.mode!r} does not fit a {cfg.model!r} checkpoint")
    lines = []
    for toks in _read_sentences(args.input):
        ids = np.array(vocab.encode(toks), dtype=np.int64)
        if not dependency:
            lines.append(to_bracket(_constituency(model, ids), toks))
            continue
        if len(ids) == 1:
            lines += [f"1\t{toks[0]}\t0\t1.000000", ""]
            continue
        with T.no_grad():
            p = parser_forward(ids[None], model.parser).data[0]
        heads = extract_chuliu(p) if args.mode == "dependency-chuliu" else extract_argmax(p)
        for i, (tok, h) in enumerate(zip(toks, to_conll_heads(heads))):
            lines.append(f"{i + 1}\t{tok}\t{h}\t{p[i].max():.6f}")
        lines.append("")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        write_manifest(_manifest_for(args.out), argv, {"mode": args.mode, "checkpoint": args.checkpoint}, cfg.seed)
    else:
        sys.stdout.write(text)
    return 0


def format_table(matrix, row_labels, col_labels, fmt: str = "{:.3f}") -> str:
    cells = [[fmt.format(v) for v in row] for row in np.asarray(matrix)]
    width = max([len(c) for row in cells for c in row] + [len(str(c)) for c in col_labels])
    lw = max(len(str(r)) for r in row_labels)
    head = " " * lw + "  " + "  ".join(str(c).rjust(width) for c in col_labels)
    body = [str(r).ljust(lw) + "  " + "  ".join(c.rjust(width) for c in row) for r, row in zip(row_labels, cells)]
    return "\n".join([head, *body])


def _inspect_records(model, vocab: Vocab, sentences) -> list[str]:
    """JSON Lines: per-step OM attention, or per-sentence UDGN p and m."""
    lines = []
    for toks in sentences:
        ids = np.array(vocab.encode(toks), dtype=np.int64)
        with T.no_grad():
            if isinstance(model, OmClassifier):
                p = om_forward(ids[None], model.om).p[0]
                lines += [dumps({"t": t, "p": row.tolist(), "argmax": int(np.argmax(row))}) for t, row in enumerate(p)]
            elif isinstance(model, Udgn) and len(ids) >= 2:
                p = parser_forward(ids[None], model.parser).data[0]
                lines.append(dumps({"tokens": toks, "p": p.tolist(), "m": dependency_mask(p).data.tolist()}))
            else:
                raise ConfigError("JSON Lines dumps exist for om and udgn checkpoints (sentences of >= 2 tokens)")
    return lines


def cmd_inspect(args, argv) -> int:
    model, vocab, cfg = load_model(args.checkpoint)
    if args.format == "jsonl":
        text = "\n".join(_inspect_records(model, vocab, _read_sentences(args.input))) + "\n"
        return _emit(text, args, argv, cfg)
    blocks = []
    for toks in _read_sentences(args.input):
        ids = np.array(vocab.encode(toks), dtype=np.int64)
        if isinstance(model, OmClassifier):
            with T.no_grad():
                p = om_forward(ids[None], model.om).p[0]
            blocks.append("attention over slots (rows: tokens, cols: slot index)\n"
                          + format_table(p, toks, [f"s{i + 1}" for i in range(p.shape[1])]))
        elif isinstance(model, Udgn):
            if len(ids) < 2:
                blocks.append(f"{' '.join(toks)}: too short for a dependency matrix")
                continue
            with T.no_grad():
                p = parser_forward(ids[None], model.parser).data[0]
                m = dependency_mask(p).data
            blocks.append("head probabilities p[dependent, head]\n" + format_table(p, toks, toks)
                          + "\n\nedge mask m\n" + format_table(m, toks, toks))
        elif isinstance(model, (OnLstmClassifier, OnLstmLM)):
            with T.no_grad():
                _, dists = model.encoder.forward(ids[None])
            d = np.array([x.data[0, 1:] for x in dists]).reshape(len(dists), -1)
            blocks.append("distance per boundary (rows: layers)\n"
                          + format_table(d, [f"layer{i}" for i in range(len(d))],
                                         [f"{a}|{b}" for a, b in zip(toks, toks[1:])]))
        else:
            raise ConfigError("inspect has no view for this checkpoint")
    return _emit("\n\n".join(blocks) + "\n", args, argv, cfg)


def _emit(text: str, args, argv, cfg) -> int:
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        write_manifest(_manifest_for(args.out), argv, vars_for_manifest(args), cfg.seed)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

def cmd_gradcheck(args, argv) -> int:
    kinds = list(MODEL_CHECKS) if args.model == "all" else [args.model]
    worst_err, worst_name = 0.0, ""
    rows = {}
    for kind in kinds:
        if kind == "onlstm":
            err, where = MODEL_CHECKS[kind](dim=args.dim, chunk=args.chunk, seed=args.seed)
        elif kind == "om":
            err, where = MODEL_CHECKS[kind](slots=args.slots, dim=args.dim, seed=args.seed)
        else:
            err, where = MODEL_CHECKS[kind](layers=args.layers, channels=args.channels, seed=args.seed)
        rows[kind] = float(err)
        print(f"{kind}\tmax_rel_error={err:.3e}\tworst={where}")
        if err > worst_err:
            worst_err, worst_name = err, f"{kind}:{where}"
    if args.out:
        Path(args.out).write_text(dumps({"max_rel_error": rows, "tolerance": TOLERANCE}) + "\n", encoding="utf-8")
        write_manifest(_manifest_for(args.out), argv, vars_for_manifest(args), args.seed)
    if worst_err >= TOLERANCE:
        print(f"gradient check failed: worst parameter {worst_name} ({worst_err:.3e})", file=sys.stderr)
        return 1
    return 0


def vars_for_manifest(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="synbias", description="Syntactic-bias models: data, training, parsing.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("task", choices=["listops", "logic", "toy"])
    g.add_argument("--count", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--max-depth", type=int, default=4)
    g.add_argument("--max-args", type=int, default=5)
    g.add_argument("--max-length", type=int, default=None)
    g.add_argument("--nest-prob", type=float, default=0.3)
    g.add_argument("--max-ops", type=int, default=6)
    g.add_argument("--min-ops", type=int, default=0)
    g.add_argument("--split", choices=["A", "B", "C"], default=None)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="flat key=value file")
    t.add_argument("--data", required=True)
    t.add_argument("--eval", help="held-out JSONL evaluated after each epoch")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--resume", action="store_true")
    t.add_argument("overrides", nargs="*", metavar="key=value")
    t.set_defaults(func=cmd_train)

    p = sub.add_parser("parse", help="induce trees with a trained model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="plain text (one sentence per line) or JSONL")
    p.add_argument("--mode", required=True, choices=["constituency", "dependency-argmax", "dependency-chuliu"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_parse)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out")
    e.add_argument("--require", action="append", metavar="METRIC>=VALUE")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference check of tiny models")
    c.add_argument("--model", choices=["onlstm", "om", "udgn", "all"], default="all")
    c.add_argument("--dim", type=int, default=8)
    c.add_argument("--chunk", type=int, default=2)
    c.add_argument("--slots", type=int, default=3)
    c.add_argument("--layers", type=int, default=2)
    c.add_argument("--channels", type=int, default=2)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out")
    c.set_defaults(func=cmd_gradcheck)

    i = sub.add_parser("inspect", help="print attention / dependency matrices as text tables")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--input", required=True)
    i.add_argument("--format", choices=["table", "jsonl"], default="table")
    i.add_argument("--out")
    i.set_defaults(func=cmd_inspect)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except (UsageError, ConfigError, ContractError, ParseError, VocabularyError) as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
