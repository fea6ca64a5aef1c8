"""Command-line front door: translation runs, rule composition, training,
tally/quality reports, and service startup.

Exit codes: 0 success, 1 input error, 2 internal invariant violation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

from . import __version__
from .engine import (Engine, EngineConfig, EngineError, EngineResources, TargetBigrams,
                     load_nbest)
from .grammar import (GrammarError, TripleModel, derive_constituents, ebl_specialize,
                      full_parse, learn_pruning_rules, load_grammar, load_treebank,
                      extract_triples)
from .lexicon import LexiconError, load_lexicon
from .transfer import (TransferError, compose, load_transfer_rules)
from . import qlf
from .service import JudgingStore, ServiceError, create_app

INPUT_ERRORS = (EngineError, GrammarError, LexiconError, TransferError, ServiceError,
                OSError, json.JSONDecodeError)


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir: str, command: str, inputs: Sequence[str],
                   outputs: Sequence[str], config: dict, seed: Optional[int]) -> str:
    manifest = {
        "tool": "slt",
        "version": __version__,
        "command": command,
        "inputs": {os.path.basename(p): _sha256(p) for p in sorted(inputs)},
        "config": config,
        "outputs": sorted(os.path.basename(p) for p in outputs),
        "seed": seed,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True, ensure_ascii=False)
        handle.write("\n")
    return path


def load_engine_config(rules_dir: str, config_path: Optional[str]) -> EngineConfig:
    path = config_path or os.path.join(rules_dir, "config.json")
    if os.path.exists(path):
        with open(path, encoding="utf-8") as handle:
            return EngineConfig.from_dict(json.load(handle))
    return EngineConfig()


def load_resources(rules_dir: str, config: EngineConfig) -> tuple[EngineResources, list[str]]:
    paths = {name: os.path.join(rules_dir, name) for name in (
        "source.gram", "source.lex", "target.gram", "target.lex",
        "transfer.rules", "target.corpus")}
    for name in ("source.gram", "source.lex", "target.gram", "target.lex",
                 "transfer.rules"):
        if not os.path.exists(paths[name]):
            raise EngineError(f"rules directory is missing {name}")
    languages = {config.source_language, config.target_language}
    source_grammar = load_grammar(paths["source.gram"])
    target_grammar = load_grammar(paths["target.gram"])
    source_lexicon = load_lexicon(paths["source.lex"], config.source_language,
                                  known_behaviors=source_grammar.macros,
                                  languages=languages)
    target_lexicon = load_lexicon(paths["target.lex"], config.target_language,
                                  known_behaviors=target_grammar.macros,
                                  languages=languages)
    rules = load_transfer_rules(paths["transfer.rules"]).pair(
        (config.source_language, config.target_language))
    if os.path.exists(paths["target.corpus"]):
        bigrams = TargetBigrams.from_file(paths["target.corpus"])
        used = list(paths.values())
    else:
        bigrams = TargetBigrams({}, {})
        used = [p for n, p in paths.items() if n != "target.corpus"]
    resources = EngineResources(source_lexicon, source_grammar, target_lexicon,
                                target_grammar, rules, bigrams)
    return resources, used


def fixture_dir(name: str = "airtravel") -> str:
    return os.path.join(os.path.dirname(__file__), "fixtures", name)


# ---------------------------------------------------------------------------
# translate


def cmd_translate(args: argparse.Namespace) -> int:
    config = load_engine_config(args.rules, args.config)
    if args.timeout is not None:
        config = EngineConfig.from_dict({**_config_dict(config), "timeout": args.timeout})
    resources, input_paths = load_resources(args.rules, config)
    engine = Engine(resources, config)
    utterances = load_nbest(args.nbest)
    # sessions are independent; keep report order aligned with input order
    with ThreadPoolExecutor(max_workers=4) as pool:
        sessions = list(pool.map(engine.translate, utterances))
    lines: list[str] = []
    records: list[dict] = []
    ok = True
    for nbest, session in zip(utterances, sessions):
        lines.append(f"utt {nbest.utterance_id}")
        if not session.snapshots:
            ok = False
            lines.append("  (no snapshot produced)")
        for snap in session.snapshots:
            lines.append(f"  ({snap.stage}) {snap.source_text} => {snap.target_text}")
            records.append({"utterance": nbest.utterance_id, "stage": snap.stage,
                            "source": list(snap.source_tokens),
                            "target": list(snap.target_tokens),
                            "score": round(snap.score, 6)})
        if session.snapshots:
            lines.append(f"  final: {session.snapshots[-1].target_text}")
        lines.append(f"  status: {session.status}")
    report = "\n".join(lines) + ("\n" if lines else "")
    sys.stdout.write(report)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        report_path = os.path.join(args.out, "report.txt")
        with open(report_path, "w", encoding="utf-8") as handle:
            handle.write(report)
        snaps_path = os.path.join(args.out, "snapshots.jsonl")
        with open(snaps_path, "w", encoding="utf-8") as handle:
            for record in records:
                handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
        write_manifest(args.out, "translate", input_paths + [args.nbest],
                       [report_path, snaps_path], _config_dict(config), args.seed)
    return 0 if ok else 1


def _config_dict(config: EngineConfig) -> dict:
    data = {}
    for name in config.__dataclass_fields__:
        value = getattr(config, name)
        data[name] = list(value) if isinstance(value, tuple) else value
    return data


# ---------------------------------------------------------------------------
# compose


def cmd_compose(args: argparse.Namespace) -> int:
    ab_file = load_transfer_rules(args.ab)
    bc_file = load_transfer_rules(args.bc)
    if len(ab_file.rulesets) != 1 or len(bc_file.rulesets) != 1:
        raise TransferError("compose expects one language pair per rule file")
    ab = next(iter(ab_file.rulesets.values()))
    bc = next(iter(bc_file.rulesets.values()))
    blocks = list(ab_file.blocks) + list(bc_file.blocks)
    inputs = [args.ab, args.bc]
    if args.blocks:
        blocks += load_transfer_rules(args.blocks).blocks
        inputs.append(args.blocks)
    result = compose(ab, bc, blocks)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    pair = result.ruleset.pair
    with open(args.out, "w", encoding="utf-8") as handle:
        handle.write(f"# composed {pair[0]} -> {pair[1]} rules\n")
        for rule in result.ruleset:
            handle.write(f"trule {pair[0]} {pair[1]} {rule.level} "
                         f"{qlf.format_term(rule.lhs)} == {qlf.format_term(rule.rhs)}\n")
    for line in result.blocked:
        sys.stdout.write(f"blocked: {line}\n")
    for line in result.rejected:
        sys.stdout.write(f"rejected: {line}\n")
    sys.stdout.write(f"composed {len(result.ruleset)} rules "
                     f"({len(result.blocked)} blocked, {len(result.rejected)} rejected)\n")
    write_manifest(out_dir, "compose", inputs, [args.out], {}, args.seed)
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(args: argparse.Namespace) -> int:
    grammar = load_grammar(args.grammar)
    lexicon = load_lexicon(args.lexicon, args.language, known_behaviors=grammar.macros)
    treebank = load_treebank(args.treebank)
    os.makedirs(args.out, exist_ok=True)

    pruning = learn_pruning_rules(treebank, grammar, lexicon,
                                  min_occurrences=args.min_occurrences)
    pruning_path = os.path.join(args.out, "pruning.rules")
    with open(pruning_path, "w", encoding="utf-8") as handle:
        for rule in pruning:
            handle.write(f"prune {rule.symbol} {rule.left} {rule.right}\n")

    specialized = ebl_specialize(grammar, treebank, args.min_frequency, lexicon)
    spec_path = os.path.join(args.out, "specialized.gram")
    with open(spec_path, "w", encoding="utf-8") as handle:
        for rule in specialized.rules:
            daughters = " ".join(repr(d) for d in rule.daughters)
            handle.write(f"chain {rule.id} :: {rule.mother!r} -> {daughters}\n")

    triples: dict[tuple[str, str, str], list[int]] = {}
    for entry in treebank:
        correct = derive_constituents(entry, grammar, lexicon)
        span = (0, len(entry.tokens))
        correct_roots = [c for c in correct if c.span == span]
        correct_derivs = {c.derivation for c in correct_roots}
        for cons in correct_roots:
            for triple, count in extract_triples(cons.qlf).items():
                triples.setdefault(triple, [0, 0])[0] += count
        for cons in full_parse(entry.tokens, lexicon, grammar):
            if cons.derivation in correct_derivs:
                continue
            for triple, count in extract_triples(cons.qlf).items():
                triples.setdefault(triple, [0, 0])[1] += count
    triples_path = os.path.join(args.out, "triples.model")
    with open(triples_path, "w", encoding="utf-8") as handle:
        for (head, rel, mod), (good, bad) in sorted(triples.items()):
            handle.write(f"triple {head} {rel} {mod} {good} {bad}\n")

    sys.stdout.write(f"pruning rules: {len(pruning)}\n"
                     f"flattened rules: {len(specialized.rules)}\n"
                     f"triples: {len(triples)}\n")
    write_manifest(args.out, "train", [args.grammar, args.lexicon, args.treebank],
                   [pruning_path, spec_path, triples_path],
                   {"min_occurrences": args.min_occurrences,
                    "min_frequency": args.min_frequency}, args.seed)
    return 0


def load_triple_model(path: str) -> TripleModel:
    counts: dict[tuple[str, str, str], tuple[int, int]] = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 6 or fields[0] != "triple":
                raise GrammarError("triple takes <head> <rel> <mod> <good> <bad>", lineno)
            counts[(fields[1], fields[2], fields[3])] = (int(fields[4]), int(fields[5]))
    return TripleModel(counts)


def load_pruning_rules(path: str):
    from .grammar import PruningRule
    rules = []
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 4 or fields[0] != "prune":
                raise GrammarError("prune takes <symbol> <left> <right>", lineno)
            rules.append(PruningRule(fields[1], fields[2], fields[3]))
    return rules


# ---------------------------------------------------------------------------
# tally / quality / serve


def cmd_tally(args: argparse.Namespace) -> int:
    store = JudgingStore(args.log)
    view = "auto_table" if args.mode == "auto" else "abort_table"
    result = store.results(view)
    sys.stdout.write(result["rendered"] + "\n")
    if result["partial"]:
        sys.stdout.write("(partial results)\n")
    store.close()
    return 0


def cmd_quality(args: argparse.Namespace) -> int:
    store = JudgingStore(args.log)
    result = store.results("quality")
    sys.stdout.write(result["rendered"] + "\n")
    if result["partial"]:
        sys.stdout.write("(partial results)\n")
    store.close()
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    data_dir = args.data_dir or os.environ.get("SLT_DATA_DIR") or "."
    store = JudgingStore(data_dir)
    engine = None
    if args.rules:
        config = load_engine_config(args.rules, args.config)
        resources, _ = load_resources(args.rules, config)
        engine = Engine(resources, config)
    app = create_app(store, engine)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slt", description="staged lattice translation toolkit")
    parser.add_argument("--version", action="version", version=f"slt {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("translate", help="translate recognizer hypothesis files")
    p.add_argument("nbest", help="hypothesis file (utt/ref/hyp records)")
    p.add_argument("--rules", required=True, help="directory with grammars, lexica, "
                   "transfer rules and target corpus")
    p.add_argument("--config", help="engine configuration JSON")
    p.add_argument("--timeout", type=float, help="per-utterance timeout in seconds")
    p.add_argument("--out", help="directory for report, snapshots and manifest")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("compose", help="compose two transfer rule sets through a pivot")
    p.add_argument("--ab", required=True, help="rules for the first pair")
    p.add_argument("--bc", required=True, help="rules for the second pair")
    p.add_argument("--blocks", help="extra block declarations")
    p.add_argument("--out", required=True, help="output rule file")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("train", help="derive pruning rules, flattened grammar and "
                       "triple preferences from a judged corpus")
    p.add_argument("--treebank", required=True)
    p.add_argument("--grammar", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--language", default="eng")
    p.add_argument("--out", required=True)
    p.add_argument("--min-occurrences", type=int, default=2)
    p.add_argument("--min-frequency", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tally", help="render a judging results table")
    p.add_argument("--log", required=True, help="service data directory")
    p.add_argument("--mode", choices=("auto", "abort"), default="auto")
    p.set_defaults(func=cmd_tally)

    p = sub.add_parser("quality", help="render the comprehensibility quality block")
    p.add_argument("--log", required=True, help="service data directory")
    p.set_defaults(func=cmd_quality)

    p = sub.add_parser("serve", help="start the judging service")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--data-dir", help="data directory (defaults to $SLT_DATA_DIR or .)")
    p.add_argument("--rules", help="rules directory enabling /api/translate")
    p.add_argument("--config", help="engine configuration JSON")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except Exception as exc:  # invariant violation
        sys.stderr.write(f"internal error: {exc.__class__.__name__}: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
