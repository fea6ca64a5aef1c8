"""Feature-based phrase-structure grammar with a bottom-up chart parser.

Covers the monolingual analysis machinery: unification over finite feature
value sets, phrasal and full chart parsing with compositional semantics,
treebank-derived constituent pruning, flattening of frequent rule
combinations into single rules, and semantic-triple preference ranking.
"""

from __future__ import annotations

import itertools
import re
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

from . import qlf
from .lexicon import LexEntry, LoadedLexicon, tag_score

BOUNDARY = "<bd>"
DEFAULT_CUT = frozenset({"S", "NP", "PP"})


class GrammarError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ParseCancelled(RuntimeError):
    """Raised inside chart processing when the cancellation check fires."""


# ---------------------------------------------------------------------------
# Feature categories and unification


@dataclass(frozen=True, order=True)
class Variable:
    name: str


Value = Union[frozenset, Variable]


@dataclass(frozen=True)
class FeatureCategory:
    symbol: str
    features: tuple[tuple[str, Value], ...] = ()

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.features, key=lambda kv: kv[0]))
        for name, value in ordered:
            if isinstance(value, frozenset) and not value:
                raise GrammarError(f"empty value set for feature {name!r}")
        object.__setattr__(self, "features", ordered)

    def feature_map(self) -> dict[str, Value]:
        return dict(self.features)

    def __repr__(self) -> str:  # compact, used in diagnostics
        if not self.features:
            return self.symbol
        parts = []
        for name, value in self.features:
            if isinstance(value, Variable):
                parts.append(f"{name}=?{value.name}")
            else:
                parts.append(f"{name}={'|'.join(sorted(value))}")
        return f"{self.symbol}[{', '.join(parts)}]"


def _deref(value: Value, bindings: Mapping[str, Value]
           ) -> tuple[Optional[Variable], Optional[frozenset]]:
    """Follow alias chains; return (root variable or None, set constraint or None)."""
    while isinstance(value, Variable):
        bound = bindings.get(value.name)
        if bound is None:
            return value, None
        if isinstance(bound, Variable):
            value = bound
            continue
        return value, bound
    return None, value


def _resolve_value(value: Value, bindings: Mapping[str, Value]) -> Value:
    root, constraint = _deref(value, bindings)
    if constraint is not None:
        return constraint
    assert root is not None
    return root


def _unify_values(x: Value, y: Value, bindings: dict[str, Value]) -> Optional[Value]:
    """Unify two values in place. A variable's set binding narrows as further
    constraints arrive, so features sharing a variable co-vary."""
    rx, sx = _deref(x, bindings)
    ry, sy = _deref(y, bindings)
    if sx is not None and sy is not None:
        joint = sx & sy
        if not joint:
            return None
    else:
        joint = sx if sx is not None else sy
    if rx is not None and ry is not None and rx.name != ry.name:
        bindings[ry.name] = rx
    root = rx if rx is not None else ry
    if root is None:
        return joint
    if joint is not None:
        bindings[root.name] = joint
    return root


def unify(a: FeatureCategory, b: FeatureCategory,
          bindings: Optional[dict[str, Value]] = None) -> Optional[FeatureCategory]:
    """Unify two categories; returns the combined category or None.

    Shared features intersect their value sets, variables are bound and
    propagate through ``bindings`` (pass a dict to observe or share them).
    A feature present on only one side carries over unchanged.
    """
    if a.symbol != b.symbol:
        return None
    if bindings is None:
        bindings = {}
    fa, fb = a.feature_map(), b.feature_map()
    out: list[tuple[str, Value]] = []
    for name in sorted(set(fa) | set(fb)):
        if name not in fa:
            out.append((name, fb[name]))  # resolved by the final substitution
        elif name not in fb:
            out.append((name, fa[name]))
        else:
            joint = _unify_values(fa[name], fb[name], bindings)
            if joint is None:
                return None
            out.append((name, joint))
    return substitute_category(FeatureCategory(a.symbol, tuple(out)), bindings)


def substitute_category(cat: FeatureCategory, bindings: Mapping[str, Value]) -> FeatureCategory:
    feats = tuple((n, _resolve_value(v, bindings)) for n, v in cat.features)
    return FeatureCategory(cat.symbol, feats)


def rename_category(cat: FeatureCategory, suffix: str) -> FeatureCategory:
    feats = tuple((n, Variable(v.name + suffix) if isinstance(v, Variable) else v)
                  for n, v in cat.features)
    return FeatureCategory(cat.symbol, feats)


def category_variables(cat: FeatureCategory) -> set[str]:
    return {v.name for _, v in cat.features if isinstance(v, Variable)}


# ---------------------------------------------------------------------------
# Semantics templates


@dataclass(frozen=True)
class TemplateRef:
    index: int  # 0-based daughter index


@dataclass(frozen=True)
class TemplateApply:
    head: "Template"
    args: tuple[tuple[str, "Template"], ...]


Template = Union[TemplateRef, TemplateApply]


def eval_template(tpl: Template, daughters: Sequence[qlf.Term]) -> qlf.Term:
    if isinstance(tpl, TemplateRef):
        return daughters[tpl.index]
    head = eval_template(tpl.head, daughters)
    args = tuple((label, eval_template(sub, daughters)) for label, sub in tpl.args)
    if isinstance(head, qlf.SenseConst):
        return qlf.Apply(head, args)
    if isinstance(head, qlf.Apply):
        merged = dict(head.args)
        for label, term in args:
            if label in merged:
                raise GrammarError(f"argument label {label!r} already present on head")
            merged[label] = term
        return qlf.Apply(head.functor, tuple(merged.items()))
    raise GrammarError(f"cannot apply arguments to {head!r}")


def template_refs(tpl: Template) -> set[int]:
    if isinstance(tpl, TemplateRef):
        return {tpl.index}
    refs = template_refs(tpl.head)
    for _, sub in tpl.args:
        refs |= template_refs(sub)
    return refs


def shift_template(tpl: Template, mapping: Mapping[int, Template]) -> Template:
    """Replace daughter references according to ``mapping`` (used when rules
    are flattened into each other)."""
    if isinstance(tpl, TemplateRef):
        return mapping[tpl.index]
    return TemplateApply(shift_template(tpl.head, mapping),
                         tuple((l, shift_template(s, mapping)) for l, s in tpl.args))


def invert_template(tpl: Template, goal: qlf.Term) -> list[dict[int, qlf.Term]]:
    """All daughter-goal assignments under which ``tpl`` evaluates to ``goal``.

    Daughters missing from an assignment are semantically unconstrained (their
    meaning is discarded by the template).
    """
    if isinstance(tpl, TemplateRef):
        return [{tpl.index: goal}]
    if not isinstance(goal, qlf.Apply):
        return []
    goal_args = goal.arg_map()
    labels = [l for l, _ in tpl.args]
    if not set(labels) <= set(goal_args):
        return []
    rest = {l: v for l, v in goal_args.items() if l not in labels}
    head_goal: qlf.Term
    head_goal = qlf.Apply(goal.functor, tuple(rest.items())) if rest else goal.functor
    assignments = invert_template(tpl.head, head_goal)
    for label, sub in tpl.args:
        sub_assignments = invert_template(sub, goal_args[label])
        merged: list[dict[int, qlf.Term]] = []
        for left in assignments:
            for right in sub_assignments:
                if all(left.get(k, v) == v for k, v in right.items()):
                    merged.append({**left, **right})
        assignments = merged
        if not assignments:
            return []
    return assignments


# ---------------------------------------------------------------------------
# Grammar objects and file format


@dataclass(frozen=True)
class GrammarRule:
    id: str
    mother: FeatureCategory
    daughters: tuple[FeatureCategory, ...]
    sem: Template

    def __post_init__(self) -> None:
        if not self.daughters:
            raise GrammarError(f"rule {self.id} needs at least one daughter")
        bad = [i for i in template_refs(self.sem) if not 0 <= i < len(self.daughters)]
        if bad:
            raise GrammarError(f"rule {self.id} semantics reference daughter {bad[0] + 1}")


class Grammar:
    def __init__(self, features: dict[str, frozenset[str]],
                 macros: dict[str, FeatureCategory],
                 rules: Sequence[GrammarRule],
                 cut_symbols: Iterable[str] = ()):
        self.features = dict(features)
        self.macros = dict(macros)
        self.rules = list(rules)
        self.rule_by_id = {r.id: r for r in self.rules}
        if len(self.rule_by_id) != len(self.rules):
            dupes = [rid for rid, n in Counter(r.id for r in self.rules).items() if n > 1]
            raise GrammarError(f"duplicate rule id {dupes[0]!r}")
        self.cut_symbols = frozenset(cut_symbols) or DEFAULT_CUT
        symbols = {c.symbol for c in self.macros.values()}
        for rule in self.rules:
            symbols.add(rule.mother.symbol)
            symbols.update(d.symbol for d in rule.daughters)
        self.symbols = frozenset(symbols)


_CATEGORY_RE = re.compile(r"^([A-Za-z][\w'-]*)(\[(.*)\])?$")


def parse_category(text: str, features: Mapping[str, frozenset[str]]) -> FeatureCategory:
    text = text.strip()
    m = _CATEGORY_RE.match(text)
    if not m:
        raise GrammarError(f"bad category spec {text!r}")
    symbol, _, body = m.groups()
    feats: list[tuple[str, Value]] = []
    if body:
        for part in _split_top(body, ","):
            if "=" not in part:
                raise GrammarError(f"bad feature assignment {part!r} in {text!r}")
            name, value = (s.strip() for s in part.split("=", 1))
            if name not in features:
                raise GrammarError(f"undeclared feature {name!r} in {text!r}")
            inventory = features[name]
            if value.startswith("?"):
                feats.append((name, Variable(value[1:])))
            elif value.startswith("!"):
                atoms = frozenset(value[1:].split("|"))
                _check_atoms(atoms, inventory, name, text)
                rest = inventory - atoms
                if not rest:
                    raise GrammarError(f"complement of {value!r} is empty for {name!r}")
                feats.append((name, rest))
            else:
                atoms = frozenset(value.split("|"))
                _check_atoms(atoms, inventory, name, text)
                feats.append((name, atoms))
    return FeatureCategory(symbol, tuple(feats))


def _check_atoms(atoms: frozenset[str], inventory: frozenset[str], name: str, ctx: str) -> None:
    unknown = atoms - inventory
    if unknown:
        raise GrammarError(f"atom {sorted(unknown)[0]!r} not in inventory of {name!r} ({ctx})")


def _split_top(text: str, sep: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if cur:
        parts.append("".join(cur))
    return [p.strip() for p in parts if p.strip()]


def parse_template(text: str) -> Template:
    text = text.strip()
    tpl, rest = _parse_template(text)
    if rest.strip():
        raise GrammarError(f"trailing template input {rest!r}")
    return tpl


def _parse_template(text: str) -> tuple[Template, str]:
    text = text.lstrip()
    m = re.match(r"\$(\d+)", text)
    if not m:
        raise GrammarError(f"expected daughter reference in {text!r}")
    head: Template = TemplateRef(int(m.group(1)) - 1)
    rest = text[m.end():].lstrip()
    if rest.startswith("("):
        args: list[tuple[str, Template]] = []
        rest = rest[1:]
        while True:
            am = re.match(r"\s*([\w'-]+)\s*=", rest)
            if not am:
                raise GrammarError(f"expected label= in template near {rest!r}")
            label = am.group(1)
            sub, rest = _parse_template(rest[am.end():])
            args.append((label, sub))
            rest = rest.lstrip()
            if rest.startswith(","):
                rest = rest[1:]
                continue
            if rest.startswith(")"):
                rest = rest[1:]
                break
            raise GrammarError(f"expected , or ) in template near {rest!r}")
        head = TemplateApply(head, tuple(args))
    return head, rest


def load_grammar(path: str) -> Grammar:
    """Load ``feature`` / ``macro`` / ``rule`` / ``cut`` declarations."""
    features: dict[str, frozenset[str]] = {}
    macros: dict[str, FeatureCategory] = {}
    rules: list[GrammarRule] = []
    cuts: list[str] = []
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                kind, rest = line.split(None, 1)
            except ValueError:
                raise GrammarError(f"incomplete declaration {line!r}", lineno)
            try:
                if kind == "feature":
                    m = re.match(r"([\w-]+)\s*\{(.*)\}\s*$", rest)
                    if not m:
                        raise GrammarError("feature takes <name> { atoms }")
                    name, atoms = m.group(1), frozenset(m.group(2).split())
                    if not atoms:
                        raise GrammarError(f"feature {name!r} needs at least one atom")
                    if name in features:
                        raise GrammarError(f"duplicate feature {name!r}")
                    features[name] = atoms
                elif kind == "macro":
                    name, spec = rest.split(None, 1)
                    if name in macros:
                        raise GrammarError(f"duplicate macro {name!r}")
                    macros[name] = parse_category(spec, features)
                elif kind == "rule":
                    rules.append(_parse_rule(rest, features))
                elif kind == "cut":
                    cuts.extend(rest.split())
                else:
                    raise GrammarError(f"unknown declaration {kind!r}")
            except GrammarError as exc:
                if exc.line is None:
                    raise GrammarError(str(exc), lineno) from None
                raise
    return Grammar(features, macros, rules, cuts)


def _parse_rule(rest: str, features: Mapping[str, frozenset[str]]) -> GrammarRule:
    head, _, sem_text = rest.partition(";")
    if "sem:" not in sem_text:
        raise GrammarError("rule is missing '; sem: <template>'")
    sem = parse_template(sem_text.split("sem:", 1)[1])
    rule_id, _, cats = head.strip().partition(" ")
    if "->" not in cats:
        raise GrammarError(f"rule {rule_id!r} is missing '->'")
    mother_text, daughters_text = cats.split("->", 1)
    mother = parse_category(mother_text, features)
    daughters = tuple(parse_category(d, features) for d in _split_top(daughters_text, " "))
    return GrammarRule(rule_id, mother, daughters, sem)


# ---------------------------------------------------------------------------
# Chart parsing


@dataclass(frozen=True)
class Constituent:
    span: tuple[int, int]
    category: FeatureCategory
    qlf: qlf.Term
    derivation: tuple
    stage: str

    def __post_init__(self) -> None:
        if self.span[1] <= self.span[0]:
            raise GrammarError(f"empty span {self.span}")

    @property
    def symbol(self) -> str:
        return self.category.symbol


@dataclass(frozen=True)
class PruningRule:
    symbol: str
    left: str
    right: str


@dataclass
class ChartStats:
    built: int = 0
    pruned: int = 0


def derivation_size(derivation: tuple) -> int:
    if derivation[0] == "lex":
        return 0
    return 1 + sum(derivation_size(child) for child in derivation[2:])


def derivation_rule_ids(derivation: tuple) -> tuple[str, ...]:
    if derivation[0] == "lex":
        return ()
    ids: tuple[str, ...] = (derivation[1],)
    for child in derivation[2:]:
        ids += derivation_rule_ids(child)
    return ids


class _Chart:
    def __init__(self, n: int):
        self.cells: dict[tuple[int, int], list[Constituent]] = defaultdict(list)
        self.seen: set = set()
        self.n = n

    def add(self, cons: Constituent) -> bool:
        key = (cons.span, cons.category, cons.qlf, cons.derivation)
        if key in self.seen:
            return False
        self.seen.add(key)
        self.cells[cons.span].append(cons)
        return True

    def all(self) -> list[Constituent]:
        out = []
        for span in sorted(self.cells):
            out.extend(self.cells[span])
        return out


def _lexical_edges(tokens: Sequence[str], entries: Iterable[LexEntry],
                   macros: Mapping[str, FeatureCategory], stage: str,
                   fresh: Callable[[], str]) -> list[Constituent]:
    by_surface: dict[tuple[str, ...], list[LexEntry]] = defaultdict(list)
    max_len = 1
    for entry in entries:
        by_surface[entry.surface].append(entry)
        max_len = max(max_len, len(entry.surface))
    out: list[Constituent] = []
    n = len(tokens)
    for i in range(n):
        for length in range(1, min(max_len, n - i) + 1):
            phrase = tuple(tokens[i:i + length])
            for entry in by_surface.get(phrase, ()):
                macro = macros.get(entry.behavior)
                if macro is None:
                    raise GrammarError(f"entry {' '.join(entry.surface)!r} names "
                                       f"unknown behavior {entry.behavior!r}")
                category = rename_category(macro, fresh())
                term = qlf.SenseConst(entry.sense.id, entry.sense.language)
                deriv = ("lex", " ".join(entry.surface), entry.tag, entry.sense.id)
                out.append(Constituent((i, i + length), category, term, deriv, stage))
    return out


def _compositions(start: int, end: int, parts: int) -> Iterable[tuple[tuple[int, int], ...]]:
    if parts == 1:
        yield ((start, end),)
        return
    for mid in range(start + 1, end - parts + 2):
        for rest in _compositions(mid, end, parts - 1):
            yield ((start, mid),) + rest


def chart_parse(tokens: Sequence[str], lexicon: LoadedLexicon,
                grammar: "Grammar | SpecializedGrammar", *,
                stage: str,
                pruning: Iterable[PruningRule] = (),
                cancel: Optional[Callable[[], bool]] = None,
                stats: Optional[ChartStats] = None) -> list[Constituent]:
    """Bottom-up chart over a token sequence, layered by span length.

    Pruning rules are applied after each layer; the cancel callback is checked
    at least once per agenda item and raises :class:`ParseCancelled`.
    """
    n = len(tokens)
    if n == 0:
        return []
    stats = stats if stats is not None else ChartStats()
    counter = itertools.count()

    def fresh() -> str:
        return f"~{next(counter)}"

    def check_cancel() -> None:
        if cancel is not None and cancel():
            raise ParseCancelled()

    prune_set = {(p.symbol, p.left, p.right) for p in pruning}
    tags: Optional[tuple[str, ...]] = None
    if prune_set:
        tags, _ = tag_score(tokens, lexicon.tag_model)

    chart = _Chart(n)
    lexical = _lexical_edges(tokens, lexicon.entries, grammar.macros, stage, fresh)
    rules_by_arity: dict[int, list[GrammarRule]] = defaultdict(list)
    for rule in grammar.rules:
        rules_by_arity[len(rule.daughters)].append(rule)

    def context(span: tuple[int, int]) -> tuple[str, str]:
        assert tags is not None
        left = tags[span[0] - 1] if span[0] > 0 else BOUNDARY
        right = tags[span[1]] if span[1] < n else BOUNDARY
        return left, right

    for layer in range(1, n + 1):
        new_layer: list[Constituent] = []
        for cons in lexical:
            if cons.span[1] - cons.span[0] == layer and chart.add(cons):
                stats.built += 1
                new_layer.append(cons)
        # iterate to fixpoint: same-span unary rules feed on this layer's output
        changed = True
        while changed:
            changed = False
            for start in range(0, n - layer + 1):
                end = start + layer
                for arity, rules in rules_by_arity.items():
                    if arity > layer:
                        continue
                    for composition in _compositions(start, end, arity):
                        if any(not chart.cells.get(span) for span in composition):
                            continue
                        for rule in rules:
                            check_cancel()
                            suffix = fresh()
                            daughters = [rename_category(d, suffix)
                                         for d in rule.daughters]
                            mother = rename_category(rule.mother, suffix)
                            for combo in itertools.product(
                                    *(list(chart.cells[span]) for span in composition)):
                                bindings: dict[str, Value] = {}
                                ok = True
                                for dcat, cons in zip(daughters, combo):
                                    if unify(dcat, cons.category, bindings) is None:
                                        ok = False
                                        break
                                if not ok:
                                    continue
                                inst = substitute_category(mother, bindings)
                                term = eval_template(rule.sem, [c.qlf for c in combo])
                                deriv = ("rule", rule.id) + tuple(
                                    c.derivation for c in combo)
                                built = Constituent((start, end), inst, term,
                                                    deriv, stage)
                                if chart.add(built):
                                    stats.built += 1
                                    new_layer.append(built)
                                    changed = True
        if prune_set:
            for cons in new_layer:
                left, right = context(cons.span)
                if (cons.symbol, left, right) in prune_set:
                    cell = chart.cells[cons.span]
                    if cons in cell:
                        cell.remove(cons)
                        stats.pruned += 1
    return chart.all()


def phrasal_parse(tokens: Sequence[str], lexicon: LoadedLexicon, grammar: Grammar,
                  targets: Iterable[str], *,
                  cancel: Optional[Callable[[], bool]] = None,
                  stats: Optional[ChartStats] = None) -> list[Constituent]:
    """All constituents over ``tokens`` whose symbol is in ``targets``."""
    target_set = set(targets)
    unknown = target_set - grammar.symbols
    if unknown:
        raise ValueError(f"target symbols not in grammar: {sorted(unknown)}")
    if not target_set or not tokens:
        return []
    found = chart_parse(tokens, lexicon, grammar, stage="phrasal",
                        cancel=cancel, stats=stats)
    return [c for c in found if c.symbol in target_set]


def full_parse(tokens: Sequence[str], lexicon: LoadedLexicon,
               grammar: "Grammar | SpecializedGrammar", *,
               pruning: Iterable[PruningRule] = (),
               root: str = "S",
               cancel: Optional[Callable[[], bool]] = None,
               stats: Optional[ChartStats] = None) -> list[Constituent]:
    """Full-span analyses with the given root symbol (empty list if none)."""
    if not tokens:
        return []
    found = chart_parse(tokens, lexicon, grammar, stage="full",
                        pruning=pruning, cancel=cancel, stats=stats)
    n = len(tokens)
    return [c for c in found if c.symbol == root and c.span == (0, n)]


# ---------------------------------------------------------------------------
# Treebanks


@dataclass(frozen=True)
class TreebankEntry:
    tokens: tuple[str, ...]
    derivation: tuple  # ("rule", id, children...) with ("lex", surface) leaves
    line: int = 0

    @property
    def sentence(self) -> str:
        return " ".join(self.tokens)


def _parse_sexpr(text: str, lineno: int) -> tuple:
    tokens = re.findall(r"\(|\)|\"[^\"]*\"|[^\s()]+", text)
    pos = 0

    def node() -> tuple:
        nonlocal pos
        tok = tokens[pos]
        pos += 1
        if tok == "(":
            rid = tokens[pos]
            pos += 1
            children = []
            while tokens[pos] != ")":
                children.append(node())
            pos += 1
            return ("rule", rid) + tuple(children)
        if tok == ")":
            raise GrammarError("unbalanced derivation", lineno)
        return ("lex", tok[1:-1] if tok.startswith('"') else tok)

    try:
        tree = node()
    except IndexError:
        raise GrammarError("truncated derivation", lineno)
    if pos != len(tokens):
        raise GrammarError("trailing derivation input", lineno)
    return tree


def load_treebank(path: str) -> list[TreebankEntry]:
    """One record per line: ``token token ... ||| (rule_id children...)``."""
    entries = []
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "|||" not in line:
                raise GrammarError("record needs 'tokens ||| derivation'", lineno)
            tokens_text, deriv_text = line.split("|||", 1)
            tokens = tuple(tokens_text.split())
            if not tokens:
                raise GrammarError("record has no tokens", lineno)
            entries.append(TreebankEntry(tokens, _parse_sexpr(deriv_text.strip(), lineno), lineno))
    return entries


def derive_constituents(entry: TreebankEntry, grammar: "Grammar | SpecializedGrammar",
                        lexicon: LoadedLexicon) -> list[Constituent]:
    """Re-derive a treebank record, returning every constituent it licenses.

    Raises :class:`GrammarError` naming the sentence when the derivation is
    not valid for the grammar and lexicon.
    """
    entries_by_surface: dict[str, list[LexEntry]] = defaultdict(list)
    for lex in lexicon.entries:
        entries_by_surface[" ".join(lex.surface)].append(lex)
    counter = itertools.count()

    def walk(node: tuple, start: int) -> list[tuple[int, Constituent, list[Constituent]]]:
        # returns (end, root constituent, all constituents) alternatives
        if node[0] == "lex":
            surface = node[1]
            words = tuple(surface.split())
            if tuple(entry.tokens[start:start + len(words)]) != words:
                return []
            out = []
            for lex in entries_by_surface.get(surface, ()):
                macro = grammar.macros.get(lex.behavior)
                if macro is None:
                    continue
                cat = rename_category(macro, f"~{next(counter)}")
                cons = Constituent((start, start + len(words)), cat,
                                   qlf.SenseConst(lex.sense.id, lex.sense.language),
                                   ("lex", surface, lex.tag, lex.sense.id), "full")
                out.append((start + len(words), cons, [cons]))
            return out
        rid = node[1]
        rule = grammar.rule_by_id.get(rid) if hasattr(grammar, "rule_by_id") else None
        if rule is None:
            raise GrammarError(
                f"sentence {entry.sentence!r}: derivation names unknown rule {rid!r}")
        children = node[2:]
        if len(children) != len(rule.daughters):
            raise GrammarError(
                f"sentence {entry.sentence!r}: rule {rid!r} expects "
                f"{len(rule.daughters)} daughters, derivation has {len(children)}")
        suffix = f"~{next(counter)}"
        alternatives = [(start, [], [])]  # (pos, child constituents, collected)
        for child in children:
            extended = []
            for pos, childs, collected in alternatives:
                for end, cons, sub in walk(child, pos):
                    extended.append((end, childs + [cons], collected + sub))
            alternatives = extended
            if not alternatives:
                return []
        out = []
        for end, childs, collected in alternatives:
            bindings: dict[str, Value] = {}
            ok = True
            for dcat, cons in zip(rule.daughters, childs):
                if unify(rename_category(dcat, suffix), cons.category, bindings) is None:
                    ok = False
                    break
            if not ok:
                continue
            mother = substitute_category(rename_category(rule.mother, suffix), bindings)
            term = eval_template(rule.sem, [c.qlf for c in childs])
            deriv = ("rule", rid) + tuple(c.derivation for c in childs)
            cons = Constituent((start, end), mother, term, deriv, "full")
            out.append((end, cons, collected + [cons]))
        return out

    results = [alt for alt in walk(entry.derivation, 0) if alt[0] == len(entry.tokens)]
    if not results:
        raise GrammarError(f"sentence {entry.sentence!r}: derivation is not valid "
                           f"under the grammar")
    constituents: list[Constituent] = []
    seen = set()
    for _, _, collected in results:
        for cons in collected:
            key = (cons.span, cons.symbol, cons.derivation)
            if key not in seen:
                seen.add(key)
                constituents.append(cons)
    return constituents


def learn_pruning_rules(treebank: Sequence[TreebankEntry],
                        grammar: Grammar, lexicon: LoadedLexicon,
                        min_occurrences: int = 2) -> list[PruningRule]:
    """Contexts in which a category is chart-built but never part of a correct
    derivation anywhere in the treebank."""
    counts: Counter[tuple[str, str, str]] = Counter()
    good: set[tuple[str, str, str]] = set()
    for entry in treebank:
        correct = {(c.symbol, c.span) for c in derive_constituents(entry, grammar, lexicon)}
        tags, _ = tag_score(entry.tokens, lexicon.tag_model)
        n = len(entry.tokens)
        for cons in chart_parse(entry.tokens, lexicon, grammar, stage="full"):
            left = tags[cons.span[0] - 1] if cons.span[0] > 0 else BOUNDARY
            right = tags[cons.span[1]] if cons.span[1] < n else BOUNDARY
            context = (cons.symbol, left, right)
            counts[context] += 1
            if (cons.symbol, cons.span) in correct:
                good.add(context)
    rules = [PruningRule(*ctx) for ctx, n in sorted(counts.items())
             if n >= min_occurrences and ctx not in good]
    return rules


# ---------------------------------------------------------------------------
# Grammar flattening (frequent rule combinations become single rules)


@dataclass(frozen=True)
class FlattenedRule:
    id: str
    mother: FeatureCategory
    daughters: tuple[FeatureCategory, ...]
    sem: Template
    chain: tuple[str, ...]
    fragment: tuple  # ("rule", id, slots...) with ("slot",) frontier leaves

    def __post_init__(self) -> None:
        if not self.daughters:
            raise GrammarError(f"flattened rule {self.id} has no daughters")


class SpecializedGrammar:
    """Grammar whose rules are flattened chains of an original grammar."""

    def __init__(self, original: Grammar, rules: Sequence[FlattenedRule]):
        self.original = original
        self.rules = list(rules)
        self.rule_by_id = {r.id: r for r in self.rules}

    @property
    def macros(self) -> dict[str, FeatureCategory]:
        return self.original.macros

    @property
    def features(self) -> dict[str, frozenset[str]]:
        return self.original.features

    @property
    def symbols(self) -> frozenset[str]:
        return self.original.symbols

    def expand(self, derivation: tuple) -> tuple:
        """Rewrite a derivation over flattened rules into original rule ids."""
        if derivation[0] == "lex":
            return derivation
        rule = self.rule_by_id[derivation[1]]
        children = [self.expand(child) for child in derivation[2:]]
        position = itertools.count()

        def rebuild(frag: tuple) -> tuple:
            out: tuple = ("rule", frag[1])
            for slot in frag[2:]:
                if slot[0] == "slot":
                    out += (children[next(position)],)
                else:
                    out += (rebuild(slot),)
            return out

        rebuilt = rebuild(rule.fragment)
        if next(position) != len(children):
            raise GrammarError(f"fragment arity mismatch expanding {rule.id}")
        return rebuilt


def _fragment_key(node: tuple, grammar: Grammar, cut: frozenset[str]) -> tuple:
    """Fragment of a derivation rooted here, cut at embedded cut categories."""
    rid = node[1]
    out: tuple = ("rule", rid)
    for child in node[2:]:
        if child[0] == "lex":
            out += (("slot",),)
        else:
            symbol = grammar.rule_by_id[child[1]].mother.symbol
            if symbol in cut:
                out += (("slot",),)
            else:
                out += (_fragment_key(child, grammar, cut),)
    return out


def _collect_fragments(node: tuple, grammar: Grammar, cut: frozenset[str],
                       bag: set) -> None:
    if node[0] == "lex":
        return
    symbol = grammar.rule_by_id[node[1]].mother.symbol
    if symbol in cut:
        bag.add(_fragment_key(node, grammar, cut))
    for child in node[2:]:
        _collect_fragments(child, grammar, cut, bag)


def _flatten_fragment(fragment: tuple, grammar: Grammar, name: str) -> FlattenedRule:
    counter = itertools.count()
    bindings: dict[str, Value] = {}

    def rec(frag: tuple) -> tuple[FeatureCategory, list[FeatureCategory], Template, tuple[str, ...]]:
        rule = grammar.rule_by_id[frag[1]]
        suffix = f"~f{next(counter)}"
        mother = rename_category(rule.mother, suffix)
        daughters: list[FeatureCategory] = []
        chain: tuple[str, ...] = (rule.id,)
        slot_templates: dict[int, Template] = {}
        for pos, slot in enumerate(frag[2:]):
            dcat = rename_category(rule.daughters[pos], suffix)
            if slot[0] == "slot":
                slot_templates[pos] = TemplateRef(len(daughters))
                daughters.append(dcat)
            else:
                sub_mother, sub_daughters, sub_sem, sub_chain = rec(slot)
                if unify(dcat, sub_mother, bindings) is None:
                    raise GrammarError(f"fragment {name}: daughter {pos + 1} of "
                                       f"{rule.id} does not accept {sub_mother!r}")
                offset = len(daughters)
                remap = {i: TemplateRef(offset + i) for i in range(len(sub_daughters))}
                slot_templates[pos] = shift_template(sub_sem, remap)
                daughters.extend(sub_daughters)
                chain += sub_chain
        sem = shift_template(rule.sem, slot_templates)
        return mother, daughters, sem, chain

    mother, daughters, sem, chain = rec(fragment)
    mother = substitute_category(mother, bindings)
    daughters = [substitute_category(d, bindings) for d in daughters]
    return FlattenedRule(name, mother, tuple(daughters), sem, chain, fragment)


def ebl_specialize(grammar: Grammar, treebank: Sequence[TreebankEntry],
                   min_frequency: int, lexicon: Optional[LoadedLexicon] = None,
                   cut: Optional[Iterable[str]] = None) -> SpecializedGrammar:
    """Flatten every connected rule combination rooted at a cut category that
    occurs at least ``min_frequency`` times in the treebank."""
    if min_frequency < 1:
        raise ValueError("min_frequency must be >= 1")
    cut_set = frozenset(cut) if cut is not None else grammar.cut_symbols
    # document frequency: a fragment counts once per treebank record
    bag: Counter = Counter()
    for entry in treebank:
        if lexicon is not None:
            derive_constituents(entry, grammar, lexicon)  # validity check
        per_tree: set = set()
        _collect_fragments(entry.derivation, grammar, cut_set, per_tree)
        bag.update(per_tree)
    rules = []
    for index, (fragment, count) in enumerate(sorted(bag.items())):
        if count < min_frequency:
            continue
        name = "+".join(derivation_rule_ids_of_fragment(fragment)) or f"chain{index}"
        if any(r.id == name for r in rules):
            name = f"{name}#{index}"
        rules.append(_flatten_fragment(fragment, grammar, name))
    return SpecializedGrammar(grammar, rules)


def derivation_rule_ids_of_fragment(fragment: tuple) -> tuple[str, ...]:
    if fragment[0] != "rule":
        return ()
    ids: tuple[str, ...] = (fragment[1],)
    for slot in fragment[2:]:
        ids += derivation_rule_ids_of_fragment(slot)
    return ids


# ---------------------------------------------------------------------------
# Semantic triples and analysis ranking


class TripleModel:
    def __init__(self, counts: Optional[Mapping[tuple[str, str, str], tuple[int, int]]] = None):
        self.counts: dict[tuple[str, str, str], tuple[int, int]] = dict(counts or {})
        for good, bad in self.counts.values():
            if good < 0 or bad < 0:
                raise ValueError("triple counts must be non-negative")

    @property
    def mass(self) -> int:
        return sum(g + b for g, b in self.counts.values())

    def log_ratio(self, triple: tuple[str, str, str]) -> float:
        import math
        good, bad = self.counts.get(triple, (0, 0))
        return math.log((good + 1) / (bad + 1))

    def scaled(self, factor: int) -> "TripleModel":
        return TripleModel({t: (g * factor, b * factor) for t, (g, b) in self.counts.items()})


def extract_triples(term: qlf.Term) -> Counter:
    """(head sense, relation label, modifier sense) multiset of a term."""
    triples: Counter = Counter()
    if isinstance(term, qlf.Apply):
        for label, sub in term.args:
            mod = qlf.head_sense(sub)
            if mod is not None:
                triples[(term.functor.sense, label, mod.sense)] += 1
            triples.update(extract_triples(sub))
    return triples


def rank_analyses(analyses: Sequence[Constituent], model: TripleModel) -> list[Constituent]:
    """Order analyses by smoothed triple preference, best first.

    Ties break toward smaller derivations, then lexicographically smaller rule
    id sequences; the sort is stable so fully tied analyses keep input order.
    """
    spans = {c.span for c in analyses}
    if len(spans) > 1:
        raise ValueError(f"analyses must share a span, found {sorted(spans)}")
    norm = model.mass or 1

    def score(cons: Constituent) -> float:
        raw = sum(model.log_ratio(t) * n for t, n in extract_triples(cons.qlf).items())
        return raw / norm

    return sorted(analyses, key=lambda c: (-score(c), derivation_size(c.derivation),
                                           derivation_rule_ids(c.derivation)))
