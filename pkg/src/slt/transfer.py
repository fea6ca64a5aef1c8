"""Cross-language rewriting of semantic terms, target-string generation, and
composition of rule sets through a pivot language.

Rule sets are immutable after loading; :func:`transfer` and :func:`generate`
are pure in their inputs and safe to run concurrently.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional

from . import qlf
from .grammar import Grammar, chart_parse, invert_template
from .lexicon import LexEntry, LoadedLexicon

LEVELS = ("lex_simple", "semi_lex", "structural")
_PRIORITY = {"lex_simple": 0, "semi_lex": 1, "structural": 2}


class TransferError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class TransferRule:
    pair: tuple[str, str]
    level: str
    lhs: qlf.Term
    rhs: qlf.Term
    name: str = ""

    def __post_init__(self) -> None:
        if self.level not in LEVELS:
            raise TransferError(f"unknown rule level {self.level!r}")
        missing = qlf.variables(self.rhs) - qlf.variables(self.lhs)
        if missing:
            raise TransferError(
                f"rule {self.name or qlf.format_term(self.lhs)}: right side uses "
                f"unbound variable {sorted(missing)[0]!r}")
        if self.level == "lex_simple":
            if not (isinstance(self.lhs, qlf.SenseConst) and isinstance(self.rhs, qlf.SenseConst)):
                raise TransferError("lex_simple rules must map sense to sense")

    @property
    def priority(self) -> int:
        return _PRIORITY[self.level]


@dataclass(frozen=True)
class BlockDeclaration:
    source: str = "*"
    pivot: str = "*"
    target: str = "*"

    def __post_init__(self) -> None:
        if self.source == self.pivot == self.target == "*":
            raise TransferError("block declarations need at least one concrete sense")

    def matches(self, triple: tuple[Optional[str], Optional[str], Optional[str]]) -> bool:
        for want, have in zip((self.source, self.pivot, self.target), triple):
            if want != "*" and want != have:
                return False
        return True


class TransferRuleSet:
    """Rules for one language pair, ordered structural > semi_lex > lex_simple,
    then by declaration order."""

    def __init__(self, pair: tuple[str, str], rules: Iterable[TransferRule]):
        self.pair = pair
        rules = list(rules)
        for rule in rules:
            if rule.pair != pair:
                raise TransferError(f"rule pair {rule.pair} does not match set pair {pair}")
        self.rules = sorted(rules, key=lambda r: -r.priority)
        # sorted() is stable, so declaration order survives within a level

    def __len__(self) -> int:
        return len(self.rules)

    def __iter__(self):
        return iter(self.rules)


# ---------------------------------------------------------------------------
# Transfer


def transfer(term: qlf.Term, rules: TransferRuleSet, *,
             preferences: Optional[Mapping[tuple[str, str], int]] = None,
             cancel: Optional[Callable[[], bool]] = None) -> list[qlf.Term]:
    """All complete rewrites of ``term`` into the target language.

    Rewriting is topmost-first: at each subterm only the highest-priority
    matching rules apply, and marked bindings are transferred recursively.
    An application term no rule claims is rewritten componentwise. Results
    still containing source-language senses are discarded; an empty list
    signals transfer failure for this term.
    """
    src, _ = rules.pair
    memo: dict[qlf.Term, tuple[qlf.Term, ...]] = {}

    def rewrite(node: qlf.Term) -> tuple[qlf.Term, ...]:
        if cancel is not None and cancel():
            from .grammar import ParseCancelled
            raise ParseCancelled()
        cached = memo.get(node)
        if cached is not None:
            return cached
        if isinstance(node, qlf.Literal):
            memo[node] = (node,)
            return (node,)
        results: list[qlf.Term] = []
        matches = []
        for rule in rules:
            marked: set[str] = set()
            bindings = qlf.match(rule.lhs, node, {}, marked)
            if bindings is not None:
                matches.append((rule, bindings, marked))
        if matches:
            top = max(r.priority for r, _, _ in matches)
            for rule, bindings, marked in matches:
                if rule.priority != top:
                    continue
                results.extend(_instantiate(rule.rhs, bindings, marked, rewrite))
        elif isinstance(node, qlf.Apply):
            functor_alts = rewrite(node.functor)
            arg_alts = [[(label, alt) for alt in rewrite(sub)] for label, sub in node.args]
            for functor in functor_alts:
                for combo in itertools.product(*arg_alts):
                    merged = _apply_functor(functor, combo)
                    if merged is not None:
                        results.append(merged)
        deduped = tuple(dict.fromkeys(results))
        memo[node] = deduped
        return deduped

    out = [t for t in rewrite(term)
           if qlf.is_ground(t) and not qlf.contains_language(t, src)]
    out = sorted(set(out), key=qlf.format_term)
    if preferences:
        root = qlf.head_sense(term)

        def pref(result: qlf.Term) -> int:
            if root is None:
                return 0
            return sum(preferences.get((root.sense, s.sense), 0)
                       for s in qlf.iter_senses(result))

        out.sort(key=lambda t: (-pref(t), qlf.format_term(t)))
    return out


def _instantiate(rhs: qlf.Term, bindings: dict[str, qlf.Term], marked: set[str],
                 rewrite: Callable[[qlf.Term], tuple[qlf.Term, ...]]) -> list[qlf.Term]:
    alternatives: list[list[tuple[str, qlf.Term]]] = []
    for name, bound in sorted(bindings.items()):
        if name in marked:
            alternatives.append([(name, t) for t in rewrite(bound)])
        else:
            alternatives.append([(name, bound)])
    out = []
    for combo in itertools.product(*alternatives):
        out.append(qlf.substitute(rhs, dict(combo)))
    return out


def _apply_functor(functor: qlf.Term, args: tuple[tuple[str, qlf.Term], ...]
                   ) -> Optional[qlf.Term]:
    if isinstance(functor, qlf.SenseConst):
        return qlf.Apply(functor, args)
    if isinstance(functor, qlf.Apply):
        merged = functor.arg_map()
        for label, sub in args:
            if label in merged:
                return None
            merged[label] = sub
        return qlf.Apply(functor.functor, tuple(merged.items()))
    return None


# ---------------------------------------------------------------------------
# Generation


def generate(term: qlf.Term, grammar: Grammar, lexicon: LoadedLexicon, *,
             length_limit: int = 12,
             root_symbols: Optional[Iterable[str]] = None,
             cancel: Optional[Callable[[], bool]] = None) -> list[tuple[str, ...]]:
    """Token sequences whose full parse yields exactly ``term``.

    Candidates are proposed top-down by inverting the semantics templates and
    then verified by parsing, so the contract holds even for daughters whose
    meaning a template discards. Results are capped at ``length_limit`` tokens.
    """
    if not qlf.is_ground(term):
        raise ValueError("generation goals must be ground terms")
    entries_by_symbol: dict[str, list[LexEntry]] = {}
    for entry in lexicon.entries:
        macro = grammar.macros.get(entry.behavior)
        if macro is not None:
            entries_by_symbol.setdefault(macro.symbol, []).append(entry)
    rules_by_symbol: dict[str, list] = {}
    for rule in grammar.rules:
        rules_by_symbol.setdefault(rule.mother.symbol, []).append(rule)

    memo: dict[tuple[str, qlf.Term], set[tuple[str, ...]]] = {}

    def realize(symbol: str, goal: qlf.Term, depth: int) -> set[tuple[str, ...]]:
        if cancel is not None and cancel():
            from .grammar import ParseCancelled
            raise ParseCancelled()
        if depth > 24:
            return set()
        key = (symbol, goal)
        if key in memo:
            return memo[key]
        memo[key] = set()  # cycle cut; non-shrinking recursion yields nothing
        found: set[tuple[str, ...]] = set()
        if isinstance(goal, qlf.SenseConst):
            for entry in entries_by_symbol.get(symbol, ()):
                if entry.sense.id == goal.sense and entry.sense.language == goal.language:
                    found.add(entry.surface)
        for rule in rules_by_symbol.get(symbol, ()):
            for assignment in invert_template(rule.sem, goal):
                parts: list[set[tuple[str, ...]]] = []
                feasible = True
                for index, daughter in enumerate(rule.daughters):
                    if index in assignment:
                        sub = realize(daughter.symbol, assignment[index], depth + 1)
                    else:
                        # semantically unconstrained daughter: lexical fillers only
                        sub = {e.surface for e in entries_by_symbol.get(daughter.symbol, ())}
                    if not sub:
                        feasible = False
                        break
                    parts.append(sub)
                if not feasible:
                    continue
                for combo in itertools.product(*parts):
                    tokens = tuple(itertools.chain.from_iterable(combo))
                    if len(tokens) <= length_limit:
                        found.add(tokens)
        memo[key] = found
        return found

    roots = tuple(root_symbols) if root_symbols is not None else tuple(
        sorted(set(rules_by_symbol) | set(entries_by_symbol)))
    candidates: set[tuple[str, ...]] = set()
    for symbol in roots:
        candidates |= realize(symbol, term, 0)

    verified = []
    root_set = set(roots)
    for tokens in sorted(candidates):
        n = len(tokens)
        for cons in chart_parse(tokens, lexicon, grammar, stage="full", cancel=cancel):
            if cons.span == (0, n) and cons.symbol in root_set and cons.qlf == term:
                verified.append(tokens)
                break
    return verified


# ---------------------------------------------------------------------------
# Composition


@dataclass
class ComposeResult:
    ruleset: TransferRuleSet
    blocked: list[str] = field(default_factory=list)
    rejected: list[str] = field(default_factory=list)


def _atomic_frontier(term: qlf.Term) -> bool:
    return isinstance(term, (qlf.SenseConst, qlf.Mark))


def _retag_language(term: qlf.Term, language: str) -> qlf.Term:
    """Senses of a pattern keep their ids but belong to the side's language."""
    if isinstance(term, qlf.SenseConst):
        return qlf.SenseConst(term.sense, language)
    if isinstance(term, qlf.Apply):
        return qlf.Apply(qlf.SenseConst(term.functor.sense, language),
                         tuple((l, _retag_language(t, language)) for l, t in term.args))
    return term


def compose(ab: TransferRuleSet, bc: TransferRuleSet,
            blocks: Iterable[BlockDeclaration] = ()) -> ComposeResult:
    """Join two rule sets through their shared pivot language.

    A pair of rules composes when the first rule's right side unifies with the
    second rule's left side (marks against marks). Block declarations veto
    compositions by their (source, pivot, target) root senses. Joins of two
    structural rules are attempted only when one side's frontier is a sense
    constant or a single marked variable; others are reported as rejected.
    """
    if ab.pair[1] != bc.pair[0]:
        raise TransferError(f"cannot compose {ab.pair} with {bc.pair}: pivot mismatch")
    pair = (ab.pair[0], bc.pair[1])
    blocks = list(blocks)
    out: list[TransferRule] = []
    seen: set[tuple] = set()
    result = ComposeResult(TransferRuleSet(pair, ()))
    for r1 in ab:
        for r2 in bc:
            label = f"{r1.name or qlf.format_term(r1.lhs)} o {r2.name or qlf.format_term(r2.lhs)}"
            lhs1 = qlf.rename_apart(r1.lhs, "@1")
            rhs1 = qlf.rename_apart(r1.rhs, "@1")
            lhs2 = qlf.rename_apart(_retag_language(r2.lhs, ab.pair[1]), "@2")
            rhs2 = qlf.rename_apart(r2.rhs, "@2")
            bindings = qlf.unify_patterns(rhs1, lhs2, {})
            if bindings is None:
                continue
            resolved = _resolve_bindings(bindings)
            if r1.level == "structural" and r2.level == "structural":
                # the automatic stage is bounded to decidable joins: every
                # frontier meeting point must be a sense constant or a marked
                # variable, never a plain variable capturing structure
                deep = any(isinstance(v, qlf.Apply) for v in resolved.values())
                if deep and not (_atomic_frontier(r1.rhs) or _atomic_frontier(r2.lhs)):
                    result.rejected.append(
                        f"{label}: structural join binds a variable to structure "
                        f"at the frontier")
                    continue
            new_lhs = qlf.substitute(lhs1, resolved)
            new_rhs = qlf.substitute(rhs2, resolved)
            triple = (_sense_of(new_lhs), _sense_of(rhs1), _sense_of(new_rhs))
            block = next((b for b in blocks if b.matches(triple)), None)
            if block is not None:
                result.blocked.append(
                    f"{label}: blocked by ({block.source}, {block.pivot}, {block.target})")
                continue
            level = max(r1.level, r2.level, key=lambda lv: _PRIORITY[lv])
            new_lhs = _strip_suffix(new_lhs)
            new_rhs = _strip_suffix(new_rhs)
            key = (new_lhs, new_rhs, level)
            if key in seen:
                continue
            seen.add(key)
            out.append(TransferRule(pair, level, new_lhs, new_rhs, name=label))
    result.ruleset = TransferRuleSet(pair, out)
    return result


def _sense_of(term: qlf.Term) -> Optional[str]:
    head = qlf.head_sense(term)
    return head.sense if head is not None else None


def _resolve_bindings(bindings: dict[str, qlf.Term]) -> dict[str, qlf.Term]:
    resolved = dict(bindings)
    for _ in range(len(resolved) + 1):
        changed = False
        for name, term in resolved.items():
            new = qlf.substitute(term, resolved)
            if new != term:
                resolved[name] = new
                changed = True
        if not changed:
            break
    return resolved


def _strip_suffix(term: qlf.Term) -> qlf.Term:
    """Drop the rename-apart suffixes from surviving variables."""
    if isinstance(term, qlf.QVar):
        return qlf.QVar(term.name.split("@", 1)[0])
    if isinstance(term, qlf.Mark):
        return qlf.Mark(qlf.QVar(term.var.name.split("@", 1)[0]))
    if isinstance(term, qlf.Apply):
        return qlf.Apply(term.functor, tuple((l, _strip_suffix(t)) for l, t in term.args))
    return term


# ---------------------------------------------------------------------------
# Rule file format


@dataclass
class TransferRulesFile:
    rulesets: dict[tuple[str, str], TransferRuleSet]
    blocks: list[BlockDeclaration]

    def pair(self, pair: tuple[str, str]) -> TransferRuleSet:
        if pair not in self.rulesets:
            raise TransferError(f"no rules for language pair {pair}")
        return self.rulesets[pair]


def load_transfer_rules(path: str) -> TransferRulesFile:
    """Load ``trule`` and ``block`` declarations from a rule file."""
    by_pair: dict[tuple[str, str], list[TransferRule]] = {}
    blocks: list[BlockDeclaration] = []
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split(None, 1)
            try:
                if fields[0] == "trule":
                    parts = fields[1].split(None, 3)
                    if len(parts) != 4 or "==" not in parts[3]:
                        raise TransferError(
                            "trule takes <src> <tgt> <level> <lhs> == <rhs>")
                    src, tgt, level, body = parts
                    lhs_text, rhs_text = body.split("==", 1)
                    rule = TransferRule(
                        (src, tgt), level,
                        qlf.parse_term(lhs_text.strip(), src),
                        qlf.parse_term(rhs_text.strip(), tgt),
                        name=f"{src}-{tgt}:{lineno}")
                    by_pair.setdefault((src, tgt), []).append(rule)
                elif fields[0] == "block":
                    parts = fields[1].split()
                    if len(parts) != 3:
                        raise TransferError("block takes <src> <pivot> <tgt>")
                    blocks.append(BlockDeclaration(*parts))
                else:
                    raise TransferError(f"unknown declaration {fields[0]!r}")
            except (TransferError, qlf.QLFError) as exc:
                if isinstance(exc, TransferError) and exc.line is not None:
                    raise
                raise TransferError(str(exc), lineno) from None
    rulesets = {pair: TransferRuleSet(pair, rules) for pair, rules in by_pair.items()}
    return TransferRulesFile(rulesets, blocks)
