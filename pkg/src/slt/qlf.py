"""Term algebra for the shallow semantic forms passed between parsing, transfer
and generation.

Terms are immutable. ``Apply`` keeps its labelled arguments sorted, so equality
is label-set based and independent of the order in which a grammar composed
them. Variables and transfer marks only occur inside rule patterns, never in
the semantics of a parsed constituent.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional, Union


class QLFError(ValueError):
    """Malformed term, pattern or pattern source text."""


@dataclass(frozen=True, order=True)
class SenseConst:
    sense: str
    language: str


@dataclass(frozen=True, order=True)
class QVar:
    name: str


@dataclass(frozen=True, order=True)
class Literal:
    text: str


@dataclass(frozen=True, order=True)
class Mark:
    """Pattern wrapper: the binding of ``var`` is transferred recursively."""

    var: QVar


@dataclass(frozen=True, order=True)
class Apply:
    functor: SenseConst
    args: tuple[tuple[str, "Term"], ...] = field(default=())

    def __post_init__(self) -> None:
        if not self.args:
            raise QLFError("application terms need at least one argument")
        labels = [label for label, _ in self.args]
        if len(set(labels)) != len(labels):
            raise QLFError(f"duplicate argument labels in {labels}")
        ordered = tuple(sorted(self.args, key=lambda kv: kv[0]))
        object.__setattr__(self, "args", ordered)

    def arg_map(self) -> dict[str, "Term"]:
        return dict(self.args)


Term = Union[SenseConst, QVar, Literal, Mark, Apply]


def head_sense(term: Term) -> Optional[SenseConst]:
    if isinstance(term, SenseConst):
        return term
    if isinstance(term, Apply):
        return term.functor
    return None


def iter_senses(term: Term) -> Iterator[SenseConst]:
    if isinstance(term, SenseConst):
        yield term
    elif isinstance(term, Apply):
        yield term.functor
        for _, sub in term.args:
            yield from iter_senses(sub)
    elif isinstance(term, Mark):
        yield from iter_senses(term.var)  # pragma: no cover - vars carry no senses


def contains_language(term: Term, language: str) -> bool:
    return any(s.language == language for s in iter_senses(term))


def is_ground(term: Term) -> bool:
    if isinstance(term, (QVar, Mark)):
        return False
    if isinstance(term, Apply):
        return all(is_ground(sub) for _, sub in term.args)
    return True


def variables(term: Term) -> set[str]:
    if isinstance(term, QVar):
        return {term.name}
    if isinstance(term, Mark):
        return {term.var.name}
    if isinstance(term, Apply):
        out: set[str] = set()
        for _, sub in term.args:
            out |= variables(sub)
        return out
    return set()


def substitute(term: Term, binding: Mapping[str, Term]) -> Term:
    if isinstance(term, QVar):
        return binding.get(term.name, term)
    if isinstance(term, Mark):
        bound = binding.get(term.var.name)
        if bound is None:
            return term
        if isinstance(bound, QVar):
            return Mark(bound)
        return bound
    if isinstance(term, Apply):
        return Apply(term.functor, tuple((l, substitute(t, binding)) for l, t in term.args))
    return term


def match(pattern: Term, term: Term, bindings: Optional[dict[str, Term]] = None,
          marked: Optional[set[str]] = None) -> Optional[dict[str, Term]]:
    """One-way match of a rule pattern against a ground term.

    Marked variables record their names in ``marked`` so the caller can
    transfer those bindings recursively. Returns the bindings or None.
    """
    if bindings is None:
        bindings = {}
    if isinstance(pattern, Mark):
        if marked is not None:
            marked.add(pattern.var.name)
        pattern = pattern.var
    if isinstance(pattern, QVar):
        seen = bindings.get(pattern.name)
        if seen is None:
            bindings[pattern.name] = term
            return bindings
        return bindings if seen == term else None
    if isinstance(pattern, SenseConst):
        return bindings if pattern == term else None
    if isinstance(pattern, Literal):
        return bindings if pattern == term else None
    if isinstance(pattern, Apply):
        if not isinstance(term, Apply) or pattern.functor != term.functor:
            return None
        pat_args, term_args = pattern.arg_map(), term.arg_map()
        if set(pat_args) != set(term_args):
            return None
        for label, sub in pat_args.items():
            if match(sub, term_args[label], bindings, marked) is None:
                return None
        return bindings
    raise QLFError(f"unmatchable pattern {pattern!r}")  # pragma: no cover


def _resolve(term: Term, bindings: dict[str, Term]) -> Term:
    while isinstance(term, QVar) and term.name in bindings:
        term = bindings[term.name]
    return term


def unify_patterns(a: Term, b: Term, bindings: Optional[dict[str, Term]] = None
                   ) -> Optional[dict[str, Term]]:
    """Two-way unification of rule patterns.

    Marks unify only with marks (their variables are aliased); plain variables
    bind to anything. Callers must rename the two sides apart first.
    """
    if bindings is None:
        bindings = {}
    if isinstance(a, Mark) or isinstance(b, Mark):
        if not (isinstance(a, Mark) and isinstance(b, Mark)):
            return None
        return unify_patterns(a.var, b.var, bindings)
    a = _resolve(a, bindings)
    b = _resolve(b, bindings)
    if isinstance(a, QVar):
        if a != b:
            bindings[a.name] = b
        return bindings
    if isinstance(b, QVar):
        bindings[b.name] = a
        return bindings
    if isinstance(a, (SenseConst, Literal)) or isinstance(b, (SenseConst, Literal)):
        return bindings if a == b else None
    assert isinstance(a, Apply) and isinstance(b, Apply)
    if a.functor != b.functor:
        return None
    a_args, b_args = a.arg_map(), b.arg_map()
    if set(a_args) != set(b_args):
        return None
    for label, sub in a_args.items():
        if unify_patterns(sub, b_args[label], bindings) is None:
            return None
    return bindings


def rename_apart(term: Term, suffix: str) -> Term:
    if isinstance(term, QVar):
        return QVar(term.name + suffix)
    if isinstance(term, Mark):
        return Mark(QVar(term.var.name + suffix))
    if isinstance(term, Apply):
        return Apply(term.functor, tuple((l, rename_apart(t, suffix)) for l, t in term.args))
    return term


def format_term(term: Term) -> str:
    if isinstance(term, SenseConst):
        return term.sense
    if isinstance(term, QVar):
        return term.name
    if isinstance(term, Literal):
        return f"'{term.text}'"
    if isinstance(term, Mark):
        return f"tr({term.var.name})"
    if isinstance(term, Apply):
        inner = ", ".join(f"{l}={format_term(t)}" for l, t in term.args)
        return f"{format_term(term.functor)}({inner})"
    raise QLFError(f"unknown term {term!r}")  # pragma: no cover


_TOKEN_RE = re.compile(r"\s*([A-Za-z0-9_'’.\-]+|[(),=]|'[^']*')")


def _tokenize(text: str) -> list[str]:
    tokens: list[str] = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        if text[pos] == "'":
            end = text.find("'", pos + 1)
            if end < 0:
                raise QLFError(f"unterminated literal in {text!r}")
            tokens.append(text[pos:end + 1])
            pos = end + 1
            continue
        m = re.match(r"[(),=]", text[pos:])
        if m:
            tokens.append(m.group(0))
            pos += 1
            continue
        m = re.match(r"[A-Za-z0-9_'’.\-]+", text[pos:])
        if not m:
            raise QLFError(f"cannot tokenize {text[pos:]!r}")
        tokens.append(m.group(0))
        pos += m.end()
    return tokens


def _is_variable(name: str) -> bool:
    return name[0].isupper() and "_" not in name


class _Parser:
    def __init__(self, tokens: list[str], language: str):
        self.tokens = tokens
        self.language = language
        self.pos = 0

    def peek(self) -> Optional[str]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self, expected: Optional[str] = None) -> str:
        tok = self.peek()
        if tok is None:
            raise QLFError("unexpected end of pattern")
        if expected is not None and tok != expected:
            raise QLFError(f"expected {expected!r}, found {tok!r}")
        self.pos += 1
        return tok

    def parse(self) -> Term:
        term = self.term()
        if self.peek() is not None:
            raise QLFError(f"trailing input after term: {self.tokens[self.pos:]}")
        return term

    def term(self) -> Term:
        tok = self.take()
        if tok.startswith("'"):
            return Literal(tok[1:-1])
        if tok == "tr":
            self.take("(")
            name = self.take()
            if not _is_variable(name):
                raise QLFError(f"tr() must wrap a variable, found {name!r}")
            self.take(")")
            return Mark(QVar(name))
        if _is_variable(tok):
            return QVar(tok)
        if self.peek() == "(":
            self.take("(")
            args: list[tuple[str, Term]] = []
            while True:
                label = self.take()
                self.take("=")
                args.append((label, self.term()))
                if self.peek() == ",":
                    self.take(",")
                    continue
                self.take(")")
                break
            return Apply(SenseConst(tok, self.language), tuple(args))
        return SenseConst(tok, self.language)


def parse_term(text: str, language: str) -> Term:
    """Parse a pattern such as ``show_Show(obj=tr(X), polite=please_Please)``.

    Uppercase identifiers without underscores are variables; ``tr(X)`` marks a
    variable for recursive transfer; single-quoted text is a literal.
    """
    tokens = _tokenize(text)
    if not tokens:
        raise QLFError("empty term")
    return _Parser(tokens, language).parse()
