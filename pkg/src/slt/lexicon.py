"""Word-level knowledge: sense lexicon, phrase glossary and the tag model used
for lexical-stage filtering.

Everything loaded here is immutable after :func:`load_lexicon` returns and can
be shared freely between concurrent translation sessions.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

DEFAULT_OPEN_CLASS = ("noun", "verb", "adjective")
START_TAG = "<s>"


class LexiconError(ValueError):
    """Raised for malformed lexicon files and invariant violations."""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True, order=True)
class Sense:
    id: str
    language: str


@dataclass(frozen=True, order=True)
class LexEntry:
    surface: tuple[str, ...]
    behavior: str
    sense: Sense
    tag: str


@dataclass(frozen=True, order=True)
class GlossaryEntry:
    source: tuple[str, ...]
    target: tuple[str, ...]
    pair: tuple[str, str]


class TagModel:
    """Bigram part-of-speech model with add-one smoothing.

    ``unigram`` holds per-tag emission mass (the sum of the word/tag counts),
    ``bigram`` the transition counts. The pseudo-tag ``<s>`` may appear as a
    transition context but is never emitted or predicted.
    """

    def __init__(self, tags: Iterable[str],
                 unigram: dict[str, int],
                 bigram: dict[tuple[str, str], int],
                 lexical_tags: dict[str, dict[str, int]]):
        self.tags = frozenset(tags)
        self.unigram = dict(unigram)
        self.bigram = dict(bigram)
        self.lexical_tags = {w: dict(tc) for w, tc in lexical_tags.items()}
        self._validate()
        self._vocab_size = len(self.lexical_tags)
        self._out_mass = {}
        for (t1, _), n in self.bigram.items():
            self._out_mass[t1] = self._out_mass.get(t1, 0) + n

    def _validate(self) -> None:
        for n in self.unigram.values():
            if n < 0:
                raise LexiconError("negative unigram count")
        for (t1, t2), n in self.bigram.items():
            if n < 0:
                raise LexiconError("negative bigram count")
            if t1 not in self.tags or t2 not in self.tags:
                raise LexiconError(f"bigram tag pair ({t1}, {t2}) not in tag set")
        for word, tc in self.lexical_tags.items():
            for tag, n in tc.items():
                if n < 0:
                    raise LexiconError(f"negative count for {word}/{tag}")
                if tag not in self.tags:
                    raise LexiconError(f"word tag {tag} not in tag set")

    def __bool__(self) -> bool:
        return bool(self.tags - {START_TAG})

    @property
    def emit_tags(self) -> frozenset[str]:
        return self.tags - {START_TAG}

    def transition_logp(self, prev: str, tag: str) -> float:
        count = self.bigram.get((prev, tag), 0)
        total = self._out_mass.get(prev, 0)
        return math.log((count + 1) / (total + len(self.tags)))

    def emission_logp(self, word: str, tag: str) -> float:
        count = self.lexical_tags.get(word, {}).get(tag, 0)
        total = self.unigram.get(tag, 0)
        return math.log((count + 1) / (total + self._vocab_size + 1))

    def candidate_tags(self, word: str, open_class: Sequence[str]) -> tuple[str, ...]:
        known = self.lexical_tags.get(word)
        if known:
            return tuple(sorted(known))
        fallback = tuple(t for t in sorted(open_class) if t in self.emit_tags)
        return fallback or tuple(sorted(self.emit_tags))


class LoadedLexicon(NamedTuple):
    entries: tuple[LexEntry, ...]
    glossary: tuple[GlossaryEntry, ...]
    tag_model: TagModel


@dataclass(frozen=True)
class GlossSegment:
    span: tuple[int, int]
    source: tuple[str, ...]
    target: tuple[str, ...]
    matched: bool


def glossary_lookup(tokens: Sequence[str], pair: tuple[str, str],
                    glossary: Iterable[GlossaryEntry]) -> list[GlossSegment]:
    """Greedy longest-match segmentation, left to right.

    Every input token is covered exactly once; tokens with no glossary match
    are passed through unchanged with ``matched=False``. When several entries
    share the longest source phrase the smallest target phrase is used, which
    keeps the result independent of glossary declaration order.
    """
    if not tokens:
        raise ValueError("glossary_lookup requires a non-empty token sequence")
    by_source: dict[tuple[str, ...], list[tuple[str, ...]]] = {}
    max_len = 1
    for entry in glossary:
        if entry.pair != pair:
            continue
        by_source.setdefault(entry.source, []).append(entry.target)
        max_len = max(max_len, len(entry.source))
    out: list[GlossSegment] = []
    i = 0
    n = len(tokens)
    while i < n:
        found = None
        for length in range(min(max_len, n - i), 0, -1):
            phrase = tuple(tokens[i:i + length])
            targets = by_source.get(phrase)
            if targets:
                found = (length, min(targets))
                break
        if found is None:
            out.append(GlossSegment((i, i + 1), (tokens[i],), (tokens[i],), False))
            i += 1
        else:
            length, target = found
            out.append(GlossSegment((i, i + length), tuple(tokens[i:i + length]), target, True))
            i += length
    return out


def tag_score(tokens: Sequence[str], model: TagModel,
              open_class: Sequence[str] = DEFAULT_OPEN_CLASS) -> tuple[tuple[str, ...], float]:
    """Best tag sequence and its log score under the smoothed bigram model.

    Ties are broken toward the lexicographically smaller tag sequence. Unknown
    tokens fall back to the open-class tag subset, so the function is total.
    """
    if not model:
        raise ValueError("tag_score requires a non-empty tag model")
    if not tokens:
        return (), 0.0
    # Viterbi lattice: (score, tag sequence) per current tag; sequence order
    # only decides exact ties.
    states: dict[str, tuple[float, tuple[str, ...]]] = {START_TAG: (0.0, ())}
    for word in tokens:
        nxt: dict[str, tuple[float, tuple[str, ...]]] = {}
        for tag in model.candidate_tags(word, open_class):
            emit = model.emission_logp(word, tag)
            best: Optional[tuple[float, tuple[str, ...]]] = None
            for prev, (score, seq) in states.items():
                cand = (score + model.transition_logp(prev, tag) + emit, seq + (tag,))
                if best is None or cand[0] > best[0] or (cand[0] == best[0] and cand[1] < best[1]):
                    best = cand
            assert best is not None
            nxt[tag] = best
        states = nxt
    score = max(sv[0] for sv in states.values())
    seq = min(sv[1] for sv in states.values() if sv[0] == score)
    return seq, score


class LexicalChoice(NamedTuple):
    kept: tuple[int, ...]
    tags: tuple[str, ...]
    score: float
    skipped: tuple[int, ...]


def viterbi_with_skips(tokens: Sequence[str], model: TagModel,
                       deletion_cost: float = 2.0,
                       open_class: Sequence[str] = DEFAULT_OPEN_CLASS) -> LexicalChoice:
    """Joint choice of token deletions and tagging.

    Each skipped token costs ``deletion_cost`` log units; the returned score is
    the tag score of the kept subsequence minus the skip penalties. At least
    one token is always kept, and only tokens the model knows may be skipped:
    deletion needs lexical evidence against a token, and an unknown token
    carries none.
    """
    if not model:
        raise ValueError("viterbi_with_skips requires a non-empty tag model")
    if not tokens:
        raise ValueError("viterbi_with_skips requires tokens")
    # state: last tag (START_TAG while nothing kept) -> (score, kept, tags)
    states: dict[str, tuple[float, tuple[int, ...], tuple[str, ...]]] = {
        START_TAG: (0.0, (), ())}
    for i, word in enumerate(tokens):
        nxt: dict[str, tuple[float, tuple[int, ...], tuple[str, ...]]] = {}

        def offer(tag: str, cand: tuple[float, tuple[int, ...], tuple[str, ...]]) -> None:
            cur = nxt.get(tag)
            if cur is None or cand[0] > cur[0] or (cand[0] == cur[0] and cand[1:] < cur[1:]):
                nxt[tag] = cand

        for prev, (score, kept, tags) in states.items():
            if word in model.lexical_tags:
                offer(prev, (score - deletion_cost, kept, tags))  # skip token i
            for tag in model.candidate_tags(word, open_class):
                gain = model.transition_logp(prev, tag) + model.emission_logp(word, tag)
                offer(tag, (score + gain, kept + (i,), tags + (tag,)))
        states = nxt
    finals = [v for k, v in states.items() if k != START_TAG]
    if not finals:
        # single-token inputs cannot delete their only token
        raise ValueError("no kept-token path")  # pragma: no cover
    score = max(v[0] for v in finals)
    winners = [v for v in finals if v[0] == score]
    _, kept, tags = min(winners, key=lambda v: (len(tokens) - len(v[1]), v[1], v[2]))
    skipped = tuple(i for i in range(len(tokens)) if i not in set(kept))
    return LexicalChoice(kept, tags, score, skipped)


def load_lexicon(path: str, language: str = "eng", *,
                 known_behaviors: Optional[Iterable[str]] = None,
                 languages: Optional[Iterable[str]] = None) -> LoadedLexicon:
    """Load ``lex`` / ``gloss`` / ``tagcount`` / ``wordtag`` declarations.

    ``language`` tags the senses of the ``lex`` entries. When
    ``known_behaviors`` is given, entries naming other behaviours are
    rejected; when ``languages`` is given, glossary language codes outside it
    are rejected.
    """
    behaviors = set(known_behaviors) if known_behaviors is not None else None
    langset = set(languages) if languages is not None else None
    if langset is not None:
        langset.add(language)
    entries: list[LexEntry] = []
    seen_entries: set[tuple] = set()
    glossary: list[GlossaryEntry] = []
    seen_gloss: set[tuple] = set()
    tags: set[str] = set()
    unigram: dict[str, int] = {}
    bigram: dict[tuple[str, str], int] = {}
    lexical: dict[str, dict[str, int]] = {}

    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = _split_declaration(line, lineno)
            kind, rest = fields[0], fields[1:]
            if kind == "lex":
                if len(rest) != 4:
                    raise LexiconError("lex takes <surface> <behavior> <sense> <tag>", lineno)
                surface, behavior, sense_id, tag = rest
                if behaviors is not None and behavior not in behaviors:
                    raise LexiconError(f"unknown behavior {behavior!r}", lineno)
                entry = LexEntry(tuple(surface.split()), behavior, Sense(sense_id, language), tag)
                key = (entry.surface, entry.behavior, entry.sense)
                if key in seen_entries:
                    raise LexiconError(f"duplicate lexicon entry for {surface!r}", lineno)
                seen_entries.add(key)
                entries.append(entry)
                tags.add(tag)
            elif kind == "gloss":
                if len(rest) != 4:
                    raise LexiconError('gloss takes <src> <tgt> "<src phrase>" "<tgt phrase>"', lineno)
                src_lang, tgt_lang, src_phrase, tgt_phrase = rest
                if langset is not None and (src_lang not in langset or tgt_lang not in langset):
                    bad = src_lang if src_lang not in langset else tgt_lang
                    raise LexiconError(f"unknown language code {bad!r}", lineno)
                source = tuple(src_phrase.split())
                if not source:
                    raise LexiconError("empty glossary source phrase", lineno)
                entry = GlossaryEntry(source, tuple(tgt_phrase.split()), (src_lang, tgt_lang))
                key = (entry.source, entry.target, entry.pair)
                if key in seen_gloss:
                    raise LexiconError(f"duplicate glossary entry for {src_phrase!r}", lineno)
                seen_gloss.add(key)
                glossary.append(entry)
            elif kind == "tagcount":
                if len(rest) != 3:
                    raise LexiconError("tagcount takes <tag> <tag> <n>", lineno)
                t1, t2, n = rest
                count = _count(n, lineno)
                if (t1, t2) in bigram:
                    raise LexiconError(f"duplicate tagcount for {t1} {t2}", lineno)
                bigram[(t1, t2)] = count
                tags.update((t1, t2))
            elif kind == "wordtag":
                if len(rest) != 3:
                    raise LexiconError("wordtag takes <surface> <tag> <n>", lineno)
                word, tag, n = rest
                count = _count(n, lineno)
                if tag in lexical.get(word, {}):
                    raise LexiconError(f"duplicate wordtag for {word}/{tag}", lineno)
                lexical.setdefault(word, {})[tag] = count
                tags.add(tag)
                unigram[tag] = unigram.get(tag, 0) + count
            else:
                raise LexiconError(f"unknown declaration {kind!r}", lineno)

    model = TagModel(tags, unigram, bigram, lexical)
    return LoadedLexicon(tuple(entries), tuple(glossary), model)


_FIELD_RE = re.compile(r'"[^"]*"|\S+')


def _split_declaration(line: str, lineno: int) -> list[str]:
    """Whitespace-split honoring double-quoted phrases; ``#`` starts a comment."""
    fields: list[str] = []
    for match in _FIELD_RE.finditer(line):
        token = match.group(0)
        if token.startswith("#"):
            break
        if token.startswith('"'):
            if not token.endswith('"') or len(token) < 2:
                raise LexiconError("unterminated quoted phrase", lineno)
            token = token[1:-1]
        fields.append(token)
    return fields


def _count(text: str, lineno: int) -> int:
    try:
        value = int(text)
    except ValueError:
        raise LexiconError(f"count {text!r} is not an integer", lineno)
    if value < 0:
        raise LexiconError("counts must be non-negative", lineno)
    return value
