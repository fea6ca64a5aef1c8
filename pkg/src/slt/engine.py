"""Multi-engine translation orchestrator.

Merges recognizer hypotheses into a source lattice, runs the four bottom-up
stages (surface, lexical, phrasal, full), accumulates target edges produced by
the glossary and semantic-transfer methods, and selects target paths. Sessions
are anytime: the latest snapshot is always a usable answer, and cancellation
or a timeout simply freezes the session at its last completed stage.
"""

from __future__ import annotations

import itertools
import math
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

from .grammar import (Constituent, Grammar, ParseCancelled, PruningRule,
                      SpecializedGrammar, TripleModel, full_parse, phrasal_parse,
                      rank_analyses)
from .lexicon import (DEFAULT_OPEN_CLASS, LoadedLexicon, glossary_lookup,
                      tag_score, viterbi_with_skips)
from .transfer import TransferRuleSet, generate, transfer
from . import qlf

STAGES = ("surface", "lexical", "phrasal", "full")
METHOD_RANKS = {
    "surface_glossary": 0,
    "lexical_glossary": 1,
    "phrasal_qlf": 2,
    "full_qlf": 3,
}


class EngineError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


# ---------------------------------------------------------------------------
# Recognizer hypotheses and the source lattice


@dataclass(frozen=True)
class NBestList:
    utterance_id: str
    hypotheses: tuple[tuple[str, ...], ...]
    reference: Optional[tuple[str, ...]] = None

    def __post_init__(self) -> None:
        if not self.hypotheses:
            raise EngineError(f"utterance {self.utterance_id!r} has no hypotheses")
        for hyp in self.hypotheses:
            if not hyp:
                raise EngineError(f"utterance {self.utterance_id!r} has an empty hypothesis")


def parse_nbest(text: str) -> list[NBestList]:
    """Parse utterance records: ``utt <id>``, optional ``ref <tokens>``, then
    ``hyp <rank> <tokens>`` lines in rank order."""
    out: list[NBestList] = []
    current_id: Optional[str] = None
    reference: Optional[tuple[str, ...]] = None
    hyps: list[tuple[str, ...]] = []

    def flush(line: int) -> None:
        nonlocal current_id, reference, hyps
        if current_id is None:
            return
        if not hyps:
            raise EngineError(f"utterance {current_id!r} has no hypotheses", line)
        out.append(NBestList(current_id, tuple(hyps), reference))
        current_id, reference, hyps = None, None, []

    lineno = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if fields[0] == "utt":
            flush(lineno)
            if len(fields) != 2:
                raise EngineError("utt takes a single identifier", lineno)
            current_id = fields[1]
        elif fields[0] == "ref":
            if current_id is None:
                raise EngineError("ref outside an utterance record", lineno)
            reference = tuple(fields[1:])
        elif fields[0] == "hyp":
            if current_id is None:
                raise EngineError("hyp outside an utterance record", lineno)
            try:
                rank = int(fields[1])
            except (IndexError, ValueError):
                raise EngineError("hyp takes <rank> <tokens>", lineno)
            if rank != len(hyps) + 1:
                raise EngineError(
                    f"hypothesis ranks must be contiguous from 1, found {rank}", lineno)
            tokens = tuple(fields[2:])
            if not tokens:
                raise EngineError("hypothesis has no tokens", lineno)
            hyps.append(tokens)
        else:
            raise EngineError(f"unknown record {fields[0]!r}", lineno)
    flush(lineno + 1)
    return out


def load_nbest(path: str) -> list[NBestList]:
    with open(path, encoding="utf-8") as handle:
        return parse_nbest(handle.read())


@dataclass(frozen=True)
class LatticeEdge:
    id: int
    source: int
    target: int
    token: Optional[str]
    rank_prior: float
    hypotheses: frozenset[int]
    skip_of: Optional[int] = None
    deletion_cost: float = 0.0

    @property
    def is_skip(self) -> bool:
        return self.skip_of is not None


class SourceLattice:
    """Prefix-merged hypothesis lattice with optional parallel skip edges.

    Hypotheses share their common prefixes; every hypothesis is recoverable as
    a complete path and no path exists that is not a hypothesis or one of its
    skip variants.
    """

    def __init__(self, edges: Sequence[LatticeEdge], node_count: int,
                 final_nodes: frozenset[int],
                 hypothesis_edges: dict[int, tuple[int, ...]]):
        self.edges = list(edges)
        self.node_count = node_count
        self.final_nodes = final_nodes
        self._hyp_edges = dict(hypothesis_edges)
        self.by_source: dict[int, list[LatticeEdge]] = {}
        for edge in self.edges:
            self.by_source.setdefault(edge.source, []).append(edge)

    def hypothesis_edges(self, rank: int) -> tuple[LatticeEdge, ...]:
        return tuple(self.edges[i] for i in self._hyp_edges[rank])

    def paths(self, limit: int = 100_000) -> list[tuple[str, ...]]:
        """Token sequences of all complete paths (for verification)."""
        out: list[tuple[str, ...]] = []

        def walk(node: int, tokens: tuple[str, ...]) -> None:
            if len(out) > limit:
                raise EngineError("path enumeration limit exceeded")
            if node in self.final_nodes:
                out.append(tokens)
            for edge in self.by_source.get(node, ()):
                walk(edge.target, tokens if edge.token is None else tokens + (edge.token,))

        walk(0, ())
        return out

    def best_prior_tokens(self) -> tuple[str, ...]:
        """Best complete path under rank priors alone (skips only lose)."""
        best_rank = min(self._hyp_edges)
        return tuple(e.token for e in self.hypothesis_edges(best_rank) if e.token)


def build_source_lattice(nbest: NBestList, rank_penalty: float = 1.0,
                         deletion_cost: float = 2.0,
                         with_skips: bool = True) -> SourceLattice:
    """Merge the hypotheses into a prefix trie with per-edge rank priors."""
    edges: list[LatticeEdge] = []
    children: dict[tuple[int, str], int] = {}
    edge_at: dict[tuple[int, str], int] = {}
    node_count = 1
    final_nodes: set[int] = set()
    hyp_edges: dict[int, tuple[int, ...]] = {}
    for rank, hyp in enumerate(nbest.hypotheses, start=1):
        node = 0
        ids: list[int] = []
        for token in hyp:
            key = (node, token)
            if key in children:
                edge_id = edge_at[key]
                edge = edges[edge_id]
                edges[edge_id] = replace(edge, hypotheses=edge.hypotheses | {rank})
                node = children[key]
            else:
                target = node_count
                node_count += 1
                edge_id = len(edges)
                edges.append(LatticeEdge(edge_id, node, target, token,
                                         -rank_penalty * (rank - 1), frozenset({rank})))
                children[key] = target
                edge_at[key] = edge_id
                node = target
            ids.append(edge_id)
        final_nodes.add(node)
        hyp_edges[rank] = tuple(ids)
    if with_skips:
        for edge_id in range(len(edges)):
            edge = edges[edge_id]
            edges.append(LatticeEdge(len(edges), edge.source, edge.target, None,
                                     edge.rank_prior, edge.hypotheses,
                                     skip_of=edge.id, deletion_cost=deletion_cost))
    return SourceLattice(edges, node_count, frozenset(final_nodes), hyp_edges)


# ---------------------------------------------------------------------------
# Target-side bigram preferences


class TargetBigrams:
    """Add-one smoothed token bigrams from a target-language corpus."""

    def __init__(self, counts: dict[tuple[str, str], int], unigrams: dict[str, int]):
        self.counts = dict(counts)
        self.unigrams = dict(unigrams)
        self.vocab_size = len(self.unigrams)

    @classmethod
    def from_corpus(cls, lines: Iterable[str]) -> "TargetBigrams":
        counts: dict[tuple[str, str], int] = {}
        unigrams: dict[str, int] = {}
        for line in lines:
            tokens = line.split()
            for token in tokens:
                unigrams[token] = unigrams.get(token, 0) + 1
            for left, right in zip(tokens, tokens[1:]):
                counts[(left, right)] = counts.get((left, right), 0) + 1
        return cls(counts, unigrams)

    @classmethod
    def from_file(cls, path: str) -> "TargetBigrams":
        with open(path, encoding="utf-8") as handle:
            return cls.from_corpus(handle)

    def log_prob(self, left: str, right: str) -> float:
        count = self.counts.get((left, right), 0)
        return math.log((count + 1) / (self.unigrams.get(left, 0) + self.vocab_size + 1))


EMPTY_BIGRAMS = TargetBigrams({}, {})


# ---------------------------------------------------------------------------
# Target edges and path selection


@dataclass(frozen=True)
class TargetEdge:
    source_span: tuple[int, int]
    tokens: tuple[str, ...]
    method: str
    qlf_term: Optional[qlf.Term] = None

    def __post_init__(self) -> None:
        if self.method not in METHOD_RANKS:
            raise EngineError(f"unknown translation method {self.method!r}")
        if not self.tokens:
            raise EngineError("target edges need tokens (skipped source tokens "
                              "are dropped from the path instead)")

    @property
    def method_rank(self) -> int:
        return METHOD_RANKS[self.method]


@dataclass(frozen=True)
class EngineConfig:
    rank_penalty: float = 1.0
    deletion_cost: float = 2.0
    method_weight: float = 5.0
    edge_count_weight: float = 1.0
    coverage_bonus: float = 1.5
    timeout: float = 30.0
    phrasal_targets: tuple[str, ...] = ("NP",)
    open_class_tags: tuple[str, ...] = DEFAULT_OPEN_CLASS
    generation_limit: int = 12
    source_language: str = "eng"
    target_language: str = "fre"

    def __post_init__(self) -> None:
        for name in ("rank_penalty", "deletion_cost", "method_weight",
                     "edge_count_weight", "coverage_bonus"):
            if getattr(self, name) < 0:
                raise EngineError(f"{name} must be >= 0")
        if self.timeout <= 0:
            raise EngineError("timeout must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "EngineConfig":
        kwargs = dict(data)
        for key in ("phrasal_targets", "open_class_tags"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        unknown = set(kwargs) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise EngineError(f"unknown configuration keys {sorted(unknown)}")
        return cls(**kwargs)


def select_path(edges: Sequence[TargetEdge], length: int, config: EngineConfig,
                bigrams: TargetBigrams) -> tuple[list[TargetEdge], float]:
    """Best-scoring tiling of positions ``0..length`` by dynamic programming.

    score = sum(beta * method_rank) + sum(log P(bigram)) - gamma * edge_count;
    ties prefer fewer edges, then the lexicographically smaller target string.
    """
    if length <= 0:
        raise EngineError("select_path needs a non-empty source path")
    by_start: dict[int, list[TargetEdge]] = {}
    for edge in edges:
        start, end = edge.source_span
        if not (0 <= start < end <= length):
            raise EngineError(f"edge span {edge.source_span} outside 0..{length}")
        by_start.setdefault(start, []).append(edge)
    beta, gamma = config.method_weight, config.edge_count_weight

    # state: (position, last token) -> tied candidates (score, edges, tokens, path)
    Cand = tuple[float, int, tuple[str, ...], tuple[TargetEdge, ...]]
    states: dict[tuple[int, Optional[str]], list[Cand]] = {(0, None): [(0.0, 0, (), ())]}
    for position in range(length):
        for (pos, last), cands in [(k, v) for k, v in states.items() if k[0] == position]:
            for edge in by_start.get(position, ()):
                gain = beta * edge.method_rank - gamma
                prev = last
                for token in edge.tokens:
                    if prev is not None:
                        gain += bigrams.log_prob(prev, token)
                    prev = token
                key = (edge.source_span[1], prev)
                for score, count, tokens, path in cands:
                    cand: Cand = (score + gain, count + 1, tokens + edge.tokens, path + (edge,))
                    bucket = states.setdefault(key, [])
                    _offer(bucket, cand)
    finals: list[Cand] = []
    for (pos, _), cands in states.items():
        if pos == length:
            finals.extend(cands)
    if not finals:
        raise EngineError("target lattice has no complete path")
    best_score = max(c[0] for c in finals)
    tied = [c for c in finals if c[0] == best_score]
    fewest = min(c[1] for c in tied)
    tied = [c for c in tied if c[1] == fewest]
    _, _, _, path = min(tied, key=lambda c: " ".join(c[2]))
    return list(path), best_score


def _offer(bucket: list, cand: tuple) -> None:
    # dominance pruning per state: keep max score, then fewest edges; keep all
    # exact ties (they may differ in tokens, settled at the end of the DP)
    if not bucket:
        bucket.append(cand)
        return
    best = bucket[0]
    if cand[0] > best[0] or (cand[0] == best[0] and cand[1] < best[1]):
        bucket.clear()
        bucket.append(cand)
    elif cand[0] == best[0] and cand[1] == best[1] and cand not in bucket:
        bucket.append(cand)


# ---------------------------------------------------------------------------
# Sessions


@dataclass(frozen=True)
class Snapshot:
    stage: str
    source_tokens: tuple[str, ...]
    target_tokens: tuple[str, ...]
    score: float
    wall_clock: float
    edges: tuple[TargetEdge, ...] = ()

    @property
    def target_text(self) -> str:
        return " ".join(self.target_tokens)

    @property
    def source_text(self) -> str:
        return " ".join(self.source_tokens)


@dataclass(frozen=True)
class _Variant:
    rank: int
    kept_edge_ids: tuple[int, ...]
    tokens: tuple[str, ...]
    skipped: int
    base_score: float


class TranslationSession:
    """State of one utterance's translation run.

    ``snapshots`` is append-only; readers may poll :func:`current_best` from
    another thread while the engine worker advances the stages.
    """

    def __init__(self, session_id: str, nbest: NBestList, config: EngineConfig,
                 lattice: SourceLattice):
        self.id = session_id
        self.nbest = nbest
        self.config = config
        self.lattice = lattice
        self.snapshots: list[Snapshot] = []
        self.status = "running"
        self.started = time.monotonic()
        self.deadline = self.started + config.timeout
        self._cancel_event = threading.Event()
        self._edge_store: dict[tuple, None] = {}
        self._parse_cache: dict[tuple[str, ...], dict] = {}

    def cancel(self) -> None:
        """Request cancellation; idempotent, takes effect at the next
        cancellation point."""
        self._cancel_event.set()

    @property
    def cancel_requested(self) -> bool:
        return self._cancel_event.is_set()

    def interrupted(self) -> bool:
        return self._cancel_event.is_set() or time.monotonic() > self.deadline

    def elapsed(self) -> float:
        return time.monotonic() - self.started


def current_best(session: TranslationSession) -> Optional[Snapshot]:
    snapshots = session.snapshots
    return snapshots[-1] if snapshots else None


@dataclass
class EngineResources:
    source_lexicon: LoadedLexicon
    source_grammar: Grammar
    target_lexicon: LoadedLexicon
    target_grammar: Grammar
    rules: TransferRuleSet
    bigrams: TargetBigrams = EMPTY_BIGRAMS
    triple_model: TripleModel = field(default_factory=TripleModel)
    pruning: tuple[PruningRule, ...] = ()
    specialized: Optional[SpecializedGrammar] = None


class Engine:
    """Runs translation sessions against immutable shared resources."""

    def __init__(self, resources: EngineResources, config: Optional[EngineConfig] = None):
        self.resources = resources
        self.config = config or EngineConfig()
        unknown = set(self.config.phrasal_targets) - resources.source_grammar.symbols
        if unknown:
            raise EngineError(f"phrasal targets {sorted(unknown)} not in the source grammar")
        self._counter = itertools.count(1)

    # -- session lifecycle

    def create_session(self, nbest: NBestList,
                       session_id: Optional[str] = None) -> TranslationSession:
        lattice = build_source_lattice(nbest, self.config.rank_penalty,
                                       self.config.deletion_cost)
        sid = session_id or f"{nbest.utterance_id}-{next(self._counter)}"
        return TranslationSession(sid, nbest, self.config, lattice)

    def run(self, session: TranslationSession) -> TranslationSession:
        """Run all stages; the surface stage always completes before the first
        cancellation point, so a snapshot exists even under a minimal timeout."""
        try:
            self.run_stage(session, "surface")
        except ParseCancelled:  # pragma: no cover - surface has no cancel points
            pass
        for stage in STAGES[1:]:
            if session.interrupted():
                break
            try:
                self.run_stage(session, stage)
            except ParseCancelled:
                break
        if session.status == "running":
            if session.cancel_requested and len(session.snapshots) < len(STAGES):
                session.status = "cancelled"
            elif time.monotonic() > session.deadline and len(session.snapshots) < len(STAGES):
                session.status = "timedOut"
            else:
                session.status = "done"
        return session

    def translate(self, nbest: NBestList,
                  session_id: Optional[str] = None) -> TranslationSession:
        return self.run(self.create_session(nbest, session_id))

    # -- stages

    def run_stage(self, session: TranslationSession, stage: str) -> Snapshot:
        if session.status != "running":
            raise EngineError(f"session {session.id} is not running")
        if stage not in STAGES:
            raise EngineError(f"unknown stage {stage!r}")
        expected = STAGES[len(session.snapshots)] if len(session.snapshots) < 4 else None
        if stage != expected:
            raise EngineError(f"stage {stage!r} out of order; expected {expected!r}")
        check: Optional[Callable[[], bool]]
        check = None if stage == "surface" else session.interrupted
        variant, analyses = self._select_source_path(session, stage, check)
        self._add_glossary_edges(session, variant, stage)
        if stage == "phrasal":
            self._add_qlf_edges(session, variant, analyses["phrasal"], "phrasal_qlf", check)
        elif stage == "full":
            ranked = rank_analyses(analyses["full"], self.resources.triple_model) \
                if analyses["full"] else []
            self._add_qlf_edges(session, variant, ranked, "full_qlf", check)
        edges = self._applicable_edges(session, variant)
        path, score = select_path(edges, len(variant.tokens), self.config,
                                  self.resources.bigrams)
        target = tuple(itertools.chain.from_iterable(e.tokens for e in path))
        snapshot = Snapshot(stage, variant.tokens, target, score, session.elapsed(),
                            tuple(path))
        session.snapshots.append(snapshot)
        return snapshot

    # -- source path selection

    def _variants(self, session: TranslationSession, stage: str) -> list[_Variant]:
        config = self.config
        model = self.resources.source_lexicon.tag_model
        out: list[_Variant] = []
        for rank in range(1, len(session.nbest.hypotheses) + 1):
            hyp_edges = session.lattice.hypothesis_edges(rank)
            tokens = tuple(e.token for e in hyp_edges if e.token is not None)
            prior = -config.rank_penalty * (rank - 1)
            edge_ids = tuple(e.id for e in hyp_edges)
            if stage == "surface":
                out.append(_Variant(rank, edge_ids, tokens, 0, prior))
                continue
            full_tags, full_score = tag_score(tokens, model, config.open_class_tags)
            out.append(_Variant(rank, edge_ids, tokens, 0, prior + full_score))
            choice = viterbi_with_skips(tokens, model, config.deletion_cost,
                                        config.open_class_tags)
            if choice.skipped:
                kept_ids = tuple(edge_ids[i] for i in choice.kept)
                kept_tokens = tuple(tokens[i] for i in choice.kept)
                out.append(_Variant(rank, kept_ids, kept_tokens,
                                    len(choice.skipped), prior + choice.score))
        return out

    def _select_source_path(self, session: TranslationSession, stage: str,
                            check: Optional[Callable[[], bool]]
                            ) -> tuple[_Variant, dict[str, list[Constituent]]]:
        res, config = self.resources, self.config
        best: Optional[tuple[float, int, int, _Variant, dict]] = None
        for variant in self._variants(session, stage):
            analyses: dict[str, list[Constituent]] = {"phrasal": [], "full": []}
            score = variant.base_score
            if stage in ("phrasal", "full"):
                cache = session._parse_cache.setdefault(variant.tokens, {})
                if "phrasal" not in cache:
                    cache["phrasal"] = phrasal_parse(
                        variant.tokens, res.source_lexicon, res.source_grammar,
                        config.phrasal_targets, cancel=check)
                analyses["phrasal"] = cache["phrasal"]
                covered: set[int] = set()
                for cons in analyses["phrasal"]:
                    covered.update(range(*cons.span))
                score += config.coverage_bonus * len(covered)
            if stage == "full":
                cache = session._parse_cache.setdefault(variant.tokens, {})
                if "full" not in cache:
                    parse_grammar = res.specialized or res.source_grammar
                    cache["full"] = full_parse(
                        variant.tokens, res.source_lexicon, parse_grammar,
                        pruning=res.pruning, cancel=check)
                analyses["full"] = cache["full"]
                if analyses["full"]:
                    score += config.coverage_bonus * len(variant.tokens)
            key = (score, -variant.rank, -variant.skipped)
            if best is None or key > best[:3]:
                best = (score, -variant.rank, -variant.skipped, variant, analyses)
        assert best is not None
        return best[3], best[4]

    # -- target edges

    def _store_edge(self, session: TranslationSession, edge_ids: tuple[int, ...],
                    tokens: tuple[str, ...], method: str,
                    term: Optional[qlf.Term] = None) -> None:
        session._edge_store[(edge_ids, tokens, method, term)] = None

    def _add_glossary_edges(self, session: TranslationSession, variant: _Variant,
                            stage: str) -> None:
        method = "surface_glossary" if stage == "surface" else "lexical_glossary"
        pair = (self.config.source_language, self.config.target_language)
        segments = glossary_lookup(variant.tokens, pair, self.resources.source_lexicon.glossary)
        for seg in segments:
            ids = variant.kept_edge_ids[seg.span[0]:seg.span[1]]
            target = seg.target if seg.target else seg.source
            self._store_edge(session, ids, target, method)

    def _add_qlf_edges(self, session: TranslationSession, variant: _Variant,
                       constituents: Sequence[Constituent], method: str,
                       check: Optional[Callable[[], bool]]) -> None:
        res, config = self.resources, self.config
        for cons in constituents:
            results = transfer(cons.qlf, res.rules, cancel=check)
            ids = variant.kept_edge_ids[cons.span[0]:cons.span[1]]
            for term in results:
                for tokens in generate(term, res.target_grammar, res.target_lexicon,
                                       length_limit=config.generation_limit,
                                       cancel=check):
                    self._store_edge(session, ids, tokens, method, term)

    def _applicable_edges(self, session: TranslationSession,
                          variant: _Variant) -> list[TargetEdge]:
        n = len(variant.kept_edge_ids)
        positions = {variant.kept_edge_ids[i:j]: (i, j)
                     for i in range(n) for j in range(i + 1, n + 1)}
        edges = []
        for (edge_ids, tokens, method, term) in session._edge_store:
            span = positions.get(edge_ids)
            if span is not None:
                edges.append(TargetEdge(span, tokens, method, term))
        return edges


def cancel(session: TranslationSession) -> None:
    session.cancel()
