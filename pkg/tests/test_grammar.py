from __future__ import annotations

import itertools
import random

import pytest

from slt import qlf
from slt.grammar import (ChartStats, Constituent, FeatureCategory, Grammar,
                         GrammarError, TripleModel,
                         Variable, category_variables, chart_parse, derive_constituents,
                         derivation_rule_ids, derivation_size, ebl_specialize,
                         eval_template, extract_triples, full_parse, learn_pruning_rules,
                         load_grammar, load_treebank, phrasal_parse, rank_analyses,
                         substitute_category, unify)

ATOMS = ("a", "b", "c", "d")


def cat(symbol: str, **feats) -> FeatureCategory:
    out = []
    for name, value in feats.items():
        if isinstance(value, str) and value.startswith("?"):
            out.append((name, Variable(value[1:])))
        else:
            out.append((name, frozenset(value)))
    return FeatureCategory(symbol, tuple(out))


def canonical(c: FeatureCategory) -> tuple:
    mapping: dict[str, int] = {}
    feats = []
    for name, value in c.features:
        if isinstance(value, Variable):
            index = mapping.setdefault(value.name, len(mapping))
            feats.append((name, f"?{index}"))
        else:
            feats.append((name, tuple(sorted(value))))
    return (c.symbol, tuple(feats))


def random_category(rng: random.Random, prefix: str,
                    shared_vars: bool = True) -> FeatureCategory:
    # variables are scoped to one category (callers rename apart, as the
    # parser does when instantiating a rule)
    feats = []
    var_names = [f"{prefix}{i}" for i in range(3)]
    for index, name in enumerate(("agr", "case", "wh")):
        roll = rng.random()
        if roll < 0.35:
            continue
        if roll < 0.55:
            feats.append((name, Variable(rng.choice(var_names)
                                         if shared_vars else var_names[index])))
        else:
            size = rng.randint(1, len(ATOMS))
            feats.append((name, frozenset(rng.sample(ATOMS, size))))
    return FeatureCategory(rng.choice(("NP", "VP")), tuple(feats))


class TestUnify:
    def test_intersection(self):
        out = unify(cat("NP", agr={"sg"}), cat("NP", agr={"sg", "pl"}))
        assert out == cat("NP", agr={"sg"})

    def test_empty_intersection_fails(self):
        assert unify(cat("NP", agr={"sg"}), cat("NP", agr={"pl"})) is None

    def test_symbol_mismatch_fails(self):
        assert unify(cat("NP"), cat("VP")) is None

    def test_variable_binding_propagates_to_other_categories(self):
        bindings: dict = {}
        out = unify(cat("NP", agr="?X"), cat("NP", agr={"sg"}), bindings)
        assert out == cat("NP", agr={"sg"})
        vp = substitute_category(cat("VP", agr="?X"), bindings)
        assert vp == cat("VP", agr={"sg"})

    def test_one_sided_features_carry_over(self):
        out = unify(cat("NP", agr={"sg"}), cat("NP", wh={"plus"}))
        assert out == cat("NP", agr={"sg"}, wh={"plus"})

    def test_commutative_random(self):
        rng = random.Random(1234)
        for _ in range(1500):
            a, b = random_category(rng, "A"), random_category(rng, "B")
            ab = unify(a, b)
            ba = unify(b, a)
            assert (ab is None) == (ba is None)
            if ab is not None:
                assert canonical(ab) == canonical(ba)

    def test_associative_random(self):
        # associativity holds for categories whose variables occur once each;
        # a variable shared between features co-varies only within one call
        # (results are substituted flat, there is no persistent reentrancy)
        rng = random.Random(4321)
        for _ in range(1500):
            a = random_category(rng, "A", shared_vars=False)
            b = random_category(rng, "B", shared_vars=False)
            c = random_category(rng, "C", shared_vars=False)
            ab = unify(a, b)
            bc = unify(b, c)
            left = unify(ab, c) if ab is not None else None
            right = unify(a, bc) if bc is not None else None
            assert (left is None) == (right is None)
            if left is not None:
                assert canonical(left) == canonical(right)

    def test_idempotent(self):
        rng = random.Random(99)
        for _ in range(300):
            a = random_category(rng, "A")
            out = unify(a, a)
            assert out is not None
            assert canonical(out) == canonical(a)

    def test_against_denotation_oracle(self):
        # ground-enumeration semantics: a category denotes all assignments of
        # non-empty atom subsets to its variables / interpretations
        atoms = ("a", "b")
        subsets = [frozenset(s) for r in (1, 2)
                   for s in itertools.combinations(atoms, r)]
        features = ("agr", "case")

        def denotation(c: FeatureCategory) -> set:
            variables = sorted(category_variables(c))
            out = set()
            for values in itertools.product(subsets, repeat=len(variables)):
                env = dict(zip(variables, values))
                ground = []
                for name in features:
                    value = c.feature_map().get(name)
                    if value is None:
                        ground.append(None)  # unconstrained, expanded below
                    elif isinstance(value, Variable):
                        ground.append(env[value.name])
                    else:
                        ground.append(value)
                expansions = [([g] if g is not None else subsets) for g in ground]
                for combo in itertools.product(*expansions):
                    # ground cells denote their non-empty subsets
                    subcombos = [
                        [frozenset(s) for r in range(1, len(cell) + 1)
                         for s in itertools.combinations(sorted(cell), r)]
                        for cell in combo]
                    for chosen in itertools.product(*subcombos):
                        out.add((c.symbol,) + tuple(chosen))
            return out

        def small_category(rng: random.Random, prefix: str) -> FeatureCategory:
            feats = []
            for index, name in enumerate(features):
                roll = rng.random()
                if roll < 0.3:
                    continue
                if roll < 0.5:
                    feats.append((name, Variable(f"{prefix}{index}")))
                else:
                    feats.append((name, frozenset(
                        rng.sample(atoms, rng.randint(1, len(atoms))))))
            return FeatureCategory("NP", tuple(feats))

        rng = random.Random(5)
        for _ in range(250):
            a = small_category(rng, "A")
            b = small_category(rng, "B")
            joined = unify(a, b)
            expected = denotation(a) & denotation(b)
            if joined is None:
                assert not expected
            else:
                assert denotation(joined) == expected


class TestTemplates:
    def test_application_builds_labelled_term(self):
        grammar = toy_grammar()
        rule = grammar.rule_by_id["vp"]
        v = qlf.SenseConst("see_See", "eng")
        np = qlf.SenseConst("dog_Dog", "eng")
        assert eval_template(rule.sem, [v, np]) == qlf.Apply(v, (("obj", np),))

    def test_extension_merges_into_existing_application(self):
        grammar = toy_grammar()
        s_rule = grammar.rule_by_id["s"]
        vp = qlf.Apply(qlf.SenseConst("see_See", "eng"),
                       (("obj", qlf.SenseConst("dog_Dog", "eng")),))
        subj = qlf.SenseConst("cat_Cat", "eng")
        out = eval_template(s_rule.sem, [subj, vp])
        assert out.arg_map()["subj"] == subj
        assert out.arg_map()["obj"].sense == "dog_Dog"


TOY_GRAMMAR_TEXT = """
feature agr { sg pl }
macro noun N[agr=sg]
macro pnoun NP[agr=sg]
macro verb V
macro det DET[agr=sg]
rule np NP[agr=?A] -> DET[agr=?A] N[agr=?A] ; sem: $2(det=$1)
rule vp VP -> V NP ; sem: $1(obj=$2)
rule s S -> NP VP ; sem: $2(subj=$1)
"""


def toy_grammar() -> Grammar:
    import tempfile, os
    with tempfile.NamedTemporaryFile("w", suffix=".gram", delete=False) as handle:
        handle.write(TOY_GRAMMAR_TEXT)
        path = handle.name
    try:
        return load_grammar(path)
    finally:
        os.unlink(path)


def fixpoint_parse(tokens, lexicon, grammar):
    """Independent chaotic-iteration enumeration of all derivable constituents."""
    from slt.grammar import _lexical_edges, rename_category
    import itertools as it
    counter = it.count()
    items: dict[tuple, Constituent] = {}

    def add(cons) -> bool:
        key = (cons.span, cons.category, cons.qlf, cons.derivation)
        if key in items:
            return False
        items[key] = cons
        return True

    for cons in _lexical_edges(tokens, lexicon.entries, grammar.macros, "full",
                               lambda: f"~o{next(counter)}"):
        add(cons)
    changed = True
    while changed:
        changed = False
        snapshot = list(items.values())
        for rule in grammar.rules:
            arity = len(rule.daughters)
            for combo in it.product(snapshot, repeat=arity):
                if any(combo[i].span[1] != combo[i + 1].span[0]
                       for i in range(arity - 1)):
                    continue
                suffix = f"~o{next(counter)}"
                bindings: dict = {}
                ok = True
                for dcat, cons in zip(rule.daughters, combo):
                    if unify(rename_category(dcat, suffix), cons.category,
                             bindings) is None:
                        ok = False
                        break
                if not ok:
                    continue
                mother = substitute_category(
                    rename_category(rule.mother, suffix), bindings)
                term = eval_template(rule.sem, [c.qlf for c in combo])
                deriv = ("rule", rule.id) + tuple(c.derivation for c in combo)
                built = Constituent((combo[0].span[0], combo[-1].span[1]),
                                    mother, term, deriv, "full")
                if add(built):
                    changed = True
    return items


class TestChartParsing:
    def test_early_flight_is_one_np_housing_the_right_sense(self, resources):
        tokens = "an early flight".split()
        found = phrasal_parse(tokens, resources.source_lexicon,
                              resources.source_grammar, ["NP"])
        full_span = [c for c in found if c.span == (0, 3)]
        assert len(full_span) == 1
        senses = {s.sense for s in qlf.iter_senses(full_span[0].qlf)}
        assert "early_NotLate" in senses

    def test_empty_targets_empty_result(self, resources):
        assert phrasal_parse("an early flight".split(), resources.source_lexicon,
                             resources.source_grammar, []) == []

    def test_unknown_target_rejected(self, resources):
        with pytest.raises(ValueError):
            phrasal_parse(["flight"], resources.source_lexicon,
                          resources.source_grammar, ["NOSUCH"])

    def test_constituent_count_matches_fixpoint_enumeration(self, resources):
        for sentence in ("could you show me an early flight please",
                         "show me flights from boston",
                         "the flight serves a meal"):
            tokens = sentence.split()[:6]
            chart = chart_parse(tokens, resources.source_lexicon,
                                resources.source_grammar, stage="full")
            oracle = fixpoint_parse(tokens, resources.source_lexicon,
                                    resources.source_grammar)
            chart_keys = {(c.span, c.symbol, c.derivation) for c in chart}
            oracle_keys = {(c.span, c.symbol, c.derivation) for c in oracle.values()}
            assert chart_keys == oracle_keys

    def test_full_parse_of_fixture_sentence(self, resources):
        tokens = "could you show me an early flight please".split()
        found = full_parse(tokens, resources.source_lexicon, resources.source_grammar)
        assert len(found) >= 1
        assert all(c.span == (0, 8) and c.symbol == "S" for c in found)

    def test_ungrammatical_input_has_no_full_parse(self, resources):
        found = full_parse("flight the an".split(), resources.source_lexicon,
                           resources.source_grammar)
        assert found == []

    def test_chart_monotone_under_rule_addition(self, resources):
        # adding a rule never removes a previously derivable constituent
        grammar = resources.source_grammar
        smaller = Grammar(grammar.features, grammar.macros, grammar.rules[:-2],
                          grammar.cut_symbols)
        tokens = "show me a flight".split()
        small_keys = {(c.span, c.symbol, c.derivation)
                      for c in chart_parse(tokens, resources.source_lexicon,
                                           smaller, stage="full")}
        big_keys = {(c.span, c.symbol, c.derivation)
                    for c in chart_parse(tokens, resources.source_lexicon,
                                         grammar, stage="full")}
        assert small_keys <= big_keys


class TestTreebank:
    def test_load_and_validate(self, treebank, resources):
        assert len(treebank) >= 10
        for entry in treebank:
            constituents = derive_constituents(entry, resources.source_grammar,
                                               resources.source_lexicon)
            spans = {c.span for c in constituents}
            assert (0, len(entry.tokens)) in spans

    def test_invalid_derivation_names_sentence(self, resources):
        entries = load_treebank_text("show me ||| (vp_v_np_np show (np_pron me))")
        with pytest.raises(GrammarError, match="show me"):
            derive_constituents(entries[0], resources.source_grammar,
                                resources.source_lexicon)


def train_triple_model(resources, treebank) -> TripleModel:
    counts: dict[tuple[str, str, str], list[int]] = {}
    for entry in treebank:
        span = (0, len(entry.tokens))
        correct = [c for c in derive_constituents(entry, resources.source_grammar,
                                                  resources.source_lexicon)
                   if c.span == span]
        correct_derivs = {c.derivation for c in correct}
        for cons in correct:
            for triple, count in extract_triples(cons.qlf).items():
                counts.setdefault(triple, [0, 0])[0] += count
        for cons in full_parse(entry.tokens, resources.source_lexicon,
                               resources.source_grammar):
            if cons.derivation in correct_derivs:
                continue
            for triple, count in extract_triples(cons.qlf).items():
                counts.setdefault(triple, [0, 0])[1] += count
    return TripleModel({t: (g, b) for t, (g, b) in counts.items()})


def load_treebank_text(text: str):
    import tempfile, os
    with tempfile.NamedTemporaryFile("w", suffix=".tb", delete=False) as handle:
        handle.write(text + "\n")
        path = handle.name
    try:
        return load_treebank(path)
    finally:
        os.unlink(path)


class TestPruning:
    def test_learned_rules_never_prune_correct_constituents(self, resources, treebank):
        rules = learn_pruning_rules(treebank, resources.source_grammar,
                                    resources.source_lexicon, min_occurrences=2)
        assert rules, "fixture treebank should yield at least one pruning rule"
        for entry in treebank:
            correct = {(c.symbol, c.span)
                       for c in derive_constituents(entry, resources.source_grammar,
                                                    resources.source_lexicon)}
            chart = chart_parse(entry.tokens, resources.source_lexicon,
                                resources.source_grammar, stage="full",
                                pruning=rules)
            found = {(c.symbol, c.span) for c in chart}
            assert correct <= found

    def test_pruning_reduces_chart_edges_on_held_out_sentences(self, resources, treebank):
        rules = learn_pruning_rules(treebank, resources.source_grammar,
                                    resources.source_lexicon, min_occurrences=2)
        held_out = ["show me the early flight from denver",
                    "could you show me a flight to boston please",
                    "show me meals"]
        base_edges = pruned_edges = 0
        for sentence in held_out:
            tokens = sentence.split()
            stats = ChartStats()
            chart_parse(tokens, resources.source_lexicon, resources.source_grammar,
                        stage="full", stats=stats)
            base_edges += stats.built
            stats = ChartStats()
            chart_parse(tokens, resources.source_lexicon, resources.source_grammar,
                        stage="full", pruning=rules, stats=stats)
            pruned_edges += stats.built - stats.pruned
        assert pruned_edges <= base_edges * 0.9, (base_edges, pruned_edges)

    def test_all_used_treebank_yields_no_rules(self, resources):
        entries = load_treebank_text(
            "the flight serves a meal ||| (s_np_vp (np_det_nom the (nom_n flight)) "
            "(vp_v_np serves (np_det_nom a (nom_n meal))))")
        rules = learn_pruning_rules(entries, resources.source_grammar,
                                    resources.source_lexicon, min_occurrences=1)
        assert rules == []

    def test_infinite_threshold_yields_no_rules(self, resources, treebank):
        rules = learn_pruning_rules(treebank, resources.source_grammar,
                                    resources.source_lexicon,
                                    min_occurrences=10 ** 9)
        assert rules == []


class TestSpecialization:
    def test_high_threshold_yields_empty(self, resources, treebank):
        specialized = ebl_specialize(resources.source_grammar, treebank,
                                     len(treebank) + 1)
        assert specialized.rules == []

    def test_identical_trees_at_exact_threshold(self, resources):
        line = ("show me a flight ||| (s_vp (vp_v_np_np show (np_pron me) "
                "(np_det_nom a (nom_n flight))))")
        entries = load_treebank_text("\n".join([line] * 3))
        specialized = ebl_specialize(resources.source_grammar, entries, 3)
        chains = {rule.chain for rule in specialized.rules}
        assert ("s_vp", "vp_v_np_np") in chains
        assert ("np_det_nom", "nom_n") in chains
        assert ("np_pron",) in chains

    def test_specialized_parses_expand_to_original_parses(self, resources, treebank):
        specialized = ebl_specialize(resources.source_grammar, treebank, 2,
                                     resources.source_lexicon)
        assert specialized.rules
        for entry in treebank:
            original = {c.derivation
                        for c in full_parse(entry.tokens, resources.source_lexicon,
                                            resources.source_grammar)}
            special = full_parse(entry.tokens, resources.source_lexicon, specialized)
            for cons in special:
                assert specialized.expand(cons.derivation) in original

    def test_specialized_visits_fewer_edges_for_same_parse_set(self, resources, treebank):
        specialized = ebl_specialize(resources.source_grammar, treebank, 2,
                                     resources.source_lexicon)
        total_base = total_special = 0
        for entry in treebank:
            stats = ChartStats()
            base = full_parse(entry.tokens, resources.source_lexicon,
                              resources.source_grammar, stats=stats)
            total_base += stats.built
            stats = ChartStats()
            special = full_parse(entry.tokens, resources.source_lexicon,
                                 specialized, stats=stats)
            total_special += stats.built
            assert {specialized.expand(c.derivation) for c in special} <= \
                {c.derivation for c in base}
        assert total_special < total_base

    def test_specialized_qlf_matches_original(self, resources, treebank):
        specialized = ebl_specialize(resources.source_grammar, treebank, 2,
                                     resources.source_lexicon)
        entry = treebank[0]
        base = {c.qlf for c in full_parse(entry.tokens, resources.source_lexicon,
                                          resources.source_grammar)}
        special = {c.qlf for c in full_parse(entry.tokens, resources.source_lexicon,
                                             specialized)}
        assert special <= base and special


class TestTriples:
    def test_atomic_term_has_no_triples(self):
        assert extract_triples(qlf.SenseConst("flight_F", "eng")) == {}

    def test_early_flight_fixture_triple(self, resources):
        tokens = "early flight".split()
        [nom] = [c for c in chart_parse(tokens, resources.source_lexicon,
                                        resources.source_grammar, stage="phrasal")
                 if c.span == (0, 2) and c.symbol == "NOM"]
        triples = extract_triples(nom.qlf)
        assert dict(triples) == {("flight_Flight", "mod", "early_NotLate"): 1}

    def test_triples_decompose_structurally(self):
        inner = qlf.Apply(qlf.SenseConst("f_F", "eng"),
                          (("x", qlf.SenseConst("a_A", "eng")),))
        outer = qlf.Apply(qlf.SenseConst("g_G", "eng"), (("y", inner),))
        expected = extract_triples(inner).copy()
        expected[("g_G", "y", "f_F")] += 1
        assert extract_triples(outer) == expected

    def test_empty_model_preserves_input_order_on_full_ties(self):
        c1 = Constituent((0, 1), cat("S"), qlf.SenseConst("a_A", "eng"),
                         ("rule", "r1", ("lex", "a", "t", "a_A")), "full")
        c2 = Constituent((0, 1), cat("S"), qlf.SenseConst("b_B", "eng"),
                         ("rule", "r1", ("lex", "b", "t", "b_B")), "full")
        assert rank_analyses([c1, c2], TripleModel()) == [c1, c2]
        assert rank_analyses([c2, c1], TripleModel()) == [c2, c1]

    def test_good_triple_outranks_bad(self):
        term1 = qlf.Apply(qlf.SenseConst("h_H", "eng"),
                          (("m", qlf.SenseConst("x_X", "eng")),))
        term2 = qlf.Apply(qlf.SenseConst("h_H", "eng"),
                          (("n", qlf.SenseConst("x_X", "eng")),))
        c1 = Constituent((0, 2), cat("S"), term1, ("rule", "r1"), "full")
        c2 = Constituent((0, 2), cat("S"), term2, ("rule", "r2"), "full")
        model = TripleModel({("h_H", "m", "x_X"): (9, 0), ("h_H", "n", "x_X"): (0, 9)})
        assert rank_analyses([c2, c1], model) == [c1, c2]

    def test_ranking_invariant_under_count_scaling(self, resources, treebank):
        # the scaling property is checked on models trained from the fixture
        # corpus, with randomized scale factors
        model = train_triple_model(resources, treebank)
        assert model.counts
        tokens = "show me flights from boston".split()
        analyses = full_parse(tokens, resources.source_lexicon,
                              resources.source_grammar)
        assert len(analyses) >= 2, "fixture sentence should be ambiguous"
        base = [a.derivation for a in rank_analyses(analyses, model)]
        rng = random.Random(17)
        for _ in range(50):
            factor = rng.randint(1, 1000)
            scaled = [a.derivation
                      for a in rank_analyses(analyses, model.scaled(factor))]
            assert base == scaled

    def test_fixture_model_prefers_attached_modifier_reading(self, resources, treebank):
        model = train_triple_model(resources, treebank)
        tokens = "show me flights from boston".split()
        analyses = full_parse(tokens, resources.source_lexicon,
                              resources.source_grammar)
        best = rank_analyses(analyses, model)[0]
        triples = extract_triples(best.qlf)
        assert ("flight_Flight", "ppmod", "from_Source") in triples

    def test_mixed_spans_rejected(self):
        c1 = Constituent((0, 1), cat("S"), qlf.SenseConst("a_A", "eng"),
                         ("rule", "r"), "full")
        c2 = Constituent((0, 2), cat("S"), qlf.SenseConst("a_A", "eng"),
                         ("rule", "r"), "full")
        with pytest.raises(ValueError):
            rank_analyses([c1, c2], TripleModel())


class TestDerivationHelpers:
    def test_size_and_rule_ids(self):
        deriv = ("rule", "s", ("rule", "np", ("lex", "a", "det", "a_I")),
                 ("lex", "runs", "verb", "run_R"))
        assert derivation_size(deriv) == 2
        assert derivation_rule_ids(deriv) == ("s", "np")
