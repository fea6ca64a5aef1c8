"""Judging arithmetic for both evaluation protocols.

Text-output judging uses an eight-way category scale (seven judged categories
plus an automatic one for empty output) tallied over a test set, with and
without the utterances whose recognition the user would have aborted. The
speech-output protocol compares form-based comprehension records and reports
precision/recall comprehensibility and translation quality.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Callable, Iterable, Mapping, Optional, Sequence

CATEGORIES = (
    "fully_acceptable",
    "unnatural_style",
    "minor_syntactic_errors",
    "major_syntactic_errors",
    "partial_translation",
    "nonsense",
    "bad_translation",
    "no_translation",
)
CATEGORY_LABELS = {
    "fully_acceptable": "Fully acceptable",
    "unnatural_style": "Unnatural style",
    "minor_syntactic_errors": "Minor syntactic errors",
    "major_syntactic_errors": "Major syntactic errors",
    "partial_translation": "Partial translation",
    "nonsense": "Nonsense",
    "bad_translation": "Bad translation",
    "no_translation": "No translation",
}
CLEARLY_USEFUL = CATEGORIES[:3]
BORDERLINE = CATEGORIES[3:5]
CLEARLY_USELESS = CATEGORIES[5:]

RECOGNITION_VERDICTS = ("acceptable", "abort")
FORM_VERSIONS = ("source_speech", "target_speech", "source_text")
LINGUISTIC_FORMS = ("imperative", "yes_no_question", "wh_question", "other")

CONSTRAINT_FIELDS = (
    "origin",
    "destination",
    "departure_time_earliest",
    "departure_time_latest",
    "arrival_time_earliest",
    "arrival_time_latest",
    "date",
    "airline",
    "fare_class",
    "trip_type",
    "stops",
    "meal_service",
    "aircraft_type",
    "price_limit",
    "sort_preference",
)
FORM_FIELDS = ("linguistic_form", "principal_object") + CONSTRAINT_FIELDS + ("miscellaneous",)

FIELD_STATUSES = ("compatible", "incompatible", "onlyInV1", "onlyInV2", "bothEmpty")


class EvaluationError(ValueError):
    pass


def round_half_up(value: float, digits: int = 1) -> float:
    quantum = Decimal(1).scaleb(-digits)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


# ---------------------------------------------------------------------------
# Text-output judging


@dataclass(frozen=True)
class UtteranceJudgement:
    utterance_id: str
    judge_id: str
    recognition: str
    category: Optional[str] = None
    language_pair: Optional[tuple[str, str]] = None

    def __post_init__(self) -> None:
        if self.recognition not in RECOGNITION_VERDICTS:
            raise EvaluationError(f"unknown recognition verdict {self.recognition!r}")
        if self.category is not None and self.category not in CATEGORIES:
            raise EvaluationError(f"unknown judgement category {self.category!r}")


@dataclass(frozen=True)
class ResultsTable:
    counts: dict[str, int]
    total: int
    percentages: dict[str, float]
    clearly_useful: float
    borderline: float
    clearly_useless: float
    ignored_count: Optional[int] = None
    undefined: bool = False

    def aggregate_counts(self) -> dict[str, int]:
        return {
            "clearly_useful": sum(self.counts[c] for c in CLEARLY_USEFUL),
            "borderline": sum(self.counts[c] for c in BORDERLINE),
            "clearly_useless": sum(self.counts[c] for c in CLEARLY_USELESS),
        }


def _table_from_counts(counts: Mapping[str, int],
                       ignored: Optional[int] = None) -> ResultsTable:
    total = sum(counts.values())
    full = {c: counts.get(c, 0) for c in CATEGORIES}
    if total == 0:
        pct = {c: 0.0 for c in CATEGORIES}
        return ResultsTable(full, 0, pct, 0.0, 0.0, 0.0, ignored, undefined=True)

    def share(names: Iterable[str]) -> float:
        return round_half_up(100.0 * sum(full[c] for c in names) / total)

    pct = {c: share((c,)) for c in CATEGORIES}
    return ResultsTable(full, total, pct, share(CLEARLY_USEFUL), share(BORDERLINE),
                        share(CLEARLY_USELESS), ignored)


def _checked(judgements: Sequence[UtteranceJudgement]) -> list[UtteranceJudgement]:
    seen: set[str] = set()
    for j in judgements:
        if j.utterance_id in seen:
            raise EvaluationError(f"duplicate judgement for utterance {j.utterance_id!r}")
        seen.add(j.utterance_id)
        if j.category is None:
            raise EvaluationError(f"utterance {j.utterance_id!r} has no category")
    return list(judgements)


def tally_auto(judgements: Sequence[UtteranceJudgement]) -> ResultsTable:
    """Fully automatic mode: every utterance in the test set is counted."""
    checked = _checked(judgements)
    counts: dict[str, int] = {}
    for j in checked:
        assert j.category is not None
        counts[j.category] = counts.get(j.category, 0) + 1
    return _table_from_counts(counts)


def tally_abort(judgements: Sequence[UtteranceJudgement]) -> ResultsTable:
    """Abort-button mode: utterances judged as recognition failures are
    excluded and reported via ``ignored_count``."""
    checked = _checked(judgements)
    counts: dict[str, int] = {}
    ignored = 0
    for j in checked:
        if j.recognition == "abort":
            ignored += 1
            continue
        assert j.category is not None
        counts[j.category] = counts.get(j.category, 0) + 1
    return _table_from_counts(counts, ignored)


def render_results_table(table: ResultsTable, title: str = "") -> str:
    width = max(len(label) for label in CATEGORY_LABELS.values()) + 2
    lines = []
    if title:
        lines.append(title)
    if table.undefined:
        lines.append("(no judgements)")

    def row(label: str, pct: float, bold: bool = False) -> str:
        name = label.ljust(width)
        return f"{name}{pct:6.1f}%"

    for cat in CLEARLY_USEFUL:
        lines.append(row(CATEGORY_LABELS[cat], table.percentages[cat]))
    lines.append(row("Clearly useful", table.clearly_useful))
    for cat in BORDERLINE:
        lines.append(row(CATEGORY_LABELS[cat], table.percentages[cat]))
    lines.append(row("Borderline", table.borderline))
    for cat in CLEARLY_USELESS:
        lines.append(row(CATEGORY_LABELS[cat], table.percentages[cat]))
    lines.append(row("Clearly useless", table.clearly_useless))
    if table.ignored_count is not None:
        lines.append(f"{'(Utterances ignored)'.ljust(width)}{table.ignored_count:6d}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Form-based comprehension protocol


@dataclass(frozen=True)
class FieldEntry:
    text: str = ""
    negated: bool = False
    disjunct_index: int = 0

    def __post_init__(self) -> None:
        if self.disjunct_index < 0:
            raise EvaluationError("disjunct index must be >= 0")

    @property
    def filled(self) -> bool:
        return bool(self.text.strip())


@dataclass(frozen=True)
class ComprehensibilityForm:
    utterance_id: str
    version: str
    judge_id: str
    transcript_scratch: str = ""
    entries: tuple[tuple[str, FieldEntry], ...] = ()

    def __post_init__(self) -> None:
        if self.version not in FORM_VERSIONS:
            raise EvaluationError(f"unknown form version {self.version!r}")
        names = [name for name, _ in self.entries]
        unknown = set(names) - set(FORM_FIELDS)
        if unknown:
            raise EvaluationError(f"unknown form fields {sorted(unknown)}")
        if len(set(names)) != len(names):
            raise EvaluationError("duplicate form fields")
        form = self.entry("linguistic_form")
        if form.filled and form.text not in LINGUISTIC_FORMS:
            raise EvaluationError(f"unknown linguistic form {form.text!r}")
        full = tuple((name, dict(self.entries).get(name, FieldEntry())) for name in FORM_FIELDS)
        object.__setattr__(self, "entries", full)

    def entry(self, name: str) -> FieldEntry:
        for field_name, entry in self.entries:
            if field_name == name:
                return entry
        return FieldEntry()

    def filled_fields(self) -> tuple[str, ...]:
        return tuple(name for name, entry in self.entries if entry.filled)


def make_form(utterance_id: str, version: str, judge_id: str,
              fields: Mapping[str, FieldEntry | str] | None = None,
              transcript_scratch: str = "") -> ComprehensibilityForm:
    entries = []
    for name, value in (fields or {}).items():
        entry = FieldEntry(value) if isinstance(value, str) else value
        entries.append((name, entry))
    return ComprehensibilityForm(utterance_id, version, judge_id,
                                 transcript_scratch, tuple(entries))


@dataclass(frozen=True)
class FormComparison:
    utterance_id: str
    version_pair: tuple[str, str]
    per_field: tuple[tuple[str, str], ...]
    comparer_judge_id: str = ""

    def __post_init__(self) -> None:
        names = [name for name, _ in self.per_field]
        if sorted(names) != sorted(FORM_FIELDS):
            raise EvaluationError("comparison must cover exactly the form's field set")
        for name, status in self.per_field:
            if status not in FIELD_STATUSES:
                raise EvaluationError(f"unknown field status {status!r} for {name!r}")

    def status_map(self) -> dict[str, str]:
        return dict(self.per_field)


Comparator = Callable[[str, FieldEntry, FieldEntry], bool]


def default_comparator(synonyms: Optional[Mapping[str, str]] = None) -> Comparator:
    """Case-fold, trim, normalize synonyms, then require exact text match plus
    matching negation and disjunct index."""
    table = {k.casefold().strip(): v.casefold().strip()
             for k, v in (synonyms or {}).items()}

    def normalize(text: str) -> str:
        folded = " ".join(text.casefold().split())
        return table.get(folded, folded)

    def compare(field_name: str, left: FieldEntry, right: FieldEntry) -> bool:
        if left.negated != right.negated or left.disjunct_index != right.disjunct_index:
            return False
        return normalize(left.text) == normalize(right.text)

    return compare


def compare_forms(v1: ComprehensibilityForm, v2: ComprehensibilityForm,
                  compat: Optional[Comparator] = None,
                  comparer_judge_id: str = "") -> FormComparison:
    """Classify every field of the two versions of one utterance."""
    if v1.utterance_id != v2.utterance_id:
        raise EvaluationError(
            f"cannot compare forms for {v1.utterance_id!r} and {v2.utterance_id!r}")
    compat = compat or default_comparator()
    statuses = []
    for name in FORM_FIELDS:
        left, right = v1.entry(name), v2.entry(name)
        if not left.filled and not right.filled:
            status = "bothEmpty"
        elif left.filled and not right.filled:
            status = "onlyInV1"
        elif right.filled and not left.filled:
            status = "onlyInV2"
        else:
            status = "compatible" if compat(name, left, right) else "incompatible"
        statuses.append((name, status))
    return FormComparison(v1.utterance_id, (v1.version, v2.version),
                          tuple(statuses), comparer_judge_id)


@dataclass(frozen=True)
class ComprehensibilityScore:
    precision: float
    recall: float
    degenerate_precision: bool = False
    degenerate_recall: bool = False

    def __post_init__(self) -> None:
        if not (0.0 <= self.precision <= 1.0 and 0.0 <= self.recall <= 1.0):
            raise EvaluationError("precision and recall must lie in [0, 1]")


def comprehensibility(cmp: FormComparison) -> ComprehensibilityScore:
    """Recall: share of fields filled in version 1 that version 2 fills
    compatibly; precision: the converse. Empty denominators score 1.0 and are
    flagged as degenerate."""
    statuses = list(cmp.status_map().values())
    compatible = statuses.count("compatible")
    filled_v1 = compatible + statuses.count("incompatible") + statuses.count("onlyInV1")
    filled_v2 = compatible + statuses.count("incompatible") + statuses.count("onlyInV2")
    recall = compatible / filled_v1 if filled_v1 else 1.0
    precision = compatible / filled_v2 if filled_v2 else 1.0
    return ComprehensibilityScore(precision, recall,
                                  degenerate_precision=filled_v2 == 0,
                                  degenerate_recall=filled_v1 == 0)


@dataclass(frozen=True)
class QualityReport:
    source_precision: float
    source_recall: float
    target_precision: float
    target_recall: float
    precision_difference: float
    recall_difference: float
    precision_quality: float
    recall_quality: float


def quality(c_source: ComprehensibilityScore,
            c_target: ComprehensibilityScore) -> QualityReport:
    """Componentwise degradation and quality, reported as percentages rounded
    half-up to one decimal. Quality above 100 is not clamped."""
    rows = {}
    for name in ("precision", "recall"):
        source = getattr(c_source, name) * 100.0
        target = getattr(c_target, name) * 100.0
        difference = source - target
        rows[name] = (round_half_up(source), round_half_up(target),
                      round_half_up(difference), round_half_up(100.0 - difference))
    return QualityReport(
        source_precision=rows["precision"][0], source_recall=rows["recall"][0],
        target_precision=rows["precision"][1], target_recall=rows["recall"][1],
        precision_difference=rows["precision"][2], recall_difference=rows["recall"][2],
        precision_quality=rows["precision"][3], recall_quality=rows["recall"][3])


def render_quality(report: QualityReport) -> str:
    header = f"{'':12}{'Source':>9}{'Target':>9}{'Difference':>12}{'Quality':>9}"
    rows = [
        ("Precision", report.source_precision, report.target_precision,
         report.precision_difference, report.precision_quality),
        ("Recall", report.source_recall, report.target_recall,
         report.recall_difference, report.recall_quality),
    ]
    lines = [header]
    for label, source, target, diff, qual in rows:
        lines.append(f"{label:12}{source:8.1f}%{target:8.1f}%{diff:11.1f}%{qual:8.1f}%")
    return "\n".join(lines)


def mean_score(scores: Sequence[ComprehensibilityScore]) -> ComprehensibilityScore:
    if not scores:
        raise EvaluationError("cannot average an empty score list")
    precision = sum(s.precision for s in scores) / len(scores)
    recall = sum(s.recall for s in scores) / len(scores)
    return ComprehensibilityScore(precision, recall)
