"""Judging service: utterance queues, form and judgement submission, comparison
tasks, results views, and translation sessions over HTTP.

All state lives in an append-only record log; replaying the log reconstructs
the store exactly, so a crashed service resumes where it stopped. Mutations
are serialized through one lock; reads see a consistent snapshot.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from typing import Any, Optional

from . import evaluation as ev
from .engine import Engine, TranslationSession, parse_nbest

ASSIGNMENT_VERSIONS = ev.FORM_VERSIONS  # source_speech, target_speech, source_text
COMPARISON_PAIRS = (("source_text", "source_speech"), ("source_text", "target_speech"))


class ServiceError(ValueError):
    kind = "bad_request"


class NotFound(ServiceError):
    kind = "not_found"


class Conflict(ServiceError):
    kind = "conflict"


class Forbidden(ServiceError):
    kind = "forbidden"


# ---------------------------------------------------------------------------
# Record log


class RecordLog:
    """Newline-delimited JSON records with strictly increasing sequence
    numbers. A torn trailing line (crash mid-write) is ignored on replay."""

    def __init__(self, path: str):
        self.path = path
        self._seq = 0
        self._handle = None

    def replay(self) -> list[dict]:
        records = []
        if not os.path.exists(self.path):
            return records
        with open(self.path, encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError:
                    break  # torn tail
                if record.get("seq") != self._seq + 1:
                    break
                self._seq = record["seq"]
                records.append(record)
        return records

    def append(self, rtype: str, payload: dict) -> dict:
        if self._handle is None:
            self._handle = open(self.path, "a", encoding="utf-8")
        self._seq += 1
        record = {"seq": self._seq, "ts": time.time(), "type": rtype, "payload": payload}
        self._handle.write(json.dumps(record, ensure_ascii=False) + "\n")
        self._handle.flush()
        os.fsync(self._handle.fileno())
        return record

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None


# ---------------------------------------------------------------------------
# Corpus


@dataclass(frozen=True)
class Utterance:
    id: str
    text: str = ""
    translation: Optional[str] = None
    hypothesis: str = ""
    protocol: str = "speech_to_speech"
    audio: tuple[tuple[str, str], ...] = ()

    def audio_ref(self, version: str) -> Optional[str]:
        for name, ref in self.audio:
            if name == version:
                return ref
        return None


def load_corpus(path: str) -> list[Utterance]:
    """One block per utterance: ``utt <id>`` then ``text`` / ``translation`` /
    ``hypothesis`` / ``audio <version> <ref>`` / ``protocol <name>`` lines."""
    utterances: list[Utterance] = []
    fields: Optional[dict[str, Any]] = None

    def flush() -> None:
        nonlocal fields
        if fields is not None:
            utterances.append(Utterance(**fields))
            fields = None

    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            kind, _, rest = line.partition(" ")
            rest = rest.strip()
            if kind == "utt":
                flush()
                fields = {"id": rest, "audio": ()}
            elif fields is None:
                raise ServiceError(f"line {lineno}: {kind!r} outside an utterance block")
            elif kind in ("text", "translation", "hypothesis"):
                fields[kind] = rest
            elif kind == "protocol":
                if rest not in ("speech_to_text", "speech_to_speech"):
                    raise ServiceError(f"line {lineno}: unknown protocol {rest!r}")
                fields["protocol"] = rest
            elif kind == "audio":
                version, _, ref = rest.partition(" ")
                if version not in ("source_speech", "target_speech") or not ref.strip():
                    raise ServiceError(f"line {lineno}: audio takes <version> <ref>")
                fields["audio"] = fields["audio"] + ((version, ref.strip()),)
            else:
                raise ServiceError(f"line {lineno}: unknown corpus line {kind!r}")
    flush()
    return utterances


# ---------------------------------------------------------------------------
# Store


@dataclass
class Assignment:
    id: str
    utterance_id: str
    version: str  # form version, or "judgement" for the text-judging task
    judge_id: str
    state: str = "in_progress"  # pending assignments are implicit in the queue


@dataclass
class ComparisonTask:
    id: str
    utterance_id: str
    version_pair: tuple[str, str]
    state: str = "open"  # open -> in_progress -> submitted
    judge_id: Optional[str] = None


class JudgingStore:
    """Replayable judging state over a record log.

    Every mutation is validated, appended to the log exactly once, and then
    applied to in-memory state through the same code path used on replay.
    """

    def __init__(self, data_dir: str, *, allow_comparer_overlap: bool = False):
        self.data_dir = data_dir
        os.makedirs(data_dir, exist_ok=True)
        corpus_path = os.path.join(data_dir, "corpus.txt")
        self.utterances: dict[str, Utterance] = {}
        if os.path.exists(corpus_path):
            self.utterances = {u.id: u for u in load_corpus(corpus_path)}
        self.allow_comparer_overlap = allow_comparer_overlap
        self.log = RecordLog(os.path.join(data_dir, "records.log"))
        self._lock = threading.RLock()
        self.judges: set[str] = set()
        self.assignments: dict[str, Assignment] = {}
        self.forms: dict[tuple[str, str], ev.ComprehensibilityForm] = {}
        self.recognitions: dict[str, tuple[str, str]] = {}  # utt -> (judge, verdict)
        self.judgements: dict[str, ev.UtteranceJudgement] = {}
        self.comparison_tasks: dict[str, ComparisonTask] = {}
        self.comparisons: dict[tuple[str, tuple[str, str]], ev.FormComparison] = {}
        self.session_meta: dict[str, dict] = {}
        self.snapshots: dict[str, list[dict]] = {}
        for record in self.log.replay():
            self._apply(record["type"], record["payload"])

    # -- mutation plumbing

    def _commit(self, rtype: str, payload: dict) -> None:
        self.log.append(rtype, payload)
        self._apply(rtype, payload)

    def _apply(self, rtype: str, payload: dict) -> None:
        if rtype == "judge":
            self.judges.add(payload["judge_id"])
        elif rtype == "assignment":
            a = Assignment(payload["assignment_id"], payload["utterance_id"],
                           payload["version"], payload["judge_id"])
            self.assignments[a.id] = a
        elif rtype == "form":
            assignment = self.assignments[payload["assignment_id"]]
            form = form_from_payload(payload["form"])
            self.forms[(form.utterance_id, form.version)] = form
            assignment.state = "submitted"
            self._maybe_open_comparisons(form.utterance_id)
        elif rtype == "recognition":
            assignment = self.assignments[payload["assignment_id"]]
            self.recognitions[assignment.utterance_id] = (
                assignment.judge_id, payload["verdict"])
        elif rtype == "category":
            assignment = self.assignments[payload["assignment_id"]]
            judge, verdict = self.recognitions[assignment.utterance_id]
            self.judgements[assignment.utterance_id] = ev.UtteranceJudgement(
                assignment.utterance_id, judge, verdict, payload["category"])
            assignment.state = "submitted"
        elif rtype == "comparison_assignment":
            task = self.comparison_tasks[payload["task_id"]]
            task.state = "in_progress"
            task.judge_id = payload["judge_id"]
        elif rtype == "comparison":
            task = self.comparison_tasks[payload["task_id"]]
            cmp = ev.FormComparison(
                task.utterance_id, task.version_pair,
                tuple((name, status) for name, status in payload["fields"]),
                payload["judge_id"])
            self.comparisons[(task.utterance_id, task.version_pair)] = cmp
            task.state = "submitted"
        elif rtype == "session":
            self.session_meta[payload["session_id"]] = payload
        elif rtype == "snapshot":
            self.snapshots.setdefault(payload["session_id"], []).append(payload)
        else:
            raise ServiceError(f"unknown record type {rtype!r}")

    def _maybe_open_comparisons(self, utterance_id: str) -> None:
        if not all((utterance_id, v) in self.forms for v in ASSIGNMENT_VERSIONS):
            return
        for pair in COMPARISON_PAIRS:
            task_id = f"cmp-{utterance_id}-{pair[1]}"
            if task_id not in self.comparison_tasks:
                self.comparison_tasks[task_id] = ComparisonTask(task_id, utterance_id, pair)

    # -- judging workflow

    def declare_judge(self, judge_id: str) -> None:
        if not judge_id or not judge_id.strip():
            raise ServiceError("judge id must be non-empty")
        with self._lock:
            if judge_id not in self.judges:
                self._commit("judge", {"judge_id": judge_id})

    def _judge_touched(self, judge_id: str, utterance_id: str) -> bool:
        return any(a.judge_id == judge_id and a.utterance_id == utterance_id
                   for a in self.assignments.values())

    def next_assignment(self, judge_id: str, *, declare: bool = True) -> Optional[Assignment]:
        """Next judging task for this judge: versions in fixed order, three
        distinct judges per utterance, never the same utterance twice."""
        with self._lock:
            if declare:
                self.declare_judge(judge_id)
            elif judge_id not in self.judges:
                raise NotFound(f"unknown judge {judge_id!r}")
            existing = next((a for a in self.assignments.values()
                             if a.judge_id == judge_id and a.state == "in_progress"), None)
            if existing is not None:
                return existing
            taken = {(a.utterance_id, a.version) for a in self.assignments.values()}
            for utt in self.utterances.values():
                if self._judge_touched(judge_id, utt.id):
                    continue
                wanted = (("judgement",) if utt.protocol == "speech_to_text"
                          else ASSIGNMENT_VERSIONS)
                for version in wanted:
                    if (utt.id, version) in taken:
                        continue
                    assignment_id = f"a-{utt.id}-{version}"
                    self._commit("assignment", {
                        "assignment_id": assignment_id, "utterance_id": utt.id,
                        "version": version, "judge_id": judge_id})
                    return self.assignments[assignment_id]
            return None

    def _owned_assignment(self, assignment_id: str, judge_id: str) -> Assignment:
        assignment = self.assignments.get(assignment_id)
        if assignment is None:
            raise NotFound(f"unknown assignment {assignment_id!r}")
        if assignment.judge_id != judge_id:
            raise Forbidden(f"assignment {assignment_id!r} belongs to another judge")
        if assignment.state != "in_progress":
            raise Conflict(f"assignment {assignment_id!r} was already submitted")
        return assignment

    def submit_form(self, assignment_id: str, judge_id: str,
                    form: ev.ComprehensibilityForm) -> None:
        with self._lock:
            assignment = self._owned_assignment(assignment_id, judge_id)
            if assignment.version == "judgement":
                raise Conflict("this assignment takes a judgement, not a form")
            if form.utterance_id != assignment.utterance_id:
                raise Conflict("form utterance does not match the assignment")
            if form.version != assignment.version:
                raise Conflict("form version does not match the assignment")
            if form.judge_id != judge_id:
                raise Conflict("form judge does not match the caller")
            self._commit("form", {"assignment_id": assignment_id,
                                  "form": form_to_payload(form)})

    def submit_recognition(self, assignment_id: str, judge_id: str, verdict: str) -> dict:
        with self._lock:
            assignment = self._owned_assignment(assignment_id, judge_id)
            if assignment.version != "judgement":
                raise Conflict("this assignment takes a form, not a judgement")
            if verdict not in ev.RECOGNITION_VERDICTS:
                raise ServiceError(f"unknown recognition verdict {verdict!r}")
            if assignment.utterance_id in self.recognitions:
                raise Conflict("recognition verdict was already submitted")
            self._commit("recognition", {"assignment_id": assignment_id,
                                         "verdict": verdict})
            utterance = self.utterances[assignment.utterance_id]
            if not (utterance.translation or "").strip():
                # empty output is categorized automatically, never by a judge
                self._commit("category", {"assignment_id": assignment_id,
                                          "category": "no_translation"})
                return {"autoCategory": "no_translation"}
            return {}

    def submit_category(self, assignment_id: str, judge_id: str, category: str) -> None:
        with self._lock:
            assignment = self._owned_assignment(assignment_id, judge_id)
            if assignment.version != "judgement":
                raise Conflict("this assignment takes a form, not a judgement")
            if assignment.utterance_id not in self.recognitions:
                raise Conflict("category cannot be submitted before the recognition "
                               "verdict")
            if assignment.utterance_id in self.judgements:
                raise Conflict("category was already submitted")
            if category == "no_translation":
                raise Conflict("the empty-output category is assigned automatically, "
                               "never by a judge")
            if category not in ev.CATEGORIES:
                raise ServiceError(f"unknown judgement category {category!r}")
            self._commit("category", {"assignment_id": assignment_id,
                                      "category": category})

    # -- comparison (fourth judge)

    def next_comparison(self, judge_id: str) -> Optional[dict]:
        with self._lock:
            self.declare_judge(judge_id)
            existing = next((t for t in self.comparison_tasks.values()
                             if t.judge_id == judge_id and t.state == "in_progress"), None)
            task = existing
            if task is None:
                for candidate in self.comparison_tasks.values():
                    if candidate.state != "open":
                        continue
                    if not self.allow_comparer_overlap and self._judge_touched(
                            judge_id, candidate.utterance_id):
                        continue
                    self._commit("comparison_assignment",
                                 {"task_id": candidate.id, "judge_id": judge_id})
                    task = candidate
                    break
            if task is None:
                return None
            v1 = self.forms[(task.utterance_id, task.version_pair[0])]
            v2 = self.forms[(task.utterance_id, task.version_pair[1])]
            return {"taskId": task.id, "utteranceId": task.utterance_id,
                    "versionPair": list(task.version_pair),
                    "v1": form_to_payload(v1), "v2": form_to_payload(v2)}

    def submit_comparison(self, task_id: str, judge_id: str,
                          fields: dict[str, str]) -> None:
        with self._lock:
            task = self.comparison_tasks.get(task_id)
            if task is None:
                raise NotFound(f"unknown comparison task {task_id!r}")
            if task.state == "submitted":
                raise Conflict("comparison was already submitted")
            if task.judge_id != judge_id:
                raise Forbidden("comparison task belongs to another judge")
            v1 = self.forms[(task.utterance_id, task.version_pair[0])]
            v2 = self.forms[(task.utterance_id, task.version_pair[1])]
            verdicts = dict(fields)

            def compat(name: str, left: ev.FieldEntry, right: ev.FieldEntry) -> bool:
                if name in verdicts:
                    return verdicts[name] == "compatible"
                return ev.default_comparator()(name, left, right)

            cmp = ev.compare_forms(v1, v2, compat, comparer_judge_id=judge_id)
            self._commit("comparison", {
                "task_id": task_id, "judge_id": judge_id,
                "fields": [list(kv) for kv in cmp.per_field]})

    # -- results

    def _scores(self) -> dict[str, dict[str, ev.ComprehensibilityScore]]:
        out: dict[str, dict[str, ev.ComprehensibilityScore]] = {}
        for (utt_id, pair), cmp in self.comparisons.items():
            label = "source" if pair[1] == "source_speech" else "target"
            out.setdefault(utt_id, {})[label] = ev.comprehensibility(cmp)
        return {u: s for u, s in out.items() if len(s) == 2}

    def results(self, view: str) -> dict:
        with self._lock:
            text_utts = [u for u in self.utterances.values()
                         if u.protocol == "speech_to_text"]
            speech_utts = [u for u in self.utterances.values()
                           if u.protocol == "speech_to_speech"]
            if view in ("auto_table", "abort_table"):
                judgements = [self.judgements[u.id] for u in text_utts
                              if u.id in self.judgements]
                partial = len(judgements) < len(text_utts) or not judgements
                table = (ev.tally_auto(judgements) if view == "auto_table"
                         else ev.tally_abort(judgements))
                title = ("All utterances counted" if view == "auto_table"
                         else "Recognition failures ignored")
                return {"rendered": ev.render_results_table(table, title),
                        "partial": partial,
                        "records": table_to_payload(table)}
            if view == "comprehensibility":
                scores = self._scores()
                partial = len(scores) < len(speech_utts) or not scores
                records = {utt: {label: {"precision": s.precision, "recall": s.recall}
                                 for label, s in pair.items()}
                           for utt, pair in sorted(scores.items())}
                rendered = "\n".join(
                    f"{utt}: source=({v['source']['precision']:.3f}, "
                    f"{v['source']['recall']:.3f}) target=({v['target']['precision']:.3f}, "
                    f"{v['target']['recall']:.3f})" for utt, v in records.items())
                return {"rendered": rendered or "(no comparisons)",
                        "partial": partial, "records": records}
            if view == "quality":
                scores = self._scores()
                partial = len(scores) < len(speech_utts) or not scores
                if not scores:
                    return {"rendered": "(no comparisons)", "partial": True, "records": {}}
                c_source = ev.mean_score([s["source"] for s in scores.values()])
                c_target = ev.mean_score([s["target"] for s in scores.values()])
                report = ev.quality(c_source, c_target)
                return {"rendered": ev.render_quality(report), "partial": partial,
                        "records": vars(report)}
            raise NotFound(f"unknown results view {view!r}")

    # -- session records

    def record_session(self, session_id: str, utterance_id: str, status: str) -> None:
        with self._lock:
            self._commit("session", {"session_id": session_id,
                                     "utterance_id": utterance_id, "status": status})

    def record_snapshot(self, session_id: str, snapshot) -> None:
        with self._lock:
            self._commit("snapshot", {
                "session_id": session_id, "stage": snapshot.stage,
                "source_tokens": list(snapshot.source_tokens),
                "target_tokens": list(snapshot.target_tokens),
                "score": snapshot.score, "wall_clock": snapshot.wall_clock})

    def close(self) -> None:
        self.log.close()


# ---------------------------------------------------------------------------
# Payload helpers


def form_to_payload(form: ev.ComprehensibilityForm) -> dict:
    return {
        "utteranceId": form.utterance_id,
        "version": form.version,
        "judgeId": form.judge_id,
        "transcriptScratch": form.transcript_scratch,
        "fields": {name: {"text": e.text, "negated": e.negated,
                          "disjunctIndex": e.disjunct_index}
                   for name, e in form.entries},
    }


def form_from_payload(payload: dict) -> ev.ComprehensibilityForm:
    try:
        entries = tuple(
            (name, ev.FieldEntry(value.get("text", ""), bool(value.get("negated", False)),
                                 int(value.get("disjunctIndex", 0))))
            for name, value in payload.get("fields", {}).items())
        return ev.ComprehensibilityForm(
            payload["utteranceId"], payload["version"], payload["judgeId"],
            payload.get("transcriptScratch", ""), entries)
    except (KeyError, TypeError, ValueError) as exc:
        raise ServiceError(f"malformed form payload: {exc}") from None


def table_to_payload(table: ev.ResultsTable) -> dict:
    return {
        "counts": dict(table.counts),
        "total": table.total,
        "percentages": dict(table.percentages),
        "clearlyUseful": table.clearly_useful,
        "borderline": table.borderline,
        "clearlyUseless": table.clearly_useless,
        "ignored": table.ignored_count,
        "undefined": table.undefined,
    }


# ---------------------------------------------------------------------------
# HTTP app


def create_app(store: JudgingStore, engine: Optional[Engine] = None):
    from fastapi import FastAPI, Request
    from fastapi.responses import JSONResponse

    app = FastAPI(title="slt judging service")
    sessions: dict[str, TranslationSession] = {}
    session_lock = threading.Lock()

    status_by_kind = {"bad_request": 422, "not_found": 404,
                      "conflict": 409, "forbidden": 403}

    @app.exception_handler(ServiceError)
    async def service_error(request: Request, exc: ServiceError):
        return JSONResponse({"error": str(exc)},
                            status_code=status_by_kind.get(exc.kind, 422))

    @app.exception_handler(ValueError)
    async def value_error(request: Request, exc: ValueError):
        return JSONResponse({"error": str(exc)}, status_code=422)

    @app.post("/api/translate")
    async def translate(body: dict):
        if engine is None:
            return JSONResponse({"error": "no translation engine configured"},
                                status_code=503)
        nbest_text = body.get("nbest", "")
        records = parse_nbest(nbest_text)
        if len(records) != 1:
            raise ServiceError("POST /api/translate takes exactly one utterance record")
        session = engine.create_session(records[0])
        with session_lock:
            sessions[session.id] = session
        store.record_session(session.id, records[0].utterance_id, "running")

        def worker() -> None:
            engine.run(session)
            for snapshot in session.snapshots:
                store.record_snapshot(session.id, snapshot)
            store.record_session(session.id, records[0].utterance_id, session.status)

        threading.Thread(target=worker, daemon=True).start()
        return {"sessionId": session.id}

    def _session(session_id: str) -> TranslationSession:
        with session_lock:
            session = sessions.get(session_id)
        if session is None:
            raise NotFound(f"unknown session {session_id!r}")
        return session

    @app.get("/api/session/{session_id}")
    async def get_session(session_id: str):
        session = _session(session_id)
        return {
            "sessionId": session.id,
            "status": session.status,
            "snapshots": [
                {"stage": s.stage, "sourceTokens": list(s.source_tokens),
                 "targetTokens": list(s.target_tokens), "score": s.score,
                 "wallClock": s.wall_clock}
                for s in session.snapshots],
        }

    @app.post("/api/session/{session_id}/cancel")
    async def cancel_session(session_id: str):
        session = _session(session_id)
        session.cancel()
        return {"sessionId": session.id, "status": session.status,
                "cancelRequested": True}

    @app.get("/api/assignment")
    async def next_assignment(judge: str):
        assignment = store.next_assignment(judge)
        if assignment is None:
            return {"assignment": None}
        return {"assignment": {
            "assignmentId": assignment.id,
            "utteranceId": assignment.utterance_id,
            "version": assignment.version,
            "judgeId": assignment.judge_id,
            "state": assignment.state}}

    @app.get("/api/utterance/{utterance_id}/{version}")
    async def utterance_version(utterance_id: str, version: str):
        utt = store.utterances.get(utterance_id)
        if utt is None:
            raise NotFound(f"unknown utterance {utterance_id!r}")
        if version == "source_text":
            return {"text": utt.text}
        if version == "judgement":
            return {"text": utt.text, "hypothesis": utt.hypothesis,
                    "translation": utt.translation or ""}
        if version in ("source_speech", "target_speech"):
            ref = utt.audio_ref(version)
            if ref is None:
                return {"blocked": True,
                        "reason": "no audio reference for this version"}
            return {"audioRef": ref}
        raise NotFound(f"unknown version {version!r}")

    @app.get("/api/form/{utterance_id}/{version}")
    async def get_form(utterance_id: str, version: str):
        form = store.forms.get((utterance_id, version))
        if form is None:
            raise NotFound(f"no submitted form for {utterance_id}/{version}")
        return {"form": form_to_payload(form)}

    @app.post("/api/form")
    async def post_form(body: dict):
        form = form_from_payload(body.get("form", {}))
        store.submit_form(body.get("assignmentId", ""), body.get("judgeId", ""), form)
        return {"ok": True}

    @app.post("/api/judgement")
    async def post_judgement(body: dict):
        assignment_id = body.get("assignmentId", "")
        judge_id = body.get("judgeId", "")
        has_recognition = "recognition" in body
        has_category = "category" in body
        if has_recognition and has_category:
            raise Conflict("submit the recognition verdict first, then the category")
        if has_recognition:
            extra = store.submit_recognition(assignment_id, judge_id, body["recognition"])
            return {"ok": True, **extra}
        if has_category:
            store.submit_category(assignment_id, judge_id, body["category"])
            return {"ok": True}
        raise ServiceError("judgement needs a recognition verdict or a category")

    @app.get("/api/comparison/next")
    async def comparison_next(judge: str):
        task = store.next_comparison(judge)
        return {"task": task}

    @app.post("/api/comparison")
    async def post_comparison(body: dict):
        store.submit_comparison(body.get("taskId", ""), body.get("judgeId", ""),
                                dict(body.get("fields", {})))
        return {"ok": True}

    @app.get("/api/results/{view}")
    async def results(view: str):
        return store.results(view)

    return app
