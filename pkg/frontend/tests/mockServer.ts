// In-memory stand-in for the judging service, enforcing the same invariants
// the Python side does (ownership, one submission, verdict-before-category),
// so client tests exercise realistic acceptances and rejections.

import type { FetchLike } from "../src/api.js";
import type { Assignment, FormPayload } from "../src/types.js";

export interface MockUtterance {
  id: string;
  protocol: "speech_to_text" | "speech_to_speech";
  text: string;
  hypothesis?: string;
  translation?: string;
  audio?: Partial<Record<"source_speech" | "target_speech", string>>;
}

const FORM_VERSIONS = ["source_speech", "target_speech", "source_text"] as const;

function json(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

export class MockServer {
  assignments = new Map<string, Assignment>();
  forms = new Map<string, FormPayload>();
  recognitions = new Map<string, string>();
  categories = new Map<string, string>();
  comparisons = new Map<string, Record<string, string>>();
  comparisonTasks: { taskId: string; utteranceId: string; pair: [string, string];
                     judgeId?: string; state: string }[] = [];

  constructor(private utterances: MockUtterance[]) {}

  private nextAssignment(judge: string): Assignment | null {
    const existing = [...this.assignments.values()].find(
      (a) => a.judgeId === judge && a.state === "in_progress",
    );
    if (existing) return existing;
    for (const utt of this.utterances) {
      const touched = [...this.assignments.values()].some(
        (a) => a.judgeId === judge && a.utteranceId === utt.id,
      );
      if (touched) continue;
      const versions = utt.protocol === "speech_to_text" ? ["judgement"] : FORM_VERSIONS;
      for (const version of versions) {
        const id = `a-${utt.id}-${version}`;
        if (this.assignments.has(id)) continue;
        const assignment: Assignment = {
          assignmentId: id,
          utteranceId: utt.id,
          version: version as Assignment["version"],
          judgeId: judge,
          state: "in_progress",
        };
        this.assignments.set(id, assignment);
        return assignment;
      }
    }
    return null;
  }

  private openComparisons(utteranceId: string): void {
    const complete = FORM_VERSIONS.every((v) => this.forms.has(`${utteranceId}/${v}`));
    if (!complete) return;
    for (const pair of [["source_text", "source_speech"],
                        ["source_text", "target_speech"]] as [string, string][]) {
      const taskId = `cmp-${utteranceId}-${pair[1]}`;
      if (!this.comparisonTasks.some((t) => t.taskId === taskId)) {
        this.comparisonTasks.push({ taskId, utteranceId, pair, state: "open" });
      }
    }
  }

  fetch: FetchLike = async (url, init) => {
    const { pathname, searchParams } = new URL(url, "http://mock");
    const body = init?.body ? JSON.parse(String(init.body)) : {};

    if (pathname === "/api/assignment") {
      return json({ assignment: this.nextAssignment(searchParams.get("judge") ?? "") });
    }

    const utteranceMatch = pathname.match(/^\/api\/utterance\/([^/]+)\/([^/]+)$/);
    if (utteranceMatch) {
      const utt = this.utterances.find((u) => u.id === utteranceMatch[1]);
      if (!utt) return json({ error: "unknown utterance" }, 404);
      const version = utteranceMatch[2];
      if (version === "source_text") return json({ text: utt.text });
      if (version === "judgement") {
        return json({ text: utt.text, hypothesis: utt.hypothesis ?? "",
                      translation: utt.translation ?? "" });
      }
      const ref = utt.audio?.[version as "source_speech" | "target_speech"];
      return ref ? json({ audioRef: ref })
                 : json({ blocked: true, reason: "no audio reference" });
    }

    const formFetch = pathname.match(/^\/api\/form\/([^/]+)\/([^/]+)$/);
    if (formFetch) {
      const stored = this.forms.get(`${formFetch[1]}/${formFetch[2]}`);
      return stored ? json({ form: stored })
                    : json({ error: "no submitted form" }, 404);
    }

    if (pathname === "/api/form") {
      const assignment = this.assignments.get(body.assignmentId);
      if (!assignment) return json({ error: "unknown assignment" }, 404);
      if (assignment.judgeId !== body.judgeId) {
        return json({ error: "assignment belongs to another judge" }, 403);
      }
      if (assignment.state !== "in_progress") {
        return json({ error: "assignment was already submitted" }, 409);
      }
      const form = body.form as FormPayload;
      if (form.utteranceId !== assignment.utteranceId
          || form.version !== assignment.version) {
        return json({ error: "form does not match the assignment" }, 409);
      }
      this.forms.set(`${form.utteranceId}/${form.version}`, form);
      assignment.state = "submitted";
      this.openComparisons(form.utteranceId);
      return json({ ok: true });
    }

    if (pathname === "/api/judgement") {
      const assignment = this.assignments.get(body.assignmentId);
      if (!assignment) return json({ error: "unknown assignment" }, 404);
      if ("recognition" in body && "category" in body) {
        return json({ error: "submit the recognition verdict first" }, 409);
      }
      if ("recognition" in body) {
        if (this.recognitions.has(assignment.utteranceId)) {
          return json({ error: "recognition verdict was already submitted" }, 409);
        }
        this.recognitions.set(assignment.utteranceId, body.recognition);
        const utt = this.utterances.find((u) => u.id === assignment.utteranceId);
        if (!(utt?.translation ?? "").trim()) {
          this.categories.set(assignment.utteranceId, "no_translation");
          assignment.state = "submitted";
          return json({ ok: true, autoCategory: "no_translation" });
        }
        return json({ ok: true });
      }
      if ("category" in body) {
        if (!this.recognitions.has(assignment.utteranceId)) {
          return json({ error: "category cannot be submitted before the "
                               + "recognition verdict" }, 409);
        }
        if (this.categories.has(assignment.utteranceId)) {
          return json({ error: "category was already submitted" }, 409);
        }
        this.categories.set(assignment.utteranceId, body.category);
        assignment.state = "submitted";
        return json({ ok: true });
      }
      return json({ error: "judgement needs a verdict or a category" }, 422);
    }

    if (pathname === "/api/comparison/next") {
      const judge = searchParams.get("judge") ?? "";
      let task = this.comparisonTasks.find(
        (t) => t.judgeId === judge && t.state === "in_progress");
      if (!task) {
        task = this.comparisonTasks.find((t) => t.state === "open"
          && ![...this.assignments.values()].some(
            (a) => a.judgeId === judge && a.utteranceId === t.utteranceId));
        if (task) {
          task.state = "in_progress";
          task.judgeId = judge;
        }
      }
      if (!task) return json({ task: null });
      return json({ task: {
        taskId: task.taskId,
        utteranceId: task.utteranceId,
        versionPair: task.pair,
        v1: this.forms.get(`${task.utteranceId}/${task.pair[0]}`),
        v2: this.forms.get(`${task.utteranceId}/${task.pair[1]}`),
      } });
    }

    if (pathname === "/api/comparison") {
      const task = this.comparisonTasks.find((t) => t.taskId === body.taskId);
      if (!task) return json({ error: "unknown comparison task" }, 404);
      if (task.judgeId !== body.judgeId) {
        return json({ error: "comparison task belongs to another judge" }, 403);
      }
      task.state = "submitted";
      this.comparisons.set(task.taskId, body.fields ?? {});
      return json({ ok: true });
    }

    return json({ error: `no route for ${pathname}` }, 404);
  };
}
