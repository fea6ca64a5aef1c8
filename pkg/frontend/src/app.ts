// Single-page flow: one route per assignment. The judge declares an id, the
// server hands out one task at a time, and a reloaded page whose assignment
// was already submitted shows the read-only audit copy instead of controls.

import { ApiClient } from "./api.js";
import { renderComparisonPage } from "./comparisonPage.js";
import { auditKey, renderFormPage, renderSubmittedForm } from "./formPage.js";
import { renderJudgementPage } from "./judgementPage.js";
import type { Assignment, FormPayload } from "./types.js";

export interface AppOptions {
  api?: ApiClient;
  storage?: Storage;
}

export async function renderNext(
  container: HTMLElement,
  judgeId: string,
  options: AppOptions = {},
): Promise<HTMLElement> {
  const api = options.api ?? new ApiClient();
  const storage = options.storage ?? localStorage;
  container.replaceChildren();

  const assignment = await api.nextAssignment(judgeId);
  let page: HTMLElement;
  if (assignment === null) {
    const comparison = await api.nextComparison(judgeId);
    if (comparison !== null) {
      page = renderComparisonPage(api, comparison, judgeId);
    } else {
      page = document.createElement("p");
      page.textContent = "no tasks pending for this judge";
    }
  } else {
    page = await renderAssignment(api, assignment, storage);
  }
  container.append(page);
  return page;
}

export async function renderAssignment(
  api: ApiClient,
  assignment: Assignment,
  storage: Storage = localStorage,
): Promise<HTMLElement> {
  if (assignment.state === "submitted") {
    const audit = storage.getItem(auditKey(assignment));
    if (audit) return renderSubmittedForm(JSON.parse(audit) as FormPayload);
    try {
      const form = await api.fetchForm(assignment.utteranceId, assignment.version);
      return renderSubmittedForm(form);
    } catch {
      const note = document.createElement("p");
      note.textContent = "assignment already submitted";
      return note;
    }
  }
  const view = await api.utterance(assignment.utteranceId, assignment.version);
  if (assignment.version === "judgement") {
    return renderJudgementPage(api, assignment, view);
  }
  return renderFormPage(api, assignment, view, storage);
}

export function mount(root: HTMLElement): void {
  const form = document.createElement("form");
  const input = document.createElement("input");
  input.placeholder = "judge id";
  input.name = "judge";
  const go = document.createElement("button");
  go.textContent = "next task";
  form.append(input, go);
  const container = document.createElement("div");
  container.id = "task";
  root.append(form, container);
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    if (input.value.trim()) void renderNext(container, input.value.trim());
  });
}
