// Comprehension form page: audio or text presentation, a transcription
// scratch area, and the four form sections. Every control maps one-to-one
// onto a server form field; negation is a checkbox and disjunction an index
// stepper (0 = no disjunction).

import { ApiClient, ApiError } from "./api.js";
import { PlayGate, bindPlayButton } from "./audio.js";
import {
  Assignment,
  CONSTRAINT_FIELDS,
  FormPayload,
  LINGUISTIC_FORMS,
  UtteranceView,
  emptyForm,
  validateForm,
} from "./types.js";

const DRAFT_PREFIX = "slt.draft.";
const AUDIT_PREFIX = "slt.audit.";

export function draftKey(assignment: Assignment): string {
  return DRAFT_PREFIX + assignment.assignmentId;
}

export function auditKey(assignment: Assignment): string {
  return AUDIT_PREFIX + assignment.assignmentId;
}

function fieldRow(
  form: FormPayload,
  name: string,
  label: string,
  input: HTMLElement,
): HTMLElement {
  const row = document.createElement("div");
  row.className = "field-row";
  row.dataset.field = name;
  const caption = document.createElement("label");
  caption.textContent = label;
  row.append(caption, input);

  const negated = document.createElement("input");
  negated.type = "checkbox";
  negated.className = "negated";
  negated.checked = form.fields[name].negated;
  negated.addEventListener("change", () => {
    form.fields[name].negated = negated.checked;
  });
  const negatedLabel = document.createElement("label");
  negatedLabel.className = "negated-label";
  negatedLabel.append(negated, document.createTextNode("negated"));

  const stepper = document.createElement("input");
  stepper.type = "number";
  stepper.className = "disjunct";
  stepper.min = "0";
  stepper.step = "1";
  stepper.value = String(form.fields[name].disjunctIndex);
  stepper.title = "disjunct index (0 = none)";
  stepper.addEventListener("change", () => {
    form.fields[name].disjunctIndex = Math.max(0, Math.trunc(Number(stepper.value) || 0));
    stepper.value = String(form.fields[name].disjunctIndex);
  });

  row.append(negatedLabel, stepper);
  return row;
}

function textField(form: FormPayload, name: string, label: string): HTMLElement {
  const input = document.createElement("input");
  input.type = "text";
  input.className = "field-text";
  input.value = form.fields[name].text;
  input.addEventListener("input", () => {
    form.fields[name].text = input.value;
  });
  return fieldRow(form, name, label, input);
}

function choiceField(
  form: FormPayload,
  name: string,
  label: string,
  options: readonly string[],
): HTMLElement {
  const select = document.createElement("select");
  select.className = "field-choice";
  for (const option of ["", ...options]) {
    const element = document.createElement("option");
    element.value = option;
    element.textContent = option === "" ? "(unanswered)" : option.replace(/_/g, " ");
    select.append(element);
  }
  select.value = form.fields[name].text;
  select.addEventListener("change", () => {
    form.fields[name].text = select.value;
  });
  return fieldRow(form, name, label, select);
}

function presentation(view: UtteranceView, root: HTMLElement): void {
  if (view.audioRef) {
    const audio = document.createElement("audio");
    audio.src = view.audioRef;
    const button = document.createElement("button");
    button.className = "play";
    button.textContent = "play utterance";
    bindPlayButton(button, new PlayGate(audio));
    root.append(button, audio);
  } else if (view.blocked) {
    const note = document.createElement("p");
    note.className = "blocked";
    note.textContent = `audio unavailable: ${view.reason ?? "no reference"}`;
    root.append(note);
  } else {
    const text = document.createElement("p");
    text.className = "utterance-text";
    text.textContent = view.text ?? "";
    root.append(text);
  }
}

export function renderFormPage(
  api: ApiClient,
  assignment: Assignment,
  view: UtteranceView,
  storage: Storage = localStorage,
): HTMLElement {
  const root = document.createElement("div");
  root.className = "form-page";
  root.dataset.assignment = assignment.assignmentId;

  const saved = storage.getItem(draftKey(assignment));
  const form: FormPayload = saved
    ? (JSON.parse(saved) as FormPayload)
    : emptyForm(assignment.utteranceId, assignment.version, assignment.judgeId);

  presentation(view, root);

  const scratch = document.createElement("textarea");
  scratch.className = "scratch";
  scratch.placeholder = "write down as much of the utterance as you can";
  scratch.value = form.transcriptScratch;
  scratch.addEventListener("input", () => {
    form.transcriptScratch = scratch.value;
  });
  root.append(scratch);

  const sections: [string, HTMLElement[]][] = [
    ["1. Linguistic form", [choiceField(form, "linguistic_form",
                                        "form of the enquiry", LINGUISTIC_FORMS)]],
    ["2. Principal object", [textField(form, "principal_object", "principal object")]],
    ["3. Constraints", CONSTRAINT_FIELDS.map((name) =>
      textField(form, name, name.replace(/_/g, " ")))],
    ["4. Miscellaneous", [textField(form, "miscellaneous", "anything unforeseen")]],
  ];
  for (const [title, rows] of sections) {
    const section = document.createElement("fieldset");
    const legend = document.createElement("legend");
    legend.textContent = title;
    section.append(legend, ...rows);
    root.append(section);
  }

  const status = document.createElement("p");
  status.className = "status";
  const submit = document.createElement("button");
  submit.className = "submit";
  submit.textContent = "submit form";
  submit.addEventListener("click", async () => {
    const verdict = validateForm(form);
    if (!verdict.ok) {
      status.textContent = verdict.problems.join("; ");
      storage.setItem(draftKey(assignment), JSON.stringify(form));
      return;
    }
    try {
      await api.submitForm(assignment.assignmentId, assignment.judgeId, form);
      // only the audit copy survives submission
      storage.removeItem(draftKey(assignment));
      storage.setItem(auditKey(assignment), JSON.stringify(form));
      status.textContent = "submitted";
      root.classList.add("submitted");
      submit.disabled = true;
    } catch (error) {
      status.textContent = error instanceof ApiError ? error.message : String(error);
      storage.setItem(draftKey(assignment), JSON.stringify(form));
    }
  });
  root.append(submit, status);
  return root;
}

export function renderSubmittedForm(form: FormPayload): HTMLElement {
  const root = document.createElement("div");
  root.className = "form-page read-only";
  const note = document.createElement("p");
  note.textContent = `submitted ${form.version} form for ${form.utteranceId}`;
  root.append(note);
  for (const [name, entry] of Object.entries(form.fields)) {
    if (!entry.text.trim()) continue;
    const row = document.createElement("p");
    row.dataset.field = name;
    const negation = entry.negated ? " (negated)" : "";
    const disjunct = entry.disjunctIndex > 0 ? ` [disjunct ${entry.disjunctIndex}]` : "";
    row.textContent = `${name}: ${entry.text}${negation}${disjunct}`;
    root.append(row);
  }
  return root;
}
