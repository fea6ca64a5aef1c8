// Fourth-judge view: the two versions of an utterance side by side with one
// compatibility verdict control per filled field. Fill-status classes
// (onlyInV1 / onlyInV2 / bothEmpty) are mechanical, so judges only decide
// compatible vs incompatible where both versions answered.

import { ApiClient, ApiError } from "./api.js";
import { ComparisonTask, FORM_FIELDS } from "./types.js";

export function renderComparisonPage(
  api: ApiClient,
  task: ComparisonTask,
  judgeId: string,
): HTMLElement {
  const root = document.createElement("div");
  root.className = "comparison-page";
  root.dataset.task = task.taskId;

  const heading = document.createElement("p");
  heading.textContent =
    `${task.utteranceId}: ${task.versionPair[0]} vs ${task.versionPair[1]}`;
  root.append(heading);

  const verdicts: Record<string, string> = {};
  const table = document.createElement("table");
  for (const name of FORM_FIELDS) {
    const left = task.v1.fields[name] ?? { text: "", negated: false, disjunctIndex: 0 };
    const right = task.v2.fields[name] ?? { text: "", negated: false, disjunctIndex: 0 };
    const row = document.createElement("tr");
    row.dataset.field = name;
    const describe = (entry: typeof left) =>
      entry.text.trim()
        ? `${entry.negated ? "NOT " : ""}${entry.text}` +
          (entry.disjunctIndex ? ` [${entry.disjunctIndex}]` : "")
        : "—";
    for (const text of [name, describe(left), describe(right)]) {
      const cell = document.createElement("td");
      cell.textContent = text;
      row.append(cell);
    }
    const control = document.createElement("td");
    if (left.text.trim() && right.text.trim()) {
      const select = document.createElement("select");
      select.className = "verdict";
      for (const option of ["compatible", "incompatible"]) {
        const element = document.createElement("option");
        element.value = option;
        element.textContent = option;
        select.append(element);
      }
      select.addEventListener("change", () => {
        verdicts[name] = select.value;
      });
      control.append(select);
    } else {
      control.textContent = left.text.trim()
        ? "only in v1"
        : right.text.trim()
          ? "only in v2"
          : "both empty";
    }
    row.append(control);
    table.append(row);
  }
  root.append(table);

  const status = document.createElement("p");
  status.className = "status";
  const submit = document.createElement("button");
  submit.className = "submit";
  submit.textContent = "submit comparison";
  submit.addEventListener("click", async () => {
    try {
      await api.submitComparison(task.taskId, judgeId, verdicts);
      status.textContent = "submitted";
      submit.disabled = true;
      root.classList.add("submitted");
    } catch (error) {
      status.textContent = error instanceof ApiError ? error.message : String(error);
    }
  });
  root.append(submit, status);
  return root;
}
