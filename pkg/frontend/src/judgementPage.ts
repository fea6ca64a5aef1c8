// Text-output judging flow: source text, then the recognition hypothesis and
// its accept/abort verdict. The translation and the category selector are not
// added to the page until the verdict is acknowledged, so they cannot bias
// the recognition decision.

import { ApiClient, ApiError } from "./api.js";
import { Assignment, JUDGEABLE_CATEGORIES, UtteranceView } from "./types.js";

export function renderJudgementPage(
  api: ApiClient,
  assignment: Assignment,
  view: UtteranceView,
): HTMLElement {
  const root = document.createElement("div");
  root.className = "judgement-page";
  root.dataset.assignment = assignment.assignmentId;

  const source = document.createElement("p");
  source.className = "source-text";
  source.textContent = `said: ${view.text ?? ""}`;
  const hypothesis = document.createElement("p");
  hypothesis.className = "hypothesis";
  hypothesis.textContent = `heard: ${view.hypothesis ?? ""}`;
  root.append(source, hypothesis);

  const status = document.createElement("p");
  status.className = "status";

  const stageTwo = document.createElement("div");
  stageTwo.className = "category-stage";
  stageTwo.hidden = true; // stays empty as well until the verdict lands

  const showCategoryStage = () => {
    const translation = document.createElement("p");
    translation.className = "translation";
    translation.textContent = `translation: ${view.translation ?? ""}`;
    const picker = document.createElement("div");
    picker.className = "category-row";
    for (const category of JUDGEABLE_CATEGORIES) {
      const button = document.createElement("button");
      button.className = `category-${category}`;
      button.textContent = category.replace(/_/g, " ");
      button.addEventListener("click", async () => {
        try {
          await api.submitCategory(assignment.assignmentId, assignment.judgeId,
                                   category);
          picker.querySelectorAll("button").forEach((b) => (b.disabled = true));
          status.textContent = `judged ${category}`;
          root.classList.add("submitted");
        } catch (error) {
          status.textContent = error instanceof ApiError ? error.message : String(error);
        }
      });
      picker.append(button);
    }
    stageTwo.append(translation, picker);
    stageTwo.hidden = false;
  };

  const verdictRow = document.createElement("div");
  verdictRow.className = "verdict-row";
  for (const verdict of ["acceptable", "abort"] as const) {
    const button = document.createElement("button");
    button.className = `verdict-${verdict}`;
    button.textContent = verdict === "abort" ? "abort (recognition failed)"
      : "recognition acceptable";
    button.addEventListener("click", async () => {
      try {
        const ack = await api.submitRecognition(
          assignment.assignmentId, assignment.judgeId, verdict);
        verdictRow.querySelectorAll("button").forEach((b) => (b.disabled = true));
        if (ack.autoCategory) {
          status.textContent = `no output: categorized ${ack.autoCategory} automatically`;
          root.classList.add("submitted");
          return;
        }
        showCategoryStage();
      } catch (error) {
        status.textContent = error instanceof ApiError ? error.message : String(error);
      }
    });
    verdictRow.append(button);
  }
  root.append(verdictRow, stageTwo, status);
  return root;
}
