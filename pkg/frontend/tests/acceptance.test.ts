// Scripted browser session covering the shipping criterion: a full
// speech-to-text judgement (recognition verdict strictly before the category
// appears), a comprehension form with negation and a disjunct index whose
// fetched record equals the entered draft field for field, and a play
// control that goes dead after one playback.

import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { renderNext } from "../src/app.js";
import { MockServer } from "./mockServer.js";

function server(): MockServer {
  return new MockServer([
    {
      id: "s1",
      protocol: "speech_to_speech",
      text: "show me flights from boston to denver on sunday",
      audio: { source_speech: "media/s1.src.wav", target_speech: "media/s1.tgt.wav" },
    },
    {
      id: "t1",
      protocol: "speech_to_text",
      text: "could you show me an early flight please",
      hypothesis: "could you show me a are the flight please",
      translation: "pourriez-vous m'indiquer un vol de bonne heure s'il vous plait",
    },
  ]);
}

async function settle(): Promise<void> {
  for (let i = 0; i < 8; i += 1) await Promise.resolve();
}

function setInput(element: HTMLInputElement, value: string): void {
  element.value = value;
  element.dispatchEvent(new Event("input", { bubbles: true }));
}

describe("scripted judging session", () => {
  let api: ApiClient;
  let mock: MockServer;
  let container: HTMLElement;

  beforeEach(() => {
    mock = server();
    api = new ApiClient("", mock.fetch);
    container = document.createElement("div");
    document.body.replaceChildren(container);
    localStorage.clear();
  });

  it("completes a comprehension form whose fetched record equals the draft", async () => {
    const page = await renderNext(container, "judge-form", { api });
    expect(page.className).toContain("form-page");

    // the speech version presents an audio control, scratch area and the
    // four sections
    const play = page.querySelector<HTMLButtonElement>("button.play");
    expect(play).not.toBeNull();
    expect(page.querySelector("textarea.scratch")).not.toBeNull();
    expect(page.querySelectorAll("fieldset")).toHaveLength(4);

    const scratch = page.querySelector<HTMLTextAreaElement>("textarea.scratch")!;
    setInput(scratch as unknown as HTMLInputElement, "flights boston denver sunday");

    const row = (name: string) =>
      page.querySelector<HTMLElement>(`.field-row[data-field="${name}"]`)!;
    const formChoice = row("linguistic_form").querySelector("select")!;
    formChoice.value = "imperative";
    formChoice.dispatchEvent(new Event("change", { bubbles: true }));
    setInput(row("principal_object").querySelector("input.field-text")!, "flights");
    setInput(row("origin").querySelector("input.field-text")!, "boston");
    setInput(row("destination").querySelector("input.field-text")!, "denver");

    // negated constraint with a disjunct index
    setInput(row("stops").querySelector("input.field-text")!, "stopovers");
    const negated = row("stops").querySelector<HTMLInputElement>("input.negated")!;
    negated.checked = true;
    negated.dispatchEvent(new Event("change", { bubbles: true }));
    const stepper = row("airline").querySelector<HTMLInputElement>("input.disjunct")!;
    setInput(row("airline").querySelector("input.field-text")!, "delta");
    stepper.value = "2";
    stepper.dispatchEvent(new Event("change", { bubbles: true }));

    page.querySelector<HTMLButtonElement>("button.submit")!.click();
    await settle();
    expect(page.querySelector(".status")!.textContent).toBe("submitted");

    const fetched = await api.fetchForm("s1", "source_speech");
    expect(fetched.transcriptScratch).toBe("flights boston denver sunday");
    expect(fetched.fields["linguistic_form"].text).toBe("imperative");
    expect(fetched.fields["principal_object"].text).toBe("flights");
    expect(fetched.fields["origin"].text).toBe("boston");
    expect(fetched.fields["destination"].text).toBe("denver");
    expect(fetched.fields["stops"]).toEqual(
      { text: "stopovers", negated: true, disjunctIndex: 0 });
    expect(fetched.fields["airline"]).toEqual(
      { text: "delta", negated: false, disjunctIndex: 2 });
    for (const [name, entry] of Object.entries(fetched.fields)) {
      if (["linguistic_form", "principal_object", "origin", "destination",
           "stops", "airline"].includes(name)) continue;
      expect(entry).toEqual({ text: "", negated: false, disjunctIndex: 0 });
    }
  });

  it("keeps recognition strictly before the category and gates playback", async () => {
    // walk the same judge through the three form versions of s1 first
    for (const version of ["source_speech", "target_speech", "source_text"]) {
      const page = await renderNext(container, `fill-${version}`, { api });
      expect(page.dataset.assignment).toBe(`a-s1-${version}`);
      page.querySelector<HTMLButtonElement>("button.submit")!.click();
      await settle();
    }

    const page = await renderNext(container, "judge-text", { api });
    expect(page.className).toContain("judgement-page");
    const stageTwo = page.querySelector<HTMLElement>(".category-stage")!;
    expect(stageTwo.hidden).toBe(true);
    expect(page.textContent).not.toContain("pourriez-vous"); // not presented earlier

    // the server also refuses an out-of-order category
    await expect(
      api.submitCategory("a-t1-judgement", "judge-text", "nonsense"),
    ).rejects.toMatchObject({ status: 409 });

    page.querySelector<HTMLButtonElement>("button.verdict-acceptable")!.click();
    await settle();
    expect(stageTwo.hidden).toBe(false);
    expect(stageTwo.textContent).toContain("pourriez-vous");

    stageTwo.querySelector<HTMLButtonElement>("button.category-fully_acceptable")!
      .click();
    await settle();
    expect(mock.recognitions.get("t1")).toBe("acceptable");
    expect(mock.categories.get("t1")).toBe("fully_acceptable");

    // play gating on a fresh speech assignment for another judge
    mock.assignments.delete("a-s1-source_speech");
    mock.forms.delete("s1/source_speech");
    const speechPage = await renderNext(container, "judge-audio", { api });
    const play = speechPage.querySelector<HTMLButtonElement>("button.play")!;
    expect(play.disabled).toBe(false);
    play.click();
    await settle();
    const audio = speechPage.querySelector("audio")!;
    audio.dispatchEvent(new Event("ended"));
    await settle();
    expect(play.disabled).toBe(true);
    play.click(); // second attempt: control stays dead
    await settle();
    expect(play.disabled).toBe(true);
  });

  it("preserves the draft locally when the server rejects it", async () => {
    const page = await renderNext(container, "judge-form", { api });
    const origin = page.querySelector<HTMLInputElement>(
      '.field-row[data-field="origin"] input.field-text')!;
    setInput(origin, "boston");
    // sabotage: mark the assignment submitted behind the client's back
    mock.assignments.get("a-s1-source_speech")!.state = "submitted";
    page.querySelector<HTMLButtonElement>("button.submit")!.click();
    await settle();
    expect(page.querySelector(".status")!.textContent)
      .toContain("already submitted");
    const draft = localStorage.getItem("slt.draft.a-s1-source_speech");
    expect(draft).not.toBeNull();
    expect(JSON.parse(draft!).fields.origin.text).toBe("boston");
  });
});
