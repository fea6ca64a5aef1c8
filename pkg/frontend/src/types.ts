// Shared shapes for the judging API. Field names mirror the server's form
// schema one-to-one; changing either side breaks the round-trip test.

export const CONSTRAINT_FIELDS = [
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
] as const;

export const FORM_FIELDS = [
  "linguistic_form",
  "principal_object",
  ...CONSTRAINT_FIELDS,
  "miscellaneous",
] as const;

export type FormFieldName = (typeof FORM_FIELDS)[number];

export const LINGUISTIC_FORMS = [
  "imperative",
  "yes_no_question",
  "wh_question",
  "other",
] as const;

// judges choose among seven categories; the empty-output eighth is assigned
// by the server automatically
export const JUDGEABLE_CATEGORIES = [
  "fully_acceptable",
  "unnatural_style",
  "minor_syntactic_errors",
  "major_syntactic_errors",
  "partial_translation",
  "nonsense",
  "bad_translation",
] as const;

export const FIELD_STATUSES = [
  "compatible",
  "incompatible",
  "onlyInV1",
  "onlyInV2",
  "bothEmpty",
] as const;

export interface FieldEntryPayload {
  text: string;
  negated: boolean;
  disjunctIndex: number;
}

export interface FormPayload {
  utteranceId: string;
  version: string;
  judgeId: string;
  transcriptScratch: string;
  fields: Record<string, FieldEntryPayload>;
}

export interface Assignment {
  assignmentId: string;
  utteranceId: string;
  version: "source_speech" | "target_speech" | "source_text" | "judgement";
  judgeId: string;
  state: string;
}

export interface UtteranceView {
  text?: string;
  hypothesis?: string;
  translation?: string;
  audioRef?: string;
  blocked?: boolean;
  reason?: string;
}

export interface ComparisonTask {
  taskId: string;
  utteranceId: string;
  versionPair: [string, string];
  v1: FormPayload;
  v2: FormPayload;
}

export function emptyEntry(): FieldEntryPayload {
  return { text: "", negated: false, disjunctIndex: 0 };
}

export function emptyForm(
  utteranceId: string,
  version: string,
  judgeId: string,
): FormPayload {
  const fields: Record<string, FieldEntryPayload> = {};
  for (const name of FORM_FIELDS) fields[name] = emptyEntry();
  return { utteranceId, version, judgeId, transcriptScratch: "", fields };
}

export interface DraftValidation {
  ok: boolean;
  problems: string[];
}

// client-side mirror of the server's form invariants: rejections should be
// caught before the network round trip
export function validateForm(form: FormPayload): DraftValidation {
  const problems: string[] = [];
  for (const [name, entry] of Object.entries(form.fields)) {
    if (!(FORM_FIELDS as readonly string[]).includes(name)) {
      problems.push(`unknown field ${name}`);
    }
    if (entry.disjunctIndex < 0 || !Number.isInteger(entry.disjunctIndex)) {
      problems.push(`${name}: disjunct index must be an integer >= 0`);
    }
  }
  const lf = form.fields["linguistic_form"];
  if (lf && lf.text.trim() && !(LINGUISTIC_FORMS as readonly string[]).includes(lf.text)) {
    problems.push(`unknown linguistic form ${lf.text}`);
  }
  return { ok: problems.length === 0, problems };
}
