// Annotation session state machine, kept free of DOM concerns so the
// gating and advancement rules are testable headlessly.
//
// Rules: every criterion starts unset and must be explicitly chosen
// before submit unlocks (no default-true judgments). An accepted
// submission advances to the next task; a duplicate rejection (someone
// else judged it first) advances WITHOUT re-posting; a network failure
// preserves the current task and form for a retry.

import { AnnotationApi, DoneView, TaskView, isDone } from "./api.js";

export const CRITERIA = [
  "factually_correct",
  "natural_sounding",
  "self_contained",
] as const;

export type Criterion = (typeof CRITERIA)[number];

export type JudgmentForm = Record<Criterion, boolean | null>;

export function emptyForm(): JudgmentForm {
  return { factually_correct: null, natural_sounding: null, self_contained: null };
}

export function canSubmit(form: JudgmentForm): boolean {
  return CRITERIA.every((c) => form[c] !== null);
}

export type SessionPhase = "idle" | "loading" | "task" | "done" | "error";

export interface HistoryEntry {
  task_id: string;
  // present only after the service acknowledged the judgment
  accepted: true;
}

export class AnnotationSession {
  phase: SessionPhase = "idle";
  task: TaskView | null = null;
  form: JudgmentForm = emptyForm();
  judgedTotal = 0; // service-wide count reported on the done screen
  history: HistoryEntry[] = [];
  lastError: string | null = null;

  constructor(
    private readonly api: AnnotationApi,
    readonly annotatorId: string,
  ) {}

  canSubmit(): boolean {
    return this.phase === "task" && canSubmit(this.form);
  }

  setCriterion(criterion: Criterion, value: boolean): void {
    if (this.phase !== "task") {
      return;
    }
    this.form[criterion] = value;
  }

  /** Cycle unset -> yes -> no -> yes (keyboard affordance). */
  toggleCriterion(criterion: Criterion): void {
    if (this.phase !== "task") {
      return;
    }
    const current = this.form[criterion];
    this.form[criterion] = current === null ? true : !current;
  }

  async start(): Promise<void> {
    await this.advance();
  }

  /** Retry after a network failure; the form is untouched. */
  async retry(): Promise<void> {
    if (this.task === null) {
      await this.advance();
      return;
    }
    this.phase = "task";
    this.lastError = null;
  }

  private applyNext(view: TaskView | DoneView): void {
    if (isDone(view)) {
      this.phase = "done";
      this.task = null;
      this.judgedTotal = view.judged;
      return;
    }
    this.phase = "task";
    this.task = view;
    this.form = emptyForm();
  }

  private async advance(): Promise<void> {
    this.phase = "loading";
    this.lastError = null;
    try {
      this.applyNext(await this.api.nextTask(this.annotatorId));
    } catch (error) {
      this.phase = "error";
      this.lastError = error instanceof Error ? error.message : String(error);
    }
  }

  async submit(): Promise<void> {
    if (!this.canSubmit() || this.task === null) {
      return;
    }
    const task = this.task;
    try {
      const result = await this.api.submitJudgment({
        task_id: task.task_id,
        annotator_id: this.annotatorId,
        factually_correct: this.form.factually_correct as boolean,
        natural_sounding: this.form.natural_sounding as boolean,
        self_contained: this.form.self_contained as boolean,
      });
      if (result.accepted) {
        // history only records service-acknowledged judgments
        this.history.push({ task_id: task.task_id, accepted: true });
        await this.advance();
      } else if (result.duplicate) {
        // a concurrent session won the race: move on without re-posting
        await this.advance();
      }
    } catch (error) {
      // network failure: keep task and form so nothing is lost
      this.phase = "error";
      this.lastError = error instanceof Error ? error.message : String(error);
    }
  }
}
