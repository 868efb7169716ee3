// Client for the annotation service. The service blinds tasks before they
// reach this code: payloads carry no system identity and no question id.
//
// The only requests this module can issue are the three documented
// endpoints: next-task, judgment submission, and the report.

export interface TaskView {
  task_id: string;
  question: string;
  answer: string;
  position: number;
  total: number;
}

export interface DoneView {
  done: true;
  judged: number;
}

export interface JudgmentPayload {
  task_id: string;
  annotator_id: string;
  factually_correct: boolean;
  natural_sounding: boolean;
  self_contained: boolean;
}

export interface SubmitResult {
  accepted: boolean;
  duplicate: boolean;
  error?: string;
}

export interface SystemReport {
  accuracy: number;
  judged: number;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export function isDone(view: TaskView | DoneView): view is DoneView {
  return (view as DoneView).done === true;
}

export class AnnotationApi {
  constructor(
    private readonly baseUrl: string,
    private readonly campaignId: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private url(suffix: string): string {
    return `${this.baseUrl}/campaigns/${encodeURIComponent(this.campaignId)}${suffix}`;
  }

  async nextTask(annotatorId: string): Promise<TaskView | DoneView> {
    const response = await this.fetchFn(
      this.url(`/next?annotator=${encodeURIComponent(annotatorId)}`),
    );
    if (!response.ok) {
      throw new Error(`next-task request failed with status ${response.status}`);
    }
    return (await response.json()) as TaskView | DoneView;
  }

  async submitJudgment(payload: JudgmentPayload): Promise<SubmitResult> {
    const response = await this.fetchFn(this.url("/judgments"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    if (response.ok) {
      return { accepted: true, duplicate: false };
    }
    const body = (await response.json().catch(() => ({}))) as { error?: string };
    if (response.status === 409) {
      return { accepted: false, duplicate: true, error: body.error };
    }
    throw new Error(body.error ?? `judgment request failed with status ${response.status}`);
  }

  async report(): Promise<Record<string, SystemReport>> {
    const response = await this.fetchFn(this.url("/report"));
    if (!response.ok) {
      throw new Error(`report request failed with status ${response.status}`);
    }
    const body = (await response.json()) as { systems: Record<string, SystemReport> };
    return body.systems;
  }
}
