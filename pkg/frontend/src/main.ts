// DOM wiring for the annotation page. Keyboard: 1/2/3 toggle the three
// criteria, Enter submits once all are set.

import { AnnotationApi } from "./api.js";
import { AnnotationSession, CRITERIA, Criterion } from "./session.js";

const CRITERION_LABELS: Record<Criterion, string> = {
  factually_correct: "Factually correct",
  natural_sounding: "Natural-sounding",
  self_contained: "Understandable without extra information",
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function annotatorId(): string {
  const params = new URLSearchParams(window.location.search);
  const given = params.get("annotator");
  if (given) {
    return given;
  }
  const generated = `anon-${Math.random().toString(36).slice(2, 10)}`;
  params.set("annotator", generated);
  window.history.replaceState(null, "", `?${params.toString()}`);
  return generated;
}

function campaignId(): string {
  const params = new URLSearchParams(window.location.search);
  return params.get("campaign") ?? "campaign";
}

const api = new AnnotationApi(window.location.origin, campaignId());
const session = new AnnotationSession(api, annotatorId());

function render(): void {
  const taskPanel = el<HTMLDivElement>("task-panel");
  const donePanel = el<HTMLDivElement>("done-panel");
  const errorPanel = el<HTMLDivElement>("error-panel");
  taskPanel.hidden = session.phase !== "task";
  donePanel.hidden = session.phase !== "done";
  errorPanel.hidden = session.phase !== "error";

  if (session.phase === "task" && session.task !== null) {
    el<HTMLDivElement>("question").textContent = session.task.question;
    el<HTMLDivElement>("answer").textContent = session.task.answer;
    el<HTMLDivElement>("progress").textContent =
      `Task ${session.task.position} of ${session.task.total}`;
    for (const criterion of CRITERIA) {
      const value = session.form[criterion];
      el<HTMLButtonElement>(`${criterion}-yes`).classList.toggle("selected", value === true);
      el<HTMLButtonElement>(`${criterion}-no`).classList.toggle("selected", value === false);
    }
    el<HTMLButtonElement>("submit").disabled = !session.canSubmit();
  } else if (session.phase === "done") {
    el<HTMLDivElement>("done-count").textContent =
      `${session.judgedTotal} judgments collected. Thank you!`;
  } else if (session.phase === "error") {
    el<HTMLDivElement>("error-message").textContent =
      session.lastError ?? "The annotation service is unreachable.";
  }
}

async function act(action: () => Promise<void>): Promise<void> {
  await action();
  render();
}

function wire(): void {
  const list = el<HTMLDivElement>("criteria");
  for (const criterion of CRITERIA) {
    const row = document.createElement("div");
    row.className = "criterion";
    const label = document.createElement("span");
    label.textContent = CRITERION_LABELS[criterion];
    const yes = document.createElement("button");
    yes.id = `${criterion}-yes`;
    yes.textContent = "Yes";
    yes.addEventListener("click", () => {
      session.setCriterion(criterion, true);
      render();
    });
    const no = document.createElement("button");
    no.id = `${criterion}-no`;
    no.textContent = "No";
    no.addEventListener("click", () => {
      session.setCriterion(criterion, false);
      render();
    });
    row.append(label, yes, no);
    list.append(row);
  }

  el<HTMLButtonElement>("submit").addEventListener("click", () => void act(() => session.submit()));
  el<HTMLButtonElement>("retry").addEventListener("click", () => void act(() => session.retry()));

  document.addEventListener("keydown", (event) => {
    if (session.phase !== "task") {
      return;
    }
    const index = ["1", "2", "3"].indexOf(event.key);
    if (index >= 0) {
      session.toggleCriterion(CRITERIA[index]);
      render();
    } else if (event.key === "Enter" && session.canSubmit()) {
      void act(() => session.submit());
    }
  });
}

wire();
void act(() => session.start());
