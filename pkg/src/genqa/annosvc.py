"""Blinded human-evaluation service.

Pools the answers of several systems into shuffled annotation tasks,
serves them one at a time with system identity and question id withheld,
collects three-criteria judgments into an append-only fsynced log, and
reports per-system accuracy. Identical (question, answer) strings across
systems share one task and the verdict counts for every owner.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Mapping, Sequence
from urllib.parse import parse_qs, urlparse

import numpy as np

from .decoding import load_generations
from .errors import DataError


@dataclass(frozen=True)
class AnnotationTask:
    task_id: str
    question_text: str
    answer_text: str
    # hidden from annotators: which systems produced this answer for which question
    owners: tuple[tuple[str, str], ...]

    def view(self, position: int, total: int) -> dict:
        """Served payload; contains no system id and no question id."""
        return {
            "task_id": self.task_id,
            "question": self.question_text,
            "answer": self.answer_text,
            "position": position,
            "total": total,
        }


@dataclass(frozen=True)
class Judgment:
    task_id: str
    annotator_id: str
    factually_correct: bool
    natural_sounding: bool
    self_contained: bool
    timestamp: float

    def is_correct(self) -> bool:
        """Overall verdict: the conjunction of all three criteria."""
        return self.factually_correct and self.natural_sounding and self.self_contained

    def record(self) -> dict:
        return {
            "task_id": self.task_id,
            "annotator_id": self.annotator_id,
            "factually_correct": self.factually_correct,
            "natural_sounding": self.natural_sounding,
            "self_contained": self.self_contained,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_record(cls, raw: dict, where: str = "judgment") -> "Judgment":
        for key in (
            "task_id",
            "annotator_id",
            "factually_correct",
            "natural_sounding",
            "self_contained",
        ):
            if key not in raw:
                raise DataError(f"missing field {key!r}", where)
            if key.endswith(("correct", "sounding", "contained")) and not isinstance(
                raw[key], bool
            ):
                raise DataError(f"field {key!r} must be a boolean", where)
        return cls(
            task_id=str(raw["task_id"]),
            annotator_id=str(raw["annotator_id"]),
            factually_correct=raw["factually_correct"],
            natural_sounding=raw["natural_sounding"],
            self_contained=raw["self_contained"],
            timestamp=float(raw.get("timestamp", 0.0)),
        )


@dataclass(frozen=True)
class Campaign:
    id: str
    seed: int
    tasks: tuple[AnnotationTask, ...]
    annotations_per_task: int = 1


@dataclass(frozen=True)
class Done:
    judged: int


def create_campaign(
    outputs: Mapping[str, str | Path],
    seed: int,
    questions: Mapping[str, str],
    campaign_id: str = "campaign",
    annotations_per_task: int = 1,
) -> Campaign:
    """One shuffled task per distinct (question, answer) string pair.

    `outputs` maps system id to a generation-output file; `questions`
    maps qid to question text (answers files carry only the qid).
    """
    pool: dict[tuple[str, str], list[tuple[str, str]]] = {}
    order: list[tuple[str, str]] = []
    for system_id in sorted(outputs):
        for record in load_generations(outputs[system_id]):
            qid = str(record["qid"])
            if qid not in questions:
                raise DataError(
                    f"output of system {system_id!r} references unknown question {qid!r}"
                )
            key = (questions[qid], str(record["answer"]))
            if key not in pool:
                pool[key] = []
                order.append(key)
            pool[key].append((system_id, qid))
    if not order:
        raise DataError("no answers to annotate: the task pool is empty")
    rng = np.random.default_rng(seed)
    shuffled = [order[i] for i in rng.permutation(len(order))]
    width = max(4, len(str(len(shuffled))))
    tasks = tuple(
        AnnotationTask(
            task_id=f"t{index:0{width}d}",
            question_text=question,
            answer_text=answer,
            owners=tuple(pool[(question, answer)]),
        )
        for index, (question, answer) in enumerate(shuffled)
    )
    return Campaign(
        id=campaign_id, seed=seed, tasks=tasks, annotations_per_task=annotations_per_task
    )


def save_campaign(campaign: Campaign, path: str | Path) -> None:
    record = {
        "id": campaign.id,
        "seed": campaign.seed,
        "annotations_per_task": campaign.annotations_per_task,
        "tasks": [
            {
                "task_id": t.task_id,
                "question": t.question_text,
                "answer": t.answer_text,
                "owners": [list(o) for o in t.owners],
            }
            for t in campaign.tasks
        ],
    }
    Path(path).write_text(json.dumps(record, ensure_ascii=False, indent=2), "utf-8")


def load_campaign(path: str | Path) -> Campaign:
    raw = json.loads(Path(path).read_text("utf-8"))
    return Campaign(
        id=str(raw["id"]),
        seed=int(raw["seed"]),
        annotations_per_task=int(raw.get("annotations_per_task", 1)),
        tasks=tuple(
            AnnotationTask(
                task_id=str(t["task_id"]),
                question_text=str(t["question"]),
                answer_text=str(t["answer"]),
                owners=tuple((str(s), str(q)) for s, q in t["owners"]),
            )
            for t in raw["tasks"]
        ),
    )


class CampaignState:
    """Campaign plus collected judgments; replayable from the log file.

    Appends are serialized through one lock; duplicate submissions for an
    exhausted task lose the race and are rejected.
    """

    def __init__(self, campaign: Campaign, log_path: str | Path):
        self.campaign = campaign
        self.log_path = Path(log_path)
        self._by_task: dict[str, list[Judgment]] = {t.task_id: [] for t in campaign.tasks}
        self._tasks = {t.task_id: t for t in campaign.tasks}
        self._lock = threading.Lock()
        self._log_file = None
        if self.log_path.exists():
            self._replay()

    def _replay(self) -> None:
        with self.log_path.open("r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                judgment = Judgment.from_record(
                    json.loads(line), f"{self.log_path}:{lineno}"
                )
                self._admit(judgment)

    def _admit(self, judgment: Judgment) -> None:
        if judgment.task_id not in self._tasks:
            raise DataError(f"log references unknown task {judgment.task_id!r}")
        self._by_task[judgment.task_id].append(judgment)

    @property
    def judgments(self) -> list[Judgment]:
        return [j for t in self.campaign.tasks for j in self._by_task[t.task_id]]

    def _exhausted(self, task_id: str) -> bool:
        return len(self._by_task[task_id]) >= self.campaign.annotations_per_task

    def next_task(self, annotator_id: str) -> dict | Done:
        """Lowest-index task this annotator can still judge, else Done."""
        with self._lock:
            total = len(self.campaign.tasks)
            done_count = sum(1 for t in self.campaign.tasks if self._exhausted(t.task_id))
            for task in self.campaign.tasks:
                if self._exhausted(task.task_id):
                    continue
                if any(j.annotator_id == annotator_id for j in self._by_task[task.task_id]):
                    continue
                return task.view(position=done_count + 1, total=total)
            return Done(judged=sum(len(v) for v in self._by_task.values()))

    def submit_judgment(self, judgment: Judgment) -> tuple[bool, str]:
        """(accepted, reason); accepted judgments are durably logged."""
        with self._lock:
            if judgment.task_id not in self._tasks:
                return False, "unknown task"
            existing = self._by_task[judgment.task_id]
            if any(j.annotator_id == judgment.annotator_id for j in existing):
                return False, "already judged"
            if self._exhausted(judgment.task_id):
                return False, "already judged"
            self._append_to_log(judgment)
            self._admit(judgment)
            return True, "accepted"

    def _append_to_log(self, judgment: Judgment) -> None:
        if self._log_file is None:
            self._log_file = self.log_path.open("ab")
        data = json.dumps(judgment.record(), ensure_ascii=False).encode("utf-8") + b"\n"
        self._log_file.write(data)
        self._log_file.flush()
        os.fsync(self._log_file.fileno())

    def close(self) -> None:
        if self._log_file is not None:
            self._log_file.close()
            self._log_file = None

    def compute_accuracy(self) -> dict[str, dict[str, float | int]]:
        """Per-system accuracy over judged tasks; unjudged systems absent.

        A judged task is correct for its owners only if every collected
        judgment passes the three-criteria conjunction.
        """
        if not any(self._by_task.values()):
            raise DataError("campaign has no judgments yet")
        judged: dict[str, int] = {}
        correct: dict[str, int] = {}
        for task in self.campaign.tasks:
            collected = self._by_task[task.task_id]
            if not collected:
                continue
            verdict = all(j.is_correct() for j in collected)
            for system_id, _qid in task.owners:
                judged[system_id] = judged.get(system_id, 0) + 1
                correct[system_id] = correct.get(system_id, 0) + int(verdict)
        return {
            system: {"accuracy": correct[system] / judged[system], "judged": judged[system]}
            for system in sorted(judged)
        }


def replay_state(campaign: Campaign, log_path: str | Path) -> CampaignState:
    """Rebuild in-memory state purely from the durable judgment log."""
    return CampaignState(campaign, log_path)


# ---------------------------------------------------------------------------
# HTTP wire protocol
#   GET  /campaigns/{id}/next?annotator={aid}
#   POST /campaigns/{id}/judgments
#   GET  /campaigns/{id}/report

_NEXT_RE = re.compile(r"^/campaigns/([^/]+)/next$")
_JUDGMENTS_RE = re.compile(r"^/campaigns/([^/]+)/judgments$")
_REPORT_RE = re.compile(r"^/campaigns/([^/]+)/report$")

_STATIC_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json; charset=utf-8",
}


class AnnotationServer:
    def __init__(
        self,
        state: CampaignState,
        host: str = "127.0.0.1",
        port: int = 0,
        static_dir: str | Path | None = None,
        access_log: str | Path | None = None,
    ):
        self.state = state
        self.static_dir = Path(static_dir) if static_dir else None
        self._access_log_path = Path(access_log) if access_log else None
        self._access_lock = threading.Lock()
        handler = self._make_handler()
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.httpd.daemon_threads = True

    @property
    def port(self) -> int:
        return self.httpd.server_address[1]

    def _log_access(self, method: str, path: str, status: int) -> None:
        if self._access_log_path is None:
            return
        with self._access_lock:
            with self._access_log_path.open("a", encoding="utf-8") as f:
                f.write(f"{method} {path} {status}\n")

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def shutdown(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        self.state.close()

    def _make_handler(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, format: str, *args) -> None:  # silence stderr
                pass

            def _reply(self, status: int, payload: dict | bytes, content_type="application/json"):
                body = (
                    payload
                    if isinstance(payload, bytes)
                    else json.dumps(payload, ensure_ascii=False).encode("utf-8")
                )
                self.send_response(status)
                self.send_header("Content-Type", content_type)
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)
                server._log_access(self.command, self.path, status)

            def _campaign_guard(self, campaign_id: str) -> bool:
                if campaign_id != server.state.campaign.id:
                    self._reply(404, {"error": f"unknown campaign {campaign_id!r}"})
                    return False
                return True

            def do_GET(self) -> None:
                url = urlparse(self.path)
                m = _NEXT_RE.match(url.path)
                if m:
                    if not self._campaign_guard(m.group(1)):
                        return
                    params = parse_qs(url.query)
                    annotator = params.get("annotator", [""])[0]
                    if not annotator:
                        self._reply(400, {"error": "missing annotator parameter"})
                        return
                    result = server.state.next_task(annotator)
                    if isinstance(result, Done):
                        self._reply(200, {"done": True, "judged": result.judged})
                    else:
                        self._reply(200, result)
                    return
                m = _REPORT_RE.match(url.path)
                if m:
                    if not self._campaign_guard(m.group(1)):
                        return
                    try:
                        report = server.state.compute_accuracy()
                    except DataError as e:
                        self._reply(409, {"error": str(e)})
                        return
                    self._reply(200, {"systems": report})
                    return
                self._serve_static(url.path)

            def _serve_static(self, path: str) -> None:
                if server.static_dir is None:
                    self._reply(404, {"error": "not found"})
                    return
                name = "index.html" if path == "/" else path.lstrip("/")
                target = (server.static_dir / name).resolve()
                if (
                    server.static_dir.resolve() not in target.parents
                    and target != server.static_dir.resolve()
                ) or not target.is_file():
                    self._reply(404, {"error": "not found"})
                    return
                content_type = _STATIC_TYPES.get(target.suffix, "application/octet-stream")
                self._reply(200, target.read_bytes(), content_type)

            def do_POST(self) -> None:
                url = urlparse(self.path)
                m = _JUDGMENTS_RE.match(url.path)
                if not m:
                    self._reply(404, {"error": "not found"})
                    return
                if not self._campaign_guard(m.group(1)):
                    return
                length = int(self.headers.get("Content-Length", "0"))
                try:
                    raw = json.loads(self.rfile.read(length).decode("utf-8"))
                    raw.setdefault("timestamp", time.time())
                    judgment = Judgment.from_record(raw, "request body")
                except (json.JSONDecodeError, DataError, AttributeError) as e:
                    self._reply(400, {"error": f"bad judgment: {e}"})
                    return
                accepted, reason = server.state.submit_judgment(judgment)
                if accepted:
                    self._reply(200, {"accepted": True})
                else:
                    status = 404 if reason == "unknown task" else 409
                    self._reply(status, {"accepted": False, "error": reason})

        return Handler
