from __future__ import annotations

import json
import threading
import urllib.error
import urllib.request

import pytest

from genqa.annosvc import (
    AnnotationServer,
    Campaign,
    CampaignState,
    Done,
    Judgment,
    create_campaign,
    load_campaign,
    replay_state,
    save_campaign,
)
from genqa.decoding import GeneratedAnswer, write_generations
from genqa.errors import DataError

QUESTIONS = {
    "item1": "how does a siphon start ?",
    "item2": "why is the sky blue ?",
    "item3": "what melts glass ?",
}


def _outputs(tmp_path, answers_by_system):
    """answers_by_system: {system: {qid: answer text}} -> files on disk."""
    paths = {}
    for system, answers in answers_by_system.items():
        path = tmp_path / f"{system}.jsonl"
        write_generations(
            [GeneratedAnswer(qid, (), text, -1.0) for qid, text in answers.items()],
            path,
            system=system,
        )
        paths[system] = path
    return paths


def _judgment(task_id, annotator="ann-1", ok=True, **overrides):
    fields = dict(
        task_id=task_id,
        annotator_id=annotator,
        factually_correct=ok,
        natural_sounding=ok,
        self_contained=ok,
        timestamp=12.5,
    )
    fields.update(overrides)
    return Judgment(**fields)


def _basic_campaign(tmp_path, seed=7):
    paths = _outputs(
        tmp_path,
        {
            "alderaan": {"item1": "water flows uphill first", "item2": "light scatters", "item3": "heat melts glass"},
            "bespin": {"item1": "gravity pulls the column", "item2": "rayleigh scattering", "item3": "a hot furnace"},
        },
    )
    return create_campaign(paths, seed=seed, questions=QUESTIONS)


class TestCreateCampaign:
    def test_two_systems_three_questions(self, tmp_path):
        campaign = _basic_campaign(tmp_path)
        assert len(campaign.tasks) == 6
        owners = sorted(o for t in campaign.tasks for o in t.owners)
        assert len(owners) == 6

    def test_identical_answers_share_a_task(self, tmp_path):
        paths = _outputs(
            tmp_path,
            {
                "alderaan": {"item1": "the same words", "item2": "different a"},
                "bespin": {"item1": "the same words", "item2": "different b"},
            },
        )
        campaign = create_campaign(paths, seed=1, questions=QUESTIONS)
        assert len(campaign.tasks) == 3
        shared = [t for t in campaign.tasks if t.answer_text == "the same words"]
        assert len(shared) == 1
        assert sorted(s for s, _ in shared[0].owners) == ["alderaan", "bespin"]

    def test_seed_determinism(self, tmp_path):
        a = _basic_campaign(tmp_path, seed=7)
        b = _basic_campaign(tmp_path, seed=7)
        assert a == b

    def test_seed_changes_order(self, tmp_path):
        orders = {
            tuple(t.answer_text for t in _basic_campaign(tmp_path, seed=s).tasks)
            for s in range(6)
        }
        assert len(orders) > 1

    def test_task_order_is_a_permutation(self, tmp_path):
        campaign = _basic_campaign(tmp_path)
        answers = sorted(t.answer_text for t in campaign.tasks)
        assert len(set(answers)) == 6

    def test_unknown_qid_rejected(self, tmp_path):
        paths = _outputs(tmp_path, {"sys": {"ghost": "answer"}})
        with pytest.raises(DataError, match="unknown question"):
            create_campaign(paths, seed=0, questions=QUESTIONS)

    def test_empty_pool_rejected(self, tmp_path):
        paths = _outputs(tmp_path, {"sys": {}})
        with pytest.raises(DataError, match="empty"):
            create_campaign(paths, seed=0, questions=QUESTIONS)

    def test_file_round_trip(self, tmp_path):
        campaign = _basic_campaign(tmp_path)
        path = tmp_path / "campaign.json"
        save_campaign(campaign, path)
        assert load_campaign(path) == campaign


class TestServingAndJudgments:
    def test_fresh_campaign_serves_first_task(self, tmp_path):
        campaign = _basic_campaign(tmp_path)
        state = CampaignState(campaign, tmp_path / "log.jsonl")
        view = state.next_task("ann-1")
        assert view["task_id"] == campaign.tasks[0].task_id
        assert view["position"] == 1
        assert view["total"] == 6

    def test_view_is_blinded(self, tmp_path):
        campaign = _basic_campaign(tmp_path)
        state = CampaignState(campaign, tmp_path / "log.jsonl")
        view = state.next_task("ann-1")
        payload = json.dumps(view)
        for system_id in ("alderaan", "bespin"):
            assert system_id not in payload
        for qid in QUESTIONS:
            assert qid not in payload
        assert set(view) == {"task_id", "question", "answer", "position", "total"}

    def test_single_annotation_exhausts_tasks_for_everyone(self, tmp_path):
        campaign = _basic_campaign(tmp_path)
        state = CampaignState(campaign, tmp_path / "log.jsonl")
        first = state.next_task("ann-1")
        accepted, _ = state.submit_judgment(_judgment(first["task_id"], "ann-1"))
        assert accepted
        view = state.next_task("ann-2")
        assert view["task_id"] == campaign.tasks[1].task_id

    def test_done_after_all_tasks(self, tmp_path):
        campaign = _basic_campaign(tmp_path)
        state = CampaignState(campaign, tmp_path / "log.jsonl")
        for task in campaign.tasks:
            accepted, _ = state.submit_judgment(_judgment(task.task_id))
            assert accepted
        result = state.next_task("ann-1")
        assert isinstance(result, Done)
        assert result.judged == 6

    def test_duplicate_judgment_rejected(self, tmp_path):
        campaign = _basic_campaign(tmp_path)
        state = CampaignState(campaign, tmp_path / "log.jsonl")
        task_id = campaign.tasks[0].task_id
        assert state.submit_judgment(_judgment(task_id, "ann-1"))[0]
        accepted, reason = state.submit_judgment(_judgment(task_id, "ann-2"))
        assert not accepted
        assert reason == "already judged"

    def test_unknown_task_rejected(self, tmp_path):
        campaign = _basic_campaign(tmp_path)
        state = CampaignState(campaign, tmp_path / "log.jsonl")
        accepted, reason = state.submit_judgment(_judgment("t9999"))
        assert not accepted
        assert reason == "unknown task"

    def test_log_replay_reconstructs_state(self, tmp_path):
        campaign = _basic_campaign(tmp_path)
        log = tmp_path / "log.jsonl"
        state = CampaignState(campaign, log)
        for task in campaign.tasks[:4]:
            state.submit_judgment(_judgment(task.task_id, ok=task.task_id < "t0002"))
        state.close()
        replayed = replay_state(campaign, log)
        assert replayed.judgments == state.judgments
        assert replayed.next_task("ann-1") == state.next_task("ann-1")
        assert replayed.compute_accuracy() == state.compute_accuracy()

    def test_multi_annotation_configuration(self, tmp_path):
        campaign = _basic_campaign(tmp_path)
        campaign = Campaign(campaign.id, campaign.seed, campaign.tasks, annotations_per_task=2)
        state = CampaignState(campaign, tmp_path / "log.jsonl")
        task_id = campaign.tasks[0].task_id
        assert state.submit_judgment(_judgment(task_id, "ann-1"))[0]
        assert not state.submit_judgment(_judgment(task_id, "ann-1"))[0]
        assert state.submit_judgment(_judgment(task_id, "ann-2"))[0]
        assert not state.submit_judgment(_judgment(task_id, "ann-3"))[0]


class TestAccuracy:
    def test_two_of_three_correct(self, tmp_path):
        paths = _outputs(
            tmp_path,
            {"solo": {"item1": "a", "item2": "b", "item3": "c"}},
        )
        campaign = create_campaign(paths, seed=2, questions=QUESTIONS)
        state = CampaignState(campaign, tmp_path / "log.jsonl")
        verdicts = [True, True, False]
        for task, ok in zip(campaign.tasks, verdicts):
            state.submit_judgment(_judgment(task.task_id, ok=ok))
        report = state.compute_accuracy()
        assert report["solo"]["accuracy"] == pytest.approx(2 / 3)
        assert report["solo"]["judged"] == 3

    def test_conjunction_rule(self, tmp_path):
        paths = _outputs(tmp_path, {"solo": {"item1": "a"}})
        campaign = create_campaign(paths, seed=2, questions=QUESTIONS)
        state = CampaignState(campaign, tmp_path / "log.jsonl")
        state.submit_judgment(
            _judgment(campaign.tasks[0].task_id, factually_correct=True,
                      natural_sounding=False, self_contained=True)
        )
        assert state.compute_accuracy()["solo"]["accuracy"] == 0.0

    def test_unjudged_system_absent(self, tmp_path):
        campaign = _basic_campaign(tmp_path)
        state = CampaignState(campaign, tmp_path / "log.jsonl")
        # judge only tasks owned solely by one system
        for task in campaign.tasks:
            if {s for s, _ in task.owners} == {"alderaan"}:
                state.submit_judgment(_judgment(task.task_id))
        report = state.compute_accuracy()
        assert "alderaan" in report
        assert "bespin" not in report

    def test_shared_task_counts_for_both(self, tmp_path):
        paths = _outputs(
            tmp_path,
            {"alderaan": {"item1": "same"}, "bespin": {"item1": "same"}},
        )
        campaign = create_campaign(paths, seed=0, questions=QUESTIONS)
        state = CampaignState(campaign, tmp_path / "log.jsonl")
        state.submit_judgment(_judgment(campaign.tasks[0].task_id))
        report = state.compute_accuracy()
        assert report["alderaan"] == {"accuracy": 1.0, "judged": 1}
        assert report["bespin"] == {"accuracy": 1.0, "judged": 1}

    def test_no_judgments_is_an_error(self, tmp_path):
        campaign = _basic_campaign(tmp_path)
        state = CampaignState(campaign, tmp_path / "log.jsonl")
        with pytest.raises(DataError):
            state.compute_accuracy()


class TestHttpServer:
    @pytest.fixture
    def server(self, tmp_path):
        campaign = _basic_campaign(tmp_path)
        state = CampaignState(campaign, tmp_path / "judgments.jsonl")
        server = AnnotationServer(state, port=0, access_log=tmp_path / "access.log")
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        yield server
        server.shutdown()

    def _get(self, server, path):
        try:
            with urllib.request.urlopen(f"http://127.0.0.1:{server.port}{path}") as resp:
                return resp.status, json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as e:
            return e.code, json.loads(e.read().decode("utf-8"))

    def _post(self, server, path, body):
        request = urllib.request.Request(
            f"http://127.0.0.1:{server.port}{path}",
            data=json.dumps(body).encode("utf-8"),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(request) as resp:
                return resp.status, json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as e:
            return e.code, json.loads(e.read().decode("utf-8"))

    def test_full_annotation_round_trip(self, server, tmp_path):
        campaign_id = server.state.campaign.id
        served_payloads = []
        while True:
            status, view = self._get(server, f"/campaigns/{campaign_id}/next?annotator=ann-1")
            assert status == 200
            if view.get("done"):
                assert view["judged"] == 6
                break
            served_payloads.append(json.dumps(view))
            status, reply = self._post(
                server,
                f"/campaigns/{campaign_id}/judgments",
                {
                    "task_id": view["task_id"],
                    "annotator_id": "ann-1",
                    "factually_correct": True,
                    "natural_sounding": True,
                    "self_contained": True,
                },
            )
            assert status == 200 and reply == {"accepted": True}
        assert len(served_payloads) == 6
        for payload in served_payloads:
            assert "alderaan" not in payload and "bespin" not in payload
            assert "item1" not in payload and "item2" not in payload and "item3" not in payload

        status, report = self._get(server, f"/campaigns/{campaign_id}/report")
        assert status == 200
        assert report["systems"]["alderaan"]["accuracy"] == 1.0
        assert report["systems"]["bespin"]["judged"] == 3

        log_lines = (tmp_path / "access.log").read_text("utf-8").splitlines()
        assert all(
            line.split()[1].startswith(f"/campaigns/{campaign_id}/") for line in log_lines
        )

    def test_duplicate_judgment_conflict(self, server):
        campaign_id = server.state.campaign.id
        _, view = self._get(server, f"/campaigns/{campaign_id}/next?annotator=a")
        body = {
            "task_id": view["task_id"],
            "annotator_id": "a",
            "factually_correct": True,
            "natural_sounding": True,
            "self_contained": True,
        }
        assert self._post(server, f"/campaigns/{campaign_id}/judgments", body)[0] == 200
        status, reply = self._post(server, f"/campaigns/{campaign_id}/judgments", body)
        assert status == 409
        assert reply["error"] == "already judged"

    def test_unknown_campaign_404(self, server):
        status, _ = self._get(server, "/campaigns/ghost/next?annotator=a")
        assert status == 404

    def test_report_before_judgments_conflict(self, server):
        campaign_id = server.state.campaign.id
        status, _ = self._get(server, f"/campaigns/{campaign_id}/report")
        assert status == 409

    def test_missing_annotator_param(self, server):
        campaign_id = server.state.campaign.id
        status, _ = self._get(server, f"/campaigns/{campaign_id}/next")
        assert status == 400

    def test_malformed_judgment_400(self, server):
        campaign_id = server.state.campaign.id
        status, _ = self._post(
            server, f"/campaigns/{campaign_id}/judgments", {"task_id": "t0000"}
        )
        assert status == 400
