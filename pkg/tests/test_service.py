import base64
import hashlib
import json
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from tcig.backends.registry import default_toy_backends
from tcig.core import SegMask, encode_mask
from tcig.errors import JobSpecError, JobStateError
from tcig.service import JobService, JobStore, create_app
from tcig.service.app import build_service

TIMEOUT = 30.0


def wait_for(predicate, timeout=TIMEOUT, interval=0.02):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        value = predicate()
        if value:
            return value
        time.sleep(interval)
    raise AssertionError("timed out waiting for condition")


@pytest.fixture
def store(tmp_path):
    s = JobStore(str(tmp_path / "store"))
    yield s
    s.close()


@pytest.fixture
def small_bundle(vocab):
    return default_toy_backends(vocab, width=16, height=16, blobs=2)


@pytest.fixture
def service(small_bundle, tmp_path):
    svc = JobService(
        small_bundle, JobStore(str(tmp_path / "svc")), workers=2, loss_cadence=10
    )
    yield svc
    svc.shutdown()


@pytest.fixture
def client(service):
    app = create_app(service)
    with TestClient(app) as c:
        yield c


def small_mask_b64(vocab):
    ids = np.zeros((16, 16), dtype=np.uint8)
    ids[4:12, 4:12] = 1
    mask = SegMask.from_class_ids(ids, vocab.num_classes)
    data, _ = encode_mask(mask, vocab, "png")
    return base64.b64encode(data).decode("ascii")


def job_spec(vocab, *, max_steps=6, mode="auto", **extra):
    spec = {
        "prompt": "a cat",
        "mask_b64": small_mask_b64(vocab),
        "optimizer": {"max_steps": max_steps},
        "refine": {"strength": 0.5},
        "seed": 3,
        "mode": mode,
    }
    spec.update(extra)
    return spec


def drain_events(service, job_id):
    return list(service.subscribe(job_id, poll_interval=0.02))


class TestJobStore:
    def test_job_round_trip_and_order(self, store):
        store.put_job("b", {"id": "b", "status": "pending"})
        store.put_job("a", {"id": "a", "status": "pending"})
        store.put_job("b", {"id": "b", "status": "done"})
        assert store.get_job("b") == {"id": "b", "status": "done"}
        assert store.get_job("missing") is None
        # update keeps the original creation order
        assert [d["id"] for d in store.list_jobs()] == ["b", "a"]

    def test_event_log_gap_free(self, store):
        assert store.append_event("j", {"type": "status"}) == 0
        assert store.append_event("j", {"type": "loss"}) == 1
        assert store.append_event("other", {"type": "status"}) == 0
        assert store.append_event("j", {"type": "terminal"}) == 2
        seqs = [seq for seq, _ in store.events_after("j")]
        assert seqs == [0, 1, 2]
        assert store.event_count("j") == 3

    def test_events_after_cursor(self, store):
        for i in range(5):
            store.append_event("j", {"i": i})
        tail = store.events_after("j", after=2)
        assert [seq for seq, _ in tail] == [3, 4]
        assert [doc["i"] for _, doc in tail] == [3, 4]

    def test_artifact_content_addressing(self, store):
        data = b"payload-bytes"
        art_id = store.put_artifact(data)
        assert art_id == hashlib.sha256(data).hexdigest()
        assert store.put_artifact(data) == art_id  # dedupe
        assert store.get_artifact(art_id) == data

    def test_artifact_id_guard(self, store):
        assert store.get_artifact("../../etc/passwd") is None
        assert store.get_artifact("ZZ" * 32) is None
        assert store.get_artifact("ab" * 31) is None  # wrong length
        assert store.get_artifact("0" * 64) is None  # valid shape, unknown

    def test_persistence_across_reopen(self, tmp_path):
        root = str(tmp_path / "p")
        first = JobStore(root)
        first.put_job("j", {"id": "j", "status": "done"})
        first.append_event("j", {"type": "status"})
        art = first.put_artifact(b"blob")
        first.close()
        second = JobStore(root)
        try:
            assert second.get_job("j")["status"] == "done"
            assert second.event_count("j") == 1
            assert second.get_artifact(art) == b"blob"
        finally:
            second.close()


class TestJobServiceAuto:
    def test_auto_job_event_stream(self, service, vocab):
        job_id = service.submit(job_spec(vocab))
        events = drain_events(service, job_id)
        seqs = [seq for seq, _ in events]
        assert seqs == list(range(len(seqs)))  # gap-free from 0
        types = [doc["type"] for _, doc in events]
        # 6 steps, cadence 10: loss rows at step 0 and the final step 5
        assert types == [
            "status", "status", "loss", "loss", "candidate",
            "status", "candidate", "status", "terminal",
        ]
        statuses = [doc["status"] for _, doc in events if doc["type"] == "status"]
        assert statuses == ["pending", "stage1_running", "stage2_running", "done"]
        loss_steps = [doc["step"] for _, doc in events if doc["type"] == "loss"]
        assert loss_steps == [0, 5]
        assert events[-1][1] == {"type": "terminal", "status": "done"}

    def test_job_doc_artifacts_resolve(self, service, vocab):
        job_id = service.submit(job_spec(vocab))
        drain_events(service, job_id)
        doc = service.get_job_doc(job_id)
        assert doc["status"] == "done"
        assert doc["mask_artifact"]
        for entry in doc["stage1"] + doc["stage2"]:
            data = service.store.get_artifact(entry["artifact"])
            assert data is not None
            assert data[:8] == b"\x89PNG\r\n\x1a\n"
            assert hashlib.sha256(data).hexdigest() == entry["artifact"]

    @pytest.mark.parametrize("fmt", ["png", "pgm"])
    def test_mask_artifact_is_the_upload_verbatim(self, service, vocab, fmt):
        ids = np.zeros((16, 16), dtype=np.uint8)
        ids[4:12, 4:12] = 1
        mask = SegMask.from_class_ids(ids, vocab.num_classes)
        uploaded, _ = encode_mask(mask, vocab, fmt)
        spec = job_spec(vocab, mask_b64=base64.b64encode(uploaded).decode("ascii"))
        job_id = service.submit(spec)
        drain_events(service, job_id)
        doc = service.get_job_doc(job_id)
        assert service.store.get_artifact(doc["mask_artifact"]) == uploaded

    def test_candidate_events_carry_artifacts(self, service, vocab):
        job_id = service.submit(job_spec(vocab, fan_out={
            "n_stage1": 2, "n_stage2_per_stage1": 1,
        }))
        events = drain_events(service, job_id)
        candidates = [doc for _, doc in events if doc["type"] == "candidate"]
        stage1 = [c for c in candidates if c["stage"] == 1]
        stage2 = [c for c in candidates if c["stage"] == 2]
        assert [c["id"] for c in stage1] == ["s1-0", "s1-1"]
        assert [c["id"] for c in stage2] == ["s2-0-0", "s2-1-0"]
        assert all("final_loss" in c for c in stage1)
        assert all(c["source_id"] in ("s1-0", "s1-1") for c in stage2)
        assert all(service.store.get_artifact(c["artifact"]) for c in candidates)

    @pytest.mark.parametrize("max_steps,expected_steps", [
        (25, [0, 10, 20, 24]),
        (21, [0, 10, 20]),
        (1, [0]),
    ])
    def test_loss_cadence(self, service, vocab, max_steps, expected_steps):
        job_id = service.submit(job_spec(vocab, max_steps=max_steps))
        events = drain_events(service, job_id)
        steps = [doc["step"] for _, doc in events if doc["type"] == "loss"]
        assert steps == expected_steps

    def test_forced_full_run_bounded_loss_events(self, service, vocab):
        spec = job_spec(vocab)
        spec["optimizer"] = {
            "max_steps": 300, "plateau_patience": 300, "plateau_tolerance": 0.0,
        }
        job_id = service.submit(spec)
        events = drain_events(service, job_id)
        losses = [doc for _, doc in events if doc["type"] == "loss"]
        # steps 0,10,...,290 plus the always-reported final step 299
        assert len(losses) == 31
        assert losses[-1]["step"] == 299

    def test_invalid_spec_rejected_before_any_state(self, service):
        with pytest.raises(JobSpecError):
            service.submit({"prompt": ""})
        assert service.store.list_jobs() == []

    def test_subscribe_unknown_job(self, service):
        with pytest.raises(KeyError):
            next(service.subscribe("nope"))

    def test_subscribe_replay_from_cursor(self, service, vocab):
        job_id = service.submit(job_spec(vocab))
        events = drain_events(service, job_id)
        cutoff = events[-3][0]
        tail = list(service.subscribe(job_id, after=cutoff, poll_interval=0.02))
        assert tail == events[-2:]

    def test_runtime_failure_reaches_terminal(self, service, vocab):
        job_id = service.submit(job_spec(vocab, prompt="a unicorn"))
        events = drain_events(service, job_id)
        final = [doc for _, doc in events if doc["type"] == "status"][-1]
        assert final["status"] == "failed"
        assert "unicorn" in final["error"]
        assert final["failed_stage"] == 1
        assert events[-1][1] == {"type": "terminal", "status": "failed"}
        assert service.get_job_doc(job_id)["status"] == "failed"


class TestJobServiceSelect:
    def submit_interactive(self, service, vocab, **extra):
        job_id = service.submit(job_spec(vocab, mode="interactive", **extra))
        wait_for(
            lambda: service.get_job_doc(job_id)["status"] == "awaiting_selection"
        )
        return job_id

    def test_select_completes_job(self, service, vocab):
        job_id = self.submit_interactive(
            service, vocab, fan_out={"n_stage1": 2, "n_stage2_per_stage1": 1}
        )
        service.select(job_id, ["s1-1"])
        wait_for(lambda: service.get_job_doc(job_id)["status"] == "done")
        doc = service.get_job_doc(job_id)
        assert [s["id"] for s in doc["stage2"]] == ["s2-1-0"]
        assert doc["stage2"][0]["source_id"] == "s1-1"

    def test_select_override_recorded(self, service, vocab):
        job_id = self.submit_interactive(service, vocab)
        service.select(job_id, ["s1-0"], {"strength": 0.9})
        wait_for(lambda: service.get_job_doc(job_id)["status"] == "done")
        doc = service.get_job_doc(job_id)
        assert doc["stage2"][0]["strength"] == 0.9
        # events carry the effective strength too
        events = drain_events(service, job_id)
        s2 = [d for _, d in events if d["type"] == "candidate" and d["stage"] == 2]
        assert s2[0]["strength"] == 0.9

    def test_select_validation(self, service, vocab):
        job_id = self.submit_interactive(service, vocab)
        with pytest.raises(JobSpecError, match="s1-7"):
            service.select(job_id, ["s1-7"])
        with pytest.raises(JobSpecError, match="at least one"):
            service.select(job_id, [])
        with pytest.raises(JobSpecError, match="strength"):
            service.select(job_id, ["s1-0"], {"strength": 1.5})
        with pytest.raises(KeyError):
            service.select("missing", ["s1-0"])
        # the job is still selectable after rejected attempts
        assert service.get_job_doc(job_id)["status"] == "awaiting_selection"

    def test_select_done_job_conflicts(self, service, vocab):
        job_id = service.submit(job_spec(vocab))
        drain_events(service, job_id)
        with pytest.raises(JobStateError, match="not awaiting_selection"):
            service.select(job_id, ["s1-0"])


class TestRestartRecovery:
    def test_interrupted_jobs_marked_failed(self, small_bundle, tmp_path):
        root = str(tmp_path / "r")
        store = JobStore(root)
        for jid, status in (
            ("dead-pending", "pending"),
            ("dead-s1", "stage1_running"),
            ("dead-s2", "stage2_running"),
            ("finished", "done"),
        ):
            store.put_job(jid, {"id": jid, "status": status})
        svc = JobService(small_bundle, store)
        try:
            for jid in ("dead-pending", "dead-s1", "dead-s2"):
                doc = svc.get_job_doc(jid)
                assert doc["status"] == "failed"
                assert doc["error"] == "interrupted by service restart"
                events = store.events_after(jid)
                assert [d["type"] for _, d in events] == ["status", "terminal"]
            assert svc.get_job_doc("finished")["status"] == "done"
            assert store.event_count("finished") == 0
        finally:
            svc.shutdown()

    def test_awaiting_selection_survives_restart(self, small_bundle, vocab, tmp_path):
        root = str(tmp_path / "r2")
        first = JobService(small_bundle, JobStore(root))
        job_id = first.submit(job_spec(vocab, mode="interactive"))
        wait_for(
            lambda: first.get_job_doc(job_id)["status"] == "awaiting_selection"
        )
        first.shutdown()

        second = JobService(small_bundle, JobStore(root))
        try:
            assert second.get_job_doc(job_id)["status"] == "awaiting_selection"
            second.select(job_id, ["s1-0"])
            wait_for(lambda: second.get_job_doc(job_id)["status"] == "done")
            doc = second.get_job_doc(job_id)
            assert doc["stage2"][0]["source_id"] == "s1-0"
            data = second.store.get_artifact(doc["stage2"][0]["artifact"])
            assert data[:8] == b"\x89PNG\r\n\x1a\n"
        finally:
            second.shutdown()


class TestHTTPApi:
    def test_submit_and_fetch(self, client, vocab):
        resp = client.post("/jobs", json=job_spec(vocab))
        assert resp.status_code == 201
        body = resp.json()
        assert body["status"] == "pending"
        job_id = body["id"]
        doc = wait_for(
            lambda: (d := client.get(f"/jobs/{job_id}").json())["status"] == "done"
            and d or None
        )
        assert doc["id"] == job_id
        assert len(doc["stage1"]) == 1 and len(doc["stage2"]) == 1

    def test_unknown_job_404(self, client):
        resp = client.get("/jobs/does-not-exist")
        assert resp.status_code == 404
        assert resp.json() == {"detail": "unknown job"}
        assert client.get("/jobs/does-not-exist/events").status_code == 404

    def test_invalid_spec_422_lists_violations(self, client):
        resp = client.post("/jobs", json={"prompt": "", "seed": "x"})
        assert resp.status_code == 422
        body = resp.json()
        assert body["detail"] == "invalid job spec"
        fields = {v["field"] for v in body["violations"]}
        assert {"prompt", "seed", "mask"} <= fields
        for v in body["violations"]:
            assert v["message"]

    def test_non_json_body_422(self, client):
        resp = client.post(
            "/jobs", content=b"not json",
            headers={"content-type": "application/json"},
        )
        assert resp.status_code == 422

    def read_sse(self, client, job_id, headers=None):
        events = []
        with client.stream(
            "GET", f"/jobs/{job_id}/events", headers=headers or {}
        ) as resp:
            assert resp.status_code == 200
            assert resp.headers["content-type"].startswith("text/event-stream")
            current_id = None
            for line in resp.iter_lines():
                if line.startswith("id: "):
                    current_id = int(line[4:])
                elif line.startswith("data: "):
                    events.append((current_id, json.loads(line[6:])))
        return events

    def test_event_stream_and_replay(self, client, vocab):
        job_id = client.post("/jobs", json=job_spec(vocab)).json()["id"]
        events = self.read_sse(client, job_id)
        assert [seq for seq, _ in events] == list(range(len(events)))
        assert events[-1][1]["type"] == "terminal"
        # reconnect midway using Last-Event-ID
        cutoff = events[-4][0]
        tail = self.read_sse(
            client, job_id, headers={"Last-Event-ID": str(cutoff)}
        )
        assert tail == events[-3:]

    def test_select_flow_over_http(self, client, vocab):
        job_id = client.post(
            "/jobs", json=job_spec(vocab, mode="interactive")
        ).json()["id"]
        wait_for(
            lambda: client.get(f"/jobs/{job_id}").json()["status"]
            == "awaiting_selection"
        )
        resp = client.post(
            f"/jobs/{job_id}/select",
            json={"stage1_ids": ["s1-0"], "refine": {"strength": 0.8}},
        )
        assert resp.status_code == 200
        wait_for(lambda: client.get(f"/jobs/{job_id}").json()["status"] == "done")
        doc = client.get(f"/jobs/{job_id}").json()
        assert doc["stage2"][0]["strength"] == 0.8

    def test_select_errors_over_http(self, client, vocab):
        assert client.post(
            "/jobs/missing/select", json={"stage1_ids": ["s1-0"]}
        ).status_code == 404

        job_id = client.post("/jobs", json=job_spec(vocab)).json()["id"]
        wait_for(lambda: client.get(f"/jobs/{job_id}").json()["status"] == "done")
        resp = client.post(f"/jobs/{job_id}/select", json={"stage1_ids": ["s1-0"]})
        assert resp.status_code == 409

        job2 = client.post(
            "/jobs", json=job_spec(vocab, mode="interactive")
        ).json()["id"]
        wait_for(
            lambda: client.get(f"/jobs/{job2}").json()["status"]
            == "awaiting_selection"
        )
        resp = client.post(f"/jobs/{job2}/select", json={"stage1_ids": ["s1-9"]})
        assert resp.status_code == 422
        assert resp.json()["violations"][0]["field"] == "stage1_ids"

    def test_artifact_endpoint(self, client, service, vocab):
        job_id = client.post("/jobs", json=job_spec(vocab)).json()["id"]
        wait_for(lambda: client.get(f"/jobs/{job_id}").json()["status"] == "done")
        doc = client.get(f"/jobs/{job_id}").json()
        art = doc["stage2"][0]["artifact"]
        resp = client.get(f"/artifacts/{art}")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        assert hashlib.sha256(resp.content).hexdigest() == art

        pgm_id = service.store.put_artifact(b"P5\n2 2\n255\n\x00\x01\x02\x03")
        assert client.get(f"/artifacts/{pgm_id}").headers["content-type"] \
            == "image/x-portable-graymap"

        assert client.get("/artifacts/unknown").status_code == 404
        assert client.get(f"/artifacts/{'0' * 64}").status_code == 404

    def test_vocab_endpoint(self, client, vocab):
        resp = client.get("/vocab")
        assert resp.status_code == 200
        doc = resp.json()
        assert doc["0"]["name"] == "background"
        assert len(doc) == vocab.num_classes


class TestBuildService:
    def test_config_wiring(self, tmp_path, monkeypatch):
        monkeypatch.delenv("TCIG_STORAGE_ROOT", raising=False)
        config = {
            "storage_root": str(tmp_path / "wired"),
            "backends": {
                "generator": {"name": "toy", "width": 16, "height": 16, "blobs": 2}
            },
            "workers": 1,
            "loss_cadence": 5,
        }
        svc = build_service(config)
        try:
            assert svc.backends.generator.width == 16
            assert svc.loss_cadence == 5
            assert svc.store.root == str(tmp_path / "wired")
        finally:
            svc.shutdown()

    def test_env_overrides_storage_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TCIG_STORAGE_ROOT", str(tmp_path / "env-root"))
        svc = build_service({"storage_root": str(tmp_path / "cfg-root")})
        try:
            assert svc.store.root == str(tmp_path / "env-root")
        finally:
            svc.shutdown()

    def test_custom_vocab(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TCIG_STORAGE_ROOT", str(tmp_path / "v"))
        config = {
            "vocab": {
                "0": {"name": "background", "color": [0.0, 0.0, 0.0]},
                "1": {"name": "blob", "color": [1.0, 0.0, 0.0]},
            }
        }
        svc = build_service(config)
        try:
            assert svc.backends.vocab.num_classes == 2
            assert svc.backends.vocab.name_of(1) == "blob"
        finally:
            svc.shutdown()
