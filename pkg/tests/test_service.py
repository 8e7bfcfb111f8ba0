"""Tests for the HTTP inference service."""

import json
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from fastapi.testclient import TestClient

from conftest import TINY_MODEL_CONFIG
from tsedit.datastore import CHECKPOINT_FORMAT_VERSION, Checkpoint
from tsedit.model import Model
from tsedit.service import ServiceState, create_app
from tsedit.synthgen import SynthConfig, generate_dataset
from tsedit.textembed import BuiltinHashEmbedder

T = TINY_MODEL_CONFIG.T


@pytest.fixture(scope="module")
def full_schema_dataset():
    return generate_dataset(SynthConfig(T=T, samples_per_combination=2, seed=8))


@pytest.fixture(scope="module")
def service_client(full_schema_dataset):
    provider = BuiltinHashEmbedder(768)
    model = Model(TINY_MODEL_CONFIG, provider)
    ckpt = Checkpoint(
        format_version=CHECKPOINT_FORMAT_VERSION,
        config=model.config,
        params=model.export_params(),
        provider_fingerprint=provider.fingerprint,
        extra={"schema": full_schema_dataset.schema.to_dict()},
    )
    state = ServiceState(model=model, checkpoint=ckpt, dataset=full_schema_dataset)
    return TestClient(create_app(state), raise_server_exceptions=False)


@pytest.fixture()
def unloaded_client():
    return TestClient(create_app(ServiceState()), raise_server_exceptions=False)


def edit_body(**overrides):
    body = {"series": list(np.linspace(-1.0, 1.0, T)),
            "instruction": "The time series shows upward linear trend. No seasonal pattern. "
                           "No sharp shifts. The time series exhibits low variability.",
            "weights": [0.0, 0.9]}
    body.update(overrides)
    return body


class TestHealth:
    def test_503_before_load_with_api_error_body(self, unloaded_client):
        resp = unloaded_client.get("/api/health")
        assert resp.status_code == 503
        body = resp.json()
        assert body["code"] == "not-loaded" and "message" in body

    def test_200_after_load_reports_fingerprints(self, service_client):
        resp = service_client.get("/api/health")
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "ok"
        assert body["provider"] == "builtin-hash:768:v1"
        assert len(body["checkpointFingerprint"]) == 16

    def test_health_is_stable(self, service_client):
        assert service_client.get("/api/health").content == service_client.get("/api/health").content


class TestTemplates:
    def test_four_attributes_with_expected_level_counts(self, service_client):
        body = service_client.get("/api/templates").json()
        counts = {a["name"]: len(a["levels"]) for a in body["attributes"]}
        assert counts == {"trend": 5, "seasonality": 2, "shift": 3, "noise": 2}

    def test_every_level_has_a_sentence(self, service_client):
        body = service_client.get("/api/templates").json()
        for attr in body["attributes"]:
            for level in attr["levels"]:
                assert body["templates"][attr["name"]][level]

    def test_response_stable_across_calls(self, service_client):
        a = service_client.get("/api/templates").content
        b = service_client.get("/api/templates").content
        assert a == b


class TestSample:
    def test_no_filter_returns_a_test_series(self, service_client, full_schema_dataset):
        body = service_client.get("/api/datasets/sample").json()
        ids = {s.id for s in full_schema_dataset.split("test")}
        assert body["id"] in ids

    def test_attribute_filter_respected(self, service_client):
        resp = service_client.get("/api/datasets/sample?attributes=noise=high")
        assert resp.status_code == 200
        assert resp.json()["attributes"]["noise"] == "high"

    def test_impossible_filter_is_404(self, service_client):
        resp = service_client.get("/api/datasets/sample?attributes=noise=imaginary")
        assert resp.status_code == 404
        assert resp.json()["code"] == "no-match"

    def test_seeded_query_is_reproducible(self, service_client):
        a = service_client.get("/api/datasets/sample?seed=5").content
        b = service_client.get("/api/datasets/sample?seed=5").content
        assert a == b


class TestEdit:
    def test_two_weights_give_two_curves_of_length_T(self, service_client):
        resp = service_client.post("/api/edit", json=edit_body())
        assert resp.status_code == 200
        body = resp.json()
        assert [e["w"] for e in body["edits"]] == [0.0, 0.9]
        assert all(len(e["values"]) == T for e in body["edits"])
        assert len(body["zNorms"]) == 2
        assert body["reconstruction"] == body["edits"][0]["values"]

    def test_reconstruction_null_when_zero_not_requested(self, service_client):
        body = service_client.post("/api/edit", json=edit_body(weights=[0.5])).json()
        assert body["reconstruction"] is None

    def test_empty_weights_is_400(self, service_client):
        resp = service_client.post("/api/edit", json=edit_body(weights=[]))
        assert resp.status_code == 400
        assert resp.json()["code"] == "invalid-weights"

    def test_series_and_series_id_together_rejected(self, service_client, full_schema_dataset):
        resp = service_client.post("/api/edit", json=edit_body(seriesId=full_schema_dataset.series[0].id))
        assert resp.status_code == 400

    def test_unknown_series_id_is_404(self, service_client):
        body = edit_body()
        del body["series"]
        body["seriesId"] = "nope"
        resp = service_client.post("/api/edit", json=body)
        assert resp.status_code == 404
        assert resp.json()["code"] == "unknown-series"

    def test_series_id_path_works(self, service_client, full_schema_dataset):
        body = edit_body()
        del body["series"]
        body["seriesId"] = full_schema_dataset.series[0].id
        resp = service_client.post("/api/edit", json=body)
        assert resp.status_code == 200

    def test_wrong_length_is_400_never_truncated(self, service_client):
        resp = service_client.post("/api/edit", json=edit_body(series=[0.0] * (T + 5)))
        assert resp.status_code == 400
        assert resp.json()["code"] == "invalid-length"

    def test_edit_before_load_is_503(self, unloaded_client):
        resp = unloaded_client.post("/api/edit", json=edit_body())
        assert resp.status_code == 503

    def test_identical_requests_get_identical_bodies(self, service_client):
        a = service_client.post("/api/edit", json=edit_body()).content
        b = service_client.post("/api/edit", json=edit_body()).content
        assert a == b

    def test_concurrent_identical_requests_byte_identical(self, service_client):
        def call(_):
            return service_client.post("/api/edit", json=edit_body()).content

        with ThreadPoolExecutor(max_workers=8) as pool:
            bodies = list(pool.map(call, range(8)))
        assert len(set(bodies)) == 1

    def test_float_serialization_round_trips(self, service_client):
        raw = service_client.post("/api/edit", json=edit_body(weights=[0.3])).content
        body = json.loads(raw)
        again = json.loads(json.dumps(body))
        assert again["edits"][0]["values"] == body["edits"][0]["values"]


UI_DIST = os.path.join(os.path.dirname(__file__), "..", "frontend", "dist")


@pytest.mark.skipif(not os.path.exists(os.path.join(UI_DIST, "index.html")),
                    reason="frontend not built (cd frontend && npm run build)")
def test_static_ui_served_from_root(full_schema_dataset):
    provider = BuiltinHashEmbedder(768)
    model = Model(TINY_MODEL_CONFIG, provider)
    state = ServiceState(model=model, dataset=full_schema_dataset)
    client = TestClient(create_app(state, ui_dist=UI_DIST), raise_server_exceptions=False)
    resp = client.get("/")
    assert resp.status_code == 200
    assert "<title>" in resp.text
    assert client.get("/api/templates").status_code == 200  # API still wins over static
