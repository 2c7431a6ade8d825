from __future__ import annotations

import json
import shlex
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from fastapi.testclient import TestClient

from trustgate.errors import ConfigError, InvalidInputError
from trustgate.service import (
    OOD_WARNING,
    build_app,
    features_to_logits,
    load_bundle,
    predict_pipeline,
    report_json,
    report_to_dict,
    run_inference_command,
)

K = 10  # demo bundle class count


@pytest.fixture(scope="module")
def bundle(bundle_dir):
    return load_bundle(bundle_dir)


@pytest.fixture(scope="module")
def client(bundle):
    with TestClient(build_app(bundle)) as c:
        yield c


def confident_logits(bundle, index=0, margin=25.0):
    """One dominant class, shifted so the energy sits 5 units below tau."""
    z = np.zeros(K)
    z[index] = margin
    # energy(z + c) = energy(z) - c
    return z + (energy_of(z, bundle) - bundle.energy_config.threshold + 5.0)


def energy_of(z, bundle):
    from trustgate.ood import energy

    return energy(z, bundle.energy_config.temperature)


# ---------------------------------------------------------------- pipeline


def test_pipeline_report_shape(bundle):
    rep = predict_pipeline(confident_logits(bundle), bundle)
    assert rep.top1 == rep.conformal_set[0]
    probs = [c.probability for c in rep.conformal_set]
    assert probs == sorted(probs, reverse=True)
    assert rep.top1.scientific_name
    assert rep.model_metadata["class_count"] == K


def test_pipeline_confident_input_is_clean(bundle):
    rep = predict_pipeline(confident_logits(bundle), bundle)
    assert not rep.ood.is_ood
    assert rep.warning is None
    assert len(rep.conformal_set) == 1


def test_pipeline_warning_tracks_detector(bundle):
    tau = bundle.energy_config.threshold
    z = np.zeros(K)  # energy -ln K, then shift to straddle tau
    for offset in (-3.0, 3.0):
        shifted = z + (energy_of(z, bundle) - tau + offset)
        rep = predict_pipeline(shifted, bundle)
        assert rep.ood.is_ood == (offset < 0) == (rep.warning is not None)
        if rep.warning is not None:
            assert rep.warning == OOD_WARNING
        assert rep.top1 is not None  # prediction present either way


def test_pipeline_rejects_wrong_length(bundle):
    with pytest.raises(ConfigError):
        predict_pipeline(np.zeros(K + 1), bundle)


def test_pipeline_deterministic_bytes(bundle):
    z = np.linspace(-1, 1, K)
    a = report_json(predict_pipeline(z, bundle))
    b = report_json(predict_pipeline(z.copy(), bundle))
    assert a == b
    doc = json.loads(a)
    assert list(doc) == sorted(doc)


def test_features_to_logits_requires_head_dim(bundle):
    with pytest.raises(ConfigError):
        features_to_logits(np.zeros(3), bundle)
    z = features_to_logits(np.zeros(bundle.head.feature_dim), bundle)
    assert z.shape == (K,)


def test_report_dict_fields(bundle):
    rep = predict_pipeline(confident_logits(bundle), bundle)
    doc = report_to_dict(rep)
    assert set(doc) >= {"top1", "conformal_set", "ood", "warning", "model_metadata"}
    assert doc["ood"]["is_ood"] is False
    assert doc["warning"] is None


# ---------------------------------------------------------------- bundle loading


def test_load_bundle_metadata(bundle):
    meta = bundle.metadata()
    assert set(meta) == {"alpha", "qhat", "temperature", "threshold",
                         "class_count", "class_map_digest"}
    assert meta["alpha"] == 0.025
    assert 0 < meta["qhat"] <= 1.0
    assert len(meta["class_map_digest"]) == 16


def test_load_bundle_fails_fast_on_missing_file(bundle_dir, tmp_path):
    import shutil

    broken = tmp_path / "broken"
    shutil.copytree(bundle_dir, broken)
    (broken / "energy.json").unlink()
    with pytest.raises(ConfigError):
        load_bundle(broken)


def test_load_bundle_rejects_class_count_mismatch(bundle_dir, tmp_path):
    import shutil

    broken = tmp_path / "mismatch"
    shutil.copytree(bundle_dir, broken)
    (broken / "class_map.csv").write_text("class_index,taxon_id\n0,100\n1,101\n")
    with pytest.raises(ConfigError):
        load_bundle(broken)


# ---------------------------------------------------------------- http


def test_health(client):
    r = client.get("/v1/health")
    assert r.status_code == 200
    doc = r.json()
    assert doc["status"] == "ok"
    assert doc["model_metadata"]["class_count"] == K


def test_model_metadata_endpoint(client, bundle):
    r = client.get("/v1/model")
    assert r.status_code == 200
    assert r.json() == json.loads(json.dumps(bundle.metadata()))


def test_taxa_lookup(client):
    r = client.get("/v1/taxa/100")
    assert r.status_code == 200
    assert r.json()["taxon_id"] == 100
    assert client.get("/v1/taxa/31337").status_code == 404


def test_predict_logits_matches_pipeline_bytes(client, bundle):
    z = list(np.linspace(-2, 2, K))
    r = client.post("/v1/predict", json={"logits": z})
    assert r.status_code == 200
    assert r.content == report_json(predict_pipeline(np.array(z), bundle)).encode()


def test_predict_wrong_length_is_422(client):
    r = client.post("/v1/predict", json={"logits": [0.0, 1.0]})
    assert r.status_code == 422
    assert "expects" in r.json()["error"]["message"]


def test_predict_requires_exactly_one_payload(client):
    assert client.post("/v1/predict", json={}).status_code == 422
    both = {"logits": [0.0] * K, "features": [0.0] * 8}
    assert client.post("/v1/predict", json=both).status_code == 422


def test_predict_features_path(client, bundle):
    x = [0.1] * bundle.head.feature_dim
    r = client.post("/v1/predict", json={"features": x})
    assert r.status_code == 200
    expected = predict_pipeline(features_to_logits(np.array(x), bundle), bundle)
    assert r.content == report_json(expected).encode()


def test_predict_non_finite_rejected(client):
    body = '{"logits": [Infinity' + ", 0.0" * (K - 1) + "]}"
    r = client.post("/v1/predict", content=body,
                    headers={"content-type": "application/json"})
    assert r.status_code == 422


def test_concurrent_identical_requests_are_identical(client):
    z = list(np.linspace(-1, 3, K))

    def call(_):
        return client.post("/v1/predict", json={"logits": z}).content

    with ThreadPoolExecutor(max_workers=8) as pool:
        bodies = list(pool.map(call, range(50)))
    assert len(set(bodies)) == 1


# ---------------------------------------------------------------- image path


INFER_OK = f"{shlex.quote(sys.executable)} -c " + shlex.quote(
    "import sys; sys.stdin.buffer.read(); print(' '.join(str(float(i)) for i in range(10)))"
)
INFER_BAD = f"{shlex.quote(sys.executable)} -c " + shlex.quote("import sys; sys.exit(3)")


def test_predict_image_without_command_is_501(client):
    r = client.post("/v1/predict-image", content=b"\xff\xd8fake")
    assert r.status_code == 501


def test_predict_image_with_command(bundle):
    with TestClient(build_app(bundle, infer_command=INFER_OK)) as c:
        r = c.post("/v1/predict-image", content=b"\xff\xd8fake")
        assert r.status_code == 200
        assert r.json()["top1"]["taxon_id"] == json.loads(
            report_json(predict_pipeline(np.arange(10.0), bundle)))["top1"]["taxon_id"]


def test_predict_image_failing_command_is_502(bundle):
    with TestClient(build_app(bundle, infer_command=INFER_BAD)) as c:
        r = c.post("/v1/predict-image", content=b"img")
        assert r.status_code == 502


def test_run_inference_command_round_trip():
    z = run_inference_command(INFER_OK, b"bytes")
    assert list(z) == [float(i) for i in range(10)]
