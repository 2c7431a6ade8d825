"""Prediction pipeline and HTTP service over an immutable model bundle.

A *bundle* is a directory holding everything inference needs:

- ``calibration.json``  conformal calibration artifact
- ``energy.json``       fitted energy detector config
- ``class_map.csv``     class index to taxon id mapping
- ``taxa.csv``          taxonomy rows for every mapped taxon
- ``head.tghd``         optional linear head (enables feature inputs)

The pipeline runs in a fixed order: out-of-distribution detection first,
then softmax and top-1 name lookup, then the conformal set, and finally a
warning attached if and only if the detector flagged the input. A
prediction is always returned, OOD or not; abstention is expressed as the
warning, leaving the call to the human.

Reports serialize through one canonical JSON encoder, so the CLI and the
HTTP endpoint produce byte-identical documents for the same input.
"""

from __future__ import annotations

import hashlib
import json
import shlex
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .conformal import ConformalCalibration, load_calibration, predict_set
from .core import ClassIndexMap, Taxonomy, as_logit_vector, softmax
from .errors import (
    ConfigError,
    InvalidArgumentError,
    InvalidInputError,
    NotFoundError,
    TrustgateError,
)
from .formats import read_class_map_csv, read_head, read_taxonomy_csv
from .longtail import ClassifierHead
from .ood import EnergyConfig, OodVerdict, detect, load_config

CALIBRATION_FILE = "calibration.json"
ENERGY_FILE = "energy.json"
CLASS_MAP_FILE = "class_map.csv"
TAXONOMY_FILE = "taxa.csv"
HEAD_FILE = "head.tghd"

OOD_WARNING = ("input looks out-of-distribution (energy above threshold); "
               "treat the prediction below with caution")


@dataclass(frozen=True)
class Bundle:
    """Everything the pipeline needs, loaded once and never mutated."""

    calibration: ConformalCalibration
    energy_config: EnergyConfig
    class_map: ClassIndexMap
    taxonomy: Taxonomy
    head: ClassifierHead | None
    class_map_digest: str

    @property
    def class_count(self) -> int:
        return self.class_map.class_count

    def metadata(self) -> dict:
        return {
            "alpha": self.calibration.alpha,
            "qhat": self.calibration.qhat,
            "temperature": self.energy_config.temperature,
            "threshold": self.energy_config.threshold,
            "class_count": self.class_count,
            "class_map_digest": self.class_map_digest,
        }


def load_bundle(bundle_dir: str | Path) -> Bundle:
    """Load and cross-check a bundle directory.

    Fails fast on anything that would break requests later: missing files,
    an unfitted energy config, a head of the wrong shape, or a class map
    that points at taxa the taxonomy does not contain.
    """
    root = Path(bundle_dir)
    if not root.is_dir():
        raise ConfigError(f"bundle directory {root} does not exist")
    required = [CALIBRATION_FILE, ENERGY_FILE, CLASS_MAP_FILE, TAXONOMY_FILE]
    missing = [name for name in required if not (root / name).is_file()]
    if missing:
        raise ConfigError(f"bundle at {root} is missing {missing}")

    calibration = load_calibration(str(root / CALIBRATION_FILE))
    energy_config = load_config(str(root / ENERGY_FILE))
    class_map = read_class_map_csv(str(root / CLASS_MAP_FILE))
    taxonomy = read_taxonomy_csv(str(root / TAXONOMY_FILE))
    head = read_head(str(root / HEAD_FILE)) if (root / HEAD_FILE).is_file() else None

    if energy_config.threshold is None:
        raise ConfigError("bundle energy config has no threshold; fit it before serving")
    if head is not None and head.class_count != class_map.class_count:
        raise ConfigError(
            f"head has {head.class_count} classes, class map has {class_map.class_count}")
    unmapped = [t for t in class_map.taxon_ids if t not in taxonomy]
    if unmapped:
        raise ConfigError(f"class map references taxa missing from the taxonomy: "
                          f"{unmapped[:5]}")
    digest = hashlib.sha256((root / CLASS_MAP_FILE).read_bytes()).hexdigest()[:16]
    return Bundle(calibration=calibration, energy_config=energy_config,
                  class_map=class_map, taxonomy=taxonomy, head=head,
                  class_map_digest=digest)


@dataclass(frozen=True)
class ClassPrediction:
    taxon_id: int
    scientific_name: str
    common_name: str
    probability: float


@dataclass(frozen=True)
class PredictionReport:
    top1: ClassPrediction
    conformal_set: tuple[ClassPrediction, ...]
    ood: OodVerdict
    warning: str | None
    model_metadata: dict


def predict_pipeline(logits, bundle: Bundle) -> PredictionReport:
    """Run detection, naming and set construction on one logit vector."""
    z = as_logit_vector(logits)
    if z.size != bundle.class_count:
        raise ConfigError(
            f"logit vector has {z.size} entries, bundle expects {bundle.class_count}")
    verdict = detect(z, bundle.energy_config)
    probs = softmax(z)
    members = predict_set(probs, bundle.calibration)
    ordered = sorted(members, key=lambda i: (-probs.probs[i], i))

    def named(index: int) -> ClassPrediction:
        record = bundle.taxonomy.get(bundle.class_map.taxon_for(index))
        return ClassPrediction(
            taxon_id=record.taxon_id, scientific_name=record.scientific_name,
            common_name=record.common_name, probability=float(probs.probs[index]))

    entries = tuple(named(i) for i in ordered)
    return PredictionReport(
        top1=entries[0],
        conformal_set=entries,
        ood=verdict,
        warning=OOD_WARNING if verdict.is_ood else None,
        model_metadata=bundle.metadata(),
    )


def _prediction_dict(pred: ClassPrediction) -> dict:
    return {
        "taxon_id": pred.taxon_id,
        "scientific_name": pred.scientific_name,
        "common_name": pred.common_name,
        "probability": pred.probability,
    }


def report_to_dict(report: PredictionReport) -> dict:
    return {
        "top1": _prediction_dict(report.top1),
        "conformal_set": [_prediction_dict(p) for p in report.conformal_set],
        "ood": {
            "energy": report.ood.energy,
            "is_ood": report.ood.is_ood,
            "threshold_used": report.ood.threshold_used,
        },
        "warning": report.warning,
        "model_metadata": report.model_metadata,
    }


def report_json(report: PredictionReport) -> str:
    """Canonical serialization: sorted keys, compact separators.

    Both the CLI and the HTTP endpoint emit exactly this string, which is
    what makes their outputs byte-comparable.
    """
    return json.dumps(report_to_dict(report), sort_keys=True, separators=(",", ":"))


def features_to_logits(features, bundle: Bundle) -> np.ndarray:
    """Project a feature vector through the bundle head."""
    if bundle.head is None:
        raise ConfigError("bundle has no head; feature inputs are not supported")
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1 or x.size != bundle.head.feature_dim:
        raise ConfigError(
            f"feature vector has shape {x.shape}, head expects ({bundle.head.feature_dim},)")
    return bundle.head.logits(x)


def run_inference_command(infer_command: str, image_bytes: bytes,
                          timeout: float = 60.0) -> np.ndarray:
    """Shell out to the configured image-to-logits executable.

    The command receives the raw image on stdin and must print whitespace-
    separated logit values on stdout.
    """
    argv = shlex.split(infer_command)
    proc = subprocess.run(argv, input=image_bytes, capture_output=True, timeout=timeout)
    if proc.returncode != 0:
        raise ConfigError(
            f"inference command exited with {proc.returncode}: "
            f"{proc.stderr.decode(errors='replace')[:200]}")
    try:
        values = [float(v) for v in proc.stdout.split()]
    except ValueError:
        raise ConfigError("inference command printed non-numeric output") from None
    if not values:
        raise ConfigError("inference command printed no logits")
    return np.asarray(values, dtype=np.float64)


class PredictBody(BaseModel):
    """Request body for ``POST /v1/predict``: exactly one field set."""

    logits: list[float] | None = None
    features: list[float] | None = None


def build_app(bundle: Bundle, infer_command: str | None = None) -> FastAPI:
    """Assemble the FastAPI application over one immutable bundle."""
    app = FastAPI(title="trustgate", docs_url=None, redoc_url=None)

    @app.exception_handler(TrustgateError)
    async def _trustgate_error(request: Request, exc: TrustgateError):
        if isinstance(exc, NotFoundError):
            status = 404
        elif isinstance(exc, (ConfigError, InvalidInputError, InvalidArgumentError)):
            status = 422
        else:
            status = 400
        return JSONResponse(status_code=status, content={
            "error": {"type": exc.__class__.__name__, "message": str(exc)}})

    @app.get("/v1/health")
    async def health():
        return {"status": "ok", "model_metadata": bundle.metadata()}

    @app.get("/v1/model")
    async def model():
        return bundle.metadata()

    @app.get("/v1/taxa/{taxon_id}")
    async def taxon(taxon_id: int):
        record = bundle.taxonomy.get(taxon_id)  # NotFoundError -> 404
        return {
            "taxon_id": record.taxon_id,
            "scientific_name": record.scientific_name,
            "common_name": record.common_name,
            "rank": record.rank.value,
            "ancestor_ids": list(record.ancestor_ids),
        }

    def respond(report: PredictionReport) -> Response:
        return Response(content=report_json(report), media_type="application/json")

    @app.post("/v1/predict")
    async def predict(body: PredictBody):
        has_logits = body.logits is not None
        has_features = body.features is not None
        if has_logits == has_features:
            return JSONResponse(status_code=422, content={
                "error": {"type": "InvalidInputError",
                          "message": "provide exactly one of 'logits' or 'features'"}})
        z = np.asarray(body.logits, dtype=np.float64) if has_logits \
            else features_to_logits(body.features, bundle)
        return respond(predict_pipeline(z, bundle))

    @app.post("/v1/predict-image")
    async def predict_image(request: Request):
        if infer_command is None:
            return JSONResponse(status_code=501, content={
                "error": {"type": "NotImplemented",
                          "message": "no inference command configured; "
                                     "send logits to /v1/predict instead"}})
        image = await request.body()
        try:
            z = run_inference_command(infer_command, image)
        except (ConfigError, subprocess.TimeoutExpired) as exc:
            return JSONResponse(status_code=502, content={
                "error": {"type": "InferenceFailure", "message": str(exc)}})
        return respond(predict_pipeline(z, bundle))

    return app


def serve(bundle_dir: str | Path, *, host: str = "127.0.0.1", port: int = 8000,
          infer_command: str | None = None) -> None:
    """Load the bundle (aborting loudly on any inconsistency) and serve it."""
    import uvicorn

    bundle = load_bundle(bundle_dir)
    app = build_app(bundle, infer_command=infer_command)
    uvicorn.run(app, host=host, port=port)
