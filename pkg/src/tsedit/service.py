"""HTTP inference service: editing, templates, dataset sampling, health.

The loaded checkpoint is immutable for the service lifetime and every
endpoint is read-only, so concurrent requests are safe and identical
requests produce byte-identical JSON bodies (floats are serialized with
Python's shortest-round-trip repr).
"""

import json

import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import Response

from .editing import EditRequest, edit
from .errors import InputError, TseditError
from .synthgen import CANONICAL_TEMPLATES


class ApiError(Exception):
    def __init__(self, status, code, message, details=None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.details = details


def _json_response(payload, status=200):
    return Response(content=json.dumps(payload), status_code=status,
                    media_type="application/json")


def _error_response(exc):
    body = {"code": exc.code, "message": exc.message}
    if exc.details is not None:
        body["details"] = exc.details
    return _json_response(body, status=exc.status)


class ServiceState:
    def __init__(self, model=None, checkpoint=None, dataset=None, stats=None):
        self.model = model
        self.checkpoint = checkpoint
        self.dataset = dataset
        self.stats = stats

    @property
    def loaded(self):
        return self.model is not None

    def schema(self):
        if self.dataset is not None:
            return self.dataset.schema
        if self.checkpoint is not None and "schema" in self.checkpoint.extra:
            from .synthgen import AttributeSchema

            return AttributeSchema.from_dict(self.checkpoint.extra["schema"])
        return None


def create_app(state, ui_dist=None):
    app = FastAPI(title="tsedit service")
    # local tool: no authentication, UI may be served from another port
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])

    @app.exception_handler(ApiError)
    async def handle_api_error(request: Request, exc: ApiError):  # noqa: ARG001
        return _error_response(exc)

    from fastapi.exceptions import RequestValidationError

    @app.exception_handler(RequestValidationError)
    async def handle_validation(request: Request, exc):  # noqa: ARG001
        return _error_response(ApiError(400, "invalid-request", str(exc)))

    @app.exception_handler(Exception)
    async def handle_unexpected(request: Request, exc):  # noqa: ARG001
        return _error_response(ApiError(500, "internal-error", str(exc)))

    def require_model():
        if not state.loaded:
            raise ApiError(503, "not-loaded", "no checkpoint is loaded")
        return state.model

    @app.get("/api/health")
    def health():
        if not state.loaded:
            raise ApiError(503, "not-loaded", "no checkpoint is loaded")
        return _json_response({
            "status": "ok",
            "checkpointFingerprint": state.checkpoint.fingerprint() if state.checkpoint else None,
            "provider": state.model.provider.fingerprint,
        })

    @app.get("/api/templates")
    def templates():
        schema = state.schema()
        if schema is None:
            raise ApiError(503, "not-loaded", "no schema available; load a checkpoint or dataset")
        sentences = {}
        for name in schema.names:
            sentences[name] = {
                level: CANONICAL_TEMPLATES.get((name, level), f"{name} is {level}.")
                for level in schema.levels_of(name)
            }
        return _json_response({
            "attributes": [{"name": name, "levels": list(schema.levels_of(name))}
                           for name in schema.names],
            "templates": sentences,
        })

    @app.get("/api/datasets/sample")
    def sample(attributes: str = "", seed: int = None):
        if state.dataset is None:
            raise ApiError(503, "no-dataset", "service was started without a dataset")
        pool = state.dataset.split("test") or state.dataset.series
        filters = {}
        if attributes:
            for clause in attributes.split(","):
                if "=" not in clause:
                    raise ApiError(400, "invalid-filter",
                                   f"attribute filter {clause!r} is not name=level")
                name, level = clause.split("=", 1)
                filters[name.strip()] = level.strip()
        matches = [s for s in pool
                   if all(s.attributes.get(k) == v for k, v in filters.items())]
        if not matches:
            raise ApiError(404, "no-match", f"no test series matches {filters}")
        rng = np.random.default_rng(seed) if seed is not None else np.random.default_rng()
        chosen = matches[int(rng.integers(len(matches)))]
        return _json_response({
            "id": chosen.id,
            "values": [float(v) for v in chosen.values],
            "attributes": chosen.attributes,
            "description": chosen.description,
        })

    @app.post("/api/edit")
    async def edit_endpoint(request: Request):
        model = require_model()
        try:
            body = await request.json()
        except Exception:
            raise ApiError(400, "invalid-json", "request body is not valid JSON")
        if not isinstance(body, dict):
            raise ApiError(400, "invalid-request", "request body must be a JSON object")
        series = body.get("series")
        series_id = body.get("seriesId")
        if (series is None) == (series_id is None):
            raise ApiError(400, "invalid-request",
                           "provide exactly one of 'series' or 'seriesId'")
        if series_id is not None:
            if state.dataset is None:
                raise ApiError(503, "no-dataset", "service was started without a dataset")
            try:
                series = state.dataset.by_id(series_id).values
            except KeyError:
                raise ApiError(404, "unknown-series", f"no series with id {series_id!r}")
        series = np.asarray(series, dtype=np.float64)
        if series.ndim != 1 or series.shape[0] != model.config.T:
            raise ApiError(400, "invalid-length",
                           f"series must have length {model.config.T}, got {series.shape}")
        if not np.all(np.isfinite(series)):
            raise ApiError(400, "invalid-values", "series contains non-finite values")
        instruction = body.get("instruction")
        if not isinstance(instruction, str) or not instruction:
            raise ApiError(400, "invalid-instruction", "instruction must be a non-empty string")
        weights = body.get("weights")
        try:
            req = EditRequest(series=series, instruction=instruction, weights=weights or [],
                              normalization="dataset-stats" if state.stats else "none")
            result = edit(model, req, stats=state.stats)
        except InputError as exc:
            raise ApiError(400, "invalid-weights", str(exc))
        except TseditError as exc:
            raise ApiError(400, "edit-failed", str(exc))
        reconstruction = None
        for w, values in zip(result.weights, result.series):
            if w == 0.0:
                reconstruction = [float(v) for v in values]
        return _json_response({
            "edits": [{"w": w, "values": [float(v) for v in values]}
                      for w, values in zip(result.weights, result.series)],
            "zNorms": [float(z) for z in result.z_norms],
            "reconstruction": reconstruction,
        })

    if ui_dist:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dist, html=True), name="ui")

    return app


def build_state(checkpoint_path=None, dataset_path=None, provider=None):
    from .datastore import load_checkpoint, read_dataset
    from .model import model_from_checkpoint

    state = ServiceState()
    if dataset_path:
        state.dataset = read_dataset(dataset_path)
    if checkpoint_path:
        ckpt = load_checkpoint(checkpoint_path)
        state.checkpoint = ckpt
        state.model = model_from_checkpoint(ckpt, provider)
        state.stats = ckpt.norm_stats
    return state
