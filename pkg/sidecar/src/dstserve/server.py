"""HTTP serving layer implementing the pipeline's wire protocol.

Routes:

- ``POST /v1/values``   {"input": str} -> {"raw": str}
- ``POST /v1/estimate`` {"input": str} -> {"p_correct", "p_incomplete",
  "p_incorrect"} summing to 1
- ``POST /v1/slot``     {"input": str} -> {"domain_slot": str}
- ``POST /v1/train``    {"task", "train_file", "out_dir"} -> training
  summary; the served model for that task is hot-swapped on success
- ``GET /v1/health``    {"status": "ok"|"degraded", "model": str}

A task whose model is missing answers 503; bad training inputs answer
400; the health route always answers 200 and reports degradation in the
body.
"""
from __future__ import annotations

import logging
from typing import Literal

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .records import RecordError
from .registry import ModelRegistry, ModelUnavailable
from .training import TrainingError

log = logging.getLogger(__name__)


class TextRequest(BaseModel):
    input: str


class TrainRequest(BaseModel):
    task: Literal["values", "estimator", "slot"]
    train_file: str
    out_dir: str


def create_app(registry: ModelRegistry) -> FastAPI:
    app = FastAPI(title="dstserve", docs_url=None, redoc_url=None)

    @app.post("/v1/values")
    def values(request: TextRequest) -> dict:
        try:
            return {"raw": registry.generate_raw(request.input)}
        except ModelUnavailable as exc:
            raise HTTPException(status_code=503, detail=str(exc)) from exc

    @app.post("/v1/estimate")
    def estimate(request: TextRequest) -> dict:
        try:
            p_correct, p_incomplete, p_incorrect = registry.estimate(request.input)
        except ModelUnavailable as exc:
            raise HTTPException(status_code=503, detail=str(exc)) from exc
        return {
            "p_correct": p_correct,
            "p_incomplete": p_incomplete,
            "p_incorrect": p_incorrect,
        }

    @app.post("/v1/slot")
    def slot(request: TextRequest) -> dict:
        try:
            return {"domain_slot": registry.slot(request.input)}
        except ModelUnavailable as exc:
            raise HTTPException(status_code=503, detail=str(exc)) from exc

    @app.get("/v1/health")
    def health() -> dict:
        healthy, model, detail = registry.health()
        body = {"status": "ok" if healthy else "degraded", "model": model}
        if detail:
            body["detail"] = detail
        return body

    @app.post("/v1/train")
    def train(request: TrainRequest) -> dict:
        try:
            result = registry.train(request.task, request.train_file, request.out_dir)
        except (FileNotFoundError, RecordError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        except (TrainingError, ModelUnavailable) as exc:
            raise HTTPException(status_code=500, detail=str(exc)) from exc
        return {"status": "trained", **result.to_dict()}

    return app
