"""JSON-over-HTTP policy service: /v1/generate, /v1/update, /v1/health.

Contract notes: schema violations return 400; a context longer than the
model limit returns 422; /v1/update returns 501 when the deployment is
inference-only. The server treats contexts as opaque text and never
recomputes rewards -- advantages arrive precomputed from the client.
"""
from __future__ import annotations

from dataclasses import dataclass

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .model import PolicyModel


@dataclass
class ServerConfig:
    model_id: str = "tiny-char-lm"
    device: str = "cpu"
    max_tokens: int = 256
    port: int = 8040
    max_context: int = 2048
    inference_only: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


class GenerateRequest(BaseModel):
    context: str
    num_samples: int = Field(ge=1, le=64)
    temperature: float = Field(gt=0)
    max_tokens: int = Field(ge=1)


class SampleOut(BaseModel):
    text: str
    tokens: list[str]
    logprobs: list[float]


class GenerateResponse(BaseModel):
    samples: list[SampleOut]


class UpdateItem(BaseModel):
    context: str
    completion: str
    advantage: float


class UpdateRequest(BaseModel):
    items: list[UpdateItem] = Field(min_length=1)
    learning_rate: float = Field(gt=0)


class UpdateResponse(BaseModel):
    loss: float


def create_app(config: ServerConfig | None = None) -> FastAPI:
    config = config or ServerConfig()
    app = FastAPI(title="policy-server")
    model = PolicyModel(
        model_id=config.model_id,
        device=config.device,
        max_context=config.max_context,
        seed=config.seed,
    )
    app.state.config = config
    app.state.model = model

    @app.exception_handler(RequestValidationError)
    async def schema_violation(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.post("/v1/generate", response_model=GenerateResponse)
    def generate(request: GenerateRequest):
        if len(request.context) > config.max_context:
            return JSONResponse(
                status_code=422,
                content={"detail": f"context exceeds the {config.max_context}-character limit"},
            )
        samples = model.sample(
            request.context,
            request.num_samples,
            request.temperature,
            min(request.max_tokens, config.max_tokens),
        )
        return {"samples": samples}

    @app.post("/v1/update", response_model=UpdateResponse)
    def update(request: UpdateRequest):
        if config.inference_only:
            return JSONResponse(status_code=501, content={"detail": "inference-only deployment"})
        for item in request.items:
            if len(item.context) + len(item.completion) > config.max_context:
                return JSONResponse(status_code=422, content={"detail": "item exceeds context limit"})
        loss = model.update([item.model_dump() for item in request.items], request.learning_rate)
        return {"loss": loss}

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "model": config.model_id}

    return app
