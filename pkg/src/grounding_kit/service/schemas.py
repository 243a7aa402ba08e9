"""Pydantic request/response models for the HTTP API.

Scores serialize as ``null`` for empty-proposal sentinels (JSON has no
-inf); the ``empty`` flag disambiguates.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    encoders_loaded: int


class ScoreRow(BaseModel):
    index: int
    score: float | None
    global_score: float | None = None
    local_score: float | None = None
    empty: bool = False


class SegmentRequest(BaseModel):
    image: str
    expression: str
    proposals: str
    image_id: str | None = None
    parse: dict | None = None
    parses: str | None = None
    encoder: str | None = None
    encoder_config: dict | None = None
    alpha: float = Field(default=0.95, ge=0.0, le=1.0)
    beta: float = Field(default=0.5, ge=0.0, le=1.0)
    mask_layers: int = Field(default=3, ge=0)
    baseline: str = "none"
    seed: int | None = None
    out: str | None = None


class SegmentResponse(BaseModel):
    image_id: str
    chosen_index: int
    chosen_score: float
    scores: list[ScoreRow]
    target_np: str | None = None
    np_is_whole_sentence: bool | None = None
    overlay_path: str | None = None


class BenchRequest(BaseModel):
    config: dict
    out: str | None = None


class BenchResponse(BaseModel):
    report: dict
    report_path: str | None = None


class AblateRequest(BaseModel):
    config: dict
    axis: str
    values: list[float] | None = None
    out: str | None = None


class AblateResponse(BaseModel):
    rows: list[dict]
    csv_path: str | None = None
    plot_path: str | None = None


class NpRequest(BaseModel):
    parses: str | None = None
    expressions: list[str] | None = None
    fixtures: bool = False
    out: str | None = None


class NpRow(BaseModel):
    expression: str
    target_np: str
    is_whole_sentence: bool


class NpResponse(BaseModel):
    rows: list[NpRow]
    whole_sentence_fraction: float
    out_path: str | None = None


class UpperBoundRequest(BaseModel):
    records: str
    proposals: str


class UpperBoundResponse(BaseModel):
    oiou: float
    miou: float


class ErrorBody(BaseModel):
    kind: str
    message: str
