"""FastAPI service wrapping the scoring package.

The service holds loaded encoder pairs (keyed by their resolved config)
so many requests share one expensive adapter, and exposes the same
operations the CLI offers: single-example segmentation, benchmark runs,
ablation sweeps, noun-phrase extraction, and the proposal upper bound.

Domain errors map to structured bodies ``{"error": {"kind", "message"}}``
with kinds ``schema``, ``encoder``, and ``selection`` so thin clients can
translate them into exit codes.
"""

from __future__ import annotations

import json
import os
import threading

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import benchmark as bench_mod
from ..core import EMPTY_SCORE, Expression, FusionWeights
from ..encoders import build_encoders, load_encoder_config, validate_encoder_config
from ..errors import (
    EncoderFailure,
    GradientsUnsupported,
    GroundingError,
    SelectionImpossible,
    SurgeryUnsupported,
)
from ..maskio import dump_json_atomic, load_proposals, load_records
from ..metrics import proposal_upper_bound
from ..scoring import select_mask
from ..text import (
    extract_target_np,
    fixture_parses_path,
    load_parses,
    parse_tree_from_json,
)
from ..baselines import BaselineKind
from ..viz import save_ablation_plot, save_overlay_png
from ..visual import FeatureCache, MaskingConfig
from .schemas import (
    AblateRequest,
    AblateResponse,
    BenchRequest,
    BenchResponse,
    HealthResponse,
    NpRequest,
    NpResponse,
    NpRow,
    ScoreRow,
    SegmentRequest,
    SegmentResponse,
    UpperBoundRequest,
    UpperBoundResponse,
)

_ENCODER_KINDS = (EncoderFailure, GradientsUnsupported, SurgeryUnsupported)

_DEFAULT_ENCODER = {"kind": "patch_transformer", "weights": "mock"}


def _error_kind(exc: GroundingError) -> tuple[str, int]:
    if isinstance(exc, _ENCODER_KINDS):
        return "encoder", 500
    if isinstance(exc, SelectionImpossible):
        return "selection", 409
    return "schema", 422


class EncoderPool:
    """Loaded (visual, text) adapter pairs plus their feature caches,
    keyed by resolved encoder config."""

    def __init__(self):
        self._pairs: dict[str, tuple] = {}
        self._lock = threading.Lock()

    def get(self, cfg: dict):
        key = json.dumps(cfg, sort_keys=True)
        with self._lock:
            if key not in self._pairs:
                vh, th = build_encoders(cfg)
                self._pairs[key] = (vh, th, FeatureCache())
            return self._pairs[key]

    def __len__(self) -> int:
        with self._lock:
            return len(self._pairs)


def _resolve_encoder_request(
    encoder: str | None, encoder_config: dict | None, seed: int | None
) -> dict:
    if encoder_config is not None:
        cfg = validate_encoder_config(dict(encoder_config))
    elif encoder is not None:
        cfg = load_encoder_config(encoder)
    else:
        cfg = validate_encoder_config(dict(_DEFAULT_ENCODER))
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def create_app() -> FastAPI:
    app = FastAPI(title="grounding-kit", version="0.1.0")
    pool = EncoderPool()
    app.state.encoders = pool

    @app.exception_handler(GroundingError)
    async def grounding_error_handler(request: Request, exc: GroundingError):
        kind, status = _error_kind(exc)
        return JSONResponse(
            status_code=status,
            content={"error": {"kind": kind, "message": str(exc)}},
        )

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", encoders_loaded=len(pool))

    @app.post("/segment", response_model=SegmentResponse)
    def segment(req: SegmentRequest) -> SegmentResponse:
        cfg = _resolve_encoder_request(req.encoder, req.encoder_config, req.seed)
        vh, th, cache = pool.get(cfg)

        proposal_sets = load_proposals(req.proposals)
        if req.image_id is not None:
            pset = proposal_sets.get(req.image_id)
            if pset is None:
                raise SelectionImpossible(f"no proposals for image {req.image_id!r}")
        elif len(proposal_sets) == 1:
            pset = next(iter(proposal_sets.values()))
        else:
            raise SelectionImpossible(
                f"proposals file holds {len(proposal_sets)} images; pass image_id"
            )

        img = bench_mod.load_image(req.image)
        tree = None
        if req.parse is not None:
            tree = parse_tree_from_json(req.parse)
        elif req.parses is not None:
            tree = load_parses(req.parses).get(req.expression)

        weights = FusionWeights(alpha=req.alpha, beta=req.beta)
        masking = MaskingConfig(mask_layers=req.mask_layers)
        baseline = None if req.baseline == "none" else BaselineKind.parse(req.baseline)
        scored = bench_mod.score_example(
            vh, th, img, pset, req.expression, tree, weights, masking, baseline, cache
        )
        chosen = select_mask(scored)

        target_np = None
        whole = None
        if tree is not None:
            np_phrase = extract_target_np(tree, Expression(text=req.expression))
            target_np = np_phrase.text
            whole = np_phrase.is_whole_sentence

        overlay_path = None
        if req.out:
            image_id = req.image_id or next(iter(proposal_sets))
            overlay_path = os.path.join(req.out, f"overlay_{image_id}.png")
            save_overlay_png(img, pset[chosen.proposal_index], overlay_path)

        image_id = req.image_id or next(iter(proposal_sets))
        return SegmentResponse(
            image_id=image_id,
            chosen_index=chosen.proposal_index,
            chosen_score=chosen.score,
            scores=[
                ScoreRow(
                    index=s.proposal_index,
                    score=None if s.empty or s.score == EMPTY_SCORE else s.score,
                    global_score=s.global_score,
                    local_score=s.local_score,
                    empty=s.empty,
                )
                for s in scored
            ],
            target_np=target_np,
            np_is_whole_sentence=whole,
            overlay_path=overlay_path,
        )

    @app.post("/bench", response_model=BenchResponse)
    def bench(req: BenchRequest) -> BenchResponse:
        report = bench_mod.run_benchmark(req.config)
        report_path = None
        out = req.out or req.config.get("out")
        if out:
            report_path = out if out.endswith(".json") else os.path.join(out, "report.json")
            bench_mod.write_report(report, report_path)
        return BenchResponse(report=report, report_path=report_path)

    @app.post("/ablate", response_model=AblateResponse)
    def ablate(req: AblateRequest) -> AblateResponse:
        rows = bench_mod.run_ablation(req.config, req.axis, req.values)
        csv_path = None
        plot_path = None
        if req.out:
            csv_path = os.path.join(req.out, f"ablation_{req.axis}.csv")
            plot_path = os.path.join(req.out, f"ablation_{req.axis}.png")
            bench_mod.write_ablation_csv(rows, csv_path)
            save_ablation_plot(rows, plot_path)
        return AblateResponse(rows=rows, csv_path=csv_path, plot_path=plot_path)

    @app.post("/np", response_model=NpResponse)
    def noun_phrases(req: NpRequest) -> NpResponse:
        if req.fixtures:
            parse_map = load_parses(fixture_parses_path())
        elif req.parses is not None:
            parse_map = load_parses(req.parses)
        elif req.expressions:
            parse_map = _parse_live(req.expressions)
        else:
            raise EncoderFailure("np extraction needs parses, expressions, or fixtures")
        rows = []
        whole = 0
        for expression, tree in parse_map.items():
            np_phrase = extract_target_np(tree, Expression(text=expression))
            whole += int(np_phrase.is_whole_sentence)
            rows.append(
                NpRow(
                    expression=expression,
                    target_np=np_phrase.text,
                    is_whole_sentence=np_phrase.is_whole_sentence,
                )
            )
        fraction = whole / len(rows) if rows else 0.0
        out_path = None
        if req.out:
            out_path = os.path.join(req.out, "noun_phrases.json")
            dump_json_atomic(
                {
                    "rows": [r.model_dump() for r in rows],
                    "whole_sentence_fraction": fraction,
                },
                out_path,
            )
        return NpResponse(rows=rows, whole_sentence_fraction=fraction, out_path=out_path)

    @app.post("/upper-bound", response_model=UpperBoundResponse)
    def upper_bound(req: UpperBoundRequest) -> UpperBoundResponse:
        records = load_records(req.records)
        proposals = load_proposals(req.proposals)
        oiou, miou = proposal_upper_bound(records, proposals)
        return UpperBoundResponse(oiou=oiou, miou=miou)

    return app


def _parse_live(expressions: list[str]) -> dict:
    """Parse raw expressions with spaCy when it is installed."""
    try:
        import spacy
    except ImportError as e:
        raise EncoderFailure(
            "parsing raw expressions needs spaCy; supply a parse file instead"
        ) from e
    from ..text import parse_tree_from_spacy

    try:
        nlp = spacy.load("en_core_web_sm")
    except OSError as e:
        raise EncoderFailure(f"spaCy model unavailable: {e}") from e
    return {expr: parse_tree_from_spacy(nlp(expr)) for expr in expressions}


app = create_app()
