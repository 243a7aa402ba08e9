"""Command-line surface: a thin client of the HTTP service.

Every command builds a request and sends it to the service API. By
default the app runs in-process over an ASGI transport (no network, no
separate server); pass ``--server URL`` to target a running instance
started with ``grounding-kit serve``.

Exit codes: 2 for schema/validation errors, 3 for encoder failures,
4 when no proposal can be selected.
"""

from __future__ import annotations

import asyncio
import json
import os
import sys

import click
import httpx

EXIT_SCHEMA = 2
EXIT_ENCODER = 3
EXIT_SELECTION = 4

_EXIT_BY_KIND = {"schema": EXIT_SCHEMA, "encoder": EXIT_ENCODER, "selection": EXIT_SELECTION}


def call_service(route: str, payload: dict, server: str | None = None) -> dict:
    """POST to a remote instance, or to the in-process app when no
    server is configured. Returns the response body; exits on errors."""
    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            response = client.post(route, json=payload)
    else:
        response = asyncio.run(_call_inprocess(route, payload))
    if response.status_code >= 400:
        _fail(response)
    return response.json()


async def _call_inprocess(route: str, payload: dict) -> httpx.Response:
    from .service.app import create_app

    transport = httpx.ASGITransport(app=create_app())
    async with httpx.AsyncClient(
        transport=transport, base_url="http://grounding-kit", timeout=None
    ) as client:
        return await client.post(route, json=payload)


def _fail(response: httpx.Response) -> None:
    try:
        body = response.json()
    except json.JSONDecodeError:
        body = {}
    error = body.get("error")
    if isinstance(error, dict):
        kind = error.get("kind", "schema")
        message = error.get("message", "request failed")
    else:
        # FastAPI's own validation errors arrive as {"detail": ...}
        kind = "schema"
        message = json.dumps(body.get("detail", body))
    click.echo(f"error ({kind}): {message}", err=True)
    sys.exit(_EXIT_BY_KIND.get(kind, EXIT_SCHEMA))


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    if not os.path.exists(path):
        click.echo(f"error (schema): config file not found [{path}]", err=True)
        sys.exit(EXIT_SCHEMA)
    with open(path, "r", encoding="utf-8") as f:
        try:
            cfg = json.load(f)
        except json.JSONDecodeError as e:
            click.echo(f"error (schema): invalid config JSON: {e} [{path}]", err=True)
            sys.exit(EXIT_SCHEMA)
    if not isinstance(cfg, dict):
        click.echo(f"error (schema): config must be a flat object [{path}]", err=True)
        sys.exit(EXIT_SCHEMA)
    return cfg


def _merge_overrides(cfg: dict, **overrides) -> dict:
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    return cfg


@click.group()
@click.option("--server", default=None, envvar="GROUNDING_KIT_SERVER",
              help="URL of a running service; default runs in-process.")
@click.pass_context
def main(ctx, server):
    """Zero-shot referring image segmentation toolkit."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server


@main.command()
@click.option("--image", required=True, type=str, help="Image file.")
@click.option("--expression", required=True, type=str, help="Referring expression.")
@click.option("--proposals", required=True, type=str, help="Proposals JSON file.")
@click.option("--image-id", default=None, help="Image id inside the proposals file.")
@click.option("--parses", default=None, help="Parse-tree JSON file keyed by expression.")
@click.option("--encoder", default=None, help="Encoder adapter config file.")
@click.option("--alpha", default=0.95, show_default=True, type=float)
@click.option("--beta", default=0.5, show_default=True, type=float)
@click.option("--mask-layers", default=3, show_default=True, type=int)
@click.option("--baseline", default="none", show_default=True,
              type=click.Choice(["none", "grad-cam", "score-map", "region-token", "cropping"]))
@click.option("--seed", default=None, type=int, help="Override the encoder seed.")
@click.option("--out", default=None, help="Directory for the overlay image and score JSON.")
@click.pass_context
def segment(ctx, image, expression, proposals, image_id, parses, encoder,
            alpha, beta, mask_layers, baseline, seed, out):
    """Segment one expression: pick the best proposal, write an overlay."""
    body = call_service(
        "/segment",
        {
            "image": image,
            "expression": expression,
            "proposals": proposals,
            "image_id": image_id,
            "parses": parses,
            "encoder": encoder,
            "alpha": alpha,
            "beta": beta,
            "mask_layers": mask_layers,
            "baseline": baseline,
            "seed": seed,
            "out": out,
        },
        ctx.obj["server"],
    )
    ranked = sorted(
        body["scores"], key=lambda s: (s["score"] is None, -(s["score"] or 0.0))
    )
    if out:
        scores_path = os.path.join(out, f"scores_{body['image_id']}.json")
        os.makedirs(out, exist_ok=True)
        with open(scores_path, "w", encoding="utf-8") as f:
            json.dump(
                {
                    "expression": expression,
                    "chosen": body["chosen_index"],
                    "target_np": body["target_np"],
                    "ranked_scores": ranked,
                },
                f, indent=2, sort_keys=True,
            )
        click.echo(f"scores -> {scores_path}")
    if body.get("overlay_path"):
        click.echo(f"overlay -> {body['overlay_path']}")
    click.echo(
        f"chosen proposal {body['chosen_index']} "
        f"(score {body['chosen_score']:.6f}) for {expression!r}"
    )
    if body.get("target_np"):
        click.echo(f"target noun phrase: {body['target_np']!r}")


def _bench_payload(config, records, proposals, parses, encoder, alpha, beta,
                   mask_layers, baseline, seed, workers):
    cfg = _load_config_file(config)
    return _merge_overrides(
        cfg,
        records=records,
        proposals=proposals,
        parses=parses,
        encoder=encoder,
        alpha=alpha,
        beta=beta,
        mask_layers=mask_layers,
        baseline=baseline,
        seed=seed,
        workers=workers,
    )


_bench_options = [
    click.option("--config", default=None, help="Flat key-value config file (JSON)."),
    click.option("--records", default=None, help="Records JSON file."),
    click.option("--proposals", default=None, help="Proposals JSON file."),
    click.option("--parses", default=None, help="Parse-tree JSON file."),
    click.option("--encoder", default=None, help="Encoder adapter config file."),
    click.option("--alpha", default=None, type=float),
    click.option("--beta", default=None, type=float),
    click.option("--mask-layers", default=None, type=int),
    click.option("--baseline", default=None,
                 type=click.Choice(["none", "grad-cam", "score-map", "region-token", "cropping"])),
    click.option("--seed", default=None, type=int),
    click.option("--workers", default=None, type=int),
]


def _apply_options(options):
    def wrap(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn
    return wrap


@main.command()
@_apply_options(_bench_options)
@click.option("--out", default=None, help="Report path (.json) or directory.")
@click.pass_context
def bench(ctx, config, records, proposals, parses, encoder, alpha, beta,
          mask_layers, baseline, seed, workers, out):
    """Run the benchmark and write the report."""
    payload = _bench_payload(config, records, proposals, parses, encoder,
                             alpha, beta, mask_layers, baseline, seed, workers)
    body = call_service("/bench", {"config": payload, "out": out}, ctx.obj["server"])
    summary = body["report"]["summary"]
    for key in ("oiou", "miou", "mc_acc", "cc_oiou", "upper_bound_oiou"):
        value = summary.get(key)
        click.echo(f"{key}: {value:.4f}" if value is not None else f"{key}: n/a")
    click.echo(f"examples: {summary['examples']}  failures: {summary['failures']}")
    if body.get("report_path"):
        click.echo(f"report -> {body['report_path']}")


@main.command()
@_apply_options(_bench_options)
@click.option("--axis", required=True, type=click.Choice(["alpha", "beta", "mask_layers"]),
              help="Parameter to sweep; the others hold their config values.")
@click.option("--values", default=None,
              help="Comma-separated grid; defaults to 0,0.05,...,1 or 0..L.")
@click.option("--out", default=None, help="Directory for the CSV and plot.")
@click.pass_context
def ablate(ctx, config, records, proposals, parses, encoder, alpha, beta,
           mask_layers, baseline, seed, workers, axis, values, out):
    """Sweep alpha, beta, or the masking depth; emit CSV and a line plot."""
    payload = _bench_payload(config, records, proposals, parses, encoder,
                             alpha, beta, mask_layers, baseline, seed, workers)
    grid = None
    if values:
        grid = [float(v) for v in values.split(",")]
    body = call_service(
        "/ablate",
        {"config": payload, "axis": axis, "values": grid, "out": out},
        ctx.obj["server"],
    )
    for row in body["rows"]:
        click.echo(f"{axis}={row['value']}: oIoU {row['oiou']:.4f}  mIoU {row['miou']:.4f}")
    for key in ("csv_path", "plot_path"):
        if body.get(key):
            click.echo(f"{key.split('_')[0]} -> {body[key]}")


@main.command(name="np")
@click.option("--parses", default=None, help="Parse-tree JSON file.")
@click.option("--expressions", default=None,
              help="Text file with one expression per line (needs spaCy).")
@click.option("--fixtures", is_flag=True, help="Use the bundled demonstration parses.")
@click.option("--out", default=None, help="Directory for the JSON table.")
@click.pass_context
def noun_phrases(ctx, parses, expressions, fixtures, out):
    """Show the target noun phrase extracted for each expression."""
    expression_list = None
    if expressions:
        if not os.path.exists(expressions):
            click.echo(f"error (schema): expressions file not found [{expressions}]", err=True)
            sys.exit(EXIT_SCHEMA)
        with open(expressions, "r", encoding="utf-8") as f:
            expression_list = [line.strip() for line in f if line.strip()]
    body = call_service(
        "/np",
        {"parses": parses, "expressions": expression_list, "fixtures": fixtures, "out": out},
        ctx.obj["server"],
    )
    width = max((len(r["expression"]) for r in body["rows"]), default=10)
    for row in body["rows"]:
        flag = " [whole sentence]" if row["is_whole_sentence"] else ""
        click.echo(f"{row['expression']:<{width}}  ->  {row['target_np']}{flag}")
    click.echo(f"whole-sentence fallback: {100.0 * body['whole_sentence_fraction']:.2f}%")
    if body.get("out_path"):
        click.echo(f"table -> {body['out_path']}")


@main.command()
@click.option("--records", required=True, help="Records JSON file.")
@click.option("--proposals", required=True, help="Proposals JSON file.")
@click.pass_context
def upperbound(ctx, records, proposals):
    """Oracle metrics: always pick the max-overlap proposal."""
    body = call_service(
        "/upper-bound", {"records": records, "proposals": proposals}, ctx.obj["server"]
    )
    click.echo(f"upper-bound oIoU: {body['oiou']:.4f}")
    click.echo(f"upper-bound mIoU: {body['miou']:.4f}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
