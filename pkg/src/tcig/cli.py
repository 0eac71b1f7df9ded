"""Command-line driver: generate (in-process job), evaluate (IoU harness),
serve (HTTP service).

Exit codes: 0 success, 2 validation/usage error, 3 stage failure,
4 port in use.
"""
from __future__ import annotations

import json
import os
import socket
import sys

import click

from .backends.registry import BackendBundle, build_backends
from .core import ClassVocabulary
from .errors import JobSpecError, ManifestError
from .evalharness import (
    FilterProtocol,
    evaluate as run_evaluation,
    filter_records,
    load_manifest,
    render_report,
    report_to_dict,
)
from .pipeline import JobStatus, job_from_spec, job_summary, run_job
from .stage1 import trace_to_dicts

EXIT_VALIDATION = 2
EXIT_STAGE_FAILURE = 3
EXIT_PORT_IN_USE = 4


def _load_backends(backend: str, vocab: ClassVocabulary | None) -> BackendBundle:
    if backend == "toy":
        config = {}
    else:
        try:
            with open(backend, "r", encoding="utf-8") as fh:
                config = json.load(fh)
        except Exception as exc:
            raise click.ClickException(f"cannot read backend config: {exc}")
    return build_backends(config, vocab=vocab)


def _load_vocab(path: str) -> ClassVocabulary:
    with open(path, "r", encoding="utf-8") as fh:
        return ClassVocabulary.from_json(fh.read())


@click.group()
def main() -> None:
    """Two-stage controllable image generation toolkit."""


@main.command()
@click.option("--mask", "mask_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Index-map mask (PNG or PGM).")
@click.option("--vocab", "vocab_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Class vocabulary JSON.")
@click.option("--prompt", required=True, help="Text prompt.")
@click.option("--weights", "weights_json", default=None,
              help='Loss weights JSON, e.g. {"alpha_clip": 1.0, "alpha_seg": [5.0]}.')
@click.option("--strength", type=float, default=None, help="Refiner strength.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--n-stage1", type=int, default=1, show_default=True)
@click.option("--n-stage2", type=int, default=1, show_default=True)
@click.option("--max-steps", type=int, default=None, help="Optimizer step cap.")
@click.option("--step-size", type=float, default=None, help="Optimizer step size.")
@click.option("--out-dir", default="out", show_default=True,
              type=click.Path(file_okay=False))
@click.option("--backend", default="toy", show_default=True,
              help="'toy' or path to a backend config JSON.")
def generate(mask_path: str, vocab_path: str, prompt: str,
             weights_json: str | None, strength: float | None, seed: int,
             n_stage1: int, n_stage2: int, max_steps: int | None,
             step_size: float | None, out_dir: str, backend: str) -> None:
    """Run one auto-mode job locally and write its images and traces."""
    try:
        vocab = _load_vocab(vocab_path)
    except Exception as exc:
        click.echo(f"error: cannot read vocabulary: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    backends = _load_backends(backend, vocab)

    spec: dict = {
        "prompt": prompt,
        "mask_path": mask_path,
        "fan_out": {"n_stage1": n_stage1, "n_stage2_per_stage1": n_stage2},
        "seed": seed,
        "mode": "auto",
    }
    if weights_json is not None:
        try:
            spec["weights"] = json.loads(weights_json)
        except json.JSONDecodeError as exc:
            click.echo(f"error: --weights is not valid JSON: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)
    optimizer = {}
    if max_steps is not None:
        optimizer["max_steps"] = max_steps
    if step_size is not None:
        optimizer["step_size"] = step_size
    if optimizer:
        spec["optimizer"] = optimizer
    if strength is not None:
        spec["refine"] = {"strength": strength}

    try:
        job = job_from_spec(spec, backends, job_id="cli")
    except JobSpecError as exc:
        for field, message in exc.violations:
            click.echo(f"error: {field}: {message}", err=True)
        sys.exit(EXIT_VALIDATION)

    run_job(job, backends, mode="auto")
    if job.status is not JobStatus.DONE:
        click.echo(
            f"error: stage {job.failed_stage} failed: {job.error}", err=True
        )
        sys.exit(EXIT_STAGE_FAILURE)

    os.makedirs(out_dir, exist_ok=True)
    files = {}
    for i, res in enumerate(job.stage1_results):
        name = f"stage1_{i}.png"
        with open(os.path.join(out_dir, name), "wb") as fh:
            fh.write(res.image.to_png_bytes())
        files[res.id] = name
    for res in job.stage2_results:
        i, j = res.id.split("-")[1:]
        name = f"stage2_{i}_{j}.png"
        with open(os.path.join(out_dir, name), "wb") as fh:
            fh.write(res.image.to_png_bytes())
        files[res.id] = name
    traces = [
        {"run": i, "seed": res.latent.seed, "trace": trace_to_dicts(res.loss_trace)}
        for i, res in enumerate(job.stage1_results)
    ]
    with open(os.path.join(out_dir, "trace.json"), "w", encoding="utf-8") as fh:
        json.dump(traces, fh, indent=2)
    doc = job_summary(job)
    for entry in doc["stage1"] + doc["stage2"]:
        entry["file"] = files[entry["id"]]
    with open(os.path.join(out_dir, "job.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
    click.echo(
        f"wrote {len(job.stage1_results)} stage-1 and "
        f"{len(job.stage2_results)} stage-2 image(s) to {out_dir}"
    )


@main.command()
@click.option("--manifest", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON-lines dataset manifest.")
@click.option("--backend", default="toy", show_default=True,
              help="'toy' or path to a backend config JSON.")
@click.option("--filter-off", is_flag=True, help="Skip the record filter.")
@click.option("--method", default="TCIG", show_default=True,
              help="Row label for the report.")
@click.option("--jobs", type=int, default=1, show_default=True,
              help="Parallel evaluation workers.")
@click.option("--out-dir", default="eval_out", show_default=True,
              type=click.Path(file_okay=False))
def evaluate(manifest: str, backend: str, filter_off: bool, method: str,
             jobs: int, out_dir: str) -> None:
    """Filter a manifest, run the pipeline per record, report IoU stats."""
    try:
        records = load_manifest(manifest)
    except ManifestError as exc:
        click.echo(f"error: {manifest}: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    if not records:
        click.echo("error: manifest has no records", err=True)
        sys.exit(EXIT_VALIDATION)
    vocabs = {record.vocab.to_json() for record in records}
    if len(vocabs) > 1:
        click.echo("error: manifest mixes vocabularies", err=True)
        sys.exit(EXIT_VALIDATION)
    backends = _load_backends(backend, records[0].vocab)

    rejections = {}
    if filter_off:
        kept = list(records)
        fingerprint = "unfiltered"
    else:
        result = filter_records(records, FilterProtocol())
        kept = list(result.kept)
        rejections = result.rejections
        fingerprint = result.protocol.fingerprint()

    report = run_evaluation(
        kept, backends, method=method, protocol_fingerprint=fingerprint, jobs=jobs
    )
    text = render_report(report)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    doc = report_to_dict(report)
    doc["total_records"] = len(records)
    doc["rejections"] = rejections
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
    click.echo(text, nl=False)


@main.command()
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Service config JSON.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=None,
              help="Override the configured port.")
def serve(config_path: str | None, host: str, port: int | None) -> None:
    """Start the HTTP job service."""
    import uvicorn

    from .service.app import DEFAULT_PORT, build_service, create_app

    config = {}
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                config = json.load(fh)
        except Exception as exc:
            click.echo(f"error: cannot read config: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)
    if port is None:
        port = config.get("port", DEFAULT_PORT)

    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind((host, port))
    except OSError:
        click.echo(f"error: port {port} is already in use", err=True)
        sys.exit(EXIT_PORT_IN_USE)
    finally:
        probe.close()

    service = build_service(config)
    app = create_app(service)
    click.echo(f"serving on http://{host}:{port}")
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except OSError:
        click.echo(f"error: port {port} is already in use", err=True)
        sys.exit(EXIT_PORT_IN_USE)


if __name__ == "__main__":
    main()
