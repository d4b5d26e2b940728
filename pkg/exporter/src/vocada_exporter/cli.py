"""The ``vocada-export`` command line interface."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .encoders import EncoderError
from .exports import (
    ExportError,
    export_class_embeddings,
    export_phrase_embeddings,
    export_proposals,
)
from .served import ServedModel, export_captions, export_synonyms
from .vemb import VembError


@click.group(name="vocada-export")
@click.version_option()
def cli() -> None:
    """Produce interchange files for the vocabulary-adaptation pipeline."""


@cli.command("class-embeddings")
@click.option("--vocab", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--model", default="hash", show_default=True,
              help="hash[:dim=N], clip:<hf model> or sbert:<model>.")
@click.option("--template", default="a {}", show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def cmd_class_embeddings(vocab, model, template, out) -> None:
    """Embed every class name into a VEMB matrix keyed by class id."""
    rows = export_class_embeddings(vocab, model, template, out)
    click.echo(f"wrote {rows} class embedding(s) -> {out}")


@cli.command("phrase-embeddings")
@click.option("--nouns", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--model", default="hash", show_default=True)
@click.option("--template", default="a {}", show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def cmd_phrase_embeddings(nouns, model, template, out) -> None:
    """Embed every distinct noun phrase into a VEMB matrix keyed by phrase."""
    rows = export_phrase_embeddings(nouns, model, template, out)
    click.echo(f"wrote {rows} phrase embedding(s) -> {out}")


@cli.command("proposals")
@click.option("--detector", default="synthetic", show_default=True,
              help="Detector id; synthetic[:<seed>[:dim=N]] is built in.")
@click.option("--images", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def cmd_proposals(detector, images, out) -> None:
    """Dump per-image proposal boxes, objectness and region embeddings."""
    exported, skipped = export_proposals(detector, images, out)
    click.echo(f"wrote proposals for {exported} image(s) -> {out}")
    for note in skipped:
        click.echo(f"skipped {note}", err=True)


def _served(base_url: str, model: str, api_key_env: str, timeout: float) -> ServedModel:
    return ServedModel(
        base_url=base_url, model=model, api_key_env=api_key_env, timeout=timeout
    )


@cli.command("captions")
@click.option("--images", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--base-url", required=True)
@click.option("--model", required=True)
@click.option("--api-key-env", default="VOCADA_API_KEY", show_default=True)
@click.option("--timeout", type=float, default=120.0, show_default=True)
@click.option("--prompt-file", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def cmd_captions(images, base_url, model, api_key_env, timeout, prompt_file, out) -> None:
    """Caption images through a served vision-language model."""
    served = _served(base_url, model, api_key_env, timeout)
    kwargs = {}
    if prompt_file:
        kwargs["prompt"] = Path(prompt_file).read_text(encoding="utf-8")
    count = export_captions(images, served, out, **kwargs)
    click.echo(f"wrote {count} caption(s) -> {out}")


@cli.command("synonyms")
@click.option("--vocab", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--base-url", required=True)
@click.option("--model", required=True)
@click.option("--api-key-env", default="VOCADA_API_KEY", show_default=True)
@click.option("--timeout", type=float, default=120.0, show_default=True)
@click.option("--max-synonyms", type=int, default=5, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def cmd_synonyms(vocab, base_url, model, api_key_env, timeout, max_synonyms, out) -> None:
    """Enrich a vocabulary with model-proposed synonyms, collision-free."""
    served = _served(base_url, model, api_key_env, timeout)
    total = export_synonyms(vocab, served, out, max_synonyms=max_synonyms)
    click.echo(f"added {total} synonym(s) -> {out}")


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except (ExportError, EncoderError, VembError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    return 0


def entry() -> None:
    sys.exit(main())
