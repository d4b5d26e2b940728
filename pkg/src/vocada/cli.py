"""The ``vocada`` command line interface.

Subcommands mirror the pipeline stages (extract-nouns, adapt, rescore,
eval) plus ``run`` for the whole chain. A config file supplies defaults;
flags override it. Exit codes: 0 success, 1 data/usage errors, 2 gateway
errors.
"""

from __future__ import annotations

import dataclasses
import sys
from pathlib import Path

import click

from . import formats, pipeline
from .errors import DataError, GatewayError
from .gateway import ChatGateway, GatewayConfig
from .rescore import RescoreConfig
from .selector import SelectorConfig


def _config_from(ctx_path: str | None) -> pipeline.RunConfig | None:
    return pipeline.load_run_config(ctx_path) if ctx_path else None


def _merge_selector(
    base: SelectorConfig | None,
    kind: str | None,
    topk: int | None,
    no_fallback: bool,
    prompt_template: str | None,
) -> SelectorConfig:
    cfg = base or SelectorConfig()
    updates: dict = {}
    if kind is not None:
        updates["kind"] = kind
    if topk is not None:
        updates["k"] = topk
    if no_fallback:
        updates["fallback_on_empty"] = False
    if prompt_template is not None:
        updates["prompt_template"] = prompt_template
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _merge_rescore(
    base: RescoreConfig | None,
    score_mode: str | None,
    temperature: float | None,
    score_threshold: float | None,
    fuse_objectness: bool,
) -> RescoreConfig:
    cfg = base or RescoreConfig()
    updates: dict = {}
    if score_mode is not None:
        updates["score_mode"] = score_mode
    if temperature is not None:
        updates["softmax_temperature"] = temperature
    if score_threshold is not None:
        updates["score_threshold"] = score_threshold
    if fuse_objectness:
        updates["fuse_objectness"] = True
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _merge_gateway(
    base: GatewayConfig | None,
    base_url: str | None,
    model: str | None,
    cache_dir: str | None,
) -> GatewayConfig | None:
    if base is None and base_url is None:
        return None
    if base is None:
        if model is None:
            raise DataError("gateway needs both --base-url and --model")
        return GatewayConfig(
            base_url=base_url,
            model=model,
            cache_dir=Path(cache_dir) if cache_dir else None,
        )
    updates: dict = {}
    if base_url is not None:
        updates["base_url"] = base_url
    if model is not None:
        updates["model"] = model
    if cache_dir is not None:
        updates["cache_dir"] = Path(cache_dir)
    return dataclasses.replace(base, **updates) if updates else base


@click.group(name="vocada")
@click.version_option()
def cli() -> None:
    """Adapt detector vocabularies per image and evaluate the effect."""


@cli.command("extract-nouns")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--captions", type=click.Path(exists=True, dir_okay=False))
@click.option("--lexicon", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--concurrency", type=int, default=None)
def cmd_extract_nouns(config_path, captions, lexicon, out, concurrency) -> None:
    """Extract noun phrases from a captions JSONL file."""
    cfg = _config_from(config_path)
    captions_path = Path(captions) if captions else (cfg.captions if cfg else None)
    if captions_path is None:
        raise DataError("extract-nouns needs --captions (or a config with one)")
    lexicon_path = Path(lexicon) if lexicon else (cfg.lexicon if cfg else None)
    workers = concurrency if concurrency is not None else (cfg.concurrency if cfg else 1)
    records = pipeline.stage_extract_nouns(captions_path, lexicon_path, Path(out), workers)
    click.echo(f"extracted noun phrases for {len(records)} caption(s) -> {out}")


@cli.command("adapt")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--selector", "selector_kind",
              type=click.Choice(["baseline", "oracle", "embed-topk", "llm"]))
@click.option("--nouns", type=click.Path(exists=True, dir_okay=False))
@click.option("--captions", type=click.Path(exists=True, dir_okay=False))
@click.option("--vocab", type=click.Path(exists=True, dir_okay=False))
@click.option("--class-embeddings", type=click.Path(exists=True, dir_okay=False))
@click.option("--phrase-embeddings", type=click.Path(exists=True, dir_okay=False))
@click.option("--groundtruth", type=click.Path(exists=True, dir_okay=False))
@click.option("--topk", type=int, default=None, help="k for the embed-topk selector.")
@click.option("--no-fallback", is_flag=True, default=False,
              help="Keep empty selections instead of reverting to the full vocabulary.")
@click.option("--prompt-template", type=str, default=None)
@click.option("--base-url", type=str, default=None)
@click.option("--model", type=str, default=None)
@click.option("--cache-dir", type=click.Path(file_okay=False), default=None)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--concurrency", type=int, default=None)
def cmd_adapt(config_path, selector_kind, nouns, captions, vocab, class_embeddings,
              phrase_embeddings, groundtruth, topk, no_fallback, prompt_template,
              base_url, model, cache_dir, out, concurrency) -> None:
    """Produce one adapted vocabulary per image."""
    cfg = _config_from(config_path)
    sel = _merge_selector(cfg.selector if cfg else None, selector_kind, topk,
                          no_fallback, prompt_template)
    vocab_path = Path(vocab) if vocab else (cfg.vocabulary if cfg else None)
    if vocab_path is None:
        raise DataError("adapt needs --vocab (or a config with one)")
    vocabulary = formats.load_vocabulary(vocab_path)

    nouns_path = Path(nouns) if nouns else None
    captions_path = Path(captions) if captions else (cfg.captions if cfg else None)
    nouns_records = formats.load_nouns(nouns_path) if nouns_path else None
    caption_records = (
        formats.load_captions(captions_path)
        if captions_path is not None and sel.kind == "llm"
        else None
    )

    class_emb_path = (
        Path(class_embeddings) if class_embeddings else (cfg.class_embeddings if cfg else None)
    )
    phrase_emb_path = (
        Path(phrase_embeddings) if phrase_embeddings else (cfg.phrase_embeddings if cfg else None)
    )
    class_emb = formats.load_embeddings(class_emb_path) if class_emb_path and sel.kind == "embed-topk" else None
    phrase_emb = formats.load_embeddings(phrase_emb_path) if phrase_emb_path and sel.kind == "embed-topk" else None

    gt_path = Path(groundtruth) if groundtruth else (cfg.groundtruth if cfg else None)
    gts = None
    if sel.kind == "oracle":
        if gt_path is None:
            raise DataError("selector 'oracle' needs --groundtruth")
        _images, gts, _stats = formats.load_groundtruth(gt_path)

    workers = concurrency if concurrency is not None else (cfg.concurrency if cfg else 1)
    gateway_cfg = _merge_gateway(cfg.gateway if cfg else None, base_url, model, cache_dir)
    if sel.kind == "llm":
        if gateway_cfg is None:
            raise DataError("selector 'llm' needs a gateway (--base-url/--model or config)")
        with ChatGateway(gateway_cfg) as gw:
            _records, summary = pipeline.stage_adapt(
                vocabulary, sel, Path(out),
                nouns_records=nouns_records, captions=caption_records,
                gateway=gw, concurrency=workers,
            )
    else:
        _records, summary = pipeline.stage_adapt(
            vocabulary, sel, Path(out),
            nouns_records=nouns_records, captions=caption_records,
            class_emb=class_emb, phrase_emb=phrase_emb, gts=gts,
            concurrency=workers,
        )
    click.echo(summary.line())


@cli.command("rescore")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--proposals", type=click.Path(exists=True, dir_okay=False))
@click.option("--proposal-embeddings", type=click.Path(exists=True, dir_okay=False))
@click.option("--adapted", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--class-embeddings", type=click.Path(exists=True, dir_okay=False))
@click.option("--groundtruth", type=click.Path(exists=True, dir_okay=False),
              help="Optional; provides image sizes for box clamping.")
@click.option("--score-mode", type=click.Choice(["cosine", "softmax"]), default=None)
@click.option("--temperature", type=float, default=None)
@click.option("--score-threshold", type=float, default=None)
@click.option("--fuse-objectness", is_flag=True, default=False)
@click.option("--allow-missing-adapted", is_flag=True, default=False,
              help="Images without an adapted line fall back to the full class set.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--concurrency", type=int, default=None)
def cmd_rescore(config_path, proposals, proposal_embeddings, adapted, class_embeddings,
                groundtruth, score_mode, temperature, score_threshold, fuse_objectness,
                allow_missing_adapted, out, concurrency) -> None:
    """Re-classify proposals against per-image adapted vocabularies."""
    cfg = _config_from(config_path)
    rescore_cfg = _merge_rescore(cfg.rescore if cfg else None, score_mode,
                                 temperature, score_threshold, fuse_objectness)
    proposals_path = Path(proposals) if proposals else (cfg.proposals if cfg else None)
    if proposals_path is None:
        raise DataError("rescore needs --proposals (or a config with one)")
    class_emb_path = (
        Path(class_embeddings) if class_embeddings else (cfg.class_embeddings if cfg else None)
    )
    if class_emb_path is None:
        raise DataError("rescore needs --class-embeddings (or a config with one)")
    prop_emb_path = (
        Path(proposal_embeddings) if proposal_embeddings
        else (cfg.proposal_embeddings if cfg else None)
    )
    gt_path = Path(groundtruth) if groundtruth else (cfg.groundtruth if cfg else None)
    images = None
    if gt_path is not None:
        images, _gts, _stats = formats.load_groundtruth(gt_path)
    workers = concurrency if concurrency is not None else (cfg.concurrency if cfg else 1)
    detections = pipeline.stage_rescore(
        proposals_path, Path(adapted), class_emb_path, rescore_cfg, Path(out),
        proposal_emb_path=prop_emb_path, images=images,
        allow_missing_adapted=allow_missing_adapted, concurrency=workers,
    )
    click.echo(f"re-scored {len(detections)} detection(s) -> {out}")


@cli.command("eval")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--detections", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--groundtruth", type=click.Path(exists=True, dir_okay=False))
@click.option("--vocab", type=click.Path(exists=True, dir_okay=False))
@click.option("--groups", type=click.Path(exists=True, dir_okay=False))
@click.option("--adapted", type=click.Path(exists=True, dir_okay=False))
@click.option("--interpolation", type=click.Choice(["101point", "allpoints"]), default=None)
@click.option("--no-figures", is_flag=True, default=False)
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
def cmd_eval(config_path, detections, groundtruth, vocab, groups, adapted,
             interpolation, no_figures, out_dir) -> None:
    """Evaluate detections and write metrics.json, report.md and figures."""
    cfg = _config_from(config_path)
    gt_path = Path(groundtruth) if groundtruth else (cfg.groundtruth if cfg else None)
    vocab_path = Path(vocab) if vocab else (cfg.vocabulary if cfg else None)
    if gt_path is None or vocab_path is None:
        raise DataError("eval needs --groundtruth and --vocab (or a config with them)")
    group_map = formats.load_groups(Path(groups)) if groups else (cfg.groups if cfg else None)
    mode = interpolation or (cfg.interpolation if cfg else "101point")
    figures = (cfg.figures if cfg else True) and not no_figures
    result = pipeline.stage_eval(
        Path(detections), gt_path, vocab_path, Path(out_dir),
        groups=group_map, adapted_path=Path(adapted) if adapted else None,
        interpolation=mode, figures=figures,
    )
    ap50 = "n/a" if result.ap50_all is None else f"{result.ap50_all:.4f}"
    map_all = "n/a" if result.map_all is None else f"{result.map_all:.4f}"
    click.echo(f"ap50_all={ap50} map_all={map_all} -> {out_dir}")


@cli.command("run")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--selector", "selector_kind",
              type=click.Choice(["baseline", "oracle", "embed-topk", "llm"]))
@click.option("--topk", type=int, default=None)
@click.option("--no-fallback", is_flag=True, default=False)
@click.option("--score-mode", type=click.Choice(["cosine", "softmax"]), default=None)
@click.option("--cache-dir", type=click.Path(file_okay=False), default=None)
@click.option("--concurrency", type=int, default=None)
@click.option("--output-dir", type=click.Path(file_okay=False), default=None)
def cmd_run(config_path, selector_kind, topk, no_fallback, score_mode,
            cache_dir, concurrency, output_dir) -> None:
    """Run captions -> nouns -> adapt -> rescore -> eval end to end."""
    cfg = pipeline.load_run_config(config_path)
    cfg = dataclasses.replace(
        cfg,
        selector=_merge_selector(cfg.selector, selector_kind, topk, no_fallback, None),
        rescore=_merge_rescore(cfg.rescore, score_mode, None, None, False),
    )
    if cache_dir is not None:
        if cfg.gateway is None:
            raise DataError("--cache-dir given but the config has no gateway section")
        cfg = dataclasses.replace(
            cfg, gateway=dataclasses.replace(cfg.gateway, cache_dir=Path(cache_dir))
        )
    if concurrency is not None:
        cfg = dataclasses.replace(cfg, concurrency=concurrency)
    if output_dir is not None:
        cfg = dataclasses.replace(cfg, output_dir=Path(output_dir))
    result = pipeline.run_all(cfg)
    ap50 = "n/a" if result.ap50_all is None else f"{result.ap50_all:.4f}"
    click.echo(f"run complete: ap50_all={ap50} -> {cfg.output_dir}")


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except GatewayError as exc:
        click.echo(f"gateway error: {exc}", err=True)
        return 2
    except DataError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    return 0


def entry() -> None:
    sys.exit(main())
