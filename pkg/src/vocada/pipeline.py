"""Stage implementations and the end-to-end run orchestrator.

Each stage reads and writes the interchange files, so a full run equals
running the stage commands by hand in order. Per-image work is mapped
over a bounded thread pool with results consumed in input order by a
single writer, which keeps outputs byte-identical for any worker count.
"""

from __future__ import annotations

import json
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence, TypeVar

from . import formats, metrics, nouns, report, selector
from .domain import (
    AdaptedVocabulary,
    CaptionRecord,
    Detection,
    EmbeddingMatrix,
    GroundTruthBox,
    ImageRecord,
    NounPhraseSet,
    Proposal,
    Vocabulary,
)
from .errors import DataError, VocadaError
from .gateway import CaptionerPrompt, ChatGateway, GatewayConfig, default_captioner_prompt
from .rescore import RescoreConfig, rescore_image
from .selector import SelectorConfig

T = TypeVar("T")
R = TypeVar("R")

STAGES = ("captions", "extract-nouns", "adapt", "rescore", "eval")


@dataclass(frozen=True)
class RunConfig:
    """Resolved inputs for a full pipeline run."""

    output_dir: Path
    vocabulary: Path
    captions: Path | None = None
    images: Path | None = None
    lexicon: Path | None = None
    class_embeddings: Path | None = None
    phrase_embeddings: Path | None = None
    proposals: Path | None = None
    proposal_embeddings: Path | None = None
    groundtruth: Path | None = None
    groups: Mapping[int, str] | None = None
    selector: SelectorConfig = SelectorConfig()
    rescore: RescoreConfig = RescoreConfig()
    gateway: GatewayConfig | None = None
    captioner_prompt: Path | None = None
    concurrency: int = 1
    figures: bool = True
    interpolation: str = "101point"

    def __post_init__(self) -> None:
        if self.concurrency < 1:
            raise DataError("concurrency must be >= 1")


def load_run_config(path: str | Path) -> RunConfig:
    """Parse a config JSON file; relative paths resolve against its directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed JSON: {exc}") from None
    base = path.parent

    def resolve(key: str) -> Path | None:
        value = raw.get(key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else (base / p)

    groups = None
    if "groups" in raw and raw["groups"] is not None:
        value = raw["groups"]
        groups = formats.load_groups(
            value if isinstance(value, Mapping) else (base / value)
        )

    selector_cfg = SelectorConfig(**raw.get("selector", {}))
    rescore_cfg = RescoreConfig(**raw.get("rescore", {}))
    gateway_cfg = None
    if raw.get("gateway") is not None:
        gw = dict(raw["gateway"])
        if gw.get("cache_dir") is not None:
            cache = Path(gw["cache_dir"])
            gw["cache_dir"] = cache if cache.is_absolute() else (base / cache)
        gateway_cfg = GatewayConfig(**gw)

    output_dir = resolve("output_dir")
    vocabulary = resolve("vocabulary")
    if output_dir is None or vocabulary is None:
        raise DataError(f"{path}: config requires 'output_dir' and 'vocabulary'")
    try:
        return RunConfig(
            output_dir=output_dir,
            vocabulary=vocabulary,
            captions=resolve("captions"),
            images=resolve("images"),
            lexicon=resolve("lexicon"),
            class_embeddings=resolve("class_embeddings"),
            phrase_embeddings=resolve("phrase_embeddings"),
            proposals=resolve("proposals"),
            proposal_embeddings=resolve("proposal_embeddings"),
            groundtruth=resolve("groundtruth"),
            groups=groups,
            selector=selector_cfg,
            rescore=rescore_cfg,
            gateway=gateway_cfg,
            captioner_prompt=resolve("captioner_prompt"),
            concurrency=int(raw.get("concurrency", 1)),
            figures=bool(raw.get("figures", True)),
            interpolation=str(raw.get("interpolation", "101point")),
        )
    except TypeError as exc:
        raise DataError(f"{path}: bad config field: {exc}") from None


def _ordered_map(
    fn: Callable[[T], R], items: Sequence[T], concurrency: int
) -> list[R]:
    """Map preserving input order; a pool is used only when it can help."""
    if concurrency <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        return list(pool.map(fn, items))


def _load_lexicon(path: Path | None) -> nouns.TagLexicon:
    return nouns.load_lexicon(path) if path is not None else nouns.default_lexicon()


# -- stages -------------------------------------------------------------------


@dataclass(frozen=True)
class AdaptSummary:
    images: int
    fallbacks: int
    mean_size: float

    def line(self) -> str:
        return (
            f"adapted {self.images} image(s): mean vocabulary size "
            f"{self.mean_size:.2f}, fallbacks {self.fallbacks}"
        )


def stage_extract_nouns(
    captions_path: Path,
    lexicon_path: Path | None,
    out_path: Path,
    concurrency: int = 1,
) -> list[NounPhraseSet]:
    captions = formats.load_captions(captions_path)
    lexicon = _load_lexicon(lexicon_path)
    records = _ordered_map(
        lambda c: nouns.extract(c, lexicon), captions, concurrency
    )
    formats.save_nouns(out_path, records)
    return records


def _validate_class_embeddings(class_emb: EmbeddingMatrix, vocab: Vocabulary) -> None:
    expected = {str(c.id) for c in vocab.classes}
    present = set(class_emb.keys)
    missing = sorted(expected - present)
    extra = sorted(present - expected)
    if missing:
        raise DataError(f"class embeddings missing vocabulary ids: {missing}")
    if extra:
        raise DataError(f"class embeddings carry unknown keys: {extra}")


def stage_adapt(
    vocab: Vocabulary,
    cfg: SelectorConfig,
    out_path: Path,
    nouns_records: Sequence[NounPhraseSet] | None = None,
    captions: Sequence[CaptionRecord] | None = None,
    class_emb: EmbeddingMatrix | None = None,
    phrase_emb: EmbeddingMatrix | None = None,
    gts: Sequence[GroundTruthBox] | None = None,
    gateway: ChatGateway | None = None,
    concurrency: int = 1,
) -> tuple[list[AdaptedVocabulary], AdaptSummary]:
    """Dispatch to the configured selector; fails before any work on missing inputs."""
    kind = cfg.kind
    if kind in ("baseline", "embed-topk", "llm") and nouns_records is None:
        raise DataError(f"selector {kind!r} needs a noun-phrase file to enumerate images")
    if kind == "embed-topk":
        if class_emb is None or phrase_emb is None:
            raise DataError("selector 'embed-topk' needs class and phrase embeddings")
        _validate_class_embeddings(class_emb, vocab)
    if kind == "llm":
        if gateway is None:
            raise DataError("selector 'llm' needs a configured model gateway")
        if captions is None:
            raise DataError("selector 'llm' needs the captions file")
    if kind == "oracle" and gts is None and nouns_records is None:
        raise DataError("selector 'oracle' needs ground truth and an image list")

    if kind == "oracle":
        if gts is None:
            raise DataError("selector 'oracle' needs the ground-truth file")
        gt_by_image: dict[str, list[GroundTruthBox]] = {}
        for gt in gts:
            gt_by_image.setdefault(gt.image_id, []).append(gt)
        image_ids = (
            [r.image_id for r in nouns_records]
            if nouns_records is not None
            else sorted(gt_by_image)
        )
        records = [
            selector.select_oracle(gt_by_image.get(image_id, []), vocab, image_id)
            for image_id in image_ids
        ]
    elif kind == "baseline":
        assert nouns_records is not None
        records = [selector.select_baseline(vocab, r.image_id) for r in nouns_records]
    elif kind == "embed-topk":
        assert nouns_records is not None and phrase_emb is not None and class_emb is not None
        records = _ordered_map(
            lambda r: selector.select_embed_topk(r, phrase_emb, class_emb, vocab, cfg),
            nouns_records,
            concurrency,
        )
    else:
        assert nouns_records is not None and captions is not None and gateway is not None
        caption_by_image = {c.image_id: c for c in captions}
        missing = [r.image_id for r in nouns_records if r.image_id not in caption_by_image]
        if missing:
            raise DataError(f"no caption for image(s): {missing}")
        system_prompt = selector.build_llm_system_prompt(vocab)

        def llm_one(record: NounPhraseSet) -> AdaptedVocabulary:
            message = selector.build_llm_user_message(
                caption_by_image[record.image_id].caption, record
            )
            raw = gateway.chat_select(system_prompt, message, image_id=record.image_id)
            return selector.parse_llm_selection(raw, vocab, cfg, record.image_id).adapted

        records = _ordered_map(llm_one, nouns_records, concurrency)

    formats.save_adapted(out_path, records)
    sizes = [len(r.class_ids) for r in records]
    summary = AdaptSummary(
        images=len(records),
        fallbacks=sum(1 for r in records if r.fallback_used),
        mean_size=(sum(sizes) / len(sizes)) if sizes else 0.0,
    )
    return list(records), summary


def _group_proposals(proposals: Sequence[Proposal]) -> list[tuple[str, list[Proposal]]]:
    grouped: dict[str, list[Proposal]] = {}
    for p in proposals:
        grouped.setdefault(p.image_id, []).append(p)
    return list(grouped.items())


def stage_rescore(
    proposals_path: Path,
    adapted_path: Path,
    class_emb_path: Path,
    cfg: RescoreConfig,
    out_path: Path,
    proposal_emb_path: Path | None = None,
    images: Mapping[str, ImageRecord] | None = None,
    allow_missing_adapted: bool = False,
    concurrency: int = 1,
) -> list[Detection]:
    proposals, _stats = formats.load_proposals(proposals_path, images)
    class_emb = formats.load_embeddings(class_emb_path)
    proposal_emb = formats.load_embeddings(
        formats.resolve_proposal_embeddings_path(proposals_path, proposal_emb_path)
    )
    adapted_by_image = {a.image_id: a for a in formats.load_adapted(adapted_path)}

    full_ids = frozenset(int(k) for k in class_emb.keys if k.lstrip("-").isdigit())

    def adapted_for(image_id: str) -> AdaptedVocabulary:
        record = adapted_by_image.get(image_id)
        if record is not None:
            return record
        if not allow_missing_adapted:
            raise DataError(
                f"image {image_id!r} has proposals but no adapted-vocabulary line"
            )
        return AdaptedVocabulary(
            image_id=image_id, class_ids=full_ids, selector="baseline", fallback_used=True
        )

    groups = _group_proposals(proposals)
    per_image = _ordered_map(
        lambda item: rescore_image(
            item[1], adapted_for(item[0]), class_emb, proposal_emb, cfg
        ),
        groups,
        concurrency,
    )
    detections = [d for batch in per_image for d in batch]
    if cfg.score_threshold > 0.0:
        detections = [d for d in detections if d.score >= cfg.score_threshold]
    formats.save_detections(out_path, detections)
    return detections


def stage_eval(
    detections_path: Path,
    groundtruth_path: Path,
    vocabulary_path: Path,
    out_dir: Path,
    groups: Mapping[int, str] | None = None,
    adapted_path: Path | None = None,
    interpolation: str = "101point",
    figures: bool = True,
    selector_tag: str | None = None,
) -> metrics.EvalReport:
    vocab = formats.load_vocabulary(vocabulary_path)
    images, gts, _stats = formats.load_groundtruth(groundtruth_path)
    dets = formats.load_detections(detections_path)
    for det in dets:
        if det.image_id not in images:
            raise DataError(
                f"detection references image {det.image_id!r} absent from ground truth"
            )
    result = metrics.evaluate(
        dets, gts, vocab, groups=groups, interpolation=interpolation
    )
    tag = selector_tag
    if adapted_path is not None:
        adapted = formats.load_adapted(adapted_path)
        for record in adapted:
            if record.image_id not in images:
                raise DataError(
                    f"adapted vocabulary references image {record.image_id!r} "
                    "absent from ground truth"
                )
        result = metrics.attach_vocab_quality(result, adapted, gts, vocab)
        if tag is None and adapted:
            tag = adapted[0].selector

    out_dir.mkdir(parents=True, exist_ok=True)
    figure_files: list[str] = []
    if figures:
        figure_files = report.write_figures(out_dir, result, vocab, dets, gts)
    formats.write_json(out_dir / "metrics.json", report.metrics_payload(result))
    (out_dir / "report.md").write_text(
        report.render_report_md(result, vocab, selector=tag, figure_files=figure_files),
        encoding="utf-8",
    )
    return result


# -- full pipeline ------------------------------------------------------------


def _write_manifest(out_dir: Path, stages_done: list[str], complete: bool) -> None:
    formats.write_json(
        out_dir / "MANIFEST.json",
        {
            "complete": complete,
            "stages": stages_done,
            "outputs": {
                "captions": "captions.jsonl",
                "extract-nouns": "nouns.jsonl",
                "adapt": "adapted.jsonl",
                "rescore": "detections.jsonl",
                "eval": ["metrics.json", "report.md"],
            },
        },
    )


def _acquire_captions(cfg: RunConfig, out_path: Path) -> None:
    """Copy the captions file, or caption via the gateway from an image list."""
    if cfg.captions is not None:
        records = formats.load_captions(cfg.captions)  # validate before copying
        shutil.copyfile(cfg.captions, out_path)
        del records
        return
    if cfg.gateway is None or cfg.images is None:
        raise DataError(
            "caption acquisition needs either a captions file or both a "
            "gateway config and an images list"
        )
    image_rows = formats.read_jsonl(cfg.images)
    refs: list[tuple[str, str]] = []
    seen: set[str] = set()
    for lineno, obj in image_rows:
        where = f"{cfg.images}:{lineno}"
        if "image_id" not in obj or "path" not in obj:
            raise DataError(f"{where}: expected fields image_id and path")
        image_id = str(obj["image_id"])
        if image_id in seen:
            raise DataError(f"{where}: duplicate image_id {image_id!r}")
        seen.add(image_id)
        ref = Path(obj["path"])
        if not ref.is_absolute():
            ref = cfg.images.parent / ref
        refs.append((image_id, str(ref)))
    prompt = (
        CaptionerPrompt(text=cfg.captioner_prompt.read_text(encoding="utf-8"))
        if cfg.captioner_prompt is not None
        else default_captioner_prompt()
    )
    with ChatGateway(cfg.gateway) as gw:
        records = _ordered_map(
            lambda item: gw.caption_image(item[1], prompt, image_id=item[0]),
            refs,
            cfg.concurrency,
        )
    formats.save_captions(out_path, records)


def run_all(cfg: RunConfig) -> metrics.EvalReport:
    """Full pipeline into ``cfg.output_dir``; reruns are byte-identical.

    The manifest marks partial trees when a stage fails; the failing
    stage's name prefixes the raised error.
    """
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    stages_done: list[str] = []
    _write_manifest(out, stages_done, complete=False)

    def run_stage(name: str, fn: Callable[[], T]) -> T:
        try:
            value = fn()
        except VocadaError as exc:
            _write_manifest(out, stages_done, complete=False)
            raise type(exc)(f"stage {name}: {exc}") from exc
        stages_done.append(name)
        _write_manifest(out, stages_done, complete=False)
        return value

    for key in ("vocabulary", "proposals", "groundtruth"):
        if getattr(cfg, key) is None:
            raise DataError(f"run config needs {key!r}")

    captions_path = out / "captions.jsonl"
    nouns_path = out / "nouns.jsonl"
    adapted_path = out / "adapted.jsonl"
    detections_path = out / "detections.jsonl"

    run_stage("captions", lambda: _acquire_captions(cfg, captions_path))
    run_stage(
        "extract-nouns",
        lambda: stage_extract_nouns(
            captions_path, cfg.lexicon, nouns_path, cfg.concurrency
        ),
    )

    vocab = formats.load_vocabulary(cfg.vocabulary)
    images, gts, _ = formats.load_groundtruth(cfg.groundtruth)

    def adapt() -> tuple[list[AdaptedVocabulary], AdaptSummary]:
        nouns_records = formats.load_nouns(nouns_path)
        captions = formats.load_captions(captions_path)
        class_emb = (
            formats.load_embeddings(cfg.class_embeddings)
            if cfg.class_embeddings is not None
            else None
        )
        phrase_emb = (
            formats.load_embeddings(cfg.phrase_embeddings)
            if cfg.phrase_embeddings is not None
            else None
        )
        if cfg.selector.kind == "llm":
            if cfg.gateway is None:
                raise DataError("selector 'llm' needs a gateway section in the config")
            with ChatGateway(cfg.gateway) as gw:
                return stage_adapt(
                    vocab,
                    cfg.selector,
                    adapted_path,
                    nouns_records=nouns_records,
                    captions=captions,
                    gateway=gw,
                    concurrency=cfg.concurrency,
                )
        return stage_adapt(
            vocab,
            cfg.selector,
            adapted_path,
            nouns_records=nouns_records,
            captions=captions,
            class_emb=class_emb,
            phrase_emb=phrase_emb,
            gts=gts,
            concurrency=cfg.concurrency,
        )

    run_stage("adapt", adapt)

    if cfg.class_embeddings is None:
        raise DataError("run config needs 'class_embeddings' for re-scoring")
    run_stage(
        "rescore",
        lambda: stage_rescore(
            cfg.proposals,
            adapted_path,
            cfg.class_embeddings,
            cfg.rescore,
            detections_path,
            proposal_emb_path=cfg.proposal_embeddings,
            images=images,
            concurrency=cfg.concurrency,
        ),
    )
    result = run_stage(
        "eval",
        lambda: stage_eval(
            detections_path,
            cfg.groundtruth,
            cfg.vocabulary,
            out,
            groups=cfg.groups,
            adapted_path=adapted_path,
            interpolation=cfg.interpolation,
            figures=cfg.figures,
            selector_tag=cfg.selector.kind,
        ),
    )
    _write_manifest(out, stages_done, complete=True)
    return result
