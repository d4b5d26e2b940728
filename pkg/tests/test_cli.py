from __future__ import annotations

import json
import subprocess

import pytest

from mock_server import MockChatServer, mentions_responder
from vocada.cli import main


def run_cli(*args: str) -> int:
    return main([str(a) for a in args])


class TestExtractNouns:
    def test_scene_golden_bytes(self, scene_dir, tmp_path):
        out = tmp_path / "nouns.jsonl"
        code = run_cli(
            "extract-nouns", "--captions", scene_dir / "captions.jsonl", "--out", out
        )
        assert code == 0
        assert out.read_bytes() == (scene_dir / "golden" / "nouns.jsonl").read_bytes()

    def test_empty_input_gives_empty_output(self, tmp_path):
        captions = tmp_path / "captions.jsonl"
        captions.write_text("", encoding="utf-8")
        out = tmp_path / "nouns.jsonl"
        assert run_cli("extract-nouns", "--captions", captions, "--out", out) == 0
        assert out.read_bytes() == b""

    def test_duplicate_image_id_is_exit_1(self, tmp_path, capsys):
        captions = tmp_path / "captions.jsonl"
        captions.write_text(
            '{"image_id": "a", "caption": "x"}\n{"image_id": "a", "caption": "y"}\n',
            encoding="utf-8",
        )
        code = run_cli("extract-nouns", "--captions", captions, "--out", tmp_path / "n.jsonl")
        assert code == 1
        assert "'a'" in capsys.readouterr().err

    def test_malformed_line_reports_line_number(self, tmp_path, capsys):
        captions = tmp_path / "captions.jsonl"
        captions.write_text('{"image_id": "a", "caption": "x"}\n{broken\n', encoding="utf-8")
        code = run_cli("extract-nouns", "--captions", captions, "--out", tmp_path / "n.jsonl")
        assert code == 1
        assert ":2" in capsys.readouterr().err


class TestAdapt:
    @pytest.mark.parametrize(
        "tag,args",
        [
            ("baseline", ["--selector", "baseline"]),
            ("oracle", ["--selector", "oracle"]),
            ("topk1", ["--selector", "embed-topk", "--topk", "1"]),
        ],
    )
    def test_scene_goldens(self, scene_dir, tmp_path, tag, args):
        out = tmp_path / "adapted.jsonl"
        code = run_cli(
            "adapt",
            "--vocab", scene_dir / "vocabulary.json",
            "--nouns", scene_dir / "golden" / "nouns.jsonl",
            "--class-embeddings", scene_dir / "class_embeddings.vemb",
            "--phrase-embeddings", scene_dir / "phrase_embeddings.json",
            "--groundtruth", scene_dir / "groundtruth.json",
            "--out", out,
            *args,
        )
        assert code == 0
        assert out.read_bytes() == (scene_dir / "golden" / f"adapted.{tag}.jsonl").read_bytes()

    def test_summary_line_reports_fallbacks_and_mean_size(self, scene_dir, tmp_path, capsys):
        out = tmp_path / "adapted.jsonl"
        run_cli(
            "adapt", "--selector", "embed-topk",
            "--vocab", scene_dir / "vocabulary.json",
            "--nouns", scene_dir / "golden" / "nouns.jsonl",
            "--class-embeddings", scene_dir / "class_embeddings.vemb",
            "--phrase-embeddings", scene_dir / "phrase_embeddings.json",
            "--out", out,
        )
        stdout = capsys.readouterr().out
        assert "mean vocabulary size 3.00" in stdout
        assert "fallbacks 1" in stdout

    def test_missing_dependency_fails_before_any_work(self, scene_dir, tmp_path, capsys):
        out = tmp_path / "adapted.jsonl"
        code = run_cli(
            "adapt", "--selector", "embed-topk",
            "--vocab", scene_dir / "vocabulary.json",
            "--nouns", scene_dir / "golden" / "nouns.jsonl",
            "--out", out,
        )
        assert code == 1
        assert not out.exists()
        assert "embed" in capsys.readouterr().err

    def test_oracle_needs_groundtruth(self, scene_dir, tmp_path):
        code = run_cli(
            "adapt", "--selector", "oracle",
            "--vocab", scene_dir / "vocabulary.json",
            "--nouns", scene_dir / "golden" / "nouns.jsonl",
            "--out", tmp_path / "adapted.jsonl",
        )
        assert code == 1

    def test_llm_selector_against_mock(self, scene_dir, tmp_path):
        surfaces = {
            "curling stone": "curling stone",
            "television": "tv",
            "sofa": "couch",
            "player": "person",
            "man": "person",
            "dog": "dog",
        }
        out = tmp_path / "adapted.jsonl"
        with MockChatServer(mentions_responder(surfaces)) as server:
            code = run_cli(
                "adapt", "--selector", "llm",
                "--vocab", scene_dir / "vocabulary.json",
                "--nouns", scene_dir / "golden" / "nouns.jsonl",
                "--captions", scene_dir / "captions.jsonl",
                "--base-url", server.base_url,
                "--model", "mock-llm",
                "--out", out,
            )
        assert code == 0
        rows = [json.loads(line) for line in out.read_text().splitlines()]
        by_image = {r["image_id"]: r for r in rows}
        assert by_image["img1"]["class_ids"] == [1, 8]
        assert by_image["img2"]["class_ids"] == [5, 6]
        # img4's caption mentions no class surface: full-vocabulary fallback.
        assert by_image["img4"]["class_ids"] == [1, 2, 3, 4, 5, 6, 7, 8]
        assert by_image["img4"]["fallback_used"] is True

    def test_gateway_failure_is_exit_2(self, scene_dir, tmp_path):
        with MockChatServer(status_script=[500] * 10) as server:
            code = run_cli(
                "adapt", "--selector", "llm",
                "--vocab", scene_dir / "vocabulary.json",
                "--nouns", scene_dir / "golden" / "nouns.jsonl",
                "--captions", scene_dir / "captions.jsonl",
                "--base-url", server.base_url,
                "--model", "mock-llm",
                "--out", tmp_path / "adapted.jsonl",
            )
        assert code == 2


class TestRescore:
    @pytest.mark.parametrize("tag", ["baseline", "oracle", "topk1"])
    def test_scene_goldens(self, scene_dir, tmp_path, tag):
        out = tmp_path / "detections.jsonl"
        code = run_cli(
            "rescore",
            "--proposals", scene_dir / "proposals.jsonl",
            "--adapted", scene_dir / "golden" / f"adapted.{tag}.jsonl",
            "--class-embeddings", scene_dir / "class_embeddings.vemb",
            "--groundtruth", scene_dir / "groundtruth.json",
            "--out", out,
        )
        assert code == 0
        assert out.read_bytes() == (scene_dir / "golden" / f"detections.{tag}.jsonl").read_bytes()

    def test_dangling_embedding_key_names_the_key(self, scene_dir, tmp_path, capsys):
        proposals = tmp_path / "proposals.jsonl"
        proposals.write_text(
            json.dumps(
                {
                    "image_id": "img1",
                    "boxes": [[0, 0, 10, 10]],
                    "objectness": [0.5],
                    "embedding_keys": ["ghost-key"],
                }
            )
            + "\n",
            encoding="utf-8",
        )
        code = run_cli(
            "rescore",
            "--proposals", proposals,
            "--proposal-embeddings", scene_dir / "proposals.vemb",
            "--adapted", scene_dir / "golden" / "adapted.baseline.jsonl",
            "--class-embeddings", scene_dir / "class_embeddings.vemb",
            "--out", tmp_path / "d.jsonl",
        )
        assert code == 1
        assert "ghost-key" in capsys.readouterr().err

    def test_missing_adapted_line_errors_without_flag(self, scene_dir, tmp_path, capsys):
        adapted = tmp_path / "adapted.jsonl"
        lines = (scene_dir / "golden" / "adapted.baseline.jsonl").read_text().splitlines()
        adapted.write_text("\n".join(lines[:-1]) + "\n", encoding="utf-8")
        code = run_cli(
            "rescore",
            "--proposals", scene_dir / "proposals.jsonl",
            "--adapted", adapted,
            "--class-embeddings", scene_dir / "class_embeddings.vemb",
            "--out", tmp_path / "d.jsonl",
        )
        assert code == 1
        assert "img6" in capsys.readouterr().err

    def test_missing_adapted_line_baseline_fallback(self, scene_dir, tmp_path):
        adapted = tmp_path / "adapted.jsonl"
        lines = (scene_dir / "golden" / "adapted.baseline.jsonl").read_text().splitlines()
        adapted.write_text("\n".join(lines[:-1]) + "\n", encoding="utf-8")
        out = tmp_path / "d.jsonl"
        code = run_cli(
            "rescore",
            "--proposals", scene_dir / "proposals.jsonl",
            "--adapted", adapted,
            "--class-embeddings", scene_dir / "class_embeddings.vemb",
            "--groundtruth", scene_dir / "groundtruth.json",
            "--allow-missing-adapted",
            "--out", out,
        )
        assert code == 0
        assert out.read_bytes() == (
            scene_dir / "golden" / "detections.baseline.jsonl"
        ).read_bytes()

    def test_empty_proposals_empty_detections(self, scene_dir, tmp_path):
        proposals = tmp_path / "proposals.jsonl"
        proposals.write_text("", encoding="utf-8")
        out = tmp_path / "d.jsonl"
        code = run_cli(
            "rescore",
            "--proposals", proposals,
            "--proposal-embeddings", scene_dir / "proposals.vemb",
            "--adapted", scene_dir / "golden" / "adapted.baseline.jsonl",
            "--class-embeddings", scene_dir / "class_embeddings.vemb",
            "--out", out,
        )
        assert code == 0
        assert out.read_bytes() == b""


class TestEval:
    @pytest.mark.parametrize("tag", ["baseline", "oracle", "topk1"])
    def test_scene_goldens(self, scene_dir, tmp_path, tag):
        out_dir = tmp_path / tag
        code = run_cli(
            "eval",
            "--detections", scene_dir / "golden" / f"detections.{tag}.jsonl",
            "--groundtruth", scene_dir / "groundtruth.json",
            "--vocab", scene_dir / "vocabulary.json",
            "--groups", scene_dir / "groups.json",
            "--adapted", scene_dir / "golden" / f"adapted.{tag}.jsonl",
            "--no-figures",
            "--out-dir", out_dir,
        )
        assert code == 0
        got = json.loads((out_dir / "metrics.json").read_text())
        expected = json.loads((scene_dir / "golden" / f"metrics.{tag}.json").read_text())
        assert got == expected
        assert (out_dir / "report.md").exists()

    def test_figures_written(self, scene_dir, tmp_path):
        out_dir = tmp_path / "out"
        code = run_cli(
            "eval",
            "--detections", scene_dir / "golden" / "detections.oracle.jsonl",
            "--groundtruth", scene_dir / "groundtruth.json",
            "--vocab", scene_dir / "vocabulary.json",
            "--adapted", scene_dir / "golden" / "adapted.oracle.jsonl",
            "--out-dir", out_dir,
        )
        assert code == 0
        for name in ("ap50_per_class.png", "pr_curve_iou50.png", "vocab_quality.png"):
            path = out_dir / "figures" / name
            assert path.exists() and path.stat().st_size > 0
        assert "figures/ap50_per_class.png" in (out_dir / "report.md").read_text()

    def test_vocab_keys_absent_without_adapted(self, scene_dir, tmp_path):
        out_dir = tmp_path / "out"
        code = run_cli(
            "eval",
            "--detections", scene_dir / "golden" / "detections.oracle.jsonl",
            "--groundtruth", scene_dir / "groundtruth.json",
            "--vocab", scene_dir / "vocabulary.json",
            "--no-figures",
            "--out-dir", out_dir,
        )
        assert code == 0
        metrics = json.loads((out_dir / "metrics.json").read_text())
        assert "vocab_precision" not in metrics
        assert "vocab_recall" not in metrics
        assert metrics["ap50_base"] is None  # no groups given

    def test_group_map_missing_class_is_exit_1(self, scene_dir, tmp_path, capsys):
        groups = tmp_path / "groups.json"
        groups.write_text('{"1": "base"}', encoding="utf-8")
        code = run_cli(
            "eval",
            "--detections", scene_dir / "golden" / "detections.oracle.jsonl",
            "--groundtruth", scene_dir / "groundtruth.json",
            "--vocab", scene_dir / "vocabulary.json",
            "--groups", groups,
            "--no-figures",
            "--out-dir", tmp_path / "out",
        )
        assert code == 1
        assert "group map missing" in capsys.readouterr().err


class TestEntryPoint:
    def test_installed_script(self, tmp_path):
        result = subprocess.run(
            ["vocada", "--help"], capture_output=True, text=True
        )
        assert result.returncode == 0
        for sub in ("extract-nouns", "adapt", "rescore", "eval", "run"):
            assert sub in result.stdout

    def test_usage_error_is_exit_1(self):
        result = subprocess.run(
            ["vocada", "extract-nouns"], capture_output=True, text=True
        )
        assert result.returncode == 1
