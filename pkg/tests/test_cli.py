"""End-to-end checks for the command-line pipeline driver."""

import json
import logging
import shutil
from pathlib import Path

import pytest

from gepc.cli import SUBCOMMANDS, _setup_logging, main
from gepc.config import config_hash, load_config

FIXTURES = Path(__file__).parent / "fixtures" / "e2e"
CONFIG = FIXTURES / "config.toml"

STAGES = {
    "segment": "segments",
    "index-gallery": "gallery",
    "correspond": "correspondence",
    "explain-local": "local",
    "explain-global": "global",
    "evaluate": "evaluation",
    "report": "report",
}


def run(sub, out, *extra):
    return main([sub, "--config", str(CONFIG), "--output", str(out), *extra])


@pytest.fixture(scope="session")
def pipeline_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipeline")
    for sub in SUBCOMMANDS:
        assert run(sub, out) == 0, f"{sub} failed"
    return out


@pytest.fixture(scope="session")
def expected_hash():
    return config_hash(load_config(CONFIG))


def artifact_files(out: Path):
    return [
        p
        for p in sorted(out.rglob("*.json"))
        if p.name != "manifest.json"
    ]


class TestPipelineRun:
    def test_stage_directories_present(self, pipeline_out):
        for sub in SUBCOMMANDS:
            stage = pipeline_out / STAGES[sub]
            assert stage.is_dir(), sub
            assert (stage / "manifest.json").is_file(), sub

    def test_per_image_artifacts(self, pipeline_out):
        images = sorted(p.stem for p in (FIXTURES / "images").glob("*.png"))
        assert len(images) == 20
        for stage in ("segments", "correspondence", "local"):
            names = sorted(
                p.stem for p in (pipeline_out / stage).glob("*.json")
                if p.name != "manifest.json"
            )
            assert names == images, stage

    def test_artifacts_embed_config_hash(self, pipeline_out, expected_hash):
        files = artifact_files(pipeline_out)
        assert files
        for path in files:
            doc = json.loads(path.read_text())
            assert doc["config_hash"] == expected_hash, path
            assert isinstance(doc["kind"], str) and doc["kind"], path

    def test_manifest_fields(self, pipeline_out, expected_hash):
        for sub in SUBCOMMANDS:
            doc = json.loads((pipeline_out / STAGES[sub] / "manifest.json").read_text())
            assert doc["kind"] == "run_manifest"
            assert doc["subcommand"] == sub
            assert doc["config_hash"] == expected_hash
            for component in ("gepc", "python", "numpy", "scipy"):
                assert component in doc["versions"]
            assert doc["created_utc"].endswith("Z") and "T" in doc["created_utc"]
            assert doc["outputs"] == sorted(doc["outputs"]) and doc["outputs"]

    def test_decision_lists_cover_all_training_images(self, pipeline_out):
        paths = sorted((pipeline_out / "global").glob("decision_list_class*.json"))
        assert len(paths) == 2
        for path in paths:
            doc = json.loads(path.read_text())
            assert doc["kind"] == "decision_list"
            assert doc["uncoverable"] == []
            assert doc["train_images"]
            assert sum(r["train_new_covered"] for r in doc["rules"]) == len(
                doc["train_images"]
            )

    def test_coverage_partitions_test_set(self, pipeline_out):
        split = json.loads((pipeline_out / "global" / "split.json").read_text())
        covered_total = 0
        for path in sorted((pipeline_out / "evaluation").glob("coverage_class*.json")):
            doc = json.loads(path.read_text())
            total = (
                sum(doc["rule_counts"])
                + doc["uncovered_count"]
                + doc["no_explanation_count"]
            )
            assert total == doc["n_test"] == len(doc["test_images"])
            assert set(doc["test_images"]) <= set(split["test"])
            covered_total += doc["n_test"]
        assert covered_total == len(split["test"])

    def test_report_files(self, pipeline_out):
        for cls in (0, 1):
            base = pipeline_out / "report" / f"class{cls}"
            assert (base / "coverage.csv").is_file()
            assert (base / "coverage_bar.svg").is_file()
            assert (base / "coverage_pie.svg").is_file()
        rows = (pipeline_out / "report" / "class0" / "coverage.csv").read_text().splitlines()
        assert rows[0] == "rule,train_count,test_proportion"
        total = sum(float(r.rsplit(",", 1)[1]) for r in rows[1:])
        assert total == pytest.approx(1.0, abs=1e-9)


class TestDeterminism:
    def test_rerun_is_byte_identical(self, pipeline_out):
        before = {
            p.name: p.read_bytes()
            for p in (pipeline_out / "segments").glob("*.json")
            if p.name != "manifest.json"
        }
        assert run("segment", pipeline_out) == 0
        after = {
            p.name: p.read_bytes()
            for p in (pipeline_out / "segments").glob("*.json")
            if p.name != "manifest.json"
        }
        assert before == after

    def test_jobs_flag_does_not_change_artifacts(self, pipeline_out, tmp_path):
        assert run("segment", tmp_path, "--jobs", "3") == 0
        for path in (pipeline_out / "segments").glob("*.json"):
            if path.name == "manifest.json":
                continue
            assert (tmp_path / "segments" / path.name).read_bytes() == path.read_bytes()

    def test_rerun_manifest_differs_only_in_timestamp(self, pipeline_out, tmp_path):
        assert run("segment", tmp_path) == 0
        docs = []
        for base in (pipeline_out, tmp_path):
            doc = json.loads((base / "segments" / "manifest.json").read_text())
            doc.pop("created_utc")
            docs.append(doc)
        assert docs[0] == docs[1]


class TestErrorPaths:
    def test_missing_upstream_artifact_names_path(self, tmp_path, capsys):
        assert run("explain-global", tmp_path) == 1
        err = capsys.readouterr().err
        assert "missing upstream artifact" in err
        assert str(tmp_path / "local") in err

    def test_correspond_requires_gallery_index(self, tmp_path, capsys):
        assert run("segment", tmp_path) == 0
        assert run("correspond", tmp_path) == 1
        assert str(tmp_path / "gallery" / "index.json") in capsys.readouterr().err

    def test_unknown_subcommand(self, tmp_path, capsys):
        rc = main(["transmogrify", "--config", str(CONFIG), "--output", str(tmp_path)])
        assert rc == 1
        assert "transmogrify" in capsys.readouterr().err

    def test_missing_config_flag(self, capsys):
        assert main(["segment"]) == 1
        assert "--config" in capsys.readouterr().err

    def test_nonexistent_config_file(self, tmp_path, capsys):
        rc = main(["segment", "--config", str(tmp_path / "nope.toml")])
        assert rc == 1
        assert "nope.toml" in capsys.readouterr().err

    def test_bad_mode_flag(self, tmp_path, capsys):
        rc = run("segment", tmp_path, "--mode", "sideways")
        assert rc == 1
        assert "sideways" in capsys.readouterr().err

    def test_class_flag_for_absent_class(self, pipeline_out, tmp_path, capsys):
        work = tmp_path / "out"
        shutil.copytree(pipeline_out, work)
        assert run("explain-global", work, "--class", "7") == 1
        assert "class 7" in capsys.readouterr().err

    def test_empty_image_directory(self, tmp_path, capsys):
        empty = tmp_path / "empty"
        empty.mkdir()
        text = CONFIG.read_text()
        text = text.replace('images = "images"', f'images = "{empty}"')
        text = text.replace('gallery = "gallery"', f'gallery = "{FIXTURES / "gallery"}"')
        text = text.replace(
            'annotations = "annotations"', f'annotations = "{FIXTURES / "annotations"}"'
        )
        cfg = tmp_path / "config.toml"
        cfg.write_text(text)
        rc = main(["segment", "--config", str(cfg), "--output", str(tmp_path / "o")])
        assert rc == 1
        assert "no .png images" in capsys.readouterr().err


class TestClassRestriction:
    def test_explain_global_single_class(self, pipeline_out, tmp_path):
        work = tmp_path / "out"
        shutil.copytree(pipeline_out, work)
        shutil.rmtree(work / "global")
        assert run("explain-global", work, "--class", "0") == 0
        stage = work / "global"
        names = sorted(p.name for p in stage.glob("*.json"))
        assert names == ["decision_list_class0.json", "manifest.json", "split.json"]
        reference = (pipeline_out / "global" / "decision_list_class0.json").read_bytes()
        assert (stage / "decision_list_class0.json").read_bytes() == reference

    def test_evaluate_missing_decision_list(self, pipeline_out, tmp_path, capsys):
        work = tmp_path / "out"
        shutil.copytree(pipeline_out, work)
        (work / "global" / "decision_list_class0.json").unlink()
        assert run("evaluate", work, "--class", "0") == 1
        assert "decision_list_class0.json" in capsys.readouterr().err


class TestMixedHashRefusal:
    def test_evaluate_refuses_mixed_hashes(self, pipeline_out, tmp_path, capsys):
        work = tmp_path / "out"
        shutil.copytree(pipeline_out, work)
        assert run("explain-global", work, "--seed", "123") == 0
        assert run("evaluate", work) == 1
        assert "mixed config hashes" in capsys.readouterr().err

    def test_seed_override_changes_hash(self, pipeline_out, tmp_path):
        work = tmp_path / "out"
        shutil.copytree(pipeline_out, work)
        assert run("explain-global", work, "--seed", "123") == 0
        doc = json.loads((work / "global" / "split.json").read_text())
        base = json.loads((pipeline_out / "global" / "split.json").read_text())
        assert doc["config_hash"] != base["config_hash"]


class TestReportFormat:
    def test_csv_only_config(self, pipeline_out, tmp_path):
        work = tmp_path / "out"
        shutil.copytree(pipeline_out, work)
        shutil.rmtree(work / "report")
        text = CONFIG.read_text()
        text = text.replace('images = "images"', f'images = "{FIXTURES / "images"}"')
        text = text.replace('gallery = "gallery"', f'gallery = "{FIXTURES / "gallery"}"')
        text = text.replace(
            'annotations = "annotations"', f'annotations = "{FIXTURES / "annotations"}"'
        )
        text += '\n[report]\nformat = "csv"\n'
        cfg = tmp_path / "csv_config.toml"
        cfg.write_text(text)
        rc = main(["report", "--config", str(cfg), "--output", str(work)])
        assert rc == 0
        for cls in (0, 1):
            base = work / "report" / f"class{cls}"
            assert (base / "coverage.csv").is_file()
            assert not (base / "coverage_bar.svg").exists()
            assert not (base / "coverage_pie.svg").exists()


class TestToyDataset:
    def test_segment_on_two_images(self, tmp_path):
        images = tmp_path / "imgs"
        images.mkdir()
        for name in ("warm_00.png", "cool_00.png"):
            shutil.copy(FIXTURES / "images" / name, images / name)
        text = CONFIG.read_text()
        text = text.replace('images = "images"', f'images = "{images}"')
        text = text.replace('gallery = "gallery"', f'gallery = "{FIXTURES / "gallery"}"')
        text = text.replace(
            'annotations = "annotations"', f'annotations = "{FIXTURES / "annotations"}"'
        )
        cfg = tmp_path / "config.toml"
        cfg.write_text(text)
        out = tmp_path / "o"
        assert main(["segment", "--config", str(cfg), "--output", str(out)]) == 0
        names = sorted(p.name for p in (out / "segments").glob("*.json"))
        assert names == ["cool_00.json", "manifest.json", "warm_00.json"]
        doc = json.loads((out / "segments" / "warm_00.json").read_text())
        assert doc["kind"] == "segment_map"
        assert doc["image_id"] == "warm_00"
        body = doc["segment_map"]
        assert set(body) == {"width", "height", "labels", "segments"}
        assert len(body["labels"]) == body["width"] * body["height"]


class TestLogging:
    def test_env_sets_level(self, monkeypatch):
        monkeypatch.setenv("GEPC_LOG", "DEBUG")
        _setup_logging()
        assert logging.getLogger("gepc").level == logging.DEBUG
        monkeypatch.setenv("GEPC_LOG", "bogus")
        _setup_logging()
        assert logging.getLogger("gepc").level == logging.WARNING
