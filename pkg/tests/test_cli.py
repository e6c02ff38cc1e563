import json

import numpy as np
import pytest

from lesionsearch.cli import main
from lesionsearch.descriptor import load_descriptor_table
from lesionsearch.imagecore import load_image, load_manifest
from lesionsearch.metric import load_head
from lesionsearch.retrieval import load_index


@pytest.fixture(scope="module")
def demo_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("demo")
    assert (
        main(
            [
                "make-phantoms",
                "--out",
                str(out),
                "--per-class",
                "4",
                "--patients-per-class",
                "2",
                "--seed",
                "3",
            ]
        )
        == 0
    )
    return out


FAST = ["--scales", "1:3:0.5", "--band-count", "2"]


class TestMakePhantoms:
    def test_manifest_and_images_exist(self, demo_dir):
        manifest = load_manifest(demo_dir / "manifest.csv")
        assert len(manifest) == 12
        assert set(manifest.label_set) == {"blob", "ridge", "noise"}
        for record in manifest.records:
            assert (demo_dir / record.image_path).exists()


class TestDescribe:
    def test_writes_table_in_manifest_order(self, demo_dir, tmp_path):
        out = tmp_path / "d.bin"
        code = main(
            [
                "describe",
                "--manifest",
                str(demo_dir / "manifest.csv"),
                "--out",
                str(out),
                *FAST,
            ]
        )
        assert code == 0
        table, header = load_descriptor_table(out)
        assert header["count"] == 12
        assert header["dim"] == 3  # 2 bands + intensity
        np.testing.assert_allclose(np.linalg.norm(table, axis=1), 1.0, atol=1e-6)

    def test_deterministic_output_bytes(self, demo_dir, tmp_path):
        outs = []
        for name in ("a.bin", "b.bin"):
            out = tmp_path / name
            main(["describe", "--manifest", str(demo_dir / "manifest.csv"), "--out", str(out), *FAST])
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


class TestTrain:
    def test_writes_loadable_head(self, demo_dir, tmp_path):
        desc = tmp_path / "d.bin"
        main(["describe", "--manifest", str(demo_dir / "manifest.csv"), "--out", str(desc), *FAST])
        head_path = tmp_path / "head.bin"
        code = main(
            [
                "train",
                "--descriptors",
                str(desc),
                "--manifest",
                str(demo_dir / "manifest.csv"),
                "--iters",
                "5",
                "--seed",
                "1",
                "--out",
                str(head_path),
            ]
        )
        assert code == 0
        head = load_head(head_path)
        assert head.input_dim == 3

    def test_row_count_mismatch_fails(self, demo_dir, tmp_path):
        desc = tmp_path / "d.bin"
        main(["describe", "--manifest", str(demo_dir / "manifest.csv"), "--out", str(desc), *FAST])
        short = tmp_path / "short.csv"
        text = (demo_dir / "manifest.csv").read_text().splitlines()[:3]
        short.write_text("\n".join(text) + "\n")
        code = main(
            [
                "train",
                "--descriptors",
                str(desc),
                "--manifest",
                str(short),
                "--out",
                str(tmp_path / "h.bin"),
            ]
        )
        assert code == 2


class TestIngestEvaluate:
    def test_ingest_then_evaluate_report(self, demo_dir, tmp_path):
        data_dir = tmp_path / "engine"
        code = main(
            [
                "ingest",
                "--manifest",
                str(demo_dir / "manifest.csv"),
                "--images-root",
                str(demo_dir),
                "--data-dir",
                str(data_dir),
                *FAST,
            ]
        )
        assert code == 0
        index, meta = load_index(data_dir / "index.bin")
        assert index.count == 12
        assert meta["index_version"] == 1

        report_path = tmp_path / "report.json"
        code = main(
            [
                "evaluate",
                "--index",
                str(data_dir / "index.bin"),
                "--setting",
                "all",
                "--k",
                "5",
                "--report",
                str(report_path),
            ]
        )
        assert code == 0
        report = json.loads(report_path.read_text())
        assert report["setting"] == "all_patients"
        assert report["query_count"] == 12
        assert 0.0 <= report["map_at_10"] <= 1.0
        assert len(report["per_query"]) == 12
        assert all(len(v) <= 5 for v in report["top_k_ids"].values())

    def test_missing_image_fails_with_path(self, demo_dir, tmp_path, capsys):
        bad_root = tmp_path / "empty"
        bad_root.mkdir()
        code = main(
            [
                "ingest",
                "--manifest",
                str(demo_dir / "manifest.csv"),
                "--images-root",
                str(bad_root),
                "--data-dir",
                str(tmp_path / "engine2"),
                *FAST,
            ]
        )
        assert code == 2
        assert "phantom_0000.png" in capsys.readouterr().err


class TestFilterPreview:
    def test_emits_png16_and_sidecar(self, demo_dir, tmp_path):
        out = tmp_path / "resp.png"
        code = main(
            [
                "filter-preview",
                "--input",
                str(demo_dir / "phantom_0000.png"),
                "--out",
                str(out),
                "--scales",
                "1:3:1",
            ]
        )
        assert code == 0
        img = load_image(out)
        assert (img.width, img.height) == (64, 64)
        sidecar = json.loads((tmp_path / "resp.png.json").read_text())
        assert sidecar["scales"] == [1.0, 2.0, 3.0]
        assert len(sidecar["argmax_scale"]) == 64
        assert set(np.unique(sidecar["argmax_scale"])) <= {1.0, 2.0, 3.0}


class TestServeParser:
    def test_help_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["serve", "--help"])
        assert exc.value.code == 0
        assert "--config" in capsys.readouterr().out
