"""Export contract: graph structure, sidecar schema, error surfaces, and
agreement between the exported graph and the torch reference forward."""

import json

import numpy as np
import pytest

from gepc.imaging import load_image
from gepc.onnx_backend import OnnxBackend
from gepc.onnx_graph import parse_model, run_model

from fixture_export import ExportError, export_model
from fixture_export.cli import main
from fixture_export.zoo import get_model, model_names

from fx_paths import IMAGES_DIR

ALL_TAPS = ["pool1", "pool2", "pool3"]


@pytest.fixture(scope="session")
def exported(tmp_path_factory):
    out = tmp_path_factory.mktemp("export")
    onnx_path, sidecar_path = export_model("tinynet", ALL_TAPS, out)
    return onnx_path, sidecar_path


class TestGraphStructure:
    def test_one_logits_output_plus_one_per_tap(self, exported):
        model = parse_model(exported[0].read_bytes())
        assert model.outputs == ("logits", "pool1", "pool2", "pool3")
        assert model.inputs == ("input",)

    def test_node_sequence(self, exported):
        model = parse_model(exported[0].read_bytes())
        ops = [n.op_type for n in model.nodes]
        assert ops == (
            ["Conv", "Relu", "MaxPool"] * 3 + ["GlobalAveragePool", "Flatten", "Gemm"]
        )

    def test_initializer_shapes(self, exported):
        model = parse_model(exported[0].read_bytes())
        shapes = {name: arr.shape for name, arr in model.initializers.items()}
        assert shapes == {
            "conv1.weight": (8, 3, 3, 3),
            "conv1.bias": (8,),
            "conv2.weight": (16, 8, 3, 3),
            "conv2.bias": (16,),
            "conv3.weight": (32, 16, 3, 3),
            "conv3.bias": (32,),
            "fc.weight": (3, 32),
            "fc.bias": (3,),
        }

    def test_export_is_deterministic(self, exported, tmp_path):
        again, sidecar = export_model("tinynet", ALL_TAPS, tmp_path)
        assert again.read_bytes() == exported[0].read_bytes()
        assert sidecar.read_bytes() == exported[1].read_bytes()


class TestSidecar:
    def test_schema_fields(self, exported):
        sidecar = json.loads(exported[1].read_text())
        assert sidecar["input_size"] == [64, 64]
        assert sidecar["mean"] == [0.5, 0.5, 0.5]
        assert sidecar["std"] == [0.25, 0.25, 0.25]
        assert sidecar["layer_outputs"] == {"pool1": 0, "pool2": 1, "pool3": 2}
        assert sidecar["class_names"] == ["warm", "cool", "other"]
        assert sidecar["model_name"] == "tinynet"

    def test_loads_under_consumer_backend(self, exported):
        backend = OnnxBackend(exported[0])
        assert backend.available_layers == (0, 1, 2)
        assert backend.class_names == ("warm", "cool", "other")

    def test_layer_ids_number_taps_shallow_to_deep(self, tmp_path):
        _, sidecar_path = export_model("tinynet", ["pool3", "pool1"], tmp_path)
        sidecar = json.loads(sidecar_path.read_text())
        assert sidecar["layer_outputs"] == {"pool1": 0, "pool3": 1}

    def test_single_tap_export_runs(self, tmp_path):
        onnx_path, _ = export_model("tinynet", ["pool2"], tmp_path)
        model = parse_model(onnx_path.read_bytes())
        assert model.outputs == ("logits", "pool2")
        backend = OnnxBackend(onnx_path)
        assert backend.available_layers == (0,)


class TestErrors:
    def test_unknown_model_echoes_name_and_lists_zoo(self):
        with pytest.raises(ExportError, match="nosuchnet") as err:
            export_model("nosuchnet", ALL_TAPS, "/tmp/unused")
        for name in model_names():
            assert name in str(err.value)

    def test_unknown_layer_echoes_name_and_lists_valid(self):
        with pytest.raises(ExportError, match="layerX") as err:
            export_model("tinynet", ["layerX"], "/tmp/unused")
        assert "pool1" in str(err.value)

    def test_duplicate_layer_rejected(self):
        with pytest.raises(ExportError, match="duplicate"):
            export_model("tinynet", ["pool1", "pool1"], "/tmp/unused")

    def test_empty_layers_rejected(self):
        with pytest.raises(ExportError, match="at least one layer"):
            export_model("tinynet", [], "/tmp/unused")

    def test_cli_unknown_model_exits_nonzero(self, tmp_path, capsys):
        rc = main(["export", "--model", "nosuchnet", "--layers", "pool1", "--out", str(tmp_path)])
        assert rc == 1
        err = capsys.readouterr().err
        assert "nosuchnet" in err and "tinynet" in err

    def test_cli_unknown_layer_exits_nonzero(self, tmp_path, capsys):
        rc = main(["export", "--model", "tinynet", "--layers", "layerX", "--out", str(tmp_path)])
        assert rc == 1
        assert "layerX" in capsys.readouterr().err


class TestSourceFrameworkAgreement:
    def test_logits_match_torch_within_1e_4(self, exported):
        torch = pytest.importorskip("torch")
        sidecar = json.loads(exported[1].read_text())
        arr = load_image(sorted(IMAGES_DIR.glob("*.png"))[0])
        mean = np.asarray(sidecar["mean"], dtype=np.float32)
        std = np.asarray(sidecar["std"], dtype=np.float32)
        x = ((arr - mean) / std).transpose(2, 0, 1)[None].astype(np.float32)

        net = get_model("tinynet").torch_module()
        with torch.no_grad():
            ref_logits, ref_taps = net(torch.from_numpy(x))

        model = parse_model(exported[0].read_bytes())
        out = run_model(model, {"input": x})
        got = np.asarray(out["logits"], dtype=np.float64).ravel()
        want = ref_logits.numpy().astype(np.float64).ravel()
        assert np.abs(got - want).max() < 1e-4

    def test_tap_values_match_torch_within_1e_4(self, exported):
        torch = pytest.importorskip("torch")
        arr = load_image(sorted(IMAGES_DIR.glob("*.png"))[-1])
        x = ((arr - 0.5) / 0.25).transpose(2, 0, 1)[None].astype(np.float32)
        net = get_model("tinynet").torch_module()
        with torch.no_grad():
            _, taps = net(torch.from_numpy(x))
        model = parse_model(exported[0].read_bytes())
        out = run_model(model, {"input": x})
        for tap in ALL_TAPS:
            diff = np.abs(out[tap] - taps[tap].numpy()).max()
            assert diff < 1e-4, f"{tap} diverges by {diff}"
