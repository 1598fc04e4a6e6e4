import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import torch

from pztaexport import ExportError, export
from pztaexport.models import build_model, extract_entries, parameter_table

from puzzlesim import inference, netspec
from puzzlesim.archive import load_archive

EXPORT_SCRIPT = Path(__file__).resolve().parents[1] / "export.py"

RESULTS = []

# torch "features" module index whose output is each tap activation
SQUEEZENET_TORCH_TAPS = {"fire3": 4, "fire5": 7, "fire6": 9}


@pytest.fixture(scope="module")
def squeezenet_model():
    model, pretrained = build_model("squeezenet")
    return model


@pytest.fixture(scope="module")
def exported(squeezenet_model, tmp_path_factory):
    out = tmp_path_factory.mktemp("export") / "squeezenet.pzta"
    manifest = export("squeezenet", out, manifest_path=str(out) + ".json",
                      model=squeezenet_model)
    return out, manifest


class TestMapping:
    @pytest.mark.parametrize("name", ["squeezenet", "vgg16", "alexnet"])
    def test_covers_primary_spec_exactly_once(self, name):
        spec = netspec.builtin_spec(name)
        table = {key: shape for _, key, shape in parameter_table(name)}
        assert len(table) == len(parameter_table(name))  # no duplicate keys
        assert table == {key: shape for key, shape in spec.weight_keys()}

    def test_unknown_model(self):
        with pytest.raises(ExportError, match="resnet"):
            parameter_table("resnet")


class TestExport:
    def test_rgb_stem(self, exported):
        out, _ = exported
        archive = load_archive(out)
        assert archive.tensor("conv1.weight").shape == (64, 3, 3, 3)

    def test_metadata(self, exported):
        out, manifest = exported
        archive = load_archive(out)
        assert archive.metadata["spec.name"] == "squeezenet"
        mean, std = archive.preprocess()
        np.testing.assert_allclose(mean, [0.485, 0.456, 0.406], atol=1e-6)
        np.testing.assert_allclose(std, [0.229, 0.224, 0.225], atol=1e-6)
        assert manifest["metadata"]["spec.name"] == "squeezenet"

    def test_manifest_file(self, exported):
        out, manifest = exported
        on_disk = json.loads(Path(str(out) + ".json").read_text())
        assert on_disk["parameters"] == manifest["parameters"]

    def test_reexport_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.pzta", tmp_path / "b.pzta"
        export("squeezenet", a)
        export("squeezenet", b)
        assert a.read_bytes() == b.read_bytes()

    def test_shape_mismatch_aborts_listing_keys(self, squeezenet_model):
        state = {k: v.clone() for k, v in squeezenet_model.state_dict().items()}
        state["features.0.weight"] = state["features.0.weight"][:, :1]
        state["features.3.squeeze.bias"] = state["features.3.squeeze.bias"][:4]

        class Stub:
            def state_dict(self):
                return state

        with pytest.raises(ExportError) as err:
            extract_entries(Stub(), "squeezenet")
        assert "features.0.weight" in str(err.value)
        assert "features.3.squeeze.bias" in str(err.value)

    def test_narrowing_never_silent(self, squeezenet_model):
        state = {k: v.clone() for k, v in squeezenet_model.state_dict().items()}
        state["features.0.bias"] = state["features.0.bias"].double()

        class Stub:
            def state_dict(self):
                return state

        with pytest.raises(ExportError, match="float64"):
            extract_entries(Stub(), "squeezenet")


class TestCLI:
    def test_export_script(self, tmp_path):
        out = tmp_path / "sq.pzta"
        manifest = tmp_path / "sq.json"
        proc = subprocess.run(
            [sys.executable, str(EXPORT_SCRIPT), "--model", "squeezenet",
             "--out", str(out), "--manifest", str(manifest)],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert out.exists()
        assert json.loads(manifest.read_text())["spec"] == "squeezenet"

    def test_unknown_model_usage_error(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, str(EXPORT_SCRIPT), "--model", "resnet",
             "--out", str(tmp_path / "x.pzta")],
            capture_output=True, text=True)
        assert proc.returncode == 2
        assert "resnet" in proc.stderr


class TestParity:
    def test_tap_activations_match_torch(self, squeezenet_model, exported):
        out, _ = exported
        archive = load_archive(out)
        spec = netspec.builtin_spec("squeezenet")

        captured = {}
        hooks = []
        for tap, idx in SQUEEZENET_TORCH_TAPS.items():
            def keep(module, args, output, tap=tap):
                captured[tap] = output.detach().numpy()[0]
            hooks.append(squeezenet_model.features[idx].register_forward_hook(keep))

        rng = np.random.default_rng(17)
        mean, std = archive.preprocess()
        worst = 0.0
        try:
            for _ in range(3):
                image = rng.random((96, 96, 3)).astype(np.float32)
                stack = inference.forward(spec, archive, image)
                x = (image - mean) / std
                with torch.no_grad():
                    squeezenet_model(torch.from_numpy(
                        x.transpose(2, 0, 1)[None].copy()))
                for tap in SQUEEZENET_TORCH_TAPS:
                    want = captured[tap]
                    got = stack[tap]
                    rel = (np.abs(got - want).max()
                           / max(1e-12, np.abs(want).max()))
                    worst = max(worst, float(rel))
        finally:
            for h in hooks:
                h.remove()
        passed = worst <= 1e-4
        RESULTS.append(
            f"{'PASS' if passed else 'FAIL'}  export-parity: max relative "
            f"tap error vs torch = {worst:.2e} over 3 images (limit 1e-4)")
        assert passed, f"parity error {worst}"
