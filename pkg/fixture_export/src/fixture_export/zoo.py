"""The local pretrained model zoo: small CNNs with fixed committed weights.

One entry, "tinynet": three 3x3 convolution stages of 8, 16, and 32
channels, each relu-activated and 2x2 max-pooled, then global average
pooling and a linear head over 32 features. Weights are drawn once from
the frozen legacy RNG stream under a fixed seed, so every install
reproduces the same network without shipping a binary blob. The torch
module built here is the reference forward pass exported graphs are
checked against.

Exposable taps are the pooled stage outputs "pool1", "pool2", "pool3",
shallow to deep. Preprocessing matches the sidecar the export writes:
64x64 input, per-channel mean 0.5 and std 0.25.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import onnxwrite as ow
from .errors import ExportError

_SEED = 0x47455043
_STAGES = ((3, 8), (8, 16), (16, 32))
_CLASS_NAMES = ("warm", "cool", "other")


def _tinynet_weights() -> dict:
    rs = np.random.RandomState(_SEED)
    weights = {}
    for idx, (cin, cout) in enumerate(_STAGES, start=1):
        std = float(np.sqrt(2.0 / (cin * 9)))
        weights[f"conv{idx}.weight"] = rs.standard_normal((cout, cin, 3, 3)) * std
        weights[f"conv{idx}.bias"] = rs.standard_normal(cout) * 0.05
    width = _STAGES[-1][1]
    weights["fc.weight"] = rs.standard_normal((len(_CLASS_NAMES), width)) * float(
        np.sqrt(1.0 / width)
    )
    weights["fc.bias"] = rs.standard_normal(len(_CLASS_NAMES)) * 0.05
    return {name: arr.astype(np.float32) for name, arr in weights.items()}


@dataclass(frozen=True)
class ZooEntry:
    name: str
    taps: tuple
    class_names: tuple
    input_size: tuple
    mean: tuple
    std: tuple

    def normalize_layers(self, layer_names) -> tuple:
        """Validate the requested taps and order them shallow to deep."""
        requested = [str(n) for n in layer_names]
        if not requested:
            raise ExportError(
                f"at least one layer name is required; valid layers: {', '.join(self.taps)}"
            )
        for name in requested:
            if name not in self.taps:
                raise ExportError(
                    f"unknown layer '{name}' for model '{self.name}'; "
                    f"valid layers: {', '.join(self.taps)}"
                )
        if len(set(requested)) != len(requested):
            raise ExportError(f"duplicate layer names in {requested}")
        return tuple(n for n in self.taps if n in requested)

    def tap_shape(self, tap: str) -> tuple:
        """(C, H, W) of one tap at the model's input size."""
        idx = self.taps.index(tap)
        h, w = self.input_size
        scale = 2 ** (idx + 1)
        return (_STAGES[idx][1], h // scale, w // scale)

    def weights(self) -> dict:
        return _tinynet_weights()

    def sidecar(self, layer_names) -> dict:
        names = self.normalize_layers(layer_names)
        return {
            "model_name": self.name,
            "input_size": list(self.input_size),
            "mean": list(self.mean),
            "std": list(self.std),
            "layer_outputs": {name: i for i, name in enumerate(names)},
            "class_names": list(self.class_names),
        }

    def graph_bytes(self, layer_names) -> bytes:
        names = self.normalize_layers(layer_names)
        weights = self.weights()
        nodes = []
        prev = "input"
        for idx in range(1, len(_STAGES) + 1):
            nodes.append(
                ow.node(
                    "Conv",
                    (prev, f"conv{idx}.weight", f"conv{idx}.bias"),
                    (f"c{idx}",),
                    name=f"conv{idx}",
                    attrs=(
                        ow.attr_ints("kernel_shape", (3, 3)),
                        ow.attr_ints("pads", (1, 1, 1, 1)),
                        ow.attr_ints("strides", (1, 1)),
                    ),
                )
            )
            nodes.append(ow.node("Relu", (f"c{idx}",), (f"a{idx}",), name=f"relu{idx}"))
            nodes.append(
                ow.node(
                    "MaxPool",
                    (f"a{idx}",),
                    (f"pool{idx}",),
                    name=f"maxpool{idx}",
                    attrs=(
                        ow.attr_ints("kernel_shape", (2, 2)),
                        ow.attr_ints("strides", (2, 2)),
                    ),
                )
            )
            prev = f"pool{idx}"
        nodes.append(ow.node("GlobalAveragePool", (prev,), ("gap",), name="gap"))
        nodes.append(
            ow.node("Flatten", ("gap",), ("flat",), name="flatten", attrs=(ow.attr_int("axis", 1),))
        )
        nodes.append(
            ow.node(
                "Gemm",
                ("flat", "fc.weight", "fc.bias"),
                ("logits",),
                name="fc",
                attrs=(ow.attr_int("transB", 1),),
            )
        )
        initializers = [ow.tensor(name, arr) for name, arr in sorted(weights.items())]
        h, w = self.input_size
        inputs = [ow.tensor_value_info("input", (1, 3, h, w))]
        outputs = [ow.tensor_value_info("logits", (1, len(self.class_names)))]
        outputs += [ow.tensor_value_info(n, (1,) + self.tap_shape(n)) for n in names]
        return ow.model(ow.graph(nodes, initializers, inputs, outputs, name=self.name))

    def torch_module(self):
        """Reference forward pass; maps an NCHW batch to (logits, taps)."""
        import torch
        from torch import nn

        weights = self.weights()
        n_stages = len(_STAGES)

        class TinyNet(nn.Module):
            def __init__(self):
                super().__init__()
                for idx, (cin, cout) in enumerate(_STAGES, start=1):
                    conv = nn.Conv2d(cin, cout, kernel_size=3, padding=1)
                    conv.weight.data = torch.from_numpy(weights[f"conv{idx}.weight"].copy())
                    conv.bias.data = torch.from_numpy(weights[f"conv{idx}.bias"].copy())
                    setattr(self, f"conv{idx}", conv)
                self.fc = nn.Linear(_STAGES[-1][1], len(_CLASS_NAMES))
                self.fc.weight.data = torch.from_numpy(weights["fc.weight"].copy())
                self.fc.bias.data = torch.from_numpy(weights["fc.bias"].copy())
                self.pool = nn.MaxPool2d(2, 2)

            def forward(self, x):
                taps = {}
                for idx in range(1, n_stages + 1):
                    x = self.pool(torch.relu(getattr(self, f"conv{idx}")(x)))
                    taps[f"pool{idx}"] = x
                return self.fc(x.mean(dim=(2, 3))), taps

        net = TinyNet()
        net.eval()
        return net


_ZOO = {
    "tinynet": ZooEntry(
        name="tinynet",
        taps=("pool1", "pool2", "pool3"),
        class_names=_CLASS_NAMES,
        input_size=(64, 64),
        mean=(0.5, 0.5, 0.5),
        std=(0.25, 0.25, 0.25),
    ),
}


def model_names() -> tuple:
    return tuple(sorted(_ZOO))


def get_model(name: str) -> ZooEntry:
    entry = _ZOO.get(name)
    if entry is None:
        raise ExportError(
            f"unknown model '{name}'; valid models: {', '.join(model_names())}"
        )
    return entry
