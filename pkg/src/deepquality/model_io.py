"""DQM1 model container.

Layout: 4-byte magic ``DQM1``, little-endian u32 header length, UTF-8 JSON
header, then each parameter tensor as raw little-endian float32 in the order
listed by the header's ``params`` manifest (network parameters in declaration
order, then optional aggregator blocks).
"""

import json
from dataclasses import dataclass

import numpy as np

from .aggregator import LinearAggregator
from .network import LUMINANCE_TRANSFORM, DeepQualityNet, NetworkConfig
from .nn.layers import ConvLayer, DenseLayer

MAGIC = b"DQM1"
FORMAT_VERSION = 1


class ModelFormatError(Exception):
    """Raised when a model file cannot be parsed; message states why."""


@dataclass
class LoadedModel:
    net: DeepQualityNet
    aggregator: "LinearAggregator | None"
    header: dict


def save_model(net, path, aggregator=None, seed=None, training_meta=None):
    """Write the network (and optional aggregator) to a DQM1 file."""
    blocks = list(net.parameters().items())
    header = {
        "format_version": FORMAT_VERSION,
        "conv_channels": list(net.config.conv_channels),
        "fc_hidden": net.config.fc_hidden,
        "num_classes": 5,
        "luminance": LUMINANCE_TRANSFORM,
        "seed": seed,
        "training": training_meta,
    }
    if aggregator is not None:
        blocks.append(("aggregator.weights", aggregator.weights))
        blocks.append(("aggregator.bias", aggregator.bias))
        header["aggregator"] = {"feature_dim": aggregator.feature_dim}
    header["params"] = [{"name": n, "shape": list(a.shape)} for n, a in blocks]

    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.uint32(len(header_bytes)).astype("<u4").tobytes())
        f.write(header_bytes)
        for _, arr in blocks:
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_model(path):
    """Read a DQM1 file back into a network and optional aggregator."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise ModelFormatError(f"bad magic: expected {MAGIC!r}, found {raw[:4]!r}")
    if len(raw) < 8:
        raise ModelFormatError("truncated header: file shorter than magic plus length field")
    header_len = int(np.frombuffer(raw[4:8], dtype="<u4")[0])
    if len(raw) < 8 + header_len:
        raise ModelFormatError("truncated header: declared length exceeds file size")
    try:
        header = json.loads(raw[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"unreadable header JSON: {e}") from e
    if header.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported format version {header.get('format_version')} "
            f"(this build reads version {FORMAT_VERSION})")

    manifest = header.get("params")
    if not manifest:
        raise ModelFormatError("header carries no parameter manifest")
    expected = sum(int(np.prod(p["shape"])) for p in manifest) * 4
    payload = raw[8 + header_len:]
    if len(payload) != expected:
        raise ModelFormatError(
            f"payload length {len(payload)} does not match manifest ({expected} bytes): "
            "truncated payload or shape-manifest mismatch")

    arrays = {}
    offset = 0
    for p in manifest:
        shape = tuple(p["shape"])
        count = int(np.prod(shape))
        arrays[p["name"]] = np.frombuffer(
            payload, dtype="<f4", count=count, offset=offset
        ).reshape(shape).astype(np.float32)
        offset += count * 4

    config = NetworkConfig(tuple(header["conv_channels"]), header["fc_hidden"])
    try:
        net = DeepQualityNet(
            ConvLayer(arrays["conv1.kernels"], arrays["conv1.bias"]),
            ConvLayer(arrays["conv2.kernels"], arrays["conv2.bias"]),
            ConvLayer(arrays["conv3.kernels"], arrays["conv3.bias"]),
            DenseLayer(arrays["fc1.weights"], arrays["fc1.bias"]),
            DenseLayer(arrays["fc2.weights"], arrays["fc2.bias"]),
            config,
        )
    except (KeyError, ValueError) as e:
        raise ModelFormatError(f"shape-manifest mismatch against header config: {e}") from e

    aggregator = None
    if "aggregator" in header:
        try:
            aggregator = LinearAggregator(
                arrays["aggregator.weights"].astype(np.float64),
                arrays["aggregator.bias"].astype(np.float64),
            )
        except (KeyError, ValueError) as e:
            raise ModelFormatError(f"aggregator blocks inconsistent with header: {e}") from e
    return LoadedModel(net, aggregator, header)
