"""Binary checkpoint format.

Layout::

    b"ICTLCKPT"                    magic
    uint32 LE                      format version
    uint64 LE                      header length in bytes
    header                         UTF-8 JSON, sorted keys
    float64 LE arrays              in the order listed by header["arrays"]

The header records the topology, embedding settings, seeds, step counter and
the full rendered config; embedding frequencies, parameters and optimizer
moments are stored as raw arrays so they round-trip bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, parse, render
from .consistency import ConsistencyModel
from .net import Network, NoiseEmbedding
from .optim import Moments

MAGIC = b"ICTLCKPT"
FORMAT_VERSION = 1
ARRAY_ORDER = ("embedding_frequencies", "params", "ema_params", "teacher_params", "moment1", "moment2")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ExperimentConfig
    model: ConsistencyModel
    ema_params: np.ndarray
    teacher_params: np.ndarray
    moments: Moments
    step: int
    dropout_seed: int

    def sampling_params(self):
        return self.ema_params if self.config.eval.use_ema else self.model.network.params


def save(path, state, cfg: ExperimentConfig):
    net = state.model.network
    arrays = {
        "embedding_frequencies": net.embedding.frequencies,
        "params": net.params,
        "ema_params": state.ema_params,
        "teacher_params": state.teacher_params,
        "moment1": state.moments.first,
        "moment2": state.moments.second,
    }
    header = {
        "format": "ictlab-checkpoint",
        "step": int(state.k),
        "optimizer_step": int(state.moments.step),
        "seed": int(cfg.train.seed),
        "dropout_seed": int(state.dropout_seed),
        "topology": {
            "in_dim": net.in_dim,
            "out_dim": net.out_dim,
            "hidden": list(net.hidden),
            "activation": net.activation,
            "dropout_rate": net.dropout_rate,
        },
        "embedding": {"kind": net.embedding.kind, "dim": net.embedding.dim, "scale": net.embedding.scale},
        "model": {
            "sigma_min": state.model.sigma_min,
            "sigma_max": state.model.sigma_max,
            "sigma_data": state.model.sigma_data,
        },
        "config": render(cfg),
        "arrays": [[name, int(arrays[name].size)] for name in ARRAY_ORDER],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for name in ARRAY_ORDER:
            fh.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())


def load(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if len(data) < 20 or data[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    offset = 8 + struct.calcsize("<IQ")
    try:
        header = json.loads(data[offset : offset + hlen].decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    offset += hlen
    if offset + 8 * sum(size for _, size in header["arrays"]) != len(data):
        raise CheckpointError("trailing or missing bytes in checkpoint")
    arrays = {}
    for name, size in header["arrays"]:
        arrays[name] = np.frombuffer(data, dtype="<f8", count=size, offset=offset).astype(np.float64)
        offset += 8 * size
    topo, emb = header["topology"], header["embedding"]
    embedding = NoiseEmbedding(emb["kind"], emb["dim"], emb["scale"], arrays["embedding_frequencies"])
    net = Network(topo["in_dim"], topo["out_dim"], topo["hidden"], embedding, topo["activation"],
                  topo["dropout_rate"], params=arrays["params"])
    m = header["model"]
    model = ConsistencyModel(net, m["sigma_min"], m["sigma_max"], m["sigma_data"])
    moments = Moments(arrays["moment1"], arrays["moment2"], header["optimizer_step"])
    return Checkpoint(parse(header["config"]), model, arrays["ema_params"], arrays["teacher_params"],
                      moments, header["step"], header["dropout_seed"])


def file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
