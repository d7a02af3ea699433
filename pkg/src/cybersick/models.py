"""The two classifier architectures, built as ModelGraphs, plus checkpoint IO.

EEGNet: two convolutional blocks (temporal filters, a depthwise spatial
filter across all electrodes, then a depthwise-temporal + pointwise
separable pair) and a linear head. ELU activations, average pooling.

Conformer: convolutional patch embedding (temporal then spatial filter,
pooled along time and rearranged into width-`hidden` tokens), four
transformer encoder blocks with multi-head self-attention, and a
three-layer fully-connected classifier. No positional encoding; token
order is carried only through convolutional locality.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .nn import LayerSpec, ModelGraph

ARCHS = ("eegnet", "conformer")


@dataclass(frozen=True)
class ArchConfig:
    arch: str = "eegnet"
    n_channels: int = 16
    n_samples: int = 200
    n_classes: int = 2
    dropout: float = 0.25
    # eegnet
    temporal_kernel: int = 64
    separable_kernel: int = 16
    f1: int = 8                      # temporal filters
    depth_multiplier: int = 2        # spatial filters per temporal filter
    f2: int = 0                      # pointwise filters; 0 = f1 * depth
    pool1: int = 4
    pool2: int = 8
    # conformer
    patch_kernel: int = 25
    patch_pool: int = 75
    patch_pool_stride: int = 15
    n_blocks: int = 4
    heads: int = 8
    hidden: int = 40
    ffn_expansion: int = 4
    classifier_widths: tuple = (256, 32)

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown architecture {self.arch!r}")
        if self.hidden % self.heads:
            raise ValueError(f"hidden={self.hidden} not divisible by "
                             f"heads={self.heads}")

    @property
    def pointwise_filters(self) -> int:
        return self.f2 or self.f1 * self.depth_multiplier

    def cfg_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_model(cfg: ArchConfig, seed: int = 0) -> ModelGraph:
    if cfg.arch == "eegnet":
        return build_eegnet(cfg, seed)
    return build_conformer(cfg, seed)


def build_eegnet(cfg: ArchConfig, seed: int = 0) -> ModelGraph:
    if cfg.n_samples < cfg.temporal_kernel:
        raise ValueError(
            f"T={cfg.n_samples} shorter than temporal kernel "
            f"{cfg.temporal_kernel}")
    c, t = cfg.n_channels, cfg.n_samples
    f1, depth = cfg.f1, cfg.depth_multiplier
    f_spat = f1 * depth
    f2 = cfg.pointwise_filters
    t1 = t // cfg.pool1
    t2 = t1 // cfg.pool2
    layers = [
        LayerSpec("conv2d", out_channels=f1, kernel=(1, cfg.temporal_kernel),
                  padding="same", bias=False, tag="block1"),
        LayerSpec("batchnorm", features=f1, tag="block1"),
        LayerSpec("conv2d", out_channels=f_spat, kernel=(c, 1), groups=f1,
                  bias=False, tag="block1"),
        LayerSpec("batchnorm", features=f_spat, tag="block1"),
        LayerSpec("activation", activation="elu", tag="block1"),
        LayerSpec("pooling", kernel=(1, cfg.pool1), stride=(1, cfg.pool1),
                  tag="block1"),
        LayerSpec("dropout", rate=cfg.dropout, tag="block1"),
        LayerSpec("conv2d", out_channels=f_spat, kernel=(1, cfg.separable_kernel),
                  padding="same", groups=f_spat, bias=False, tag="block2"),
        LayerSpec("conv2d", out_channels=f2, kernel=(1, 1), bias=False,
                  tag="block2"),
        LayerSpec("batchnorm", features=f2, tag="block2"),
        LayerSpec("activation", activation="elu", tag="block2"),
        LayerSpec("pooling", kernel=(1, cfg.pool2), stride=(1, cfg.pool2),
                  tag="block2"),
        LayerSpec("dropout", rate=cfg.dropout, tag="block2"),
        LayerSpec("flatten", tag="head"),
        LayerSpec("linear", in_features=f2 * t2, out_features=cfg.n_classes,
                  tag="head"),
    ]
    return ModelGraph(layers, (1, c, t), seed=seed, arch="eegnet",
                      meta={"cfg": asdict(cfg)})


def build_conformer(cfg: ArchConfig, seed: int = 0) -> ModelGraph:
    if cfg.n_samples < cfg.patch_kernel:
        raise ValueError(
            f"T={cfg.n_samples} shorter than patch kernel {cfg.patch_kernel}")
    c, t = cfg.n_channels, cfg.n_samples
    d = cfg.hidden
    if t < cfg.patch_pool:
        raise ValueError(
            f"T={t} leaves no tokens after pooling over {cfg.patch_pool}")
    n_tokens = (t - cfg.patch_pool) // cfg.patch_pool_stride + 1
    layers = [
        LayerSpec("conv2d", out_channels=d, kernel=(1, cfg.patch_kernel),
                  padding="same", tag="patch"),
        LayerSpec("conv2d", out_channels=d, kernel=(c, 1), tag="patch"),
        LayerSpec("batchnorm", features=d, tag="patch"),
        LayerSpec("activation", activation="elu", tag="patch"),
        LayerSpec("pooling", kernel=(1, cfg.patch_pool),
                  stride=(1, cfg.patch_pool_stride), tag="patch"),
        LayerSpec("dropout", rate=cfg.dropout, tag="patch"),
    ]
    for i in range(cfg.n_blocks):
        layers.append(LayerSpec(
            "attention-encoder", heads=cfg.heads, hidden=d,
            ffn_hidden=d * cfg.ffn_expansion, rate=cfg.dropout,
            tag=f"encoder{i + 1}"))
    layers.append(LayerSpec("flatten", tag="head"))
    widths = (n_tokens * d,) + tuple(cfg.classifier_widths) + (cfg.n_classes,)
    for i, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
        layers.append(LayerSpec("linear", in_features=fi, out_features=fo,
                                tag="head"))
        if i < len(widths) - 2:
            layers.append(LayerSpec("activation", activation="elu", tag="head"))
            layers.append(LayerSpec("dropout", rate=cfg.dropout, tag="head"))
    return ModelGraph(layers, (1, c, t), seed=seed, arch="conformer",
                      meta={"cfg": asdict(cfg)})


def calibration_frozen_tags(arch: str, n_blocks: int = 4) -> list[str]:
    """Freezing rule for the calibration phase: EEGNet fine-tunes everything;
    the Conformer keeps all encoder blocks except the last frozen."""
    if arch == "eegnet":
        return []
    return [f"encoder{i + 1}" for i in range(n_blocks - 1)]


# -- checkpoints -----------------------------------------------------------------

CKPT_MAGIC = b"ERPC"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(graph: ModelGraph, path, step: int = 0,
                    metric: float = 0.0, extra: dict | None = None):
    """Named-tensor container: json header + raw little-endian float64."""
    header = {
        "arch": graph.arch,
        "cfg": graph.meta.get("cfg", {}),
        "cfg_hash": ArchConfig(**graph.meta["cfg"]).cfg_hash()
        if "cfg" in graph.meta else "",
        "step": int(step),
        "metric": float(metric),
        "seed": graph._seed,
        "frozen": sorted(graph.frozen),
    }
    if extra:
        header.update(extra)
    blob = json.dumps(header, sort_keys=True).encode()
    state = graph.state_dict()
    parts = [CKPT_MAGIC, struct.pack("<HI", CKPT_VERSION, len(blob)), blob,
             struct.pack("<I", len(state))]
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim)
                     + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path) -> tuple[ModelGraph, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<HI", data, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 10
    header = json.loads(data[pos:pos + hlen].decode())
    pos += hlen
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    state = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + nlen].decode()
        pos += nlen
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=pos)
        pos += n * 8
        state[name] = arr.reshape(shape).astype(np.float64)
    if pos != len(data):
        raise CheckpointError(f"{len(data) - pos} trailing bytes")

    cfg = ArchConfig(**{k: tuple(v) if isinstance(v, list) else v
                        for k, v in header["cfg"].items()})
    graph = build_model(cfg, seed=header.get("seed", 0))
    graph.load_state_dict(state)
    if header.get("frozen"):
        graph.freeze_layers(header["frozen"])
    return graph, header
