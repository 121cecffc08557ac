"""SNF1 binary model container.

Layout (little-endian)::

    b"SNF1" | version u32 | groups u32 | scale f32 | shallow u8 | seed u64 | layer count u32
    per layer: tag u8 | n_hparams u32 | hparams u32 * n | n_values u64 | values f32 * n

Weights are written in the order of ``arch.layer_weight_shapes``; a layer
stored without weights has ``n_values == 0``.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from snk.arch import FCSpec, GlobalPoolSpec, Layer, MaxPoolSpec, NetworkSpec, StemSpec, layer_weight_shapes
from snk.errors import CorruptModelError, ShapeError
from snk.units import ComparisonUnitSpec, ShuffleUnitSpec

MAGIC = b"SNF1"
VERSION = 1
_HEADER = struct.Struct("<4sIIfBQI")

TAG_STEM, TAG_MAXPOOL, TAG_SHUFFLE, TAG_VGG, TAG_RESNET, TAG_RESNEXT, TAG_GLOBALPOOL, TAG_FC = range(1, 9)
_COMPARISON_TAGS = {"vgg_like": TAG_VGG, "resnet": TAG_RESNET, "resnext": TAG_RESNEXT}


def _encode_config(cfg) -> tuple[int, list[int]]:
    if isinstance(cfg, StemSpec):
        return TAG_STEM, [cfg.in_channels, cfg.out_channels, cfg.kernel, cfg.stride]
    if isinstance(cfg, MaxPoolSpec):
        return TAG_MAXPOOL, [cfg.kernel, cfg.stride, cfg.pad]
    if isinstance(cfg, ShuffleUnitSpec):
        return TAG_SHUFFLE, [cfg.in_channels, cfg.out_channels, cfg.groups, cfg.stride,
                             cfg.bottleneck_channels, int(cfg.first_pw_grouped), int(cfg.shuffle)]
    if isinstance(cfg, ComparisonUnitSpec):
        return _COMPARISON_TAGS[cfg.kind], [cfg.in_channels, cfg.out_channels, cfg.stride,
                                            cfg.bottleneck_channels, cfg.cardinality]
    if isinstance(cfg, GlobalPoolSpec):
        return TAG_GLOBALPOOL, []
    if isinstance(cfg, FCSpec):
        return TAG_FC, [cfg.in_features, cfg.out_features]
    raise TypeError(f"cannot serialize {cfg!r}")


def _decode_config(tag: int, hp: list[int]):
    try:
        if tag == TAG_STEM:
            return StemSpec(*hp)
        if tag == TAG_MAXPOOL:
            return MaxPoolSpec(*hp)
        if tag == TAG_SHUFFLE:
            c, o, g, s, m, first, shuf = hp
            return ShuffleUnitSpec(c, o, g, s, m, bool(first), bool(shuf))
        if tag in (TAG_VGG, TAG_RESNET, TAG_RESNEXT):
            kind = {v: k for k, v in _COMPARISON_TAGS.items()}[tag]
            return ComparisonUnitSpec(kind, *hp)
        if tag == TAG_GLOBALPOOL and not hp:
            return GlobalPoolSpec()
        if tag == TAG_FC:
            return FCSpec(*hp)
    except (TypeError, ValueError, ShapeError) as exc:
        raise CorruptModelError(f"invalid hyper-parameters {hp} for layer tag {tag}: {exc}") from exc
    raise CorruptModelError(f"unknown layer tag {tag}")


def to_bytes(net: NetworkSpec) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, net.groups, net.scale, int(net.shallow), net.seed, len(net.layers))]
    for layer in net.layers:
        tag, hp = _encode_config(layer.config)
        parts.append(struct.pack(f"<BI{len(hp)}I", tag, len(hp), *hp))
        shapes = layer_weight_shapes(layer.config)
        if layer.weights is None or not shapes:
            parts.append(struct.pack("<Q", 0))
            continue
        blob = np.concatenate([np.asarray(layer.weights[k], dtype="<f4").ravel() for k in shapes])
        parts.append(struct.pack("<Q", blob.size))
        parts.append(blob.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = memoryview(buf), 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.buf):
            raise CorruptModelError(f"truncated model file: wanted {n} bytes at offset {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))


def from_bytes(buf: bytes) -> NetworkSpec:
    r = _Reader(buf)
    magic, version, groups, scale, shallow, seed, count = r.unpack(_HEADER.format)
    if magic != MAGIC:
        raise CorruptModelError(f"bad magic {bytes(magic)!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CorruptModelError(f"unsupported SNF version {version}")
    layers = []
    for _ in range(count):
        tag, n_hp = r.unpack("<BI")
        if n_hp > 64:
            raise CorruptModelError(f"implausible hyper-parameter count {n_hp}")
        cfg = _decode_config(tag, list(r.unpack(f"<{n_hp}I")))
        (n_values,) = r.unpack("<Q")
        shapes = layer_weight_shapes(cfg)
        if n_values == 0:
            layers.append(Layer(cfg, None if shapes else {}))
            continue
        expected = sum(int(np.prod(s)) for s in shapes.values())
        if n_values != expected:
            raise CorruptModelError(f"layer tag {tag} stores {n_values} values, expected {expected}")
        flat = np.frombuffer(r.take(4 * n_values), dtype="<f4").astype(np.float32)
        weights, off = {}, 0
        for name, shape in shapes.items():
            size = int(np.prod(shape))
            weights[name] = flat[off : off + size].reshape(shape)
            off += size
        layers.append(Layer(cfg, weights))
    if r.pos != len(r.buf):
        raise CorruptModelError(f"{len(r.buf) - r.pos} trailing bytes after last layer")
    return NetworkSpec(tuple(layers), groups, float(scale), bool(shallow), seed)


def save(net: NetworkSpec, path) -> None:
    Path(path).write_bytes(to_bytes(net))


def load(path) -> NetworkSpec:
    return from_bytes(Path(path).read_bytes())
