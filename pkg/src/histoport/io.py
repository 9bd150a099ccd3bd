"""On-disk formats: ``.tns`` tensors, demonstration directories, checkpoints.

``.tns`` layout (little-endian): magic ``EOHT``, format version ``u32``,
dtype code ``u8`` (1 = float64), rank ``u32``, one ``u32`` per dimension,
then the raw payload in C order.

A checkpoint directory holds ``manifest.json`` and ``weights.bin``: every
parameter as little-endian float64, concatenated in manifest order, followed
by the 64-bit FNV-1a hash of those bytes.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .kitting import Demo, DemoStep
from .policy import Action, PolicyBundle, PolicyConfig

TNS_MAGIC = b"EOHT"
TNS_VERSION = 1
DTYPE_F64 = 1
CHECKPOINT_VERSION = 1
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


class FormatError(ValueError):
    """Malformed file contents."""


class ChecksumError(FormatError):
    pass


class ConfigMismatch(ValueError):
    pass


# -- tensors --

def encode_tns(arr) -> bytes:
    arr = np.asarray(arr, dtype="<f8")
    head = TNS_MAGIC + struct.pack("<IBI", TNS_VERSION, DTYPE_F64, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes(order="C")


def decode_tns(buf: bytes) -> np.ndarray:
    if buf[:4] != TNS_MAGIC:
        raise FormatError("not an EOHT tensor")
    if len(buf) < 13:
        raise FormatError("truncated header")
    version, dtype, rank = struct.unpack_from("<IBI", buf, 4)
    if version != TNS_VERSION:
        raise FormatError(f"unsupported tensor version {version}")
    if dtype != DTYPE_F64:
        raise FormatError(f"unsupported dtype code {dtype}")
    off = 13 + 4 * rank
    if len(buf) < off:
        raise FormatError("truncated header")
    dims = struct.unpack_from(f"<{rank}I", buf, 13)
    count = int(np.prod(dims)) if rank else 1
    if len(buf) != off + 8 * count:
        raise FormatError(f"payload holds {len(buf) - off} bytes, expected {8 * count}")
    return np.frombuffer(buf, dtype="<f8", offset=off).reshape(dims).astype(np.float64)


def write_tns(path, arr) -> None:
    Path(path).write_bytes(encode_tns(arr))


def read_tns(path) -> np.ndarray:
    return decode_tns(Path(path).read_bytes())


# -- demonstrations --

def _action_doc(a: Action) -> dict:
    return {"u": int(a.u), "v": int(a.v), "theta_index": int(a.theta_index)}


def write_dataset(root, demos: list[Demo]) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for k, demo in enumerate(demos):
        ep = root / f"episode_{k:04d}"
        ep.mkdir(exist_ok=True)
        for j, step in enumerate(demo.steps):
            write_tns(ep / f"obs_{j}.tns", step.obs)
            doc = {"pick": _action_doc(step.pick), "place": _action_doc(step.place), "N": demo.n, "seed": demo.seed}
            (ep / f"act_{j}.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def read_dataset(root) -> list[Demo]:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} not found")
    demos = []
    for ep in sorted(p for p in root.iterdir() if p.is_dir()):
        steps, meta = [], None
        j = 0
        while (ep / f"act_{j}.json").exists():
            meta = json.loads((ep / f"act_{j}.json").read_text())
            obs = read_tns(ep / f"obs_{j}.tns")
            steps.append(DemoStep(obs, Action(**meta["pick"], kind="pick"), Action(**meta["place"], kind="place")))
            j += 1
        if not steps:
            raise FormatError(f"episode {ep.name} has no steps")
        demos.append(Demo(meta["seed"], meta["N"], steps))
    if not demos:
        raise FormatError(f"no episodes under {root}")
    return demos


# -- checkpoints --

def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def _conv_modules(layers, prefix):
    for i, b in enumerate(layers):
        name = f"{prefix}.{i}"
        if b.kind == "conv":
            yield name, b.module
        if b.children:
            yield from _conv_modules(b.children, name)


def describe_bundle(bundle: PolicyBundle) -> list[dict]:
    """One entry per trainable tensor, in :meth:`PolicyBundle.parameters` order."""
    out = []
    for net_name, net in bundle.networks.items():
        for name, layer in _conv_modules(net.layers, net_name):
            basis = [
                {"in_freq": fi, "out_freq": fo,
                 "elements": [[e.kind, e.ring, e.mu] for e in b.elements]}
                for fo, fi, b in layer.bases
            ]
            common = {"layer": name, "rep_in": str(layer.rep_in), "rep_out": str(layer.rep_out),
                      "k_in": layer.k_in, "k_out": layer.k_out, "size": layer.size}
            out.append({**common, "tensor": "coefficients", "shape": list(layer.coefficients.shape), "basis": basis})
            if layer.bias is not None:
                out.append({**common, "tensor": "bias", "shape": list(layer.bias.shape)})
    return out


def save_checkpoint(path, bundle: PolicyBundle, extra: dict | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    params = bundle.parameters()
    layout = describe_bundle(bundle)
    if [list(p.shape) for p in params] != [e["shape"] for e in layout]:
        raise RuntimeError("parameter order does not match the layer walk")
    blob = b"".join(np.ascontiguousarray(p.data, dtype="<f8").tobytes() for p in params)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "policy": bundle.cfg.to_dict(),
        "seed": bundle.cfg.seed,
        "tensors": layout,
        "total_values": sum(int(np.prod(e["shape"])) for e in layout),
    }
    if extra:
        manifest["extra"] = extra
    (path / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    (path / "weights.bin").write_bytes(blob + struct.pack("<Q", fnv1a64(blob)))


def load_checkpoint(path, expect: PolicyConfig | None = None) -> tuple[PolicyBundle, dict]:
    """Rebuild a bundle; raises ``FileNotFoundError``, :class:`FormatError`,
    :class:`ChecksumError` or :class:`ConfigMismatch`."""
    path = Path(path)
    man_p, blob_p = path / "manifest.json", path / "weights.bin"
    for p in (man_p, blob_p):
        if not p.is_file():
            raise FileNotFoundError(f"{p} not found")
    try:
        manifest = json.loads(man_p.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"manifest is not JSON: {e}") from e
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {manifest.get('format_version')}")
    raw = blob_p.read_bytes()
    if len(raw) < 8 or len(raw) % 8:
        raise ChecksumError("weight blob is truncated")
    blob, (stored,) = raw[:-8], struct.unpack("<Q", raw[-8:])
    if fnv1a64(blob) != stored:
        raise ChecksumError("weight blob checksum mismatch")
    cfg = PolicyConfig(**manifest["policy"])
    if expect is not None and expect.to_dict() != cfg.to_dict():
        diff = sorted(k for k, v in expect.to_dict().items() if cfg.to_dict()[k] != v)
        raise ConfigMismatch(f"checkpoint differs from config in {diff}")
    bundle = PolicyBundle(cfg)
    layout = describe_bundle(bundle)
    if [e["shape"] for e in layout] != [e["shape"] for e in manifest["tensors"]]:
        raise ConfigMismatch("checkpoint tensor shapes do not match the rebuilt policy")
    if len(blob) != 8 * manifest["total_values"]:
        raise ChecksumError(f"blob holds {len(blob) // 8} values, manifest lists {manifest['total_values']}")
    values = np.frombuffer(blob, dtype="<f8")
    off = 0
    for p in bundle.parameters():
        p.data[...] = values[off:off + p.size].reshape(p.shape)
        off += p.size
    return bundle, manifest


def tree_digest(root) -> dict[str, int]:
    """FNV-1a of every file under ``root`` keyed by relative path (for determinism checks)."""
    root = Path(root)
    out = {}
    for dirpath, _, files in sorted(os.walk(root)):
        for f in sorted(files):
            p = Path(dirpath) / f
            out[str(p.relative_to(root))] = fnv1a64(p.read_bytes())
    return out


__all__ = [
    "encode_tns", "decode_tns", "write_tns", "read_tns", "write_dataset", "read_dataset",
    "fnv1a64", "describe_bundle", "save_checkpoint", "load_checkpoint", "tree_digest",
    "FormatError", "ChecksumError", "ConfigMismatch",
]
