"""
Binary codecs.

Feature file (little-endian):
    16-byte magic b"EAFFEAT1" NUL-padded
    u32 L, u32 d_feat, u32 modality code (0 spatial, 1 motion, 2 emotion)
    L * d_feat float32 values, row-major
    L u32 frame indices
A JSON sidecar (<file>.json) carries provenance.

Checkpoint:
    8-byte magic b"EAFCKPT1"
    u32 manifest length, UTF-8 JSON manifest {"config": ..., "tensors": [{name, shape, offset}]}
    float32 tensor payload, offsets relative to the payload start
"""

import json
import logging
import struct
from pathlib import Path

import numpy as np
import torch

from app.domain.features import FeatureSequence, Modality
from app.errors import CheckpointError, FeatureFileError

log = logging.getLogger("serialization")

FEATURE_MAGIC = b"EAFFEAT1".ljust(16, b"\0")
CHECKPOINT_MAGIC = b"EAFCKPT1"
_HEADER = struct.Struct("<III")


def encode_features(seq: FeatureSequence) -> bytes:
    data = seq.data.detach().cpu().numpy().astype("<f4")
    index = np.asarray(seq.frame_index, dtype="<u4")
    header = _HEADER.pack(data.shape[0], data.shape[1], seq.modality.value)
    return FEATURE_MAGIC + header + data.tobytes(order="C") + index.tobytes()


def decode_features(payload: bytes, source="<bytes>") -> FeatureSequence:
    if payload[:16] != FEATURE_MAGIC:
        raise FeatureFileError(f"Bad magic in feature file {source}", details={"path": str(source)})
    if len(payload) < 16 + _HEADER.size:
        raise FeatureFileError(f"Truncated header in feature file {source}")
    length, dim, code = _HEADER.unpack_from(payload, 16)
    offset = 16 + _HEADER.size
    expected = offset + 4 * length * dim + 4 * length
    if len(payload) != expected:
        raise FeatureFileError(
            f"Feature file {source} has {len(payload)} bytes, expected {expected}",
            details={"path": str(source), "L": length, "d_feat": dim},
        )
    try:
        modality = Modality(code)
    except ValueError as e:
        raise FeatureFileError(f"Unknown modality code {code} in {source}") from e
    data = np.frombuffer(payload, dtype="<f4", count=length * dim, offset=offset).reshape(length, dim)
    index = np.frombuffer(payload, dtype="<u4", count=length, offset=offset + 4 * length * dim)
    return FeatureSequence(
        modality,
        torch.from_numpy(data.astype(np.float32)),
        index.astype(np.int64).tolist(),
        # NaN rows mark failed detections
        valid=torch.from_numpy(~np.isnan(data).any(axis=1)),
    )


def write_feature_file(path, seq: FeatureSequence, provenance: dict = None) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_features(seq))
        if provenance is not None:
            sidecar = path.with_name(path.name + ".json")
            sidecar.write_text(json.dumps(provenance, sort_keys=True, indent=2))
    except OSError as e:
        raise FeatureFileError(f"Failed to write feature file {path}: {e}", details={"path": str(path)}) from e
    return path


def read_feature_file(path) -> FeatureSequence:
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise FeatureFileError(f"Failed to read feature file {path}: {e}", details={"path": str(path)}) from e
    return decode_features(payload, source=path)


def read_sidecar(path) -> dict:
    """Provenance written next to a feature file; empty when there is none."""
    sidecar = Path(path).with_name(Path(path).name + ".json")
    if not sidecar.exists():
        return {}
    try:
        return json.loads(sidecar.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise FeatureFileError(f"Unreadable provenance sidecar {sidecar}: {e}", details={"path": str(sidecar)}) from e


def encode_checkpoint(state: dict[str, torch.Tensor], config: dict) -> bytes:
    tensors, chunks, offset = [], [], 0
    for name, tensor in state.items():
        array = tensor.detach().cpu().numpy().astype("<f4")
        tensors.append({"name": name, "shape": list(array.shape), "offset": offset})
        chunk = array.tobytes(order="C")
        chunks.append(chunk)
        offset += len(chunk)
    manifest = json.dumps({"config": config, "tensors": tensors}, sort_keys=True).encode("utf-8")
    return CHECKPOINT_MAGIC + struct.pack("<I", len(manifest)) + manifest + b"".join(chunks)


def decode_checkpoint(payload: bytes, source="<bytes>") -> tuple[dict[str, torch.Tensor], dict]:
    if payload[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"Bad magic in checkpoint {source}", details={"path": str(source)})
    if len(payload) < 12:
        raise CheckpointError(f"Truncated checkpoint {source}")
    (manifest_len,) = struct.unpack_from("<I", payload, 8)
    start = 12 + manifest_len
    try:
        manifest = json.loads(payload[12:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Corrupt manifest in checkpoint {source}") from e
    state = {}
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        end = start + entry["offset"] + 4 * count
        if end > len(payload):
            raise CheckpointError(
                f"Checkpoint {source} truncated inside tensor {entry['name']}",
                details={"path": str(source), "tensor": entry["name"]},
            )
        array = np.frombuffer(payload, dtype="<f4", count=count, offset=start + entry["offset"])
        state[entry["name"]] = torch.from_numpy(array.astype(np.float32).reshape(entry["shape"]))
    return state, manifest["config"]


def save_checkpoint(path, state: dict[str, torch.Tensor], config: dict) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_checkpoint(state, config))
    except OSError as e:
        raise CheckpointError(f"Failed to write checkpoint {path}: {e}", details={"path": str(path)}) from e
    log.info(f"Saved checkpoint with {len(state)} tensors to {path}")
    return path


def load_checkpoint(path) -> tuple[dict[str, torch.Tensor], dict]:
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"Failed to read checkpoint {path}: {e}", details={"path": str(path)}) from e
    return decode_checkpoint(payload, source=path)
