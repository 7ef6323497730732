"""File formats: checkpoints, embedding export, metrics logs, run manifests.

All floating-point persistence is 64-bit so a save/load round trip is
bit-identical and a resumed run continues with exactly the same numbers.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import ExperimentConfig
from .model import ModelParams, pack_shared, shape_manifest


class StorageError(Exception):
    pass


# -- checkpoints ----------------------------------------------------------


def save_checkpoint(path, params: ModelParams, allow_non_finite: bool = False) -> None:
    """Write shared tensors as one flat vector plus its shape manifest;
    preference vectors ride along separately as client-local state.

    ``allow_non_finite`` exists for post-mortem dumps of diverged runs.
    """
    flat = pack_shared(params)
    if not allow_non_finite and (
        not np.all(np.isfinite(flat)) or not np.all(np.isfinite(params.pref))
    ):
        raise StorageError("refusing to checkpoint non-finite parameter values")
    manifest = json.dumps(shape_manifest(params), sort_keys=True)
    np.savez(
        path,
        manifest=np.frombuffer(manifest.encode(), dtype=np.uint8),
        flat=flat,
        pref=params.pref,
    )


def load_checkpoint(path, expected_manifest: list[dict] | None = None) -> tuple[np.ndarray, np.ndarray, list[dict]]:
    """Read (flat shared vector, preference matrix, manifest); validates shapes."""
    try:
        with np.load(path, allow_pickle=False) as archive:
            manifest = json.loads(bytes(archive["manifest"]).decode())
            flat = archive["flat"].astype(np.float64)
            pref = archive["pref"].astype(np.float64)
    except StorageError:
        raise
    except Exception as exc:
        raise StorageError(f"cannot read checkpoint {path}: {exc}") from None
    total = sum(int(np.prod(entry["shape"])) for entry in manifest)
    if flat.size != total:
        raise StorageError(
            f"checkpoint {path}: flat vector has {flat.size} values, manifest expects {total}"
        )
    if expected_manifest is not None and manifest != expected_manifest:
        raise StorageError(
            f"checkpoint {path}: shape manifest mismatch "
            f"(stored {manifest}, expected {expected_manifest})"
        )
    return flat, pref, manifest


def params_from_checkpoint(path) -> ModelParams:
    """Reconstruct full ModelParams from a checkpoint file."""
    flat, pref, manifest = load_checkpoint(path)
    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for entry in manifest:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape))
        tensors[entry["name"]] = flat[offset : offset + size].reshape(shape)
        offset += size
    n_paths = sum(1 for name in tensors if name.startswith("wt_"))
    try:
        return ModelParams(
            wt=[tensors[f"wt_{p}"] for p in range(n_paths)],
            wc=[tensors[f"wc_{p}"] for p in range(n_paths)],
            wp=tensors["wp"],
            wo=tensors["wo"],
            pref=pref,
        )
    except KeyError as exc:
        raise StorageError(f"checkpoint {path}: manifest missing tensor {exc}") from None


# -- embeddings & metrics ----------------------------------------------------


def export_embeddings(path, node_ids: Sequence[int], embeddings: np.ndarray) -> None:
    """One row per target node: node_id, e_1..e_d."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or len(node_ids) != embeddings.shape[0]:
        raise StorageError("embeddings must be 2-D with one row per node id")
    d = embeddings.shape[1]
    with open(path, "w") as fh:
        fh.write("node_id," + ",".join(f"e_{j + 1}" for j in range(d)) + "\n")
        for nid, row in zip(node_ids, embeddings):
            fh.write(f"{int(nid)}," + ",".join(repr(float(v)) for v in row) + "\n")


def metrics_to_jsonl(records: Iterable) -> str:
    """Serialize RoundMetrics (or dicts) to JSON lines with a stable key order."""
    lines = []
    for record in records:
        obj = record.to_json_obj() if hasattr(record, "to_json_obj") else record
        lines.append(json.dumps(obj, sort_keys=False))
    return "\n".join(lines) + ("\n" if lines else "")


def write_jsonl(path, records: Iterable) -> None:
    with open(path, "w") as fh:
        fh.write(metrics_to_jsonl(records))


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


# -- run manifests -------------------------------------------------------------


def dataset_fingerprint(paths: Sequence) -> str:
    """SHA-256 over the concatenated bytes of the dataset files, sorted by name."""
    digest = hashlib.sha256()
    for p in sorted(Path(p) for p in paths):
        digest.update(p.name.encode())
        digest.update(p.read_bytes())
    return digest.hexdigest()


@dataclass
class RunManifest:
    """Written before training; sufficient to replay the run deterministically."""

    config: dict
    seed: int
    code_version: str
    dataset_fingerprint: str
    data_dir: str
    outputs: dict

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "code_version": self.code_version,
            "dataset_fingerprint": self.dataset_fingerprint,
            "data_dir": self.data_dir,
            "outputs": self.outputs,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "RunManifest":
        return cls(**raw)


def write_manifest(path, manifest: RunManifest) -> None:
    with open(path, "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> RunManifest:
    with open(path) as fh:
        raw = json.load(fh)
    try:
        return RunManifest.from_dict(raw)
    except TypeError as exc:
        raise StorageError(f"manifest {path}: {exc}") from None


def config_from_manifest(manifest: RunManifest) -> ExperimentConfig:
    return ExperimentConfig.from_dict(manifest.config)
