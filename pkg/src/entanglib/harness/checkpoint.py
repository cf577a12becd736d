"""Checkpoints: a JSON manifest next to a raw little-endian float64 blob.

The blob holds the network weights followed by the measurement parameters
(if any). The manifest records the blob's byte length and sha256 so a
truncated or edited blob is caught on load.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..measurements import MeasurementParams
from ..ml import LayerSpec, NetworkModel

FORMAT = "entanglib-checkpoint/1"


class CheckpointError(ValueError):
    """The checkpoint is missing, corrupt or inconsistent."""


@dataclass
class Checkpoint:
    network: NetworkModel
    params: MeasurementParams | None
    manifest: dict

    @property
    def layout(self) -> str:
        return self.manifest.get("layout", "flat")

    @property
    def descriptor(self) -> str:
        return self.manifest["descriptor"]


def save_checkpoint(path, network: NetworkModel, params: MeasurementParams | None = None, **info) -> Path:
    """Write ``path`` (manifest) and ``path`` with suffix .bin; returns the manifest path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    theta = np.zeros(0) if params is None else params.theta.ravel()
    blob = np.concatenate([network.weights, theta]).astype("<f8").tobytes()
    blob_path = path.with_suffix(".bin")
    blob_path.write_bytes(blob)
    manifest = {
        "format": FORMAT,
        "input_shape": list(network.input_shape),
        "layers": [s.to_dict() for s in network.specs],
        "n_weights": int(network.n_params),
        "theta": None
        if params is None
        else {"n_settings": params.n_settings, "dim": params.dim, "tied": params.tied, "shape": list(params.theta.shape)},
        "blob": {"file": blob_path.name, "length": len(blob), "sha256": hashlib.sha256(blob).hexdigest()},
        **info,
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
        blob = (path.parent / manifest["blob"]["file"]).read_bytes()
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise CheckpointError(f"cannot load checkpoint {path}: {e}") from None
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"unknown checkpoint format {manifest.get('format')!r}")
    if len(blob) != manifest["blob"]["length"] or hashlib.sha256(blob).hexdigest() != manifest["blob"]["sha256"]:
        raise CheckpointError("weight blob does not match its manifest")
    values = np.frombuffer(blob, dtype="<f8").astype(float)
    n_w = manifest["n_weights"]
    specs = [LayerSpec.from_dict(s) for s in manifest["layers"]]
    try:
        network = NetworkModel(tuple(manifest["input_shape"]), specs, values[:n_w])
    except ValueError as e:
        raise CheckpointError(str(e)) from None
    params = None
    t = manifest["theta"]
    if t is not None:
        theta = values[n_w:]
        if theta.size != int(np.prod(t["shape"])):
            raise CheckpointError("blob length does not match the theta shape")
        params = MeasurementParams(theta.reshape(t["shape"]), t["n_settings"], t["dim"], t["tied"])
    elif len(values) != n_w:
        raise CheckpointError("blob has trailing values")
    return Checkpoint(network, params, manifest)
