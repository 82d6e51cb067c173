"""On-disk formats: datasets and parameter checkpoints.

Tensors are stored as raw little-endian float64 in row-major order; a
human-readable JSON manifest records config, seeds, shapes and byte
offsets.  Dataset directory layout::

    manifest.json   config echo, per-sample seeds, offsets, split ranges
    phi.bin         block-lifted sensing matrix (2T, 2M)
    samples.bin     per sample: lifted observation then lifted truth

Checkpoints follow the same conventions: ``<name>.json`` holds shapes and
scalar parameters, ``<name>.bin`` the concatenated layer weights.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os

import numpy as np

from .config import ConfigError, SystemConfig, config_hash
from .estimator import CoarseNetParams, FineNetParams, complex_row_support
from .simgen import (Dataset, DatasetSample, PilotMatrix, RealLifted, SupportSequence,
                     complex_unlift)

DTYPE = "<f8"
_ITEM = 8


def _write_tensor(fh, arr: np.ndarray) -> tuple[int, list]:
    offset = fh.tell()
    fh.write(np.ascontiguousarray(arr, dtype=DTYPE).tobytes())
    return offset, list(arr.shape)


def _read_tensor(path: str, offset: int, shape) -> np.ndarray:
    count = int(np.prod(shape))
    arr = np.fromfile(path, dtype=DTYPE, count=count, offset=offset)
    if arr.size != count:
        raise IOError(f"short read at offset {offset} in {path}")
    return arr.reshape(shape).astype(np.float64)


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def save_dataset(directory: str, dataset: Dataset, splits: dict | None = None) -> str:
    """Write a dataset directory; returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    phi_path = os.path.join(directory, "phi.bin")
    with open(phi_path, "wb") as fh:
        _write_tensor(fh, dataset.phi_lifted)
    sample_entries = []
    with open(os.path.join(directory, "samples.bin"), "wb") as fh:
        for s in dataset.samples:
            obs_off, _ = _write_tensor(fh, s.lifted_obs.mat)
            truth_off, _ = _write_tensor(fh, s.lifted_truth.mat)
            sample_entries.append({"seed": int(s.sample_seed),
                                   "obs_offset": obs_off, "truth_offset": truth_off})
    cfg = dataset.config
    manifest = {
        "schema_version": 1,
        "kind": "dataset",
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "base_seed": dataset.base_seed,
        "dtype": DTYPE,
        "byte_order": "little",
        "tensors": {
            "phi": {"file": "phi.bin", "offset": 0,
                    "shape": [2 * cfg.T, 2 * cfg.M], "lift": "block"},
        },
        "sample_shapes": {
            "obs": [2 * cfg.T, cfg.N * cfg.L],
            "truth": [2 * cfg.M, cfg.N * cfg.L],
        },
        "samples": sample_entries,
        "splits": splits or {"all": [0, len(dataset.samples)]},
        "phi_sha256": _sha256_file(phi_path),
    }
    path = os.path.join(directory, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
    return path


def load_manifest(directory: str) -> dict:
    path = os.path.join(directory, "manifest.json")
    if not os.path.isfile(path):
        raise ConfigError(f"no dataset manifest at {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


@dataclasses.dataclass
class StoredDataset:
    """Lazily indexed dataset directory."""

    directory: str
    manifest: dict
    config: SystemConfig
    phi_lifted: np.ndarray

    @classmethod
    def open(cls, directory: str) -> "StoredDataset":
        manifest = load_manifest(directory)
        cfg = SystemConfig.from_dict(manifest["config"])
        phi_spec = manifest["tensors"]["phi"]
        phi = _read_tensor(os.path.join(directory, phi_spec["file"]),
                           phi_spec["offset"], phi_spec["shape"])
        return cls(directory=directory, manifest=manifest, config=cfg, phi_lifted=phi)

    @property
    def pilot(self) -> PilotMatrix:
        phi = complex_unlift(self.phi_lifted, mode="block")
        return PilotMatrix(X=None, U=None, V=None, Phi=phi)

    def split_range(self, split: str) -> tuple[int, int]:
        splits = self.manifest["splits"]
        if split not in splits:
            raise ConfigError(f"dataset has no split {split!r}; available: {sorted(splits)}")
        lo, hi = splits[split]
        return int(lo), int(hi)

    def arrays(self, split: str = "all") -> tuple[np.ndarray, np.ndarray]:
        """(obs, truth) tensors of one split, shaped (K, 2T, NL) / (K, 2M, NL)."""
        lo, hi = self.split_range(split)
        shp_o = self.manifest["sample_shapes"]["obs"]
        shp_t = self.manifest["sample_shapes"]["truth"]
        path = os.path.join(self.directory, "samples.bin")
        entries = self.manifest["samples"][lo:hi]
        obs = np.empty((len(entries), *shp_o))
        truth = np.empty((len(entries), *shp_t))
        with open(path, "rb") as fh:
            for i, e in enumerate(entries):
                fh.seek(e["obs_offset"])
                obs[i] = np.frombuffer(fh.read(_ITEM * shp_o[0] * shp_o[1]),
                                       dtype=DTYPE).reshape(shp_o)
                fh.seek(e["truth_offset"])
                truth[i] = np.frombuffer(fh.read(_ITEM * shp_t[0] * shp_t[1]),
                                         dtype=DTYPE).reshape(shp_t)
        return obs, truth

    def sample(self, index: int) -> DatasetSample:
        e = self.manifest["samples"][index]
        shp_o = self.manifest["sample_shapes"]["obs"]
        shp_t = self.manifest["sample_shapes"]["truth"]
        path = os.path.join(self.directory, "samples.bin")
        obs = _read_tensor(path, e["obs_offset"], shp_o)
        truth = _read_tensor(path, e["truth_offset"], shp_t)
        cfg = self.config
        supports = [complex_row_support(truth[:, i * cfg.N:(i + 1) * cfg.N])
                    for i in range(cfg.L)]
        common = supports[0]
        for s in supports[1:]:
            common = np.intersect1d(common, s, assume_unique=True)
        frames = [RealLifted(mat=np.concatenate([obs[:shp_o[0] // 2, i * cfg.N:(i + 1) * cfg.N],
                                                 obs[shp_o[0] // 2:, i * cfg.N:(i + 1) * cfg.N]]),
                             origin_rows=cfg.T, mode="stack") for i in range(cfg.L)]
        return DatasetSample(
            lifted_obs=RealLifted(mat=obs, origin_rows=cfg.T, mode="stack"),
            lifted_truth=RealLifted(mat=truth, origin_rows=cfg.M, mode="stack"),
            per_frame_obs=frames,
            supports=SupportSequence(supports=supports, common=common),
            sample_seed=int(e["seed"]),
        )


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_net_params(path_prefix: str, params, meta: dict | None = None) -> str:
    """Write ``<prefix>.json`` + ``<prefix>.bin`` for one network's parameters."""
    os.makedirs(os.path.dirname(path_prefix) or ".", exist_ok=True)
    is_fine = isinstance(params, FineNetParams)
    with open(path_prefix + ".bin", "wb") as fh:
        offset, shape = _write_tensor(fh, params.weights)
    manifest = {
        "schema_version": 1,
        "kind": "checkpoint",
        "net": "fine" if is_fine else "coarse",
        "selector": params.selector,
        "p_min": params.p_min,
        "p_max": params.p_max,
        "thetas": [float(t) for t in params.thetas],
        "weights": {"file": os.path.basename(path_prefix) + ".bin",
                    "offset": offset, "shape": shape},
        "dtype": DTYPE,
    }
    if is_fine:
        manifest["omega"] = float(params.omega)
        manifest["symmetrize_prior"] = bool(params.symmetrize_prior)
    else:
        manifest["granularity"] = params.granularity
    manifest.update(meta or {})
    path = path_prefix + ".json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
    return path


def load_net_params(path_prefix: str):
    """Load a checkpoint written by :func:`save_net_params`; returns (params, meta)."""
    with open(path_prefix + ".json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    spec = manifest["weights"]
    weights = _read_tensor(os.path.join(os.path.dirname(path_prefix) or ".", spec["file"]),
                           spec["offset"], spec["shape"])
    thetas = np.asarray(manifest["thetas"], dtype=np.float64)
    if manifest["net"] == "fine":
        params = FineNetParams(weights=weights, thetas=thetas, omega=manifest["omega"],
                               selector=manifest["selector"], p_min=manifest["p_min"],
                               p_max=manifest["p_max"],
                               symmetrize_prior=manifest.get("symmetrize_prior", False))
    else:
        params = CoarseNetParams(weights=weights, thetas=thetas,
                                 selector=manifest["selector"], p_min=manifest["p_min"],
                                 p_max=manifest["p_max"],
                                 granularity=manifest.get("granularity", "block"))
    return params, manifest
