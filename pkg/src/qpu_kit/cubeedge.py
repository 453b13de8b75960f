"""CubeEdge: synthetic shape classification from edge chains walked on a cube.

A skeleton starts with the fixed edges ``(0,0,0) → (1,0,0) → (1,1,0)``; each
further edge turns onto one of the two cube axes other than the incoming one.
The binary turn sequence, read most significant bit first, is the class label.
Features are the rotations between consecutive edges.
"""

from __future__ import annotations

import logging
import struct
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike
from pydantic import ValidationError

from qpu_kit.errors import DatasetFormatError, DegenerateEdgeError
from qpu_kit.quaternion import (
    Array,
    as_quat,
    from_two_vectors,
    identity,
    random_unit,
    rotate_vector,
)
from qpu_kit.schemas import DatasetHeader, GenConfig

logger = logging.getLogger(__name__)

EDGE_TOL = 1e-9
MAX_RESAMPLES = 10
DATASET_FILENAME = "cubeedge.bin"
DATASET_MAGIC = b"CUBEEDGE"
DATASET_VERSION = 1
_PREAMBLE = struct.Struct("<8sHI")

_START = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]])


# ═══════════════════════════════════════════════════════════════
# SKELETONS
# ═══════════════════════════════════════════════════════════════


@dataclass(frozen=True)
class Perturbation:
    shear: tuple[float, float] = (0.0, 0.0)
    noise: Array | None = None
    rotation: Array | None = None


@dataclass(frozen=True)
class CubeSkeleton:
    vertices: Array
    label: int
    perturbation: Perturbation | None = None

    @property
    def n_edges(self) -> int:
        return self.vertices.shape[0] - 1


def label_bits(label: int, n_edges: int) -> list[int]:
    width = n_edges - 2
    return [(label >> (width - 1 - i)) & 1 for i in range(width)]


def generate_skeleton(choices: Sequence[int]) -> CubeSkeleton:
    """Walk the cube; bit ``k`` picks between the two non-incoming axes, lower axis first."""
    vertices = [v.copy() for v in _START]
    incoming = 1
    label = 0
    for bit in choices:
        if bit not in (0, 1):
            raise ValueError(f"turn choices must be bits, got {bit!r}")
        axis = [a for a in range(3) if a != incoming][bit]
        nxt = vertices[-1].copy()
        nxt[axis] = 1.0 - nxt[axis]
        vertices.append(nxt)
        incoming = axis
        label = (label << 1) | bit
    return CubeSkeleton(vertices=np.stack(vertices), label=label)


def enumerate_skeletons(n_edges: int) -> list[CubeSkeleton]:
    """All ``2^(n_edges-2)`` clean skeletons in label order."""
    return [generate_skeleton(label_bits(k, n_edges)) for k in range(2 ** (n_edges - 2))]


def shear_matrix(a: float, c: float) -> Array:
    """xy-plane shear: ``x' = x + a y``, ``y' = y + c x``, ``z`` fixed."""
    return np.array([[1.0, a, 0.0], [c, 1.0, 0.0], [0.0, 0.0, 1.0]])


def perturb(
    sk: CubeSkeleton,
    shear_xy: tuple[float, float] = (0.0, 0.0),
    noise: ArrayLike | None = None,
    rotation: ArrayLike | None = None,
) -> CubeSkeleton:
    """Apply vertex noise, then the shear, then an optional rotation about the origin."""
    vertices = sk.vertices
    noise_arr = None
    if noise is not None:
        noise_arr = np.asarray(noise, dtype=np.float64)
        vertices = vertices + noise_arr
    a, c = shear_xy
    vertices = vertices @ shear_matrix(a, c).T
    rot = None
    if rotation is not None:
        rot = as_quat(rotation)
        vertices = rotate_vector(rot, vertices)
    return CubeSkeleton(
        vertices=vertices,
        label=sk.label,
        perturbation=Perturbation(shear=(float(a), float(c)), noise=noise_arr, rotation=rot),
    )


def rotate_skeleton(sk: CubeSkeleton, q: ArrayLike) -> CubeSkeleton:
    q = as_quat(q)
    record = sk.perturbation or Perturbation()
    return replace(
        sk,
        vertices=rotate_vector(q, sk.vertices),
        perturbation=replace(record, rotation=q),
    )


def featurize_vertices(vertices: ArrayLike) -> Array:
    """Rotations between consecutive edges of ``(..., E+1, 3)`` vertex chains."""
    vertices = np.asarray(vertices, dtype=np.float64)
    edges = np.diff(vertices, axis=-2)
    if np.any(np.linalg.norm(edges, axis=-1) <= EDGE_TOL):
        raise DegenerateEdgeError("zero-length edge after perturbation")
    return from_two_vectors(edges[..., :-1, :], edges[..., 1:, :])


def featurize(sk: CubeSkeleton) -> Array:
    return featurize_vertices(sk.vertices)


# ═══════════════════════════════════════════════════════════════
# DATASETS
# ═══════════════════════════════════════════════════════════════


@dataclass
class CubeEdgeSplit:
    """Columnar storage of one split; ``rotation`` is identity where unrotated."""

    vertices: Array
    features: Array
    labels: np.ndarray
    shear: Array
    rotation: Array
    rotated: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def skeleton(self, i: int) -> CubeSkeleton:
        return CubeSkeleton(
            vertices=self.vertices[i],
            label=int(self.labels[i]),
            perturbation=Perturbation(
                shear=(float(self.shear[i, 0]), float(self.shear[i, 1])),
                rotation=self.rotation[i] if self.rotated[i] else None,
            ),
        )


@dataclass
class CubeEdgeDataset:
    config: GenConfig
    train: CubeEdgeSplit
    test: CubeEdgeSplit


@dataclass(frozen=True)
class _Sample:
    vertices: Array
    features: Array
    label: int
    shear: tuple[float, float]
    rotation: Array
    rotated: bool


def _draw_sample(
    seed: np.random.SeedSequence, config: GenConfig, noisy: bool, rotate: bool
) -> _Sample:
    rng = np.random.default_rng(seed)
    label = int(rng.integers(config.n_classes))
    base = generate_skeleton(label_bits(label, config.n_edges))
    a, c = rng.uniform(-config.shear_range, config.shear_range, size=2)
    for _ in range(MAX_RESAMPLES):
        # noise and rotation are always drawn so every flag combination shares one stream
        noise = config.sigma * rng.standard_normal(base.vertices.shape)
        rotation = random_unit(rng, canonical=True)
        sk = perturb(
            base,
            shear_xy=(float(a), float(c)),
            noise=noise if noisy else None,
            rotation=rotation if rotate else None,
        )
        try:
            features = featurize(sk)
        except DegenerateEdgeError:
            logger.debug("Degenerate edge for label %d, resampling noise", label)
            continue
        return _Sample(
            vertices=sk.vertices,
            features=features,
            label=label,
            shear=(float(a), float(c)),
            rotation=rotation if rotate else identity(),
            rotated=rotate,
        )
    raise DegenerateEdgeError(
        f"no valid skeleton after {MAX_RESAMPLES} noise draws (sigma={config.sigma})"
    )


def _stack(samples: list[_Sample], config: GenConfig) -> CubeEdgeSplit:
    if not samples:
        e = config.n_edges
        return CubeEdgeSplit(
            vertices=np.zeros((0, e + 1, 3)),
            features=np.zeros((0, e - 1, 4)),
            labels=np.zeros(0, dtype=np.int64),
            shear=np.zeros((0, 2)),
            rotation=np.zeros((0, 4)),
            rotated=np.zeros(0, dtype=bool),
        )
    return CubeEdgeSplit(
        vertices=np.stack([s.vertices for s in samples]),
        features=np.stack([s.features for s in samples]),
        labels=np.array([s.label for s in samples], dtype=np.int64),
        shear=np.array([s.shear for s in samples]),
        rotation=np.stack([s.rotation for s in samples]),
        rotated=np.array([s.rotated for s in samples], dtype=bool),
    )


def _generate_split(
    seed: np.random.SeedSequence,
    n: int,
    config: GenConfig,
    noisy: bool,
    rotate: bool,
    threads: int,
) -> CubeEdgeSplit:
    seeds = seed.spawn(n)
    if threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            samples = list(pool.map(lambda s: _draw_sample(s, config, noisy, rotate), seeds))
    else:
        samples = [_draw_sample(s, config, noisy, rotate) for s in seeds]
    return _stack(samples, config)


def generate_dataset(config: GenConfig, threads: int = 1) -> CubeEdgeDataset:
    """Train and test splits, fully determined by ``config``.

    Every sample has its own seed spawned from ``config.seed``, so the result
    does not depend on ``threads``. Train samples are sheared only unless
    ``noise_train`` is set; test samples carry noise at ``sigma``.
    """
    train_seed, test_seed = np.random.SeedSequence(config.seed).spawn(2)
    logger.info(
        "Generating CubeEdge: %d edges, %d train, %d test, sigma=%g, seed=%d",
        config.n_edges,
        config.n_train,
        config.n_test,
        config.sigma,
        config.seed,
    )
    train = _generate_split(
        train_seed, config.n_train, config, config.noise_train, False, threads
    )
    test = _generate_split(test_seed, config.n_test, config, True, config.rotate_test, threads)
    return CubeEdgeDataset(config=config, train=train, test=test)


def class_histogram(split: CubeEdgeSplit, n_classes: int) -> np.ndarray:
    return np.bincount(split.labels, minlength=n_classes)


# ─── File format ─────────────────────────────────────────────


def record_dtype(n_edges: int) -> np.dtype:
    return np.dtype(
        [
            ("label", "<u4"),
            ("vertices", "<f8", (n_edges + 1, 3)),
            ("features", "<f8", (n_edges - 1, 4)),
            ("shear", "<f8", (2,)),
            ("rotation", "<f8", (4,)),
            ("rotated", "u1"),
        ]
    )


def _to_records(split: CubeEdgeSplit, dtype: np.dtype) -> np.ndarray:
    records = np.zeros(len(split), dtype=dtype)
    records["label"] = split.labels
    records["vertices"] = split.vertices
    records["features"] = split.features
    records["shear"] = split.shear
    records["rotation"] = split.rotation
    records["rotated"] = split.rotated
    return records


def _from_records(records: np.ndarray) -> CubeEdgeSplit:
    return CubeEdgeSplit(
        vertices=records["vertices"].astype(np.float64),
        features=records["features"].astype(np.float64),
        labels=records["label"].astype(np.int64),
        shear=records["shear"].astype(np.float64),
        rotation=records["rotation"].astype(np.float64),
        rotated=records["rotated"].astype(bool),
    )


def save_dataset(dataset: CubeEdgeDataset, path: str | Path) -> Path:
    """Write magic, version, JSON header, then little-endian train and test records."""
    path = Path(path)
    if path.suffix == "":
        path = path / DATASET_FILENAME
    path.parent.mkdir(parents=True, exist_ok=True)
    header = DatasetHeader(
        config=dataset.config,
        splits={"train": len(dataset.train), "test": len(dataset.test)},
    ).model_dump_json()
    header_bytes = header.encode("utf-8")
    dtype = record_dtype(dataset.config.n_edges)
    with path.open("wb") as fh:
        fh.write(_PREAMBLE.pack(DATASET_MAGIC, DATASET_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(_to_records(dataset.train, dtype).tobytes())
        fh.write(_to_records(dataset.test, dtype).tobytes())
    logger.info("Dataset written: %s", path)
    return path


def load_dataset(path: str | Path) -> CubeEdgeDataset:
    path = Path(path)
    if path.is_dir():
        path = path / DATASET_FILENAME
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    blob = path.read_bytes()

    if len(blob) < _PREAMBLE.size:
        raise DatasetFormatError(f"{path}: truncated preamble")
    magic, version, header_len = _PREAMBLE.unpack_from(blob)
    if magic != DATASET_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    start = _PREAMBLE.size
    if len(blob) < start + header_len:
        raise DatasetFormatError(f"{path}: truncated header")
    try:
        header = DatasetHeader.model_validate_json(blob[start : start + header_len])
    except ValidationError as exc:
        raise DatasetFormatError(f"{path}: invalid header: {exc}") from exc

    dtype = record_dtype(header.config.n_edges)
    n_train = header.splits.get("train", 0)
    n_test = header.splits.get("test", 0)
    body = blob[start + header_len :]
    expected = dtype.itemsize * (n_train + n_test)
    if len(body) != expected:
        raise DatasetFormatError(
            f"{path}: expected {expected} record bytes, found {len(body)}"
        )
    records = np.frombuffer(body, dtype=dtype)
    logger.info("Dataset loaded: %s (%d train, %d test)", path, n_train, n_test)
    return CubeEdgeDataset(
        config=header.config,
        train=_from_records(records[:n_train]),
        test=_from_records(records[n_train:]),
    )
