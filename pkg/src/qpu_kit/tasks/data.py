"""Dataset step: generate CubeEdge splits or load them from disk."""

from __future__ import annotations

import logging
from pathlib import Path

from prefect import task
from prefect.cache_policies import NO_CACHE

from qpu_kit.cubeedge import CubeEdgeDataset, generate_dataset, load_dataset, save_dataset
from qpu_kit.schemas import GenConfig

logger = logging.getLogger(__name__)


@task(name="generate-cubeedge", cache_policy=NO_CACHE)
def generate_cubeedge(
    config: GenConfig, threads: int = 1, out_dir: str | None = None
) -> CubeEdgeDataset:
    """Generate the dataset and, when ``out_dir`` is given, save it there."""
    dataset = generate_dataset(config, threads=threads)
    if out_dir is not None:
        save_dataset(dataset, Path(out_dir))
    return dataset


@task(name="load-cubeedge", cache_policy=NO_CACHE)
def load_cubeedge(path: str) -> CubeEdgeDataset:
    dataset = load_dataset(path)
    logger.info(
        "Using stored dataset %s: n_edges=%d, sigma=%g",
        path,
        dataset.config.n_edges,
        dataset.config.sigma,
    )
    return dataset
