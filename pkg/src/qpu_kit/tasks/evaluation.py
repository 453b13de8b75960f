"""Evaluation steps: one model under one scenario, or across a noise sweep."""

from __future__ import annotations

from prefect import task
from prefect.cache_policies import NO_CACHE

from qpu_kit.cubeedge import CubeEdgeSplit
from qpu_kit.models import ModelGraph
from qpu_kit.schemas import EvalReport, Scenario
from qpu_kit.training import evaluate, evaluate_sweep


@task(name="evaluate-model", cache_policy=NO_CACHE)
def evaluate_model(
    model: ModelGraph,
    split: CubeEdgeSplit,
    scenario: Scenario,
    seed: int = 0,
    sigma: float = 0.0,
) -> EvalReport:
    return evaluate(model, split, scenario, seed=seed, sigma=sigma)


@task(name="sweep-model", cache_policy=NO_CACHE)
def sweep_model(
    model: ModelGraph,
    test_sets: dict[float, CubeEdgeSplit],
    seed: int = 0,
) -> list[EvalReport]:
    """Every scenario at every sigma, ordered by sigma then scenario."""
    return evaluate_sweep(model, test_sets, seed=seed)
