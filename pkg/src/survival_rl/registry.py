"""Versioned registry of benchmark cohort specs shipped with the package."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

from .batch import RL4SConfig
from .cohort import CohortSpec
from .io import check_schema

REGISTRY_SCHEMA = "benchmark-registry/1"
PREFIX = "registry:"


@lru_cache(maxsize=1)
def load_registry() -> dict:
    text = resources.files("survival_rl").joinpath("data/benchmarks.json").read_text()
    doc = json.loads(text)
    check_schema(doc, REGISTRY_SCHEMA)
    return doc


def benchmark_names() -> list[str]:
    return sorted(load_registry()["benchmarks"])


def benchmark_spec(name: str) -> CohortSpec:
    benches = load_registry()["benchmarks"]
    if name not in benches:
        raise KeyError(f"unknown benchmark {name!r}; known: {', '.join(sorted(benches))}")
    return CohortSpec.from_dict(benches[name]["spec"])


def benchmark_reference(name: str) -> dict:
    """Frozen oracle values recorded for ``name`` when the registry was built."""
    return dict(load_registry()["benchmarks"][name]["reference"])


def benchmark_config(seed: int | None = None) -> RL4SConfig:
    cfg = RL4SConfig.from_dict(load_registry()["rl4s_config"])
    return cfg if seed is None else cfg.replace(seed=seed)
