"""Desk-scale training corpus, held-out evaluation sets and the ablation grid.

Shared by the ``train``/``ablate`` subcommands and the acceptance suite so
both measure the same thing.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .filtering import FilterConfig, filter_cloud
from .geometry import Mesh, NoiseSpec, PointCloud, add_noise
from .hybrid import HybridModel, StepLosses, TrainConfig, build_training_set, config_for, train
from .metrics import chamfer, point2mesh
from .shapes import ShapeSpec, generate

log = logging.getLogger(__name__)

ABLATION_N = (1, 2, 3, 4, 6, 8)
ABLATION_LAMBDAS = (2.0, 5.0, 10.0, 20.0)
# Held-out clouds use seeds far from the training seeds (0, 1, ...).
HELD_OUT_SEED = 100


@dataclass(frozen=True)
class CorpusConfig:
    shapes: tuple = ("sphere", "torus")
    resolution: int = 5000
    patches_per_cloud: int = 64
    seed: int = 0


@dataclass(frozen=True)
class EvalCase:
    shape: str
    noise_kind: str
    sigma: float
    clean: PointCloud
    noisy: PointCloud
    mesh: Mesh


def training_clouds(corpus: CorpusConfig) -> list[tuple[str, PointCloud]]:
    return [(kind, generate(ShapeSpec(kind, corpus.resolution, seed=corpus.seed + i))[0])
            for i, kind in enumerate(corpus.shapes)]


def training_set(corpus: CorpusConfig, patch_k: int):
    return build_training_set(training_clouds(corpus), patch_k, corpus.patches_per_cloud, corpus.seed)


def held_out_cases(shapes: Iterable[str] = ("sphere", "torus"), resolution: int = 5000,
                   sigma: float = 0.02, noise_kind: str = "gaussian",
                   seed: int = HELD_OUT_SEED) -> list[EvalCase]:
    cases = []
    for i, kind in enumerate(shapes):
        clean, mesh = generate(ShapeSpec(kind, resolution, seed=seed + i))
        noisy = add_noise(clean, NoiseSpec(noise_kind, sigma, seed + 1000 + i))
        cases.append(EvalCase(kind, noise_kind, sigma, clean, noisy, mesh))
    return cases


def train_variant(variant: str, steps: int, corpus: CorpusConfig = CorpusConfig(), lam: float = 10.0,
                  lr: float = 1e-4, patch_k: int = 256, seed: int = 0,
                  callback: Optional[Callable[[StepLosses], None]] = None) -> tuple[HybridModel, list[StepLosses]]:
    """Train one ablation variant from a fixed initialization seed on the desk corpus."""
    model_config, loss = config_for(variant)
    model = HybridModel(model_config, seed=seed)
    config = TrainConfig(lam=lam, lr=lr, steps=steps, patch_k=patch_k, seed=seed, loss=loss)
    return train(model, training_set(corpus, patch_k), config, callback)


def evaluate_filtering(model: HybridModel, cases: Sequence[EvalCase], config: FilterConfig,
                       with_p2m: bool = True) -> list[dict]:
    """One row per case: CD of the noisy input and of the filtered output, plus P2M."""
    rows = []
    for case in cases:
        filtered = filter_cloud(case.noisy, model, config)
        rows.append({
            "shape": case.shape,
            "noise_kind": case.noise_kind,
            "sigma": case.sigma,
            "n_steps": config.n_steps,
            "alpha": config.alpha,
            "cd_noisy": chamfer(case.noisy, case.clean),
            "cd": chamfer(filtered, case.clean),
            "p2m": point2mesh(filtered, case.mesh) if with_p2m else float("nan"),
        })
    return rows


def ablation_grid(variants: Sequence[str], n_values: Sequence[int], lambdas: Sequence[float], steps: int,
                  corpus: CorpusConfig, cases: Sequence[EvalCase], alpha: float = 0.8, lr: float = 1e-4,
                  patch_k: int = 256, seed: int = 0, threads: int = 1) -> list[dict]:
    """Train every (variant, lambda) once, then filter with every N."""
    rows = []
    for variant in variants:
        for lam in lambdas:
            log.info("training %s with lambda=%g for %d steps", variant, lam, steps)
            model, trace = train_variant(variant, steps, corpus, lam, lr, patch_k, seed)
            final = float(np.mean([t.hybrid for t in trace[-100:]])) if trace else float("nan")
            for n in n_values:
                config = FilterConfig(alpha=alpha, n_steps=n, patch_k=patch_k, seed=seed, threads=threads)
                for row in evaluate_filtering(model, cases, config):
                    rows.append({"variant": variant, "lambda": lam, "parameters": model.num_parameters(),
                                 "final_loss": final, **row})
    return rows
