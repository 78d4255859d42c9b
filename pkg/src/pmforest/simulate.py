"""Synthetic trial with a smooth, cosine-shaped treatment effect.

Ten equicorrelated standard normal characteristics, exactly half of
the patients treated, and a Gaussian outcome

    y ~ N(1.9 + (base_effect + amplitude * cos(z1)) * x_A, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .model_core import Family


@dataclass(frozen=True)
class SimTruth:
    true_alpha: float = 1.9
    base_effect: float = 0.2
    amplitude: float = 0.3
    n: int = 600
    correlation: float = 0.2
    n_vars: int = 10
    seed: int | None = None

    def beta(self, z1) -> np.ndarray:
        return self.base_effect + self.amplitude * np.cos(np.asarray(z1, dtype=float))

    def to_dict(self) -> dict:
        return {
            "true_alpha": self.true_alpha,
            "base_effect": self.base_effect,
            "amplitude": self.amplitude,
            "n": self.n,
            "correlation": self.correlation,
            "n_vars": self.n_vars,
            "seed": self.seed,
        }


def equicorrelated_normal(rng: np.random.Generator, n: int, dim: int, rho: float) -> np.ndarray:
    cov = np.full((dim, dim), rho)
    np.fill_diagonal(cov, 1.0)
    chol = np.linalg.cholesky(cov)
    return rng.standard_normal((n, dim)) @ chol.T


def simulate_appendix_b(
    n: int = 600,
    amplitude: float = 0.3,
    base_effect: float = 0.2,
    seed=None,
    correlation: float = 0.2,
    n_vars: int = 10,
    intercept: float = 1.9,
) -> tuple[Dataset, SimTruth]:
    """Draw one synthetic trial; ``amplitude=0`` gives a constant effect."""
    if n % 2:
        raise ValueError("n must be even")
    rng = np.random.default_rng(seed)
    z = equicorrelated_normal(rng, n, n_vars, correlation)
    x = rng.permutation(np.repeat([0.0, 1.0], n // 2))
    truth = SimTruth(intercept, base_effect, amplitude, n, correlation, n_vars,
                     seed if isinstance(seed, int) else None)
    y = intercept + truth.beta(z[:, 0]) * x + rng.standard_normal(n)
    columns = {"y": y, "trt": x}
    roles = {"y": "outcome", "trt": "treatment"}
    kinds = {}
    for j in range(n_vars):
        name = f"z{j + 1}"
        columns[name] = z[:, j]
        roles[name] = "partition"
        kinds[name] = "numeric"
    return Dataset(Family.LINEAR_NORMAL, columns, roles, kinds), truth


def simulate_pair(seed: int, n: int = 600, amplitude: float = 0.3, base_effect: float = 0.2,
                  correlation: float = 0.2, n_vars: int = 10
                  ) -> tuple[Dataset, Dataset, SimTruth]:
    """Learning and test samples from independent streams derived from ``seed``."""
    train_ss, test_ss = np.random.SeedSequence(seed).spawn(2)
    train, _ = simulate_appendix_b(n, amplitude, base_effect, train_ss, correlation, n_vars)
    test, _ = simulate_appendix_b(n, amplitude, base_effect, test_ss, correlation, n_vars)
    truth = SimTruth(1.9, base_effect, amplitude, n, correlation, n_vars, seed)
    return train, test, truth
