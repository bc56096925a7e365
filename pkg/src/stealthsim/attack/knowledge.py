"""What the attacker knows, and when each attack stage runs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..detect import DetectorConfig
from ..plant import LinearModel
from ..synthesis import ControllerRealization, ResidualStats

STAGES = ("nominal", "I", "II", "III", "post")


@dataclass(frozen=True)
class AttackerKnowledge:
    """Model-level knowledge only: matrices, detector settings, residual statistics.

    Live internal states (controller state, detector state) are deliberately
    absent.
    """

    model: LinearModel
    controller: ControllerRealization
    detector: DetectorConfig
    residual_stats: ResidualStats
    Sigma_w: np.ndarray
    Sigma_v: np.ndarray
    Sigma_nu: np.ndarray | None = None

    @property
    def sqrt_cov(self) -> np.ndarray:
        return self.residual_stats.sqrt_cov

    @property
    def normalizer(self) -> np.ndarray:
        return self.residual_stats.normalizer

    @property
    def output_map(self) -> np.ndarray:
        """C Tc: controller state to predicted measurement."""
        return self.model.C @ self.controller.Tc


@dataclass(frozen=True)
class AttackTimeline:
    """Stage start times follow k_II = k_I + N_I - 1 and k_III = k_I + N_I + N_II - 1."""

    k_I: int
    N_I: int
    N_II: int
    N_III: int

    def __post_init__(self):
        if self.k_I < 0 or self.N_I < 1 or self.N_II < 0 or self.N_III < 1:
            raise ValueError(f"invalid timeline {self}")

    @property
    def k_II(self) -> int:
        return self.k_I + self.N_I - 1

    @property
    def k_III(self) -> int:
        return self.k_I + self.N_I + self.N_II - 1

    @property
    def k_end(self) -> int:
        """First step after Stage III."""
        return self.k_III + self.N_III

    def stage(self, k: int) -> str:
        if k < self.k_I:
            return "nominal"
        if k < self.k_II:
            return "I"
        if k < self.k_III:
            return "II"
        if k < self.k_end:
            return "III"
        return "post"

    def tags(self, n_steps: int) -> np.ndarray:
        return np.array([self.stage(k) for k in range(n_steps)])
