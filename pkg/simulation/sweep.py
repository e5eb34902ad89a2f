"""Pruning-ratio x seed grid: does conflict resolution help more on smaller backbones?"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from config.settings import RunConfig
from simulation.pipeline import FUSED_CR, FUSED_NO_CR, run_pipeline
from utils.errors import AccountingError, ParameterError

logger = logging.getLogger(__name__)

DEFAULT_RATIOS = (0.2, 0.4, 0.6, 0.8)


@dataclass(frozen=True)
class SweepPoint:
    ratio: float
    seed: int
    cross_no_cr: float
    cross_cr: float
    conflict_pre: float
    conflict_post: float

    @property
    def improvement(self) -> float:
        """Positive when de-conflicted fusion has the lower cross-domain error."""
        return self.cross_no_cr - self.cross_cr

    def to_dict(self) -> dict[str, Any]:
        return {
            "ratio": self.ratio,
            "seed": self.seed,
            "cross_no_cr": self.cross_no_cr,
            "cross_cr": self.cross_cr,
            "improvement": self.improvement,
            "conflict_pre": self.conflict_pre,
            "conflict_post": self.conflict_post,
        }


@dataclass(frozen=True)
class SweepResult:
    points: tuple[SweepPoint, ...]

    def at(self, ratio: float) -> list[SweepPoint]:
        return [p for p in self.points if p.ratio == ratio]

    def summary(self) -> dict[str, dict[str, float]]:
        out = {}
        for ratio in sorted({p.ratio for p in self.points}):
            pts = self.at(ratio)
            out[f"{ratio:g}"] = {
                "mean_cross_no_cr": float(np.mean([p.cross_no_cr for p in pts])),
                "mean_cross_cr": float(np.mean([p.cross_cr for p in pts])),
                "mean_improvement": float(np.mean([p.improvement for p in pts])),
                "cr_win_rate": cr_win_rate(pts),
                "mean_conflict_pre": float(np.mean([p.conflict_pre for p in pts])),
                "mean_conflict_post": float(np.mean([p.conflict_post for p in pts])),
            }
        return out

    def to_dict(self) -> dict[str, Any]:
        return {"points": [p.to_dict() for p in self.points], "summary": self.summary()}


def cr_win_rate(points: Sequence[SweepPoint]) -> float:
    """Fraction of runs where de-conflicted fusion is strictly better."""
    if not points:
        raise AccountingError("no sweep points")
    return sum(p.cross_cr < p.cross_no_cr for p in points) / len(points)


def sweep(config: RunConfig, ratios: Sequence[float] = DEFAULT_RATIOS, seeds: Sequence[int] = range(20)) -> SweepResult:
    """Run the pipeline with CR enabled for every (ratio, seed) pair."""
    if not ratios or not seeds:
        raise ParameterError("sweep needs at least one ratio and one seed")
    if config.num_clients < 2:
        raise ParameterError("sweep compares cross-domain error and needs num_clients >= 2")
    points = []
    for ratio in ratios:
        for seed in seeds:
            run_config = config.with_seed(seed).with_overrides(prune={"ratio": float(ratio)}, cr={"enabled": True})
            report = run_pipeline(run_config).report
            point = SweepPoint(
                ratio=float(ratio),
                seed=int(seed),
                cross_no_cr=report.cross_mean(FUSED_NO_CR),
                cross_cr=report.cross_mean(FUSED_CR),
                conflict_pre=report.conflict["pre"],
                conflict_post=report.conflict["post"],
            )
            logger.info("ratio %g seed %d: improvement %.6g", ratio, seed, point.improvement)
            points.append(point)
    return SweepResult(points=tuple(points))
