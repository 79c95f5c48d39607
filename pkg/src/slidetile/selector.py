"""Artifact-fraction cost and per-set tile selection.

Each tile's cost is the weighted sum of its fold, blur, and background
fractions; the set's winner is the first member attaining the minimum cost in
the fixed C,L,U,R,D order. With all weights 1 the cost equals 1 - p_qt, so
selection maximizes the qualified-tissue fraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptySet
from .tiling import VARIANT_INDEX

REJECTED = None  # chosen variant when every member exceeds c_max


@dataclass(frozen=True)
class ArtifactFractions:
    p_fo: float
    p_bl: float
    p_bg: float
    p_qt: float


@dataclass(frozen=True)
class Weights:
    lambda_fo: float = 1.0
    lambda_bl: float = 1.0
    lambda_bg: float = 1.0

    def __post_init__(self) -> None:
        if min(self.lambda_fo, self.lambda_bl, self.lambda_bg) < 0:
            raise ValueError("weights must be nonnegative")


@dataclass(frozen=True)
class Selection:
    set_index: int
    chosen: str | None
    cost: float
    fractions: ArtifactFractions | None
    member_costs: dict[str, float]


def fractions(mask: np.ndarray) -> ArtifactFractions:
    """Per-label pixel fractions of a 0-3 label mask."""
    total = mask.size
    if total == 0:
        raise ValueError("empty mask")
    counts = np.bincount(mask.ravel(), minlength=4)
    return ArtifactFractions(
        p_fo=int(counts[2]) / total,
        p_bl=int(counts[3]) / total,
        p_bg=int(counts[0]) / total,
        p_qt=int(counts[1]) / total,
    )


def cost(f: ArtifactFractions, w: Weights = Weights()) -> float:
    return w.lambda_fo * f.p_fo + w.lambda_bl * f.p_bl + w.lambda_bg * f.p_bg


def select_tile(
    members: list[tuple[str, ArtifactFractions]],
    w: Weights = Weights(),
    c_max: float = 1.0,
    set_index: int = 0,
) -> Selection:
    """Pick the minimum-cost member; ties go to the earliest variant in
    C,L,U,R,D order. If even the best cost exceeds c_max the set is rejected
    (chosen is None) but the full cost vector is still recorded."""
    if not members:
        raise EmptySet(f"set {set_index} has no members to select from")
    ordered = sorted(members, key=lambda m: VARIANT_INDEX[m[0]])
    costs = {variant: cost(f, w) for variant, f in ordered}
    best_variant, best_fractions = ordered[0]
    best_cost = costs[best_variant]
    for variant, f in ordered[1:]:
        if costs[variant] < best_cost:
            best_variant, best_fractions, best_cost = variant, f, costs[variant]
    if best_cost > c_max:
        return Selection(set_index=set_index, chosen=None, cost=best_cost,
                         fractions=None, member_costs=costs)
    return Selection(set_index=set_index, chosen=best_variant, cost=best_cost,
                     fractions=best_fractions, member_costs=costs)
