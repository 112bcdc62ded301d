"""Active/passive role allocation.

Every epoch, k nodes range actively (ToF) and the rest listen passively
(TDoA). The allocator enumerates all candidate active subsets and keeps the
one whose passive nodes cluster tightest around the active-set centroid:

    cost(A) = sum over l not in A of  || p_l - centroid({p_a : a in A}) ||^2

Ties break toward the lexicographically smallest sorted id tuple so that
every replica of the computation (library call or ledger contract) lands on
the same answer.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .geometry import as_position


@dataclass(frozen=True)
class FrequencyBudget:
    """Channel budget: pairwise ranging ceiling vs required localization rate."""

    f_uwb_max: float
    f_loc_min: float

    def __post_init__(self):
        if self.f_uwb_max <= 0 or self.f_loc_min <= 0:
            raise ValueError("frequencies must be positive")
        if self.f_uwb_max < self.f_loc_min:
            raise ValueError("f_uwb_max must be >= f_loc_min")


@dataclass(frozen=True)
class RoleAssignment:
    """Partition of the node ids into active rangers and passive listeners."""

    epoch: int
    active: tuple
    passive: tuple
    cost: float

    def __post_init__(self):
        if set(self.active) & set(self.passive):
            raise ValueError("active and passive sets overlap")

    def role_of(self, node: int) -> str:
        if node in self.active:
            return "active"
        if node in self.passive:
            return "passive"
        raise KeyError(f"node {node} not part of this assignment")


def compute_k(budget: FrequencyBudget) -> int:
    """Number of active slots the ranging budget affords: floor(f_uwb_max / f_loc_min)."""
    return int(math.floor(budget.f_uwb_max / budget.f_loc_min))


def allocation_cost(active, positions) -> float:
    """Sum of squared distances from the non-active nodes to the active centroid."""
    active = tuple(active)
    if not active:
        raise ValueError("active set cannot be empty")
    unknown = [a for a in active if a not in positions]
    if unknown:
        raise KeyError(f"unknown node ids in active set: {unknown}")
    center = np.mean([as_position(positions[a]) for a in active], axis=0)
    total = 0.0
    for nid in positions:
        if nid in active:
            continue
        d = as_position(positions[nid]) - center
        total += float(d @ d)
    return total


def allocate_roles(positions, k: int, always_active=(), epoch: int = 0) -> RoleAssignment:
    """Exhaustively pick the cost-minimal active subset of exactly k nodes.

    ``always_active`` nodes (the frame-defining anchors in the reference
    scenario) are forced into every candidate subset. Candidates are visited
    in lexicographic order of their sorted id tuples and only a strictly
    smaller cost displaces the incumbent, which makes ties deterministic.
    """
    ids = sorted(positions)
    forced = tuple(sorted(always_active))
    for nid in forced:
        if nid not in positions:
            raise KeyError(f"always_active node {nid} has no position")
    n = len(ids)
    if k > n:
        raise ValueError(f"k={k} exceeds node count {n}")
    if k < len(forced):
        raise ValueError(f"k={k} smaller than forced active set {forced}")

    rest = [nid for nid in ids if nid not in forced]
    best = None
    best_cost = None
    for combo in itertools.combinations(rest, k - len(forced)):
        active = tuple(sorted(forced + combo))
        cost = allocation_cost(active, positions)
        if best_cost is None or cost < best_cost:
            best, best_cost = active, cost
    passive = tuple(nid for nid in ids if nid not in best)
    return RoleAssignment(epoch=epoch, active=best, passive=passive, cost=best_cost)


def role_overlap(a, b, node: int) -> float:
    """Percentage of epochs in which ``node`` holds the same role in both sequences."""
    if len(a) != len(b):
        raise ValueError(f"sequences differ in length: {len(a)} vs {len(b)}")
    if not a:
        raise ValueError("cannot compute overlap of empty sequences")
    same = sum(1 for ra, rb in zip(a, b) if ra.role_of(node) == rb.role_of(node))
    return 100.0 * same / len(a)
