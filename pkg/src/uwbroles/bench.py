"""Allocation latency measurement, direct call vs full ledger path.

Invocations are paced at the allocation loop rate (5 Hz by default) to mirror
how the decision runs inside a scenario. The ledger path times the complete
propose -> endorse -> order -> commit round trip on the threaded network, so
the block-cutting timeout is part of the measured figure, as it would be for
a real client.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .allocation import allocate_roles
from .ledger import LedgerNetwork
from .ledger.codec import position_to_mm


@dataclass(frozen=True)
class LatencyReport:
    mode: str
    samples: tuple            # seconds, in measurement order

    @property
    def median(self) -> float:
        return float(np.median(self.samples))

    @property
    def p25(self) -> float:
        return float(np.percentile(self.samples, 25))

    @property
    def p75(self) -> float:
        return float(np.percentile(self.samples, 75))

    def to_dict(self) -> dict:
        s = np.asarray(self.samples)
        iqr = self.p75 - self.p25
        lo_fence = self.p25 - 1.5 * iqr
        hi_fence = self.p75 + 1.5 * iqr
        inliers = s[(s >= lo_fence) & (s <= hi_fence)]
        return {
            "mode": self.mode,
            "count": len(s),
            "mean_s": float(np.mean(s)),
            "median_s": self.median,
            "p25_s": self.p25,
            "p75_s": self.p75,
            "whisker_low_s": float(np.min(inliers)),
            "whisker_high_s": float(np.max(inliers)),
            "outliers_s": [float(x) for x in s[(s < lo_fence) | (s > hi_fence)]],
            "samples_s": [float(x) for x in s],
        }


def _bench_positions(n: int, seed: int = 7) -> dict:
    """Scattered node layout for a synthetic n-node allocation instance."""
    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    return {
        nid: (float(x), float(y), 0.0)
        for nid, (x, y) in enumerate(gen.uniform(0.0, 5.0, size=(n, 2)), start=1)
    }


def _pace(next_due: float) -> float:
    now = time.perf_counter()
    if now < next_due:
        time.sleep(next_due - now)
    return time.perf_counter()


def bench_direct(n: int, k: int, iters: int, rate_hz: float = 5.0) -> LatencyReport:
    positions = _bench_positions(n)
    period = 1.0 / rate_hz
    samples = []
    next_due = time.perf_counter()
    for epoch in range(iters):
        start = _pace(next_due)
        allocate_roles(positions, k, epoch=epoch)
        samples.append(time.perf_counter() - start)
        next_due = start + period
    return LatencyReport(mode="direct", samples=tuple(samples))


def bench_ledger(n: int, k: int, iters: int, rate_hz: float = 5.0) -> LatencyReport:
    positions = _bench_positions(n)
    orgs = [f"org{i}" for i in range(1, 7)]
    node_orgs = {nid: orgs[(nid - 1) % len(orgs)] for nid in positions}
    net = LedgerNetwork(orgs, node_orgs=node_orgs, seed=7)
    for nid, p in positions.items():
        net.invoke(
            "role_allocation",
            "report_position",
            {"node": nid, "epoch": 0, "pos_mm": list(position_to_mm(p))},
            node_orgs[nid],
        )
    net.start_threads()
    period = 1.0 / rate_hz
    samples = []
    try:
        next_due = time.perf_counter()
        for epoch in range(iters):
            start = _pace(next_due)
            result = net.invoke(
                "role_allocation",
                "allocate",
                {"epoch": epoch, "k": k, "always_active": [], "nodes": sorted(positions)},
                orgs[0],
            )
            samples.append(time.perf_counter() - start)
            if not result.valid:
                raise RuntimeError(f"allocation transaction invalidated at epoch {epoch}")
            next_due = start + period
    finally:
        net.stop_threads()
    return LatencyReport(mode="ledger", samples=tuple(samples))


def run_bench(n: int, k: int, iters: int, mode: str, rate_hz: float = 5.0) -> LatencyReport:
    if mode == "direct":
        return bench_direct(n, k, iters, rate_hz)
    if mode == "ledger":
        return bench_ledger(n, k, iters, rate_hz)
    raise ValueError(f"unknown bench mode {mode!r}")
