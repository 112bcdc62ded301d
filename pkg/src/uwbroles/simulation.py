"""Deterministic scenario engine.

Robots follow waypoint lists under barrier semantics (nobody advances to the
next waypoint until everyone reached the current one), measurements are
synthesized from ground truth with seedable per-sample noise streams, and each
allocation epoch runs the estimate-then-reallocate loop: actives localize via
ToF network adjustment, listeners via TDoA, then the role allocator picks the
next active set from the estimated positions.

Allocation inputs are quantized to millimeters in every mode, so a direct run
and a ledger-mediated run see bit-identical positions and produce identical
role sequences.
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .allocation import FrequencyBudget, RoleAssignment, allocate_roles, compute_k, role_overlap
from .estimators import EstimationError, adjust_network, tdoa_estimate
from .geometry import TdoaSample, TofRange, as_position, distance
from .ledger.codec import position_from_mm, position_to_mm

ARRIVAL_TOL_M = 0.02

# Stream tags keep ToF and TDoA noise draws on disjoint substreams.
_TOF_TAG = 0
_TDOA_TAG = 1


class ConfigError(ValueError):
    """Scenario configuration rejected."""


@dataclass(frozen=True)
class SimConfig:
    n: int
    anchors: dict                 # node id -> (x, y, z) meters, fixed
    waypoints: dict               # node id -> list of (x, y, z)
    robot_speed: float            # m/s
    tick_rate: float              # Hz, kinematic steps
    alloc_rate: float             # Hz, allocation epochs
    tof_sigma: float              # m
    tdoa_sigma: float             # m (scaled by sqrt(2) inside measure_tdoa)
    seed: int
    n_epochs: int
    k: int = 0                    # explicit active-set size; 0 means "use budget"
    budget: FrequencyBudget | None = None
    always_active: tuple = ()
    mode_2d: bool = True

    def __post_init__(self):
        if self.n < 3:
            raise ConfigError("need at least 3 nodes")
        ids = set(self.anchors) | set(self.waypoints)
        if ids != set(range(1, self.n + 1)):
            raise ConfigError(
                f"anchors+waypoints must cover node ids 1..{self.n}, got {sorted(ids)}"
            )
        if set(self.anchors) & set(self.waypoints):
            raise ConfigError("a node cannot be both anchor and waypoint-driven")
        for nid, wps in self.waypoints.items():
            if not wps:
                raise ConfigError(f"node {nid} has an empty waypoint list")
        if self.robot_speed <= 0:
            raise ConfigError("robot_speed must be positive")
        if self.alloc_rate <= 0 or self.tick_rate <= 0:
            raise ConfigError("rates must be positive")
        if self.alloc_rate > self.tick_rate:
            raise ConfigError("alloc_rate cannot exceed tick_rate")
        if abs(self.tick_rate / self.alloc_rate - round(self.tick_rate / self.alloc_rate)) > 1e-9:
            raise ConfigError("tick_rate must be an integer multiple of alloc_rate")
        if self.tof_sigma < 0 or self.tdoa_sigma < 0:
            raise ConfigError("noise sigmas cannot be negative")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 bits")
        if self.n_epochs < 1:
            raise ConfigError("n_epochs must be >= 1")
        if (self.k == 0) == (self.budget is None):
            raise ConfigError("exactly one of k or budget must be given")
        k = self.effective_k
        if not 3 <= k <= self.n:
            raise ConfigError(f"active-set size k={k} must satisfy 3 <= k <= n")
        if not set(self.always_active) <= set(range(1, self.n + 1)):
            raise ConfigError("always_active contains unknown node ids")
        if len(self.always_active) > k:
            raise ConfigError("always_active larger than the active set")

    @property
    def effective_k(self) -> int:
        return self.k if self.k else compute_k(self.budget)

    @property
    def mobile_ids(self) -> tuple:
        return tuple(sorted(self.waypoints))

    @property
    def anchor_ids(self) -> tuple:
        return tuple(sorted(self.anchors))

    @property
    def ticks_per_epoch(self) -> int:
        return int(round(self.tick_rate / self.alloc_rate))

    @classmethod
    def from_dict(cls, raw: dict) -> "SimConfig":
        known = {
            "n", "anchors", "waypoints", "robot_speed", "tick_rate", "alloc_rate",
            "k", "budget", "tof_sigma", "tdoa_sigma", "seed", "n_epochs",
            "always_active", "mode_2d",
        }
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            anchors = {int(k): tuple(as_position(v)) for k, v in raw["anchors"].items()}
            waypoints = {
                int(k): [tuple(as_position(w)) for w in v]
                for k, v in raw["waypoints"].items()
            }
            budget = None
            if raw.get("budget") is not None:
                budget = FrequencyBudget(
                    f_uwb_max=float(raw["budget"]["f_uwb_max"]),
                    f_loc_min=float(raw["budget"]["f_loc_min"]),
                )
            return cls(
                n=int(raw["n"]),
                anchors=anchors,
                waypoints=waypoints,
                robot_speed=float(raw["robot_speed"]),
                tick_rate=float(raw["tick_rate"]),
                alloc_rate=float(raw["alloc_rate"]),
                k=int(raw.get("k", 0)),
                budget=budget,
                tof_sigma=float(raw["tof_sigma"]),
                tdoa_sigma=float(raw["tdoa_sigma"]),
                seed=int(raw["seed"]),
                n_epochs=int(raw["n_epochs"]),
                always_active=tuple(sorted(int(x) for x in raw.get("always_active", []))),
                mode_2d=bool(raw.get("mode_2d", True)),
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad config: {exc}") from exc

    @classmethod
    def from_json(cls, path) -> "SimConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        out = {
            "n": self.n,
            "anchors": {str(k): list(v) for k, v in sorted(self.anchors.items())},
            "waypoints": {
                str(k): [list(w) for w in v] for k, v in sorted(self.waypoints.items())
            },
            "robot_speed": self.robot_speed,
            "tick_rate": self.tick_rate,
            "alloc_rate": self.alloc_rate,
            "tof_sigma": self.tof_sigma,
            "tdoa_sigma": self.tdoa_sigma,
            "seed": self.seed,
            "n_epochs": self.n_epochs,
            "always_active": list(self.always_active),
            "mode_2d": self.mode_2d,
        }
        if self.k:
            out["k"] = self.k
        else:
            out["budget"] = {
                "f_uwb_max": self.budget.f_uwb_max,
                "f_loc_min": self.budget.f_loc_min,
            }
        return out


@dataclass(frozen=True)
class MotionState:
    """Kinematic snapshot: every node's position plus the shared waypoint index.

    The index is shared because of the barrier rule: no robot advances until
    all robots reached their current target, so indices can never diverge.
    Waypoint lists cycle once exhausted.
    """

    config: SimConfig
    positions: dict               # node id -> np.ndarray (3,)
    wp_index: int = 0

    def target_of(self, nid: int) -> np.ndarray:
        wps = self.config.waypoints[nid]
        return as_position(wps[self.wp_index % len(wps)])


def initial_motion_state(config: SimConfig) -> MotionState:
    positions = {nid: as_position(p) for nid, p in config.anchors.items()}
    for nid, wps in config.waypoints.items():
        positions[nid] = as_position(wps[0])
    # Robots start on their first waypoint, so the opening target is the next one.
    return MotionState(config=config, positions=positions, wp_index=1)


def step_motion(state: MotionState, dt: float) -> MotionState:
    """Advance every robot by one kinematic tick; anchors never move."""
    cfg = state.config
    new_positions = dict(state.positions)
    all_arrived = True
    for nid in cfg.mobile_ids:
        pos = state.positions[nid]
        target = state.target_of(nid)
        gap = target - pos
        dist = float(np.linalg.norm(gap))
        if dist <= ARRIVAL_TOL_M:
            continue  # arrived: halt until the barrier releases everyone
        step = cfg.robot_speed * dt
        if step >= dist:
            new_positions[nid] = target.copy()
        else:
            new_positions[nid] = pos + gap * (step / dist)
            all_arrived = False
    next_index = state.wp_index + 1 if all_arrived else state.wp_index
    return MotionState(config=cfg, positions=new_positions, wp_index=next_index)


@dataclass(frozen=True)
class NoiseStreams:
    """Per-sample noise substreams derived from the scenario seed.

    Every draw gets its own generator keyed by (epoch, kind, node ids), so
    adding a node or reordering the sampling loop never perturbs any other
    sample's noise.
    """

    seed: int

    def _draw(self, spawn_key, sigma: float) -> float:
        if sigma == 0.0:
            return 0.0
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=spawn_key)
        gen = np.random.Generator(np.random.PCG64(seq))
        return float(gen.normal(0.0, sigma))

    def tof(self, epoch: int, i: int, j: int, sigma: float) -> float:
        a, b = (i, j) if i < j else (j, i)
        return self._draw((epoch, _TOF_TAG, a, b), sigma)

    def tdoa(self, epoch: int, listener: int, i: int, j: int, sigma: float) -> float:
        return self._draw((epoch, _TDOA_TAG, listener, i, j), sigma)


def measure_tof(truth, pairs, sigma, streams: NoiseStreams, epoch: int):
    """One noisy range per unordered pair, clamped at zero."""
    out = []
    for i, j in pairs:
        a, b = (i, j) if i < j else (j, i)
        d = distance(truth[a], truth[b]) + streams.tof(epoch, a, b, sigma)
        out.append(TofRange(i=a, j=b, distance=max(d, 0.0)))
    return out


def measure_tdoa(truth, listeners, active, sigma, streams: NoiseStreams, epoch: int):
    """One noisy difference-of-distances per listener per active pair (i < j).

    The noise gets a sqrt(2) factor: a TDoA observation differences two noisy
    signal paths.
    """
    listeners = sorted(listeners)
    active = sorted(active)
    if set(listeners) & set(active):
        raise ValueError("listeners and active sets must be disjoint")
    out = []
    for l in listeners:
        for i, j in itertools.combinations(active, 2):
            delta = distance(truth[l], truth[j]) - distance(truth[l], truth[i])
            delta += streams.tdoa(epoch, l, i, j, sigma * np.sqrt(2.0))
            out.append(TdoaSample(listener=l, i=i, j=j, delta=delta))
    return out


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    truth: dict                   # node id -> (x, y, z)
    estimates: dict               # node id -> (x, y, z)
    assignment_truth: RoleAssignment
    assignment_est: RoleAssignment
    errors: dict                  # node id -> |est - truth| m
    failed: tuple                 # node ids whose solver fell back this epoch


def quantized(positions) -> dict:
    """Millimeter-quantized copy of a position map; the allocator's input."""
    return {nid: position_from_mm(position_to_mm(as_position(p))) for nid, p in positions.items()}


class Scenario:
    """Mutable simulation state driving one scenario run epoch by epoch."""

    def __init__(self, config: SimConfig, alloc_fn=None):
        self.config = config
        self.streams = NoiseStreams(seed=config.seed)
        self.motion = initial_motion_state(config)
        self.estimates = {}
        self.assignment_est = None
        self.assignment_truth = None
        self.epoch = -1
        # alloc_fn(epoch, mm-quantized positions) -> RoleAssignment; the ledger
        # path substitutes the contract invocation here.
        self.alloc_fn = alloc_fn or self._direct_alloc
        self.alloc_seconds = []

    def _direct_alloc(self, epoch: int, positions) -> RoleAssignment:
        return allocate_roles(
            positions, self.config.effective_k, self.config.always_active, epoch=epoch
        )

    def _allocate(self, truth_q, est_q) -> tuple:
        cfg = self.config
        start = time.perf_counter()
        assignment_est = self.alloc_fn(self.epoch, est_q)
        self.alloc_seconds.append(time.perf_counter() - start)
        assignment_truth = allocate_roles(
            truth_q, cfg.effective_k, cfg.always_active, epoch=self.epoch
        )
        return assignment_truth, assignment_est

    def run_epoch(self) -> EpochRecord:
        cfg = self.config
        self.epoch += 1
        planar = cfg.mode_2d
        failed = []

        if self.epoch == 0:
            # Bootstrap: every pair ranges once; all mobiles localized jointly.
            # Initial guesses are the configured deployment spots.
            truth = self.motion.positions
            pairs = list(itertools.combinations(sorted(truth), 2))
            ranges = measure_tof(truth, pairs, cfg.tof_sigma, self.streams, 0)
            guesses = {nid: truth[nid] for nid in cfg.mobile_ids}
            try:
                est_mobiles = adjust_network(ranges, cfg.anchors, guesses, planar=planar)
            except EstimationError:
                est_mobiles = dict(guesses)
                failed.extend(cfg.mobile_ids)
            self.estimates = {nid: as_position(p) for nid, p in cfg.anchors.items()}
            self.estimates.update(est_mobiles)
        else:
            for _ in range(cfg.ticks_per_epoch):
                self.motion = step_motion(self.motion, 1.0 / cfg.tick_rate)
            truth = self.motion.positions

            active = list(self.assignment_est.active)
            listeners = list(self.assignment_est.passive)

            pairs = list(itertools.combinations(sorted(active), 2))
            ranges = measure_tof(truth, pairs, cfg.tof_sigma, self.streams, self.epoch)
            samples = measure_tdoa(
                truth, listeners, active, cfg.tdoa_sigma, self.streams, self.epoch
            )

            new_est = {nid: as_position(p) for nid, p in cfg.anchors.items()}

            # Active mobiles: joint range adjustment seeded from last epoch.
            active_mobiles = [a for a in active if a not in cfg.anchors]
            if active_mobiles:
                guesses = {a: self.estimates[a] for a in active_mobiles}
                try:
                    new_est.update(adjust_network(ranges, cfg.anchors, guesses, planar=planar))
                except EstimationError:
                    for a in active_mobiles:
                        new_est[a] = self.estimates[a]
                    failed.extend(active_mobiles)

            # Listeners: TDoA against the freshly estimated active positions.
            active_positions = {a: new_est[a] for a in active}
            by_listener = {}
            for s in samples:
                by_listener.setdefault(s.listener, []).append(s)
            for l in listeners:
                try:
                    new_est[l] = tdoa_estimate(
                        by_listener.get(l, []),
                        active_positions,
                        initial_guess=self.estimates[l],
                        planar=planar,
                    )
                except EstimationError:
                    new_est[l] = self.estimates[l]
                    failed.append(l)
            self.estimates = new_est

        truth_q = quantized(truth)
        est_q = quantized(self.estimates)
        self.assignment_truth, self.assignment_est = self._allocate(truth_q, est_q)

        errors = {
            nid: distance(truth[nid], self.estimates[nid]) for nid in sorted(truth)
        }
        return EpochRecord(
            epoch=self.epoch,
            truth={nid: tuple(as_position(truth[nid])) for nid in sorted(truth)},
            estimates={nid: tuple(as_position(self.estimates[nid])) for nid in sorted(truth)},
            assignment_truth=self.assignment_truth,
            assignment_est=self.assignment_est,
            errors=errors,
            failed=tuple(sorted(failed)),
        )


@dataclass
class ScenarioResult:
    config: SimConfig
    records: list
    summary: dict
    alloc_seconds: list = field(default_factory=list)


def run_scenario(config: SimConfig, alloc_fn=None) -> ScenarioResult:
    """Run the full scenario: bootstrap epoch plus n_epochs - 1 allocation epochs."""
    scenario = Scenario(config, alloc_fn=alloc_fn)
    records = [scenario.run_epoch() for _ in range(config.n_epochs)]
    summary = summarize(config, records)
    return ScenarioResult(
        config=config,
        records=records,
        summary=summary,
        alloc_seconds=list(scenario.alloc_seconds),
    )


def summarize(config: SimConfig, records) -> dict:
    """Per-node overlap table (Active %, Passive %, Total % Overlap) plus error stats."""
    truth_seq = [r.assignment_truth for r in records]
    est_seq = [r.assignment_est for r in records]
    n_epochs = len(records)

    overlap = {}
    for nid in config.mobile_ids:
        active_truth = sum(1 for a in truth_seq if nid in a.active)
        active_est = sum(1 for a in est_seq if nid in a.active)
        overlap[str(nid)] = {
            "active_pct_truth": round(100.0 * active_truth / n_epochs, 2),
            "passive_pct_truth": round(100.0 * (n_epochs - active_truth) / n_epochs, 2),
            "active_pct_est": round(100.0 * active_est / n_epochs, 2),
            "passive_pct_est": round(100.0 * (n_epochs - active_est) / n_epochs, 2),
            "total_overlap_pct": round(role_overlap(truth_seq, est_seq, nid), 2),
        }

    all_errors = [e for r in records for e in r.errors.values()]
    mobile_errors = {
        str(nid): round(float(np.mean([r.errors[nid] for r in records])), 6)
        for nid in config.mobile_ids
    }
    roles = [
        {
            "epoch": r.epoch,
            "active_truth": list(r.assignment_truth.active),
            "active_est": list(r.assignment_est.active),
        }
        for r in records
    ]
    return {
        "n_epochs": n_epochs,
        "k": config.effective_k,
        "always_active": list(config.always_active),
        "mobile_nodes": list(config.mobile_ids),
        "overlap": overlap,
        "position_error": {
            "mean_m": round(float(np.mean(all_errors)), 6),
            "max_m": round(float(np.max(all_errors)), 6),
            "per_node_mean_m": mobile_errors,
        },
        "solver_failures": int(sum(len(r.failed) for r in records)),
        "roles": roles,
    }


def reference_scenario(seed: int = 2024, n_epochs: int = 240, tof_sigma: float = 0.1,
                       tdoa_sigma: float = 0.1) -> SimConfig:
    """Six mobile robots plus the two frame anchors in a ~20 m^2 arena.

    Choreography: the 3/4 pair (left side) and the 7/8 pair (right side) swap
    between outer and inner spots on alternating legs (the idle pair makes a
    token move and dwells), node 6 stays inner except for one outer excursion
    per lap, and node 5 rides the active hull on the right: it shuttles
    between node 8's outer spot and a mid-radius point, so whether it or the
    outer right node makes the better active choice stays inside the
    estimation noise band for much of the run.
    """
    waypoints = {
        3: [(0.2, 3.4, 0.0), (0.25, 3.35, 0.0), (1.25, 1.45, 0.0), (1.3, 1.4, 0.0)],
        4: [(1.45, 1.25, 0.0), (1.4, 1.3, 0.0), (-0.2, 3.0, 0.0), (-0.15, 2.95, 0.0)],
        5: [(3.6, 3.0, 0.0), (2.94, 2.23, 0.0)],
        6: [(1.1, 2.1, 0.0), (1.55, 2.35, 0.0), (-0.3, 3.6, 0.0), (1.3, 1.9, 0.0)],
        7: [(3.2, 3.4, 0.0), (2.15, 1.45, 0.0), (2.2, 1.4, 0.0), (3.15, 3.35, 0.0)],
        8: [(1.95, 1.25, 0.0), (3.6, 3.0, 0.0), (3.55, 2.95, 0.0), (2.0, 1.3, 0.0)],
    }
    return SimConfig(
        n=8,
        anchors={1: (0.0, 0.0, 0.0), 2: (3.4, 0.0, 0.0)},
        waypoints=waypoints,
        robot_speed=0.35,
        tick_rate=20.0,
        alloc_rate=5.0,
        k=4,
        tof_sigma=tof_sigma,
        tdoa_sigma=tdoa_sigma,
        seed=seed,
        n_epochs=n_epochs,
        always_active=(1, 2),
        mode_2d=True,
    )
