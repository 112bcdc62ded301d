"""Range-based position estimators.

Both estimators minimize a sum of squared residuals with a damped Gauss-Newton
iteration (Levenberg-style damping kicks in whenever a step would increase the
residual). Planar mode fixes z = 0 and solves for two unknowns, which is the
right conditioning for ground robots with coplanar references.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import TdoaSample, TofRange, as_position, centroid, point_in_convex_hull_2d

MAX_ITERATIONS = 100
STEP_TOL = 1e-9
GRAD_TOL = 1e-12
DEGENERATE_COND = 1e8


class EstimationError(Exception):
    """Base class for estimator failures."""


class InsufficientObservationsError(EstimationError):
    pass


class DegenerateGeometryError(EstimationError):
    pass


class ConvergenceError(EstimationError):
    """Solver ran out of iterations; carries the best iterate found."""

    def __init__(self, message, best_estimate, residual_norm):
        super().__init__(message)
        self.best_estimate = best_estimate
        self.residual_norm = residual_norm


@dataclass(frozen=True)
class TofProblem:
    """Residuals r_j(p) = ||p - ref_j|| - d_j and their Jacobian."""

    refs: np.ndarray      # (m, 3)
    dists: np.ndarray     # (m,)

    def residuals(self, p: np.ndarray) -> np.ndarray:
        return np.linalg.norm(p - self.refs, axis=1) - self.dists

    def jacobian(self, p: np.ndarray) -> np.ndarray:
        diff = p - self.refs
        norms = np.maximum(np.linalg.norm(diff, axis=1), 1e-12)
        return diff / norms[:, None]


@dataclass(frozen=True)
class TdoaProblem:
    """Residuals r_s(p) = delta_s - (||p - p_j|| - ||p - p_i||)."""

    p_i: np.ndarray       # (m, 3)
    p_j: np.ndarray       # (m, 3)
    deltas: np.ndarray    # (m,)

    def residuals(self, p: np.ndarray) -> np.ndarray:
        dj = np.linalg.norm(p - self.p_j, axis=1)
        di = np.linalg.norm(p - self.p_i, axis=1)
        return self.deltas - (dj - di)

    def jacobian(self, p: np.ndarray) -> np.ndarray:
        dj = p - self.p_j
        di = p - self.p_i
        nj = np.maximum(np.linalg.norm(dj, axis=1), 1e-12)
        ni = np.maximum(np.linalg.norm(di, axis=1), 1e-12)
        return -(dj / nj[:, None] - di / ni[:, None])


def _check_reference_geometry(refs: np.ndarray):
    """Reject reference sets whose planar spread is numerically collinear."""
    xy = refs[:, :2]
    cov = np.cov(xy.T)
    eig = np.linalg.eigvalsh(cov)
    if eig[-1] <= 0 or eig[0] <= 0 or eig[-1] / eig[0] > DEGENERATE_COND:
        raise DegenerateGeometryError(
            "reference positions are collinear or too close to it "
            f"(planar covariance condition {eig[-1] / max(eig[0], 1e-300):.3e})"
        )


def _gauss_newton(problem, x0: np.ndarray, planar: bool) -> np.ndarray:
    """Damped Gauss-Newton on the free coordinates (xy when planar, xyz otherwise)."""
    ndim = 2 if planar else 3
    x = as_position(x0).copy()
    if planar:
        x[2] = 0.0

    r = problem.residuals(x)
    cost = float(r @ r)
    for _ in range(MAX_ITERATIONS):
        J = problem.jacobian(x)[:, :ndim]
        grad = 2.0 * (J.T @ r)
        if np.linalg.norm(grad) < GRAD_TOL:
            return x
        JtJ = J.T @ J
        Jtr = J.T @ r

        lam = 0.0
        step = None
        for _ in range(25):
            try:
                delta = np.linalg.solve(JtJ + lam * np.eye(ndim), -Jtr)
            except np.linalg.LinAlgError:
                lam = max(lam * 10.0, 1e-10)
                continue
            trial = x.copy()
            trial[:ndim] += delta
            r_trial = problem.residuals(trial)
            cost_trial = float(r_trial @ r_trial)
            if cost_trial <= cost:
                step = delta
                x = trial
                r = r_trial
                cost = cost_trial
                break
            lam = max(lam * 10.0, 1e-6)
        if step is None:
            # Damping exhausted without descent: converged to machine noise.
            return x
        if np.linalg.norm(step) < STEP_TOL:
            return x

    raise ConvergenceError(
        f"no convergence after {MAX_ITERATIONS} iterations (|r| = {np.sqrt(cost):.3e})",
        best_estimate=x,
        residual_norm=float(np.sqrt(cost)),
    )


def multilaterate(ranges, refs, initial_guess=None, planar: bool = True) -> np.ndarray:
    """Position from >= 3 ToF ranges to known reference nodes.

    Each range must connect one node present in ``refs`` with one common
    unknown node. ``initial_guess`` defaults to the reference centroid.
    """
    if len(ranges) < 3:
        raise InsufficientObservationsError(
            f"multilateration needs at least 3 ranges, got {len(ranges)}"
        )
    ref_pos = []
    dists = []
    target = None
    for rng in ranges:
        if not isinstance(rng, TofRange):
            rng = TofRange(*rng)
        in_i = rng.i in refs
        in_j = rng.j in refs
        if in_i == in_j:
            raise ValueError(
                f"range ({rng.i},{rng.j}) must connect exactly one reference node"
            )
        ref_id, other = (rng.i, rng.j) if in_i else (rng.j, rng.i)
        if target is None:
            target = other
        elif other != target:
            raise ValueError(f"ranges mix unknown nodes {target} and {other}")
        ref_pos.append(as_position(refs[ref_id]))
        dists.append(rng.distance)

    ref_arr = np.array(ref_pos)
    _check_reference_geometry(ref_arr)
    problem = TofProblem(refs=ref_arr, dists=np.array(dists))
    guess = centroid(ref_pos) if initial_guess is None else as_position(initial_guess)
    return _gauss_newton(problem, guess, planar)


def tdoa_estimate(samples, active_positions, initial_guess=None, planar: bool = True) -> np.ndarray:
    """Listener position from difference-of-distance samples to active pairs.

    The hyperbolic objective grows mirror minima for listeners near the hull
    boundary or for thin active geometries, so the solver runs a small fixed
    set of starts (supplied guess, active centroid, centroid offset along the
    minor spread axis) and keeps the lowest-residual fix; ties keep the
    earlier start, so the result stays deterministic.
    """
    if not samples:
        raise InsufficientObservationsError("no TDoA samples supplied")
    referenced = set()
    p_i, p_j, deltas = [], [], []
    for s in samples:
        if not isinstance(s, TdoaSample):
            s = TdoaSample(*s)
        if s.i not in active_positions or s.j not in active_positions:
            raise ValueError(f"sample references unknown active node ({s.i},{s.j})")
        referenced.update((s.i, s.j))
        p_i.append(as_position(active_positions[s.i]))
        p_j.append(as_position(active_positions[s.j]))
        deltas.append(s.delta)
    if len(referenced) < 3:
        raise InsufficientObservationsError(
            f"TDoA fix needs samples over >= 3 distinct active nodes, got {len(referenced)}"
        )
    active_arr = np.array([as_position(active_positions[a]) for a in sorted(referenced)])
    _check_reference_geometry(active_arr)
    problem = TdoaProblem(p_i=np.array(p_i), p_j=np.array(p_j), deltas=np.array(deltas))

    center = centroid(active_arr)
    eigval, eigvec = np.linalg.eigh(np.cov(active_arr[:, :2].T))
    minor = np.array([eigvec[0, 0], eigvec[1, 0], 0.0])
    span = float(np.sqrt(max(eigval[-1], 1e-12)))
    starts = [] if initial_guess is None else [as_position(initial_guess)]
    starts += [center, center + span * minor, center - span * minor]

    candidates = []
    first_error = None
    for start in starts:
        try:
            x = _gauss_newton(problem, start, planar)
        except ConvergenceError as exc:
            if first_error is None:
                first_error = exc
            continue
        r = problem.residuals(x)
        candidates.append((x, float(r @ r)))
    if not candidates:
        raise first_error

    # Seed one more solve from the mirror of the best fix across the actives'
    # principal line: near-collinear active sets admit a second exact solution
    # there, and the plain starts may all fall into the same branch.
    best_x = min(candidates, key=lambda c: c[1])[0]
    offset = best_x - center
    mirrored = best_x - 2.0 * minor * float(minor @ offset)
    try:
        x = _gauss_newton(problem, mirrored, planar)
        r = problem.residuals(x)
        candidates.append((x, float(r @ r)))
    except ConvergenceError:
        pass

    # Near-exact cost ties mean the geometry is genuinely ambiguous; prefer
    # the fix inside the active hull, then the earliest start.
    best_cost = min(cost for _, cost in candidates)
    ties = [x for x, cost in candidates if cost <= best_cost + 1e-9 * (1.0 + best_cost)]
    for x in ties:
        if point_in_convex_hull_2d(x, active_arr):
            return x
    return ties[0]


@dataclass(frozen=True)
class NetworkProblem:
    """Joint range adjustment: all free node coordinates stacked in one vector."""

    free_ids: tuple           # sorted unknown node ids
    pairs: np.ndarray         # (m, 2) indices into the stacked node table
    dists: np.ndarray         # (m,)
    fixed: np.ndarray         # (n_nodes, 3) with fixed coords; free rows overwritten
    free_rows: np.ndarray     # row index per free node
    ndim: int

    def _table(self, x: np.ndarray) -> np.ndarray:
        table = self.fixed.copy()
        table[self.free_rows, : self.ndim] = x.reshape(-1, self.ndim)
        return table

    def residuals(self, x: np.ndarray) -> np.ndarray:
        t = self._table(x)
        d = np.linalg.norm(t[self.pairs[:, 0]] - t[self.pairs[:, 1]], axis=1)
        return d - self.dists

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        t = self._table(x)
        J = np.zeros((len(self.pairs), len(x)))
        row_of = {int(r): k for k, r in enumerate(self.free_rows)}
        for m, (a, b) in enumerate(self.pairs):
            diff = t[a] - t[b]
            norm = max(np.linalg.norm(diff), 1e-12)
            g = diff[: self.ndim] / norm
            if a in row_of:
                J[m, row_of[a] * self.ndim : row_of[a] * self.ndim + self.ndim] = g
            if b in row_of:
                J[m, row_of[b] * self.ndim : row_of[b] * self.ndim + self.ndim] = -g
        return J


def adjust_network(ranges, fixed, guesses, planar: bool = True) -> dict:
    """Jointly localize every node in ``guesses`` from pairwise ToF ranges.

    ``fixed`` maps anchor ids to known positions; ``guesses`` maps unknown ids
    to starting positions. This is the network form of multilateration used at
    bootstrap (all nodes) and per epoch (the active set): ranges between two
    unknowns constrain both at once.
    """
    free_ids = tuple(sorted(guesses))
    if not free_ids:
        return {}
    all_ids = sorted(set(fixed) | set(guesses))
    index = {nid: k for k, nid in enumerate(all_ids)}
    table = np.zeros((len(all_ids), 3))
    for nid in all_ids:
        table[index[nid]] = as_position(fixed[nid] if nid in fixed else guesses[nid])

    pairs, dists = [], []
    for rng in ranges:
        if not isinstance(rng, TofRange):
            rng = TofRange(*rng)
        if rng.i in fixed and rng.j in fixed:
            continue  # constrains nothing
        pairs.append((index[rng.i], index[rng.j]))
        dists.append(rng.distance)

    ndim = 2 if planar else 3
    dof = ndim * len(free_ids)
    if len(pairs) < dof:
        raise InsufficientObservationsError(
            f"network adjustment needs >= {dof} ranges for {len(free_ids)} free nodes, got {len(pairs)}"
        )

    problem = NetworkProblem(
        free_ids=free_ids,
        pairs=np.array(pairs, dtype=int),
        dists=np.array(dists),
        fixed=table,
        free_rows=np.array([index[nid] for nid in free_ids], dtype=int),
        ndim=ndim,
    )
    x0 = np.concatenate([as_position(guesses[nid])[:ndim] for nid in free_ids])

    # Same damped loop as the single-point solvers, over the stacked vector.
    x = x0.copy()
    r = problem.residuals(x)
    cost = float(r @ r)
    for _ in range(MAX_ITERATIONS):
        J = problem.jacobian(x)
        grad = 2.0 * (J.T @ r)
        if np.linalg.norm(grad) < GRAD_TOL:
            break
        JtJ = J.T @ J
        Jtr = J.T @ r
        lam = 0.0
        step = None
        for _ in range(25):
            try:
                delta = np.linalg.solve(JtJ + lam * np.eye(len(x)), -Jtr)
            except np.linalg.LinAlgError:
                lam = max(lam * 10.0, 1e-10)
                continue
            trial = x + delta
            r_trial = problem.residuals(trial)
            cost_trial = float(r_trial @ r_trial)
            if cost_trial <= cost:
                step, x, r, cost = delta, trial, r_trial, cost_trial
                break
            lam = max(lam * 10.0, 1e-6)
        if step is None or np.linalg.norm(step) < STEP_TOL:
            break
    else:
        raise ConvergenceError(
            f"network adjustment did not converge (|r| = {np.sqrt(cost):.3e})",
            best_estimate=x,
            residual_norm=float(np.sqrt(cost)),
        )

    out = {}
    for k, nid in enumerate(free_ids):
        p = np.zeros(3)
        p[:ndim] = x[k * ndim : (k + 1) * ndim]
        out[nid] = p
    return out
