import numpy as np
import pytest

from uwbroles.estimators import (
    ConvergenceError,
    DegenerateGeometryError,
    InsufficientObservationsError,
    TdoaProblem,
    TofProblem,
    adjust_network,
    multilaterate,
    tdoa_estimate,
)
from uwbroles.geometry import TdoaSample, TofRange, distance
from uwbroles.simulation import NoiseStreams, measure_tdoa

REFS = {1: (0.0, 0.0, 0.0), 2: (3.4, 0.0, 0.0), 3: (0.0, 3.0, 0.0)}
SQUARE_ACTIVES = {1: (0.0, 0.0, 0.0), 2: (2.0, 0.0, 0.0), 3: (0.0, 2.0, 0.0), 4: (2.0, 2.0, 0.0)}


def tof_ranges_to(target, refs, unknown_id=9):
    return [TofRange(i=rid, j=unknown_id, distance=distance(target, p)) for rid, p in refs.items()]


def tdoa_samples_for(listener, actives):
    ids = sorted(actives)
    samples = []
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            i, j = ids[a], ids[b]
            samples.append(TdoaSample(
                listener=9, i=i, j=j,
                delta=distance(listener, actives[j]) - distance(listener, actives[i]),
            ))
    return samples


def test_multilaterate_recovers_interior_point():
    truth = (1.0, 1.0, 0.0)
    est = multilaterate(tof_ranges_to(truth, REFS), REFS)
    assert distance(est, truth) < 1e-6


def test_multilaterate_target_on_reference():
    truth = (0.0, 0.0, 0.0)
    est = multilaterate(tof_ranges_to(truth, REFS), REFS, initial_guess=(0.5, 0.5, 0))
    assert distance(est, truth) < 1e-6


def test_multilaterate_needs_three_ranges():
    truth = (1.0, 1.0, 0.0)
    ranges = tof_ranges_to(truth, REFS)[:2]
    with pytest.raises(InsufficientObservationsError):
        multilaterate(ranges, REFS)


def test_multilaterate_rejects_collinear_references():
    refs = {1: (0.0, 0.0, 0.0), 2: (1.0, 0.0, 0.0), 3: (2.0, 0.0, 0.0)}
    truth = (1.0, 1.0, 0.0)
    with pytest.raises(DegenerateGeometryError):
        multilaterate(tof_ranges_to(truth, refs), refs)


def test_multilaterate_rejects_mixed_unknowns():
    ranges = [
        TofRange(i=1, j=9, distance=1.0),
        TofRange(i=2, j=8, distance=1.0),
        TofRange(i=3, j=9, distance=1.0),
    ]
    with pytest.raises(ValueError):
        multilaterate(ranges, REFS)


def test_multilaterate_deterministic_bit_identical():
    truth = (1.3, 0.9, 0.0)
    ranges = tof_ranges_to(truth, REFS)
    a = multilaterate(ranges, REFS, initial_guess=(1.5, 1.5, 0))
    b = multilaterate(ranges, REFS, initial_guess=(1.5, 1.5, 0))
    assert a.tobytes() == b.tobytes()


def test_tdoa_symmetric_center():
    est = tdoa_estimate(tdoa_samples_for((1.0, 1.0, 0.0), SQUARE_ACTIVES), SQUARE_ACTIVES)
    assert distance(est, (1.0, 1.0, 0.0)) < 1e-6


def test_tdoa_recovers_off_center_listener():
    truth = (0.5, 1.2, 0.0)
    est = tdoa_estimate(tdoa_samples_for(truth, SQUARE_ACTIVES), SQUARE_ACTIVES)
    assert distance(est, truth) < 1e-6


def test_tdoa_needs_three_distinct_actives():
    truth = (1.0, 1.0, 0.0)
    samples = [s for s in tdoa_samples_for(truth, SQUARE_ACTIVES) if {s.i, s.j} <= {1, 2}]
    with pytest.raises(InsufficientObservationsError):
        tdoa_estimate(samples, SQUARE_ACTIVES)


def test_tdoa_outside_hull_degrades_under_noise():
    # Monte-Carlo: noisy fixes for a listener outside the active hull err more
    # than for one inside.
    inside, outside = (1.0, 1.0, 0.0), (4.0, 4.0, 0.0)
    errs = {"in": [], "out": []}
    for seed in range(100):
        streams = NoiseStreams(seed=seed)
        for tag, listener in (("in", inside), ("out", outside)):
            truth = dict(SQUARE_ACTIVES)
            truth[9] = listener
            samples = measure_tdoa(truth, [9], sorted(SQUARE_ACTIVES), 0.05, streams, epoch=0)
            try:
                est = tdoa_estimate(samples, SQUARE_ACTIVES, initial_guess=listener)
            except ConvergenceError as exc:
                est = exc.best_estimate
            errs[tag].append(distance(est, listener))
    assert np.mean(errs["out"]) > np.mean(errs["in"])


def test_noiseless_roundtrip_random_configs():
    gen = np.random.Generator(np.random.PCG64(11))
    for _ in range(50):
        m = int(gen.integers(3, 7))
        refs = _spread_refs(gen, m)
        w = gen.uniform(0.05, 1.0, size=m)
        w /= w.sum()
        truth = tuple((w[:, None] * np.array([refs[r][:2] for r in sorted(refs)])).sum(axis=0)) + (0.0,)
        est = multilaterate(tof_ranges_to(truth, refs), refs)
        assert distance(est, truth) < 1e-6
        est2 = tdoa_estimate(tdoa_samples_for(truth, refs), refs)
        assert distance(est2, truth) < 1e-6


def _spread_refs(gen, m):
    while True:
        pts = gen.uniform(0.0, 6.0, size=(m, 2))
        cov = np.cov(pts.T)
        eig = np.linalg.eigvalsh(cov)
        if eig[0] > 1e-2:
            return {i + 1: (float(x), float(y), 0.0) for i, (x, y) in enumerate(pts)}


def _central_diff_jacobian(problem, p, ndim, step=1e-6):
    cols = []
    for d in range(ndim):
        hi = p.copy()
        lo = p.copy()
        hi[d] += step
        lo[d] -= step
        cols.append((problem.residuals(hi) - problem.residuals(lo)) / (2 * step))
    return np.stack(cols, axis=1)


@pytest.mark.parametrize("kind", ["tof", "tdoa"])
def test_jacobians_match_central_differences(kind):
    gen = np.random.Generator(np.random.PCG64(13))
    for _ in range(100):
        refs = _spread_refs(gen, 4)
        arr = np.array([refs[r] for r in sorted(refs)])
        p = np.array([gen.uniform(0.5, 5.5), gen.uniform(0.5, 5.5), 0.0])
        if min(np.linalg.norm(p - a) for a in arr) < 0.3:
            continue  # keep clear of the non-differentiable points
        if kind == "tof":
            problem = TofProblem(refs=arr, dists=np.linalg.norm(p - arr, axis=1) + gen.uniform(0, 0.2, 4))
        else:
            pairs = [(a, b) for a in range(4) for b in range(a + 1, 4)]
            problem = TdoaProblem(
                p_i=arr[[a for a, _ in pairs]],
                p_j=arr[[b for _, b in pairs]],
                deltas=gen.uniform(-1, 1, len(pairs)),
            )
        J_ana = problem.jacobian(p)[:, :2]
        J_num = _central_diff_jacobian(problem, p, ndim=2)
        rel = np.linalg.norm(J_num - J_ana) / max(np.linalg.norm(J_ana), 1e-12)
        assert rel < 1e-4


def test_adjust_network_joint_recovery():
    anchors = {1: (0.0, 0.0, 0.0), 2: (3.4, 0.0, 0.0)}
    truth = {3: (1.0, 2.0, 0.0), 4: (2.5, 1.5, 0.0), 5: (0.5, 1.0, 0.0)}
    everyone = {**anchors, **truth}
    ids = sorted(everyone)
    ranges = [
        TofRange(i=a, j=b, distance=distance(everyone[a], everyone[b]))
        for idx, a in enumerate(ids)
        for b in ids[idx + 1:]
    ]
    guesses = {nid: (p[0] + 0.3, p[1] - 0.2, 0.0) for nid, p in truth.items()}
    est = adjust_network(ranges, anchors, guesses)
    for nid, p in truth.items():
        assert distance(est[nid], p) < 1e-6


def test_adjust_network_underdetermined():
    anchors = {1: (0.0, 0.0, 0.0), 2: (3.4, 0.0, 0.0)}
    ranges = [TofRange(i=1, j=3, distance=2.0)]
    with pytest.raises(InsufficientObservationsError):
        adjust_network(ranges, anchors, {3: (1.0, 1.0, 0.0)})
