import math

import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from crowdflux.advect import ParticleSet, advect_frame, make_grid
from crowdflux.codebook import Dictionary, least_squares_code
from crowdflux.evaluation import auc, eer, localization_score, roc_curve
from crowdflux.flow_io import FlowField, read_flo, sample_flow_many, write_flo
from crowdflux.force import InteractionParams, energy_array, force_array, frame_force_vectors, ttc_array

finite = st.floats(-1e4, 1e4, allow_nan=False, width=32)
coord = st.floats(-50, 50, allow_nan=False)


@st.composite
def flows(draw, max_side=12):
    h = draw(st.integers(1, max_side))
    w = draw(st.integers(1, max_side))
    u = draw(arrays(np.float32, (h, w), elements=finite))
    v = draw(arrays(np.float32, (h, w), elements=finite))
    return FlowField(u, v)


@given(flows())
def test_flo_roundtrip_bit_exact(f):
    g = read_flo(write_flo(f), strict=True)
    assert g.u.tobytes() == f.u.tobytes() and g.v.tobytes() == f.v.tobytes()


@given(flows(), st.lists(st.tuples(st.floats(-3, 15), st.floats(-3, 15)), min_size=1, max_size=10))
def test_bilinear_within_neighbour_range(f, pts):
    xs, ys = np.array(pts).T
    u, _ = sample_flow_many(f, xs, ys)
    assert np.all(u >= f.u.min() - 1e-3) and np.all(u <= f.u.max() + 1e-3)


@given(st.tuples(coord, coord), st.tuples(st.floats(-5, 5), st.floats(-5, 5)), st.floats(0.5, 10))
def test_ttc_symmetric_and_touching(w, v, radius):
    w, v = np.array(w), np.array(v)
    tau = float(ttc_array(w, v, radius, 1e-6))
    assert tau == float(ttc_array(-w, -v, radius, 1e-6))
    if math.isfinite(tau) and np.dot(w, w) > radius ** 2:
        assert abs(np.linalg.norm(w + v * tau) - radius) < 1e-6 * max(1.0, np.linalg.norm(w))
        # still apart just before the contact time
        assert np.linalg.norm(w + v * tau * (1 - 1e-6)) >= radius - 1e-6


@given(st.floats(0.1, 400.0), st.floats(0.1, 400.0))
def test_energy_monotone(a, b):
    p = InteractionParams(k=1.5, tau0=90.0, tau_max=270.0)
    ea, eb = energy_array(np.array([a, b]), p)
    assert ea >= 0 and eb >= 0
    if a < b <= 270.0:
        assert ea > eb


@given(st.integers(2, 10), st.integers(0, 2 ** 31 - 1), st.booleans(), st.sampled_from([None, 0.3]))
@settings(max_examples=40)
def test_newton_third_law(n, seed, stationary, cap):
    rng = np.random.default_rng(seed)
    ps = ParticleSet(rng.uniform(0, 40, (n, 2)), rng.normal(0, 2, (n, 2)) * (rng.random((n, 1)) < 0.8))
    f = frame_force_vectors(ps, InteractionParams(radius=3.0, stationary_interacts=stationary, max_force=cap))
    assert np.allclose(f.sum(axis=0), 0.0, atol=1e-9)
    assert np.all(np.isfinite(f))


@given(st.integers(0, 2 ** 31 - 1), st.floats(0.05, 5.0))
def test_cap_bounds_pair_force(seed, cap):
    rng = np.random.default_rng(seed)
    w = rng.uniform(-20, 20, (30, 2))
    v = rng.normal(0, 3, (30, 2))
    f = force_array(w, v, InteractionParams(radius=4.0, max_force=cap))
    assert np.all(np.hypot(f[:, 0], f[:, 1]) <= cap * (1 + 1e-12))


@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 6))
@settings(max_examples=30)
def test_particle_lies_in_its_cell(seed, s):
    rng = np.random.default_rng(seed)
    f = FlowField(rng.normal(size=(17, 23)) * (rng.random((17, 23)) < 0.5), rng.normal(size=(17, 23)))
    grid = make_grid(23, 17, 3)
    ps = advect_frame(f, grid, s)
    for c in range(grid.n):
        x0, x1, y0, y1 = grid.bounds(c)
        x, y = ps.positions[c]
        assert x0 <= x <= x1 - 1 and y0 <= y <= y1 - 1


@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 8))
def test_residual_orthogonal_and_bounded(seed, d):
    rng = np.random.default_rng(seed)
    D = Dictionary(rng.normal(size=(20, d)))
    x = rng.normal(size=20) * rng.uniform(0.01, 100)
    code = least_squares_code(x, D)
    r = x - D.atoms @ code.beta
    assert np.all(np.abs(D.atoms.T @ r) <= 1e-8 * max(1.0, np.linalg.norm(x)))
    assert code.error <= np.linalg.norm(x) + 1e-12


@given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=60))
def test_roc_invariants(pairs):
    scores = [s for s, _ in pairs]
    labels = [y for _, y in pairs]
    if all(labels) or not any(labels):
        return
    roc = roc_curve(scores, labels)
    assert roc.fpr[0] == roc.tpr[0] == 0 and roc.fpr[-1] == roc.tpr[-1] == 1
    assert np.all(np.diff(roc.fpr) >= 0) and np.all(np.diff(roc.tpr) >= 0)
    assert 0 <= auc(roc) <= 1
    rate, _ = eer(roc)
    assert 0 <= rate <= 1
    # a strictly increasing transform of the scores leaves the curve unchanged
    again = roc_curve([math.exp(s) for s in scores], labels)
    assert again.points == roc.points


@given(st.integers(0, 2 ** 31 - 1), st.floats(0.05, 0.95))
def test_localization_monotone_in_coverage(seed, cov):
    rng = np.random.default_rng(seed)
    grid = make_grid(12, 12, 3)
    truth = rng.random((12, 12)) < 0.3
    errs = {c: float(rng.random()) for c in range(grid.n)}
    lo = localization_score(errs, truth, grid, cov / 2)
    hi = localization_score(errs, truth, grid, cov)
    assert lo >= hi
