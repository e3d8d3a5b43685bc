import json

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rebel.chain_models import ChainPath, FiniteMarkov, ModelSpec, simulate
from rebel.el_core import (MomentModel, Status, block_moments, el_ratio,
                           finite_difference_jacobian, indicator_model, mean_model,
                           moment_from_spec, polynomial_model, primal_objective,
                           self_normalized_stat, zero_in_hull_interior)
from rebel.errors import NotEnoughBlocks, SingularVariance, ValidationError
from rebel.regeneration import atomic_blocks, partition_from_times, value_atom

from oracles import primal_grid_ratio

# quarter-integer grid: degenerate configurations (ties, zeros, rank
# deficiency, zero on the hull boundary) stay frequent while hull margins
# never fall to rounding level
finite = st.integers(-40, 40).map(lambda v: v / 4)


def _blocks(l_min=2, l_max=12, r=1):
    return arrays(float, st.tuples(st.integers(l_min, l_max), st.just(r)), elements=finite)


# -- block moments -----------------------------------------------------------

def test_block_moment_direct_sum():
    path = ChainPath([1.0, 0.0, 2.0, 0.0])
    part = atomic_blocks(path, value_atom(0.0))
    Y = block_moments(path, part, mean_model(), [0.0])
    assert Y.tolist() == [[2.0]]


def test_single_element_blocks():
    x = np.array([0.3, -1.2, 4.0, 2.5, 0.1])
    path = ChainPath(x)
    part = partition_from_times(5, [1, 2, 3, 4, 5])
    Y = block_moments(path, part, mean_model(), [0.5])
    np.testing.assert_allclose(Y[:, 0], x[1:] - 0.5)


@given(st.integers(3, 60), st.data())
@settings(max_examples=60, deadline=None)
def test_block_moments_telescope(n, data):
    x = data.draw(arrays(float, n, elements=finite))
    times = sorted(data.draw(st.sets(st.integers(1, n), min_size=2, max_size=n)))
    path = ChainPath(x)
    part = partition_from_times(n, times)
    Y = block_moments(path, part, mean_model(), [0.7])
    assert Y.shape == (len(times) - 1, 1)
    expected = np.sum(x[times[0]:times[-1]] - 0.7)
    assert Y.sum() == pytest.approx(expected, abs=1e-9)


def test_block_moments_preconditions():
    path = ChainPath([1.0, 2.0, 3.0])
    with pytest.raises(NotEnoughBlocks):
        block_moments(path, partition_from_times(3, [2]), mean_model(), [0.0])
    with pytest.raises(ValidationError):
        block_moments(path, partition_from_times(4, [1, 2]), mean_model(), [0.0])


# -- moment models -------------------------------------------------------------

def test_analytic_jacobians_match_finite_differences():
    rng = np.random.default_rng(0)
    states = rng.normal(size=(50, 2)) * 5
    theta2 = np.array([0.3, -1.1])
    for model, theta in [(mean_model(2), theta2), (indicator_model(1.0), [0.4]),
                         (polynomial_model([1.0, -2.0, 0.5]), [0.2])]:
        fd = finite_difference_jacobian(model, states, theta)
        np.testing.assert_allclose(model.jacobian_values(states, theta), fd, atol=1e-5)


def test_custom_model_uses_finite_differences():
    model = MomentModel(lambda s, t: np.hstack([s[:, :1] - t, s[:, :1] ** 2 - t ** 2 - 1]),
                        p=1, r=2)
    J = model.jacobian_values(np.array([[1.0], [2.0]]), [3.0])
    np.testing.assert_allclose(J[:, :, 0], [[-1.0, -6.0], [-1.0, -6.0]], atol=1e-5)


def test_moment_model_requires_r_at_least_p():
    with pytest.raises(ValidationError):
        MomentModel(lambda s, t: s, p=2, r=1)


@pytest.mark.parametrize("spec, name", [
    ("mean", "mean"),
    ("indicator-ge:10", "indicator_ge(10)"),
    ({"kind": "indicator_ge", "threshold": 10}, "indicator_ge(10)"),
    ("polynomial:0,0,1", "polynomial(0.0,0.0,1.0)"),
])
def test_moment_presets(spec, name):
    assert moment_from_spec(spec).name == name


def test_moment_presets_reject_unknown():
    with pytest.raises(ValidationError):
        moment_from_spec("median")
    with pytest.raises(ValidationError):
        moment_from_spec({"kind": "polynomial", "coeffs": []})


# -- el_ratio examples -----------------------------------------------------------

def test_centered_pair():
    sol = el_ratio([1.0, -1.0])
    assert sol.status is Status.CONVERGED
    assert sol.lam[0] == pytest.approx(0.0, abs=1e-12)
    assert sol.ratio == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(sol.weights, [0.5, 0.5])


def test_closed_form_pair():
    sol = el_ratio([-1.0, 2.0])
    assert sol.lam[0] == pytest.approx(0.25, abs=1e-10)
    assert sol.ratio == pytest.approx(np.log(9 / 8), abs=1e-12)
    assert sol.ratio == pytest.approx(primal_grid_ratio([-1.0, 2.0]), abs=1e-10)
    assert sol.statistic == pytest.approx(0.2356, abs=1e-4)


def test_zero_outside_hull():
    sol = el_ratio([1.0, 2.0, 3.0])
    assert sol.status is Status.UNBOUNDED
    assert sol.ratio == np.inf and sol.weights is None


def test_all_zero_blocks():
    sol = el_ratio(np.zeros((4, 1)))
    assert sol.converged and sol.ratio == 0.0


def test_multivariate_zero_on_hull_boundary_is_unbounded():
    # zero is a vertex of the hull: not an interior point
    Y = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    assert not zero_in_hull_interior(Y)
    assert el_ratio(Y).status is Status.UNBOUNDED


def test_multivariate_outside_hull():
    Y = np.array([[1.0, 0.5], [2.0, -1.0], [1.5, 3.0]])
    assert el_ratio(Y).status is Status.UNBOUNDED


def test_el_ratio_errors():
    with pytest.raises(NotEnoughBlocks):
        el_ratio(np.zeros((0, 1)))
    with pytest.raises(NotEnoughBlocks):
        el_ratio(np.ones((2, 3)))
    with pytest.raises(ValidationError):
        el_ratio([1.0, np.nan])


def test_solution_json():
    d = json.loads(el_ratio([-1.0, 2.0]).to_json())
    assert d["status"] == "Converged" and d["lambda"][0] == pytest.approx(0.25)
    d = json.loads(el_ratio([1.0, 2.0]).to_json())
    assert d["status"] == "Unbounded" and d["ratio"] == "inf"


# -- el_ratio properties ------------------------------------------------------------

@given(_blocks(2, 3))
@settings(max_examples=150, deadline=None)
def test_dual_matches_primal_grid(Y):
    sol = el_ratio(Y)
    ref = primal_grid_ratio(Y[:, 0])
    if not np.isfinite(ref):
        assert sol.status is Status.UNBOUNDED
        return
    # near-boundary optima are beyond the grid resolution
    assume(ref < 8)
    assert sol.converged
    assert sol.ratio == pytest.approx(ref, abs=1e-4)


@given(_blocks(3, 15, r=2))
@settings(max_examples=150, deadline=None)
def test_converged_solution_invariants(Y):
    sol = el_ratio(Y)
    if not sol.converged:
        assert not zero_in_hull_interior(Y)
        return
    q = sol.weights
    assert np.all(q >= 0)
    assert q.sum() == pytest.approx(1.0, abs=1e-10)
    np.testing.assert_allclose(q, 1 / (len(q) * (1 + Y @ sol.lam)), rtol=1e-12)
    scale = max(1.0, np.abs(Y).max())
    np.testing.assert_allclose(q @ Y, 0.0, atol=1e-8 * scale)
    assert sol.ratio >= 0
    assert sol.ratio == pytest.approx(float(np.sum(np.log1p(Y @ sol.lam))), abs=1e-10)
    # weight recovery through the primal objective
    assert primal_objective(Y, q) == pytest.approx(-sol.ratio, abs=1e-8)


@given(_blocks(3, 12, r=2),
       arrays(float, (2, 2), elements=st.floats(-3, 3, allow_nan=False)))
@settings(max_examples=100, deadline=None)
def test_affine_invariance(Y, A):
    assume(abs(np.linalg.det(A)) > 0.1)
    a = el_ratio(Y)
    b = el_ratio(Y @ A.T)
    assert a.status == b.status
    if not a.converged or a.ratio > 20:
        return
    assert b.ratio == pytest.approx(a.ratio, abs=1e-8)
    np.testing.assert_allclose(b.weights, a.weights, atol=1e-8)
    # lambda maps through A^{-T}: lam_b' A y = lam_a' y (lambda itself is not
    # identified when Y is rank deficient, its action on the blocks is)
    np.testing.assert_allclose((Y @ A.T) @ b.lam, Y @ a.lam, atol=1e-7)


@given(_blocks(2, 20))
@settings(max_examples=100, deadline=None)
def test_ratio_zero_iff_centered(Y):
    # exact centring: pair each block with its negative
    centered = np.vstack([Y, -Y])
    sol = el_ratio(centered)
    assert sol.converged and sol.ratio == pytest.approx(0.0, abs=1e-10)
    if abs(Y.mean()) > 1e-3 * max(1.0, np.abs(Y).max()):
        sol = el_ratio(Y)
        assert sol.status is Status.UNBOUNDED or sol.ratio > 0


# -- self-normalised statistic -----------------------------------------------------

def test_self_normalized_examples():
    assert self_normalized_stat([-1.0, 2.0]) == pytest.approx(0.2)
    assert self_normalized_stat([-1.0, 1.0, -2.0, 2.0]) == 0.0
    with pytest.raises(SingularVariance):
        self_normalized_stat(np.zeros((3, 1)))


@given(_blocks(2, 20), st.floats(0.01, 100), st.booleans())
@settings(max_examples=100, deadline=None)
def test_self_normalized_scale_equivariance(Y, c, neg):
    assume(np.abs(Y).max() > 1e-3)
    c = -c if neg else c
    assert self_normalized_stat(c * Y) == pytest.approx(self_normalized_stat(Y), rel=1e-9)


def test_self_normalized_agrees_to_first_order():
    # at theta0 the two statistics differ by o(1); check on a long two-state chain
    kind = FiniteMarkov(((0.7, 0.3), (0.2, 0.8)))
    path = simulate(ModelSpec(kind, seed=4), 20_000)
    part = atomic_blocks(path, value_atom(0.0))
    Y = block_moments(path, part, mean_model(), [0.6])
    assert abs(el_ratio(Y).statistic - self_normalized_stat(Y)) < 0.05


@pytest.mark.parametrize("c", [1e-200, 1e-8, 1e8, 1e200])
def test_extreme_scales(c):
    Y = np.array([[-1.0, 0.5], [2.0, -1.0], [0.5, 1.5], [-0.5, -0.5]])
    a, b = el_ratio(Y), el_ratio(c * Y)
    assert b.converged and b.ratio == pytest.approx(a.ratio, abs=1e-10)
    np.testing.assert_allclose(c * b.lam, a.lam, rtol=1e-8)


def test_rank_deficient_moments():
    # the second condition is identically zero: the first alone decides
    Y = np.array([[-1.0, 0.0], [2.0, 0.0]])
    sol = el_ratio(Y)
    assert sol.converged and sol.ratio == pytest.approx(np.log(9 / 8), abs=1e-12)
    np.testing.assert_allclose(sol.lam, [0.25, 0.0], atol=1e-12)
    np.testing.assert_allclose(sol.weights @ Y, 0.0, atol=1e-12)
    tiny = Y + np.array([[0.0, 1e-300]] * 2)
    assert el_ratio(tiny).ratio == pytest.approx(np.log(9 / 8), abs=1e-12)
