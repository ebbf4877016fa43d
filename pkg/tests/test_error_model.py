import numpy as np
import pytest

from roacert.dynamics import NonlinearMap
from roacert.error_model import (
    ErrorBound,
    Provenance,
    admissible_delta,
    concave_bound,
    inflate,
    prune_pieces,
    residuals,
)
from roacert.geometry import Box, grid_eps_net
from roacert.relu_net import ReluNetwork


def test_admissible_delta_examples():
    assert admissible_delta([0.0, 1.0], [0.1, 0.3], 0.0) == pytest.approx(0.3)
    assert admissible_delta([0.0, 1.0], [0.1, 0.3], 0.2) == pytest.approx(0.1)
    assert admissible_delta([1.0], [0.0], 1.0) == 0.0
    with pytest.raises(ValueError):
        admissible_delta([], [], 0.0)


def test_concave_bound_dominates_and_is_tight(rng):
    xn = rng.uniform(0, 1, 500)
    wn = 0.02 + 0.05 * xn**2 + 0.01 * rng.uniform(size=500)
    b = concave_bound(xn, wn, gammas=(0.0, 0.05, 0.1))
    assert np.all(b.at_norm(xn) >= wn - 1e-15)
    for g, d in b.pieces:
        assert np.min(g * xn + d - wn) == pytest.approx(0.0, abs=1e-15)


def test_bound_evaluation_min_of_affine():
    b = ErrorBound(((0.0, 0.3), (0.2, 0.1)))
    assert b.at_norm(0.5) == pytest.approx(0.2)
    assert b([0.0, -2.0]) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        ErrorBound(((-1.0, 0.0),))
    with pytest.raises(ValueError):
        ErrorBound(())


def test_inflation_formula():
    b = inflate(ErrorBound(((0.0, 0.1), (0.5, 0.0))), eps=0.01, lipschitz_f=2.0, lipschitz_n=1.0)
    assert b.provenance is Provenance.INFLATED and b.is_deterministic
    assert b.pieces == ((0.0, pytest.approx(0.13)), (0.5, pytest.approx(0.035)))
    with pytest.raises(ValueError):
        inflate(b, -1.0, 1.0, 1.0)


def test_inflated_bound_holds_off_grid(rng):
    # residual of sin against the zero network with A = I on [-1, 1]^2
    fmap = NonlinearMap(2, lambda x: np.sin(x))
    A = np.eye(2)
    net = ReluNetwork.zeros([2, 2, 2])
    eps = 0.05
    grid = grid_eps_net(Box.cube(1, 2), eps)
    sampled = concave_bound(*residuals(fmap, A, net, grid), gammas=(0.0, 0.2))
    b = inflate(sampled, eps, lipschitz_f=1.0, lipschitz_n=1.0)  # Lipschitz of sin(x) - x is <= 1
    X = rng.uniform(-1, 1, size=(20_000, 2))
    xn, wn = residuals(fmap, A, net, X)
    assert np.all(wn <= b.at_norm(xn) + 1e-12)


def test_prune_pieces():
    assert prune_pieces([(0.0, 0.1), (0.1, 0.2)], 1.0) == ((0.0, 0.1),)
    assert prune_pieces([(0.0, 0.3), (0.5, 0.0)], 1.0) == ((0.0, 0.3), (0.5, 0.0))
    assert prune_pieces([(0.0, 0.1), (0.0, 0.1)], 1.0) == ((0.0, 0.1),)


def test_roundtrip(tmp_path):
    b = ErrorBound(((0.0, 0.1),), Provenance.INFLATED, eps=0.01, lipschitz_w=3.0)
    b.save(tmp_path / "e.json")
    assert ErrorBound.load(tmp_path / "e.json") == b
