import numpy as np
import pytest

from conftest import toy_system
from roacert.lyapunov import LyapCandidate, SampleSet, basis, cut_matrix, eval_dV, eval_V
from roacert.relu_net import ReluNetwork
from roacert.dynamics import UncertainSystem
from roacert.error_model import ErrorBound
from roacert.geometry import Box


def rand_system(rng):
    net = ReluNetwork.from_layers([(rng.normal(size=(4, 2)), rng.normal(size=4) * 0.1),
                                   (rng.normal(size=(2, 4)) * 0.2, np.zeros(2))])
    return UncertainSystem(0.3 * np.eye(2), net, ErrorBound(((0.0, 0.01),)), Box.cube(1, 2).as_polytope(),
                           Box.cube(0.1, 2), check=False)


def test_basis_examples(contraction):
    np.testing.assert_allclose(basis(contraction, 0, [1.0, 2.0]), [1, 2])
    np.testing.assert_allclose(basis(contraction, 2, [1.0, 2.0]), [1, 2, 0.5, 1, 0.25, 0.5])
    with pytest.raises(ValueError):
        basis(contraction, -1, [1.0, 2.0])


def test_V_and_dV_identity_candidate(contraction):
    cand = LyapCandidate(0, np.eye(2))
    assert eval_V(cand, contraction, [1.0, 1.0]) == pytest.approx(2.0)
    assert eval_dV(cand, contraction, [1.0, 1.0], [0.0, 0.0]) == pytest.approx(-1.5)
    with pytest.raises(ValueError):
        eval_V(LyapCandidate(1, np.eye(2)), contraction, [1.0, 1.0])


def test_candidate_rules():
    with pytest.raises(ValueError):
        LyapCandidate(0, [[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        LyapCandidate(-1, np.eye(2))


@pytest.mark.parametrize("k", [0, 1, 2])
def test_cut_identity_random(rng, k):
    sys = rand_system(rng)
    d = 2 * (k + 1)
    for _ in range(20):
        x, w = rng.uniform(-1, 1, 2), rng.uniform(-0.01, 0.01, 2)
        cut = cut_matrix(sys, k, x, w)
        R = rng.normal(size=(d, d))
        cand = LyapCandidate(k, R + R.T)
        assert cut.value(cand.P) == pytest.approx(float(eval_dV(cand, sys, x, w)), rel=1e-9, abs=1e-9)
        np.testing.assert_allclose(cut.C, cut.C.T)


def test_sample_set():
    sys = toy_system(0.5)
    s = SampleSet()
    s.add(cut_matrix(sys, 0, [0.5, 0.5], [0.0, 0.0]))
    assert len(s) == 1 and s.contains_pair(np.array([0.5, 0.5]), np.zeros(2))
    assert not s.contains_pair(np.array([0.5, 0.4]), np.zeros(2))
