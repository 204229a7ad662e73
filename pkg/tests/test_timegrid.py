import numpy as np
import pytest

from paraopt.timegrid import (
    exponential_grid,
    make_grid,
    piecewise_uniform_grid,
    time_weights,
    uniform_grid,
)


def test_uniform_examples():
    assert np.allclose(uniform_grid(10, 11).vertices, np.arange(11.0))
    assert np.allclose(uniform_grid(1, 2).vertices, [0, 1])
    assert np.allclose(uniform_grid(10, 3).vertices, [0, 5, 10])


def test_uniform_rejects_bad_args():
    with pytest.raises(ValueError):
        uniform_grid(-1, 5)
    with pytest.raises(ValueError):
        uniform_grid(1, 1)


def test_exponential_known_vertices():
    t = exponential_grid(10, 10, 1).vertices
    assert t[1] == pytest.approx(0.117777, abs=1e-4)
    assert t[2] == pytest.approx(0.251301, abs=1e-4)
    assert t[3] == pytest.approx(0.405442, abs=1e-4)
    assert t[8] == pytest.approx(2.19686, abs=1e-4)
    assert t[9] == 10.0  # exactly, the total mass is consumed


def test_exponential_single_interval():
    for c in (0.5, 1.0, 3.0):
        assert np.allclose(exponential_grid(7.0, 2, c).vertices, [0, 7.0])


def test_exponential_rejects_nonpositive_c():
    with pytest.raises(ValueError):
        exponential_grid(10, 10, 0.0)
    with pytest.raises(ValueError):
        exponential_grid(10, 10, -1.0)


@pytest.mark.parametrize("T,N,c", [(10, 10, 1), (5, 7, 2), (20, 13, 0.3)])
def test_exponential_equal_mass(T, N, c):
    t = exponential_grid(T, N, c).vertices
    I = (1 - np.exp(-c * T)) / c
    masses = (np.exp(-c * t[:-1]) - np.exp(-c * t[1:])) / c
    assert np.all(np.abs(masses - I / (N - 1)) <= 1e-10 * I)
    # intervals grow strictly with i
    assert np.all(np.diff(np.diff(t)) > 0)


def test_exponential_limits_to_uniform():
    t = exponential_grid(10, 9, 1e-6).vertices
    u = uniform_grid(10, 9).vertices
    assert np.max(np.abs(t - u)) <= 1e-4 * 10


def test_piecewise_examples():
    assert np.allclose(
        piecewise_uniform_grid(10, 2, 11).vertices,
        [0, 0.4, 0.8, 1.2, 1.6, 2, 3.6, 5.2, 6.8, 8.4, 10],
    )
    assert np.allclose(piecewise_uniform_grid(10, 5, 3).vertices, [0, 5, 10])
    assert np.allclose(piecewise_uniform_grid(4, 1, 5).vertices, [0, 0.5, 1, 2.5, 4])


def test_piecewise_tau_is_vertex_and_split_rule():
    for N in (4, 5, 6, 9):
        g = piecewise_uniform_grid(10, 2, N)
        assert np.any(np.isclose(g.vertices, 2.0))
        n1 = int(np.sum(g.vertices < 2.0 - 1e-12))
        assert n1 == -(-(N - 1) // 2)  # ceil goes to the initial part


def test_piecewise_rejects_bad_tau():
    for tau in (0.0, 10.0, -1.0, 11.0):
        with pytest.raises(ValueError):
            piecewise_uniform_grid(10, tau, 5)


def test_time_weights():
    w = time_weights(uniform_grid(10, 11))
    assert np.allclose(w, [0.5] + [1.0] * 9 + [0.5])
    assert np.allclose(time_weights(uniform_grid(7, 2)), [3.5, 3.5])
    assert time_weights(piecewise_uniform_grid(10, 2, 11)).sum() == pytest.approx(10.0)
    assert time_weights(exponential_grid(10, 10, 1)).sum() == pytest.approx(10.0)


def test_make_grid_dispatch():
    assert make_grid("uniform", 10, 5).scheme == "uniform"
    assert make_grid("exponential", 10, 5, c=2.0).scheme == "exponential"
    assert make_grid("pw_uniform", 10, 5, tau=1.0).scheme == "pw_uniform"
    with pytest.raises(ValueError):
        make_grid("chebyshev", 10, 5)
