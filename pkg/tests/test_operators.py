import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cavqed.operators import (
    InvalidDensityMatrixError,
    NonHermitianError,
    Operator,
    annihilation,
    basis,
    check_density_matrix,
    eigendecompose,
    identity,
    ket_to_dm,
    sigma_x,
    sigma_z,
    tensor,
)


def test_tensor_identity():
    assert np.array_equal(tensor(identity(2), identity(3)).data, np.eye(6))
    assert tensor(identity(2), identity(3)).dims == (2, 3)


def test_tensor_flip():
    xx = tensor(sigma_x(), sigma_x())
    assert np.array_equal(xx.data @ basis(4, 0), basis(4, 3))


def test_tensor_dimension():
    rng = np.random.default_rng(0)
    a, b = Operator(rng.normal(size=(2, 2))), Operator(rng.normal(size=(3, 3)))
    assert tensor(a, b).dim == 6


def test_tensor_associative_exact():
    rng = np.random.default_rng(1)
    a, b, c = (Operator(rng.integers(-5, 5, size=(n, n))) for n in (2, 3, 2))
    assert np.array_equal(tensor(tensor(a, b), c).data, tensor(a, tensor(b, c)).data)


def test_operator_rejects_nonfinite_and_bad_dims():
    with pytest.raises(ValueError):
        Operator([[np.nan, 0], [0, 1]])
    with pytest.raises(ValueError):
        Operator(np.eye(4), (3,))


def test_annihilation():
    a = annihilation(4)
    assert np.allclose(a.data @ basis(4, 1), basis(4, 0))
    assert np.allclose(a.data @ basis(4, 0), 0)
    n = a.dag() @ a
    for m in range(4):
        assert np.allclose(n.data @ basis(4, m), m * basis(4, m))
    comm = (a @ a.dag() - a.dag() @ a).data
    assert np.allclose(comm[:3, :3], np.eye(3))
    with pytest.raises(ValueError):
        annihilation(1)


def test_eigendecompose_sigma_z():
    w, _ = eigendecompose(sigma_z())
    assert np.allclose(w, [-1, 1])


def test_eigendecompose_jc_blocks():
    g = 100.0
    w, _ = eigendecompose(np.array([[0, g], [g, 0]]))
    assert np.allclose(w, [-g, g])
    # |1,gg>, |0,eg>, |0,ge>
    h = np.array([[0, g, g], [g, 0, 0], [g, 0, 0]])
    w, _ = eigendecompose(h)
    assert np.allclose(w, [-np.sqrt(2) * g, 0, np.sqrt(2) * g])
    assert abs(w[0] + 141.42) < 0.01


def test_eigendecompose_rejects_nonhermitian():
    with pytest.raises(NonHermitianError) as e:
        eigendecompose(np.array([[0, 1], [0, 0]]))
    assert e.value.asymmetry > 0


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 64), st.integers(0, 2**31))
def test_eigendecompose_reconstruction(n, seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    h = m + m.conj().T
    w, v = eigendecompose(h)
    assert np.all(np.diff(w) >= 0)
    assert np.max(np.abs(v @ np.diag(w) @ v.conj().T - h)) <= 1e-10 * np.max(np.abs(h))
    assert np.max(np.abs(v.conj().T @ v - np.eye(n))) <= 1e-10


def test_density_matrix_checks():
    check_density_matrix(ket_to_dm([1, 1]) / 2)
    check_density_matrix(np.diag([0.3, 0.2]), weight=0.5)
    with pytest.raises(InvalidDensityMatrixError):
        check_density_matrix(np.diag([1.2, -0.2]))
    with pytest.raises(InvalidDensityMatrixError):
        check_density_matrix(np.diag([0.5, 0.4]))
    with pytest.raises(InvalidDensityMatrixError):
        check_density_matrix(np.array([[0.5, 0.1], [0.3, 0.5]]))
