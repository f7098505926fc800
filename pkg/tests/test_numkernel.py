import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from netcate import numkernel as nk
from netcate.balance import mse_loss
from netcate.gradcheck import check_function


def test_spmm_identity_and_zero():
    tape = nk.Tape()
    b = tape.param(np.arange(6.0).reshape(3, 2), "b")
    np.testing.assert_array_equal(nk.spmm(sp.identity(3), b).value, b.value)
    np.testing.assert_array_equal(nk.spmm(sp.csr_matrix((3, 3)), b).value, np.zeros((3, 2)))


def test_spmm_swap_rows():
    tape = nk.Tape()
    b = tape.constant([[1.0, 2.0], [3.0, 4.0]])
    out = nk.spmm(sp.csr_matrix([[0.0, 1.0], [1.0, 0.0]]), b)
    np.testing.assert_array_equal(out.value, [[3.0, 4.0], [1.0, 2.0]])


def test_spmm_dimension_mismatch():
    tape = nk.Tape()
    with pytest.raises(ValueError):
        nk.spmm(sp.identity(3), tape.constant(np.ones((2, 2))))


@pytest.mark.parametrize("n", [1, 7, 50])
def test_spmm_matches_dense(n, rng):
    a = sp.random(n, n, density=0.2, random_state=n, format="csr")
    b = rng.normal(size=(n, 3))
    out = nk.spmm(a, nk.Tape().constant(b)).value
    np.testing.assert_allclose(out, a.toarray() @ b, rtol=0, atol=1e-12)


def test_elu_values():
    tape = nk.Tape()
    out = nk.elu(tape.constant([[0.0, 2.0, -1.0]])).value
    assert out[0, 0] == 0.0
    assert out[0, 1] == 2.0
    assert out[0, 2] == pytest.approx(np.exp(-1) - 1, abs=1e-12)
    assert out[0, 2] == pytest.approx(-0.632121, abs=1e-6)


def test_affine():
    tape = nk.Tape()
    x = tape.constant(np.array([[1.0, 2.0], [3.0, -1.0]]))
    np.testing.assert_array_equal(nk.affine(x, np.eye(2), np.zeros((1, 2))).value, x.value)
    zero = tape.constant(np.zeros((3, 2)))
    b = np.array([[0.5, -2.0]])
    np.testing.assert_array_equal(nk.affine(zero, np.ones((2, 2)), b).value, np.repeat(b, 3, 0))
    one = tape.constant([[1.0, 2.0]])
    assert nk.affine(one, np.ones((2, 1)), np.array([[0.5]])).value[0, 0] == 3.5
    with pytest.raises(ValueError):
        nk.affine(one, np.ones((3, 1)), np.array([[0.5]]))


def test_backward_sum_gives_ones():
    tape = nk.Tape()
    x = tape.param(np.random.default_rng(0).normal(size=(3, 4)), "x")
    g = tape.backward(nk.sum_all(x))
    np.testing.assert_array_equal(g["x"], np.ones((3, 4)))


def test_backward_mse_self_is_zero():
    tape = nk.Tape()
    x = tape.param(np.array([[1.0], [2.0]]), "x")
    g = tape.backward(mse_loss(x, x))
    np.testing.assert_array_equal(g["x"], np.zeros((2, 1)))


def test_backward_rejects_foreign_or_vector_output():
    t1, t2 = nk.Tape(), nk.Tape()
    x = t1.param(np.ones((2, 2)), "x")
    with pytest.raises(nk.GradientError):
        t2.backward(nk.sum_all(x))
    with pytest.raises(nk.GradientError):
        t1.backward(x * 2.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_backward_nan_raises():
    tape = nk.Tape()
    x = tape.param(np.array([[-1.0]]), "x")
    with pytest.raises(nk.GradientError):
        tape.backward(nk.sum_all(nk.log(x)))


def test_duplicate_param_name():
    tape = nk.Tape()
    tape.param(np.ones(1), "w")
    with pytest.raises(ValueError):
        tape.param(np.ones(1), "w")


def test_random_three_layer_composition_gradcheck():
    rng = np.random.default_rng(5)
    adj = sp.random(6, 6, density=0.4, random_state=5, format="csr")
    adj = adj + adj.T
    params = {
        "W0": rng.normal(size=(4, 5)), "b0": rng.normal(size=(1, 5)),
        "W1": rng.normal(size=(5, 3)), "b1": rng.normal(size=(1, 3)),
        "W2": rng.normal(size=(3, 1)), "b2": rng.normal(size=(1, 1)),
    }
    x = rng.normal(size=(6, 4))
    target = rng.normal(size=(6, 1))

    def fn(p, tape):
        h = nk.elu(nk.spmm(adj, nk.affine(tape.constant(x), p["W0"], p["b0"])))
        h = nk.elu(nk.affine(h, p["W1"], p["b1"]))
        return mse_loss(nk.affine(h, p["W2"], p["b2"]), target)

    assert check_function(fn, params).max_rel_error <= 1e-3


PRIMITIVES = {
    "exp": lambda p, t: nk.sum_all(nk.exp(p["a"])),
    "square": lambda p, t: nk.sum_all(nk.square(p["a"])),
    "div": lambda p, t: nk.sum_all(p["a"] / (nk.exp(nk.take_rows(p["b"], [0, 1, 2])) + 1.0)),
    "mul_bcast": lambda p, t: nk.sum_all(p["a"] * nk.take_rows(p["b"], [0])),
    "logsumexp0": lambda p, t: nk.sum_all(nk.logsumexp(p["a"], axis=0)),
    "logsumexp1": lambda p, t: nk.sum_all(nk.logsumexp(p["a"], axis=1) * 2.0),
    "median": lambda p, t: nk.median(p["a"]) * 3.0,
    "matmul": lambda p, t: nk.sum_all(nk.elu(p["a"] @ p["b"].T)),
    "pick": lambda p, t: nk.sum_all(nk.square(nk.pick(p["a"], [0, 2, 1]))),
    "gather": lambda p, t: nk.sum_all(nk.gather(p["a"], [0, 1, 1], [2, 0, 2])),
    "stack": lambda p, t: nk.sum_all(nk.square(nk.vstack([p["a"], nk.hstack([p["b"]])]))),
    "sqdist": lambda p, t: nk.sum_all(nk.exp(-0.1 * nk.pairwise_sqdist(p["a"], p["b"]))),
    "dist": lambda p, t: nk.sum_all(nk.pairwise_dist(p["a"], p["b"])),
    "mean": lambda p, t: nk.mean_all(nk.elu(p["a"] - 0.5)),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_primitive_gradients(name, seed):
    rng = np.random.default_rng(seed)
    params = {"a": rng.normal(size=(3, 3)), "b": rng.normal(size=(4, 3))}
    res = check_function(PRIMITIVES[name], params)
    assert res.max_rel_error <= 1e-3, res


def test_purity():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
    v1 = nk.pairwise_dist(nk.Tape().constant(a), b).value
    v2 = nk.pairwise_dist(nk.Tape().constant(a), b).value
    assert np.array_equal(v1, v2)


def test_shape_errors():
    tape = nk.Tape()
    with pytest.raises(ValueError):
        tape.constant(np.ones((2, 3))) @ np.ones((2, 3))
    with pytest.raises(ValueError):
        tape.constant(np.ones((2, 3))) + np.ones((3, 2))
