import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from predft import numkit as nk
from predft.numkit import Tensor

from oracles import conv3d_loops, gauss_solve, matmul_loops


def T(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


# -- matmul ------------------------------------------------------------------------------

def test_matmul_identity_and_zeros(rng):
    a = rng.normal(size=(2, 3))
    assert np.array_equal(nk.matmul(T(a), T(np.eye(3))).data, a)
    assert np.array_equal(nk.matmul(T(np.zeros((4, 2))), T(rng.normal(size=(2, 5)))).data, np.zeros((4, 5)))


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))
    np.testing.assert_allclose(nk.matmul(T(a), T(b)).data, matmul_loops(a, b), rtol=0, atol=1e-12)


def test_matmul_batched_shared_rhs(rng):
    a, b = rng.normal(size=(3, 5, 4)), rng.normal(size=(4, 2))
    out = nk.matmul(T(a), T(b)).data
    for i in range(3):
        np.testing.assert_allclose(out[i], matmul_loops(a[i], b), atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError):
        nk.matmul(T(np.ones((2, 3))), T(np.ones((2, 3))))


# -- conv3d ------------------------------------------------------------------------------

def test_conv3d_identity_kernel(rng):
    x = rng.normal(size=(3, 4, 2, 1))
    out = nk.conv3d(T(x), T(np.ones((1, 1, 1, 1, 1))), 1).data
    np.testing.assert_array_equal(out, x)


def test_conv3d_constant_input():
    out = nk.conv3d(T(np.full((4, 4, 4, 1), 2.5)), T(np.ones((2, 2, 2, 1, 1))), 1).data
    np.testing.assert_allclose(out, 8 * 2.5)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv3d_matches_sliding_window(rng, stride):
    x = rng.normal(size=(4, 4, 4, 2))
    k = rng.normal(size=(3, 3, 3, 2, 3))
    np.testing.assert_allclose(nk.conv3d(T(x), T(k), stride).data, conv3d_loops(x, k, stride), atol=1e-12)


def test_conv3d_kernel_too_large():
    with pytest.raises(ValueError):
        nk.conv3d(T(np.ones((2, 2, 2, 1))), T(np.ones((3, 1, 1, 1, 1))))


# -- group_norm --------------------------------------------------------------------------

def test_group_norm_constant_is_zero():
    assert np.array_equal(nk.group_norm(T(np.full((5, 4), 3.0)), 2).data, np.zeros((5, 4)))


def test_group_norm_moments(rng):
    x = rng.normal(3, 5, size=(7, 8))
    y = nk.group_norm(T(x), 2, eps=1e-12).data
    for g in range(2):
        part = y[:, g * 4:(g + 1) * 4]
        assert abs(part.mean()) < 1e-10
        assert abs(part.var() - 1) < 1e-6


def test_group_norm_hand_oracle(rng):
    x = rng.normal(size=(6, 8))
    y = nk.group_norm(T(x), 2, eps=1e-5).data
    for g in range(2):
        part = x[:, g * 4:(g + 1) * 4]
        expect = (part - part.mean()) / np.sqrt(part.var() + 1e-5)
        np.testing.assert_allclose(y[:, g * 4:(g + 1) * 4], expect, atol=1e-12)


def test_group_norm_bad_groups():
    with pytest.raises(ValueError):
        nk.group_norm(T(np.ones((2, 6))), 4)


# -- masked_softmax ----------------------------------------------------------------------

def test_softmax_one_unmasked_is_one_hot(rng):
    mask = np.eye(4, dtype=bool)
    p = nk.masked_softmax(T(rng.normal(size=(4, 4))), mask).data
    np.testing.assert_array_equal(p, np.eye(4))


def test_softmax_uniform():
    np.testing.assert_allclose(nk.masked_softmax(T(np.zeros((1, 4)))).data, 0.25, atol=1e-15)


def test_softmax_formula():
    p = nk.masked_softmax(T([[1.0, 2.0, 3.0]])).data[0]
    e = np.exp([1.0, 2.0, 3.0])
    np.testing.assert_allclose(p, e / e.sum(), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-30, 30)),
       arrays(np.bool_, (3, 5)))
def test_softmax_rows_sum_to_one_and_masked_zero(logits, mask):
    mask[:, 0] = True
    p = nk.masked_softmax(T(logits), mask).data
    assert np.all(p[~mask] == 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)


def test_softmax_fully_masked_row_rejected():
    with pytest.raises(ValueError):
        nk.masked_softmax(T(np.zeros((2, 3))), np.array([[True, False, False], [False, False, False]]))


# -- cross_entropy -----------------------------------------------------------------------

def test_cross_entropy_confident_is_zero():
    logits = np.full((3, 5), -1e3)
    logits[np.arange(3), [1, 2, 3]] = 1e3
    assert nk.cross_entropy(T(logits), [1, 2, 3]).item() < 1e-12


def test_cross_entropy_uniform():
    assert abs(nk.cross_entropy(T(np.zeros((4, 50))), [0, 1, 2, 3]).item() - np.log(50)) < 1e-9


def test_cross_entropy_oracle_with_ignore(rng):
    x = rng.normal(size=(6, 7))
    t = np.array([1, 0, 3, 6, 0, 2])
    logp = x - np.log(np.exp(x).sum(axis=1, keepdims=True))
    keep = t != 0
    expect = -logp[np.arange(6), t][keep].mean()
    assert abs(nk.cross_entropy(T(x), t, ignore_id=0).item() - expect) < 1e-12


def test_cross_entropy_out_of_vocab():
    with pytest.raises(ValueError):
        nk.cross_entropy(T(np.zeros((2, 3))), [0, 3])


# -- backward / grad_check ---------------------------------------------------------------

def test_backward_independent_leaf_zero(rng):
    a, b = T(rng.normal(size=(2, 2)), True), T(rng.normal(size=(2, 2)), True)
    out = nk.tsum(a * 2.0) + nk.tsum(b * 0.0)
    nk.backward(out)
    np.testing.assert_array_equal(b.grad, np.zeros((2, 2)))


def test_backward_sum_of_product(rng):
    a, b = T(rng.normal(size=(3, 4)), True), T(rng.normal(size=(4, 2)), True)
    nk.backward(nk.tsum(nk.matmul(a, b)))
    np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b.data.T, atol=1e-12)


def test_backward_requires_scalar(rng):
    with pytest.raises(ValueError):
        nk.backward(T(rng.normal(size=3), True) * 2.0)


def test_grad_check_linear_exact(rng):
    x = T(rng.normal(size=(3, 3)))
    assert nk.grad_check(lambda t: nk.tsum(t * 2.0), x, rel_tol=1e-6).passed


def test_grad_check_softmax_ce_composite(rng):
    x = T(rng.normal(size=(4, 6)))
    mask = rng.random((4, 6)) > 0.3
    mask[:, 0] = True

    def f(t):
        p = nk.masked_softmax(t, mask)
        return nk.cross_entropy(nk.log(p + 1e-3), [0, 1, 2, 3])

    assert nk.grad_check(f, x, rel_tol=1e-4).passed


def test_grad_check_catches_scaled_gradient(rng):
    x = T(rng.normal(size=5))
    f = lambda t: nk.tsum(t * t)  # noqa: E731
    report = nk.grad_check(f, x, rel_tol=1e-4, analytic=lambda t: 2 * t.data * 1.01)
    assert not report.passed
    assert "FAIL" in str(report)


# -- non-finite guard --------------------------------------------------------------------

def test_nonfinite_is_an_error():
    with pytest.raises(nk.NonFiniteError):
        nk.log(T([0.0]))


# -- solve_spd ---------------------------------------------------------------------------

def test_solve_identity(rng):
    b = rng.normal(size=(3, 2))
    np.testing.assert_allclose(nk.solve_spd(np.eye(3), b), b)


def test_solve_diagonal():
    np.testing.assert_allclose(nk.solve_spd(np.diag([2.0, 4.0]), np.array([2.0, 8.0])), [1.0, 2.0])


def test_solve_matches_elimination(rng):
    g = rng.normal(size=(8, 6))
    a = g.T @ g + np.eye(6)
    b = rng.normal(size=(6, 3))
    x = nk.solve_spd(a, b)
    np.testing.assert_allclose(x, gauss_solve(a, b), atol=1e-8)
    assert np.abs(a @ x - b).max() < 1e-8 * np.abs(b).max()


def test_solve_not_spd_reports_pivot():
    with pytest.raises(nk.NotSPDError) as info:
        nk.solve_spd(np.array([[1.0, 0.0], [0.0, -1.0]]), np.ones(2))
    assert info.value.pivot == 1


# -- pca ---------------------------------------------------------------------------------

def test_pca_exact_subspace(rng):
    basis = rng.normal(size=(2, 5))
    x = rng.normal(size=(30, 2)) @ basis + 3.0
    proj, red, _ = nk.pca_reduce(x, 2)
    recon = red @ proj.T + x.mean(axis=0)
    assert np.abs(recon - x).max() < 1e-10
    np.testing.assert_allclose(proj.T @ proj, np.eye(2), atol=1e-12)


def test_pca_diagonal_line():
    t = np.linspace(-1, 1, 11)
    proj, _, _ = nk.pca_reduce(np.column_stack([t, t]), 1)
    np.testing.assert_allclose(proj[:, 0], np.ones(2) / np.sqrt(2), atol=1e-12)


def test_pca_variances_match_eigensolver(rng):
    x = rng.normal(size=(40, 6)) @ rng.normal(size=(6, 6))
    _, _, var = nk.pca_reduce(x, 4)
    eig = np.sort(np.linalg.eigvalsh(np.cov(x, rowvar=False)))[::-1][:4]
    np.testing.assert_allclose(var, eig, atol=1e-8)
    assert np.all(np.diff(var) <= 0)


def test_pca_errors():
    with pytest.raises(ValueError):
        nk.pca_reduce(np.ones((5, 3)), 1)
    with pytest.raises(ValueError):
        nk.pca_reduce(np.eye(3), 4)


# -- pearson -----------------------------------------------------------------------------

def test_pearson_matches_corrcoef(rng):
    a, b = rng.normal(size=(20, 3)), rng.normal(size=(20, 3))
    r = nk.pearson_columns(a, b)
    for j in range(3):
        assert abs(r[j] - np.corrcoef(a[:, j], b[:, j])[0, 1]) < 1e-12


def test_pearson_constant_column_is_zero(rng):
    a = rng.normal(size=(10, 2))
    a[:, 1] = 4.0
    assert nk.pearson_columns(a, rng.normal(size=(10, 2)))[1] == 0.0


# -- tensor container --------------------------------------------------------------------

def test_container_round_trip(tmp_path, rng):
    tensors = {"a/b": rng.normal(size=(2, 3)), "c": np.arange(4.0)}
    nk.save_tensors(tmp_path / "t", tensors)
    back = nk.load_tensors(tmp_path / "t")
    for k, v in tensors.items():
        assert np.array_equal(back[k], v)


def test_container_detects_truncation(tmp_path, rng):
    nk.save_tensors(tmp_path / "t", {"x": rng.normal(size=10)})
    f = next(p for p in (tmp_path / "t").iterdir() if p.suffix != ".json")
    f.write_bytes(f.read_bytes()[:-8])
    with pytest.raises(nk.ContainerError):
        nk.load_tensors(tmp_path / "t")
