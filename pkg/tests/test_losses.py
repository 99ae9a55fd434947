"""Loss kernels: values against independent oracles, gradient checks,
row-scaling and permutation invariances."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lgsample.errors import ValidationError
from lgsample.losses import (
    clip_symmetric,
    fd_check,
    grad_clip_symmetric,
    grad_infonce,
    grad_simsiam,
    infonce,
    simsiam_loss,
)

from _oracles import central_difference, naive_infonce, naive_simsiam

# Frozen from log(1 + exp(-1)); the N=2 identity-rows case at tau=1.
LOG1P_EXP_NEG1 = 0.3132616875182228


def batches(seed, n=8, f=16, count=2):
    rng = np.random.default_rng(seed)
    return [rng.standard_normal((n, f)) for _ in range(count)]


# --- infonce -----------------------------------------------------------------


def test_single_row_is_exactly_zero():
    zs, zt = batches(0, n=1, f=5)
    assert infonce(zs, zt, tau=0.7) == 0.0


def test_identity_rows_n2():
    e = np.eye(2)
    assert infonce(e, e, tau=1.0) == pytest.approx(LOG1P_EXP_NEG1, abs=1e-12)


def test_matches_naive_double_loop():
    zs, zt = batches(1)
    for tau in (0.1, 0.5, 2.0):
        assert infonce(zs, zt, tau) == pytest.approx(
            naive_infonce(zs, zt, tau), abs=1e-12
        )


def test_loss_nonnegative():
    for seed in range(5):
        zs, zt = batches(seed, n=6, f=4)
        assert infonce(zs, zt, 0.2) >= 0.0


def test_row_scaling_invariance():
    zs, zt = batches(2)
    base = infonce(zs, zt, 0.3)
    zs2 = zs.copy()
    zs2[3] *= 2.0
    zt2 = zt.copy()
    zt2[5] *= 0.01
    assert abs(infonce(zs2, zt, 0.3) - base) < 1e-10
    assert abs(infonce(zs, zt2, 0.3) - base) < 1e-10


def test_batch_permutation_equivariance():
    zs, zt = batches(3)
    perm = np.random.default_rng(0).permutation(zs.shape[0])
    assert abs(infonce(zs[perm], zt[perm], 0.4) - infonce(zs, zt, 0.4)) < 1e-12
    assert (
        abs(clip_symmetric(zs[perm], zt[perm], 0.4) - clip_symmetric(zs, zt, 0.4))
        < 1e-12
    )


def test_low_temperature_stays_finite():
    rng = np.random.default_rng(4)
    z = rng.standard_normal((16, 8))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    assert np.isfinite(infonce(z, z, tau=0.01))


def test_validation():
    zs, zt = batches(5)
    with pytest.raises(ValidationError, match="shape mismatch"):
        infonce(zs, zt[:4], 0.1)
    with pytest.raises(ValidationError, match="tau"):
        infonce(zs, zt, 0.0)
    bad = zs.copy()
    bad[2] = 0.0
    with pytest.raises(ValidationError, match="zero vector"):
        infonce(bad, zt, 0.1)


# --- clip symmetric ----------------------------------------------------------


def test_clip_equals_infonce_when_aligned():
    (z,) = batches(6, count=1)
    assert clip_symmetric(z, z, 0.2) == pytest.approx(infonce(z, z, 0.2), abs=1e-12)


def test_clip_single_row_zero():
    zs, zt = batches(7, n=1)
    assert clip_symmetric(zs, zt, 0.5) == 0.0


def test_clip_is_compositional_average():
    zs, zt = batches(8)
    want = 0.5 * (infonce(zs, zt, 0.3) + infonce(zt, zs, 0.3))
    assert clip_symmetric(zs, zt, 0.3) == want


def test_clip_argument_symmetry_exact():
    zs, zt = batches(9)
    assert clip_symmetric(zs, zt, 0.7) == clip_symmetric(zt, zs, 0.7)


# --- simsiam -----------------------------------------------------------------


def test_simsiam_perfect_alignment():
    rng = np.random.default_rng(10)
    z = rng.standard_normal((6, 5))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    assert simsiam_loss(z, z, z, z) == pytest.approx(-1.0, abs=1e-12)


def test_simsiam_orthogonal_is_zero():
    p = np.zeros((4, 6))
    z = np.zeros((4, 6))
    p[:, 0] = 1.0
    z[:, 1] = 1.0
    assert simsiam_loss(p, p, z, z) == pytest.approx(0.0, abs=1e-15)


def test_simsiam_matches_per_row_oracle():
    p1, p2, z1, z2 = batches(11, n=5, f=7, count=4)
    assert simsiam_loss(p1, p2, z1, z2) == pytest.approx(
        naive_simsiam(p1, p2, z1, z2), abs=1e-12
    )


def test_simsiam_range():
    for seed in range(5):
        p1, p2, z1, z2 = batches(seed + 20, n=4, f=3, count=4)
        assert -1.0 <= simsiam_loss(p1, p2, z1, z2) <= 1.0


# --- gradients ---------------------------------------------------------------


def test_grad_infonce_n1_is_zero():
    zs = np.array([[0.3, -0.7, 0.2]])
    gs, gt = grad_infonce(zs, zs.copy(), tau=0.5)
    assert np.abs(gs).max() == 0.0
    assert np.abs(gt).max() == 0.0


def test_grad_infonce_finite_differences():
    zs, zt = batches(12, n=4, f=8)
    err = fd_check(
        lambda a: infonce(a[0], a[1], 0.5),
        lambda a: grad_infonce(a[0], a[1], 0.5),
        [zs, zt],
        epsilon=1e-6,
    )
    assert err < 1e-5


def test_grad_infonce_against_standalone_central_difference():
    zs, zt = batches(13, n=3, f=5)
    gs, gt = grad_infonce(zs, zt, 0.3)
    num_gs, num_gt = central_difference(
        lambda a: infonce(a[0], a[1], 0.3), [zs, zt]
    )
    np.testing.assert_allclose(gs, num_gs, atol=1e-8)
    np.testing.assert_allclose(gt, num_gt, atol=1e-8)


def test_grad_infonce_orthogonal_to_rows():
    # cosine is scale-free, so the gradient has no radial component
    zs, zt = batches(14, n=6, f=10)
    gs, gt = grad_infonce(zs, zt, 0.2)
    assert np.abs(np.einsum("ij,ij->i", gs, zs)).max() < 1e-10
    assert np.abs(np.einsum("ij,ij->i", gt, zt)).max() < 1e-10


def test_grad_clip_symmetric_finite_differences():
    zs, zt = batches(15, n=4, f=6)
    err = fd_check(
        lambda a: clip_symmetric(a[0], a[1], 0.4),
        lambda a: grad_clip_symmetric(a[0], a[1], 0.4),
        [zs, zt],
    )
    assert err < 1e-5


def test_grad_simsiam_tangency_when_aligned():
    rng = np.random.default_rng(16)
    z = rng.standard_normal((5, 8))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    g1, g2 = grad_simsiam(z, z, z, z)
    assert np.abs(np.einsum("ij,ij->i", g1, z)).max() < 1e-10
    assert np.abs(np.einsum("ij,ij->i", g2, z)).max() < 1e-10


def test_grad_simsiam_finite_differences_p_branches():
    p1, p2, z1, z2 = batches(17, n=4, f=8, count=4)
    err = fd_check(
        lambda a: simsiam_loss(a[0], a[1], z1, z2),
        lambda a: grad_simsiam(a[0], a[1], z1, z2),
        [p1, p2],
    )
    assert err < 1e-5


def test_simsiam_stop_gradient_contract():
    # Moving z changes the loss value, yet the contract returns no z-gradient:
    # the z branches are stop-gradient by definition.
    p1, p2, z1, z2 = batches(18, n=3, f=4, count=4)
    base = simsiam_loss(p1, p2, z1, z2)
    z2_bumped = z2.copy()
    z2_bumped[0, 0] += 1e-3
    assert simsiam_loss(p1, p2, z1, z2_bumped) != base
    grads = grad_simsiam(p1, p2, z1, z2)
    assert len(grads) == 2  # p1 and p2 only


# --- fd_check self-test --------------------------------------------------------


def test_fd_check_quadratic():
    err = fd_check(
        lambda a: float((a[0] ** 2).sum()),
        lambda a: [2.0 * a[0]],
        [np.array([[1.0]])],
        epsilon=1e-6,
    )
    assert err < 1e-9


def test_fd_check_epsilon_validation():
    with pytest.raises(ValidationError, match="epsilon"):
        fd_check(lambda a: 0.0, lambda a: [np.zeros(1)], [np.zeros(1)], epsilon=0.5)


@given(
    n=st.integers(1, 6),
    f=st.integers(1, 8),
    tau=st.floats(0.05, 5.0),
    seed=st.integers(0, 2**31),
)
@settings(max_examples=40, deadline=None)
def test_infonce_nonnegative_property(n, f, tau, seed):
    rng = np.random.default_rng(seed)
    zs = rng.standard_normal((n, f))
    zt = rng.standard_normal((n, f))
    loss = infonce(zs, zt, tau)
    assert loss >= 0.0
    assert np.isfinite(loss)
