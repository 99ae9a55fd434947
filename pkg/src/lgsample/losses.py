"""Reference contrastive-loss kernels with verified analytic gradients.

These are float64 reference implementations for validating training code,
so precision beats speed everywhere. The batch loss is the mean over rows
(values stay comparable across batch sizes), and the softmax denominator
runs over the target side only; the symmetric two-direction form is a
separate operation.

The temperature has no canonical published value for this family of runs;
0.1 is the default and is always an explicit argument.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ValidationError

DEFAULT_TAU = 0.1


def _as_batch(x: np.ndarray, name: str, require_nonzero_rows: bool = True) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValidationError(f"{name} must be a non-empty 2-D batch, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValidationError(f"{name} contains non-finite values")
    if require_nonzero_rows:
        norms = np.sqrt(np.einsum("ij,ij->i", arr, arr))
        if (norms == 0.0).any():
            row = int(np.flatnonzero(norms == 0.0)[0])
            raise ValidationError(f"{name} row {row} is a zero vector")
    return arr


def _check_tau(tau: float) -> float:
    if not tau > 0:
        raise ValidationError(f"tau must be positive, got {tau}")
    return float(tau)


def _check_same_shape(a: np.ndarray, b: np.ndarray, names: str) -> None:
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {names}: {a.shape} vs {b.shape}")


def _unit_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    return x / norms[:, None], norms


def _backprop_unit_rows(
    grad_unit: np.ndarray, unit: np.ndarray, norms: np.ndarray
) -> np.ndarray:
    # d(x/||x||)/dx pulls the gradient onto the tangent of the unit sphere.
    radial = np.einsum("ij,ij->i", grad_unit, unit)
    return (grad_unit - radial[:, None] * unit) / norms[:, None]


def infonce(zs: np.ndarray, zt: np.ndarray, tau: float = DEFAULT_TAU) -> float:
    """Softmax cross-entropy pulling each source row toward its paired
    target against the other targets in the batch.

    mean over i of  -log( exp(cos(zs_i, zt_i)/tau)
                          / sum_k exp(cos(zs_i, zt_k)/tau) )

    Computed with the log-sum-exp max shift, so extreme temperatures stay
    finite.
    """
    zs = _as_batch(zs, "zs")
    zt = _as_batch(zt, "zt")
    _check_same_shape(zs, zt, "zs vs zt")
    tau = _check_tau(tau)
    us, _ = _unit_rows(zs)
    ut, _ = _unit_rows(zt)
    logits = (us @ ut.T) / tau
    shift = logits.max(axis=1)
    lse = shift + np.log(np.exp(logits - shift[:, None]).sum(axis=1))
    return float(np.mean(lse - np.diag(logits)))


def grad_infonce(
    zs: np.ndarray, zt: np.ndarray, tau: float = DEFAULT_TAU
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradients of :func:`infonce` w.r.t. both batches."""
    zs = _as_batch(zs, "zs")
    zt = _as_batch(zt, "zt")
    _check_same_shape(zs, zt, "zs vs zt")
    tau = _check_tau(tau)
    n = zs.shape[0]
    us, ns = _unit_rows(zs)
    ut, nt = _unit_rows(zt)
    logits = (us @ ut.T) / tau
    shift = logits.max(axis=1, keepdims=True)
    expd = np.exp(logits - shift)
    probs = expd / expd.sum(axis=1, keepdims=True)
    dl_dsim = (probs - np.eye(n)) / (n * tau)
    grad_us = dl_dsim @ ut
    grad_ut = dl_dsim.T @ us
    return (
        _backprop_unit_rows(grad_us, us, ns),
        _backprop_unit_rows(grad_ut, ut, nt),
    )


def clip_symmetric(
    z_img: np.ndarray, z_txt: np.ndarray, tau: float = DEFAULT_TAU
) -> float:
    """Two-direction symmetric form: the mean of the two directed losses."""
    return 0.5 * (infonce(z_img, z_txt, tau) + infonce(z_txt, z_img, tau))


def grad_clip_symmetric(
    z_img: np.ndarray, z_txt: np.ndarray, tau: float = DEFAULT_TAU
) -> tuple[np.ndarray, np.ndarray]:
    g_img_a, g_txt_a = grad_infonce(z_img, z_txt, tau)
    g_txt_b, g_img_b = grad_infonce(z_txt, z_img, tau)
    return 0.5 * (g_img_a + g_img_b), 0.5 * (g_txt_a + g_txt_b)


def simsiam_loss(
    p1: np.ndarray, p2: np.ndarray, z1: np.ndarray, z2: np.ndarray
) -> float:
    """Negative-cosine loss with stop-gradient targets.

    0.5 * D(p1, stopgrad(z2)) + 0.5 * D(p2, stopgrad(z1)), where
    D(p, z) = -mean_i cos(p_i, z_i). The stop-gradient is a gradient-side
    contract (see :func:`grad_simsiam`); the value is plain cosine.
    """
    p1 = _as_batch(p1, "p1")
    p2 = _as_batch(p2, "p2")
    z1 = _as_batch(z1, "z1")
    z2 = _as_batch(z2, "z2")
    _check_same_shape(p1, p2, "p1 vs p2")
    _check_same_shape(p1, z1, "p1 vs z1")
    _check_same_shape(p1, z2, "p1 vs z2")
    return 0.5 * _negative_cosine(p1, z2) + 0.5 * _negative_cosine(p2, z1)


def _negative_cosine(p: np.ndarray, z: np.ndarray) -> float:
    up, _ = _unit_rows(p)
    uz, _ = _unit_rows(z)
    return float(-np.mean(np.einsum("ij,ij->i", up, uz)))


def grad_simsiam(
    p1: np.ndarray, p2: np.ndarray, z1: np.ndarray, z2: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradients w.r.t. the prediction branches only.

    The z branches sit behind stop-gradient by definition, so their
    gradient is identically zero and is not returned.
    """
    p1 = _as_batch(p1, "p1")
    p2 = _as_batch(p2, "p2")
    z1 = _as_batch(z1, "z1")
    z2 = _as_batch(z2, "z2")
    _check_same_shape(p1, p2, "p1 vs p2")
    _check_same_shape(p1, z1, "p1 vs z1")
    _check_same_shape(p1, z2, "p1 vs z2")
    return (
        0.5 * _grad_negative_cosine(p1, z2),
        0.5 * _grad_negative_cosine(p2, z1),
    )


def _grad_negative_cosine(p: np.ndarray, z: np.ndarray) -> np.ndarray:
    n = p.shape[0]
    up, norms = _unit_rows(p)
    uz, _ = _unit_rows(z)
    return _backprop_unit_rows(-uz / n, up, norms)


def fd_check(
    fun: Callable[[Sequence[np.ndarray]], float],
    grad_fun: Callable[[Sequence[np.ndarray]], Sequence[np.ndarray]],
    inputs: Sequence[np.ndarray],
    epsilon: float = 1e-6,
    check: Sequence[int] | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``check`` restricts which inputs are differentiated (all by default);
    the relative error is normalized by max(|analytic|, |numeric|, 1e-12)
    per coordinate.
    """
    if not (0.0 < epsilon <= 1e-3):
        raise ValidationError(f"epsilon must be in (0, 1e-3], got {epsilon}")
    arrays = [np.asarray(a, dtype=np.float64) for a in inputs]
    analytic = [np.asarray(g, dtype=np.float64) for g in grad_fun(arrays)]
    targets = list(range(len(analytic))) if check is None else list(check)
    if len(analytic) != len(targets):
        raise ValidationError(
            f"grad_fun returned {len(analytic)} gradients for {len(targets)} "
            "checked inputs"
        )
    worst = 0.0
    for gi, ai in enumerate(targets):
        grad = analytic[gi]
        for j in range(arrays[ai].size):
            bumped = [a.copy() for a in arrays]
            bumped[ai].reshape(-1)[j] += epsilon
            hi = fun(bumped)
            bumped = [a.copy() for a in arrays]
            bumped[ai].reshape(-1)[j] -= epsilon
            lo = fun(bumped)
            numeric = (hi - lo) / (2.0 * epsilon)
            a_val = grad.reshape(-1)[j]
            err = abs(a_val - numeric) / max(abs(a_val), abs(numeric), 1e-12)
            worst = max(worst, err)
    return worst
