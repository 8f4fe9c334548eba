"""Shared test helpers: the central finite-difference gradient oracle.

The oracle perturbs raw numpy buffers and re-runs the forward function, so it
stays independent of the autodiff tape it is used to check.
"""

import numpy as np
import pytest

from mhrkit import tensor as T


def finite_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar-valued f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = f(x)
        flat[i] = keep - h
        down = f(x)
        flat[i] = keep
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def assert_grads_close(analytic: np.ndarray, numeric: np.ndarray,
                       rel: float = 1e-4, abs_floor: float = 1e-6,
                       min_fraction: float = 1.0):
    """Check |analytic - numeric| <= max(rel*|analytic|, abs_floor) per element.

    min_fraction < 1 allows a small share of coordinates to fall back to the
    absolute floor only (spec'd for deep compositions where cancellation makes
    the relative test noisy).
    """
    analytic = np.asarray(analytic).reshape(-1)
    numeric = np.asarray(numeric).reshape(-1)
    assert analytic.shape == numeric.shape
    err = np.abs(analytic - numeric)
    tol = np.maximum(rel * np.abs(analytic), abs_floor)
    ok = err <= tol
    if min_fraction >= 1.0:
        assert ok.all(), f"gradient mismatch: worst err {err.max():.3e} vs tol {tol[err.argmax()]:.3e}"
    else:
        frac = ok.mean()
        assert frac >= min_fraction, f"only {frac:.1%} of coordinates within tolerance"
        assert (err <= np.maximum(tol, 1e-6)).all()


def check_gradients(make_loss, arrays: dict[str, np.ndarray],
                    rel: float = 1e-4, abs_floor: float = 1e-6,
                    min_fraction: float = 1.0):
    """Compare tape gradients of make_loss against the finite-difference oracle.

    make_loss receives a dict of leaf Tensors (requires_grad=True, same keys as
    ``arrays``) and must return a scalar loss Tensor built from them.
    """
    leaves = {k: T.Tensor(v.copy(), requires_grad=True) for k, v in arrays.items()}
    with T.Graph() as g:
        loss = make_loss(leaves)
        g.backward(loss)

    for key, base in arrays.items():
        def scalar_f(x, key=key):
            trial = {k: T.Tensor(v.copy()) for k, v in arrays.items()}
            trial[key] = T.Tensor(x)
            return make_loss(trial).item()

        numeric = finite_difference(scalar_f, base.copy())
        assert leaves[key].grad is not None, f"no gradient reached leaf '{key}'"
        assert_grads_close(leaves[key].grad, numeric, rel, abs_floor, min_fraction)


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
