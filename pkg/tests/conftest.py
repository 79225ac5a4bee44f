import numpy as np
import pytest

from dam.diffcore import Tape


class FixedNormals:
    """Stand-in generator returning pre-drawn standard-normal values.

    Makes stochastic pipelines repeatable call-to-call, which central finite
    differences require.
    """

    def __init__(self, rng):
        self._cache = {}
        self._rng = rng

    def standard_normal(self, shape):
        key = tuple(np.atleast_1d(shape))
        if key not in self._cache:
            self._cache[key] = self._rng.standard_normal(shape)
        return self._cache[key]


def fd_check(make_loss, params, step=1e-4, rtol=1e-3, atol=1e-6, max_coords=None, rng=None,
             skip_nonsmooth=False):
    """Compare analytic gradients of a scalar loss against central differences.

    `make_loss` must be a pure function of the (float64) `params`. For large
    tensors, `max_coords` random coordinates are probed instead of all.
    With `skip_nonsmooth`, a failing coordinate is re-estimated at step/4:
    if the two finite-difference values disagree with each other the loss is
    locally non-smooth there (a relu/maxpool kink inside the interval) and the
    coordinate is skipped; if they agree but contradict the analytic gradient
    the check still fails. Returns the worst relative error observed.
    """

    def rel(x, y):
        return abs(x - y) / max(abs(x), abs(y), atol)

    for p in params:
        assert p.dtype == np.float64, "finite differences need float64 parameters"
        p.zero_grad()
    with Tape() as tape:
        loss = make_loss()
        tape.backward(loss)
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for p in params:
        assert p.grad is not None, "parameter received no gradient"
        flat = p.data.ravel()
        gflat = p.grad.ravel()
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            fp = make_loss().item()
            flat[i] = orig - step
            fm = make_loss().item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * step)
            err = rel(gflat[i], numeric)
            if err > rtol and skip_nonsmooth:
                small = step / 4.0
                flat[i] = orig + small
                fp2 = make_loss().item()
                flat[i] = orig - small
                fm2 = make_loss().item()
                flat[i] = orig
                numeric2 = (fp2 - fm2) / (2.0 * small)
                if rel(numeric, numeric2) > rtol:
                    continue  # finite differences have not converged: kink in the interval
                numeric, err = numeric2, rel(gflat[i], numeric2)
            worst = max(worst, err)
            assert err <= rtol, (
                f"gradient mismatch at flat index {i}: analytic {gflat[i]:.8g}, "
                f"numeric {numeric:.8g}, relative error {err:.3g}"
            )
    return worst


@pytest.fixture(scope="session")
def tiny_dataset():
    """Small synthetic dataset shared by trainer/CLI tests."""
    from dam.data import make_synthetic

    rng = np.random.default_rng(np.random.SeedSequence((5, 104729)))
    return make_synthetic(25, 10, 32, rng)
