"""Central finite-difference gradient oracle (independent of the engine's
backward pass). All checks run in f64 with step 1e-5 per the numeric contract:
max relative error <= 1e-4 against recorded gradients."""

import numpy as np

from rfmusic.engine import backward, zero_grads

STEP = 1e-5
TOL = 1e-4


def central_diff(f, x, indices=None, h=STEP):
    """Numeric d f / d x at the given flat indices (all by default).

    f: callable taking no args, reading x in place; x: float64 ndarray.
    """
    flat = x.reshape(-1)
    indices = list(range(flat.size)) if indices is None else list(indices)
    g = np.zeros(len(indices))
    for j, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        g[j] = (fp - fm) / (2 * h)
    return g


def max_rel_err(analytic, numeric):
    """Relative error with a floor at 1e-3 of the gradient's own scale."""
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric, dtype=np.float64).reshape(-1)
    scale = max(np.abs(numeric).max(), 1e-8)
    denom = np.maximum(np.abs(numeric), 1e-3 * scale)
    return float((np.abs(analytic - numeric) / denom).max())


def assert_grads_match(loss_fn, tensors, max_indices=None, rng=None, tol=TOL):
    """Backward pass vs central differences for every tensor in `tensors`.

    loss_fn: () -> Tensor scalar, recomputed from the tensors' current data.
    max_indices: cap of probed entries per tensor (deterministic subsample).
    """
    for t in tensors:
        assert t.dtype == "f64", "gradient checks run in f64"
    zero_grads(tensors)
    backward(loss_fn())
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        assert t.grad is not None, f"no gradient reached {t.name or t.shape}"
        n = t.data.size
        if max_indices is not None and n > max_indices:
            idx = np.sort(rng.choice(n, size=max_indices, replace=False))
        else:
            idx = np.arange(n)
        numeric = central_diff(lambda: loss_fn().item(), t.data, idx)
        analytic = t.grad.reshape(-1)[idx]
        err = max_rel_err(analytic, numeric)
        assert err <= tol, f"gradient mismatch for {t.name or t.shape}: rel err {err:.3e}"
