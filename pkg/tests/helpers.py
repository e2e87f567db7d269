"""Shared test utilities: central finite-difference gradient checking."""

import numpy as np

FD_STEP = 1e-5
FD_TOL = 1e-4


def finite_diff_check(build_loss, params, step=FD_STEP, tol=FD_TOL, max_checks=12,
                      rng=None):
    """Compare analytic gradients of build_loss() against central differences.

    build_loss must construct a fresh graph from the params' current .data and
    return a scalar Tensor. For big parameters a seeded sample of entries is
    checked instead of every one.
    """
    rng = rng or np.random.default_rng(0)
    loss = build_loss()
    for p in params:
        p.zero_grad()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        idxs = np.arange(flat.size)
        if flat.size > max_checks:
            idxs = rng.choice(flat.size, size=max_checks, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + step
            up = float(build_loss().data)
            flat[i] = orig - step
            down = float(build_loss().data)
            flat[i] = orig
            numeric = (up - down) / (2 * step)
            a = grad.reshape(-1)[i]
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            assert rel < tol, f"grad mismatch at {i}: analytic={a} numeric={numeric}"
