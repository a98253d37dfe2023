"""Optional compiled inner loops.

The Adam update is memory-bound at ~1M parameters per step with batch
size 1, so the hot path is a single fused pass.  When numba is present
the kernel is JIT-compiled (error_model="numpy" lets LLVM vectorise the
sqrt/div without changing IEEE results); otherwise a numpy fallback with
identical arithmetic per element is used.  Both paths are bit-identical
and the tests assert it.
"""

from __future__ import annotations

import numpy as np

try:  # pragma: no cover - exercised implicitly by the test suite
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def _adam_update_py(p, g, m, v, lr, beta1, beta2, eps, wd, inv_bc1, inv_sqrt_bc2):
    gi = g + wd * p
    m *= beta1
    m += (1.0 - beta1) * gi
    v *= beta2
    v += (1.0 - beta2) * (gi * gi)
    p -= lr * (m * inv_bc1) / (np.sqrt(v) * inv_sqrt_bc2 + eps)


def _adam_update_rank1_py(p2, m2, v2, u, x, lr, beta1, beta2, eps, wd, inv_bc1, inv_sqrt_bc2):
    _adam_update_py(p2.reshape(-1), (u[:, None] * x[None, :]).reshape(-1),
                    m2.reshape(-1), v2.reshape(-1),
                    lr, beta1, beta2, eps, wd, inv_bc1, inv_sqrt_bc2)


if HAVE_NUMBA:

    @njit(cache=True, error_model="numpy")
    def _adam_update_jit(p, g, m, v, lr, beta1, beta2, eps, wd, inv_bc1, inv_sqrt_bc2):  # pragma: no cover
        for i in range(p.size):
            gi = g[i] + wd * p[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi
            v[i] = beta2 * v[i] + (1.0 - beta2) * (gi * gi)
            p[i] -= lr * (m[i] * inv_bc1) / (np.sqrt(v[i]) * inv_sqrt_bc2 + eps)

    @njit(cache=True, error_model="numpy")
    def _adam_update_rank1_jit(p2, m2, v2, u, x, lr, beta1, beta2, eps, wd, inv_bc1, inv_sqrt_bc2):  # pragma: no cover
        # gradient of a single-row linear layer is outer(u, x); computing the
        # products in-register skips materialising and re-reading it
        rows, cols = p2.shape
        for i in range(rows):
            ui = u[i]
            for j in range(cols):
                gi = ui * x[j] + wd * p2[i, j]
                m2[i, j] = beta1 * m2[i, j] + (1.0 - beta1) * gi
                v2[i, j] = beta2 * v2[i, j] + (1.0 - beta2) * (gi * gi)
                p2[i, j] -= lr * (m2[i, j] * inv_bc1) / (np.sqrt(v2[i, j]) * inv_sqrt_bc2 + eps)

    adam_update = _adam_update_jit
    adam_update_rank1 = _adam_update_rank1_jit
else:
    adam_update = _adam_update_py
    adam_update_rank1 = _adam_update_rank1_py
