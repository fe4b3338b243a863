"""Central finite-difference checks for tape gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tape, Tensor


def relative_error(analytic, numeric) -> np.ndarray:
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))


@dataclass
class GradCheck:
    name: str
    checked: int
    max_rel_error: float
    worst_index: tuple

    def passed(self, tol: float) -> bool:
        return self.max_rel_error <= tol


def check_gradients(loss_fn, params: dict[str, Tensor], eps: float = 1e-5, max_entries: int | None = None,
                    seed: int = 0) -> list[GradCheck]:
    """Compare tape gradients of ``loss_fn()`` with central differences.

    ``loss_fn`` builds and returns a scalar tensor; it is called once under a
    tape and then repeatedly without one. ``max_entries`` caps the number of
    entries checked per tensor (a random sample plus the largest-gradient
    entry); ``None`` checks all of them.
    """
    with Tape() as tape:
        loss = loss_fn()
    grads = tape.backward(loss, list(params.values()))
    rng = np.random.default_rng(seed)
    results = []
    for name, p in params.items():
        g = grads[p]
        p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)  # view; edits write through
        n = flat.size
        if max_entries is None or max_entries >= n:
            idx = np.arange(n)
        else:
            idx = np.unique(np.concatenate([rng.choice(n, max_entries - 1, replace=False),
                                            [int(np.argmax(np.abs(g)))]]))
        numeric = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().data)
            flat[i] = orig - eps
            down = float(loss_fn().data)
            flat[i] = orig
            numeric[j] = (up - down) / (2 * eps)
        err = relative_error(g.reshape(-1)[idx], numeric)
        worst = int(np.argmax(err))
        results.append(GradCheck(name, idx.size, float(err[worst]),
                                 np.unravel_index(int(idx[worst]), p.shape)))
    return results
