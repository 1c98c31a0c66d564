"""Central finite-difference gradient checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


@dataclass
class GradCheckResult:
    name: str
    rel_error: float
    passed: bool


def numeric_grad(f: Callable[[], Tensor], t: Tensor, h: float = 1e-3, max_entries: int | None = None,
                 rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Finite-difference gradient of scalar ``f()`` w.r.t. entries of ``t``.

    Returns ``(flat_indices, values)``; with ``max_entries`` a random subset
    of coordinates is probed.
    """
    flat = t.data.reshape(-1)
    idx = np.arange(flat.size)
    if max_entries is not None and flat.size > max_entries:
        rng = rng or np.random.default_rng(0)
        idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
    out = np.empty(idx.size, dtype=np.float64)
    for n, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f().data)
        flat[i] = orig - h
        fm = float(f().data)
        flat[i] = orig
        out[n] = (fp - fm) / (2 * h)
    return idx, out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b|| / max(||a||, ||b||)``, 0 when both vanish."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-3,
                    tol: float = 1e-3, max_entries: int | None = 64,
                    rng: np.random.Generator | None = None, names: Sequence[str] | None = None
                    ) -> list[GradCheckResult]:
    """Compare analytic gradients of ``f`` against central differences.

    ``f`` must rebuild the loss from the current contents of ``params``.
    """
    for p in params:
        p.zero_grad()
    with Tape():
        loss = f()
    backward(loss)
    analytic = [p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()
    results = []
    for k, (p, g) in enumerate(zip(params, analytic)):
        idx, num = numeric_grad(f, p, h=h, max_entries=max_entries, rng=rng)
        err = relative_error(g.reshape(-1)[idx], num)
        name = names[k] if names else (p.name or f"param{k}")
        results.append(GradCheckResult(name, err, err < tol))
    return results
