"""Pre-training masks, tabular corruption and downstream missingness scenarios.

Masks are 0/1 ``uint8`` matrices where 1 marks a missing (or masked) cell.
All counts are deterministic: ``round(rate * n)`` cells, never Bernoulli.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

MISSING_SENTINEL = 0.0
SCENARIO_KINDS = ("RVM", "RFM", "MIFM", "LIFM")


class ScenarioConfigError(ValueError):
    pass


def _count(rate: float, n: int) -> int:
    return int(round(rate * n))


def _rows_choice(rng: np.random.Generator, n_rows: int, n_cols: int, k: int) -> np.ndarray:
    """Boolean [n_rows, n_cols] with exactly ``k`` uniformly chosen columns per row."""
    sel = np.zeros((n_rows, n_cols), dtype=bool)
    if k <= 0:
        return sel
    order = np.argsort(rng.random((n_rows, n_cols)), axis=1, kind="stable")[:, :k]
    np.put_along_axis(sel, order, True, axis=1)
    return sel


def random_msk(values: np.ndarray, rho: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Mask ``round(rho * N)`` distinct cells per row.

    Returns ``(masked_values, mask)``. Masked cells hold the sentinel; the
    caller keeps ``values`` as reconstruction targets.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError("masking ratio must lie in [0, 1]")
    B, N = values.shape
    sel = _rows_choice(rng, B, N, _count(rho, N))
    masked = np.where(sel, MISSING_SENTINEL, values).astype(values.dtype)
    return masked, sel.astype(np.uint8)


def corrupt_tabular(values: np.ndarray, rate: float, rng: np.random.Generator,
                    pool: np.ndarray | None = None) -> np.ndarray:
    """Replace ``round(rate * N)`` cells per row with draws from the same column.

    Replacement values are sampled uniformly from the rows of ``pool``
    (defaults to ``values``), so categorical codes stay valid.
    """
    pool = values if pool is None else pool
    B, N = values.shape
    if pool.shape[0] < 2:
        raise ValueError("corruption needs at least two rows to draw from")
    k = _count(rate, N)
    if k == 0:
        return values.copy()
    sel = _rows_choice(rng, B, N, k)
    donors = rng.integers(0, pool.shape[0], size=(B, N))
    replacement = pool[donors, np.arange(N)[None, :]]
    return np.where(sel, replacement, values).astype(values.dtype)


@dataclass(frozen=True)
class MissingScenario:
    kind: str
    sigma: float
    importance: tuple[int, ...] | None = None  # column indices, most important first

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ScenarioConfigError(f"unknown scenario {self.kind!r}")
        if not 0.0 <= self.sigma <= 1.0:
            raise ScenarioConfigError("missing rate must lie in [0, 1]")
        if self.kind in ("MIFM", "LIFM") and self.importance is None:
            raise ScenarioConfigError(f"{self.kind} needs a feature-importance ranking")


def scenario_mask(shape: tuple[int, int], scenario: MissingScenario, rng: np.random.Generator) -> np.ndarray:
    B, N = shape
    mask = np.zeros((B, N), dtype=np.uint8)
    if scenario.kind == "RVM":
        k = _count(scenario.sigma, B * N)
        if k:
            cells = rng.choice(B * N, size=k, replace=False)
            mask.reshape(-1)[cells] = 1
        return mask
    k = _count(scenario.sigma, N)
    if k == 0:
        return mask
    if scenario.kind == "RFM":
        cols = rng.choice(N, size=k, replace=False)
    else:
        ranking = list(scenario.importance)
        if sorted(ranking) != list(range(N)):
            raise ScenarioConfigError("importance ranking must cover every column exactly once")
        cols = ranking[:k] if scenario.kind == "MIFM" else ranking[::-1][:k]
    mask[:, np.asarray(cols)] = 1
    return mask


def apply_missing_scenario(values: np.ndarray, scenario: MissingScenario, rng: np.random.Generator,
                           mask: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Blank out cells per ``scenario``; an existing ``mask`` is OR-ed in.

    Unmasked values are returned untouched.
    """
    m = scenario_mask(values.shape, scenario, rng)
    if mask is not None:
        m = np.maximum(m, mask.astype(np.uint8))
    out = np.where(m.astype(bool), MISSING_SENTINEL, values).astype(values.dtype)
    return out, m


def frozen_mask(shape: tuple[int, int], rate: float, seed: int, extra_columns: Sequence[int] = ()) -> np.ndarray:
    """Per-sample random cell mask that depends only on ``(shape, rate, seed)``.

    Used to give imputation baselines and the model identical masks.
    """
    rng = np.random.default_rng(seed)
    sel = _rows_choice(rng, shape[0], shape[1], _count(rate, shape[1])).astype(np.uint8)
    if len(extra_columns):
        sel[:, np.asarray(extra_columns)] = 1
    return sel
