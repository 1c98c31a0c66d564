"""Permutation importance of a logistic probe, used to rank columns for MIFM/LIFM."""

from __future__ import annotations

import numpy as np
from sklearn.linear_model import LogisticRegression

from .masking import ScenarioConfigError
from .schema import TabularSchema


def _design(values: np.ndarray, schema: TabularSchema) -> np.ndarray:
    na = schema.n_categorical
    parts = []
    for j, card in enumerate(schema.cardinalities):
        codes = values[:, j].astype(np.int64)
        parts.append(np.eye(card, dtype=np.float64)[codes])
    parts.append(values[:, na:].astype(np.float64))
    return np.concatenate(parts, axis=1)


def feature_importance(values: np.ndarray, labels, schema: TabularSchema, n_repeats: int = 5,
                       seed: int = 0) -> tuple[list[int], np.ndarray]:
    """Rank columns by the accuracy drop of a logistic probe when each is permuted.

    Returns ``(ranking, scores)``: column indices sorted by descending score
    (ties keep the lower index first) and the per-column mean accuracy drop.
    The same row permutations are reused for every column.
    """
    if labels is None:
        raise ScenarioConfigError("feature importance needs labelled data")
    labels = np.asarray(labels)
    probe = LogisticRegression(max_iter=2000)
    probe.fit(_design(values, schema), labels)
    base = float(np.mean(probe.predict(_design(values, schema)) == labels))

    rng = np.random.default_rng(seed)
    perms = [rng.permutation(values.shape[0]) for _ in range(n_repeats)]
    scores = np.zeros(schema.n_columns)
    for j in range(schema.n_columns):
        drops = []
        for perm in perms:
            shuffled = values.copy()
            shuffled[:, j] = values[perm, j]
            acc = float(np.mean(probe.predict(_design(shuffled, schema)) == labels))
            drops.append(base - acc)
        scores[j] = np.mean(drops)
    # accuracies are multiples of 1/n; rounding removes float noise so exact ties stay ties
    keyed = np.round(scores, 12)
    ranking = sorted(range(schema.n_columns), key=lambda j: (-keyed[j], j))
    return ranking, scores
