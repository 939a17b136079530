"""Conflict resolution between near-duplicate observations.

Each new demonstration forms a group with every stored demonstration whose
scan has cosine similarity above ``epsilon``.  Within a group the member with
the best evaluation score (min-max normalized safety score plus min-max
normalized speed) lends its action label to the rest.

A record can fall into several groups.  Winners keep their own labels, and any
other record takes the label of the winner of the last group (in ascending
``step_index`` of the new data) that contains it.  Because winners never
change, a second pass reproduces the first exactly.
"""

from __future__ import annotations

import numpy as np

from .dataset import Dataset

__all__ = ["cosine_matrix", "evaluation_score", "group_winner", "resolve_conflicts"]


def cosine_matrix(O: np.ndarray, O_j: np.ndarray) -> np.ndarray:
    """``Theta[a, b] = <O[a], O_j[b]> / (|O[a]| |O_j[b]|)``."""
    O = np.atleast_2d(np.asarray(O, dtype=np.float64))
    O_j = np.atleast_2d(np.asarray(O_j, dtype=np.float64))
    na = np.linalg.norm(O, axis=1)
    nb = np.linalg.norm(O_j, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("zero-norm observation row")
    theta = (O / na[:, None]) @ (O_j / nb[:, None]).T
    return np.clip(theta, -1.0, 1.0)


def _minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.full(len(x), 0.5)
    return (x - lo) / (hi - lo)


def evaluation_score(sigma, v, w_sigma: float = 1.0, w_speed: float = 1.0) -> np.ndarray:
    """Per-member score; a term whose group range is zero contributes 0.5."""
    sigma = np.asarray(sigma, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if sigma.size == 0:
        raise ValueError("empty group")
    return w_sigma * _minmax(sigma) + w_speed * _minmax(v)


def group_winner(omega: np.ndarray, rollout_id: np.ndarray, step_index: np.ndarray) -> int:
    """Position of the highest score; ties go to the earliest (rollout_id, step_index)."""
    best = np.flatnonzero(omega == omega.max())
    if len(best) == 1:
        return int(best[0])
    order = np.lexsort((step_index[best], rollout_id[best]))
    return int(best[order[0]])


def resolve_conflicts(new: Dataset, data: Dataset, epsilon: float = 0.99,
                      w_sigma: float = 1.0, w_speed: float = 1.0) -> tuple[Dataset, Dataset, int]:
    """Relabel conflicting demonstrations in place.

    Returns ``(new, data, replaced)`` where ``replaced`` counts records whose
    action label actually changed.  Observations, scores and speeds are untouched.
    """
    if len(new) == 0 or len(data) == 0:
        return new, data, 0
    theta = data.unit_obs @ new.unit_obs.T
    n_data = len(data)
    # pooled view: data rows first, then new rows
    sigma = np.concatenate([data.sigma, new.sigma])
    speed = np.concatenate([data.v, new.v])
    rid = np.concatenate([data.rollout_id, new.rollout_id])
    sidx = np.concatenate([data.step_index, new.step_index])
    groups = []
    for q in np.argsort(new.step_index, kind="stable"):
        members = np.flatnonzero(theta[:, q] > epsilon)
        if len(members) == 0:
            continue
        members = np.append(members, n_data + q)
        omega = evaluation_score(sigma[members], speed[members], w_sigma, w_speed)
        groups.append((members, members[group_winner(omega, rid[members], sidx[members])]))
    if not groups:
        return new, data, 0
    winners = np.unique([w for _, w in groups])
    labels = np.concatenate([data.actions, new.actions])
    source = np.arange(len(labels))
    for members, w in groups:
        source[members] = w
    source[winners] = winners
    resolved = labels[source]
    changed = np.any(resolved != labels, axis=1)
    data.actions[:] = resolved[:n_data]
    new.actions[:] = resolved[n_data:]
    return new, data, int(changed.sum())
