"""Optimal bipartite assignment and the set-prediction loss.

The matcher is the shortest-augmenting-path Hungarian variant with row/column
potentials, O(n^3). Cost rows are predictions, columns are ground-truth
objects; every column must be matched, so N >= M. Ties between equally cheap
augmenting columns resolve to the lowest index, which makes the returned
assignment (not just its cost) deterministic.

The loss mirrors the assignment: matched predictions pay a classification
term toward "object" plus a weighted coordinate L1; unmatched ones pay
classification toward "no object". Gradients flow through probabilities and
coordinates only — the discrete assignment is computed on detached values.
"""

import dataclasses

import numpy as np

from polyseq.grad import tensor as T

LAMBDA_CLS = 1.0
LAMBDA_COORD = 5.0

# class-probability column convention for parallel heads
OBJECT, NO_OBJECT = 0, 1


@dataclasses.dataclass
class Assignment:
    pred_for_target: np.ndarray  # shape (M,), target j -> prediction row
    total_cost: float

    @property
    def pairs(self):
        return [(int(i), j) for j, i in enumerate(self.pred_for_target)]


def hungarian(cost):
    """Minimum-cost injective assignment of all columns onto distinct rows."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost must be 2-D, got shape {cost.shape}")
    n_preds, n_targets = cost.shape
    if n_preds < n_targets:
        raise ValueError(f"need rows >= cols, got {n_preds} < {n_targets}")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix contains non-finite entries")
    if n_targets == 0:
        return Assignment(np.empty(0, dtype=np.int64), 0.0)

    # run over the transpose so the outer loop walks the (fewer) targets
    a = cost.T  # (M, N)
    m, n = a.shape
    INF = np.inf
    u = np.zeros(m + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j] = 1-based target row owning col j
    way = np.zeros(n + 1, dtype=np.int64)

    for i in range(1, m + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = -1
            row = a[i0 - 1]
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:  # strict: first minimum wins ties
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    pred_for_target = np.empty(m, dtype=np.int64)
    for j in range(1, n + 1):
        if p[j]:
            pred_for_target[p[j] - 1] = j - 1
    total = float(cost[pred_for_target, np.arange(m)].sum())
    return Assignment(pred_for_target, total)


def flatten_targets(targets, width):
    """Stack per-object vertex arrays into an (M, width) matrix."""
    if isinstance(targets, np.ndarray) and targets.ndim == 2:
        mats = list(targets)
    else:
        mats = [np.asarray(t, dtype=np.float64).reshape(-1) for t in targets]
    if not mats:
        return np.empty((0, width))
    out = np.stack(mats)
    if out.shape[1] != width:
        raise ValueError(
            f"target arity {out.shape[1]} does not match prediction width {width}"
        )
    return out


def build_cost(class_probs, coords, targets,
               lambda_cls=LAMBDA_CLS, lambda_coord=LAMBDA_COORD):
    """cost[i, j] = -lambda_cls * p_i(object) + lambda_coord * L1(i, j)."""
    probs = np.asarray(class_probs, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64)
    tgt = flatten_targets(targets, coords.shape[1])
    p_obj = probs[:, OBJECT] if probs.ndim == 2 else probs
    l1 = np.abs(coords[:, None, :] - tgt[None, :, :]).sum(axis=2)
    return -lambda_cls * p_obj[:, None] + lambda_coord * l1


def set_loss(class_probs, coords, targets,
             lambda_cls=LAMBDA_CLS, lambda_coord=LAMBDA_COORD):
    """Differentiable set loss; returns (scalar Tensor, Assignment).

    class_probs: Tensor (N, 2) rows summing to 1, column 0 = object.
    coords: Tensor (N, D). targets: list of objects or (M, D) array.
    """
    n_preds = class_probs.shape[0]
    tgt = flatten_targets(targets, coords.shape[1])
    m = tgt.shape[0]
    if n_preds < m:
        raise ValueError(f"need predictions >= targets, got {n_preds} < {m}")

    if m:
        cost = build_cost(class_probs.data, coords.data, tgt,
                          lambda_cls, lambda_coord)
        assign = hungarian(cost)
        matched = assign.pred_for_target
    else:
        assign = Assignment(np.empty(0, dtype=np.int64), 0.0)
        matched = assign.pred_for_target

    unmatched = np.setdiff1d(np.arange(n_preds), matched)
    terms = []
    if m:
        p_obj = T.take(class_probs, (matched, np.full(m, OBJECT)))
        terms.append(T.mul(T.tsum(T.log(p_obj)), -1.0))
        picked = T.take(coords, (matched,))
        terms.append(T.mul(T.l1_loss(picked, tgt), lambda_coord))
    if unmatched.size:
        p_no = T.take(class_probs, (unmatched, np.full(unmatched.size, NO_OBJECT)))
        terms.append(T.mul(T.tsum(T.log(p_no)), -1.0))
    loss = terms[0]
    for extra in terms[1:]:
        loss = T.add(loss, extra)
    return loss, assign
