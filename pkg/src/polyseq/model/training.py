"""Optimization loops for both decode modes.

Parallel mode trains with the Hungarian set loss; for the RNN polygon head
the matching cost uses each target's own length (first m recurrence steps),
and matched queries additionally learn a stop flag at the last vertex.
Auto-regressive mode trains with teacher forcing: one causal pass per
sentence, cross-entropy over classes at every position, L1 only on the
positions whose target is an object token (specials carry no coordinates).
The coordinate term is averaged per object token and weighted by the same
lambda as the matcher, so both modes trade classification against geometry
at a comparable rate.

Loss values are per-scene averages within the batch. Any non-finite loss
aborts with a diagnostic dump rather than training onward from poison.
"""

import numpy as np

from polyseq import matching, seqcodec
from polyseq.grad import AdamW
from polyseq.grad import tensor as T
from polyseq.grad.tensor import Tensor
from polyseq.matching import LAMBDA_COORD
from polyseq.seqcodec import TokenClass


class TrainingDiverged(RuntimeError):
    def __init__(self, message, diagnostics):
        super().__init__(f"{message}; diagnostics: {diagnostics}")
        self.diagnostics = diagnostics


def images_to_tensor(scenes):
    """Stack scene images into a (B, 3, H, W) float tensor in [0, 1]."""
    arr = np.stack([s.image for s in scenes]).astype(np.float64) / 255.0
    return Tensor(arr.transpose(0, 3, 1, 2))


def parallel_targets(scene):
    """Per-object flat coordinate rows for the set loss."""
    task = scene.task
    if task == "points":
        return [np.asarray(v).reshape(2) for v in scene.labels]
    if task == "line":
        return [row for row in np.asarray(scene.labels[0])]
    if task == "gates":
        return [np.asarray(v).reshape(8) for v in scene.labels]
    raise ValueError(f"no flat targets for task {task!r}")


def _bce_with_logits(logits, targets):
    """Sum of sigmoid cross-entropies; targets is a 0/1 numpy vector."""
    p = T.sigmoid(logits)
    y = Tensor(np.asarray(targets, dtype=np.float64))
    pos = T.mul(T.mul(T.log(p), y), -1.0)
    q = T.add(T.mul(p, -1.0), 1.0)
    neg = T.mul(T.mul(T.log(q), T.add(T.mul(y, -1.0), 1.0)), -1.0)
    return T.tsum(T.add(pos, neg))


def _polygon_scene_loss(probs, coords, stops, targets):
    """Set loss for the RNN head; one scene.

    probs (N, 2), coords (N, S, 2), stops (N, S) as tensors; targets a list
    of (m_i, 2) arrays with m_i <= S. Matching cost per (query, target) is
    -p(object) + lambda * L1 over the target's first m_i steps.
    """
    n = probs.shape[0]
    if not targets:
        return T.mul(T.tsum(T.log(probs[:, 1])), -1.0)
    lens = [t.shape[0] for t in targets]
    cost = np.zeros((n, len(targets)))
    p_obj = probs.data[:, 0]
    for j, tgt in enumerate(targets):
        l1 = np.abs(coords.data[:, : lens[j]] - tgt[None]).sum(axis=(1, 2))
        cost[:, j] = -matching.LAMBDA_CLS * p_obj + LAMBDA_COORD * l1
    assign = matching.hungarian(cost)
    matched = assign.pred_for_target
    loss = None
    for j, q in enumerate(matched):
        m = lens[j]
        stop_target = np.zeros(m)
        stop_target[m - 1] = 1.0
        term = T.add(
            T.mul(T.log(probs[int(q), 0]), -1.0),
            T.mul(T.l1_loss(coords[int(q), :m], targets[j]), LAMBDA_COORD),
        )
        term = T.add(term, _bce_with_logits(stops[int(q), :m], stop_target))
        loss = term if loss is None else T.add(loss, term)
    unmatched = np.setdiff1d(np.arange(n), matched)
    if unmatched.size:
        p_no = T.take(probs, (unmatched, np.full(unmatched.size, 1)))
        loss = T.add(loss, T.mul(T.tsum(T.log(p_no)), -1.0))
    return loss


def parallel_batch_loss(model, scenes):
    images = images_to_tensor(scenes)
    memory = model.forward_image(images)
    if model.config.rnn_head:
        steps = max(max((len(v) for v in s.labels), default=1) for s in scenes)
        steps = min(max(steps, 1), model.config.max_vertices)
        logits, (coords, stops) = model.parallel_decode(memory, rnn_steps=steps)
        probs = T.softmax(logits, axis=-1)
        total = None
        for i, scene in enumerate(scenes):
            targets = [np.asarray(v, dtype=np.float64) for v in scene.labels]
            term = _polygon_scene_loss(probs[i], coords[i], stops[i], targets)
            total = term if total is None else T.add(total, term)
    else:
        logits, coords = model.parallel_decode(memory)
        probs = T.softmax(logits, axis=-1)
        total = None
        for i, scene in enumerate(scenes):
            tgt = parallel_targets(scene)
            tgt = np.stack(tgt) if tgt else np.empty((0, coords.shape[-1]))
            term, _ = matching.set_loss(probs[i], coords[i], tgt)
            total = term if total is None else T.add(total, term)
    return T.mul(total, 1.0 / len(scenes))


def ar_scene_loss(model, memory_row, scene):
    """Teacher-forced loss for one sentence against one memory row."""
    cfg = model.config
    tokens = seqcodec.encode_scene(scene.labels, cfg.task, policy=cfg.order_policy)
    logits, coords = model.ar_forward(memory_row, tokens[:-1])
    target = tokens[1:]
    classes = np.array(
        [seqcodec.class_index(t.cls, cfg.task) for t in target], dtype=np.int64
    )
    loss = T.cross_entropy(logits, classes, reduction="mean")
    obj_rows = [
        i for i, t in enumerate(target) if t.cls in (TokenClass.P, TokenClass.G)
    ]
    if obj_rows:
        payload = np.array([target[i].coords for i in obj_rows])
        picked = T.take(coords, (np.array(obj_rows),))
        l1 = T.l1_loss(picked, payload)
        loss = T.add(loss, T.mul(l1, LAMBDA_COORD / len(obj_rows)))
    return loss


def ar_batch_loss(model, scenes):
    images = images_to_tensor(scenes)
    memory = model.forward_image(images)
    total = None
    for i, scene in enumerate(scenes):
        term = ar_scene_loss(model, memory[i], scene)
        total = term if total is None else T.add(total, term)
    return T.mul(total, 1.0 / len(scenes))


def batch_loss(model, scenes):
    if model.config.decode_mode == "parallel":
        return parallel_batch_loss(model, scenes)
    return ar_batch_loss(model, scenes)


def _divergence_dump(model, opt, value):
    norms = {
        name: float(np.abs(p.data).max()) for name, p in model.named_parameters()
    }
    worst = sorted(norms, key=norms.get, reverse=True)[:5]
    poisoned = sorted(
        name for name, p in model.named_parameters()
        if not np.isfinite(p.data).all()
    )
    return {
        "loss": value,
        "step": opt.t,
        "largest_params": {k: norms[k] for k in worst},
        "non_finite_params": poisoned,
    }


def train_step(model, scenes, opt):
    """One optimization step; returns the scalar loss value.

    A non-finite loss, or a forward pass poisoned by non-finite parameters,
    aborts with a TrainingDiverged carrying a diagnostic dump.
    """
    opt.zero_grad()
    try:
        loss = batch_loss(model, scenes)
    except ValueError as err:
        dump = _divergence_dump(model, opt, None)
        if dump["non_finite_params"]:
            raise TrainingDiverged("non-finite forward pass", dump) from err
        raise
    value = float(loss.data)
    if not np.isfinite(value):
        raise TrainingDiverged(
            "non-finite loss", _divergence_dump(model, opt, value)
        )
    loss.backward()
    opt.step()
    return value


class Trainer:
    """Minimal loop driver: two learning-rate groups per the training recipe
    (backbone below the rest), one optional step-indexed x0.1 drop."""

    def __init__(self, model, lr=1e-4, lr_backbone=1e-5, weight_decay=1e-4,
                 lr_drop_step=None):
        self.model = model
        self.opt = AdamW(
            model.param_groups(lr_backbone, lr), weight_decay=weight_decay
        )
        self.lr_drop_step = lr_drop_step
        self.steps_done = 0
        self.history = []

    def step(self, scenes):
        if self.lr_drop_step is not None and self.steps_done == self.lr_drop_step:
            self.opt.scale_lr(0.1)
        value = train_step(self.model, scenes, self.opt)
        self.steps_done += 1
        self.history.append(value)
        return value

    def run(self, batches, callback=None):
        """batches: iterable of scene lists. Returns the loss history."""
        for scenes in batches:
            value = self.step(scenes)
            if callback is not None:
                callback(self.steps_done, value)
        return self.history
