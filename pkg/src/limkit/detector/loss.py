"""Detection loss: objectness BCE on every cell, class CE and smooth-L1 offsets on positives."""

from __future__ import annotations

import numpy as np

from ..tensor import Tensor


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _log_softmax(z, axis):
    zmax = z.max(axis=axis, keepdims=True)
    shifted = z - zmax
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def _smooth_l1(d):
    a = np.abs(d)
    return np.where(a < 1.0, 0.5 * d * d, a - 0.5)


def _smooth_l1_grad(d):
    return np.clip(d, -1.0, 1.0)


def loss_terms(preds, targets, num_classes: int):
    """(objectness, class, box) loss sums over the batch, divided by batch size."""
    obj = cls = box = 0.0
    n = None
    for p, t in zip(preds, targets):
        p = p.data if isinstance(p, Tensor) else np.asarray(p)
        n = p.shape[0]
        logit = p[:, 0]
        obj += float((_softplus(logit) - logit * t.objectness).sum())
        pos = t.positives
        if pos.any():
            logp = _log_softmax(p[:, 1:1 + num_classes], axis=1)
            picked = np.take_along_axis(logp, np.clip(t.category, 0, None)[:, None], axis=1)[:, 0]
            cls += float(-(picked[pos]).sum())
            diff = p[:, 1 + num_classes:] - t.offsets
            box += float(_smooth_l1(diff).sum(axis=1)[pos].sum())
    return obj / n, cls / n, box / n


def detection_loss(preds, targets, num_classes: int) -> Tensor:
    """Scalar loss over all pyramid levels, averaged over the batch; differentiable in ``preds``."""
    if len(preds) != len(targets):
        raise ValueError(f"{len(preds)} prediction levels vs {len(targets)} target levels")
    for p, t in zip(preds, targets):
        expect = (t.objectness.shape[0], 5 + num_classes) + t.objectness.shape[1:]
        if p.shape != expect:
            raise ValueError(f"prediction shape {p.shape} != expected {expect}")
    n = preds[0].shape[0]
    dtype = preds[0].data.dtype
    total = sum(loss_terms(preds, targets, num_classes))

    def backward(g):
        scale = g.reshape(()) / n
        grads = []
        for p, t in zip(preds, targets):
            x = p.data.astype(np.float64)
            dx = np.zeros_like(x)
            dx[:, 0] = _sigmoid(x[:, 0]) - t.objectness
            pos = t.positives[:, None]
            probs = np.exp(_log_softmax(x[:, 1:1 + num_classes], axis=1))
            onehot = np.arange(num_classes)[None, :, None, None] == t.category[:, None]
            dx[:, 1:1 + num_classes] = np.where(pos, probs - onehot, 0.0)
            dx[:, 1 + num_classes:] = np.where(pos, _smooth_l1_grad(x[:, 1 + num_classes:] - t.offsets), 0.0)
            grads.append((dx * scale).astype(dtype))
        return tuple(grads)

    value = np.array(total, dtype=dtype).reshape(1, 1, 1, 1)
    return Tensor._from_op(value, tuple(preds), backward, "detection_loss")
