"""Hinge adversarial losses, matching-aware gradient penalty and visual loss."""

import warnings
from dataclasses import dataclass

from . import tensor as T
from .tensor import ShapeError, Tensor


class SecondOrderError(RuntimeError):
    """The discriminator's tape contains a primitive without a double-backward rule."""


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 0.1   # visual loss weight
    lambda2: float = 2.0   # gradient penalty weight
    p: float = 6.0         # gradient penalty exponent

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.p < 1:
            raise ValueError("gradient penalty exponent must be >= 1")


def _logits(x, name):
    x = T.constant(x)
    if x.size == 0:
        raise ValueError(f"{name}: empty batch")
    return x


def d_adv_loss(d_real, d_fake, d_mismatch):
    """Hinge loss for the discriminator on real, fake and mismatched pairs."""
    d_real = _logits(d_real, "d_adv_loss")
    d_fake = _logits(d_fake, "d_adv_loss")
    d_mismatch = _logits(d_mismatch, "d_adv_loss")
    if not d_real.shape == d_fake.shape == d_mismatch.shape:
        raise ShapeError(f"d_adv_loss: batch shapes differ {d_real.shape}, {d_fake.shape}, "
                         f"{d_mismatch.shape}")
    real = T.mean(T.relu(1.0 - d_real))
    fake = T.mean(T.relu(1.0 + d_fake))
    mis = T.mean(T.relu(1.0 + d_mismatch))
    return real + 0.5 * fake + 0.5 * mis


def g_adv_loss(d_fake):
    """Negated mean score of generated pairs (the generator minimises this)."""
    return -T.mean(_logits(d_fake, "g_adv_loss"))


def visual_loss(f_real, f_fake):
    """Mean absolute difference between discriminator features."""
    f_real, f_fake = T.constant(f_real), T.constant(f_fake)
    if f_real.shape != f_fake.shape:
        raise ShapeError(f"visual_loss: feature shapes differ {f_real.shape} vs {f_fake.shape}")
    return T.mean(T.absolute(f_real - f_fake))


def _check_second_order(root):
    for t in T.tape(root):
        if t.node is not None and t.node.op not in T.BACKWARD:
            raise SecondOrderError(f"primitive {t.node.op!r} cannot be differentiated twice")


def magp_loss(x, s, discriminator, p=6.0):
    """Matching-aware zero-centred gradient penalty on real pairs.

    ``discriminator(x, s)`` must return per-sample logits (N,).  Returns
    ``(penalty, logits)``; the penalty stays differentiable with respect to
    whatever parameters the discriminator closes over, and the logits can be
    reused for the adversarial term.
    """
    x = Tensor(x.data if isinstance(x, Tensor) else x, requires_grad=True)
    s = Tensor(s.data if isinstance(s, Tensor) else s, requires_grad=True)
    logits = discriminator(x, s)
    if logits.ndim != 1 or logits.shape[0] != x.shape[0]:
        raise ShapeError(f"magp_loss: discriminator returned {logits.shape} for batch "
                         f"{x.shape[0]}")
    _check_second_order(logits)
    with warnings.catch_warnings():
        # a discriminator that ignores x or s has a zero gradient there
        warnings.simplefilter("ignore", T.GradientWarning)
        gx, gs = T.backward(T.sum(logits), [x, s], create_graph=True)
    n = x.shape[0]
    norm = T.l2norm(T.reshape(gx, (n, -1)), 1) + T.l2norm(T.reshape(gs, (n, -1)), 1)
    return T.mean(T.power(norm, p)), logits


def g_objective(adv, vis, lambda1):
    return adv + lambda1 * vis


def d_objective(adv, magp, lambda2):
    return adv + lambda2 * magp

