"""Hybrid BCE + Dice loss with deep supervision, analytic gradients and the
poly learning-rate schedule. All reductions run in float64."""
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError

BCE_EPS = 1e-7
DICE_EPS = 1.0
N_SIDE_OUTPUTS = 5


def _pair(P, G):
    P = np.asarray(P, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    if P.shape != G.shape:
        raise DimensionError(f"prediction shape {P.shape} does not match ground truth {G.shape}")
    if P.size == 0:
        raise DimensionError("empty prediction")
    return P, G


def bce_loss(P, G):
    P, G = _pair(P, G)
    P = np.clip(P, BCE_EPS, 1.0 - BCE_EPS)
    return float(-np.mean(G * np.log(P) + (1.0 - G) * np.log1p(-P)))


def dice_loss(P, G):
    P, G = _pair(P, G)
    return float(1.0 - (2.0 * np.sum(G * P) + DICE_EPS) / (np.sum(G) + np.sum(P) + DICE_EPS))


@dataclass(frozen=True)
class LossValue:
    bce: float
    dice: float

    @property
    def total(self):
        return self.bce + self.dice


def hybrid_loss(P, G):
    return LossValue(bce_loss(P, G), dice_loss(P, G))


def total_deep_supervision_loss(preds, G):
    preds = list(preds)
    if len(preds) != N_SIDE_OUTPUTS:
        raise DimensionError(f"expected {N_SIDE_OUTPUTS} side outputs, got {len(preds)}")
    return float(sum(hybrid_loss(P, G).total for P in preds))


def loss_grad(P, G):
    """d(bce + dice)/dP per pixel.

    The BCE term is differentiated without the clamp, so P must lie strictly
    inside (eps, 1 - eps) for the gradient to match the loss.
    """
    P, G = _pair(P, G)
    n = P.size
    g_bce = -(G / P - (1.0 - G) / (1.0 - P)) / n
    num = 2.0 * np.sum(G * P) + DICE_EPS
    den = np.sum(G) + np.sum(P) + DICE_EPS
    g_dice = -(2.0 * G * den - num) / den ** 2
    return g_bce + g_dice


def finite_difference_grad(f, P, step=1e-4):
    P = np.array(P, dtype=np.float64)
    grad = np.empty_like(P)
    flat, gflat = P.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = f(P)
        flat[i] = keep - step
        lo = f(P)
        flat[i] = keep
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def max_relative_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def gradcheck(seed, cases=100, side=6, step=1e-4, tol=1e-4):
    """Compare loss_grad to central differences on random instances.

    Returns (max relative error over all cases, passed)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    total = lambda G: (lambda P: bce_loss(P, G) + dice_loss(P, G))
    for _ in range(cases):
        P = rng.uniform(0.05, 0.95, size=(side, side))
        G = (rng.random((side, side)) < 0.5).astype(np.float64)
        worst = max(worst, max_relative_error(loss_grad(P, G), finite_difference_grad(total(G), P, step)))
    return worst, worst <= tol


@dataclass(frozen=True)
class ScheduleSpec:
    init_lr: float = 5e-5
    power: float = 0.9
    max_epoch: int = 30

    def __post_init__(self):
        if not self.init_lr > 0:
            raise DomainError(f"init_lr must be positive, got {self.init_lr}")
        if self.max_epoch < 1:
            raise DomainError(f"max_epoch must be at least 1, got {self.max_epoch}")


def poly_lr(sched, n):
    if not 0 <= n <= sched.max_epoch:
        raise DomainError(f"epoch {n} outside [0, {sched.max_epoch}]")
    return sched.init_lr * (1.0 - n / sched.max_epoch) ** sched.power
