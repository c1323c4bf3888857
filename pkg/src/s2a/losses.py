"""WGAN-GP critic terms, attention/domain-adaptation losses and the pixel loss.

Squared norms are taken as per-pixel means so the loss weights do not depend
on crop size.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import torch

from .errors import NonFiniteLoss, ShapeMismatch


@dataclass(frozen=True)
class LossWeights:
    lambda_gp: float = 10.0
    lambda_sa: float = 0.1
    lambda_da: float = 0.1
    lambda_p: float = 100.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"{name} must be nonnegative, got {value}")


@dataclass
class LossReport:
    step: int
    wasserstein_gap: float
    gp: float
    sa: float
    da: float
    pixel: float
    critic_total: float
    generator_adv: float
    generator_total: float
    grad_norm: float
    phase: str = "adversarial"

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in asdict(self).values() if isinstance(v, float))

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def _check_pair(a, b, what):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what}: {tuple(a.shape)} vs {tuple(b.shape)}")


def _per_sample_mse(a, b):
    return (a - b).pow(2).flatten(1).mean(dim=1)


def _scores(critic, x):
    out = critic(x)
    return out[0] if isinstance(out, tuple) else out


def interpolate(x, xhat, eps):
    """Per-sample line points ``eps * x + (1 - eps) * xhat``."""
    _check_pair(x, xhat, "interpolation")
    eps = eps.reshape(-1, *([1] * (x.ndim - 1))).to(x.dtype)
    if eps.shape[0] != x.shape[0]:
        raise ShapeMismatch(f"{eps.shape[0]} epsilons for batch of {x.shape[0]}")
    return eps * x + (1 - eps) * xhat


def critic_input_gradient_norms(critic, x_tilde, create_graph: bool = True):
    """Per-sample 2-norm of dD/dx over the whole image."""
    x_tilde = x_tilde.detach().requires_grad_(True)
    scores = _scores(critic, x_tilde)
    (grad,) = torch.autograd.grad(scores.sum(), x_tilde, create_graph=create_graph)
    return grad.flatten(1).norm(dim=1)


def gradient_penalty(critic, x, xhat, eps, return_norms: bool = False):
    """Batch mean of ``(||grad D(x_tilde)||_2 - 1)^2`` at interpolated samples.

    Differentiable with respect to the critic's parameters.
    """
    norms = critic_input_gradient_norms(critic, interpolate(x, xhat, eps))
    gp = (norms - 1).pow(2).mean()
    if return_norms:
        return gp, norms
    return gp


def spatial_attention_loss(a_fake, a_real):
    _check_pair(a_fake, a_real, "spatial attention loss")
    return _per_sample_mse(a_fake, a_real).mean()


def domain_adaptation_loss(a_up, a_real):
    _check_pair(a_up, a_real, "domain adaptation loss")
    return _per_sample_mse(a_up, a_real).mean()


def pixel_loss(xhat, y):
    _check_pair(xhat, y, "pixel loss")
    return _per_sample_mse(xhat, y).mean()


def critic_objective(d_real, d_fake, gp, l_sa, l_da, w: LossWeights):
    total = (
        d_fake.mean() - d_real.mean()
        + w.lambda_gp * gp
        + w.lambda_sa * l_sa
        + w.lambda_da * l_da
    )
    if not torch.isfinite(torch.as_tensor(total)).all():
        raise NonFiniteLoss("critic objective is not finite")
    return total


def generator_objective(d_fake, l_pixel, w: LossWeights):
    total = -d_fake.mean() + w.lambda_p * l_pixel
    if not torch.isfinite(torch.as_tensor(total)).all():
        raise NonFiniteLoss("generator objective is not finite")
    return total
