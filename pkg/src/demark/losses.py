"""Training objectives: pixel, perceptual, adversarial, gradient penalty.

The generator total is

    total = w1*L_pixel + w2*L_per + w3*L_G + w4*L_per' + w5*P

with the discriminator trained separately on L_D. The reduction Gamma is
`mean` by default so the weights stay resolution-independent; `sum` gives
plain element summation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import InputError

REDUCTIONS = ("mean", "sum")


@dataclass
class LossWeights:
    w1: float = 10.0  # pixel
    w2: float = 30.0  # perceptual
    w3: float = 1.0  # adversarial (generator side)
    w4: float = 100.0  # critic-feature perceptual
    w5: float = 0.001  # gradient penalty

    def __post_init__(self):
        for name in ("w1", "w2", "w3", "w4", "w5"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be non-negative")


@dataclass
class LossBreakdown:
    L_pixel: float
    L_per: float
    L_G: float
    L_D: float
    L_per_prime: float
    P: float
    total: float
    reduction: str = "mean"
    n_feature_stages: int = 3

    def recompose(self, w: LossWeights) -> float:
        return (
            w.w1 * self.L_pixel + w.w2 * self.L_per + w.w3 * self.L_G
            + w.w4 * self.L_per_prime + w.w5 * self.P
        )

    def finite(self) -> bool:
        return all(
            math.isfinite(v)
            for v in (self.L_pixel, self.L_per, self.L_G, self.L_D,
                      self.L_per_prime, self.P, self.total)
        )

    def to_dict(self) -> dict:
        return {
            "L_pixel": self.L_pixel, "L_per": self.L_per, "L_G": self.L_G,
            "L_D": self.L_D, "L_per_prime": self.L_per_prime, "P": self.P,
            "total": self.total, "reduction": self.reduction,
            "n_feature_stages": self.n_feature_stages,
        }


def _gamma(x: torch.Tensor, reduction: str) -> torch.Tensor:
    if reduction == "mean":
        return x.mean()
    if reduction == "sum":
        return x.sum()
    raise InputError(f"reduction must be one of {REDUCTIONS}")


def pixel_loss(Y, C_bkg, G_wf, G_bkg, reduction="mean") -> torch.Tensor:
    """L1 on the restored image plus L1 on the background component."""
    if Y.shape != G_wf.shape:
        raise InputError(f"Y {tuple(Y.shape)} vs G_wf {tuple(G_wf.shape)}")
    loss = _gamma((Y - G_wf).abs(), reduction)
    if C_bkg is not None:
        if C_bkg.shape != G_bkg.shape:
            raise InputError(f"C_bkg {tuple(C_bkg.shape)} vs G_bkg {tuple(G_bkg.shape)}")
        loss = loss + _gamma((C_bkg - G_bkg).abs(), reduction)
    return loss


class FrozenFeatureExtractor(nn.Module):
    """Small fixed conv stack standing in for a pretrained semantic network.

    Weights are drawn once from a dedicated generator seed and frozen, so
    feature distances are reproducible across runs and never receive
    gradient updates.
    """

    def __init__(self, in_ch: int = 3, widths: tuple[int, ...] = (8, 16, 24), seed: int = 1234):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        convs = []
        ch = in_ch
        for width in widths:
            conv = nn.Conv2d(ch, width, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * 0.2)
                conv.bias.copy_(torch.randn(conv.bias.shape, generator=gen) * 0.05)
            convs.append(conv)
            ch = width
        self.convs = nn.ModuleList(convs)
        for p in self.parameters():
            p.requires_grad_(False)

    @property
    def n_stages(self) -> int:
        return len(self.convs)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        for conv in self.convs:
            x = F.gelu(conv(x))
            feats.append(x)
        return feats


def _stage_distance(a: torch.Tensor, b: torch.Tensor, reduction: str) -> torch.Tensor:
    dist = (a - b).flatten(1).norm(dim=1).sum()
    if reduction == "mean":
        dist = dist / math.sqrt(a[0].numel())
    return dist


def perceptual_loss(
    Y, C_bkg, G_wf, G_bkg, extractor, reduction="mean", n_feature_stages=None
) -> torch.Tensor:
    """Stage-wise L2 feature distances for (Y, G_wf) and (C_bkg, G_bkg)."""
    feats_y = extractor(Y)
    if n_feature_stages is not None and len(feats_y) != n_feature_stages:
        raise InputError(
            f"extractor produced {len(feats_y)} stages, config says {n_feature_stages}"
        )
    with torch.no_grad():
        feats_wf = extractor(G_wf)
    loss = sum(_stage_distance(a, b, reduction) for a, b in zip(feats_y, feats_wf))
    if C_bkg is not None:
        feats_c = extractor(C_bkg)
        with torch.no_grad():
            feats_bkg = extractor(G_bkg)
        loss = loss + sum(_stage_distance(a, b, reduction) for a, b in zip(feats_c, feats_bkg))
    return loss


def patch_mask(M: torch.Tensor, score_shape: tuple[int, int]) -> torch.Tensor:
    """Area-average the mask onto the patch grid, then 0.5-threshold."""
    pooled = F.adaptive_avg_pool2d(M, score_shape)
    return (pooled >= 0.5).float()


def generator_adversarial(D, Y, M, reduction="mean") -> torch.Tensor:
    """-Gamma(log D(Y) * M_patch); empty masks zero the term."""
    scores_fake = D(Y)
    if not torch.isfinite(scores_fake).all():
        raise InputError("discriminator produced non-finite scores")
    mp = patch_mask(M, scores_fake.shape[-2:])
    return -_gamma(torch.log(scores_fake) * mp, reduction)


def discriminator_adversarial(D, Y, G_wf, M, reduction="mean") -> torch.Tensor:
    """Three-term critic objective; Y enters detached (no generator grad)."""
    scores_fake_d = D(Y.detach())
    scores_real = D(G_wf)
    if not torch.isfinite(scores_fake_d).all() or not torch.isfinite(scores_real).all():
        raise InputError("discriminator produced non-finite scores")
    mp = patch_mask(M, scores_fake_d.shape[-2:])
    return (
        -_gamma(torch.log(scores_real), reduction)
        - _gamma(torch.log(scores_fake_d) * (1.0 - mp), reduction)
        - _gamma(torch.log(1.0 - scores_fake_d) * mp, reduction)
    )


def adversarial_losses(D, Y, G_wf, M, reduction="mean"):
    """Both objectives at once; the mask enters multiplicatively after log."""
    L_G = generator_adversarial(D, Y, M, reduction)
    L_D = discriminator_adversarial(D, Y, G_wf, M, reduction)
    return L_G, L_D


def gradient_penalty(L_G: torch.Tensor, generator_params, create_graph: bool = True):
    """Squared L2 norm of dL_G/dtheta over the given parameter subset."""
    params = [p for p in generator_params if p.requires_grad]
    if not params:
        return L_G.new_zeros(())
    if L_G.grad_fn is None:
        raise InputError("gradient_penalty requires L_G computed with gradient tracking")
    grads = torch.autograd.grad(
        L_G, params, create_graph=create_graph, retain_graph=True, allow_unused=True
    )
    penalty = L_G.new_zeros(())
    for g in grads:
        if g is not None:
            penalty = penalty + g.pow(2).sum()
    return penalty


def discriminator_feature_perceptual(D, Y, G_wf, reduction="mean") -> torch.Tensor:
    """L2 distances between the critic's stage features of Y and of G_wf."""
    _, feats_y = D.forward_with_features(Y)
    with torch.no_grad():
        _, feats_real = D.forward_with_features(G_wf)
    return sum(_stage_distance(a, b, reduction) for a, b in zip(feats_y, feats_real))


def generator_total(
    L_pixel, L_per, L_G, L_per_prime, P, weights: LossWeights
) -> torch.Tensor:
    return (
        weights.w1 * L_pixel + weights.w2 * L_per + weights.w3 * L_G
        + weights.w4 * L_per_prime + weights.w5 * P
    )
