"""Differentiable building blocks.

All blocks operate on NCHW tensors. Feature-level modules (attention, fusion,
FFC) are shape preserving at the reduced resolution (h', w') = (h, w) / factor.
Residual output projections in the attention and fusion blocks are
zero-initialized, so a freshly built adapter stack is exactly the identity on
the backbone path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import InputError

SCORE_EPS = 1e-6  # patch scores clamped into (eps, 1-eps) before any log


class ChannelNorm(nn.Module):
    """Batch-free norm: per-channel statistics over spatial dims, affine.

    Unlike InstanceNorm2d this accepts 1x1 maps and has no train/eval mode,
    so single-sample inference is deterministic by construction.
    """

    def __init__(self, ch: int, eps: float = 1e-5):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(ch))
        self.bias = nn.Parameter(torch.zeros(ch))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mu = x.mean(dim=(-2, -1), keepdim=True)
        var = x.var(dim=(-2, -1), unbiased=False, keepdim=True)
        y = (x - mu) / torch.sqrt(var + self.eps)
        return y * self.weight[:, None, None] + self.bias[:, None, None]


def _norm(ch: int) -> nn.Module:
    return ChannelNorm(ch)


def _zero_init(conv: nn.Conv2d) -> nn.Conv2d:
    nn.init.zeros_(conv.weight)
    if conv.bias is not None:
        nn.init.zeros_(conv.bias)
    return conv


def encoder_channels(d: int, n_stages: int) -> list[int]:
    """Stem + per-stage output channels: geometric ramp capped at d."""
    c0 = min(max(d // 8, 8), d)
    chans = [c0] + [min(c0 * 2 ** (i + 1), d) for i in range(n_stages)]
    chans[-1] = d
    return chans


class Encoder(nn.Module):
    """7x7 stem then n_stages stride-2 conv+norm+act stages (/2**n_stages)."""

    def __init__(self, in_ch: int, d: int, n_stages: int):
        super().__init__()
        chans = encoder_channels(d, n_stages)
        self.factor = 2**n_stages
        self.stem = nn.Conv2d(in_ch, chans[0], 7, padding=3, padding_mode="reflect")
        stages = []
        for i in range(n_stages):
            stages.append(
                nn.Sequential(
                    nn.Conv2d(chans[i], chans[i + 1], 3, stride=2, padding=1),
                    _norm(chans[i + 1]),
                    nn.ReLU(inplace=True),
                )
            )
        self.stages = nn.ModuleList(stages)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        if h % self.factor or w % self.factor:
            raise InputError(f"spatial dims {h}x{w} not divisible by {self.factor}")
        x = self.stem(x)
        for stage in self.stages:
            x = stage(x)
        return x


class Decoder(nn.Module):
    """Mirror of Encoder: n_stages of upsample+conv, final conv + sigmoid."""

    def __init__(self, d: int, out_ch: int, n_stages: int):
        super().__init__()
        chans = encoder_channels(d, n_stages)[::-1]
        stages = []
        for i in range(n_stages):
            stages.append(
                nn.Sequential(
                    nn.Upsample(scale_factor=2, mode="nearest"),
                    nn.Conv2d(chans[i], chans[i + 1], 3, padding=1),
                    _norm(chans[i + 1]),
                    nn.ReLU(inplace=True),
                )
            )
        self.stages = nn.ModuleList(stages)
        self.head = nn.Conv2d(chans[-1], out_ch, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for stage in self.stages:
            x = stage(x)
        return torch.sigmoid(self.head(x))


@dataclass
class AttentionInternals:
    Q: torch.Tensor
    K: torch.Tensor
    V: torch.Tensor
    q: torch.Tensor  # (B*heads, HW, dh) spatially unfolded query
    k: torch.Tensor
    S: torch.Tensor  # (B*heads, dh, dh) channel correlation map
    alpha: float


class TransposedAttention(nn.Module):
    """Channel-wise attention: the correlation map is d x d, linear in h'w'.

    q, k, v come from a shared 1x1 conv followed by a 3x3 depth-wise conv;
    the output projection starts at zero so the block begins as the identity.
    """

    def __init__(self, d: int, heads: int = 1, learnable_temperature: bool = False):
        super().__init__()
        if d % heads:
            raise InputError("heads must divide d")
        self.d = d
        self.heads = heads
        self.to_qkv = nn.Conv2d(d, 3 * d, 1)
        self.dconv = nn.Conv2d(3 * d, 3 * d, 3, padding=1, groups=3 * d)
        self.project = _zero_init(nn.Conv2d(d, d, 1))
        alpha = math.sqrt(d // heads)
        if learnable_temperature:
            self.alpha = nn.Parameter(torch.tensor(float(alpha)))
        else:
            self.register_buffer("alpha", torch.tensor(float(alpha)))

    def forward(self, x: torch.Tensor):
        b, d, h, w = x.shape
        if d != self.d:
            raise InputError(f"expected {self.d} channels, got {d}")
        qkv = self.dconv(self.to_qkv(x))
        Q, K, V = qkv.chunk(3, dim=1)
        dh = d // self.heads
        # unfold: flatten spatial dims; rows are positions, columns channels
        q = Q.reshape(b * self.heads, dh, h * w).transpose(1, 2)
        k = K.reshape(b * self.heads, dh, h * w).transpose(1, 2)
        v = V.reshape(b * self.heads, dh, h * w).transpose(1, 2)
        S = torch.softmax(q.transpose(1, 2) @ k / self.alpha, dim=-1)
        out = v @ S  # (B*heads, HW, dh)
        out = out.transpose(1, 2).reshape(b, d, h, w)  # fold
        y = x + self.project(out)
        return y, AttentionInternals(Q=Q, K=K, V=V, q=q, k=k, S=S, alpha=float(self.alpha))


class ConventionalAttention(nn.Module):
    """Spatial softmax attention over positions; (h'w')^2 score map."""

    def __init__(self, d: int, heads: int = 1):
        super().__init__()
        self.d = d
        self.heads = heads
        self.to_qkv = nn.Conv2d(d, 3 * d, 1)
        self.dconv = nn.Conv2d(3 * d, 3 * d, 3, padding=1, groups=3 * d)
        self.project = _zero_init(nn.Conv2d(d, d, 1))

    def forward(self, x: torch.Tensor):
        b, d, h, w = x.shape
        qkv = self.dconv(self.to_qkv(x))
        Q, K, V = qkv.chunk(3, dim=1)
        dh = d // self.heads
        q = Q.reshape(b * self.heads, dh, h * w).transpose(1, 2)
        k = K.reshape(b * self.heads, dh, h * w).transpose(1, 2)
        v = V.reshape(b * self.heads, dh, h * w).transpose(1, 2)
        scores = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(dh), dim=-1)
        out = (scores @ v).transpose(1, 2).reshape(b, d, h, w)
        return x + self.project(out), None


class ConvFeatureBlock(nn.Module):
    """Plain convolutional substitute for attention (ablation rows)."""

    def __init__(self, d: int, kernel: int, dilation: int = 1):
        super().__init__()
        pad = dilation * (kernel - 1) // 2
        self.conv = nn.Conv2d(d, d, kernel, padding=pad, dilation=dilation)
        self.project = _zero_init(nn.Conv2d(d, d, 1))

    def forward(self, x: torch.Tensor):
        return x + self.project(F.gelu(self.conv(x))), None


def make_feature_block(kind: str, d: int, heads: int = 1, learnable_temperature: bool = False):
    if kind == "transposed":
        return TransposedAttention(d, heads=heads, learnable_temperature=learnable_temperature)
    if kind == "conventional":
        return ConventionalAttention(d, heads=heads)
    if kind == "conv3":
        return ConvFeatureBlock(d, kernel=3)
    if kind == "conv7":
        return ConvFeatureBlock(d, kernel=7)
    if kind == "dconv5d3":
        return ConvFeatureBlock(d, kernel=5, dilation=3)
    raise InputError(f"unknown feature block kind {kind!r}")


@dataclass
class GateInternals:
    G: torch.Tensor
    T: torch.Tensor


class GatedFusionModule(nn.Module):
    """GELU-gated residual injection of branch features into backbone features.

    One projection emits 2d channels split into a gate map and a temporary
    feature map; the zero-initialized output projection makes a fresh module
    the exact identity on the backbone feature.
    """

    def __init__(self, d: int, n_sources: int):
        super().__init__()
        if n_sources < 1:
            raise InputError("GFM needs at least the backbone feature")
        self.d = d
        self.n_sources = n_sources
        self.project_in = nn.Conv2d(n_sources * d, 2 * d, 1)
        self.dconv = nn.Conv2d(2 * d, 2 * d, 3, padding=1, groups=2 * d)
        self.project_out = _zero_init(nn.Conv2d(d, d, 1))

    def forward(self, f_inp: torch.Tensor, *branch_feats: torch.Tensor):
        feats = [f for f in branch_feats if f is not None] + [f_inp]
        if len(feats) != self.n_sources:
            raise InputError(f"expected {self.n_sources} feature maps, got {len(feats)}")
        for f in feats:
            if f.shape != f_inp.shape:
                raise InputError("GFM inputs must share shape")
        gt = self.dconv(self.project_in(torch.cat(feats, dim=1)))
        G, T = gt.chunk(2, dim=1)
        out = f_inp + self.project_out(F.gelu(G) * T)
        return out, GateInternals(G=G, T=T)


class ConvFusion(nn.Module):
    """Ablation fusion: plain conv stack instead of the gated module."""

    def __init__(self, d: int, n_sources: int):
        super().__init__()
        self.n_sources = n_sources
        self.conv = nn.Conv2d(n_sources * d, d, 3, padding=1)
        self.project_out = _zero_init(nn.Conv2d(d, d, 1))

    def forward(self, f_inp: torch.Tensor, *branch_feats: torch.Tensor):
        feats = [f for f in branch_feats if f is not None] + [f_inp]
        if len(feats) != self.n_sources:
            raise InputError(f"expected {self.n_sources} feature maps, got {len(feats)}")
        out = f_inp + self.project_out(F.gelu(self.conv(torch.cat(feats, dim=1))))
        return out, None


def make_fusion(kind: str, d: int, n_sources: int):
    if kind == "gfm":
        return GatedFusionModule(d, n_sources)
    if kind == "conv":
        return ConvFusion(d, n_sources)
    raise InputError(f"unknown fusion kind {kind!r}")


class SpectralTransform(nn.Module):
    """Global path: real 2-D FFT, pointwise conv on stacked re/im, inverse."""

    def __init__(self, ch: int):
        super().__init__()
        self.conv = nn.Conv2d(2 * ch, 2 * ch, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        spec = torch.fft.rfft2(x, norm="ortho")
        stacked = torch.cat([spec.real, spec.imag], dim=1)
        out = self.conv(stacked)
        re, im = out.chunk(2, dim=1)
        return torch.fft.irfft2(torch.complex(re, im), s=(h, w), norm="ortho")


class FFCBlock(nn.Module):
    """Fourier-convolution block: local conv path + global spectral path.

    Channels split d = d_local + d_global; the two paths cross-sum and the
    block closes with a residual add, so it is shape preserving.
    """

    def __init__(self, d: int, global_ratio: float = 0.5):
        super().__init__()
        dg = round(d * global_ratio)
        if abs(d * global_ratio - dg) > 1e-9 or not 0 < dg < d:
            raise InputError(f"global_ratio {global_ratio} must split {d} channels integrally")
        self.dl, self.dg = d - dg, dg
        self.conv_ll = nn.Conv2d(self.dl, self.dl, 3, padding=1)
        self.conv_gl = nn.Conv2d(self.dg, self.dl, 3, padding=1)
        self.conv_lg = nn.Conv2d(self.dl, self.dg, 3, padding=1)
        self.spectral = SpectralTransform(self.dg)
        self.norm_l = _norm(self.dl)
        self.norm_g = _norm(self.dg)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x_l, x_g = torch.split(x, [self.dl, self.dg], dim=1)
        y_l = F.relu(self.norm_l(self.conv_ll(x_l) + self.conv_gl(x_g)))
        y_g = F.relu(self.norm_g(self.conv_lg(x_l) + self.spectral(x_g)))
        return x + torch.cat([y_l, y_g], dim=1)


class PatchDiscriminator(nn.Module):
    """Patch critic: four stride-2 stages (/16), scores in (0, 1)."""

    def __init__(self, in_ch: int = 3, base: int = 64, n_stages: int = 4):
        super().__init__()
        self.factor = 2**n_stages
        stages = []
        ch = in_ch
        for i in range(n_stages):
            out = min(base * 2**i, 512)
            block = [nn.Conv2d(ch, out, 4, stride=2, padding=1)]
            if i > 0:
                block.append(_norm(out))
            block.append(nn.LeakyReLU(0.2, inplace=True))
            stages.append(nn.Sequential(*block))
            ch = out
        self.stages = nn.ModuleList(stages)
        self.head = nn.Conv2d(ch, 1, 3, padding=1)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        return self.forward_with_features(img)[0]

    def forward_with_features(self, img: torch.Tensor):
        feats = []
        x = img
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        scores = torch.sigmoid(self.head(x)).clamp(SCORE_EPS, 1 - SCORE_EPS)
        return scores, feats
