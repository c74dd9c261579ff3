"""Full watermark-removal network: backbone + two prompt branches + fusion.

Layout mirrors the system diagram: a cleaning branch predicts a background
component image C_bkg from (X, M); an embedding branch re-encodes
(X, M, C_bkg); the inpainting backbone runs on (X_una, M) with
X_una = (1 - M) * X, and fusion modules inject branch features into the
backbone feature stream at the encoder output and after each enhancement
group. Fusion point i consumes branch feature map min(i, n_branch_maps),
except the last point, which always takes the deepest branch map (only
relevant when the branch depth differs from the default three blocks).

Checkpoints are .npz archives: a flat map from canonical parameter paths
(the module state_dict names) to arrays, portable to other runtimes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .blocks import Decoder, Encoder, FFCBlock, make_feature_block, make_fusion
from .config import ModelConfig
from .errors import CheckpointError, InputError

BACKBONE_PREFIXES = ("backbone_encoder.", "backbone_groups.", "backbone_decoder.")


@dataclass
class ForwardTrace:
    """Every named intermediate of one forward pass."""

    X_una: torch.Tensor
    C_bkg: torch.Tensor | None
    F_wcc: list[torch.Tensor] = field(default_factory=list)
    F_bce: list[torch.Tensor] = field(default_factory=list)
    F_inp: list[torch.Tensor] = field(default_factory=list)
    F_hat_inp: list[torch.Tensor] = field(default_factory=list)
    Y: torch.Tensor | None = None


class WatermarkRemover(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d, n_stages = config.d, config.n_stages
        n_fusion = config.ffc_groups + 1

        def branch_blocks():
            return nn.ModuleList(
                make_feature_block(
                    config.attention_kind, d, config.attention_heads,
                    config.learnable_temperature,
                )
                for _ in range(config.ta_blocks_per_branch)
            )

        if config.use_wcc:
            self.wcc_encoder = Encoder(4, d, n_stages)
            self.wcc_blocks = branch_blocks()
            self.wcc_decoder = Decoder(d, 3, n_stages)
        if config.use_bce:
            bce_in = 7 if config.use_wcc else 4
            self.bce_encoder = Encoder(bce_in, d, n_stages)
            self.bce_blocks = branch_blocks()

        self.backbone_encoder = Encoder(4, d, n_stages)
        per_group = config.ffc_blocks // config.ffc_groups
        if config.backbone_enhancement == "ffc":
            self.backbone_groups = nn.ModuleList(
                nn.Sequential(*[FFCBlock(d, config.ffc_global_ratio) for _ in range(per_group)])
                for _ in range(config.ffc_groups)
            )
        else:  # attention stacks in place of the Fourier blocks (ablation)
            self.backbone_groups = nn.ModuleList(
                _BlockStack([
                    make_feature_block("transposed", d, config.attention_heads)
                    for _ in range(per_group)
                ])
                for _ in range(config.ffc_groups)
            )
        self.backbone_decoder = Decoder(d, 3, n_stages)

        n_sources = 1 + int(config.use_wcc) + int(config.use_bce)
        if n_sources > 1:
            self.fusions = nn.ModuleList(
                make_fusion(config.fusion_kind, d, n_sources) for _ in range(n_fusion)
            )
        else:
            self.fusions = None

    # branch depth can differ from the number of fusion points
    def _branch_index(self, fusion_i: int, n_maps: int, n_fusion: int) -> int:
        if fusion_i == n_fusion - 1:
            return n_maps - 1
        return min(fusion_i, n_maps - 1)

    def wcc_forward(self, x: torch.Tensor, m: torch.Tensor):
        """Cleaning branch: predicts the background component image."""
        self._check_inputs(x, m)
        feats = [self.wcc_encoder(torch.cat([x, m], dim=1))]
        for blk in self.wcc_blocks:
            out, _ = blk(feats[-1])
            feats.append(out)
        return self.wcc_decoder(feats[-1]), feats

    def bce_forward(self, x: torch.Tensor, m: torch.Tensor, c_bkg: torch.Tensor | None):
        """Embedding branch: prompt features from (X, M, C_bkg)."""
        self._check_inputs(x, m)
        parts = [x, m] if c_bkg is None else [x, m, c_bkg]
        feats = [self.bce_encoder(torch.cat(parts, dim=1))]
        for blk in self.bce_blocks:
            out, _ = blk(feats[-1])
            feats.append(out)
        return feats

    def backbone_forward(self, x: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
        """Inpainting path alone, no feature adaptation."""
        self._check_inputs(x, m)
        x_una = (1.0 - m) * x
        f = self.backbone_encoder(torch.cat([x_una, m], dim=1))
        for group in self.backbone_groups:
            f = group(f)
        return self.backbone_decoder(f)

    def full_forward(self, x: torch.Tensor, m: torch.Tensor):
        self._check_inputs(x, m)
        x_una = (1.0 - m) * x
        trace = ForwardTrace(X_una=x_una, C_bkg=None)

        if self.config.use_wcc:
            trace.C_bkg, trace.F_wcc = self.wcc_forward(x, m)
        if self.config.use_bce:
            trace.F_bce = self.bce_forward(x, m, trace.C_bkg)

        f = self.backbone_encoder(torch.cat([x_una, m], dim=1))
        trace.F_inp.append(f)
        n_fusion = self.config.ffc_groups + 1
        for i in range(n_fusion):
            f_hat = self._fuse(i, trace, n_fusion)
            trace.F_hat_inp.append(f_hat)
            if i < self.config.ffc_groups:
                f = self.backbone_groups[i](f_hat)
                trace.F_inp.append(f)
        trace.Y = self.backbone_decoder(trace.F_hat_inp[-1])
        return trace.Y, trace

    def forward(self, x: torch.Tensor, m: torch.Tensor):
        return self.full_forward(x, m)

    def _fuse(self, i: int, trace: ForwardTrace, n_fusion: int) -> torch.Tensor:
        f_inp = trace.F_inp[i]
        if self.fusions is None:
            return f_inp
        branch = []
        if self.config.use_wcc:
            branch.append(trace.F_wcc[self._branch_index(i, len(trace.F_wcc), n_fusion)])
        if self.config.use_bce:
            branch.append(trace.F_bce[self._branch_index(i, len(trace.F_bce), n_fusion)])
        out, _ = self.fusions[i](f_inp, *branch)
        return out

    def _check_inputs(self, x: torch.Tensor, m: torch.Tensor):
        if x.dim() != 4 or m.dim() != 4 or x.shape[1] != 3 or m.shape[1] != 1:
            raise InputError(f"expected NCHW image (3ch) and mask (1ch), got {tuple(x.shape)}, {tuple(m.shape)}")
        if x.shape[-2:] != m.shape[-2:] or x.shape[0] != m.shape[0]:
            raise InputError(f"image/mask shapes disagree: {tuple(x.shape)} vs {tuple(m.shape)}")

    def generator_parameters(self):
        return self.parameters()

    def adapter_parameters(self):
        """Branch + fusion parameters, excluding the backbone."""
        for name, p in self.named_parameters():
            if not name.startswith(BACKBONE_PREFIXES):
                yield p


class _BlockStack(nn.Module):
    """Sequential over blocks that return (tensor, internals) pairs."""

    def __init__(self, blocks):
        super().__init__()
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x):
        for blk in self.blocks:
            x, _ = blk(x)
        return x


def build_model(config: ModelConfig) -> WatermarkRemover:
    """Construct with seeded init; optionally pull in pretrained backbone."""
    torch.manual_seed(config.init_seed)
    model = WatermarkRemover(config)
    if config.pretrained_backbone:
        load_backbone(model, config.pretrained_backbone, strict=True)
    return model


def save_checkpoint(model: nn.Module, path: str | Path, backbone_only: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for name, tensor in model.state_dict().items():
        if backbone_only and not name.startswith(BACKBONE_PREFIXES):
            continue
        arrays[name] = tensor.detach().cpu().numpy()
    np.savez(path, **arrays)
    return path


def _read_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    try:
        with np.load(path) as data:
            return {k: data[k] for k in data.files}
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc


def load_checkpoint(model: nn.Module, path: str | Path, strict: bool = True):
    arrays = _read_checkpoint(path)
    _load_arrays(model, arrays, strict=strict, scope=None)


def load_backbone(model: nn.Module, path: str | Path, strict: bool = True):
    """Replace backbone parameters only; adapters and branches untouched."""
    arrays = {
        k: v for k, v in _read_checkpoint(path).items() if k.startswith(BACKBONE_PREFIXES)
    }
    _load_arrays(model, arrays, strict=strict, scope=BACKBONE_PREFIXES)


def _load_arrays(model, arrays, strict, scope):
    state = model.state_dict()
    target = {
        k: v for k, v in state.items() if scope is None or k.startswith(scope)
    }
    missing = sorted(set(target) - set(arrays))
    extra = sorted(set(arrays) - set(target))
    if strict and (missing or extra):
        raise CheckpointError(
            f"checkpoint key mismatch: missing={missing[:5]} extra={extra[:5]}"
        )
    loaded = {}
    for key, arr in arrays.items():
        if key not in target:
            continue
        if tuple(arr.shape) != tuple(target[key].shape):
            raise CheckpointError(
                f"shape mismatch for {key}: checkpoint {arr.shape} vs model {tuple(target[key].shape)}"
            )
        loaded[key] = torch.from_numpy(arr)
    state.update(loaded)
    model.load_state_dict(state)


def write_model_card(config: ModelConfig, path: str | Path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    card = {
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "format": "npz-state-dict-v1",
    }
    if extra:
        card.update(extra)
    with open(path, "w") as fh:
        json.dump(card, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def read_model_card(path: str | Path) -> tuple[ModelConfig, dict]:
    try:
        with open(path) as fh:
            card = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read model card {path}: {exc}") from exc
    return ModelConfig(**card["config"]), card


def load_model_dir(run_dir: str | Path) -> tuple[WatermarkRemover, dict]:
    """Load checkpoint.npz + model_card.json from a run directory."""
    run_dir = Path(run_dir)
    config, card = read_model_card(run_dir / "model_card.json")
    model = WatermarkRemover(config)
    load_checkpoint(model, run_dir / "checkpoint.npz", strict=True)
    model.eval()
    return model, card


def pad_to_factor(x: np.ndarray, factor: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflect-pad HxWxC to the next multiple of factor; returns (arr, (h, w))."""
    h, w = x.shape[:2]
    ph = (-h) % factor
    pw = (-w) % factor
    if ph or pw:
        x = np.pad(x, ((0, ph), (0, pw), (0, 0)), mode="reflect")
    return x, (h, w)


def restore_image(
    model: WatermarkRemover, x_np: np.ndarray, m_np: np.ndarray, want_cbkg: bool = False
):
    """Numpy-in numpy-out inference with internal padding to /factor."""
    from .images import from_tensor, to_tensor

    if x_np.shape[:2] != m_np.shape[:2]:
        raise InputError(f"image {x_np.shape} and mask {m_np.shape} disagree")
    factor = model.config.downsample_factor
    x_pad, (h, w) = pad_to_factor(x_np, factor)
    m_pad, _ = pad_to_factor(m_np, factor)
    with torch.no_grad():
        y, trace = model.full_forward(to_tensor(x_pad), to_tensor(m_pad))
    out = from_tensor(y)[:h, :w]
    if want_cbkg and trace.C_bkg is not None:
        return out, from_tensor(trace.C_bkg)[:h, :w]
    return out, None
