"""Architecture configuration and config-file plumbing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import InputError

ATTENTION_KINDS = ("transposed", "conventional", "conv3", "conv7", "dconv5d3")
FUSION_KINDS = ("gfm", "conv")
BACKBONE_KINDS = ("ffc", "ta")


@dataclass
class ModelConfig:
    """All architecture dimensions and ablation switches."""

    h: int = 256
    w: int = 256
    d: int = 128
    downsample_factor: int = 32
    ta_blocks_per_branch: int = 3
    ffc_blocks: int = 18
    ffc_groups: int = 3
    ffc_global_ratio: float = 0.5
    attention_heads: int = 1
    use_wcc: bool = True
    use_bce: bool = True
    fusion_kind: str = "gfm"
    attention_kind: str = "transposed"
    backbone_enhancement: str = "ffc"
    learnable_temperature: bool = False
    pretrained_backbone: str | None = None
    init_seed: int = 0

    def __post_init__(self):
        f = self.downsample_factor
        if f < 2 or (f & (f - 1)) != 0:
            raise InputError(f"downsample_factor {f} must be a power of two >= 2")
        if self.h % f or self.w % f:
            raise InputError(f"h={self.h}, w={self.w} must be divisible by {f}")
        if self.d <= 0:
            raise InputError("d must be positive")
        if self.ffc_blocks % self.ffc_groups:
            raise InputError("ffc_blocks must divide evenly into ffc_groups")
        dg = self.d * self.ffc_global_ratio
        if not 0.0 < self.ffc_global_ratio < 1.0 or abs(dg - round(dg)) > 1e-9:
            raise InputError("ffc_global_ratio must split d into integral local/global channels")
        if self.d % self.attention_heads:
            raise InputError("attention_heads must divide d")
        if self.ta_blocks_per_branch < 1:
            raise InputError("ta_blocks_per_branch must be >= 1")
        if self.attention_kind not in ATTENTION_KINDS:
            raise InputError(f"attention_kind must be one of {ATTENTION_KINDS}")
        if self.fusion_kind not in FUSION_KINDS:
            raise InputError(f"fusion_kind must be one of {FUSION_KINDS}")
        if self.backbone_enhancement not in BACKBONE_KINDS:
            raise InputError(f"backbone_enhancement must be one of {BACKBONE_KINDS}")

    @property
    def hp(self) -> int:
        return self.h // self.downsample_factor

    @property
    def wp(self) -> int:
        return self.w // self.downsample_factor

    @property
    def n_stages(self) -> int:
        return self.downsample_factor.bit_length() - 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:16]


def flatten_config(obj, prefix: str = "") -> dict[str, object]:
    """Dotted config keys -> current value, recursing into nested dataclasses."""
    out: dict[str, object] = {}
    for f in dataclasses.fields(obj):
        val = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(val) and not isinstance(val, type):
            out.update(flatten_config(val, prefix=f"{key}."))
        else:
            out[key] = val
    return out


def apply_overrides(obj, overrides: dict[str, str]):
    """Apply dotted key=value string overrides onto a dataclass instance."""
    for dotted, raw in overrides.items():
        parts = dotted.split(".")
        target = obj
        for part in parts[:-1]:
            if not hasattr(target, part):
                raise InputError(f"unknown config key {dotted!r}")
            target = getattr(target, part)
        name = parts[-1]
        if not dataclasses.is_dataclass(target) or not hasattr(target, name):
            raise InputError(f"unknown config key {dotted!r}")
        current = getattr(target, name)
        setattr(target, name, _coerce(raw, current))
    return obj


def _coerce(raw: str, current):
    if isinstance(raw, (int, float, bool, list, tuple, type(None))):
        return raw
    if isinstance(current, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise InputError(f"expected boolean, got {raw!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, (list, tuple)):
        vals = json.loads(raw)
        return type(current)(vals)
    if raw.lower() == "none":
        return None
    return raw


def load_config_file(path: str | Path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config file {path}: {exc}") from exc


def update_dataclass(obj, values: dict):
    """Recursively set dataclass fields from a nested dict."""
    for key, val in values.items():
        if not hasattr(obj, key):
            raise InputError(f"unknown config key {key!r}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current) and isinstance(val, dict):
            update_dataclass(current, val)
        else:
            setattr(obj, key, val)
    return obj
