"""Synthetic watermarked-image dataset generation.

A sample is built by alpha-compositing a watermark W over a background I
with matte A, then pushing the result through a distortion T made of
resampling and lossy codec round-trips:

    X     = T((1 - A) * I + A * W)
    G_wf  = T(I)
    G_bkg = T((1 - A) * I)

The precise mask M_0 marks A > 0; the stored coarse mask M is M_0 after
random dilation, optional convex polygonalization, and the sample's own
resampling. Records are written as 8-bit PNGs plus JSON metadata so that a
fixed master seed reproduces them bitwise.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import InputError
from .geometry import convex_hull_polygon, rasterize_polygons
from .images import from_uint8, load_image, save_image, to_uint8

log = logging.getLogger(__name__)

RESAMPLE_FILTERS = {"bilinear": Image.BILINEAR, "bicubic": Image.BICUBIC}


@dataclass(frozen=True)
class DistortionParams:
    """Parameters that pin down one deterministic distortion T."""

    codec_quality: int = 75
    resample_scale: float = 0.75
    resample_filter: str = "bilinear"
    seed: int = 0
    identity: bool = False  # bypass for tests; T becomes the identity map

    def __post_init__(self):
        if not self.identity:
            if not 30 <= self.codec_quality <= 95:
                raise InputError(f"codec_quality {self.codec_quality} outside [30, 95]")
            if not 0.5 <= self.resample_scale <= 1.0:
                raise InputError(f"resample_scale {self.resample_scale} outside [0.5, 1.0]")
        if self.resample_filter not in RESAMPLE_FILTERS:
            raise InputError(f"unknown resample_filter {self.resample_filter!r}")


@dataclass(frozen=True)
class MaskAugParams:
    """One mask-coarsening recipe: morphology, polygonalization, seed."""

    op: str = "dilate"
    kernel_radius: int = 3
    polygonalize: bool = False
    polygon_vertices: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.op not in ("dilate", "erode", "none"):
            raise InputError(f"unknown mask op {self.op!r}")
        if not 1 <= self.kernel_radius <= 7:
            raise InputError(f"kernel_radius {self.kernel_radius} outside [1, 7]")
        if self.polygon_vertices < 3:
            raise InputError("polygon_vertices must be >= 3")


@dataclass
class SourcePair:
    """Background I, watermark W, and matte A, all spatially aligned."""

    background: np.ndarray
    watermark: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        if self.alpha.ndim == 2:
            self.alpha = self.alpha[:, :, None]
        shapes = (self.background.shape[:2], self.watermark.shape[:2], self.alpha.shape[:2])
        if len(set(shapes)) != 1:
            raise InputError(f"background/watermark/alpha spatial dims differ: {shapes}")
        self.alpha = np.clip(self.alpha, 0.0, 1.0)


@dataclass
class WatermarkSample:
    """One training/eval record with its full provenance."""

    X: np.ndarray
    M: np.ndarray
    M_0: np.ndarray
    G_wf: np.ndarray
    G_bkg: np.ndarray
    distortion: DistortionParams
    mask_aug: MaskAugParams
    sample_id: str = ""


def distort(img: np.ndarray, params: DistortionParams) -> np.ndarray:
    """Apply the deterministic distortion T: resample down/up, then codec."""
    if params.identity:
        return img.astype(np.float32, copy=True)
    h, w = img.shape[:2]
    im = Image.fromarray(to_uint8(img))
    pil_filter = RESAMPLE_FILTERS[params.resample_filter]
    if params.resample_scale < 1.0:
        nh = max(1, round(h * params.resample_scale))
        nw = max(1, round(w * params.resample_scale))
        im = im.resize((nw, nh), pil_filter).resize((w, h), pil_filter)
    buf = io.BytesIO()
    im.save(buf, format="JPEG", quality=params.codec_quality)
    with Image.open(buf) as out:
        arr = np.asarray(out.convert("RGB"))
    return from_uint8(arr)


def composite(pair: SourcePair, params: DistortionParams):
    """Blend watermark over background and distort; returns (X, G_wf, G_bkg)."""
    blend = (1.0 - pair.alpha) * pair.background + pair.alpha * pair.watermark
    bkg_only = (1.0 - pair.alpha) * pair.background
    X = distort(blend.astype(np.float32), params)
    G_wf = distort(pair.background.astype(np.float32), params)
    G_bkg = distort(bkg_only.astype(np.float32), params)
    return X, G_wf, G_bkg


def make_precise_mask(A: np.ndarray) -> np.ndarray:
    """Binary support of the matte: 1 wherever A > 0."""
    if A.ndim == 2:
        A = A[:, :, None]
    return (A > 0).astype(np.float32)


def _disc(radius: int) -> np.ndarray:
    yy, xx = np.ogrid[-radius : radius + 1, -radius : radius + 1]
    return (yy * yy + xx * xx) <= radius * radius


def coarsen_mask(
    M_0: np.ndarray, aug: MaskAugParams, distortion: DistortionParams | None = None
) -> np.ndarray:
    """Derive a coarse mask: morphology, optional hull polygon, resampling."""
    if M_0.ndim == 2:
        M_0 = M_0[:, :, None]
    vals = np.unique(M_0)
    if not np.all(np.isin(vals, (0.0, 1.0))):
        raise InputError("coarsen_mask expects a binary mask")
    support = M_0[:, :, 0] > 0

    if aug.op == "dilate":
        m = ndimage.binary_dilation(support, structure=_disc(aug.kernel_radius))
    elif aug.op == "erode":
        m = ndimage.binary_erosion(support, structure=_disc(aug.kernel_radius))
    else:
        m = support.copy()

    if aug.polygonalize:
        rng = np.random.default_rng(np.random.SeedSequence(aug.seed))
        poly = convex_hull_polygon(m, aug.polygon_vertices, rng)
        if poly is not None:
            m = rasterize_polygons([poly], *m.shape)

    if distortion is not None and not distortion.identity and distortion.resample_scale < 1.0:
        h, w = m.shape
        nh = max(1, round(h * distortion.resample_scale))
        nw = max(1, round(w * distortion.resample_scale))
        im = Image.fromarray((m * np.uint8(255)).astype(np.uint8))
        im = im.resize((nw, nh), Image.BILINEAR).resize((w, h), Image.BILINEAR)
        m = np.asarray(im) >= 128

    if aug.op == "dilate" and not aug.polygonalize:
        m = m | support  # resampling must not break dilation's extensivity
    if not m.any() and support.any():
        return M_0.astype(np.float32, copy=True)  # emptied mask: fall back to M_0
    return m.astype(np.float32)[:, :, None]


@dataclass
class PlacementConfig:
    """Random watermark placement ranges used by generate_dataset."""

    scale_range: tuple[float, float] = (0.4, 0.95)
    opacity_range: tuple[float, float] = (0.35, 1.0)
    dilate_radius_range: tuple[int, int] = (1, 7)
    size: tuple[int, int] = (256, 256)  # (h, w) of generated samples
    identity_t: bool = False


SAMPLE_FILES = {
    "X": "x.png",
    "M": "m.png",
    "M_0": "m0.png",
    "G_wf": "gwf.png",
    "G_bkg": "gbkg.png",
}


def _place_watermark(bg: np.ndarray, wm_rgba: np.ndarray, rng, cfg: PlacementConfig):
    """Scale + position the watermark inside the frame; returns (W, A)."""
    h, w = bg.shape[:2]
    short = min(h, w)
    target = max(8, round(short * rng.uniform(*cfg.scale_range)))
    wh, ww = wm_rgba.shape[:2]
    ratio = target / max(wh, ww)
    nh, nw = max(1, round(wh * ratio)), max(1, round(ww * ratio))
    im = Image.fromarray(to_uint8(wm_rgba), mode="RGBA").resize((nw, nh), Image.BILINEAR)
    wm = from_uint8(np.asarray(im))

    y0 = int(rng.integers(0, h - nh + 1))
    x0 = int(rng.integers(0, w - nw + 1))
    W = np.zeros((h, w, 3), dtype=np.float32)
    A = np.zeros((h, w, 1), dtype=np.float32)
    W[y0 : y0 + nh, x0 : x0 + nw] = wm[:, :, :3]
    opacity = rng.uniform(*cfg.opacity_range)
    A[y0 : y0 + nh, x0 : x0 + nw, 0] = wm[:, :, 3] * opacity
    return W, A


def _load_source(path: Path, size: tuple[int, int], channels: int) -> np.ndarray | None:
    try:
        arr = load_image(path, channels=channels)
    except InputError as exc:
        log.warning("skipping unreadable source %s (%s)", path, exc)
        return None
    if channels == 3:
        im = Image.fromarray(to_uint8(arr)).resize((size[1], size[0]), Image.BILINEAR)
        arr = from_uint8(np.asarray(im))
    return arr


def generate_dataset(
    backgrounds: list[str | Path],
    watermarks: list[str | Path],
    n: int,
    master_seed: int,
    out: str | Path,
    placement: PlacementConfig | None = None,
) -> Path:
    """Write n samples + manifest under `out`; returns the manifest path.

    Sample i is derived purely from SeedSequence(master_seed, spawn_key=(i,)),
    so regeneration (in any order) reproduces records bitwise.
    """
    cfg = placement or PlacementConfig()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.jsonl"

    if n > 0 and (not backgrounds or not watermarks):
        raise InputError("background and watermark collections must be non-empty")
    backgrounds = sorted(Path(p) for p in backgrounds)
    watermarks = sorted(Path(p) for p in watermarks)

    entries = []
    for i in range(n):
        ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(i,))
        rng = np.random.default_rng(ss)
        sample_seed = int(ss.generate_state(1)[0])
        sample_id = f"sample_{i:05d}"

        bg = wm = None
        for _ in range(len(backgrounds)):
            bg = _load_source(backgrounds[int(rng.integers(len(backgrounds)))], cfg.size, 3)
            if bg is not None:
                break
        for _ in range(len(watermarks)):
            wm = _load_source(watermarks[int(rng.integers(len(watermarks)))], cfg.size, 4)
            if wm is not None:
                break
        if bg is None or wm is None:
            raise InputError("no readable background/watermark sources")

        W, A = _place_watermark(bg, wm, rng, cfg)
        distortion = DistortionParams(
            codec_quality=int(rng.integers(30, 96)),
            resample_scale=float(rng.uniform(0.5, 1.0)),
            resample_filter=("bilinear", "bicubic")[int(rng.integers(2))],
            seed=sample_seed,
            identity=cfg.identity_t,
        )
        mask_aug = MaskAugParams(
            op="dilate",
            kernel_radius=int(rng.integers(cfg.dilate_radius_range[0], cfg.dilate_radius_range[1] + 1)),
            polygonalize=False,
            polygon_vertices=12,
            seed=sample_seed,
        )

        pair = SourcePair(background=bg, watermark=W, alpha=A)
        X, G_wf, G_bkg = composite(pair, distortion)
        M_0 = make_precise_mask(pair.alpha)
        M = coarsen_mask(M_0, mask_aug, distortion)
        sample = WatermarkSample(
            X=X, M=M, M_0=M_0, G_wf=G_wf, G_bkg=G_bkg,
            distortion=distortion, mask_aug=mask_aug, sample_id=sample_id,
        )
        save_sample(out / sample_id, sample)
        entries.append({"id": sample_id, "seed": sample_seed, "dir": sample_id})

    with open(manifest_path, "w") as fh:
        for entry in entries:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return manifest_path


def save_sample(sample_dir: Path, sample: WatermarkSample) -> None:
    sample_dir = Path(sample_dir)
    sample_dir.mkdir(parents=True, exist_ok=True)
    for attr, fname in SAMPLE_FILES.items():
        save_image(sample_dir / fname, getattr(sample, attr))
    meta = {
        "id": sample.sample_id,
        "distortion": asdict(sample.distortion),
        "mask_aug": asdict(sample.mask_aug),
    }
    with open(sample_dir / "meta.json", "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_manifest(dataset_dir: str | Path) -> list[dict]:
    path = Path(dataset_dir) / "manifest.jsonl"
    if not path.exists():
        raise InputError(f"no manifest at {path}")
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_sample(dataset_dir: str | Path, entry: dict) -> WatermarkSample:
    sample_dir = Path(dataset_dir) / entry["dir"]
    with open(sample_dir / "meta.json") as fh:
        meta = json.load(fh)
    arrays = {}
    for attr, fname in SAMPLE_FILES.items():
        channels = 3 if attr in ("X", "G_wf", "G_bkg") else 1
        arrays[attr] = load_image(sample_dir / fname, channels=channels)
    return WatermarkSample(
        distortion=DistortionParams(**meta["distortion"]),
        mask_aug=MaskAugParams(**meta["mask_aug"]),
        sample_id=meta["id"],
        **arrays,
    )
