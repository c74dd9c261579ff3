import numpy as np
import pytest
import torch

from demark.images import save_image


@pytest.fixture(autouse=True)
def _single_thread_torch():
    # keeps CPU results reproducible regardless of host core count
    torch.set_num_threads(1)


def make_source_images(root, n_bg=3, n_wm=2, size=48, rng_seed=0, opaque=False):
    """Write tiny background PNGs and RGBA watermark PNGs; returns path lists."""
    rng = np.random.default_rng(rng_seed)
    bg_dir = root / "bg"
    wm_dir = root / "wm"
    bg_dir.mkdir(parents=True, exist_ok=True)
    wm_dir.mkdir(parents=True, exist_ok=True)
    bgs, wms = [], []
    for i in range(n_bg):
        p = bg_dir / f"bg_{i}.png"
        save_image(p, rng.random((size, size, 3)).astype(np.float32))
        bgs.append(p)
    for i in range(n_wm):
        wm = np.zeros((size // 2, size, 4), dtype=np.float32)
        wm[:, :, :3] = rng.random((size // 2, size, 3))
        wm[:, :, 3] = 1.0 if opaque else rng.uniform(0.3, 1.0, (size // 2, size))
        p = wm_dir / f"wm_{i}.png"
        save_image(p, wm)
        wms.append(p)
    return bgs, wms


@pytest.fixture
def toy_sources(tmp_path):
    return make_source_images(tmp_path)
