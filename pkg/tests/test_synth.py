import filecmp
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from demark.errors import InputError
from demark.synth import (
    DistortionParams,
    MaskAugParams,
    PlacementConfig,
    SourcePair,
    coarsen_mask,
    composite,
    distort,
    generate_dataset,
    load_manifest,
    load_sample,
    make_precise_mask,
)

IDENTITY = DistortionParams(identity=True)


def blob_mask(size=64, seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    cy, cx = rng.integers(16, size - 16, 2)
    r = rng.integers(5, 12)
    m = ((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r).astype(np.float32)
    return m[:, :, None]


class TestComposite:
    def test_zero_alpha_identity_t(self):
        rng = np.random.default_rng(1)
        I = rng.random((16, 16, 3)).astype(np.float32)
        W = rng.random((16, 16, 3)).astype(np.float32)
        pair = SourcePair(I, W, np.zeros((16, 16, 1), dtype=np.float32))
        X, G_wf, G_bkg = composite(pair, IDENTITY)
        assert np.array_equal(X, I)
        assert np.array_equal(G_bkg, I)
        assert np.array_equal(G_wf, I)

    def test_single_pixel_blend(self):
        pair = SourcePair(
            np.full((1, 1, 3), 0.8, dtype=np.float32),
            np.full((1, 1, 3), 0.2, dtype=np.float32),
            np.full((1, 1, 1), 0.5, dtype=np.float32),
        )
        X, _, _ = composite(pair, IDENTITY)
        assert np.allclose(X, 0.5)

    def test_matches_reference_codec_chain(self):
        # oracle: the same resample + JPEG steps applied by hand with PIL
        grad = np.linspace(0, 1, 32 * 32 * 3, dtype=np.float32).reshape(32, 32, 3)
        params = DistortionParams(codec_quality=75, resample_scale=0.5, resample_filter="bilinear")
        got = distort(grad, params)

        u8 = (np.clip(grad, 0, 1) * 255 + 0.5).astype(np.uint8)
        im = Image.fromarray(u8)
        im = im.resize((16, 16), Image.BILINEAR).resize((32, 32), Image.BILINEAR)
        buf = io.BytesIO()
        im.save(buf, format="JPEG", quality=75)
        want = np.asarray(Image.open(buf).convert("RGB")).astype(np.float32) / 255.0
        assert np.array_equal(got, want)

    def test_dim_mismatch_rejected(self):
        with pytest.raises(InputError):
            SourcePair(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)), np.zeros((4, 4, 1)))

    def test_same_t_instance_for_all_three(self):
        rng = np.random.default_rng(2)
        I = rng.random((32, 32, 3)).astype(np.float32)
        W = rng.random((32, 32, 3)).astype(np.float32)
        A = np.zeros((32, 32, 1), dtype=np.float32)
        params = DistortionParams(codec_quality=80, resample_scale=0.6)
        X, G_wf, G_bkg = composite(SourcePair(I, W, A), params)
        # A == 0 makes all three inputs equal, so one T must give equal outputs
        assert np.array_equal(X, G_wf)
        assert np.array_equal(X, G_bkg)


class TestPreciseMask:
    def test_zero_alpha(self):
        assert not make_precise_mask(np.zeros((8, 8, 1))).any()

    def test_threshold_levels(self):
        A = np.array([[[0.0], [0.5], [1.0]]])
        assert make_precise_mask(A).tolist() == [[[0.0], [1.0], [1.0]]]

    def test_against_pixel_loop(self):
        rng = np.random.default_rng(3)
        A = rng.choice([0.0, 0.1, 0.9], size=(12, 9, 1))
        got = make_precise_mask(A)
        for i in range(12):
            for j in range(9):
                assert got[i, j, 0] == (1.0 if A[i, j, 0] > 0 else 0.0)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_idempotent(self, seed):
        A = np.random.default_rng(seed).random((6, 6, 1)) * (seed % 2)
        once = make_precise_mask(A)
        assert np.array_equal(make_precise_mask(once), once)


class TestCoarsenMask:
    def test_single_pixel_dilate_radius1_is_cross(self):
        m0 = np.zeros((5, 5, 1), dtype=np.float32)
        m0[2, 2, 0] = 1
        m = coarsen_mask(m0, MaskAugParams(op="dilate", kernel_radius=1), IDENTITY)
        want = np.zeros((5, 5))
        want[2, 1:4] = 1
        want[1:4, 2] = 1
        assert np.array_equal(m[:, :, 0], want)

    def test_block_erode_radius1_leaves_center(self):
        m0 = np.zeros((5, 5, 1), dtype=np.float32)
        m0[1:4, 1:4, 0] = 1
        m = coarsen_mask(m0, MaskAugParams(op="erode", kernel_radius=1), IDENTITY)
        want = np.zeros((5, 5))
        want[2, 2] = 1
        assert np.array_equal(m[:, :, 0], want)

    def test_seeded_determinism(self):
        m0 = blob_mask(64, seed=4)
        aug = MaskAugParams(op="dilate", kernel_radius=3, polygonalize=True, seed=99)
        dist = DistortionParams(codec_quality=70, resample_scale=0.5)
        a = coarsen_mask(m0, aug, dist)
        b = coarsen_mask(m0, aug, dist)
        assert np.array_equal(a, b)

    def test_erosion_empties_falls_back(self):
        m0 = np.zeros((9, 9, 1), dtype=np.float32)
        m0[4, 4, 0] = 1
        m = coarsen_mask(m0, MaskAugParams(op="erode", kernel_radius=3), IDENTITY)
        assert np.array_equal(m, m0)

    @given(st.integers(0, 10_000), st.integers(1, 5), st.floats(0.5, 1.0))
    @settings(max_examples=20, deadline=None)
    def test_dilate_is_superset(self, seed, radius, scale):
        m0 = blob_mask(48, seed=seed)
        aug = MaskAugParams(op="dilate", kernel_radius=radius, seed=seed)
        dist = DistortionParams(codec_quality=75, resample_scale=scale)
        m = coarsen_mask(m0, aug, dist)
        assert np.all(m >= m0)

    def test_polygonalize_covers_blob(self):
        # full hull (no vertex subsampling) must cover the support
        m0 = blob_mask(48, seed=7)
        aug = MaskAugParams(op="none", kernel_radius=1, polygonalize=True, polygon_vertices=256)
        m = coarsen_mask(m0, aug, IDENTITY)
        assert np.all(m >= m0)

    def test_nonbinary_rejected(self):
        with pytest.raises(InputError):
            coarsen_mask(np.full((4, 4, 1), 0.5), MaskAugParams(), IDENTITY)


class TestGenerateDataset:
    def test_n_zero_empty_manifest(self, tmp_path, toy_sources):
        bgs, wms = toy_sources
        manifest = generate_dataset(bgs, wms, 0, 7, tmp_path / "d")
        assert manifest.read_text() == ""

    def test_deterministic_rerun_bitwise(self, tmp_path, toy_sources):
        bgs, wms = toy_sources
        out1, out2 = tmp_path / "d1", tmp_path / "d2"
        generate_dataset(bgs, wms, 4, 7, out1)
        generate_dataset(bgs, wms, 4, 7, out2)
        assert (out1 / "manifest.jsonl").read_bytes() == (out2 / "manifest.jsonl").read_bytes()
        for entry in load_manifest(out1):
            d1, d2 = out1 / entry["dir"], out2 / entry["dir"]
            for f in sorted(p.name for p in d1.iterdir()):
                assert filecmp.cmp(d1 / f, d2 / f, shallow=False), f"{entry['dir']}/{f}"

    def test_opaque_watermark_replaces_inside_mask(self, tmp_path):
        from conftest import make_source_images

        bgs, wms = make_source_images(tmp_path, opaque=True)
        out = tmp_path / "d"
        generate_dataset(
            bgs, wms, 4, 11, out,
            placement=PlacementConfig(opacity_range=(1.0, 1.0), identity_t=True, size=(48, 48)),
        )
        for entry in load_manifest(out):
            s = load_sample(out, entry)
            inside = s.M_0[:, :, 0] > 0
            assert inside.any()
            # opacity 1 inside the precise mask: X there is pure watermark,
            # which must differ from the background ground truth somewhere
            assert np.array_equal(s.X[~inside], s.G_wf[~inside])

    def test_outside_mask_equals_gwf_identity_t(self, tmp_path, toy_sources):
        bgs, wms = toy_sources
        out = tmp_path / "d"
        generate_dataset(
            bgs, wms, 3, 5, out, placement=PlacementConfig(identity_t=True, size=(48, 48))
        )
        for entry in load_manifest(out):
            s = load_sample(out, entry)
            outside = s.M_0[:, :, 0] == 0
            assert np.array_equal(s.X[outside], s.G_wf[outside])

    def test_empty_sources_rejected(self, tmp_path):
        with pytest.raises(InputError):
            generate_dataset([], [], 2, 1, tmp_path / "d")

    def test_unreadable_source_skipped(self, tmp_path, toy_sources):
        bgs, wms = toy_sources
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"not a png")
        manifest = generate_dataset([bad] + bgs, wms, 2, 3, tmp_path / "d")
        assert len(load_manifest(tmp_path / "d")) == 2
        assert manifest.exists()

    def test_roundtrip_metadata(self, tmp_path, toy_sources):
        bgs, wms = toy_sources
        out = tmp_path / "d"
        generate_dataset(bgs, wms, 1, 13, out)
        s = load_sample(out, load_manifest(out)[0])
        assert isinstance(s.distortion, DistortionParams)
        assert isinstance(s.mask_aug, MaskAugParams)
        assert s.X.shape == (256, 256, 3)
        assert s.M.shape == (256, 256, 1)
        assert set(np.unique(s.M)) <= {0.0, 1.0}
