import math

import numpy as np
import pytest
import torch

from demark.blocks import (
    ConvFeatureBlock,
    ConventionalAttention,
    ConvFusion,
    Decoder,
    Encoder,
    FFCBlock,
    GatedFusionModule,
    PatchDiscriminator,
    SpectralTransform,
    TransposedAttention,
    make_feature_block,
)
from demark.errors import InputError

from oracles import (
    directional_fd_check,
    gfm_naive,
    spectral_transform_naive,
    transposed_attention_naive,
)

torch.manual_seed(0)


def np_of(t):
    return t.detach().numpy().astype(np.float64)


class TestEncoder:
    def test_shape_256(self):
        enc = Encoder(4, 128, 5)
        y = enc(torch.randn(1, 4, 256, 256))
        assert y.shape == (1, 128, 8, 8)

    def test_shape_64(self):
        enc = Encoder(5, 32, 5)
        y = enc(torch.randn(1, 5, 64, 64))
        assert y.shape == (1, 32, 2, 2)

    def test_zero_input_zero_bias_gives_zero(self):
        enc = Encoder(4, 32, 5)
        with torch.no_grad():
            for m in enc.modules():
                if isinstance(m, torch.nn.Conv2d) and m.bias is not None:
                    m.bias.zero_()
        y = enc(torch.zeros(1, 4, 64, 64))
        assert torch.all(y == 0)

    def test_indivisible_rejected(self):
        with pytest.raises(InputError):
            Encoder(3, 16, 5)(torch.randn(1, 3, 48, 48))

    @pytest.mark.parametrize("size", [32, 64, 96, 128, 256])
    def test_shape_rule_across_sizes(self, size):
        enc = Encoder(4, 8, 5)
        y = enc(torch.randn(1, 4, size, size))
        assert y.shape == (1, 8, size // 32, size // 32)


class TestDecoder:
    @pytest.mark.parametrize("size", [32, 64, 96, 128, 256])
    def test_mirror_shape_and_range(self, size):
        dec = Decoder(8, 3, 5)
        y = dec(torch.randn(1, 8, size // 32, size // 32))
        assert y.shape == (1, 3, size, size)
        assert y.min() >= 0 and y.max() <= 1


class TestFeatureBlockShapeRule:
    # feature blocks run at h' = h/32; enumerate the reduced sizes that the
    # {32, 64, 96, 128, 256} image sizes produce
    @pytest.mark.parametrize("hp", [1, 2, 3, 4, 8])
    @pytest.mark.parametrize(
        "factory", [lambda: TransposedAttention(8), lambda: FFCBlock(8, 0.5)]
    )
    def test_shape_preserving(self, factory, hp):
        blk = factory()
        x = torch.randn(1, 8, hp, hp)
        out = blk(x)
        if isinstance(out, tuple):
            out = out[0]
        assert out.shape == x.shape


class TestTransposedAttention:
    def test_zero_v_keeps_input(self):
        ta = TransposedAttention(4)
        with torch.no_grad():
            # zero the value third of both projections and the project bias
            ta.to_qkv.weight[8:].zero_()
            ta.to_qkv.bias[8:].zero_()
            ta.dconv.weight[8:].zero_()
            ta.dconv.bias[8:].zero_()
            torch.nn.init.normal_(ta.project.weight)  # nonzero on purpose
            ta.project.bias.zero_()
        x = torch.randn(2, 4, 6, 6)
        y, _ = ta(x)
        assert torch.allclose(y, x, atol=1e-7)

    def test_rows_of_s_sum_to_one(self):
        ta = TransposedAttention(8, heads=2)
        _, internals = ta(torch.randn(3, 8, 5, 7))
        sums = internals.S.sum(dim=-1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-5)

    def test_hand_case_1x1_d2(self):
        # 1x1 spatial, d=2: the whole block reduces to 2x2 matrix arithmetic
        ta = TransposedAttention(2).double()
        f1, f2 = 0.7, -0.3
        with torch.no_grad():
            ta.to_qkv.weight.copy_(torch.eye(2).repeat(3, 1).reshape(6, 2, 1, 1))
            ta.to_qkv.bias.zero_()
            ta.dconv.weight.zero_()
            ta.dconv.weight[:, 0, 1, 1] = 1.0  # center tap passthrough
            ta.dconv.bias.zero_()
            ta.project.weight.copy_(torch.eye(2).reshape(2, 2, 1, 1))
            ta.project.bias.zero_()
        x = torch.tensor([f1, f2], dtype=torch.float64).reshape(1, 2, 1, 1)
        y, internals = ta(x)

        alpha = math.sqrt(2.0)
        logits = np.array([[f1 * f1, f1 * f2], [f2 * f1, f2 * f2]]) / alpha
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        S = e / e.sum(axis=1, keepdims=True)
        attn = np.array([f1, f2]) @ S  # unfold(V) @ S with HW == 1
        want = np.array([f1, f2]) + attn
        assert np.allclose(y.detach().numpy().ravel(), want, atol=1e-12)
        assert np.allclose(internals.S.detach().numpy()[0], S, atol=1e-12)

    def test_matches_naive_oracle(self):
        ta = TransposedAttention(4).double()
        x = torch.randn(1, 4, 5, 6, dtype=torch.float64)
        y, _ = ta(x)
        want = transposed_attention_naive(
            np_of(x[0]),
            np_of(ta.to_qkv.weight), np_of(ta.to_qkv.bias),
            np_of(ta.dconv.weight), np_of(ta.dconv.bias),
            np_of(ta.project.weight), np_of(ta.project.bias),
            alpha=float(ta.alpha),
        )
        assert np.allclose(np_of(y[0]), want, atol=1e-6)

    def test_linear_cost_structure(self):
        # the correlation map is d x d: no (h'w')^2 tensor is materialized
        ta = TransposedAttention(4)
        _, internals = ta(torch.randn(1, 4, 12, 9))
        assert internals.S.shape == (1, 4, 4)
        assert internals.q.shape == (1, 12 * 9, 4)


class TestGFM:
    def test_zero_init_is_identity(self):
        gfm = GatedFusionModule(8, n_sources=3)
        f_inp = torch.randn(2, 8, 4, 4)
        out, _ = gfm(f_inp, torch.randn(2, 8, 4, 4), torch.randn(2, 8, 4, 4))
        assert torch.equal(out, f_inp)

    def test_closed_gate_is_identity(self):
        gfm = GatedFusionModule(4, n_sources=3)
        with torch.no_grad():
            torch.nn.init.normal_(gfm.project_out.weight)
            gfm.project_out.bias.zero_()
            # zero the gate half so G == 0 -> GELU(0) == 0
            gfm.project_in.weight[:4].zero_()
            gfm.project_in.bias[:4].zero_()
            gfm.dconv.weight[:4].zero_()
            gfm.dconv.bias[:4].zero_()
        f_inp = torch.randn(1, 4, 5, 5)
        out, internals = gfm(f_inp, torch.randn(1, 4, 5, 5), torch.randn(1, 4, 5, 5))
        assert torch.all(internals.G == 0)
        assert torch.allclose(out, f_inp, atol=1e-7)

    def test_hand_case_matches_oracle(self):
        gfm = GatedFusionModule(2, n_sources=3).double()
        with torch.no_grad():
            for p in gfm.parameters():
                p.copy_(torch.randn_like(p) * 0.5)
        f_inp = torch.randn(1, 2, 1, 1, dtype=torch.float64)
        f_wcc = torch.randn(1, 2, 1, 1, dtype=torch.float64)
        f_bce = torch.randn(1, 2, 1, 1, dtype=torch.float64)
        out, _ = gfm(f_inp, f_wcc, f_bce)
        want = gfm_naive(
            np_of(f_inp[0]), [np_of(f_wcc[0]), np_of(f_bce[0])],
            np_of(gfm.project_in.weight), np_of(gfm.project_in.bias),
            np_of(gfm.dconv.weight), np_of(gfm.dconv.bias),
            np_of(gfm.project_out.weight), np_of(gfm.project_out.bias),
        )
        assert np.allclose(np_of(out[0]), want, atol=1e-9)

    def test_general_case_matches_oracle(self):
        gfm = GatedFusionModule(4, n_sources=3).double()
        with torch.no_grad():
            for p in gfm.parameters():
                p.copy_(torch.randn_like(p) * 0.3)
        f_inp = torch.randn(1, 4, 6, 5, dtype=torch.float64)
        f_wcc = torch.randn(1, 4, 6, 5, dtype=torch.float64)
        f_bce = torch.randn(1, 4, 6, 5, dtype=torch.float64)
        out, _ = gfm(f_inp, f_wcc, f_bce)
        want = gfm_naive(
            np_of(f_inp[0]), [np_of(f_wcc[0]), np_of(f_bce[0])],
            np_of(gfm.project_in.weight), np_of(gfm.project_in.bias),
            np_of(gfm.dconv.weight), np_of(gfm.dconv.bias),
            np_of(gfm.project_out.weight), np_of(gfm.project_out.bias),
        )
        assert np.allclose(np_of(out[0]), want, atol=1e-6)

    def test_shape_mismatch_rejected(self):
        gfm = GatedFusionModule(4, n_sources=3)
        with pytest.raises(InputError):
            gfm(torch.randn(1, 4, 4, 4), torch.randn(1, 4, 2, 2), torch.randn(1, 4, 4, 4))


class TestFFC:
    def test_shape_preserved(self):
        blk = FFCBlock(128, 0.5)
        y = blk(torch.randn(1, 128, 8, 8))
        assert y.shape == (1, 128, 8, 8)

    def test_constant_input_spectrum_at_dc_only(self):
        x = torch.full((1, 2, 8, 8), 0.37)
        spec = torch.fft.rfft2(x, norm="ortho")
        mags = spec.abs()
        assert mags[0, 0, 0, 0] > 0
        off_dc = mags.clone()
        off_dc[:, :, 0, 0] = 0
        assert off_dc.max() < 1e-5
        roundtrip = torch.fft.irfft2(spec, s=(8, 8), norm="ortho")
        assert torch.allclose(roundtrip, x, atol=1e-5)

    def test_spectral_path_matches_naive_dft(self):
        st = SpectralTransform(8).double()
        x = torch.randn(1, 8, 4, 4, dtype=torch.float64)
        got = st(x)
        want = spectral_transform_naive(np_of(x[0]), np_of(st.conv.weight), np_of(st.conv.bias))
        assert np.allclose(np_of(got[0]), want, atol=1e-6)


class TestDiscriminator:
    def test_score_map_shape(self):
        d = PatchDiscriminator()
        y = d(torch.randn(1, 3, 256, 256))
        assert y.shape == (1, 1, 16, 16)

    def test_scores_in_open_interval(self):
        d = PatchDiscriminator()
        y = d(torch.randn(2, 3, 64, 64) * 50)
        assert y.min() > 0 and y.max() < 1

    def test_zero_head_gives_half(self):
        d = PatchDiscriminator()
        with torch.no_grad():
            d.head.weight.zero_()
            d.head.bias.zero_()
        y = d(torch.randn(1, 3, 64, 64))
        assert torch.allclose(y, torch.full_like(y, 0.5))

    def test_feature_stages_exposed(self):
        d = PatchDiscriminator()
        scores, feats = d.forward_with_features(torch.randn(1, 3, 64, 64))
        assert len(feats) == 4
        assert feats[0].shape[-1] == 32 and feats[-1].shape[-1] == 4


class TestAblationBlocks:
    @pytest.mark.parametrize("kind", ["transposed", "conventional", "conv3", "conv7", "dconv5d3"])
    def test_all_kinds_shape_preserving(self, kind):
        blk = make_feature_block(kind, 8)
        x = torch.randn(1, 8, 4, 4)
        y, _ = blk(x)
        assert y.shape == x.shape

    def test_conv_fusion_zero_init_identity(self):
        fusion = ConvFusion(4, n_sources=3)
        f_inp = torch.randn(1, 4, 4, 4)
        out, _ = fusion(f_inp, torch.randn(1, 4, 4, 4), torch.randn(1, 4, 4, 4))
        assert torch.equal(out, f_inp)


class TestGradients:
    """Analytic parameter grads vs central differences, double precision."""

    @pytest.mark.parametrize(
        "factory,in_shape",
        [
            (lambda: TransposedAttention(4), (1, 4, 8, 8)),
            (lambda: ConventionalAttention(4), (1, 4, 8, 8)),
            (lambda: ConvFeatureBlock(4, 3), (1, 4, 8, 8)),
            (lambda: FFCBlock(4, 0.5), (1, 4, 8, 8)),
            (lambda: Encoder(4, 4, 1), (1, 4, 8, 8)),
            (lambda: Decoder(4, 3, 1), (1, 4, 8, 8)),
            (lambda: PatchDiscriminator(3, base=4, n_stages=2), (1, 3, 8, 8)),
        ],
    )
    def test_block_param_gradients(self, factory, in_shape):
        torch.manual_seed(7)
        blk = factory().double()
        with torch.no_grad():  # zero-init projections would hide gradient bugs
            for p in blk.parameters():
                if not p.abs().sum():
                    p.copy_(torch.randn_like(p) * 0.1)
        x = torch.randn(*in_shape, dtype=torch.float64)

        def loss_fn():
            out = blk(x)
            if isinstance(out, tuple):
                out = out[0]
            return (out * weights).sum()

        weights = torch.randn(1, dtype=torch.float64)  # fixed scalar mix
        results = directional_fd_check(loss_fn, list(blk.named_parameters()))
        for name, analytic, fd, rel in results:
            assert rel < 1e-3, f"{name}: analytic={analytic} fd={fd} rel={rel}"

    def test_gfm_param_gradients(self):
        torch.manual_seed(8)
        gfm = GatedFusionModule(4, n_sources=3).double()
        with torch.no_grad():
            for p in gfm.parameters():
                if not p.abs().sum():
                    p.copy_(torch.randn_like(p) * 0.1)
        a = torch.randn(1, 4, 8, 8, dtype=torch.float64)
        b = torch.randn(1, 4, 8, 8, dtype=torch.float64)
        c = torch.randn(1, 4, 8, 8, dtype=torch.float64)

        def loss_fn():
            out, _ = gfm(a, b, c)
            return out.pow(2).sum()

        for name, analytic, fd, rel in directional_fd_check(loss_fn, list(gfm.named_parameters())):
            assert rel < 1e-3, f"{name}: rel={rel}"
