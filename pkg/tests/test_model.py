"""Disentangler: encoder, activation head, fg/bg split."""

import numpy as np
import pytest
import torch

from c2am.model import (
    ActivationHead,
    C2AMNet,
    FeatureDirEncoder,
    SmallEncoder,
    disentangle,
    disentangle_batch,
    encode,
    init_activation_head,
)
from c2am.tensorio import write_tensor


class TestEncoder:
    def test_zero_image_zero_bias_gives_zero_features(self):
        """Zero input through the linear+ReLU stack with zero biases stays zero."""
        enc = SmallEncoder()
        enc.eval()  # batch-norm uses its init running stats (mean 0, var 1)
        with torch.no_grad():
            z = enc(torch.zeros(1, 3, 64, 64))
        assert torch.all(z == 0)

    def test_output_nonnegative(self):
        enc = SmallEncoder()
        enc.eval()
        with torch.no_grad():
            z = enc(torch.randn(2, 3, 64, 64))
        assert torch.all(z >= 0)

    def test_stride_and_shape(self):
        enc = SmallEncoder()
        assert enc.stride == 16
        with torch.no_grad():
            z = enc(torch.randn(1, 3, 64, 64))
        assert z.shape == (1, enc.out_channels, 4, 4)

    def test_deterministic_forward(self):
        torch.manual_seed(0)
        enc = SmallEncoder()
        enc.eval()
        x = torch.randn(2, 3, 64, 64)
        with torch.no_grad():
            a = enc(x)
            b = enc(x)
        assert torch.equal(a, b)

    def test_shape_mismatch_rejected(self):
        enc = SmallEncoder()
        with pytest.raises(ValueError, match="expected"):
            enc(torch.randn(1, 4, 64, 64))

    def test_local_receptive_field(self):
        """A cell's features depend only on its own stride x stride block."""
        torch.manual_seed(1)
        enc = SmallEncoder()
        enc.eval()
        x = torch.rand(1, 3, 64, 64)
        y = x.clone()
        y[:, :, 16:32, 16:32] = 0  # clobber block (1, 1) only
        with torch.no_grad():
            za, zb = enc(x), enc(y)
        diff = (za - zb).abs().sum(dim=1)[0]  # (4, 4)
        changed = diff > 1e-9
        assert changed[1, 1]
        changed[1, 1] = False
        assert not changed.any()


class TestActivationHead:
    def test_zero_weights_give_half(self):
        """Zero conv and identity normalization pin every output at sigmoid(0)."""
        head = ActivationHead(8)
        torch.nn.init.zeros_(head.conv.weight)
        head.eval()
        with torch.no_grad():
            p = head(torch.zeros(1, 8, 4, 4))
        assert torch.all(p == 0.5)

    def test_range_and_shape_preserved(self):
        head = ActivationHead(16)
        init_activation_head(head, "normal")
        head.eval()
        with torch.no_grad():
            p = head(torch.randn(3, 16, 5, 7) * 100)
        assert p.shape == (3, 1, 5, 7)
        assert p.min() >= 0.0 and p.max() <= 1.0

    def test_eval_mode_reproducible(self):
        torch.manual_seed(2)
        head = ActivationHead(8)
        head.eval()
        z = torch.rand(2, 8, 4, 4)
        with torch.no_grad():
            assert torch.equal(head(z), head(z))

    def test_channel_mismatch(self):
        head = ActivationHead(8)
        with pytest.raises(ValueError, match="channels"):
            head(torch.randn(1, 9, 4, 4))

    def test_init_schemes(self):
        head = ActivationHead(8)
        for scheme in ("kaiming_normal", "kaiming_uniform", "normal", "uniform"):
            init_activation_head(head, scheme)
            assert head.bn.weight.item() == 1.0 and head.bn.bias.item() == 0.0
            assert torch.all(head.conv.bias == 0)
        with pytest.raises(ValueError, match="unknown init"):
            init_activation_head(head, "orthogonal")


class TestDisentangle:
    Z = torch.tensor([[1.0, 2.0, 3.0, 4.0], [0.0, 1.0, 0.0, 1.0]]).reshape(2, 2, 2)

    def test_all_ones_map_selects_everything(self):
        rep = disentangle(self.Z, torch.ones(1, 2, 2))
        assert rep.v_f.tolist() == [10.0, 2.0]
        assert rep.v_b.tolist() == [0.0, 0.0]

    def test_half_map_symmetry(self):
        rep = disentangle(self.Z, torch.full((1, 2, 2), 0.5))
        assert rep.v_f.tolist() == [5.0, 1.0]
        assert rep.v_b.tolist() == [5.0, 1.0]

    def test_single_pixel_map(self):
        p = torch.tensor([1.0, 0.0, 0.0, 0.0]).reshape(1, 2, 2)
        rep = disentangle(self.Z, p)
        assert rep.v_f.tolist() == [1.0, 0.0]
        assert rep.v_b.tolist() == [9.0, 2.0]

    def test_spatial_mismatch(self):
        with pytest.raises(ValueError, match="spatial mismatch"):
            disentangle(self.Z, torch.ones(1, 3, 2))

    def test_sum_identity_random_shapes(self):
        """v_f + v_b equals the per-channel spatial sum, any shape."""
        rng = np.random.default_rng(20)
        for _ in range(50):
            c, h, w = rng.integers(1, 9), rng.integers(1, 9), rng.integers(1, 9)
            z = torch.tensor(rng.uniform(0, 5, (int(c), int(h), int(w))))
            p = torch.tensor(rng.uniform(0, 1, (int(h), int(w))))
            rep = disentangle(z, p)
            spatial_sum = z.sum(dim=(1, 2))
            np.testing.assert_allclose(
                (rep.v_f + rep.v_b).numpy(), spatial_sum.numpy(), rtol=1e-6
            )

    def test_linear_in_features(self):
        rng = np.random.default_rng(21)
        z = torch.tensor(rng.uniform(0, 1, (3, 4, 4)))
        p = torch.tensor(rng.uniform(0, 1, (4, 4)))
        rep1 = disentangle(z, p)
        rep2 = disentangle(2.5 * z, p)
        np.testing.assert_allclose(rep2.v_f.numpy(), 2.5 * rep1.v_f.numpy(), rtol=1e-6)
        np.testing.assert_allclose(rep2.v_b.numpy(), 2.5 * rep1.v_b.numpy(), rtol=1e-6)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(22)
        z = torch.tensor(rng.uniform(0, 1, (4, 3, 2, 2)))
        p = torch.tensor(rng.uniform(0, 1, (4, 1, 2, 2)))
        v_f, v_b = disentangle_batch(z, p)
        for i in range(4):
            rep = disentangle(z[i], p[i])
            np.testing.assert_allclose(v_f[i].numpy(), rep.v_f.numpy(), atol=1e-12)
            np.testing.assert_allclose(v_b[i].numpy(), rep.v_b.numpy(), atol=1e-12)

    def test_nonnegative_given_nonnegative_features(self):
        rng = np.random.default_rng(23)
        z = torch.tensor(rng.uniform(0, 3, (2, 3, 3)))
        p = torch.tensor(rng.uniform(0, 1, (3, 3)))
        rep = disentangle(z, p)
        assert torch.all(rep.v_f >= 0) and torch.all(rep.v_b >= 0)


class TestEncodeHandles:
    def test_builtin_encode_returns_feature_maps(self):
        torch.manual_seed(3)
        net = C2AMNet()
        net.eval()
        with torch.no_grad():
            fmaps = encode(torch.rand(2, 3, 64, 64), net)
        assert len(fmaps) == 2
        assert fmaps[0].stride == 16
        assert fmaps[0].data.shape == (net.encoder.out_channels, 4, 4)

    def test_feature_dir_passthrough_bit_identical(self, tmp_path):
        rng = np.random.default_rng(24)
        stored = rng.standard_normal((8, 4, 4)).astype(np.float32)
        write_tensor(tmp_path / "img_0.c2am", stored)
        handle = FeatureDirEncoder(tmp_path, image_size=64)
        assert handle.stride == 16 and handle.out_channels == 8
        fmaps = encode(None, handle, ids=["img_0"])
        assert np.array_equal(fmaps[0].data.numpy(), stored)

    def test_feature_dir_missing_file(self, tmp_path):
        write_tensor(tmp_path / "img_0.c2am", np.zeros((4, 4, 4), dtype=np.float32))
        handle = FeatureDirEncoder(tmp_path, image_size=64)
        with pytest.raises(FileNotFoundError, match="img_9"):
            handle.load("img_9")

    def test_feature_dir_empty(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="no .c2am"):
            FeatureDirEncoder(tmp_path, image_size=64)


class TestC2AMNet:
    def test_full_forward_contract(self):
        torch.manual_seed(4)
        net = C2AMNet()
        net.eval()
        with torch.no_grad():
            z, p = net(torch.rand(2, 3, 64, 64))
        assert z.shape == (2, 64, 4, 4) and p.shape == (2, 1, 4, 4)
        assert torch.all(z >= 0)
        assert p.min() >= 0 and p.max() <= 1
