import os
import sys
import unittest

import torch
import torch.nn as nn

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "modules")))

from align import (  # noqa: E402
    Aligner,
    AlignVariant,
    DfConvBlock,
    DfLayer,
    FeatureExtractor,
    LocalFusion,
    align_all,
    dfconv_block,
    extract_features,
    fuse_local,
)
from errors import ConfigError, DimensionError  # noqa: E402
from nn_blocks import ConvParams, conv2d  # noqa: E402


def count(module):
    return sum(p.numel() for p in module.parameters())


def randomize_offsets(block, scale=0.05, seed=0):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for layer in (block.df1, block.df2):
            layer.offset_proj.weight.copy_(torch.randn(layer.offset_proj.weight.shape, generator=g) * scale)


class TestFeatureExtraction(unittest.TestCase):
    def test_stack_shapes(self):
        extractor = FeatureExtractor(16, 2)
        stack = extract_features(torch.rand(1, 5, 3, 12, 10), extractor)
        self.assertEqual(len(stack), 5)
        for fea in stack:
            self.assertEqual(fea.shape, (1, 16, 12, 10))

    def test_full_size_shapes_and_count(self):
        extractor = FeatureExtractor(64, 5)
        self.assertEqual(count(extractor), 3 * 64 * 9 + 64 + 5 * (2 * (64 * 64 * 9 + 64)))
        pictures = [torch.rand(1, 3, 16, 20) for _ in range(5)]
        self.assertEqual(extract_features(pictures, extractor)[0].shape, (1, 64, 16, 20))

    def test_zero_input_zero_bias(self):
        extractor = FeatureExtractor(8, 5)
        for m in extractor.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.zeros_(m.bias)
        stack = extract_features(torch.zeros(2, 5, 3, 6, 6), extractor)
        self.assertTrue(all(torch.all(fea == 0) for fea in stack))

    def test_channel_check(self):
        with self.assertRaises(DimensionError):
            extract_features(torch.rand(1, 5, 4, 6, 6), FeatureExtractor(8, 1))
        with self.assertRaises(DimensionError):
            extract_features(torch.rand(1, 4, 3, 6, 6), FeatureExtractor(8, 1))


class TestDfConvBlock(unittest.TestCase):
    def test_offset_projection_width(self):
        self.assertEqual(DfLayer(64, 8).offset_proj.out_channels, 144)
        with self.assertRaises(ConfigError):
            DfLayer(64, 7)

    def test_output_shape(self):
        block = DfConvBlock(16, 8)
        fea = torch.rand(2, 16, 7, 9)
        self.assertEqual(block(fea, torch.rand(2, 16, 7, 9)).shape, fea.shape)

    def test_zero_offsets_reduce_to_convolution(self):
        block = DfConvBlock(16, 8)
        fea_ref, fea_i = torch.rand(1, 16, 6, 8), torch.rand(1, 16, 6, 8)
        expected = conv2d(fea_i, ConvParams.of(block.df2.conv))
        diff = (dfconv_block(fea_ref, fea_i, block) - expected).abs().max().item()
        self.assertLess(diff, 1e-5)

    def test_dfres_adds_support_features(self):
        dfconv = DfConvBlock(16, 8, AlignVariant.DFCONV)
        randomize_offsets(dfconv)
        dfres = DfConvBlock(16, 8, "DfRes")
        dfres.load_state_dict(dfconv.state_dict())
        fea_ref, fea_i = torch.rand(1, 16, 6, 8), torch.rand(1, 16, 6, 8)
        torch.testing.assert_close(dfres(fea_ref, fea_i) - dfconv(fea_ref, fea_i), fea_i)

    def test_df_variant_has_no_middle_conv(self):
        self.assertFalse(hasattr(DfConvBlock(16, 8, "Df"), "mid_conv"))
        self.assertEqual(count(DfConvBlock(16, 8, "Df")) + 16 * 16 * 9 + 16, count(DfConvBlock(16, 8)))

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            dfconv_block(torch.rand(1, 16, 6, 8), torch.rand(1, 16, 6, 6), DfConvBlock(16, 8))


class TestAlignAll(unittest.TestCase):
    def test_reference_passthrough_and_order(self):
        aligner = Aligner(16, 4, 8)
        stack = [torch.rand(1, 16, 5, 6) for _ in range(5)]
        before = [fea.clone() for fea in stack]
        aligned = align_all(stack, aligner)
        self.assertIs(aligned[2], stack[2])
        self.assertEqual(len(aligned), 5)
        for fea, original in zip(stack, before):
            self.assertTrue(torch.equal(fea, original))
        for out in aligned:
            self.assertEqual(out.shape, (1, 16, 5, 6))

    def test_four_distinct_blocks(self):
        aligner = Aligner(16, 4, 8)
        blocks = [aligner.block_for(position) for position in (0, 1, 3, 4)]
        self.assertEqual(len({id(b) for b in blocks}), 4)
        self.assertEqual(len(aligner.blocks), 4)

    def test_shared_block(self):
        aligner = Aligner(16, 1, 8)
        self.assertIs(aligner.block_for(0), aligner.block_for(4))

    def test_block_count_range(self):
        for bad in (0, 5):
            with self.assertRaises(ConfigError):
                Aligner(16, bad, 8)


class TestLocalFusion(unittest.TestCase):
    def test_shape_and_count(self):
        fusion = LocalFusion(64)
        self.assertEqual(count(fusion), 320 * 64 + 64)
        out = fuse_local([torch.rand(1, 64, 4, 5) for _ in range(5)], fusion)
        self.assertEqual(out.shape, (1, 64, 4, 5))

    def test_zero_features(self):
        fusion = LocalFusion(8)
        nn.init.zeros_(fusion.conv.bias)
        self.assertTrue(torch.all(fusion([torch.zeros(1, 8, 3, 3)] * 5) == 0))

    def test_mismatch(self):
        with self.assertRaises(DimensionError):
            fuse_local([torch.rand(1, 8, 3, 3)] * 4, LocalFusion(8))


if __name__ == "__main__":
    unittest.main()
