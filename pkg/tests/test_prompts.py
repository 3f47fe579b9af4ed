import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resincam.imaging import BinaryMask, RasterImage
from resincam.prompts import (CLUSTER, FOREGROUND, BACKGROUND, OutOfBoundsError,
                              PromptGridConfig, PromptPoint, PromptSet,
                              compute_descriptor, dedup_prompts, generate_grid,
                              make_prompt, merge_custom_prompts,
                              prompts_from_json, prompts_to_json)

from conftest import mask_of, paint, solid


def greedy_oracle(descriptors, threshold):
    """Straight transcription of the greedy keep/drop scan."""
    kept = []
    for i, d in enumerate(descriptors):
        if not kept:
            kept.append(i)
            continue
        dmin = min(math.dist(d, descriptors[k]) for k in kept)
        if dmin > threshold:
            kept.append(i)
    return kept


class TestComputeDescriptor:
    def test_uniform(self):
        img = solid(9, 9, (10, 20, 30))
        assert compute_descriptor(img, 4, 4, 7) == (10.0, 20.0, 30.0)

    def test_k1_exact_pixel(self):
        img = paint(solid(5, 5, (0, 0, 0)), 2, 2, 2, 2, (7, 8, 9))
        assert compute_descriptor(img, 2, 2, 1) == (7.0, 8.0, 9.0)

    def test_three_pixel_mean(self):
        arr = np.array([[(0, 0, 0), (30, 30, 30), (60, 60, 60)]], dtype=np.uint8)
        img = RasterImage(arr)
        assert compute_descriptor(img, 1, 0, 3) == (30.0, 30.0, 30.0)

    def test_edge_clamp_oracle(self):
        # Window shrinks at the corner; oracle is a direct loop.
        arr = np.arange(5 * 5 * 3, dtype=np.int64).reshape(5, 5, 3) % 256
        img = RasterImage(arr.astype(np.uint8))
        got = compute_descriptor(img, 0, 0, 3)
        window = [img.pixel(x, y) for y in range(0, 2) for x in range(0, 2)]
        expected = tuple(sum(p[c] for p in window) / len(window) for c in range(3))
        assert got == pytest.approx(expected)

    def test_out_of_bounds(self):
        with pytest.raises(OutOfBoundsError):
            compute_descriptor(solid(4, 4, (0, 0, 0)), 4, 0, 3)

    def test_even_patch_rejected(self):
        with pytest.raises(ValueError):
            compute_descriptor(solid(4, 4, (0, 0, 0)), 0, 0, 2)


class TestGenerateGrid:
    def test_one_prompt_per_pixel(self):
        img = solid(16, 16, (50, 50, 50))
        cfg = PromptGridConfig(rows=16, cols=16)
        prompts = generate_grid(img, cfg, BinaryMask.full(16, 16, True))
        assert len(prompts) == 256
        assert [(p.x, p.y) for p in prompts[:3]] == [(0, 0), (1, 0), (2, 0)]
        assert (prompts[-1].x, prompts[-1].y) == (15, 15)

    def test_cell_centers(self):
        img = solid(32, 32, (50, 50, 50))
        cfg = PromptGridConfig(rows=2, cols=2)
        prompts = generate_grid(img, cfg, BinaryMask.full(32, 32, True))
        assert [(p.x, p.y) for p in prompts] == [(8, 8), (24, 8), (8, 24), (24, 24)]

    def test_all_masked_out(self):
        img = solid(8, 8, (50, 50, 50))
        assert generate_grid(img, PromptGridConfig(rows=4, cols=4), BinaryMask.full(8, 8, False)) == []

    def test_masked_centers_dropped(self):
        img = solid(8, 8, (50, 50, 50))
        fg = mask_of([[x >= 4 for x in range(8)] for _ in range(8)])
        prompts = generate_grid(img, PromptGridConfig(rows=2, cols=2), fg)
        # Centers (2,2),(6,2),(2,6),(6,6): only the right half survives.
        assert [(p.x, p.y) for p in prompts] == [(6, 2), (6, 6)]

    def test_count_bounded_by_grid(self, rng):
        img = RasterImage(rng.integers(0, 256, size=(20, 30, 3), dtype=np.uint8))
        fg = BinaryMask(rng.random((20, 30)) < 0.5)
        cfg = PromptGridConfig(rows=5, cols=7)
        prompts = generate_grid(img, cfg, fg)
        assert len(prompts) <= 35
        assert all(p.label == FOREGROUND for p in prompts)

    def test_dims_must_match(self):
        with pytest.raises(ValueError):
            generate_grid(solid(4, 4, (0, 0, 0)), PromptGridConfig(), BinaryMask.full(5, 5, True))


class TestDedup:
    def test_uniform_keeps_one(self):
        img = solid(16, 16, (80, 90, 100))
        prompts = generate_grid(img, PromptGridConfig(rows=4, cols=4), BinaryMask.full(16, 16, True))
        for threshold in (0.0, 1.0, 12.0, 441.68, 1e9):
            assert len(dedup_prompts(prompts, threshold).kept) == 1

    def test_two_tone_keeps_two(self):
        img = solid(16, 16, (0, 0, 0))
        img = paint(img, 8, 0, 15, 15, (255, 255, 255))
        cfg = PromptGridConfig(rows=2, cols=2, patch_size=1)
        prompts = generate_grid(img, cfg, BinaryMask.full(16, 16, True))
        result = dedup_prompts(prompts, 10.0)
        oracle = greedy_oracle([p.descriptor for p in prompts], 10.0)
        assert len(result.kept) == 2
        assert [prompts[i] for i in oracle] == list(result.kept)
        tones = sorted(p.descriptor[0] for p in result.kept)
        assert tones == [0.0, 255.0]

    def test_zero_threshold_distinct_keeps_all(self):
        prompts = [PromptPoint(i, 0, FOREGROUND, (float(i * 10), 0.0, 0.0)) for i in range(6)]
        assert len(dedup_prompts(prompts, 0.0).kept) == 6

    def test_empty_input(self):
        result = dedup_prompts([], 5.0)
        assert result.kept == () and result.generated_count == 0

    def test_generated_count(self):
        prompts = [PromptPoint(i, 0, FOREGROUND, (0.0, 0.0, 0.0)) for i in range(9)]
        result = dedup_prompts(prompts, 1.0)
        assert result.generated_count == 9
        assert len(result.kept) == 1

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValueError):
            dedup_prompts([], -1.0)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(*[st.floats(0, 255) for _ in range(3)]), min_size=1, max_size=40),
           st.floats(0, 120))
    def test_greedy_certificate(self, descriptors, threshold):
        prompts = [PromptPoint(i, 0, FOREGROUND, d) for i, d in enumerate(descriptors)]
        result = dedup_prompts(prompts, threshold)
        kept_idx = [p.x for p in result.kept]
        # Kept is an order-preserving subsequence containing the first prompt.
        assert kept_idx == sorted(kept_idx)
        assert kept_idx[0] == 0
        # Every kept prompt is far from all earlier kept; every dropped one
        # is close to some kept prompt that precedes it in scan order.
        for rank, i in enumerate(kept_idx):
            if rank > 0:
                dmin = min(math.dist(descriptors[i], descriptors[j]) for j in kept_idx[:rank])
                assert dmin > threshold
        for i in range(len(descriptors)):
            if i in kept_idx:
                continue
            earlier = [j for j in kept_idx if j < i]
            assert min(math.dist(descriptors[i], descriptors[j]) for j in earlier) <= threshold

    def test_matches_oracle_random(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 30))
            descs = [tuple(map(float, rng.uniform(0, 255, 3))) for _ in range(n)]
            threshold = float(rng.uniform(0, 200))
            prompts = [PromptPoint(i, 0, FOREGROUND, d) for i, d in enumerate(descs)]
            got = [p.x for p in dedup_prompts(prompts, threshold).kept]
            assert got == greedy_oracle(descs, threshold)


class TestClusterMode:
    def test_representative_is_nearest_to_mean(self):
        # One tight cluster {0, 10, 20} and an outlier at 200. The group
        # mean is 10, so the middle prompt represents the cluster.
        descs = [(0.0, 0.0, 0.0), (10.0, 0.0, 0.0), (20.0, 0.0, 0.0), (200.0, 0.0, 0.0)]
        prompts = [PromptPoint(i, 0, FOREGROUND, d) for i, d in enumerate(descs)]
        result = dedup_prompts(prompts, 15.0, mode=CLUSTER)
        assert [p.x for p in result.kept] == [1, 3]

    def test_scan_order_preserved(self):
        descs = [(200.0, 0.0, 0.0), (0.0, 0.0, 0.0), (201.0, 0.0, 0.0)]
        prompts = [PromptPoint(i, 0, FOREGROUND, d) for i, d in enumerate(descs)]
        result = dedup_prompts(prompts, 5.0, mode=CLUSTER)
        assert [p.x for p in result.kept] == sorted(p.x for p in result.kept)

    def test_config_flag(self):
        assert PromptGridConfig(dedup_mode=CLUSTER).dedup_mode == CLUSTER
        with pytest.raises(ValueError):
            PromptGridConfig(dedup_mode="other")


class TestMergeCustom:
    def test_empty_custom_identity(self):
        base = PromptSet(kept=(PromptPoint(0, 0),), generated_count=4)
        assert merge_custom_prompts(base, []) == base

    def test_customs_appended_last(self):
        base = PromptSet(kept=tuple(PromptPoint(i, 0) for i in range(5)), generated_count=8)
        custom = [PromptPoint(9, 9, BACKGROUND), PromptPoint(8, 8, FOREGROUND)]
        merged = merge_custom_prompts(base, custom)
        assert len(merged.kept) == 7
        assert list(merged.kept[5:]) == custom
        assert merged.generated_count == 8

    def test_custom_may_duplicate_kept_location(self):
        img = solid(6, 6, (100, 100, 100))
        base = PromptSet(kept=(make_prompt(img, 3, 3, FOREGROUND),), generated_count=1)
        dup = make_prompt(img, 3, 3, BACKGROUND)
        merged = merge_custom_prompts(base, [dup])
        assert len(merged.kept) == 2
        assert merged.kept[1].label == BACKGROUND

    def test_make_prompt_bounds(self):
        with pytest.raises(OutOfBoundsError):
            make_prompt(solid(4, 4, (0, 0, 0)), 0, 7, FOREGROUND)


class TestWireFormat:
    def test_round_trip(self):
        img = solid(10, 10, (1, 2, 3))
        prompts = [make_prompt(img, 1, 2, FOREGROUND), make_prompt(img, 3, 4, BACKGROUND)]
        doc = prompts_to_json(prompts)
        assert doc == [{"x": 1, "y": 2, "label": "fg"}, {"x": 3, "y": 4, "label": "bg"}]
        back = prompts_from_json(doc, img)
        assert [(p.x, p.y, p.label) for p in back] == [(1, 2, "fg"), (3, 4, "bg")]
        assert back[0].descriptor == (1.0, 2.0, 3.0)

    def test_bad_label(self):
        with pytest.raises(ValueError):
            PromptPoint(0, 0, "maybe")
