"""Window partition/merge, per-window clustering/reconstruction, RPE resizing."""

import numpy as np
import pytest

from tokcluster.clustering import ClusteringConfig, token_clustering
from tokcluster.grid import ClusterGrid, ParameterError, TokenGrid
from tokcluster.reconstruction import ReconstructionConfig, compute_relations, reconstruct
from tokcluster.windowed import (
    RpeTable,
    WindowBatch,
    interpolate_rpe_table,
    merge_windows,
    partition_windows,
    window_token_clustering,
    window_token_reconstruction,
)

from oracles import bilinear_scalar


def random_grid(rng, h, w, c):
    return TokenGrid(rng.standard_normal((h, w, c)).astype(np.float32))


class TestPartitionMerge:
    def test_full_grid_single_window(self):
        rng = np.random.default_rng(0)
        g = random_grid(rng, 4, 4, 2)
        batch = partition_windows(g, 4)
        assert len(batch.windows) == 1
        assert np.array_equal(batch.windows[0].data, g.data)

    def test_window_contents_by_definition(self):
        g = TokenGrid(np.arange(16, dtype=np.float32).reshape(4, 4, 1))
        batch = partition_windows(g, 2)
        assert len(batch.windows) == 4
        assert np.array_equal(batch.windows[0].data, g.data[0:2, 0:2])
        assert np.array_equal(batch.windows[1].data, g.data[0:2, 2:4])
        assert np.array_equal(batch.windows[2].data, g.data[2:4, 0:2])

    @pytest.mark.parametrize("size,window", [(4, 2), (6, 3), (8, 4), (16, 4), (12, 2), (16, 16)])
    def test_round_trip_identity(self, size, window):
        rng = np.random.default_rng(size * window)
        g = random_grid(rng, size, size, 3)
        merged = merge_windows(partition_windows(g, window))
        assert np.array_equal(merged.data, g.data)

    def test_merge_then_partition_identity(self):
        rng = np.random.default_rng(5)
        windows = tuple(random_grid(rng, 3, 3, 2) for _ in range(6))
        batch = WindowBatch(windows=windows, rows=2, cols=3)
        again = partition_windows(merge_windows(batch), 3)
        for a, b in zip(batch.windows, again.windows):
            assert np.array_equal(a.data, b.data)

    def test_merge_block_layout_by_index_arithmetic(self):
        rng = np.random.default_rng(6)
        windows = tuple(random_grid(rng, 2, 2, 1) for _ in range(4))
        batch = WindowBatch(windows=windows, rows=2, cols=2)
        merged = merge_windows(batch)
        for y in range(4):
            for x in range(4):
                win = windows[(y // 2) * 2 + (x // 2)]
                assert merged.data[y, x, 0] == win.data[y % 2, x % 2, 0]

    def test_single_window_batch(self):
        rng = np.random.default_rng(7)
        g = random_grid(rng, 3, 3, 2)
        batch = WindowBatch(windows=(g,), rows=1, cols=1)
        assert np.array_equal(merge_windows(batch).data, g.data)

    def test_empty_batch_rejected(self):
        with pytest.raises(ParameterError):
            WindowBatch(windows=(), rows=0, cols=0)

    def test_inconsistent_batch_rejected(self):
        rng = np.random.default_rng(8)
        with pytest.raises(ParameterError):
            WindowBatch(windows=(random_grid(rng, 2, 2, 1), random_grid(rng, 3, 3, 1)), rows=1, cols=2)

    def test_non_divisible_rejected(self):
        g = TokenGrid(np.zeros((5, 4, 1), dtype=np.float32))
        with pytest.raises(ParameterError):
            partition_windows(g, 2)


class TestWindowClustering:
    def test_same_size_kappa_zero_unchanged(self):
        rng = np.random.default_rng(9)
        g = random_grid(rng, 8, 8, 3)
        batch = partition_windows(g, 4)
        out = window_token_clustering(batch, 4, kappa=0)
        for a, b in zip(batch.windows, out.windows):
            assert np.array_equal(a.data, b.data)

    def test_constant_window_stays_constant(self):
        g = TokenGrid(np.full((4, 4, 2), 3.25, dtype=np.float32))
        batch = partition_windows(g, 4)
        out = window_token_clustering(batch, 2, kappa=3, tau=2.0)
        np.testing.assert_allclose(out.windows[0].data, 3.25, atol=1e-6)

    def test_equals_direct_clustering_per_window(self):
        rng = np.random.default_rng(10)
        g = random_grid(rng, 8, 8, 3)
        batch = partition_windows(g, 4)
        out = window_token_clustering(batch, 2, lambda_window=(3, 3), kappa=1, tau=5.0)
        cfg = ClusteringConfig(2, 2, lambda_h=3, lambda_w=3, kappa=1, tau=5.0)
        for win, clustered in zip(batch.windows, out.windows):
            direct, _ = token_clustering(win, cfg)
            assert np.array_equal(clustered.data, direct.data)

    def test_windows_do_not_exchange_information(self):
        rng = np.random.default_rng(11)
        g = random_grid(rng, 8, 8, 2)
        batch = partition_windows(g, 4)
        out_full = window_token_clustering(batch, 2, kappa=2, tau=4.0)
        # Rebuild one window in isolation; identical result.
        solo = WindowBatch(windows=(batch.windows[3],), rows=1, cols=1)
        out_solo = window_token_clustering(solo, 2, kappa=2, tau=4.0)
        assert np.array_equal(out_full.windows[3].data, out_solo.windows[0].data)


class TestWindowReconstruction:
    def test_identity_chain_per_window(self):
        rng = np.random.default_rng(12)
        g = random_grid(rng, 8, 8, 4)
        batch = partition_windows(g, 4)
        clustered = window_token_clustering(batch, 4, kappa=0)
        out = window_token_reconstruction(
            batch, clustered, clustered, ReconstructionConfig(k=1, tau=5.0)
        )
        merged = merge_windows(out)
        np.testing.assert_allclose(merged.data, g.data, atol=1e-6)

    def test_matches_plain_ops_per_window(self):
        rng = np.random.default_rng(13)
        g = random_grid(rng, 8, 8, 3)
        batch = partition_windows(g, 4)
        clustered = window_token_clustering(batch, 2, kappa=1, tau=3.0)
        refined = WindowBatch(
            windows=tuple(random_grid(rng, 2, 2, 3) for _ in range(4)), rows=2, cols=2
        )
        cfg = ReconstructionConfig(k=2, tau=3.0)
        out = window_token_reconstruction(batch, clustered, refined, cfg)
        for pre, cpre, ref, got in zip(
            batch.windows, clustered.windows, refined.windows, out.windows
        ):
            rel = compute_relations(pre, ClusterGrid(cpre.data), None, cfg)
            expected = reconstruct(rel, ClusterGrid(ref.data))
            assert np.array_equal(got.data, expected.data)

    def test_locality_mode(self):
        rng = np.random.default_rng(14)
        g = random_grid(rng, 8, 8, 3)
        batch = partition_windows(g, 4)
        clustered = window_token_clustering(batch, 2, lambda_window=(3, 3), kappa=1, tau=3.0)
        cfg = ReconstructionConfig(k=1, tau=3.0, candidate_mode="locality")
        out = window_token_reconstruction(batch, clustered, clustered, cfg, lambda_window=(3, 3))
        assert out.window_side == 4

    def test_layout_mismatch_rejected(self):
        rng = np.random.default_rng(15)
        g = random_grid(rng, 8, 8, 3)
        batch = partition_windows(g, 4)
        clustered = window_token_clustering(batch, 2, kappa=0)
        wrong = WindowBatch(windows=(clustered.windows[0],), rows=1, cols=1)
        with pytest.raises(ParameterError):
            window_token_reconstruction(batch, wrong, wrong, ReconstructionConfig(k=1, tau=1.0))


class TestRpeTable:
    def test_same_size_unchanged(self):
        rng = np.random.default_rng(16)
        table = RpeTable(values=rng.standard_normal((7, 7, 3)).astype(np.float32))
        out = interpolate_rpe_table(table, table.window_side)
        assert np.array_equal(out.values, table.values)

    def test_affine_table_resized_exactly_4_to_2(self):
        side = 7  # K=4
        vals = np.fromfunction(lambda i, j, h: 2.0 * i - j + 0.5, (side, side, 2), dtype=np.float64)
        out = interpolate_rpe_table(RpeTable(values=vals.astype(np.float32)), 2)
        assert out.side == 3
        scale = (side - 1) / 2.0
        expected = np.fromfunction(
            lambda i, j, h: 2.0 * i * scale - j * scale + 0.5, (3, 3, 2), dtype=np.float64
        )
        np.testing.assert_allclose(out.values, expected, atol=1e-6)

    def test_affine_table_resized_exactly_12_to_8(self):
        side = 23  # K=12
        vals = np.fromfunction(lambda i, j, h: 0.3 * i + 1.7 * j - 4.0, (side, side, 1), dtype=np.float64)
        out = interpolate_rpe_table(RpeTable(values=vals.astype(np.float32)), 8)
        assert out.side == 15
        scale = (side - 1) / 14.0
        expected = np.fromfunction(
            lambda i, j, h: 0.3 * i * scale + 1.7 * j * scale - 4.0, (15, 15, 1), dtype=np.float64
        )
        np.testing.assert_allclose(out.values, expected, rtol=1e-5, atol=1e-6)

    def test_random_table_matches_scalar_oracle(self):
        rng = np.random.default_rng(17)
        table = RpeTable(values=rng.standard_normal((7, 7, 2)).astype(np.float32))
        out = interpolate_rpe_table(table, 3)  # side 7 -> 5
        expected = bilinear_scalar(table.values, 5, 5, True)
        np.testing.assert_allclose(out.values, expected, atol=1e-6)

    def test_center_entry_preserved(self):
        rng = np.random.default_rng(18)
        for big, small in [(4, 2), (12, 8), (6, 3), (9, 5)]:
            table = RpeTable(values=rng.standard_normal((2 * big - 1, 2 * big - 1, 2)).astype(np.float32))
            out = interpolate_rpe_table(table, small)
            np.testing.assert_allclose(
                out.values[small - 1, small - 1], table.values[big - 1, big - 1], atol=1e-7
            )

    def test_validation(self):
        with pytest.raises(ParameterError):
            RpeTable(values=np.zeros((4, 4, 1), dtype=np.float32))  # even side
        with pytest.raises(ParameterError):
            RpeTable(values=np.zeros((3, 5, 1), dtype=np.float32))  # not square
        table = RpeTable(values=np.zeros((7, 7, 1), dtype=np.float32))
        with pytest.raises(ParameterError):
            interpolate_rpe_table(table, 5)  # k > K
