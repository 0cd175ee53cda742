import pytest

from tdpp.core import Arch, ConfigError, LayerSpec, ModelDescriptor, SystemConfig
from tdpp.overhead import (
    CostTable,
    OverheadGrid,
    baseline_wang_counts,
    baseline_zou_counts,
    compare,
    crossbar_cells,
    tdpp_counts,
)


class TestTdppCounts:
    def test_full_block_module(self):
        cfg = SystemConfig(arch=Arch.CONFIG1, bn_ports=256, seed=0)
        switches, key_bits, index_bits, instances = tdpp_counts(cfg)
        assert switches == 1920
        assert key_bits == 1920
        assert instances == 1

    def test_reduced_module(self):
        cfg = SystemConfig(arch=Arch.CONFIG1, bn_ports=16, seed=0)
        switches, key_bits, _, _ = tdpp_counts(cfg)
        assert switches == 16 * 56 == 896
        assert key_bits == 896

    def test_per_tile_instances(self):
        cfg = SystemConfig(arch=Arch.CONFIG2, bn_ports=16, tile_count=20, seed=0)
        *_, instances = tdpp_counts(cfg)
        assert instances == 20

    def test_index_bits_bounded_by_two_vectors_per_tile(self):
        cfg = SystemConfig(arch=Arch.CONFIG2, bn_ports=16, tile_count=20, seed=0)
        _, _, index_bits, _ = tdpp_counts(cfg)
        assert index_bits == 2 * 256 * 20
        desc = ModelDescriptor(
            (LayerSpec(kind="fc", m=64, n=10, activation="none"),)
        )
        _, _, used_bits, _ = tdpp_counts(cfg, desc)
        assert used_bits == 2 * 256  # one occupied tile


class TestBaselineCounts:
    def test_zou_documented_values(self):
        mux_units, key_bits = baseline_zou_counts(16, pairs=1)
        assert mux_units == 48  # 32 muxes + 16 demuxes per pair
        assert key_bits == 16 * 3 * 4 * 16 == 3072

    def test_zou_degenerate_full_activation(self):
        _, key_bits = baseline_zou_counts(256, pairs=1)
        assert key_bits == 0

    def test_wang_documented_values(self):
        counts = baseline_wang_counts(16, pairs=1)
        assert counts is not None
        mux_units, key_bits = counts
        assert mux_units == 2
        assert key_bits == 256 * 4 + 4 * 2 * 16 == 1152

    def test_wang_high_activation(self):
        counts = baseline_wang_counts(128, pairs=1)
        assert counts is not None
        assert counts[1] == 256 * 1 + 1 * 2 * 2 == 260

    def test_wang_not_applicable(self):
        assert baseline_wang_counts(1, pairs=1) is None
        assert baseline_wang_counts(256, pairs=1) is None

    def test_wang_key_bits_strictly_decrease(self):
        values = [baseline_wang_counts(x, 1)[1] for x in (2, 4, 8, 16, 32, 64, 128)]
        assert values == sorted(values, reverse=True)
        assert len(set(values)) == len(values)

    def test_divisibility(self):
        with pytest.raises(ConfigError):
            baseline_zou_counts(3, pairs=1)


class TestCrossbarCells:
    def test_formula(self):
        # tiles x PEs x pairs x two crossbars x C^2
        assert crossbar_cells(20, 8, 1, 256) == 20 * 8 * 8 * 2 * 256 * 256
        assert crossbar_cells(20, 8, 8, 256) == 20 * 8 * 1 * 2 * 256 * 256


class TestCostTable:
    def test_defaults_positive(self):
        table = CostTable()
        assert table.cell_area_um2 == pytest.approx(0.029)

    def test_rejects_nonpositive(self):
        with pytest.raises(ConfigError):
            CostTable(switch_area_per_bit=0.0)


@pytest.fixture(scope="module")
def report():
    return compare(OverheadGrid())


class TestCompare:
    def test_config1_normalized_to_one(self, report):
        for key, value in report.area.items():
            if key[3] == "config1":
                assert value == 1.0
        for key, value in report.power.items():
            if key[3] == "config1":
                assert value == 1.0

    def test_config2_ratio_constant_across_x_and_p(self, report):
        grid = report.grid
        for tiles in grid.tiles:
            values = {
                report.area[(tiles, x, p, "config2")]
                for x in grid.activated
                for p in grid.precisions
            }
            assert len(values) == 1

    def test_baseline_ratios_strictly_increase_with_tiles(self, report):
        grid = report.grid
        for scheme, x in (("zou", 16), ("wang", 8)):
            for p in grid.precisions:
                values = [report.area[(t, x, p, scheme)] for t in grid.tiles]
                assert all(v is not None for v in values)
                assert values == sorted(values)
                assert len(set(values)) == len(values)

    def test_not_applicable_cells(self, report):
        grid = report.grid
        for t in grid.tiles:
            for p in grid.precisions:
                assert report.area[(t, 1, p, "wang")] is None
                assert report.area[(t, 256, p, "wang")] is None
                for x in grid.activated:
                    if x != 16:
                        assert report.area[(t, x, p, "zou")] is None

    def test_baselines_cost_more_than_one_module(self, report):
        grid = report.grid
        for t in grid.tiles:
            assert report.area[(t, 16, 1, "zou")] > 1.0
            assert report.area[(t, 16, 1, "wang")] > 1.0

    def test_precision_one_costs_more_than_eight(self, report):
        # baseline modules scale with crossbar pairs, which scale as 8/p
        grid = report.grid
        for t in grid.tiles:
            assert report.area[(t, 16, 1, "zou")] > report.area[(t, 16, 8, "zou")]

    def test_detail_carries_counts_and_absolutes(self, report):
        grid = report.grid
        entry = report.detail[(20, 16, 8, "zou")]
        assert entry.units == 3 * 16 * (20 * 8 * 1)  # 48 units per pair
        assert entry.key_storage_bits == 20 * 8 * 3072  # shared per PE
        assert entry.area > 0 and entry.power > 0
        c1 = report.detail[(20, 16, 8, "config1")]
        assert c1.units == (grid.crossbar // grid.bn_config1) * 352
        assert report.detail[(20, 1, 8, "wang")] is None

    def test_csv_rendering(self, report):
        text = report.to_csv("area", "# hdr")
        lines = text.splitlines()
        assert lines[0] == "# hdr"
        assert lines[1].startswith("p,T,scheme,x=1,")
        wang_rows = [l for l in lines if ",wang," in l]
        assert all(l.split(",")[3] == "-" for l in wang_rows)  # x=1 column
        config1_rows = [l for l in lines if ",config1," in l]
        assert all(
            cell == "1.0000" for l in config1_rows for cell in l.split(",")[3:]
        )
