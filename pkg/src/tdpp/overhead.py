"""Hardware overhead estimator for the permutation module and two baselines.

Absolute silicon numbers are out of reach here, so the cost table ships
documented placeholder unit costs and everything meaningful is expressed as
counts (switches, mux slices, storage bits) and as ratios normalized to the
single-module architecture. An n:1 mux or 1:n demux of data width w is
costed as (n - 1) * w two-to-one slices.

Scheme labels: ``config1``/``config2`` are the two permutation-module
embeddings; ``zou`` is the per-pair row-shuffling baseline (only applicable
when 16 lines are activated at a time); ``wang`` is the per-pair
group-permutation baseline (inapplicable when 1 or all 256 lines are
activated).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from math import ceil

from .core import ConfigError, SystemConfig
from .benes import switch_count

SCHEMES = ("config1", "config2", "zou", "wang")

ZOU_APPLICABLE_X = (16,)
WANG_INAPPLICABLE_X = (1, 256)

_BASELINE_CROSSBAR = 256


@dataclass(frozen=True)
class CostTable:
    """Unit costs; all placeholders except the published cell area.

    Areas are in arbitrary units per bit of datapath or storage; the 1T1R
    cell area is in square micrometres and only feeds the crossbar-area
    baseline used for relative-overhead context.
    """

    switch_area_per_bit: float = 1.0
    switch_power_per_bit: float = 1.0
    storage_area_per_bit: float = 0.05
    storage_power_per_bit: float = 0.02
    mux_area_per_slice_bit: float = 0.5
    mux_power_per_slice_bit: float = 0.5
    cell_area_um2: float = 0.029
    data_bits: int = 8

    def __post_init__(self) -> None:
        for name in (
            "switch_area_per_bit",
            "switch_power_per_bit",
            "storage_area_per_bit",
            "storage_power_per_bit",
            "mux_area_per_slice_bit",
            "mux_power_per_slice_bit",
            "cell_area_um2",
        ):
            if getattr(self, name) <= 0:
                raise ConfigError(f"cost table entry {name} must be positive")
        if self.data_bits < 1:
            raise ConfigError("data bits must be positive")


def tdpp_counts(cfg: SystemConfig, model=None) -> tuple[int, int, int, int]:
    """(switches per module, key bits per module, index bits, instances).

    Index storage is two index vectors of length C per tile; with no model
    given, every tile is provisioned, otherwise only the tiles the model
    occupies are counted (one PE per submatrix, ``pe_per_tile`` PEs per tile).
    """
    c = cfg.crossbar_size
    switches = (c // cfg.bn_ports) * switch_count(cfg.bn_ports)
    key_bits = switches
    instances = 1 if cfg.arch.value == "config1" else cfg.tile_count
    if model is None:
        tiles_used = cfg.tile_count
    else:
        descriptor = getattr(model, "descriptor", model)
        tiles_used = 0
        for spec in descriptor.layers:
            pes = ceil(spec.m / c) * ceil(spec.n / c)
            tiles_used += ceil(pes / cfg.pe_per_tile)
        tiles_used = min(tiles_used, cfg.tile_count)
    index_bits = 2 * c * tiles_used
    return switches, key_bits, index_bits, instances


def baseline_zou_counts(x: int, pairs: int) -> tuple[int, int]:
    """(mux/demux units, key bits per PE) for the row-shuffling baseline.

    Each crossbar pair carries 2x muxes and x demuxes of fan 256/x; key
    storage per protection module is x * 3 * log2(256/x) * (256/x) bits,
    shared by the pairs inside a PE. Counts are computable for any x; the
    scheme is only applicable at x = 16.
    """
    if _BASELINE_CROSSBAR % x != 0:
        raise ConfigError(f"activated lines {x} must divide {_BASELINE_CROSSBAR}")
    fan = _BASELINE_CROSSBAR // x
    mux_units = 3 * x * pairs
    key_bits = x * 3 * int(math.log2(fan)) * fan if fan > 1 else 0
    return mux_units, key_bits


def baseline_wang_counts(x: int, pairs: int) -> tuple[int, int] | None:
    """(mux/demux units, key bits per PE) for the group-permutation baseline.

    One 256/x:1 mux and one 1:(256/x) demux per pair at data width 8x; key
    storage per module is 256*log2(256/x) + log2(256/x)*2*(256/x) bits (row
    activation vectors plus mux keys). Returns None where the row grouping
    is invalid (x of 1 or 256), matching the "-" table cells.
    """
    if _BASELINE_CROSSBAR % x != 0:
        raise ConfigError(f"activated lines {x} must divide {_BASELINE_CROSSBAR}")
    if x in WANG_INAPPLICABLE_X:
        return None
    fan = _BASELINE_CROSSBAR // x
    bits = int(math.log2(fan))
    mux_units = 2 * pairs
    key_bits = _BASELINE_CROSSBAR * bits + bits * 2 * fan
    return mux_units, key_bits


def crossbar_cells(tiles: int, pe_per_tile: int, precision: int, crossbar: int) -> int:
    """Total memristive cells: tiles x PEs x pairs x two crossbars x C^2."""
    pairs_per_pe = 8 // precision
    return tiles * pe_per_tile * pairs_per_pe * 2 * crossbar * crossbar


@dataclass(frozen=True)
class OverheadGrid:
    """Sweep axes and the block sizes used for the two embeddings."""

    tiles: tuple[int, ...] = (20, 40, 60, 80, 100)
    activated: tuple[int, ...] = (1, 2, 4, 8, 16, 32, 64, 128, 256)
    precisions: tuple[int, ...] = (1, 8)
    crossbar: int = 256
    pe_per_tile: int = 8
    bn_config1: int = 64
    bn_config2: int = 4


@dataclass(frozen=True)
class SchemeCost:
    """Unit counts and unnormalized costs of one scheme at one grid point."""

    units: int  # switches for the permutation modules, mux/demux units otherwise
    key_storage_bits: int
    area: float
    power: float


@dataclass
class OverheadReport:
    """Normalized area/power ratios over the sweep, plus absolute context."""

    grid: OverheadGrid
    area: dict  # (T, x, p, scheme) -> ratio or None
    power: dict
    detail: dict  # (T, x, p, scheme) -> SchemeCost or None
    crossbar_area_um2: dict  # (T, p) -> float

    def to_csv(self, metric: str, header: str) -> str:
        table = {"area": self.area, "power": self.power}[metric]
        buf = io.StringIO()
        buf.write(header.rstrip("\n") + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["p", "T", "scheme"] + [f"x={x}" for x in self.grid.activated]
        )
        for p in self.grid.precisions:
            for tiles in self.grid.tiles:
                for scheme in SCHEMES:
                    row = [p, tiles, scheme]
                    for x in self.grid.activated:
                        value = table[(tiles, x, p, scheme)]
                        row.append("-" if value is None else f"{value:.4f}")
                    writer.writerow(row)
        return buf.getvalue()


def _pm_module_cost(bn_ports: int, crossbar: int, costs: CostTable) -> tuple[float, float]:
    switches = (crossbar // bn_ports) * switch_count(bn_ports)
    area = switches * costs.data_bits * costs.switch_area_per_bit
    power = switches * costs.data_bits * costs.switch_power_per_bit
    return area, power


def _mux_cost(units_fan_width: list[tuple[int, int, int]], costs: CostTable) -> tuple[float, float]:
    """Cost of mux/demux banks given (unit count, fan, data width) triples."""
    slices = sum(units * max(fan - 1, 0) * width for units, fan, width in units_fan_width)
    return (
        slices * costs.mux_area_per_slice_bit,
        slices * costs.mux_power_per_slice_bit,
    )


def compare(grid: OverheadGrid, model=None, costs: CostTable | None = None) -> OverheadReport:
    """Evaluate every scheme over the (T, x, p) grid, normalized to config-1.

    The permutation-module schemes do not depend on x or p at all, so their
    normalized rows are constant across those axes by construction.
    """
    if costs is None:
        costs = CostTable()
    c = grid.crossbar
    area: dict = {}
    power: dict = {}
    detail: dict = {}
    crossbar_area: dict = {}
    switches_c1 = (c // grid.bn_config1) * switch_count(grid.bn_config1)
    switches_c2 = (c // grid.bn_config2) * switch_count(grid.bn_config2)
    mod1_area, mod1_power = _pm_module_cost(grid.bn_config1, c, costs)
    mod2_area, mod2_power = _pm_module_cost(grid.bn_config2, c, costs)
    for p in grid.precisions:
        pairs_per_pe = 8 // p
        for tiles in grid.tiles:
            pes = tiles * grid.pe_per_tile
            pairs = pes * pairs_per_pe
            crossbar_area[(tiles, p)] = (
                crossbar_cells(tiles, grid.pe_per_tile, p, c) * costs.cell_area_um2
            )
            # one module plus one key store (key bits and per-tile index vectors)
            storage1 = switches_c1 + 2 * c * tiles
            c1 = SchemeCost(
                units=switches_c1,
                key_storage_bits=storage1,
                area=mod1_area + storage1 * costs.storage_area_per_bit,
                power=mod1_power + storage1 * costs.storage_power_per_bit,
            )
            storage2 = tiles * (switches_c2 + 2 * c)
            c2 = SchemeCost(
                units=tiles * switches_c2,
                key_storage_bits=storage2,
                area=tiles * mod2_area + storage2 * costs.storage_area_per_bit,
                power=tiles * mod2_power + storage2 * costs.storage_power_per_bit,
            )
            for x in grid.activated:
                fan = c // x
                zou_units, zou_bits = baseline_zou_counts(x, pairs)
                zou_mux_area, zou_mux_power = _mux_cost(
                    [(zou_units, fan, costs.data_bits)], costs
                )
                zou = SchemeCost(
                    units=zou_units,
                    key_storage_bits=pes * zou_bits,
                    area=zou_mux_area + pes * zou_bits * costs.storage_area_per_bit,
                    power=zou_mux_power + pes * zou_bits * costs.storage_power_per_bit,
                )
                wang_counts = baseline_wang_counts(x, pairs)
                if wang_counts is None:
                    wang = None
                else:
                    wang_units, wang_bits = wang_counts
                    wang_mux_area, wang_mux_power = _mux_cost(
                        [(wang_units, fan, costs.data_bits * x)], costs
                    )
                    wang = SchemeCost(
                        units=wang_units,
                        key_storage_bits=pes * wang_bits,
                        area=wang_mux_area + pes * wang_bits * costs.storage_area_per_bit,
                        power=wang_mux_power + pes * wang_bits * costs.storage_power_per_bit,
                    )
                cell = {
                    "config1": c1,
                    "config2": c2,
                    "zou": zou if x in ZOU_APPLICABLE_X else None,
                    "wang": wang,
                }
                for scheme, cost in cell.items():
                    at = (tiles, x, p, scheme)
                    detail[at] = cost
                    if cost is None:
                        area[at] = power[at] = None
                    elif scheme == "config1":
                        area[at] = power[at] = 1.0
                    else:
                        area[at] = cost.area / c1.area
                        power[at] = cost.power / c1.power
    return OverheadReport(
        grid=grid, area=area, power=power, detail=detail,
        crossbar_area_um2=crossbar_area,
    )
