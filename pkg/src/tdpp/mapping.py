"""Protection pipeline: tiling, permute-and-compact, bit slicing, extraction.

A weight matrix is tiled into crossbar-sized submatrices. Each submatrix has
its rows and its columns permuted with the layer's key (the same key for
both), the occupied rows/columns are packed to the lowest crossbar indices in
permuted relative order, and two index vectors record which permuted
positions they belong to. Unused cells stay at level 0, modeling the high
resistance state. The signed values are then split into positive/negative
crossbar pairs, one pair per ``device_precision``-bit digit.

Index vectors are returned to the caller and attached to the key schedule;
they are deliberately not part of :class:`ProtectedMapping`, which models
exactly what an adversary can stream out of the devices.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from math import ceil

import numpy as np

from .core import (
    ConfigError,
    DimensionError,
    ModelDescriptor,
    QuantMatrix,
    QuantModel,
    SystemConfig,
)
from .benes import PermutationModule, PmKey, pm_realized_permutation
from .keys import KeySchedule

TDPM_MAGIC = b"TDPM"
TDPM_VERSION = 1


@dataclass(frozen=True, eq=False)
class CrossbarPair:
    """One positive/negative crossbar pair holding one bit slice of a tile.

    Device levels are in [0, 2^p - 1]. At most one of pos/neg is nonzero per
    cell (signed-value split), and every cell outside the used rows/columns
    is 0 (HRS).
    """

    pos: np.ndarray
    neg: np.ndarray
    used_rows: int
    used_cols: int

    def __post_init__(self) -> None:
        for side in (self.pos, self.neg):
            raw = np.asarray(side)
            if raw.dtype != np.uint8 and raw.size and (raw.max() > 255 or raw.min() < 0):
                raise ConfigError("device levels must lie in [0, 255]")
        pos = np.ascontiguousarray(self.pos, dtype=np.uint8)
        neg = np.ascontiguousarray(self.neg, dtype=np.uint8)
        if pos.shape != neg.shape or pos.ndim != 2 or pos.shape[0] != pos.shape[1]:
            raise DimensionError("crossbar pair arrays must be square and congruent")
        if not (0 <= self.used_rows <= pos.shape[0]) or not (
            0 <= self.used_cols <= pos.shape[1]
        ):
            raise DimensionError("used row/col counts exceed crossbar size")
        if np.any((pos > 0) & (neg > 0)):
            raise ConfigError("a cell may hold a positive or a negative part, not both")
        if np.any(pos[self.used_rows :, :]) or np.any(neg[self.used_rows :, :]):
            raise ConfigError("unused crossbar rows must stay in HRS (level 0)")
        if np.any(pos[:, self.used_cols :]) or np.any(neg[:, self.used_cols :]):
            raise ConfigError("unused crossbar columns must stay in HRS (level 0)")
        pos.flags.writeable = False
        neg.flags.writeable = False
        object.__setattr__(self, "pos", pos)
        object.__setattr__(self, "neg", neg)

    @property
    def size(self) -> int:
        return int(self.pos.shape[0])


@dataclass(frozen=True)
class IndexVector:
    """Bit per crossbar line; set bits are the occupied permuted positions."""

    bits: tuple[int, ...]

    def __post_init__(self) -> None:
        if any(b not in (0, 1) for b in self.bits):
            raise ConfigError("index vector bits must be 0 or 1")

    @property
    def popcount(self) -> int:
        return sum(self.bits)

    def positions(self) -> tuple[int, ...]:
        return tuple(i for i, b in enumerate(self.bits) if b)


@dataclass(frozen=True)
class ProtectedTile:
    """One crossbar-pair stack: all bit slices of one submatrix."""

    layer_id: int
    grid_r: int
    grid_c: int
    slices: tuple[CrossbarPair, ...]

    @property
    def rows_used(self) -> int:
        return self.slices[0].used_rows

    @property
    def cols_used(self) -> int:
        return self.slices[0].used_cols


@dataclass(frozen=True)
class ProtectedLayer:
    """Tile grid of one layer plus the architecture-side metadata.

    The metadata (shape, shift, scale) is what an adversary is assumed to
    know anyway; the secret is the arrangement, not the architecture.
    """

    layer_id: int
    kind: str
    m: int
    n: int
    activation: str
    pooling: str
    pool_group: int
    shift: int
    scale_exp: int
    grid: tuple[tuple[ProtectedTile, ...], ...]


@dataclass(frozen=True)
class ProtectedMapping:
    """Everything an adversary can read off the powered-down devices."""

    crossbar_size: int
    device_precision: int
    layers: tuple[ProtectedLayer, ...]


def tile_matrix(w: QuantMatrix, crossbar: int) -> list[list[QuantMatrix]]:
    """Split into a ceil(m/C) x ceil(n/C) grid; edge tiles may be smaller."""
    rows = ceil(w.m / crossbar)
    cols = ceil(w.n / crossbar)
    grid = []
    for gr in range(rows):
        row = []
        for gc in range(cols):
            block = w.values[
                gr * crossbar : min((gr + 1) * crossbar, w.m),
                gc * crossbar : min((gc + 1) * crossbar, w.n),
            ]
            row.append(QuantMatrix(block, w.scale_exp))
        grid.append(row)
    return grid


def _occupancy(dest: np.ndarray, count: int) -> tuple[IndexVector, np.ndarray]:
    """Where the first ``count`` lines land, and the compaction order.

    ``order[s]`` is the original index stored at compacted slot ``s``;
    compaction packs occupied permuted positions ascending, which preserves
    the permuted relative order and makes the index vector sufficient to
    undo it.
    """
    width = len(dest)
    positions = dest[:count]
    order = np.argsort(positions, kind="stable")
    bits = np.zeros(width, dtype=np.uint8)
    bits[positions] = 1
    return IndexVector(tuple(int(b) for b in bits)), order


def _permute_compact(
    values: np.ndarray, dest: np.ndarray, width: int
) -> tuple[np.ndarray, IndexVector, IndexVector]:
    m, n = values.shape
    row_iv, row_order = _occupancy(dest, m)
    col_iv, col_order = _occupancy(dest, n)
    padded = np.zeros((width, width), dtype=np.int8)
    padded[:m, :n] = values[np.ix_(row_order, col_order)]
    return padded, row_iv, col_iv


def protect_submatrix(
    sub: QuantMatrix, pm: PermutationModule, key: PmKey
) -> tuple[QuantMatrix, IndexVector, IndexVector]:
    """Permute rows and columns with ``key`` and compact into a C x C frame.

    A submatrix with fewer than C rows occupies only its leading chunks of
    the module; the trailing partial chunk permutes just its real rows among
    that chunk's slots (absent lines ride through as high-impedance markers
    and are dropped). Occupied positions are recorded in the index vectors.
    """
    width = pm.width
    if sub.m > width or sub.n > width:
        raise DimensionError(
            f"submatrix {sub.m}x{sub.n} exceeds crossbar size {width}"
        )
    dest = pm_realized_permutation(pm, key).dest_array()
    padded, row_iv, col_iv = _permute_compact(sub.values, dest, width)
    return QuantMatrix(padded, sub.scale_exp), row_iv, col_iv


def bit_slice(
    padded: np.ndarray, precision: int, used_rows: int | None = None, used_cols: int | None = None
) -> list[CrossbarPair]:
    """Split signed int8 values into 8/p crossbar pairs of base-2^p digits.

    Positive slices encode max(w, 0) and negative slices max(-w, 0), least
    significant digit first, so sum(2^(p*s) * (pos_s - neg_s)) == w cellwise.
    """
    if precision not in (1, 2, 4, 8):
        raise ConfigError(f"device precision must be 1, 2, 4 or 8, got {precision}")
    values = np.asarray(padded, dtype=np.int16)
    if used_rows is None:
        used_rows = values.shape[0]
    if used_cols is None:
        used_cols = values.shape[1]
    pos = np.maximum(values, 0).astype(np.uint16)
    neg = np.maximum(-values, 0).astype(np.uint16)
    mask = (1 << precision) - 1
    slices = []
    for s in range(8 // precision):
        shift = precision * s
        slices.append(
            CrossbarPair(
                pos=((pos >> shift) & mask).astype(np.uint8),
                neg=((neg >> shift) & mask).astype(np.uint8),
                used_rows=used_rows,
                used_cols=used_cols,
            )
        )
    return slices


def slices_to_signed(slices: tuple[CrossbarPair, ...] | list[CrossbarPair]) -> np.ndarray:
    """Reconstruct the signed values stored in a stack of bit slices."""
    precision = 8 // len(slices)
    acc = np.zeros(slices[0].pos.shape, dtype=np.int32)
    for s, pair in enumerate(slices):
        diff = pair.pos.astype(np.int32) - pair.neg.astype(np.int32)
        acc += diff << (precision * s)
    return acc


def _as_int8(values: np.ndarray) -> np.ndarray:
    if values.size and (values.max() > 127 or values.min() < -128):
        raise ConfigError("stored device levels decode outside the int8 range")
    return values.astype(np.int8)


def protect_model(
    model: QuantModel, cfg: SystemConfig, sched: KeySchedule
) -> ProtectedMapping:
    """Tile, permute, compact and bit-slice every layer of ``model``.

    Deterministic given (model, cfg, schedule). All submatrices of a layer
    share that layer's key, and rows and columns share it too. The derived
    index vectors are attached to the schedule (volatile key storage), not
    to the returned mapping.
    """
    pm = sched.pm
    if pm.width != cfg.crossbar_size:
        raise ConfigError(
            f"module width {pm.width} must equal crossbar size {cfg.crossbar_size}"
        )
    if sched.arch != cfg.arch:
        raise ConfigError("schedule was built for a different architecture")
    depth = model.descriptor.depth
    if len(sched.keys) != depth:
        raise ConfigError(
            f"schedule holds {len(sched.keys)} keys but the model has {depth} layers"
        )
    layers = []
    for li, (spec, w, shift) in enumerate(
        zip(model.descriptor.layers, model.weights, model.shifts)
    ):
        key = sched.key_for_layer(li)
        dest = pm_realized_permutation(pm, key).dest_array()
        grid_rows = []
        for gr, tile_row in enumerate(tile_matrix(w, cfg.crossbar_size)):
            tiles = []
            for gc, sub in enumerate(tile_row):
                padded, row_iv, col_iv = _permute_compact(
                    sub.values, dest, cfg.crossbar_size
                )
                slices = bit_slice(padded, cfg.device_precision, sub.m, sub.n)
                sched.index_vectors[(li, gr, gc)] = (row_iv, col_iv)
                tiles.append(
                    ProtectedTile(
                        layer_id=li, grid_r=gr, grid_c=gc, slices=tuple(slices)
                    )
                )
            grid_rows.append(tuple(tiles))
        layers.append(
            ProtectedLayer(
                layer_id=li,
                kind=spec.kind,
                m=spec.m,
                n=spec.n,
                activation=spec.activation,
                pooling=spec.pooling,
                pool_group=spec.pool_group,
                shift=shift,
                scale_exp=w.scale_exp,
                grid=tuple(grid_rows),
            )
        )
    return ProtectedMapping(
        crossbar_size=cfg.crossbar_size,
        device_precision=cfg.device_precision,
        layers=tuple(layers),
    )


def _layer_descriptor(pmap: ProtectedMapping) -> ModelDescriptor:
    from .core import LayerSpec  # local to keep the module header lean

    return ModelDescriptor(
        tuple(
            LayerSpec(
                kind=layer.kind,
                m=layer.m,
                n=layer.n,
                activation=layer.activation,
                pooling=layer.pooling,
                pool_group=layer.pool_group,
            )
            for layer in pmap.layers
        )
    )


def _raw_layer_matrix(layer: ProtectedLayer) -> np.ndarray:
    """Adversary view: the compacted contents, reassembled at full layer shape."""
    out = np.zeros((layer.m, layer.n), dtype=np.int8)
    for tile_row in layer.grid:
        for tile in tile_row:
            signed = slices_to_signed(tile.slices)
            r, c = tile.rows_used, tile.cols_used
            r0 = tile.grid_r * tile.slices[0].size
            c0 = tile.grid_c * tile.slices[0].size
            out[r0 : r0 + r, c0 : c0 + c] = _as_int8(signed[:r, :c])
    return out


def _keyed_layer_matrix(
    layer: ProtectedLayer, pm: PermutationModule, key: PmKey
) -> np.ndarray:
    """Undo compaction via the key-derived index vectors, then the permutation."""
    width = pm.width
    dest = pm_realized_permutation(pm, key).dest_array()
    out = np.zeros((layer.m, layer.n), dtype=np.int8)
    for tile_row in layer.grid:
        for tile in tile_row:
            signed = slices_to_signed(tile.slices)
            r, c = tile.rows_used, tile.cols_used
            padded = np.zeros((width, width), dtype=np.int32)
            row_pos = np.sort(dest[:r])
            col_pos = np.sort(dest[:c])
            padded[np.ix_(row_pos, col_pos)] = signed[:r, :c]
            recovered = padded[np.ix_(dest[:r], dest[:c])]
            r0 = tile.grid_r * width
            c0 = tile.grid_c * width
            out[r0 : r0 + r, c0 : c0 + c] = _as_int8(recovered)
    return out


def extract_layers(
    pmap: ProtectedMapping,
    pm: PermutationModule | None,
    keys_by_layer: dict[int, PmKey],
) -> QuantModel:
    """Rebuild a model, undoing the permutation only where a key is supplied.

    Layers without a key keep their stored (permuted, compacted) arrangement,
    which is exactly the adversary's view of them.
    """
    if keys_by_layer and pm is None:
        raise ConfigError("keyed extraction needs the permutation module geometry")
    weights = []
    shifts = []
    for li, layer in enumerate(pmap.layers):
        if li in keys_by_layer:
            mat = _keyed_layer_matrix(layer, pm, keys_by_layer[li])
        else:
            mat = _raw_layer_matrix(layer)
        weights.append(QuantMatrix(mat, layer.scale_exp))
        shifts.append(layer.shift)
    return QuantModel(_layer_descriptor(pmap), tuple(weights), tuple(shifts))


def adversary_extract(pmap: ProtectedMapping) -> QuantModel:
    """The stolen model: device levels decoded with no key at all."""
    return extract_layers(pmap, None, {})


def extract_with_key(pmap: ProtectedMapping, sched: KeySchedule) -> QuantModel:
    """Legitimate-owner recovery; exact inverse of :func:`protect_model`."""
    if len(sched.keys) != len(pmap.layers):
        raise ConfigError(
            f"schedule holds {len(sched.keys)} keys but the mapping has "
            f"{len(pmap.layers)} layers"
        )
    if sched.pm.width != pmap.crossbar_size:
        raise ConfigError("schedule module width does not match the mapping")
    return extract_layers(
        pmap, sched.pm, {li: sched.keys[li] for li in range(len(pmap.layers))}
    )


def scramble_matrix(w: QuantMatrix, pm: PermutationModule, key: PmKey) -> QuantMatrix:
    """Protect a single matrix and read it back without the key.

    This is the per-layer composition of protect and adversary extraction,
    used by the attack harness to protect individual layers.
    """
    dest = pm_realized_permutation(pm, key).dest_array()
    out = np.zeros((w.m, w.n), dtype=np.int8)
    for gr, tile_row in enumerate(tile_matrix(w, pm.width)):
        for gc, sub in enumerate(tile_row):
            padded, _, _ = _permute_compact(sub.values, dest, pm.width)
            r0, c0 = gr * pm.width, gc * pm.width
            out[r0 : r0 + sub.m, c0 : c0 + sub.n] = padded[: sub.m, : sub.n]
    return QuantMatrix(out, w.scale_exp)


def save_tdpm(pmap: ProtectedMapping, path: str) -> None:
    """Write the adversary-readable container.

    Per-tile records after the magic and version: layer id (u16), grid row
    and column (u16 each), device precision (u8), slice count (u8), crossbar
    size (u16), then for each slice the positive and negative level arrays,
    one byte per device level, row-major. Little-endian throughout. Index
    vectors and keys never enter this file.
    """
    with open(path, "wb") as fh:
        fh.write(TDPM_MAGIC)
        fh.write(struct.pack("<H", TDPM_VERSION))
        for layer in pmap.layers:
            for tile_row in layer.grid:
                for tile in tile_row:
                    fh.write(
                        struct.pack(
                            "<HHHBBH",
                            layer.layer_id,
                            tile.grid_r,
                            tile.grid_c,
                            pmap.device_precision,
                            len(tile.slices),
                            pmap.crossbar_size,
                        )
                    )
                    for pair in tile.slices:
                        fh.write(pair.pos.tobytes())
                        fh.write(pair.neg.tobytes())


def load_tdpm(path: str, like: QuantModel) -> ProtectedMapping:
    """Read a mapping container; layer metadata comes from ``like``.

    The container holds only what the devices hold, so the architecture-side
    metadata (shapes, shifts, post-processing) must be supplied by the
    caller, mirroring an adversary who knows the model architecture.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != TDPM_MAGIC:
        raise ConfigError("not a protected-mapping container")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != TDPM_VERSION:
        raise ConfigError(f"unsupported container version {version}")
    offset = 6
    tiles: dict[tuple[int, int, int], ProtectedTile] = {}
    precision = None
    crossbar = None
    specs = like.descriptor.layers
    while offset < len(blob):
        li, gr, gc, p, nslices, c = struct.unpack_from("<HHHBBH", blob, offset)
        offset += 10
        if precision is None:
            precision, crossbar = p, c
        elif (p, c) != (precision, crossbar):
            raise ConfigError("mixed precision or crossbar size in container")
        if p not in (1, 2, 4, 8) or nslices != 8 // p:
            raise ConfigError(f"tile ({li},{gr},{gc}) has {nslices} slices for p={p}")
        if li >= len(specs):
            raise ConfigError(f"container references unknown layer {li}")
        spec = specs[li]
        rows_used = min(c, spec.m - gr * c)
        cols_used = min(c, spec.n - gc * c)
        if rows_used <= 0 or cols_used <= 0:
            raise ConfigError(f"tile ({li},{gr},{gc}) lies outside layer {li}")
        pairs = []
        for _ in range(nslices):
            pos = np.frombuffer(blob, dtype=np.uint8, count=c * c, offset=offset)
            offset += c * c
            neg = np.frombuffer(blob, dtype=np.uint8, count=c * c, offset=offset)
            offset += c * c
            pairs.append(
                CrossbarPair(
                    pos=pos.reshape(c, c).copy(),
                    neg=neg.reshape(c, c).copy(),
                    used_rows=rows_used,
                    used_cols=cols_used,
                )
            )
        tiles[(li, gr, gc)] = ProtectedTile(li, gr, gc, tuple(pairs))
    if precision is None:
        raise ConfigError("container holds no tiles")
    layers = []
    for li, spec in enumerate(specs):
        grid_rows = []
        for gr in range(ceil(spec.m / crossbar)):
            row = []
            for gc in range(ceil(spec.n / crossbar)):
                tile = tiles.get((li, gr, gc))
                if tile is None:
                    raise ConfigError(f"container is missing tile ({li},{gr},{gc})")
                row.append(tile)
            grid_rows.append(tuple(row))
        layers.append(
            ProtectedLayer(
                layer_id=li,
                kind=spec.kind,
                m=spec.m,
                n=spec.n,
                activation=spec.activation,
                pooling=spec.pooling,
                pool_group=spec.pool_group,
                shift=like.shifts[li],
                scale_exp=like.weights[li].scale_exp,
                grid=tuple(grid_rows),
            )
        )
    return ProtectedMapping(
        crossbar_size=crossbar, device_precision=precision, layers=tuple(layers)
    )
