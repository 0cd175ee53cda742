"""Functional inference: reference path, protected dataflow, adversary path.

All arithmetic is integer and exact, so the protected dataflow (permute the
inputs, run the crossbar VMMs, add partials across the tile grid, pool,
activate, reverse-permute) reproduces the reference path bit for bit. The
number of simultaneously activated lines has no functional effect here; with
ideal converters it only shows up in the overhead model.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import (
    ConfigError,
    DimensionError,
    LayerSpec,
    ModelDescriptor,
    QuantMatrix,
    QuantModel,
    SystemConfig,
)
from .benes import pm_realized_permutation
from .keys import KeySchedule
from .mapping import (
    CrossbarPair,
    ProtectedMapping,
    adversary_extract,
    slices_to_signed,
)

TDPQ_MAGIC = b"TDPQ"
TDPQ_VERSION = 1

_I32 = np.iinfo(np.int32)


def crossbar_vmm(pair_slices: list[CrossbarPair] | tuple[CrossbarPair, ...], v) -> np.ndarray:
    """Accumulated bitline currents for one input vector, as exact integers.

    ``out[j] = sum_s 2^(p*s) * sum_i v[i] * (pos_s[i,j] - neg_s[i,j])``,
    which equals an i32 matmul with the stored signed submatrix. Absent rows
    are fed 0 by the caller.
    """
    size = pair_slices[0].size
    vec = np.asarray(v, dtype=np.int64)
    if vec.shape != (size,):
        raise DimensionError(f"input vector must have length {size}")
    precision = 8 // len(pair_slices)
    acc = np.zeros(size, dtype=np.int64)
    for s, pair in enumerate(pair_slices):
        diff = pair.pos.astype(np.int64) - pair.neg.astype(np.int64)
        acc += (vec @ diff) << (precision * s)
    if acc.max(initial=0) > _I32.max or acc.min(initial=0) < _I32.min:
        raise OverflowError("accumulator left the i32 range")
    return acc.astype(np.int32)


def _check_i32(acc: np.ndarray) -> None:
    if acc.size and (acc.max() > _I32.max or acc.min() < _I32.min):
        raise OverflowError("accumulator left the i32 range")


def _forward_batch(
    specs: tuple[LayerSpec, ...],
    weights: list[np.ndarray],
    shifts: tuple[int, ...],
    inputs: np.ndarray,
) -> np.ndarray:
    """Reference integer chain on a batch; returns i32 logits."""
    a = np.asarray(inputs, dtype=np.int64)
    if a.ndim == 1:
        a = a[None, :]
    if a.shape[1] != specs[0].m * specs[0].pool_group:
        raise DimensionError(
            f"input width {a.shape[1]} does not match model input "
            f"{specs[0].m * specs[0].pool_group}"
        )
    depth = len(specs)
    batch = a.shape[0]
    for li, spec in enumerate(specs):
        grouped = a.reshape(batch, spec.pool_group, spec.m)
        acc = grouped @ weights[li]
        _check_i32(acc)
        acc = acc.max(axis=1)  # per-channel max pool; identity when group is 1
        if li < depth - 1:
            if spec.activation == "relu":
                acc = np.maximum(acc, 0)
            a = np.clip(acc >> shifts[li], 0, 255)
        else:
            a = acc
    return a.astype(np.int32)


def infer_unprotected_batch(model: QuantModel, inputs) -> tuple[np.ndarray, np.ndarray]:
    """Logits and argmax classes (lowest index wins ties) for a batch."""
    mats = [w.values.astype(np.int64) for w in model.weights]
    logits = _forward_batch(model.descriptor.layers, mats, model.shifts, np.asarray(inputs))
    return logits, np.argmax(logits, axis=1)


def infer_unprotected(model: QuantModel, x) -> tuple[np.ndarray, int]:
    """Reference inference for one input vector."""
    logits, classes = infer_unprotected_batch(model, np.asarray(x)[None, :])
    return logits[0], int(classes[0])


def model_accuracy(model: QuantModel, inputs, labels) -> float:
    _, classes = infer_unprotected_batch(model, inputs)
    return float(np.mean(classes == np.asarray(labels)))


@dataclass
class _LayerPlan:
    spec: LayerSpec
    shift: int
    row_orders: list[np.ndarray]  # per tile row: compacted feed order
    row_counts: list[int]
    col_gathers: list[np.ndarray]  # per tile col: reverse-permute gather
    col_counts: list[int]
    mats: list[list[np.ndarray]]  # signed i64 tile matrices


class ProtectedEngine:
    """Executes the protected dataflow with per-layer precomputation.

    Per layer and input vector: permute the inputs through the module
    (expanding through the index vectors), VMM every tile, add partials down
    each tile-grid column, pool and activate per channel, then reverse-permute
    the activated outputs back to channel order. Results equal the reference
    path exactly.
    """

    def __init__(self, pmap: ProtectedMapping, sched: KeySchedule, cfg: SystemConfig):
        if sched.arch != cfg.arch:
            raise ConfigError("schedule was built for a different architecture")
        if sched.pm.width != pmap.crossbar_size:
            raise ConfigError("module width does not match the mapping's crossbars")
        if cfg.crossbar_size != pmap.crossbar_size:
            raise ConfigError("configured crossbar size does not match the mapping")
        if len(sched.keys) != len(pmap.layers):
            raise ConfigError("refusing to run: schedule is missing layer keys")
        self._plans: list[_LayerPlan] = []
        width = pmap.crossbar_size
        for li, layer in enumerate(pmap.layers):
            dest = pm_realized_permutation(sched.pm, sched.keys[li]).dest_array()
            spec = LayerSpec(
                kind=layer.kind,
                m=layer.m,
                n=layer.n,
                activation=layer.activation,
                pooling=layer.pooling,
                pool_group=layer.pool_group,
            )
            row_orders, row_counts = [], []
            for tile in (row[0] for row in layer.grid):
                r = tile.rows_used
                row_orders.append(np.argsort(dest[:r], kind="stable"))
                row_counts.append(r)
            col_gathers, col_counts = [], []
            for tile in layer.grid[0]:
                c = tile.cols_used
                order = np.argsort(dest[:c], kind="stable")
                gather = np.empty(c, dtype=np.int64)
                gather[order] = np.arange(c)
                col_gathers.append(gather)
                col_counts.append(c)
            mats = [
                [slices_to_signed(tile.slices).astype(np.int64) for tile in row]
                for row in layer.grid
            ]
            self._plans.append(
                _LayerPlan(spec, layer.shift, row_orders, row_counts,
                           col_gathers, col_counts, mats)
            )
        self._width = width
        self._input_width = self._plans[0].spec.m * self._plans[0].spec.pool_group
        self._depth = len(self._plans)

    def run_batch(self, inputs) -> tuple[np.ndarray, np.ndarray]:
        a = np.asarray(inputs, dtype=np.int64)
        if a.ndim == 1:
            a = a[None, :]
        if a.shape[1] != self._input_width:
            raise DimensionError(
                f"input width {a.shape[1]} does not match model input {self._input_width}"
            )
        batch = a.shape[0]
        width = self._width
        for li, plan in enumerate(self._plans):
            spec = plan.spec
            grouped = a.reshape(batch, spec.pool_group, spec.m)
            # Step 1: permute each input vector, expanding through the row
            # index vectors so real rows feed the compacted crossbar rows.
            feeds = []
            base = 0
            for r, order in zip(plan.row_counts, plan.row_orders):
                lane = np.zeros((batch, spec.pool_group, width), dtype=np.int64)
                lane[:, :, :r] = grouped[:, :, base : base + r][..., order]
                feeds.append(lane)
                base += r
            # Steps 2 and 3: VMM on every tile, partials added down tile columns.
            pieces = []
            for b, (c, gather) in enumerate(zip(plan.col_counts, plan.col_gathers)):
                acc = np.zeros((batch, spec.pool_group, width), dtype=np.int64)
                for r_idx in range(len(plan.row_counts)):
                    acc += feeds[r_idx] @ plan.mats[r_idx][b]
                _check_i32(acc)
                # Steps 4 and 5: pool across the group and activate, still in
                # permuted order (both are per output channel).
                merged = acc.max(axis=1)
                if li < self._depth - 1 and spec.activation == "relu":
                    merged = np.maximum(merged, 0)
                # Step 6: discard padding and reverse-permute to channel order.
                pieces.append(merged[:, gather])
            out = np.concatenate(pieces, axis=1)
            if li < self._depth - 1:
                a = np.clip(out >> plan.shift, 0, 255)
            else:
                a = out
        return a.astype(np.int32), np.argmax(a, axis=1)

    def run(self, x) -> tuple[np.ndarray, int]:
        logits, classes = self.run_batch(np.asarray(x)[None, :])
        return logits[0], int(classes[0])


def infer_protected(
    pmap: ProtectedMapping, sched: KeySchedule, cfg: SystemConfig, x
) -> tuple[np.ndarray, int]:
    """One protected inference; build a :class:`ProtectedEngine` for batches."""
    return ProtectedEngine(pmap, sched, cfg).run(x)


def infer_as_adversary(pmap: ProtectedMapping, x) -> tuple[np.ndarray, int]:
    """Run the stolen (still permuted) model on an input."""
    return infer_unprotected(adversary_extract(pmap), x)


_KIND_CODE = {"fc": 0, "conv": 1}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


def save_model(model: QuantModel, path: str) -> None:
    """Write the quantized-model container.

    After the magic, version (u16) and layer count (u16), each layer stores
    kind (u8, pool group log2 in the high nibble), m (u32), n (u32), requant
    shift (i8) and the int8 weights row-major. Little-endian.
    """
    with open(path, "wb") as fh:
        fh.write(TDPQ_MAGIC)
        fh.write(struct.pack("<HH", TDPQ_VERSION, model.descriptor.depth))
        for spec, w, shift in zip(model.descriptor.layers, model.weights, model.shifts):
            group_log = spec.pool_group.bit_length() - 1
            if (1 << group_log) != spec.pool_group or group_log > 15:
                raise ConfigError("pool group must be a power of two to serialize")
            kind = _KIND_CODE[spec.kind] | (group_log << 4)
            fh.write(struct.pack("<BIIb", kind, spec.m, spec.n, shift))
            fh.write(w.values.tobytes())


def load_model(path: str) -> QuantModel:
    """Read a quantized-model container written by :func:`save_model`.

    Scale exponents are not part of the container (integer inference does not
    need them) and come back as 0.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != TDPQ_MAGIC:
        raise ConfigError("not a quantized-model container")
    version, depth = struct.unpack_from("<HH", blob, 4)
    if version != TDPQ_VERSION:
        raise ConfigError(f"unsupported container version {version}")
    offset = 8
    specs = []
    weights = []
    shifts = []
    for li in range(depth):
        kind, m, n, shift = struct.unpack_from("<BIIb", blob, offset)
        offset += 10
        base = kind & 0x0F
        if base not in _CODE_KIND:
            raise ConfigError(f"unknown layer kind code {base}")
        group = 1 << (kind >> 4)
        values = np.frombuffer(blob, dtype=np.int8, count=m * n, offset=offset)
        offset += m * n
        last = li == depth - 1
        specs.append(
            LayerSpec(
                kind=_CODE_KIND[base],
                m=m,
                n=n,
                activation="none" if last else "relu",
                pooling="max" if group > 1 else "none",
                pool_group=group,
            )
        )
        weights.append(QuantMatrix(values.reshape(m, n).copy()))
        shifts.append(int(shift))
    if offset != len(blob):
        raise ConfigError("trailing bytes in model container")
    return QuantModel(ModelDescriptor(tuple(specs)), tuple(weights), tuple(shifts))
