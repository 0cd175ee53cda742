"""Permutation module model: Benes blocks, select-bit keys, routing.

A width-``2^b`` permutation module (PM) is either one ``2^b``-port Benes
network or ``k`` independent ``2^B``-port blocks side by side. A block with
``N`` ports has ``2*log2(N) - 1`` columns of ``N/2`` two-by-two switches; a
switch passes straight when its select bit is 0 and crosses when it is 1.

Key bit order is fixed because keys get serialized and XORed with user keys:
block-major, then column-major within a block, then top-to-bottom within a
column. The realized permutation is always derived from the raw select bits
(the key is the ground truth; many keys can realize the same permutation).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .core import ConfigError, DimensionError, Permutation, is_power_of_two


class RoutingError(ValueError):
    """The requested permutation cannot be realized by this module."""


def switch_count(ports: int) -> int:
    """Number of 2:2 switches in a Benes network with the given port count."""
    if not is_power_of_two(ports) or ports < 2:
        raise ConfigError(f"port count must be a power of two >= 2, got {ports}")
    b = ports.bit_length() - 1
    return (ports // 2) * (2 * b - 1)


@dataclass(frozen=True)
class BenesNetwork:
    """Topology summary of a single rearrangeable non-blocking block."""

    ports: int

    def __post_init__(self) -> None:
        switch_count(self.ports)  # validates

    @property
    def columns(self) -> int:
        return 2 * (self.ports.bit_length() - 1) - 1

    @property
    def switches(self) -> int:
        return switch_count(self.ports)


@dataclass(frozen=True)
class PermutationModule:
    """``k`` independent blocks of ``block_ports`` ports covering ``width`` lines.

    The module realizes exactly the block-diagonal permutations: each aligned
    ``block_ports``-sized chunk of [0, width) maps onto itself.
    """

    width: int
    block_ports: int

    def __post_init__(self) -> None:
        switch_count(self.width)
        switch_count(self.block_ports)
        if self.block_ports > self.width or self.width % self.block_ports != 0:
            raise ConfigError(
                f"block ports {self.block_ports} must divide module width {self.width}"
            )

    @property
    def k(self) -> int:
        return self.width // self.block_ports

    @property
    def block(self) -> BenesNetwork:
        return BenesNetwork(self.block_ports)

    @property
    def key_bits(self) -> int:
        return self.k * switch_count(self.block_ports)


@dataclass(frozen=True)
class PmKey:
    """Select bits for a permutation module, in the fixed serialization order."""

    bits: tuple[int, ...]

    def __post_init__(self) -> None:
        if any(b not in (0, 1) for b in self.bits):
            raise ConfigError("key bits must be 0 or 1")

    def __len__(self) -> int:
        return len(self.bits)

    def to_bytes(self) -> bytes:
        """Pack as u32 little-endian bit count, then bits LSB-first per byte."""
        out = bytearray(struct.pack("<I", len(self.bits)))
        acc = 0
        for i, bit in enumerate(self.bits):
            acc |= bit << (i % 8)
            if i % 8 == 7:
                out.append(acc)
                acc = 0
        if len(self.bits) % 8:
            out.append(acc)
        return bytes(out)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "PmKey":
        if len(raw) < 4:
            raise ConfigError("truncated key blob")
        (count,) = struct.unpack("<I", raw[:4])
        body = raw[4:]
        if len(body) != (count + 7) // 8:
            raise ConfigError("key blob length does not match its bit count")
        bits = tuple((body[i // 8] >> (i % 8)) & 1 for i in range(count))
        return cls(bits)

    def xor(self, other_bits: Sequence[int]) -> "PmKey":
        if len(other_bits) != len(self.bits):
            raise DimensionError("xor operand length mismatch")
        return PmKey(tuple(a ^ b for a, b in zip(self.bits, other_bits)))


def zero_key(pm: PermutationModule) -> PmKey:
    return PmKey((0,) * pm.key_bits)


def random_key(pm: PermutationModule, rng: np.random.Generator) -> PmKey:
    return PmKey(tuple(int(b) for b in rng.integers(0, 2, size=pm.key_bits)))


@lru_cache(maxsize=None)
def _interstage_wiring(ports: int) -> tuple[np.ndarray, ...]:
    """Gather indices between adjacent switch columns of one block.

    The line order convention is: after a column's switches, line ``2i`` is
    switch ``i``'s upper output and ``2i+1`` its lower one. The wiring into
    the sub-networks is the perfect unshuffle, and the wiring out of them the
    perfect shuffle, recursively.
    """
    if ports == 2:
        return ()
    half = ports // 2
    unshuffle = np.concatenate([np.arange(0, ports, 2), np.arange(1, ports, 2)])
    shuffle = np.empty(ports, dtype=np.int64)
    shuffle[0::2] = np.arange(half)
    shuffle[1::2] = half + np.arange(half)
    middle = tuple(
        np.concatenate([w, w + half]) for w in _interstage_wiring(half)
    )
    return (unshuffle, *middle, shuffle)


def _block_dest(ports: int, bits: np.ndarray) -> np.ndarray:
    """Destination map realized by one block's select bits."""
    half = ports // 2
    ncols = 2 * (ports.bit_length() - 1) - 1
    grid = bits.reshape(ncols, half).astype(bool)
    wiring = _interstage_wiring(ports)
    lane = np.arange(ports, dtype=np.int64)
    for col in range(ncols):
        pairs = lane.reshape(half, 2)
        lane = np.where(grid[col][:, None], pairs[:, ::-1], pairs).reshape(ports)
        if col < ncols - 1:
            lane = lane[wiring[col]]
    dest = np.empty(ports, dtype=np.int64)
    dest[lane] = np.arange(ports, dtype=np.int64)
    return dest


def _check_key(pm: PermutationModule, key: PmKey) -> None:
    if len(key.bits) != pm.key_bits:
        raise DimensionError(
            f"key has {len(key.bits)} bits, module needs {pm.key_bits}"
        )


def pm_realized_permutation(pm: PermutationModule, key: PmKey) -> Permutation:
    """The block-diagonal permutation the select bits realize."""
    _check_key(pm, key)
    bits = np.asarray(key.bits, dtype=np.uint8)
    per_block = switch_count(pm.block_ports)
    dest: list[int] = []
    for blk in range(pm.k):
        local = _block_dest(pm.block_ports, bits[blk * per_block : (blk + 1) * per_block])
        base = blk * pm.block_ports
        dest.extend(int(d) + base for d in local)
    return Permutation(tuple(dest))


def pm_apply(pm: PermutationModule, key: PmKey, values: Sequence) -> list:
    """Route ``values`` through the module under ``key``.

    Values are opaque tokens, so absent markers (``None``) propagate through
    the switches exactly like data; see :func:`pm_partial_apply`.
    """
    if len(values) != pm.width:
        raise DimensionError(
            f"vector length {len(values)} does not match module width {pm.width}"
        )
    return pm_realized_permutation(pm, key).apply(values)


def pm_partial_apply(
    pm: PermutationModule, key: PmKey, values: Sequence[Optional[object]]
) -> list:
    """Permute a vector whose absent entries are in the high-impedance state.

    Present entries move as in :func:`pm_apply`; ``None`` entries ride along
    and mark the output positions the caller should discard.
    """
    return pm_apply(pm, key, values)


def pm_route(pm: PermutationModule, perm: Permutation) -> PmKey:
    """Find select bits realizing ``perm``.

    Uses the classic looping procedure on the outer switch columns, then
    recurses into the two half-size sub-networks. Ties (the free choice when
    starting a new loop) always go to the lowest unassigned port routed
    through the upper sub-network, so the key for a permutation is unique
    and reproducible.
    """
    if perm.n != pm.width:
        raise DimensionError(
            f"permutation size {perm.n} does not match module width {pm.width}"
        )
    bp = pm.block_ports
    for i, d in enumerate(perm.dest):
        if i // bp != d // bp:
            raise RoutingError(
                f"permutation is not block-diagonal: element {i} leaves chunk {i // bp}"
            )
    bits: list[int] = []
    for blk in range(pm.k):
        base = blk * bp
        local = [perm.dest[base + i] - base for i in range(bp)]
        bits.extend(_route_block(local))
    return PmKey(tuple(bits))


def _route_block(dest: list[int]) -> list[int]:
    """Select bits (column-major, top-to-bottom) realizing ``dest`` on one block."""
    n = len(dest)
    if n == 2:
        return [1 if dest[0] == 1 else 0]
    half = n // 2
    inv = [0] * n
    for i, d in enumerate(dest):
        inv[d] = i

    # Side 0 is the upper sub-network. Input-switch partners and
    # output-switch partners must take opposite sides; walking those
    # constraints traces even loops, so assignment never conflicts.
    in_side: list[Optional[int]] = [None] * n
    out_side: list[Optional[int]] = [None] * n
    for start in range(n):
        if in_side[start] is not None:
            continue
        i, side = start, 0
        while in_side[i] is None:
            in_side[i] = side
            o = dest[i]
            out_side[o] = side
            partner_in = inv[o ^ 1]
            if in_side[partner_in] is not None:
                break
            in_side[partner_in] = 1 - side
            out_side[o ^ 1] = 1 - side
            i = partner_in ^ 1

    sel_in = [in_side[2 * s] for s in range(half)]
    sel_out = [out_side[2 * s] for s in range(half)]
    top_dest = [0] * half
    bot_dest = [0] * half
    for i in range(n):
        if in_side[i] == 0:
            top_dest[i // 2] = dest[i] // 2
        else:
            bot_dest[i // 2] = dest[i] // 2

    top_bits = _route_block(top_dest)
    bot_bits = _route_block(bot_dest)
    sub_cols = 2 * (half.bit_length() - 1) - 1
    per_col = half // 2
    out = list(sel_in)
    for col in range(sub_cols):
        out.extend(top_bits[col * per_col : (col + 1) * per_col])
        out.extend(bot_bits[col * per_col : (col + 1) * per_col])
    out.extend(sel_out)
    return out


def pm_reverse_apply(pm: PermutationModule, key: PmKey, values: Sequence) -> list:
    """Undo :func:`pm_apply`: routes the exact inverse of the realized permutation.

    This is the module's reverse-permutation duty in hardware terms: the
    inverse is itself block-diagonal, so the same module realizes it with a
    different select-bit assignment.
    """
    realized = pm_realized_permutation(pm, key)
    reverse_key = pm_route(pm, realized.inverse())
    return pm_apply(pm, reverse_key, values)


def pm_mirror_apply(pm: PermutationModule, key: PmKey, values: Sequence) -> list:
    """Literal reverse-then-permute-then-reverse operator, for study only.

    For a destination map d this computes e(i) = n-1-d(n-1-i), which equals
    the inverse of d only for a subclass of permutations (d = (1, 0, 2) is a
    counterexample). Use :func:`pm_reverse_apply` for the actual inverse.
    """
    flipped = list(values)[::-1]
    return pm_apply(pm, key, flipped)[::-1]


def reversal_key(pm: PermutationModule) -> PmKey:
    """Key that mirrors each block: last ``log2(block_ports)`` columns all 1.

    Setting the select bits of the final ``b`` switch columns to 1 and the
    rest to 0 reverses a ``2^b``-port block end to end, so vector reversal
    needs no extra hardware.
    """
    ports = pm.block_ports
    half = ports // 2
    b = ports.bit_length() - 1
    ncols = 2 * b - 1
    grid = np.zeros((ncols, half), dtype=np.uint8)
    grid[ncols - b :, :] = 1
    block_bits = tuple(int(x) for x in grid.reshape(-1))
    return PmKey(block_bits * pm.k)


def reduction_ratio(full_ports: int, block_ports: int) -> Fraction:
    """Fraction of switches saved by splitting one big block into small ones."""
    full = switch_count(full_ports)
    block = switch_count(block_ports)
    if full_ports % block_ports != 0:
        raise ConfigError(
            f"block ports {block_ports} must divide full ports {full_ports}"
        )
    k = full_ports // block_ports
    return 1 - Fraction(k * block, full)
