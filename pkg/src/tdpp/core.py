"""Shared domain types: permutations, quantized matrices, configuration, RNG.

Everything in this module is an immutable value. Permutations are stored in
destination-map form (``dest[i]`` is the position element ``i`` moves to),
weight matrices are signed 8-bit with a power-of-two scale exponent so that
requantization is a pure arithmetic shift, and all randomness is derived from
explicit 64-bit seeds through :func:`spawn_rng`. There is no global RNG state
anywhere in the package.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class DimensionError(ValueError):
    """Operand shapes do not line up."""


def is_power_of_two(value: int) -> bool:
    return value >= 1 and (value & (value - 1)) == 0


def spawn_rng(seed: int, *path: int | str) -> np.random.Generator:
    """Derive an independent generator from a root seed and a tag path.

    Tags may be ints or strings; strings are hashed with blake2s so the same
    path always yields the same stream regardless of interpreter hash
    randomization. Distinct paths give statistically independent streams.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for tag in path:
        if isinstance(tag, str):
            digest = hashlib.blake2s(tag.encode("utf-8"), digest_size=8).digest()
            entropy.append(int.from_bytes(digest, "little"))
        else:
            entropy.append(int(tag) & 0xFFFFFFFFFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass(frozen=True)
class Permutation:
    """A bijection on [0, n) in destination-map form.

    ``dest[i]`` is the zero-based position that element ``i`` moves to. The
    one-based convention used in written material converts at the boundary
    via :meth:`from_one_based` only; everything internal is zero-based.
    """

    dest: tuple[int, ...]

    def __post_init__(self) -> None:
        n = len(self.dest)
        if sorted(self.dest) != list(range(n)):
            raise ConfigError(f"destination map is not a bijection on [0, {n})")

    @property
    def n(self) -> int:
        return len(self.dest)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(tuple(range(n)))

    @classmethod
    def from_one_based(cls, dest: Sequence[int]) -> "Permutation":
        return cls(tuple(int(d) - 1 for d in dest))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "Permutation":
        return cls(tuple(int(x) for x in rng.permutation(n)))

    def apply(self, values: Sequence) -> list:
        """Scatter ``values`` so that ``out[dest[i]] == values[i]``."""
        if len(values) != self.n:
            raise DimensionError(
                f"vector length {len(values)} does not match permutation size {self.n}"
            )
        out: list = [None] * self.n
        for i, d in enumerate(self.dest):
            out[d] = values[i]
        return out

    def apply_array(self, values: np.ndarray) -> np.ndarray:
        """Numpy fast path of :meth:`apply` along the first axis."""
        if values.shape[0] != self.n:
            raise DimensionError(
                f"array length {values.shape[0]} does not match permutation size {self.n}"
            )
        out = np.empty_like(values)
        out[np.asarray(self.dest)] = values
        return out

    def inverse(self) -> "Permutation":
        inv = [0] * self.n
        for i, d in enumerate(self.dest):
            inv[d] = i
        return Permutation(tuple(inv))

    def then(self, other: "Permutation") -> "Permutation":
        """Composition: apply ``self`` first, then ``other``."""
        if other.n != self.n:
            raise DimensionError("cannot compose permutations of different sizes")
        return Permutation(tuple(other.dest[d] for d in self.dest))

    def dest_array(self) -> np.ndarray:
        return np.asarray(self.dest, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class QuantMatrix:
    """Signed 8-bit weight matrix with a power-of-two scale exponent.

    ``values`` is row-major int8; the represented real value of a cell is
    ``values[i, j] * 2**scale_exp``. Scales are exponents (not floats) so all
    arithmetic downstream stays exact integer.
    """

    values: np.ndarray
    scale_exp: int = 0

    def __post_init__(self) -> None:
        raw = np.asarray(self.values)
        if raw.dtype != np.int8 and raw.size and (
            raw.max() > 127 or raw.min() < -128
        ):
            raise ConfigError("weight values must lie in [-128, 127]")
        arr = np.ascontiguousarray(raw, dtype=np.int8)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError("weight matrix must be 2-D and non-empty")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def m(self) -> int:
        return int(self.values.shape[0])

    @property
    def n(self) -> int:
        return int(self.values.shape[1])

    def same_as(self, other: "QuantMatrix") -> bool:
        return (
            self.scale_exp == other.scale_exp
            and self.values.shape == other.values.shape
            and bool(np.array_equal(self.values, other.values))
        )


def matrix_permute(w: QuantMatrix, rows: Permutation, cols: Permutation) -> QuantMatrix:
    """Permute rows and columns: ``out[rows.dest[i], cols.dest[j]] == w[i, j]``."""
    if rows.n != w.m:
        raise DimensionError(f"row permutation size {rows.n} != matrix rows {w.m}")
    if cols.n != w.n:
        raise DimensionError(f"column permutation size {cols.n} != matrix cols {w.n}")
    out = np.empty_like(w.values)
    out[np.ix_(rows.dest_array(), cols.dest_array())] = w.values
    return QuantMatrix(out, w.scale_exp)


class Arch(str, Enum):
    """Accelerator variant: one global arithmetic unit vs one per tile."""

    CONFIG1 = "config1"
    CONFIG2 = "config2"


_VALID_PRECISIONS = (1, 2, 4, 8)


@dataclass(frozen=True)
class SystemConfig:
    """Static parameters of the simulated accelerator.

    ``crossbar_size`` is the side length C of the square crossbars,
    ``device_precision`` the bits per memristive cell, ``activated_lines``
    the number of simultaneously driven wordlines/bitlines (cost model only,
    no functional effect), and ``bn_ports`` the port count of each Benes
    block inside the permutation module.
    """

    arch: Arch
    crossbar_size: int = 256
    device_precision: int = 8
    weight_precision: int = 8
    activated_lines: int = 16
    pe_per_tile: int = 8
    tile_count: int = 20
    bn_ports: int = 16
    seed: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.arch, Arch):
            object.__setattr__(self, "arch", Arch(self.arch))
        c = self.crossbar_size
        if not is_power_of_two(c) or c < 2:
            raise ConfigError(f"crossbar size must be a power of two >= 2, got {c}")
        if self.weight_precision != 8:
            raise ConfigError("weight precision is fixed at 8 bits")
        if self.device_precision not in _VALID_PRECISIONS:
            raise ConfigError(f"device precision must be one of {_VALID_PRECISIONS}")
        x = self.activated_lines
        if not is_power_of_two(x) or x > c:
            raise ConfigError(f"activated lines must be a power of two dividing {c}, got {x}")
        b = self.bn_ports
        if not is_power_of_two(b) or b < 2 or b > c or c % b != 0:
            raise ConfigError(f"bn ports must be a power of two in [2, {c}] dividing it, got {b}")
        if self.pe_per_tile * self.device_precision < self.weight_precision:
            raise ConfigError(
                "not enough crossbar pairs per PE to hold all weight bit slices"
            )
        if self.tile_count < 1:
            raise ConfigError("tile count must be positive")
        if self.pe_per_tile < 1:
            raise ConfigError("PEs per tile must be positive")


@dataclass(frozen=True)
class LayerSpec:
    """Shape and post-processing of one layer (conv layers pre-lowered to matrices)."""

    kind: str  # "fc" | "conv"
    m: int
    n: int
    activation: str = "relu"  # "relu" | "none"
    pooling: str = "none"  # "max" | "none"
    pool_group: int = 1

    def __post_init__(self) -> None:
        if self.kind not in ("fc", "conv"):
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ("relu", "none"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.pooling not in ("max", "none"):
            raise ConfigError(f"unknown pooling {self.pooling!r}")
        if self.m < 1 or self.n < 1:
            raise DimensionError("layer dimensions must be positive")
        if self.pool_group < 1:
            raise ConfigError("pool group must be positive")
        if (self.pooling == "max") != (self.pool_group > 1):
            raise ConfigError("max pooling requires pool_group > 1 and vice versa")

    @property
    def input_width(self) -> int:
        # A pooled layer consumes pool_group vectors of width m at once.
        return self.m * self.pool_group


@dataclass(frozen=True)
class ModelDescriptor:
    """Layer list of a model; adjacent layers must be width-compatible."""

    layers: tuple[LayerSpec, ...]

    def __post_init__(self) -> None:
        if len(self.layers) < 1:
            raise ConfigError("a model needs at least one layer")
        for prev, cur in zip(self.layers, self.layers[1:]):
            if prev.n != cur.input_width:
                raise DimensionError(
                    f"layer output width {prev.n} incompatible with next input width "
                    f"{cur.input_width}"
                )

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_width

    @property
    def output_dim(self) -> int:
        return self.layers[-1].n


@dataclass(frozen=True, eq=False)
class QuantModel:
    """A quantized model: descriptor plus per-layer weights and requant shifts.

    The per-layer shift is the arithmetic right shift applied to the i32
    accumulator before the saturating cast to u8; the final layer emits raw
    i32 logits and its shift entry is unused.
    """

    descriptor: ModelDescriptor
    weights: tuple[QuantMatrix, ...]
    shifts: tuple[int, ...]

    def __post_init__(self) -> None:
        layers = self.descriptor.layers
        if len(self.weights) != len(layers) or len(self.shifts) != len(layers):
            raise DimensionError("weights/shifts count does not match layer count")
        for spec, w in zip(layers, self.weights):
            if (w.m, w.n) != (spec.m, spec.n):
                raise DimensionError(
                    f"layer expects {spec.m}x{spec.n} weights, got {w.m}x{w.n}"
                )
        if any(s < 0 for s in self.shifts):
            raise ConfigError("requant shifts must be non-negative")

    @property
    def input_dim(self) -> int:
        return self.descriptor.input_dim

    @property
    def output_dim(self) -> int:
        return self.descriptor.output_dim

    def same_as(self, other: "QuantModel") -> bool:
        return (
            self.descriptor == other.descriptor
            and self.shifts == other.shifts
            and all(a.same_as(b) for a, b in zip(self.weights, other.weights))
        )
