"""Key generation and schedules.

The key generator stands in for a PUF built from buffer-cell startup values:
a keyed pseudorandom bit stream per (device seed, buffer identity). The bits
are volatile by construction, they are derived on demand and never written to
any artifact file. An optional user key is XORed in (cyclically extended to
the module's key length) so that raw generator output never drives the
switches directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .core import Arch, ConfigError, ModelDescriptor, SystemConfig, spawn_rng
from .benes import PermutationModule, PmKey


class CapacityError(RuntimeError):
    """The model does not fit the configured hardware."""


@dataclass(frozen=True)
class PufSource:
    """Deterministic stand-in for buffer startup values.

    Same (device seed, buffer identity) always yields the same bits; distinct
    buffers yield independent streams. ``buffer`` is ``"global"`` for the
    global buffer or a tile index for per-tile buffers.
    """

    device_seed: int
    buffer: str | int = "global"

    def bits(self, count: int) -> tuple[int, ...]:
        rng = spawn_rng(self.device_seed, "puf-startup", self.buffer)
        return tuple(int(b) for b in rng.integers(0, 2, size=count))


@dataclass(frozen=True)
class UserKey:
    """User-supplied key material, at least 128 bits."""

    bits: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.bits) < 128:
            raise ConfigError(f"user key needs at least 128 bits, got {len(self.bits)}")
        if any(b not in (0, 1) for b in self.bits):
            raise ConfigError("user key bits must be 0 or 1")

    @classmethod
    def from_hex(cls, text: str) -> "UserKey":
        try:
            raw = bytes.fromhex(text.strip())
        except ValueError as exc:
            raise ConfigError(f"user key is not valid hex: {exc}") from exc
        bits = tuple((byte >> i) & 1 for byte in raw for i in range(8))
        return cls(bits)

    def cyclic(self, count: int) -> tuple[int, ...]:
        """Extend to ``count`` bits by cyclic repetition."""
        n = len(self.bits)
        return tuple(self.bits[i % n] for i in range(count))


def generate_pm_key(
    src: PufSource, pm: PermutationModule, user: UserKey | None = None
) -> PmKey:
    """Select bits for ``pm``: startup bits, hardened by XOR with the user key."""
    raw = PmKey(src.bits(pm.key_bits))
    if user is None:
        return raw
    return raw.xor(user.cyclic(pm.key_bits))


@dataclass
class KeySchedule:
    """Per-layer permutation keys plus derived volatile state.

    For config-1 every layer entry references the identical key object (one
    global buffer); for config-2 each layer gets its own key from its tile's
    buffer. ``index_vectors`` is filled in while a model is protected and
    maps (layer, grid row, grid col) to that tile's row/column index vectors.
    It lives here, next to the keys, because index vectors belong in volatile
    key storage and must never reach the adversary-readable mapping.
    """

    arch: Arch
    pm: PermutationModule
    keys: tuple[PmKey, ...]
    index_vectors: dict = field(default_factory=dict)

    def key_for_layer(self, layer: int) -> PmKey:
        if layer < 0 or layer >= len(self.keys):
            raise ConfigError(f"schedule has no key for layer {layer}")
        return self.keys[layer]


def build_schedule(
    cfg: SystemConfig,
    model: ModelDescriptor,
    device_seed: int,
    user: UserKey | None = None,
) -> KeySchedule:
    """Construct the key schedule for a model on the given system.

    Config-1 uses the global buffer, so all layers share one key. Config-2
    maps at most one layer per tile, so layer ``i`` draws its key from tile
    ``i``'s buffer; more layers than tiles is a capacity error.
    """
    pm = PermutationModule(cfg.crossbar_size, cfg.bn_ports)
    depth = model.depth
    if cfg.arch is Arch.CONFIG1:
        key = generate_pm_key(PufSource(device_seed, "global"), pm, user)
        keys = (key,) * depth
    else:
        if depth > cfg.tile_count:
            raise CapacityError(
                f"config-2 maps one layer per tile: {depth} layers > {cfg.tile_count} tiles"
            )
        keys = tuple(
            generate_pm_key(PufSource(device_seed, tile), pm, user)
            for tile in range(depth)
        )
    return KeySchedule(arch=cfg.arch, pm=pm, keys=keys)
