"""TDPP: two-dimensional permutation protection of crossbar-mapped weights.

A functional simulator and analysis toolkit: Benes-network permutation
modules with select-bit keys, the tile/permute/compact/bit-slice protection
pipeline, exact integer inference on protected and unprotected models,
key-recovery attack harnesses, and a hardware cost model.
"""

__version__ = "0.1.0"

from .core import (
    Arch,
    ConfigError,
    DimensionError,
    LayerSpec,
    ModelDescriptor,
    Permutation,
    QuantMatrix,
    QuantModel,
    SystemConfig,
    matrix_permute,
    spawn_rng,
)
from .benes import (
    BenesNetwork,
    PermutationModule,
    PmKey,
    RoutingError,
    pm_apply,
    pm_partial_apply,
    pm_realized_permutation,
    pm_reverse_apply,
    pm_route,
    reduction_ratio,
    switch_count,
)
from .keys import CapacityError, KeySchedule, PufSource, UserKey, build_schedule, generate_pm_key
from .mapping import (
    CrossbarPair,
    IndexVector,
    ProtectedMapping,
    adversary_extract,
    bit_slice,
    extract_with_key,
    protect_model,
    protect_submatrix,
    tile_matrix,
)
from .system import (
    ProtectedEngine,
    crossbar_vmm,
    infer_as_adversary,
    infer_protected,
    infer_unprotected,
    infer_unprotected_batch,
)
from .zoo import SyntheticDataset, TrainedModel, TrainingError, generate_dataset, train_mlp
