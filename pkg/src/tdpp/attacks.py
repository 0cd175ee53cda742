"""Adversary toolkit: effort estimators and key-recovery attack harnesses.

Brute-force effort counts realizable arrangements, not raw select bits,
because distinct keys collide on permutations; a block with ``B`` ports
contributes ``B!``. The divide-and-conquer harnesses measure attack
sensitivity from extracted-model accuracy: a guess is sensitive when the
correct-key accuracy beats the wrong-key accuracy by at least five
percentage points. Trials are averaged (40 by default) with per-trial seeds
derived in a fixed order, so reports are reproducible byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    ConfigError,
    ModelDescriptor,
    Permutation,
    QuantMatrix,
    QuantModel,
    SystemConfig,
    Arch,
    spawn_rng,
)
from .benes import PermutationModule, PmKey, random_key
from .keys import KeySchedule, build_schedule, UserKey
from .mapping import (
    ProtectedMapping,
    extract_layers,
    protect_model,
    scramble_matrix,
)
from .system import infer_unprotected_batch

SENSITIVITY_MARGIN = 0.05
_EPS = 1e-9
DEFAULT_TRIALS = 40


@dataclass(frozen=True)
class SecurityEstimate:
    """Brute-force efforts in log2: per layer and for the whole model."""

    arch: Arch
    crossbar_size: int
    bn_ports: int
    per_layer_log2: tuple[float, ...]
    model_log2: float


@dataclass(frozen=True)
class DncStep:
    step: float
    correct_acc: float
    wrong_acc: float
    sensitive: bool


@dataclass(frozen=True)
class DncResult:
    """Minimal divide-and-conquer effort found by the stepwise harness."""

    arch: Arch
    steps: tuple[DncStep, ...]
    log2_effort: float
    ratio: float | None = None  # config-1: first sensitive key fraction
    layer_set: tuple[int, ...] | None = None  # config-2: sensitive layer prefix


def brute_force_layer(m: int, n: int, crossbar: int, bn_ports: int) -> float:
    """log2 of the arrangements to try for one m x n layer.

    Full-size layers need every block of every chunk guessed; a smaller layer
    only occupies ceil(d/B) chunks of its larger dimension d, the last of
    which permutes just d mod B real lines.
    """
    if crossbar % bn_ports != 0:
        raise ConfigError(f"block ports {bn_ports} must divide crossbar {crossbar}")
    if m >= crossbar or n >= crossbar:
        count = math.factorial(bn_ports) ** (crossbar // bn_ports)
    else:
        d = m if n <= m else n
        count = math.factorial(bn_ports) ** (d // bn_ports) * math.factorial(d % bn_ports)
    return math.log2(count) if count > 1 else 0.0


def brute_force_model(model, cfg: SystemConfig) -> SecurityEstimate:
    """Whole-model effort: max over layers for config-1, sum for config-2."""
    descriptor: ModelDescriptor = getattr(model, "descriptor", model)
    per_layer = tuple(
        brute_force_layer(spec.m, spec.n, cfg.crossbar_size, cfg.bn_ports)
        for spec in descriptor.layers
    )
    if cfg.arch is Arch.CONFIG1:
        total = max(per_layer)
    else:
        total = sum(per_layer)
    return SecurityEstimate(cfg.arch, cfg.crossbar_size, cfg.bn_ports, per_layer, total)


def attack_sensitive(correct_acc: float, wrong_acc: float) -> bool:
    """Correct-key accuracy at least five percentage points above wrong-key."""
    if not (0.0 <= correct_acc <= 1.0 and 0.0 <= wrong_acc <= 1.0):
        raise ConfigError("accuracies must lie in [0, 1]")
    return correct_acc - wrong_acc >= SENSITIVITY_MARGIN - _EPS


def small_matrix_leakage(m_rows: int, ports: int) -> tuple[float, float, float]:
    """Pattern-space shrink when a small matrix is mapped to discrete rows.

    Discrete mapping reveals which crossbar rows are occupied, cutting the
    space to m!(P-m)!; contiguous mapping with an index vector keeps the full
    P! per-chunk space. Returns (leaked log2, indexed log2, reduction).
    """
    if m_rows > ports:
        raise ConfigError("matrix rows exceed the block's ports")
    leaked = math.factorial(m_rows) * math.factorial(ports - m_rows)
    full = math.factorial(ports)
    return math.log2(leaked), math.log2(full), 1.0 - leaked / full


def _trial_device_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63, dtype=np.int64))


def _model_with_layer(model: QuantModel, layer: int, matrix: QuantMatrix) -> QuantModel:
    weights = list(model.weights)
    weights[layer] = matrix
    return QuantModel(model.descriptor, tuple(weights), model.shifts)


def _accuracy(model: QuantModel, eval_x, eval_y) -> float:
    _, classes = infer_unprotected_batch(model, eval_x)
    return float(np.mean(classes == np.asarray(eval_y)))


def effectiveness_study(
    model: QuantModel,
    cfg: SystemConfig,
    eval_x,
    eval_y,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    user: UserKey | None = None,
) -> list[float]:
    """Adversary-extracted accuracy per trial, each with a fresh device seed."""
    accs = []
    for t in range(trials):
        rng = spawn_rng(seed, "effectiveness", t)
        sched = build_schedule(cfg, model.descriptor, _trial_device_seed(rng), user)
        pmap = protect_model(model, cfg, sched)
        stolen = extract_layers(pmap, None, {})
        accs.append(_accuracy(stolen, eval_x, eval_y))
    return accs


def layer_significance(
    model: QuantModel,
    cfg: SystemConfig,
    eval_x,
    eval_y,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
) -> list[int]:
    """Layers ordered most significant first.

    Significance is probed by protecting a single layer with a random key and
    measuring the extracted model's accuracy; the lower it falls, the more
    significant the layer. Ties break toward the lower layer index.
    """
    if len(np.asarray(eval_x)) == 0:
        raise ConfigError("evaluation set must not be empty")
    pm = PermutationModule(cfg.crossbar_size, cfg.bn_ports)
    means = []
    for li in range(model.descriptor.depth):
        accs = []
        for t in range(trials):
            rng = spawn_rng(seed, "significance", li, t)
            key = random_key(pm, rng)
            scrambled = scramble_matrix(model.weights[li], pm, key)
            accs.append(_accuracy(_model_with_layer(model, li, scrambled), eval_x, eval_y))
        means.append(float(np.mean(accs)))
    return sorted(range(len(means)), key=lambda li: (means[li], li))


def dnc_config1(
    pmap: ProtectedMapping,
    sched: KeySchedule,
    eval_x,
    eval_y,
    estimate: SecurityEstimate,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
) -> DncResult:
    """Minimal effort for recovering a shared key piecewise.

    For each ratio r in 0.01 steps, the first ceil(r * bits) select bits (in
    serialization order) are taken from the true key and the rest drawn at
    random; the comparison guess is fully random. The first sensitive r wins
    and the effort is r times the brute-force effort.
    """
    if sched.arch is not Arch.CONFIG1:
        raise ConfigError("this harness drives the shared-key architecture")
    pm = sched.pm
    true_bits = sched.keys[0].bits
    nbits = len(true_bits)
    depth = len(pmap.layers)
    steps: list[DncStep] = []
    found: float | None = None
    for ri in range(1, 101):
        r = ri / 100.0
        cut = math.ceil(r * nbits)
        correct_accs = []
        wrong_accs = []
        for t in range(trials):
            rng = spawn_rng(seed, "dnc1", ri, t)
            tail = tuple(int(b) for b in rng.integers(0, 2, size=nbits - cut))
            correct_key = PmKey(true_bits[:cut] + tail)
            wrong_key = random_key(pm, rng)
            for key, bucket in ((correct_key, correct_accs), (wrong_key, wrong_accs)):
                candidate = extract_layers(pmap, pm, {li: key for li in range(depth)})
                bucket.append(_accuracy(candidate, eval_x, eval_y))
        step = DncStep(
            step=r,
            correct_acc=float(np.mean(correct_accs)),
            wrong_acc=float(np.mean(wrong_accs)),
            sensitive=attack_sensitive(
                float(np.mean(correct_accs)), float(np.mean(wrong_accs))
            ),
        )
        steps.append(step)
        if step.sensitive:
            found = r
            break
    if found is None:
        # a full-key guess normally restores the model, but if even that is
        # not sensitive the search cost the whole brute-force effort
        found = 1.0
    return DncResult(
        arch=Arch.CONFIG1,
        steps=tuple(steps),
        log2_effort=math.log2(found) + estimate.model_log2,
        ratio=found,
    )


def dnc_config2(
    pmap: ProtectedMapping,
    sched: KeySchedule,
    model: QuantModel,
    cfg: SystemConfig,
    eval_x,
    eval_y,
    estimate: SecurityEstimate,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
) -> DncResult:
    """Minimal effort when every layer has its own key.

    Layers are guessed in significance order; at each step the accumulated
    layer set gets correct keys (vs fresh random ones) while the rest of the
    model stays protected. Stops at the first sensitive set.
    """
    if sched.arch is not Arch.CONFIG2:
        raise ConfigError("this harness drives the per-layer-key architecture")
    pm = sched.pm
    list1 = layer_significance(model, cfg, eval_x, eval_y, trials=trials, seed=seed)
    list2: list[int] = []
    steps: list[DncStep] = []
    while list1:
        list2.append(list1.pop(0))
        correct_accs = []
        wrong_accs = []
        for t in range(trials):
            rng = spawn_rng(seed, "dnc2", len(list2), t)
            correct = {li: sched.keys[li] for li in list2}
            wrong = {li: random_key(pm, rng) for li in list2}
            for keys, bucket in ((correct, correct_accs), (wrong, wrong_accs)):
                candidate = extract_layers(pmap, pm, keys)
                bucket.append(_accuracy(candidate, eval_x, eval_y))
        step = DncStep(
            step=float(len(list2)),
            correct_acc=float(np.mean(correct_accs)),
            wrong_acc=float(np.mean(wrong_accs)),
            sensitive=attack_sensitive(
                float(np.mean(correct_accs)), float(np.mean(wrong_accs))
            ),
        )
        steps.append(step)
        if step.sensitive:
            break
    effort = sum(estimate.per_layer_log2[li] for li in list2)
    return DncResult(
        arch=Arch.CONFIG2,
        steps=tuple(steps),
        log2_effort=effort,
        layer_set=tuple(list2),
    )


def partial_row_permutation_study(
    model: QuantModel,
    layer: int,
    row_counts: Sequence[int],
    eval_x,
    eval_y,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
) -> list[float]:
    """Mean extracted accuracy when only the first c rows of a layer move.

    Rows only, no columns: each trial shuffles rows [0, c) with a fresh
    random permutation and measures the resulting model.
    """
    if list(row_counts) != sorted(row_counts):
        raise ConfigError("row counts must be ascending")
    w = model.weights[layer]
    results = []
    for c in row_counts:
        if c > w.m:
            raise ConfigError(f"layer {layer} has only {w.m} rows")
        accs = []
        for t in range(trials):
            if c == 0:
                accs.append(_accuracy(model, eval_x, eval_y))
                continue
            rng = spawn_rng(seed, "partial-rows", c, t)
            perm = Permutation.random(c, rng)
            values = w.values.copy()
            values[:c] = values[:c][np.argsort(perm.dest_array())]
            accs.append(
                _accuracy(
                    _model_with_layer(model, layer, QuantMatrix(values, w.scale_exp)),
                    eval_x,
                    eval_y,
                )
            )
        results.append(float(np.mean(accs)))
    return results


def write_steps_csv(path: str, header: str, result: DncResult) -> None:
    """One row per step: step, correct and wrong accuracy, sensitivity flag."""
    with open(path, "w", newline="") as fh:
        fh.write(header.rstrip("\n") + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "correct_acc", "wrong_acc", "sensitive"])
        for step in result.steps:
            writer.writerow(
                [
                    f"{step.step:.2f}",
                    f"{step.correct_acc:.6f}",
                    f"{step.wrong_acc:.6f}",
                    int(step.sensitive),
                ]
            )


def summary_dict(
    estimate: SecurityEstimate,
    dnc: DncResult | None,
    effectiveness: Sequence[float] | None,
) -> dict:
    out: dict = {
        "arch": estimate.arch.value,
        "crossbar_size": estimate.crossbar_size,
        "bn_ports": estimate.bn_ports,
        "per_layer_log2": list(estimate.per_layer_log2),
        "model_log2": estimate.model_log2,
    }
    if dnc is not None:
        out["dnc_log2_effort"] = dnc.log2_effort
        if dnc.ratio is not None:
            out["dnc_sensitive_ratio"] = dnc.ratio
        if dnc.layer_set is not None:
            out["dnc_sensitive_layers"] = list(dnc.layer_set)
    if effectiveness is not None:
        out["extracted_accuracy_mean"] = float(np.mean(effectiveness))
        out["extracted_accuracy_per_trial"] = [float(a) for a in effectiveness]
    return out


def write_summary_json(path: str, meta: dict, body: dict) -> None:
    payload = {**meta, **body}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
