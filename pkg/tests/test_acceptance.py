"""Acceptance suite: every criterion at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one line per
criterion. Criteria that average over trials use 40 trials, the toolkit's
default.
"""

import hashlib
import itertools
import json
import math
import time

import numpy as np
import pytest

from tdpp.core import (
    Arch,
    LayerSpec,
    ModelDescriptor,
    Permutation,
    QuantMatrix,
    QuantModel,
    SystemConfig,
    spawn_rng,
)
from tdpp.benes import (
    PermutationModule,
    PmKey,
    pm_realized_permutation,
    pm_route,
    reduction_ratio,
    switch_count,
)
from tdpp.keys import build_schedule
from tdpp.mapping import (
    _permute_compact,
    extract_layers,
    protect_model,
)
from tdpp.system import ProtectedEngine, infer_unprotected_batch, model_accuracy
from tdpp import attacks
from tdpp.cli import main as cli_main

CHANCE = 0.10


def report(number: int, text: str) -> None:
    print(f"ACCEPTANCE {number:2d}: {text} ... PASS")


def test_criterion_01_switch_counts():
    t0 = time.perf_counter()
    counts = [switch_count(2**b) for b in range(1, 9)]
    key_bits = PermutationModule(256, 256).key_bits
    elapsed = time.perf_counter() - t0
    assert counts == [1, 6, 20, 56, 144, 352, 832, 1920]
    assert key_bits == 1920
    assert elapsed < 0.001
    report(1, f"switch counts {counts}, 256-port key {key_bits} bits "
              f"({elapsed * 1e6:.0f} us)")


def test_criterion_02_routing_completeness():
    t0 = time.perf_counter()
    pm8 = PermutationModule(8, 8)
    identity8 = list(range(8))
    for dest in itertools.permutations(range(8)):
        key = pm_route(pm8, Permutation(dest))
        realized = pm_realized_permutation(pm8, key)
        assert realized.dest == dest
    pm256 = PermutationModule(256, 16)
    rng = spawn_rng(2024, "routing-acceptance")
    for _ in range(10_000):
        dest = []
        for blk in range(16):
            base = blk * 16
            dest.extend(int(base + d) for d in rng.permutation(16))
        perm = Permutation(tuple(dest))
        key = pm_route(pm256, perm)
        assert pm_realized_permutation(pm256, key).dest == perm.dest
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    report(2, f"40320 exhaustive 8-port + 10^4 block-diagonal 256-port routes "
              f"({elapsed:.1f} s)")


def _pooled_conv_model(rng) -> QuantModel:
    desc = ModelDescriptor(
        (
            LayerSpec(kind="conv", m=8, n=16, pooling="max", pool_group=4),
            LayerSpec(kind="fc", m=16, n=10, activation="none"),
        )
    )
    return QuantModel(
        desc,
        (
            QuantMatrix(rng.integers(-128, 128, size=(8, 16)).astype(np.int8)),
            QuantMatrix(rng.integers(-128, 128, size=(16, 10)).astype(np.int8)),
        ),
        (3, 0),
    )


def _multi_tile_model(rng) -> QuantModel:
    desc = ModelDescriptor(
        (
            LayerSpec(kind="fc", m=300, n=300),
            LayerSpec(kind="fc", m=300, n=10, activation="none"),
        )
    )
    return QuantModel(
        desc,
        (
            QuantMatrix(rng.integers(-128, 128, size=(300, 300)).astype(np.int8)),
            QuantMatrix(rng.integers(-128, 128, size=(300, 10)).astype(np.int8)),
        ),
        (10, 0),
    )


def test_criterion_03_functional_invariance(model):
    t0 = time.perf_counter()
    rng = spawn_rng(33, "invariance-inputs")
    fixtures = [
        (model, rng.integers(0, 256, size=(1000, model.input_dim))),
        (_pooled_conv_model(rng), rng.integers(0, 256, size=(1000, 32))),
        (_multi_tile_model(rng), rng.integers(0, 256, size=(1000, 300))),
    ]
    checked = 0
    for arch in (Arch.CONFIG1, Arch.CONFIG2):
        for precision in (1, 8):
            for bn_ports in (4, 16, 256):
                cfg = SystemConfig(arch=arch, device_precision=precision,
                                   bn_ports=bn_ports, seed=1)
                for fixture, inputs in fixtures:
                    sched = build_schedule(cfg, fixture.descriptor, device_seed=777)
                    pmap = protect_model(fixture, cfg, sched)
                    got, _ = ProtectedEngine(pmap, sched, cfg).run_batch(inputs)
                    want, _ = infer_unprotected_batch(fixture, inputs)
                    assert np.array_equal(got, want)
                    checked += 1
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    assert checked == 2 * 2 * 3 * 3
    report(3, f"bit-exact protected inference over {checked} configurations x "
              f"1000 inputs ({elapsed:.1f} s)")


def test_criterion_04_effectiveness(model, dataset):
    t0 = time.perf_counter()
    clean = model_accuracy(model, dataset.test_x, dataset.test_y)
    assert clean >= 0.80
    means = {}
    for arch in (Arch.CONFIG1, Arch.CONFIG2):
        for bn_ports in (4, 16, 256):
            cfg = SystemConfig(arch=arch, bn_ports=bn_ports, seed=4)
            accs = attacks.effectiveness_study(
                model, cfg, dataset.test_x, dataset.test_y, trials=40, seed=44
            )
            mean = float(np.mean(accs))
            means[(arch.value, bn_ports)] = mean
            assert 0.06 <= mean <= 0.14, (arch, bn_ports, mean)
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    pretty = ", ".join(f"{k[0]}/B={k[1]}:{v:.3f}" for k, v in means.items())
    report(4, f"clean {clean:.3f} collapses to [{pretty}] ({elapsed:.1f} s)")


def test_criterion_05_reduction_ratio():
    ratio = float(reduction_ratio(256, 16))
    assert abs(ratio - 0.533) <= 0.001
    report(5, f"16-port blocks save {ratio * 100:.2f}% of a 256-port module")


def test_criterion_06_small_matrix_leakage():
    leaked, full, reduction = attacks.small_matrix_leakage(2, 4)
    assert leaked == math.log2(2) + math.log2(2)
    assert full == math.log2(24)
    assert round(reduction * 100, 2) == 83.33
    report(6, f"discrete mapping shrinks the 2-rows-in-4 space by "
              f"{reduction * 100:.2f}%")


def test_criterion_07_estimator_oracle_equivalence():
    t0 = time.perf_counter()
    crossbar = 8
    base = np.arange(1, 65, dtype=np.int8).reshape(8, 8)
    cases = 0
    for bn_ports in (2, 4):
        pm = PermutationModule(crossbar, bn_ports)
        dests = set()
        for bits in itertools.product((0, 1), repeat=pm.key_bits):
            dests.add(pm_realized_permutation(pm, PmKey(bits)).dest)
        # every key enumerated; keys collapse onto (B!)^k distinct patterns
        blocks = crossbar // bn_ports
        assert len(dests) == math.factorial(bn_ports) ** blocks
        dest_arrays = [np.asarray(d, dtype=np.int64) for d in sorted(dests)]
        for m in range(1, 9):
            for n in range(1, 9):
                sub = base[:m, :n]
                distinct = set()
                for dest in dest_arrays:
                    padded, _, _ = _permute_compact(sub, dest, crossbar)
                    distinct.add(padded[:m, :n].tobytes())
                want = attacks.brute_force_layer(m, n, crossbar, bn_ports)
                assert math.log2(len(distinct)) == pytest.approx(want, abs=1e-9)
                cases += 1
    # config-2 doubles a two-identical-layer model relative to config-1
    w = QuantMatrix(np.zeros((32, 32), dtype=np.int8))
    two = QuantModel(
        ModelDescriptor(
            (
                LayerSpec(kind="fc", m=32, n=32),
                LayerSpec(kind="fc", m=32, n=32, activation="none"),
            )
        ),
        (w, w),
        (0, 0),
    )
    e1 = attacks.brute_force_model(
        two, SystemConfig(arch=Arch.CONFIG1, crossbar_size=32, bn_ports=8, seed=0)
    )
    e2 = attacks.brute_force_model(
        two, SystemConfig(arch=Arch.CONFIG2, crossbar_size=32, bn_ports=8, seed=0)
    )
    assert e2.model_log2 == pytest.approx(2 * e1.model_log2, abs=1e-9)
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    report(7, f"{cases} exhaustive enumerations match the effort formula; "
              f"per-layer-keys effort doubles ({elapsed:.1f} s)")


def test_criterion_08_divide_and_conquer(model, dataset):
    t0 = time.perf_counter()
    eval_x, eval_y = dataset.test_x, dataset.test_y
    clean = model_accuracy(model, eval_x, eval_y)
    depth = model.descriptor.depth
    assert depth >= 3

    # (a) per-layer keys: all-but-one stays at chance, all-correct restores
    cfg2 = SystemConfig(arch=Arch.CONFIG2, bn_ports=256, seed=8)
    hold_out_means = []
    for hold_out in range(depth):
        accs = []
        for trial in range(40):
            rng = spawn_rng(88, "all-but-one", hold_out, trial)
            sched = build_schedule(cfg2, model.descriptor,
                                   device_seed=int(rng.integers(2**63)))
            pmap = protect_model(model, cfg2, sched)
            keys = {li: sched.keys[li] for li in range(depth) if li != hold_out}
            accs.append(
                model_accuracy(extract_layers(pmap, sched.pm, keys), eval_x, eval_y)
            )
        mean = float(np.mean(accs))
        hold_out_means.append(mean)
        assert abs(mean - CHANCE) <= 0.04, (hold_out, mean)
    sched_full = build_schedule(cfg2, model.descriptor, device_seed=123)
    pmap_full = protect_model(model, cfg2, sched_full)
    all_keys = {li: sched_full.keys[li] for li in range(depth)}
    restored = model_accuracy(
        extract_layers(pmap_full, sched_full.pm, all_keys), eval_x, eval_y
    )
    assert abs(restored - clean) <= 0.01

    # (b) shared key: the stepwise ratio search terminates in [0.3, 1.0]
    cfg1 = SystemConfig(arch=Arch.CONFIG1, bn_ports=256, seed=8)
    sched1 = build_schedule(cfg1, model.descriptor, device_seed=321)
    pmap1 = protect_model(model, cfg1, sched1)
    est1 = attacks.brute_force_model(model, cfg1)
    dnc = attacks.dnc_config1(pmap1, sched1, eval_x, eval_y, est1,
                              trials=40, seed=88)
    assert dnc.ratio is not None and 0.3 <= dnc.ratio <= 1.0
    assert dnc.steps[-1].sensitive

    # (c) permuting more of the first layer's rows never helps
    thirds = (21, 42, 64)
    study = attacks.partial_row_permutation_study(
        model, 0, thirds, eval_x, eval_y, trials=40, seed=88
    )
    assert study[0] >= study[1] >= study[2]

    elapsed = time.perf_counter() - t0
    assert elapsed < 600.0
    report(8, f"all-but-one {['%.3f' % m for m in hold_out_means]}, restored "
              f"{restored:.3f}, ratio {dnc.ratio:.2f}, row study "
              f"{['%.3f' % a for a in study]} ({elapsed:.1f} s)")


def test_criterion_09_overhead_structure():
    t0 = time.perf_counter()
    from tdpp.overhead import (
        OverheadGrid,
        baseline_wang_counts,
        baseline_zou_counts,
        compare,
    )

    grid = OverheadGrid()
    rep = compare(grid)
    for (tiles, x, p, scheme), value in rep.area.items():
        if scheme == "config1":
            assert value == 1.0
    for tiles in grid.tiles:
        config2 = {
            rep.area[(tiles, x, p, "config2")]
            for x in grid.activated
            for p in grid.precisions
        }
        assert len(config2) == 1
    for scheme, x in (("zou", 16), ("wang", 8)):
        for p in grid.precisions:
            ratios = [rep.area[(t, x, p, scheme)] for t in grid.tiles]
            assert ratios == sorted(ratios) and len(set(ratios)) == len(ratios)
    assert baseline_wang_counts(16, 1)[1] == 1152
    assert baseline_zou_counts(16, 1)[1] == 3072
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    report(9, f"normalization, constancy, monotonicity and key-bit counts "
              f"hold ({elapsed * 1000:.0f} ms)")


def test_criterion_10_determinism(tmp_path):
    t0 = time.perf_counter()
    config = {
        "seed": 77,
        "system": {"arch": "config2", "bn_ports": 16, "tile_count": 20},
        "zoo": {"layer_dims": [64, 48, 24, 10], "epochs": 20,
                "n_train": 800, "n_test": 200},
        "attack": {"trials": 3, "eval_samples": 150},
    }
    digests = []
    for tag in ("first", "second"):
        out = tmp_path / tag
        cfg_path = tmp_path / f"{tag}.json"
        cfg_path.write_text(json.dumps({**config, "out": str(out)}))
        for command in ("prepare", "protect", "attack", "overhead"):
            assert cli_main([command, "--config", str(cfg_path)]) == 0
        digests.append(
            {
                name: hashlib.sha256((out / name).read_bytes()).hexdigest()
                for name in (
                    "dataset.tdpd",
                    "model.tdpq",
                    "protected.tdpm",
                    "effectiveness.csv",
                    "attack_steps.csv",
                    "attack_summary.json",
                    "overhead_area.csv",
                    "overhead_power.csv",
                )
            }
        )
    assert digests[0] == digests[1]
    elapsed = time.perf_counter() - t0
    report(10, f"two runs, {len(digests[0])} artifacts, identical hashes "
               f"({elapsed:.1f} s)")
