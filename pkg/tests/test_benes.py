import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from tdpp.core import ConfigError, DimensionError, Permutation, spawn_rng
from tdpp.benes import (
    PermutationModule,
    PmKey,
    RoutingError,
    pm_apply,
    pm_mirror_apply,
    pm_partial_apply,
    pm_realized_permutation,
    pm_reverse_apply,
    pm_route,
    random_key,
    reduction_ratio,
    reversal_key,
    switch_count,
    zero_key,
)


# ---------------------------------------------------------------------------
# Independent oracle: an explicit switch graph built as wire data and
# evaluated by token passing, one switch at a time.
# ---------------------------------------------------------------------------

def build_switch_graph(ports):
    """Wires from each switch output slot to the input slot it feeds."""
    wires = {}

    def build(col0, row0, p):
        if p == 2:
            ends = [(col0, row0, 0), (col0, row0, 1)]
            return ends, list(ends)
        h = p // 2
        cols = 2 * (p.bit_length() - 1) - 1
        last = col0 + cols - 1
        top_in, top_out = build(col0 + 1, row0, h)
        bot_in, bot_out = build(col0 + 1, row0 + h // 2, h)
        ins, outs = [], []
        for i in range(h):
            ins += [(col0, row0 + i, 0), (col0, row0 + i, 1)]
            outs += [(last, row0 + i, 0), (last, row0 + i, 1)]
            wires[(col0, row0 + i, 0)] = top_in[i]
            wires[(col0, row0 + i, 1)] = bot_in[i]
            wires[top_out[i]] = (last, row0 + i, 0)
            wires[bot_out[i]] = (last, row0 + i, 1)
        return ins, outs

    ins, outs = build(0, 0, ports)
    return wires, ins, outs


def switch_graph_eval(ports, bits, values):
    """Gate-level evaluation; bits are column-major, top-to-bottom."""
    wires, ins, outs = build_switch_graph(ports)
    half = ports // 2
    ncols = 2 * (ports.bit_length() - 1) - 1
    pending = {}
    for line, value in enumerate(values):
        pending[ins[line]] = value
    for col in range(ncols):
        for row in range(half):
            a = pending.pop((col, row, 0))
            b = pending.pop((col, row, 1))
            if bits[col * half + row]:
                a, b = b, a
            for slot, val in ((0, a), (1, b)):
                endpoint = (col, row, slot)
                if endpoint in wires:
                    pending[wires[endpoint]] = val
                else:
                    pending[endpoint] = val
    return [pending[endpoint] for endpoint in outs]


class TestSwitchCount:
    def test_closed_form_values(self):
        assert [switch_count(2**b) for b in range(1, 9)] == [
            1, 6, 20, 56, 144, 352, 832, 1920,
        ]

    def test_single_switch(self):
        assert switch_count(2) == 1

    def test_documented_sizes(self):
        assert switch_count(256) == 1920
        assert switch_count(16) == 56

    def test_non_power_of_two_rejected(self):
        with pytest.raises(ConfigError):
            switch_count(6)
        with pytest.raises(ConfigError):
            switch_count(1)

    def test_module_key_bits(self):
        assert PermutationModule(256, 256).key_bits == 1920
        assert PermutationModule(256, 16).key_bits == 16 * 56


class TestPmApply:
    def test_two_port_select(self):
        pm = PermutationModule(2, 2)
        assert pm_apply(pm, PmKey((0,)), ["a", "b"]) == ["a", "b"]
        assert pm_apply(pm, PmKey((1,)), ["a", "b"]) == ["b", "a"]

    def test_zero_key_identity_across_widths(self):
        for width, block in ((4, 4), (8, 2), (16, 16), (32, 8)):
            pm = PermutationModule(width, block)
            v = list(range(width))
            assert pm_apply(pm, zero_key(pm), v) == v

    def test_matches_switch_graph_oracle(self):
        pm = PermutationModule(8, 8)
        rng = spawn_rng(10, "graph-oracle")
        v = list("abcdefgh")
        for _ in range(1000):
            key = random_key(pm, rng)
            assert pm_apply(pm, key, v) == switch_graph_eval(8, key.bits, v)

    def test_multi_block_matches_graph_oracle_per_block(self):
        pm = PermutationModule(8, 4)
        rng = spawn_rng(11, "graph-oracle-blocks")
        for _ in range(200):
            key = random_key(pm, rng)
            v = [int(x) for x in rng.integers(0, 100, size=8)]
            got = pm_apply(pm, key, v)
            want = switch_graph_eval(4, key.bits[:6], v[:4]) + switch_graph_eval(
                4, key.bits[6:], v[4:]
            )
            assert got == want

    def test_length_mismatch(self):
        pm = PermutationModule(4, 4)
        with pytest.raises(DimensionError):
            pm_apply(pm, zero_key(pm), [1, 2, 3])
        with pytest.raises(DimensionError):
            pm_apply(pm, PmKey((0,) * 5), [1, 2, 3, 4])


class TestRouting:
    def test_identity_routes_to_identity(self):
        pm = PermutationModule(16, 4)
        key = pm_route(pm, Permutation.identity(16))
        assert pm_apply(pm, key, list(range(16))) == list(range(16))

    def test_exhaustive_four_port(self):
        pm = PermutationModule(4, 4)
        for dest in itertools.permutations(range(4)):
            key = pm_route(pm, Permutation(dest))
            assert pm_realized_permutation(pm, key).dest == dest

    def test_documented_permutation_on_four_ports(self):
        pm = PermutationModule(4, 4)
        p = Permutation((2, 3, 0, 1))
        key = pm_route(pm, p)
        assert pm_apply(pm, key, ["a", "b", "c", "d"]) == ["c", "d", "a", "b"]

    def test_sampled_eight_port_against_graph_oracle(self):
        pm = PermutationModule(8, 8)
        rng = spawn_rng(12, "route-sample")
        for _ in range(300):
            p = Permutation.random(8, rng)
            key = pm_route(pm, p)
            assert switch_graph_eval(8, key.bits, list(range(8))) == p.apply(
                list(range(8))
            )

    def test_non_block_diagonal_names_offending_chunk(self):
        pm = PermutationModule(8, 4)
        dest = (4, 1, 2, 3, 0, 5, 6, 7)  # element 0 leaves chunk 0
        with pytest.raises(RoutingError, match="chunk 0"):
            pm_route(pm, Permutation(dest))

    def test_route_is_deterministic(self):
        pm = PermutationModule(16, 16)
        rng = spawn_rng(13, "route-det")
        p = Permutation.random(16, rng)
        assert pm_route(pm, p).bits == pm_route(pm, p).bits


class TestRealizedPermutation:
    def test_zero_key_is_identity(self):
        pm = PermutationModule(16, 4)
        assert pm_realized_permutation(pm, zero_key(pm)).dest == tuple(range(16))

    def test_two_port_crossed(self):
        pm = PermutationModule(2, 2)
        assert pm_realized_permutation(pm, PmKey((1,))).dest == (1, 0)

    def test_consistent_with_apply_on_random_vectors(self):
        pm = PermutationModule(16, 8)
        rng = spawn_rng(14, "realized")
        for _ in range(100):
            key = random_key(pm, rng)
            p = pm_realized_permutation(pm, key)
            v = [int(x) for x in rng.integers(0, 1000, size=16)]
            assert pm_apply(pm, key, v) == p.apply(v)

    def test_key_space_collapses_to_block_factorial(self):
        for ports in (2, 4):
            pm = PermutationModule(ports, ports)
            realized = {
                pm_realized_permutation(pm, PmKey(bits)).dest
                for bits in itertools.product((0, 1), repeat=pm.key_bits)
            }
            assert len(realized) == math.factorial(ports)


class TestReverseApply:
    def test_round_trip_random_vectors(self):
        pm = PermutationModule(16, 4)
        rng = spawn_rng(15, "reverse")
        for _ in range(1000):
            key = random_key(pm, rng)
            v = [int(x) for x in rng.integers(0, 256, size=16)]
            assert pm_reverse_apply(pm, key, pm_apply(pm, key, v)) == v

    @pytest.mark.parametrize("width,block", [(8, 2), (8, 8), (32, 8), (64, 64)])
    def test_round_trip_across_widths(self, width, block):
        pm = PermutationModule(width, block)
        rng = spawn_rng(15, "reverse-widths", width, block)
        for _ in range(100):
            key = random_key(pm, rng)
            v = [int(x) for x in rng.integers(0, 256, size=width)]
            assert pm_reverse_apply(pm, key, pm_apply(pm, key, v)) == v

    def test_identity_key(self):
        pm = PermutationModule(8, 8)
        v = list(range(8))
        assert pm_reverse_apply(pm, zero_key(pm), v) == v

    def test_documented_vmm_recovery(self):
        # permuted input times permuted matrix, then reverse permutation,
        # recovers the unpermuted product
        pm = PermutationModule(4, 4)
        p = Permutation((2, 3, 0, 1))
        key = pm_route(pm, p)
        rng = spawn_rng(16, "vmm-reverse")
        w = rng.integers(-128, 128, size=(4, 4)).astype(np.int64)
        v = rng.integers(0, 256, size=4).astype(np.int64)
        wp = np.empty_like(w)
        wp[np.ix_(p.dest, p.dest)] = w
        vp = np.array(pm_apply(pm, key, list(v)), dtype=np.int64)
        recovered = pm_reverse_apply(pm, key, list(vp @ wp))
        assert recovered == list(v @ w)

    def test_mirror_operator_is_not_the_inverse_in_general(self):
        pm = PermutationModule(4, 4)
        key = pm_route(pm, Permutation((1, 0, 2, 3)))
        v = ["a", "b", "c", "d"]
        forward = pm_apply(pm, key, v)
        assert pm_reverse_apply(pm, key, forward) == v
        assert pm_mirror_apply(pm, key, forward) != v

    def test_reversal_key_mirrors_blocks(self):
        for ports in (2, 4, 8, 16, 32):
            pm = PermutationModule(ports, ports)
            v = list(range(ports))
            assert pm_apply(pm, reversal_key(pm), v) == v[::-1]


class TestPartialApply:
    def test_all_present_equals_apply(self):
        pm = PermutationModule(8, 4)
        rng = spawn_rng(17, "partial")
        for _ in range(50):
            key = random_key(pm, rng)
            v = [int(x) for x in rng.integers(0, 9, size=8)]
            assert pm_partial_apply(pm, key, v) == pm_apply(pm, key, v)

    def test_documented_scatter_with_absent_markers(self):
        pm = PermutationModule(4, 4)
        key = pm_route(pm, Permutation((2, 3, 0, 1)))
        assert pm_partial_apply(pm, key, ["a", None, None, "b"]) == [
            None, "b", "a", None,
        ]

    def test_all_absent(self):
        pm = PermutationModule(8, 8)
        rng = spawn_rng(18, "partial-z")
        key = random_key(pm, rng)
        assert pm_partial_apply(pm, key, [None] * 8) == [None] * 8

    def test_absent_markers_follow_scatter_oracle(self):
        pm = PermutationModule(8, 8)
        rng = spawn_rng(19, "partial-oracle")
        for _ in range(100):
            key = random_key(pm, rng)
            dest = pm_realized_permutation(pm, key).dest
            v = [i if rng.integers(2) else None for i in range(8)]
            expected = [None] * 8
            for i, val in enumerate(v):
                expected[dest[i]] = val
            assert pm_partial_apply(pm, key, v) == expected


class TestReductionRatio:
    def test_documented_reduction(self):
        ratio = reduction_ratio(256, 16)
        assert ratio == 1 - Fraction(16 * 56, 1920)
        assert abs(float(ratio) - 0.533) < 1e-3

    def test_no_reduction(self):
        assert reduction_ratio(256, 256) == 0

    def test_small_case(self):
        assert reduction_ratio(16, 2) == 1 - Fraction(8, 56)

    def test_divisibility_enforced(self):
        with pytest.raises(ConfigError):
            reduction_ratio(16, 3)


class TestKeySerialization:
    def test_documented_packing(self):
        key = PmKey((1, 0, 1, 1, 0, 0, 1, 1, 1))
        assert key.to_bytes() == b"\x09\x00\x00\x00\xcd\x01"

    def test_round_trip(self):
        rng = spawn_rng(20, "keyser")
        for width, block in ((16, 4), (64, 16), (256, 256)):
            pm = PermutationModule(width, block)
            key = random_key(pm, rng)
            assert PmKey.from_bytes(key.to_bytes()) == key

    def test_rejects_bad_blob(self):
        with pytest.raises(ConfigError):
            PmKey.from_bytes(b"\x08\x00\x00\x00")  # missing body


class TestRearrangeability:
    def test_every_four_port_block_diagonal_routes(self):
        pm = PermutationModule(8, 4)
        for a in itertools.permutations(range(4)):
            for b in itertools.permutations(range(4)):
                dest = tuple(a) + tuple(x + 4 for x in b)
                key = pm_route(pm, Permutation(dest))
                assert pm_realized_permutation(pm, key).dest == dest
