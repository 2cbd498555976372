import math

import numpy as np
import pytest

from signal_codes.channel import awgn_add
from signal_codes.decoder import (FanoConfig, MergeIndex, SymbolMemory, _forward, bidirectional_decode,
                                  branch_metric, fano_bias, path_score, receiver_block, stack_decode)
from signal_codes.heap import HeapEmpty, MinMaxHeap
from signal_codes.lattice import FilterPattern, random_qam, table1_pattern
from signal_codes.shaping import shape_sequence

ROW4 = table1_pattern(4)


def block(f, N, M, sigma2, seed, scheme="tomlinson", **kw):
    rng = np.random.default_rng(seed)
    sb = shape_sequence(random_qam(N, M, rng), f, M, scheme, **kw)
    tail = [complex(v) for v in sb.b[N - f.L:]]
    y = awgn_add(sb.x, sigma2, rng) if sigma2 > 0 else sb.x
    return sb, tail, receiver_block(y, f, tail)


class TestMetric:
    def test_bias_examples(self):
        assert fano_bias(4 / math.pi) == pytest.approx(0, abs=1e-15)
        s = 4 / (math.pi * math.e)
        assert fano_bias(s) == pytest.approx(s)
        assert fano_bias(0.1) == pytest.approx(0.1 * math.log(40 / math.pi))
        assert fano_bias(0.1) == pytest.approx(0.254415, abs=1e-6)
        assert fano_bias(0.1, "real") == pytest.approx(0.1 * math.log(20 / math.pi))
        with pytest.raises(ValueError):
            fano_bias(0)

    def test_branch_metric(self):
        f = table1_pattern(1)
        state = (1 + 1j, -3 + 1j)
        x = (1 - 1j) + f.taps[1] * state[0] + f.taps[2] * state[1]
        assert branch_metric(x, 1 - 1j, state, f, 0.7) == pytest.approx(0.7)
        assert branch_metric(x + 0.3j, 1 - 1j, state, f, 0.7) == pytest.approx(0.7 - 0.09)


class TestSuccessors:
    def _root_cands(self, M, delta):
        y = np.zeros(10 + ROW4.L, dtype=complex)
        y[0] = 0.3 + 0.2j  # off-centre so the nearest point is unique
        d = _forward(y, ROW4, 10, [1 + 1j] * 3, np.zeros(3, dtype=complex),
                     FanoConfig(sigma2=1, M=M, branch_delta=delta), None)
        e = d.pop()
        d.extend(e)
        return len(d.heap)

    def test_box_counts(self):
        assert self._root_cands(2, math.inf) == 4
        assert self._root_cands(8, math.inf) == 64

    def test_greedy(self):
        assert self._root_cands(8, 0.0) == 1

    def test_true_symbol_never_pruned_by_box(self):
        sb, tail, y = block(ROW4, 300, 8, 5.0, 1)
        d = _forward(y, ROW4, 300, tail, np.zeros(3, dtype=complex), FanoConfig(sigma2=5.0, M=8), None)
        for n in range(3, 297):
            state = tuple(sb.b[n - 1 - i] for i in range(3))
            assert sb.b[n] in [b for _, b in d._candidates(n, state)]


class TestStack:
    @pytest.mark.parametrize("row", [1, 2, 3, 4, 5])
    def test_noiseless_recovery(self, row):
        f = table1_pattern(row)
        sb, tail, y = block(f, 100, 8, 0.0, row)
        res = stack_decode(y, f, tail, FanoConfig(sigma2=0.05, M=8))
        assert res.ok and np.array_equal(res.b, sb.b)
        assert res.stats["entries_processed"] <= 101 + f.L
        assert res.stats["leaked"] == 0

    def test_score_replays(self):
        sb, tail, y = block(ROW4, 200, 8, 0.17, 4)
        cfg = FanoConfig(sigma2=0.17, M=8)
        res = stack_decode(y, ROW4, tail, cfg)
        assert res.ok
        assert res.score == pytest.approx(path_score(res.b, y, ROW4, cfg.B), abs=1e-9)

    def test_moderate_snr_blocks(self):
        sigma2 = (2 * 64 / 3) / 10 ** 2.4
        for seed in range(10):
            sb, tail, y = block(ROW4, 500, 8, sigma2, 100 + seed)
            res = stack_decode(y, ROW4, tail, FanoConfig(sigma2=sigma2, M=8, branch_delta=12.0), truth=sb.b)
            assert res.ok and np.array_equal(res.b, sb.b) and not res.stats["cpl"]

    def test_budget_failure(self):
        sb, tail, y = block(ROW4, 200, 8, 20.0, 5)
        res = stack_decode(y, ROW4, tail, FanoConfig(sigma2=20.0, M=8, node_budget=50))
        assert not res.ok and res.stats["failure"] == "budget" and res.stats["leaked"] == 0

    def test_streaming_head(self):
        rng = np.random.default_rng(9)
        from signal_codes.shaping import ShaperState
        st = ShaperState(ROW4, 8)
        first = shape_sequence(random_qam(80, 8, rng), ROW4, 8, state=st)
        second = shape_sequence(random_qam(80, 8, rng), ROW4, 8, state=st)
        tail = [complex(v) for v in second.b[-3:]]
        y = receiver_block(second.x, ROW4, tail)
        head = list(first.b[-3:])
        for dec in (stack_decode, bidirectional_decode):
            res = dec(y, ROW4, tail, FanoConfig(sigma2=0.1, M=8), head=head)
            assert res.ok and np.array_equal(res.b, second.b)

    def test_nested_block_with_wider_box(self):
        sb, tail, y = block(ROW4, 120, 8, 0.17, 6, scheme="nested", M_alg=16)
        res = stack_decode(y, ROW4, tail, FanoConfig(sigma2=0.17, M=8, x_limit=5 * 8, branch_delta=12.0))
        assert res.ok and np.array_equal(res.b, sb.b)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            FanoConfig(sigma2=1, M=8, max_stack=1)
        with pytest.raises(ValueError):
            FanoConfig(sigma2=1, M=8, path_memory="truncated")
        with pytest.raises(ValueError):
            FanoConfig(sigma2=1, M=7)


class TestBidirectional:
    @pytest.mark.parametrize("row", [1, 4])
    def test_noiseless_matches_stack(self, row):
        f = table1_pattern(row)
        sb, tail, y = block(f, 100, 8, 0.0, row)
        cfg = FanoConfig(sigma2=0.05, M=8)
        b = bidirectional_decode(y, f, tail, cfg)
        s = stack_decode(y, f, tail, cfg)
        assert b.ok and np.array_equal(b.b, s.b) and np.array_equal(b.b, sb.b)
        assert b.stats["leaked"] == 0

    def test_noisy_blocks_leak_free(self):
        sigma2 = (2 * 64 / 3) / 10 ** 2.15
        for seed in range(6):
            sb, tail, y = block(ROW4, 500, 8, sigma2, 200 + seed)
            res = bidirectional_decode(y, ROW4, tail, FanoConfig(sigma2=sigma2, M=8, branch_delta=12.0))
            assert res.ok and np.array_equal(res.b, sb.b)
            assert res.stats["leaked"] == 0

    def test_identity_pattern(self):
        f = FilterPattern.fir([1])
        sb, tail, y = block(f, 50, 4, 0.2, 3)
        res = bidirectional_decode(y, f, tail, FanoConfig(sigma2=0.2, M=4))
        assert res.ok and len(res.b) == 50


class TestSymbolMemory:
    def test_refcounts_and_paths(self):
        m = SymbolMemory()
        a = m.alloc("a", -1)
        b = m.alloc("b", a)
        c = m.alloc("c", a)
        m.release(a)  # the stack reference to a goes away; children keep it
        assert m.path(b) == ["a", "b"] and m.path(c) == ["a", "c"]
        assert m.live == 3 and m.reachable([b, c]) == 3
        m.release(b)
        assert m.live == 2
        m.release(c)
        assert m.live == 0
        with pytest.raises(RuntimeError):
            m.release(a)


class TestMergeIndex:
    def test_exact_match_only(self):
        idx = MergeIndex()
        idx.insert((5, (1 + 1j, 3 - 1j)), 1, "e1")
        assert idx.query((5, (1 + 1j, 3 - 1j))) == {1: "e1"}
        assert idx.query((5, (1 + 1j, 3 + 1j))) == {}
        assert idx.query((6, (1 + 1j, 3 - 1j))) == {}
        idx.remove((5, (1 + 1j, 3 - 1j)), 1)
        assert len(idx) == 0

    def test_random_no_false_positives(self):
        rng = np.random.default_rng(0)
        idx = MergeIndex()
        keys = set()
        V = rng.integers(-7, 8, (1_000_000, 4)).tolist()
        P = rng.integers(0, 50, 1_000_000).tolist()
        for i, (v, p) in enumerate(zip(V, P)):
            key = (p, (complex(v[0], v[1]), complex(v[2], v[3])))
            if i % 2 == 0:
                idx.insert(key, i, i)
                keys.add(key)
            else:
                assert bool(idx.query(key)) == (key in keys)


class TestHeapBasics:
    def test_example(self):
        h = MinMaxHeap()
        for s in (3, 1, 2):
            h.push((s,))
        assert h.pop_best() == (3,) and h.pop_worst() == (1,)
        with pytest.raises(HeapEmpty):
            MinMaxHeap().peek_best()

    def test_eviction_contract(self):
        h = MinMaxHeap(3)
        for s in (5, 6, 7):
            assert h.push((s,)) is None
        assert h.push((1,)) == (1,) and len(h) == 3  # worse than everything: no-op
        assert h.push((9,)) == (5,)  # better: evicts the minimum
        assert sorted(h) == [(6,), (7,), (9,)] and h.evictions == 2
        h.check()
