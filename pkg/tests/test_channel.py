import json
import math

import numpy as np
import pytest

from signal_codes.channel import (ConfigError, SimConfig, awgn_add, gaussian_capacity, paired_comparison,
                                  run_simulation, shaped_power, snr_to_sigma2, tail_overhead,
                                  uniform_capacity_monte_carlo, uniform_cutoff_gauss_legendre,
                                  uniform_input_capacity, uniform_input_cutoff)
from signal_codes.channel import SnrPoint
from signal_codes.decoder import FanoConfig, receiver_block, stack_decode
from signal_codes.lattice import random_qam, table1_pattern
from signal_codes.shaping import inverse_shape, shape_sequence


def test_awgn_statistics():
    rng = np.random.default_rng(0)
    x = np.zeros(1_000_000, dtype=complex)
    assert np.array_equal(awgn_add(x[:10] + 1, 0.0, rng), x[:10] + 1)
    w = awgn_add(x, 0.5, rng)
    assert np.mean(np.abs(w) ** 2) == pytest.approx(0.5, rel=0.01)
    cov = np.mean(w.real * w.imag)
    se = np.std(w.real * w.imag) / math.sqrt(len(w))
    assert abs(cov) < 3 * se
    with pytest.raises(ValueError):
        awgn_add(x, -1, rng)


def test_snr_convention():
    s = snr_to_sigma2(18.0, 42)
    assert s == pytest.approx(0.6657, abs=1e-4)
    assert math.log2(1 + 42 / s) == pytest.approx(6.0, abs=0.01)
    assert snr_to_sigma2(0, 42) == 42
    assert snr_to_sigma2(math.inf, 42) == 0
    assert shaped_power(8) == pytest.approx(128 / 3)


def test_cutoff_cross_checks():
    for snr in (15.0, 20.9, 25.0):
        assert uniform_cutoff_gauss_legendre(snr) == pytest.approx(uniform_input_cutoff(snr), abs=0.02)
    mc, se = uniform_capacity_monte_carlo(19.1, 400_000, np.random.default_rng(1))
    assert abs(mc - uniform_input_capacity(19.1)) < max(4 * se, 0.02)


def test_asymptotic_shaping_gap():
    # at high SNR the uniform box loses pi*e/6 (1.53 dB) against Gaussian input
    snr = 40.0
    cu = uniform_input_capacity(snr)
    gap = snr - 10 * math.log10(2 ** cu - 1)
    assert gap == pytest.approx(10 * math.log10(math.pi * math.e / 6), abs=0.1)
    assert gaussian_capacity(snr) > cu


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        SimConfig(M=7)
    with pytest.raises(ConfigError):
        SimConfig(decoder="viterbi")
    with pytest.raises(ConfigError):
        SimConfig.from_dict({"blocksz": 3})
    with pytest.raises(ConfigError):
        SimConfig(fano={"stack": 5})
    with pytest.raises(ConfigError):
        SimConfig(pattern="table1:7")
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"N": 40, "blocks": 3}))
    cfg = SimConfig.from_json(p)
    assert cfg.N == 40 and cfg.digest() == SimConfig(N=40, blocks=3).digest()
    assert SimConfig(scheme="nested").fano_config(1.0).x_limit == 5 * 8


def small(**kw):
    base = dict(N=60, blocks=6, snr_db=[22.0, 30.0], seed=4)
    base.update(kw)
    return SimConfig(**base)


def test_simulation_deterministic_and_parallel_consistent():
    a = run_simulation(small())
    b = run_simulation(small())
    c = run_simulation(small(jobs=2))
    assert a.to_json()["points"] == b.to_json()["points"]
    for p, q in zip(a.points, c.points):
        assert (p.frame_errors, p.computations, p.error_blocks) == (q.frame_errors, q.computations, q.error_blocks)


def test_simulation_high_snr_clean_and_outputs():
    r = run_simulation(small(snr_db=[60.0], decoder="stack"))
    p = r.points[0]
    assert p.frames == 6 and p.fer == 0
    assert p.max_comp >= p.mean_comp(60)
    js = r.to_json()
    assert js["config"]["N"] == 60 and "tail_rate_loss" in js["meta"]
    header = r.to_csv().splitlines()[0]
    assert header.split(",")[:4] == ["snr_db", "fer", "mean_comp", "max_comp"]


def test_simulation_counts_errors_at_low_snr():
    r = run_simulation(small(snr_db=[12.0], blocks=4, fano={"max_stack": 200, "branch_delta": 12.0,
                                                             "node_budget": 3000}))
    p = r.points[0]
    assert p.frame_errors == len(p.error_blocks) and p.fer > 0


@pytest.mark.parametrize("scheme", ["tomlinson", "flexible", "nested"])
def test_noiseless_end_to_end(scheme):
    f = table1_pattern(3)
    a = random_qam(150, 8, np.random.default_rng(2))
    sb = shape_sequence(a, f, 8, scheme, M_alg=8)
    tail = [complex(v) for v in sb.b[-f.L:]]
    cfg = FanoConfig(sigma2=0.05, M=8, x_range_test=scheme != "flexible",
                     x_limit=40 if scheme == "nested" else None)
    res = stack_decode(receiver_block(sb.x, f, tail), f, tail, cfg)
    assert res.ok and np.array_equal(inverse_shape(res.b, scheme, f, 8), a)


def test_paired_comparison():
    a, b = SnrPoint(20, 1.0), SnrPoint(20, 1.0)
    a.error_blocks, b.error_blocks = [1, 2], [1, 2, 3, 4, 5, 6, 7, 8]
    cmp = paired_comparison(a, b)
    assert (cmp.only_a, cmp.only_b) == (0, 6) and cmp.a_not_worse()
    worse = paired_comparison(b, a)
    assert worse.p_a_worse == pytest.approx(0.5**6) and not worse.a_not_worse()


def test_tail_overhead():
    assert tail_overhead(72, 8, 2000) == pytest.approx(72 / 12000)
