"""AWGN channel, reference curves and the Monte-Carlo harness."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, optimize, stats
from scipy.special import ndtr

from . import __version__
from .decoder import FanoConfig, bidirectional_decode, path_score, receiver_block, stack_decode, fano_bias
from .lattice import FilterPattern, constellation_energy, random_qam, resolve_pattern
from .shaping import SCHEMES, compress_tail, nested_shape_block, shape_sequence

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


# --- channel ------------------------------------------------------------------------


def awgn_add(x, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    """Circular complex Gaussian noise of total variance sigma2 (sigma2/2 per component)."""
    if sigma2 < 0:
        raise ValueError("sigma2 must be >= 0")
    x = np.asarray(x, dtype=np.complex128)
    if sigma2 == 0:
        return x.copy()
    s = math.sqrt(sigma2 / 2)
    return x + s * (rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape))


def snr_to_sigma2(snr_db: float, signal_power: float) -> float:
    if signal_power <= 0:
        raise ValueError("signal_power must be positive")
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return signal_power / 10 ** (snr_db / 10)


def shaped_power(M: int) -> float:
    """Power of a codeword uniform on the box [-M, M)^2."""
    return 2 * M * M / 3


def gaussian_capacity(snr_db: float) -> float:
    return math.log2(1 + 10 ** (snr_db / 10))


# --- uniform-input reference curves --------------------------------------------------------
# Per real dimension: X uniform on [-1, 1), noise N(0, s^2) with the SNR fixing s.
# Both quantities depend on the SNR only, so the box size drops out.

_QUAD_OPTS = dict(limit=200, epsabs=1e-11, epsrel=1e-10)


def _real_noise_std(snr_db: float) -> float:
    # complex SNR = (2/3) / sigma2 with a box of half-width 1; per-dimension variance sigma2 / 2
    sigma2 = (2 / 3) / 10 ** (snr_db / 10)
    return math.sqrt(sigma2 / 2)


def _py(y, s):
    return 0.5 * (ndtr((y + 1) / s) - ndtr((y - 1) / s))


def uniform_input_capacity(snr_db: float) -> float:
    """I(X;Y) in bits per complex symbol for X uniform on the box."""
    s = _real_noise_std(snr_db)
    lim = 1 + 12 * s

    def integrand(y):
        p = _py(y, s)
        return -p * math.log2(p) if p > 0 else 0.0

    hy, err = integrate.quad(integrand, -lim, lim, points=[-1, 1], **_QUAD_OPTS)
    if err > 1e-6:
        raise ArithmeticError(f"capacity integral did not converge (err {err:g})")
    hn = 0.5 * math.log2(2 * math.pi * math.e * s * s)
    return 2 * (hy - hn)


def uniform_input_cutoff(snr_db: float) -> float:
    """Cutoff rate R0 in bits per complex symbol for X uniform on the box.

    R0 = -log2 int (int p(x) sqrt(p(y|x)) dx)^2 dy per real dimension; the
    inner integral has a closed form, the outer is adaptive quadrature.
    """
    s = _real_noise_std(snr_db)
    lim = 1 + 12 * s
    c = (2 * math.pi * s * s) ** -0.25 * math.sqrt(4 * math.pi * s * s) * 0.5
    r = math.sqrt(2) * s

    def inner(y):
        return c * (ndtr((y + 1) / r) - ndtr((y - 1) / r))

    val, err = integrate.quad(lambda y: inner(y) ** 2, -lim, lim, points=[-1, 1], **_QUAD_OPTS)
    if err > 1e-6:
        raise ArithmeticError(f"cutoff integral did not converge (err {err:g})")
    return -2 * math.log2(val)


def uniform_cutoff_gauss_legendre(snr_db: float, order: int = 400) -> float:
    """Same R0 by fixed-order Gauss-Legendre over [-1-12s, 1+12s]."""
    s = _real_noise_std(snr_db)
    lim = 1 + 12 * s
    xg, wg = np.polynomial.legendre.leggauss(order)
    y = xg * lim
    r = math.sqrt(2) * s
    c = (2 * math.pi * s * s) ** -0.25 * math.sqrt(4 * math.pi * s * s) * 0.5
    inner = c * (ndtr((y + 1) / r) - ndtr((y - 1) / r))
    return float(-2 * np.log2(np.sum(wg * inner**2) * lim))


def uniform_capacity_monte_carlo(snr_db: float, n: int, rng: np.random.Generator) -> tuple[float, float]:
    """Monte-Carlo estimate of the uniform-input capacity and its standard error."""
    s = _real_noise_std(snr_db)
    x = rng.uniform(-1, 1, n)
    y = x + s * rng.standard_normal(n)
    # log p(y|x) - log p(y), per dimension
    lpyx = -0.5 * ((y - x) / s) ** 2 - math.log(math.sqrt(2 * math.pi) * s)
    lpy = np.log(_py(y, s))
    v = (lpyx - lpy) / math.log(2)
    return 2 * float(v.mean()), 2 * float(v.std() / math.sqrt(n))


def snr_for_rate(fn, rate: float, lo: float = -10.0, hi: float = 60.0) -> float:
    """SNR (dB) at which the increasing curve ``fn`` reaches ``rate``."""
    return float(optimize.brentq(lambda s: fn(s) - rate, lo, hi, xtol=1e-6))


# --- Fano boundary -------------------------------------------------------------------------


def correct_path_slope(sigma2: float, n: int, f: FilterPattern, M: int, rng: np.random.Generator,
                       block: int = 2000) -> tuple[float, float]:
    """Mean per-symbol Fano score of the transmitted path and its standard error.

    Runs Tomlinson-shaped blocks through the channel and re-scores the true
    b against the noisy samples; the expected slope is B - sigma2.
    """
    B = fano_bias(sigma2)
    incs = []
    done = 0
    while done < n:
        m = min(block, n - done)
        r = shape_sequence(random_qam(m, M, rng), f, M)
        y = awgn_add(r.x, sigma2, rng)
        x = np.convolve(r.b, f.array)[:m]
        d = y - x
        incs.append(B - (d.real**2 + d.imag**2))
        done += m
    v = np.concatenate(incs)
    # the last block re-scored by the decoder's accumulator must agree
    if abs(np.sum(incs[-1]) - path_score(r.b, y, f, B)) > 1e-6 * len(incs[-1]):
        raise RuntimeError("score accumulation mismatch")
    return float(v.mean()), float(v.std() / math.sqrt(len(v)))


# --- simulation ------------------------------------------------------------------------------

_DECODERS = ("stack", "bidir")
_FANO_KEYS = {"max_stack", "branch_delta", "x_range_test", "merge_len", "r_b", "node_budget",
              "bias", "verify_merge", "x_limit"}


@dataclass
class SimConfig:
    pattern: str | dict = "table1:4"
    M: int = 8
    scheme: str = "tomlinson"
    decoder: str = "bidir"
    N: int = 500
    blocks: int = 500
    snr_db: list[float] = field(default_factory=lambda: [21.5])
    seed: int = 1
    jobs: int = 1
    M_alg: int = 1
    r_k: int = 2
    fano: dict = field(default_factory=lambda: {"max_stack": 10_000, "branch_delta": 12.0})
    power: str = "shaped"  # SNR reference: "shaped" 2M^2/3 or "constellation" 2(M^2-1)/3

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.M < 2 or self.M % 2:
            raise ConfigError("M must be an even integer >= 2")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}")
        if self.decoder not in _DECODERS:
            raise ConfigError(f"decoder must be one of {_DECODERS}")
        if self.N < 1 or self.blocks < 1 or self.jobs < 1 or self.M_alg < 1:
            raise ConfigError("N, blocks, jobs and M_alg must be positive")
        if self.power not in ("shaped", "constellation"):
            raise ConfigError("power must be 'shaped' or 'constellation'")
        bad = set(self.fano) - _FANO_KEYS
        if bad:
            raise ConfigError(f"unknown decoder settings: {sorted(bad)}")
        if not self.snr_db:
            raise ConfigError("snr_db list is empty")
        try:
            f = resolve_pattern(self.pattern)
        except Exception as exc:  # noqa: BLE001 - reported as a config problem
            raise ConfigError(f"bad pattern: {exc}") from exc
        if self.N < f.L:
            raise ConfigError("N must be at least the pattern memory L")
        self.snr_db = [float(s) for s in self.snr_db]

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        bad = set(d) - names
        if bad:
            raise ConfigError(f"unknown config keys: {sorted(bad)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SimConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def signal_power(self) -> float:
        return shaped_power(self.M) if self.power == "shaped" else constellation_energy(self.M)

    def fano_config(self, sigma2: float) -> FanoConfig:
        kw = dict(self.fano)
        if kw.get("branch_delta") is None:
            kw.pop("branch_delta", None)
        if self.scheme == "nested":
            kw.setdefault("x_limit", (2 * self.r_k + 1) * self.M)
        # a block that needs more than this is an erasure (counted as a frame error)
        kw.setdefault("node_budget", 1000 * self.N)
        return FanoConfig(sigma2=sigma2, M=self.M, **kw)


@dataclass
class SnrPoint:
    snr_db: float
    sigma2: float
    frames: int = 0
    frame_errors: int = 0
    decode_failures: int = 0
    cpl: int = 0
    evictions: int = 0
    computations: int = 0
    max_comp: float = 0.0
    error_blocks: list[int] = field(default_factory=list)

    @property
    def fer(self) -> float:
        return self.frame_errors / self.frames if self.frames else 0.0

    def mean_comp(self, N: int) -> float:
        return self.computations / (self.frames * N) if self.frames else 0.0


@dataclass
class SimResult:
    config: SimConfig
    points: list[SnrPoint]
    wall_time: float = 0.0
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        N = self.config.N
        return {
            "version": __version__,
            "config": self.config.to_dict(),
            "config_hash": self.config.digest(),
            "wall_time": self.wall_time,
            "meta": self.meta,
            "points": [
                {"snr_db": p.snr_db, "sigma2": p.sigma2, "frames": p.frames, "frame_errors": p.frame_errors,
                 "fer": p.fer, "mean_comp": p.mean_comp(N), "max_comp": p.max_comp,
                 "decode_failures": p.decode_failures, "cpl": p.cpl, "evictions": p.evictions,
                 "computations": p.computations, "error_blocks": p.error_blocks}
                for p in self.points
            ],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["snr_db", "fer", "mean_comp", "max_comp"])
        for p in self.points:
            w.writerow([p.snr_db, p.fer, p.mean_comp(self.config.N), p.max_comp])
        return buf.getvalue()


def _block_data(cfg: SimConfig, f: FilterPattern, block: int):
    rng = np.random.default_rng([cfg.seed, block])
    a = random_qam(cfg.N, cfg.M, rng)
    if cfg.scheme == "nested":
        sb = nested_shape_block(a, f, cfg.M, cfg.M_alg, r_k=cfg.r_k)
    else:
        sb = shape_sequence(a, f, cfg.M, cfg.scheme)
    # unit-variance noise, scaled per SNR: the same realization at every SNR
    nrng = np.random.default_rng([cfg.seed, block, 1])
    w = (nrng.standard_normal(cfg.N) + 1j * nrng.standard_normal(cfg.N)) / math.sqrt(2)
    return sb, w


def simulate_block(cfg: SimConfig, block: int, sigma2_list: list[float]) -> list[dict]:
    """Run one block at every SNR; returns one outcome dict per SNR."""
    f = resolve_pattern(cfg.pattern)
    sb, w = _block_data(cfg, f, block)
    L, N = f.L, cfg.N
    tail = [complex(v) for v in sb.b[N - L:]]
    dec = stack_decode if cfg.decoder == "stack" else bidirectional_decode
    out = []
    for sigma2 in sigma2_list:
        y = receiver_block(sb.x + math.sqrt(sigma2) * w, f, tail)
        res = dec(y, f, tail, cfg.fano_config(sigma2), truth=sb.b)
        ok = bool(res.ok and np.array_equal(res.b, sb.b))
        st = res.stats
        out.append({"ok": ok, "failed": not res.ok, "comp": st["entries_processed"],
                    "cpl": bool(st.get("cpl")), "evictions": st.get("evictions", 0),
                    "tail_bits": compress_tail(tail, f).n_bits if L else 0})
    return out


def _run_chunk(args):
    cfg_dict, blocks, sigma2_list = args
    cfg = SimConfig.from_dict(cfg_dict)
    return [(b, simulate_block(cfg, b, sigma2_list)) for b in blocks]


def run_simulation(cfg: SimConfig, progress=None) -> SimResult:
    """FER and complexity per SNR; deterministic for a fixed seed at any ``jobs``."""
    t0 = time.time()
    f = resolve_pattern(cfg.pattern)
    P = cfg.signal_power()
    sig = [snr_to_sigma2(s, P) for s in cfg.snr_db]
    points = [SnrPoint(s, v) for s, v in zip(cfg.snr_db, sig)]
    blocks = list(range(cfg.blocks))
    if cfg.jobs == 1:
        results = ((b, simulate_block(cfg, b, sig)) for b in blocks)
    else:
        chunks = [blocks[i :: cfg.jobs * 4] for i in range(cfg.jobs * 4)]
        ex = ProcessPoolExecutor(cfg.jobs)
        flat = []
        for part in ex.map(_run_chunk, [(cfg.to_dict(), c, sig) for c in chunks if c]):
            flat.extend(part)
        ex.shutdown()
        results = iter(sorted(flat))
    tail_bits = 0
    for b, outs in results:
        tail_bits += outs[0]["tail_bits"]
        for p, o in zip(points, outs):
            p.frames += 1
            p.computations += o["comp"]
            p.max_comp = max(p.max_comp, o["comp"] / cfg.N)
            p.cpl += o["cpl"]
            p.evictions += o["evictions"]
            if not o["ok"]:
                p.frame_errors += 1
                p.error_blocks.append(b)
            p.decode_failures += o["failed"]
        if progress:
            progress(b)
    mean_bits = tail_bits / cfg.blocks
    meta = {"signal_power": P, "tail_side_channel": "error-free", "mean_tail_bits": mean_bits,
            "tail_rate_loss": tail_overhead(mean_bits, cfg.M, cfg.N)}
    return SimResult(cfg, points, time.time() - t0, meta)


def tail_overhead(bits: float, M: int, N: int) -> float:
    """Tail side-channel bits as a fraction of the block's payload bits."""
    return bits / (N * 2 * math.log2(M))


@dataclass
class PairedComparison:
    only_a: int  # blocks where only decoder A failed
    only_b: int
    p_a_worse: float  # one-sided exact McNemar p-value for "A fails more often than B"

    def a_not_worse(self, alpha: float = 0.05) -> bool:
        return self.p_a_worse > alpha


def paired_comparison(a: SnrPoint, b: SnrPoint) -> PairedComparison:
    ea, eb = set(a.error_blocks), set(b.error_blocks)
    n_a, n_b = len(ea - eb), len(eb - ea)
    if n_a + n_b == 0:
        return PairedComparison(0, 0, 1.0)
    p = stats.binomtest(n_a, n_a + n_b, 0.5, alternative="greater").pvalue
    return PairedComparison(n_a, n_b, float(p))


# --- shaping gain -------------------------------------------------------------------------------


def shaping_gain_experiment(M_alg_list, Ms, f: FilterPattern | str = "table1:4", n_symbols: int = 100_000,
                            block_len: int = 2000, seed: int = 0, r_k: int = 2) -> list[dict]:
    """Mean shaped power vs. the uncoded constellation energy, in dB (positive = gain)."""
    f = resolve_pattern(f)
    rows = []
    for M in Ms:
        E = constellation_energy(M)
        for m_alg in M_alg_list:
            rng = np.random.default_rng([seed, M])
            energy = 0.0
            hits = 0
            done = 0
            while done < n_symbols:
                n = min(block_len, n_symbols - done)
                a = random_qam(n, M, rng)
                sb = nested_shape_block(a, f, M, m_alg, r_k=r_k)
                energy += sb.energy
                hits += sb.edge_hits
                done += n
            power = energy / done
            rows.append({"M": M, "qam": M * M, "M_alg": m_alg, "power": power,
                         "gain_db": 10 * math.log10(E / power), "edge_hits": hits, "symbols": done})
    return rows
