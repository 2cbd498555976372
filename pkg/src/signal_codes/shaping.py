"""Shaping: choose b_n = a_n - 2M k_n (or a_n - 2 k_n) so x = F b stays small.

Three schemes share one interface.  Tomlinson keeps every x_n in the box
[-M, M)^2, flexible precoding keeps x_n within a dither of a_n, and nested
shaping runs an M-algorithm over k to minimize block energy.  Symbols are
held as integer-valued complex numbers; all values involved stay far below
2^53 so this is exact.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .lattice import FilterPattern, GaussInt, QamSymbol, _as_gauss, as_symbols

log = logging.getLogger(__name__)

SCHEMES = ("tomlinson", "flexible", "nested")
HEADER_WIDTH_BITS = 6  # per-stage width field; 4 bits cannot describe 17-bit stages


class ShapingError(ValueError):
    pass


def _check_M(M: int) -> None:
    if M < 2 or M % 2:
        raise ShapingError("M must be an even integer >= 2")


def _rnd(v: float) -> int:
    return math.floor(v + 0.5)


def _crnd(z: complex) -> complex:
    return complex(math.floor(z.real + 0.5), math.floor(z.imag + 0.5))


@dataclass
class ShaperState:
    """Recursion memory: the last L b's (and last K x's for ARMA patterns)."""

    f: FilterPattern
    M: int
    scheme: str = "tomlinson"
    last_b: deque = field(default=None)  # newest first
    last_x: deque = field(default=None)

    def __post_init__(self):
        _check_M(self.M)
        if self.scheme not in SCHEMES:
            raise ShapingError(f"unknown scheme {self.scheme!r}")
        if self.last_b is None:
            self.last_b = deque([0j] * self.f.L, maxlen=self.f.L)
        if self.last_x is None:
            self.last_x = deque([0j] * self.f.K, maxlen=self.f.K)
        self._g = [complex(t) for t in self.f.taps[1:]]
        self._h = [complex(t) for t in self.f.den[1:]]

    def feedback(self) -> complex:
        """s_n = sum_l f_l b_{n-l} (minus sum_k h_k x_{n-k} for ARMA)."""
        s = 0j
        for g, b in zip(self._g, self.last_b):
            s += g * b
        for h, x in zip(self._h, self.last_x):
            s -= h * x
        return s

    def push(self, b: complex, x: complex) -> None:
        if self.f.L:
            self.last_b.appendleft(b)
        if self.f.K:
            self.last_x.appendleft(x)

    def copy(self) -> "ShaperState":
        return ShaperState(self.f, self.M, self.scheme, deque(self.last_b, maxlen=self.f.L),
                           deque(self.last_x, maxlen=self.f.K))


def _a_value(a) -> complex:
    if isinstance(a, QamSymbol):
        return complex(a.value)
    return complex(a)


def _tomlinson(a: complex, s: complex, M: int) -> tuple[complex, complex, complex]:
    v = a + s
    k = complex(_rnd(v.real / (2 * M)), _rnd(v.imag / (2 * M)))
    b = a - 2 * M * k
    return b, b + s, k


def _flexible(a: complex, s: complex) -> tuple[complex, complex, complex]:
    k = complex(_rnd(s.real / 2), _rnd(s.imag / 2))
    b = a - 2 * k
    return b, b + s, k


def tomlinson_step(a, state: ShaperState, f: FilterPattern | None = None):
    """One Tomlinson-Harashima step; returns (b, x, k) and advances ``state``."""
    b, x, k = _tomlinson(_a_value(a), state.feedback(), state.M)
    state.push(b, x)
    return _as_gauss(b), x, _as_gauss(k)


def flexible_step(a, state: ShaperState, f: FilterPattern | None = None):
    """One flexible-precoding step; x - a lies in [-1, 1)^2."""
    b, x, k = _flexible(_a_value(a), state.feedback())
    state.push(b, x)
    return _as_gauss(b), x, _as_gauss(k)


@dataclass
class ShapedBlock:
    a: np.ndarray
    b: np.ndarray
    x: np.ndarray  # x_0..x_{N-1}, the transmitted part
    k: np.ndarray
    state: ShaperState | None = None
    edge_hits: int = 0

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.x) ** 2))

    @property
    def power(self) -> float:
        return self.energy / len(self.x) if len(self.x) else 0.0


def shape_sequence(a, f: FilterPattern, M: int, scheme: str = "tomlinson",
                   state: ShaperState | None = None, M_alg: int = 1, r_k: int = 2) -> ShapedBlock:
    """Shape a run of QAM symbols.  Tomlinson and flexible continue ``state``."""
    _check_M(M)
    a = as_symbols(a)
    if scheme == "nested":
        if state is not None and any(state.last_b):
            raise ShapingError("nested shaping works per block from zero state")
        return nested_shape_block(a, f, M, M_alg, r_k=r_k)
    state = ShaperState(f, M, scheme) if state is None else state
    if state.M != M or state.f != f:
        raise ShapingError("state does not match the pattern / M")
    n = len(a)
    b = np.empty(n, dtype=np.complex128)
    x = np.empty(n, dtype=np.complex128)
    k = np.empty(n, dtype=np.complex128)
    if scheme == "tomlinson":
        step = lambda av, s: _tomlinson(av, s, M)  # noqa: E731
    elif scheme == "flexible":
        step = lambda av, s: _flexible(av, s)  # noqa: E731
    else:
        raise ShapingError(f"unknown scheme {scheme!r}")
    fb, push = state.feedback, state.push
    for i, av in enumerate(a.tolist()):
        bi, xi, ki = step(av, fb())
        push(bi, xi)
        b[i], x[i], k[i] = bi, xi, ki
    return ShapedBlock(a, b, x, k, state)


def nested_shape_block(a, f: FilterPattern, M: int, M_alg: int, r_k: int = 2) -> ShapedBlock:
    """M-algorithm over k_n minimizing sum_{n<N} |x_n|^2 from zero state.

    Each survivor is extended by every k in a (2 r_k + 1)^2 window centred on
    its own Tomlinson choice; the Tomlinson choice is candidate 0 so it wins
    ties, which makes M_alg = 1 reproduce Tomlinson exactly.  Survivors are
    ranked by (energy, parent rank, candidate index).
    """
    _check_M(M)
    if M_alg < 1:
        raise ShapingError("M_alg must be >= 1")
    if f.is_arma:
        raise ShapingError("nested shaping is implemented for FIR patterns")
    a = as_symbols(a)
    n = len(a)
    L = f.L
    g = f.array[1:]
    offs = [(0, 0)] + [(p, q) for p in range(-r_k, r_k + 1) for q in range(-r_k, r_k + 1) if (p, q) != (0, 0)]
    doff = np.array([complex(p, q) for p, q in offs])
    edge = np.array([max(abs(p), abs(q)) == r_k for p, q in offs])
    C = len(offs)

    hist = np.zeros((1, L), dtype=np.complex128)  # newest first
    energy = np.zeros(1)
    parents = []
    choices = []
    for i in range(n):
        s = hist @ g if L else np.zeros(len(energy), dtype=np.complex128)
        v = a[i] + s
        k0 = np.floor(v.real / (2 * M) + 0.5) + 1j * np.floor(v.imag / (2 * M) + 0.5)
        kc = k0[:, None] + doff[None, :]
        xc = v[:, None] - 2 * M * kc
        e = energy[:, None] + (xc.real**2 + xc.imag**2)
        flat = e.ravel()
        if flat.size > M_alg:
            # survivor order is rank order, so ravel index = (parent rank, candidate)
            thr = np.partition(flat, M_alg - 1)[M_alg - 1]
            idx = np.flatnonzero(flat <= thr)
            idx = idx[np.lexsort((idx, flat[idx]))][:M_alg]
        else:
            idx = np.lexsort((np.arange(flat.size), flat))
        par, cand = np.divmod(idx, C)
        kk = kc[par, cand]
        bb = a[i] - 2 * M * kk
        parents.append(par)
        choices.append((kk, cand))
        if L:
            hist = np.concatenate([bb[:, None], hist[par, :-1]], axis=1)
        energy = flat[idx]

    # trace back the best survivor (rank 0)
    k = np.empty(n, dtype=np.complex128)
    hits = 0
    r = 0
    for i in range(n - 1, -1, -1):
        kk, cand = choices[i]
        k[i] = kk[r]
        hits += int(edge[cand[r]])
        r = parents[i][r]
    if hits:
        log.debug("nested shaping: %d window-edge choices (r_k=%d)", hits, r_k)
    b = a - 2 * M * k
    x = np.convolve(b, f.array)[:n]
    return ShapedBlock(a, b, x, k, None, hits)


def inverse_shape(b, scheme: str, f: FilterPattern, M: int, strict: bool = True) -> np.ndarray:
    """Recover the QAM symbols a_n from b_n.

    Tomlinson / nested: centred mod 2M per component.  Flexible: rebuild x
    and slice to the nearest odd level (halves up, matching the shaper);
    levels outside +-(M-1) mean b was not produced by the shaper and raise
    unless ``strict`` is off, in which case they are clipped.
    """
    _check_M(M)
    b = as_symbols(b)
    if scheme in ("tomlinson", "nested"):
        def cmod(v):
            return np.mod(v + M, 2 * M) - M
        return cmod(b.real) + 1j * cmod(b.imag)
    if scheme != "flexible":
        raise ShapingError(f"unknown scheme {scheme!r}")
    if f.is_arma:
        from scipy.signal import lfilter
        x = lfilter(f.array, np.array(f.den), b)
    else:
        x = np.convolve(b, f.array)[: len(b)]
    ar = 2 * np.floor((x.real - 1) / 2 + 0.5) + 1
    ai = 2 * np.floor((x.imag - 1) / 2 + 0.5) + 1
    bad = (np.abs(ar) > M - 1) | (np.abs(ai) > M - 1)
    if bad.any():
        where = np.flatnonzero(bad)
        if strict:
            raise ShapingError(f"{len(where)} sliced symbols outside the constellation, first at {where[0]}")
        log.warning("inverse_shape: %d symbols clipped", len(where))
        ar = np.clip(ar, -(M - 1), M - 1)
        ai = np.clip(ai, -(M - 1), M - 1)
    return ar + 1j * ai


# --- block termination and tail compression -------------------------------------


def _signed_width(v: int) -> int:
    """Two's-complement width holding v."""
    return (v if v >= 0 else -v - 1).bit_length() + 1


def _stage_predictors(f: FilterPattern) -> list[np.ndarray]:
    """Predictor taps q_1..q_{k-1} for stage k = 1..L."""
    out = []
    for k in range(1, f.L + 1):
        if f.factor is not None:
            c = f.factor[0]
            p = np.array([1.0 + 0j])
            for _ in range(k - 1):
                p = np.convolve(p, [1.0, c])
        else:
            p = f.array[:k]
        out.append(p[1:])
    return out


@dataclass
class TailRecord:
    """The last L b's of a block plus their packed prediction-error form."""

    raw_b: tuple[GaussInt, ...]
    packed_bits: bytes = b""
    bit_widths: tuple[int, ...] = ()

    @property
    def n_bits(self) -> int:
        """Payload bits (both components of every stage)."""
        return 2 * sum(self.bit_widths)

    def to_bytes(self) -> bytes:
        return self.packed_bits

    @classmethod
    def from_bytes(cls, data: bytes, f: FilterPattern) -> "TailRecord":
        return cls(decompress_tail(data, f), data, _read_widths(data))


def terminate_block(state: ShaperState) -> TailRecord:
    """Capture b_{N-L}..b_{N-1} (oldest first); shaping may continue afterwards."""
    raw = tuple(_as_gauss(v) for v in reversed(state.last_b))
    return compress_tail(raw, state.f)


def prediction_errors(tail, f: FilterPattern) -> list[complex]:
    """b'_k = b_k + round(sum_l q_l b_{k-l}), the residual after the stage-k predictor."""
    b = [complex(v) for v in tail]
    preds = _stage_predictors(f)
    out = []
    for k in range(len(b)):
        q = preds[k]
        s = sum(q[l - 1] * b[k - l] for l in range(1, k + 1))
        out.append(b[k] + _crnd(complex(s)))
    return out


def _unpredict(errs: list[complex], f: FilterPattern) -> list[complex]:
    preds = _stage_predictors(f)
    b: list[complex] = []
    for k, e in enumerate(errs):
        q = preds[k]
        s = sum(q[l - 1] * b[k - l] for l in range(1, k + 1))
        b.append(e - _crnd(complex(s)))
    return b


class _BitWriter:
    def __init__(self):
        self.acc = 0
        self.n = 0

    def put(self, value: int, width: int) -> None:
        self.acc |= (value & ((1 << width) - 1)) << self.n
        self.n += width

    def getvalue(self) -> bytes:
        return self.acc.to_bytes((self.n + 7) // 8, "little")


class _BitReader:
    def __init__(self, data: bytes):
        self.acc = int.from_bytes(data, "little")
        self.pos = 0

    def get(self, width: int, signed: bool = False) -> int:
        v = (self.acc >> self.pos) & ((1 << width) - 1)
        self.pos += width
        if signed and width and v >> (width - 1):
            v -= 1 << width
        return v


def compress_tail(tail, f: FilterPattern, widths=None) -> TailRecord:
    """Pack the tail as per-stage prediction errors.

    Layout (little-endian bit order): one byte holding the stage count, a
    6-bit width per stage, then re/im of each stage in two's complement at
    that stage's width.  ``widths`` fixes the field widths; a value that does
    not fit widens its stage and the widening is logged.
    """
    tail = tuple(_as_gauss(v) for v in tail)
    if len(tail) != f.L:
        raise ShapingError(f"tail has {len(tail)} symbols, pattern needs {f.L}")
    if not tail:
        return TailRecord((), bytes([0]), ())
    errs = prediction_errors(tail, f)
    need = [max(_signed_width(int(e.real)), _signed_width(int(e.imag))) for e in errs]
    if widths is None:
        w = need
    else:
        w = [max(a, b) for a, b in zip(widths, need)]
        for i, (a, b) in enumerate(zip(widths, need)):
            if b > a:
                log.info("tail stage %d widened from %d to %d bits", i + 1, a, b)
    if max(w) >= 1 << HEADER_WIDTH_BITS:
        raise ShapingError("tail stage wider than the header can describe")
    bw = _BitWriter()
    bw.put(len(errs), 8)
    for x in w:
        bw.put(x, HEADER_WIDTH_BITS)
    for e, x in zip(errs, w):
        bw.put(int(e.real), x)
        bw.put(int(e.imag), x)
    return TailRecord(tail, bw.getvalue(), tuple(w))


def _read_widths(data: bytes) -> tuple[int, ...]:
    r = _BitReader(data)
    n = r.get(8)
    return tuple(r.get(HEADER_WIDTH_BITS) for _ in range(n))


def decompress_tail(data: bytes, f: FilterPattern) -> tuple[GaussInt, ...]:
    r = _BitReader(data)
    n = r.get(8)
    if n != f.L:
        raise ShapingError(f"record holds {n} stages, pattern has L={f.L}")
    w = [r.get(HEADER_WIDTH_BITS) for _ in range(n)]
    errs = []
    for x in w:
        re = r.get(x, signed=True)
        im = r.get(x, signed=True)
        errs.append(complex(re, im))
    return tuple(_as_gauss(v) for v in _unpredict(errs, f))


def tail_dynamic_range(b, f: FilterPattern) -> tuple[int, ...]:
    """Per-stage magnitude bits if any position of ``b`` could end a block.

    Slides the L-symbol window over the whole sequence and returns, per stage,
    the bit length of the largest component magnitude seen.  The packed field
    needs one more bit for the sign.
    """
    b = as_symbols(b)
    L = f.L
    if L == 0 or len(b) < L:
        return ()
    preds = _stage_predictors(f)
    n = len(b) - L + 1
    win = [b[j : j + n] for j in range(L)]  # win[j][t] = b_{t+j}
    out = []
    for k in range(L):
        s = np.zeros(n, dtype=np.complex128)
        for l in range(1, k + 1):
            s += preds[k][l - 1] * win[k - l]
        e = win[k] + (np.floor(s.real + 0.5) + 1j * np.floor(s.imag + 0.5))
        peak = int(max(np.abs(e.real).max(), np.abs(e.imag).max()))
        out.append(peak.bit_length())
    return tuple(out)
