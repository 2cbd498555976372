"""Sequential decoding of signal codes.

The stack decoder keeps partial paths b_0..b_{n-1} in a bounded min-max
heap scored by the Fano metric and always extends the best one.  The
bidirectional decoder runs a second stack decoder on the time-reversed,
allpass-filtered block and stops when the two meet.

Block framing: the transmitter sends x_0..x_{N-1}.  The last L data symbols
(the tail) reach the receiver error-free, so it can append the noiseless
samples x_N..x_{N+L-1}; ``receiver_block`` builds that length-(N+L) vector.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .heap import MinMaxHeap
from .lattice import FilterPattern, as_symbols, backward_code_transform

log = logging.getLogger(__name__)

FANO_BOUNDARY = 4 / (math.pi * math.e)


def fano_bias(sigma2: float, kind: str = "complex", log_base: float = math.e) -> float:
    """Per-symbol bias B of the Fano metric for noise variance sigma2."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    c = {"complex": 4.0, "real": 2.0}.get(kind)
    if c is None:
        raise ValueError(f"unknown kind {kind!r}")
    return sigma2 * math.log(c / (math.pi * sigma2)) / math.log(log_base)


def branch_metric(y_n: complex, b: complex, state, f: FilterPattern, B: float) -> float:
    """B - |y_n - (b + sum_l f_l b_{n-l})|^2; ``state`` holds b_{n-1}, b_{n-2}, ... ."""
    x = complex(b)
    for fl, bl in zip(f.taps[1:], state):
        x += fl * complex(bl)
    d = y_n - x
    return B - (d.real * d.real + d.imag * d.imag)


@dataclass
class FanoConfig:
    sigma2: float
    M: int
    bias: float | None = None  # None -> fano_bias(sigma2)
    max_stack: int = 10_000
    branch_delta: float = math.inf
    x_range_test: bool = True
    merge_len: int | None = None  # None -> L
    path_memory: str = "full"
    r_b: int = 2
    node_budget: int = 10**7
    verify_merge: bool = False
    x_limit: float | None = None  # x-range box half-width; None -> M

    def __post_init__(self):
        if self.max_stack < 2:
            raise ValueError("max_stack must be >= 2")
        if self.M < 2 or self.M % 2:
            raise ValueError("M must be an even integer >= 2")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be >= 0")
        if self.branch_delta < 0:
            raise ValueError("branch_delta must be >= 0")
        if self.path_memory != "full":
            raise ValueError("only full path memory is implemented")

    @property
    def X(self) -> float:
        return float(self.M if self.x_limit is None else self.x_limit)

    @property
    def B(self) -> float:
        if self.bias is not None:
            return self.bias
        return fano_bias(self.sigma2) if self.sigma2 > 0 else 0.0

    def to_json(self) -> dict:
        d = asdict(self)
        d["branch_delta"] = None if math.isinf(self.branch_delta) else self.branch_delta
        d["B"] = self.B
        return d


# --- symbol memory ------------------------------------------------------------------


class SymbolMemory:
    """Reference-counted arena of path nodes (symbol, parent).

    A node's count is its number of children plus one if a stack entry
    points at it.  Releasing the last reference frees the node and walks up
    to its parent.
    """

    __slots__ = ("sym", "parent", "ref", "free", "allocs", "frees")

    def __init__(self):
        self.sym: list = []
        self.parent: list[int] = []
        self.ref: list[int] = []
        self.free: list[int] = []
        self.allocs = 0
        self.frees = 0

    def alloc(self, sym, parent: int) -> int:
        if parent >= 0:
            self.ref[parent] += 1
        self.allocs += 1
        if self.free:
            h = self.free.pop()
            self.sym[h] = sym
            self.parent[h] = parent
            self.ref[h] = 1
            return h
        self.sym.append(sym)
        self.parent.append(parent)
        self.ref.append(1)
        return len(self.sym) - 1

    def retain(self, h: int) -> None:
        if h >= 0:
            self.ref[h] += 1

    def release(self, h: int) -> None:
        while h >= 0:
            self.ref[h] -= 1
            if self.ref[h] > 0:
                return
            if self.ref[h] < 0:
                raise RuntimeError("symbol memory over-release")
            p = self.parent[h]
            self.sym[h] = None
            self.free.append(h)
            self.frees += 1
            h = p

    @property
    def live(self) -> int:
        return self.allocs - self.frees

    def path(self, h: int) -> list:
        out = []
        while h >= 0:
            out.append(self.sym[h])
            h = self.parent[h]
        out.reverse()
        return out

    def reachable(self, heads) -> int:
        seen = set()
        for h in heads:
            while h >= 0 and h not in seen:
                seen.add(h)
                h = self.parent[h]
        return len(seen)


# --- merge index ----------------------------------------------------------------------


class MergeIndex:
    """(window start, symbol window) -> live entries.

    Buckets are a dict, so lookups hash the key and then compare it in full;
    there are no false matches.
    """

    def __init__(self):
        self.buckets: dict[tuple, dict[int, object]] = {}

    def insert(self, key: tuple, eid: int, entry) -> None:
        self.buckets.setdefault(key, {})[eid] = entry

    def remove(self, key: tuple, eid: int) -> None:
        b = self.buckets.get(key)
        if b is not None:
            b.pop(eid, None)
            if not b:
                del self.buckets[key]

    def query(self, key: tuple) -> dict:
        return self.buckets.get(key, {})

    def __len__(self) -> int:
        return sum(len(b) for b in self.buckets.values())


# --- one direction ---------------------------------------------------------------------


class _Entry:
    __slots__ = ("score", "n", "state", "h", "eid", "true", "key", "win")

    def __init__(self, score, n, state, h, eid, true, win=()):
        self.score = score
        self.n = n
        self.state = state  # newest first, length L
        self.h = h
        self.eid = eid
        self.true = true
        self.key = None
        self.win = win  # newest first, the last merge_len symbols


def _odd_range(lo: float, hi: float):
    """Odd integers v with lo <= v < hi."""
    start = 2 * math.ceil((lo - 1) / 2) + 1
    return range(start, math.ceil(hi), 2) if start < hi else range(0)


def _odd_near(v: float, r: int):
    c = 2 * math.floor(v / 2) + 1
    return range(c - 2 * r, c + 2 * r + 1, 2)


class _Direction:
    """A stack decoder over one lattice.

    Positions 0..n_pos-1 are decoded; ``forced[n]`` pins position n.  The
    metric at n compares y[n] with sum_l taps[l] s_{n-l}.  ``xcheck`` maps a
    candidate (position, symbol, state) to the transmitted x it implies (or
    None when no check applies) for the x-range test.
    """

    def __init__(self, y, taps, n_pos, forced, cfg: FanoConfig, truth=None,
                 xcheck=None, lead=None, label="fwd"):
        self.y = [complex(v) for v in y]
        self.taps = [complex(t) for t in taps]
        self.L = len(taps) - 1
        self.n_pos = n_pos
        self.forced = forced
        self.cfg = cfg
        self.B = cfg.B
        self.truth = truth
        self.xcheck = xcheck
        self.lead = lead  # (coef, known) for the x-range preimage, backward only
        self.label = label
        self.mem = SymbolMemory()
        self.heap = MinMaxHeap(cfg.max_stack)
        self.counter = itertools.count()
        self.live: dict[int, _Entry] = {}
        self.processed = 0
        self.max_occ = 0
        self.cpl = False
        self.dropped = 0
        self.index: MergeIndex | None = None
        self.key_fn = None
        self.win_len = 0
        root = _Entry(0.0, 0, (0j,) * self.L, -1, next(self.counter), truth is not None)
        self._push(root)

    # heap item: (score, -n, -eid, entry)
    def _push(self, e: _Entry) -> None:
        self.live[e.eid] = e
        if self.index is not None:
            e.key = self.key_fn(e)
            if e.key is not None:
                self.index.insert(e.key, e.eid, e)
        out = self.heap.push((e.score, -e.n, -e.eid, e))
        if out is not None:
            self._discard(out[3])
        if len(self.heap) > self.max_occ:
            self.max_occ = len(self.heap)

    def _discard(self, e: _Entry) -> None:
        self.live.pop(e.eid, None)
        if self.index is not None and e.key is not None:
            self.index.remove(e.key, e.eid)
        if e.true:
            self.cpl = True
        self.mem.release(e.h)

    def pop(self) -> _Entry | None:
        if not self.heap:
            return None
        e = self.heap.pop_best()[3]
        self.live.pop(e.eid, None)
        if self.index is not None and e.key is not None:
            self.index.remove(e.key, e.eid)
        self.processed += 1
        return e

    def best_score(self) -> float:
        return self.heap.peek_best()[0] if self.heap else -math.inf

    def path(self, e: _Entry) -> list:
        return self.mem.path(e.h)

    def _candidates(self, n: int, state) -> list[tuple[float, complex]]:
        taps, L, y = self.taps, self.L, self.y[n]
        s = 0j
        for l in range(1, L + 1):
            s += taps[l] * state[l - 1]
        u = y - s  # metric centre for the new symbol (taps[0] == 1)
        cfg = self.cfg
        if n in self.forced:
            cands = [self.forced[n]]
        elif cfg.x_range_test and self.xcheck is not None:
            cands = self._box_candidates(n, state)
        else:
            cands = [complex(p, q) for p in _odd_near(u.real, cfg.r_b) for q in _odd_near(u.imag, cfg.r_b)]
        out = []
        xc = self.xcheck if cfg.x_range_test else None
        M = cfg.X
        for b in cands:
            if xc is not None:
                x = xc(n, b, state)
                if x is not None and not (-M <= x.real < M and -M <= x.imag < M):
                    continue
            d = u - b
            out.append((d.real * d.real + d.imag * d.imag, b))
        return out

    def _box_candidates(self, n: int, state):
        M = self.cfg.X
        coef, known = self.lead(n, state)
        if coef is None:
            return [complex(p, q) for p in _odd_range(-M, M) for q in _odd_range(-M, M)]
        if coef == 1:
            return [complex(p, q) for p in _odd_range(-M - known.real, M - known.real)
                    for q in _odd_range(-M - known.imag, M - known.imag)]
        # preimage of the box under b -> coef * b + known: bound it, filter later
        corners = [(complex(px, py) - known) / coef for px in (-M, M) for py in (-M, M)]
        lo_r = min(c.real for c in corners); hi_r = max(c.real for c in corners)
        lo_i = min(c.imag for c in corners); hi_i = max(c.imag for c in corners)
        return [complex(p, q) for p in _odd_range(lo_r, hi_r + 1e-9) for q in _odd_range(lo_i, hi_i + 1e-9)]

    def extend(self, e: _Entry) -> None:
        n = e.n
        cands = self._candidates(n, e.state)
        if cands:
            best = min(c[0] for c in cands)
            lim = best + self.cfg.branch_delta
            cands = [c for c in cands if c[0] <= lim]
        if not cands:
            self.dropped += 1
        tr = self.truth[n] if (e.true and self.truth is not None and n < len(self.truth)) else None
        tail = e.state[:-1] if self.L else ()
        wl = self.win_len
        wtail = e.win[: wl - 1] if wl else ()
        for d, b in cands:
            c = _Entry(e.score + self.B - d, n + 1, ((b,) + tail) if self.L else (), self.mem.alloc(b, e.h),
                       next(self.counter), tr is not None and b == tr, ((b,) + wtail) if wl else ())
            self._push(c)
        self.mem.release(e.h)

    def release_all(self) -> None:
        for item in list(self.heap):
            self.mem.release(item[3].h)
        self.heap.a.clear()
        self.live.clear()

    def stats(self) -> dict:
        return {"entries_processed": self.processed, "max_occupancy": self.max_occ,
                "evictions": self.heap.evictions, "cpl": self.cpl, "dropped": self.dropped}


# --- framing helpers ---------------------------------------------------------------------


def receiver_block(y_tx, f: FilterPattern, tail) -> np.ndarray:
    """Append the noiseless samples x_N..x_{N+L-1} implied by the tail."""
    y_tx = as_symbols(y_tx)
    tail = [complex(t) for t in tail]
    L = f.L
    if len(tail) != L:
        raise ValueError(f"tail must hold {L} symbols")
    ext = np.empty(L, dtype=np.complex128)
    for j in range(L):
        ext[j] = sum(f.taps[l] * tail[L + j - l] for l in range(j + 1, L + 1))
    return np.concatenate([y_tx, ext])


def _head_offset(f: FilterPattern, head) -> np.ndarray:
    """Contribution of the previous block's last L b's to x_0..x_{L-1}."""
    L = f.L
    off = np.zeros(L, dtype=np.complex128)
    if head is None:
        return off
    head = [complex(h) for h in head]  # oldest first: b_{-L}..b_{-1}
    for n in range(L):
        for l in range(n + 1, L + 1):
            off[n] += f.taps[l] * head[L + n - l]
    return off


def _block_inputs(y, f: FilterPattern, tail, head):
    y = as_symbols(y)
    L = f.L
    N = len(y) - L
    if N < L or N < 1:
        raise ValueError("block shorter than the pattern memory")
    tail = [complex(t) for t in tail]
    if len(tail) != L:
        raise ValueError(f"tail must hold {L} symbols")
    off = _head_offset(f, head)
    y = y.copy()
    y[:L] -= off
    return y, N, tail, off


def _forward(y, f, N, tail, off, cfg, truth):
    L = f.L
    taps = [complex(t) for t in f.taps]
    forced = {N - L + j: tail[j] for j in range(L)}

    def known(n, state):
        s = 0j
        for l in range(1, L + 1):
            s += taps[l] * state[l - 1]
        return s + off[n] if n < L else s

    def xcheck(n, b, state):
        return b + known(n, state)

    return _Direction(y[:N], taps, N, forced, cfg, truth, xcheck, lambda n, s: (1, known(n, s)), "fwd")


def _backward(y, f, N, tail, off, cfg, truth):
    L = f.L
    fb, yb = backward_code_transform(f, y)
    taps = [complex(t) for t in f.taps]
    forced = {j: tail[L - 1 - j] for j in range(L)}
    forced.update({N + j: 0j for j in range(L)})
    btruth = None if truth is None else list(reversed([complex(t) for t in truth])) + [0j] * L

    def xcheck(m, beta, state):
        # x_n, n = N-1+L-m, from beta_{m-L}..beta_m
        if m < L:
            return None
        x = taps[L] * beta
        for k in range(1, L + 1):
            x += taps[L - k] * state[k - 1]
        n = N - 1 + L - m
        return x + off[n] if n < L else x

    def lead(m, state):
        if m < L:
            return None, 0j
        known = 0j
        for k in range(1, L + 1):
            known += taps[L - k] * state[k - 1]
        n = N - 1 + L - m
        if n < L:
            known += off[n]
        return taps[L], known

    return _Direction(yb[: N + L], fb.taps, N + L, forced, cfg, btruth, xcheck, lead, "bwd")


@dataclass
class DecodeResult:
    b: np.ndarray | None
    ok: bool
    score: float
    stats: dict = field(default_factory=dict)

    def stats_json(self, b_true=None) -> dict:
        d = {"frame_ok": bool(self.ok and b_true is not None and self.b is not None
                              and np.array_equal(self.b, as_symbols(b_true))) if b_true is not None else self.ok}
        d.update(self.stats)
        return d


def path_score(b, y, f: FilterPattern, B: float, head=None) -> float:
    """Re-accumulate the forward Fano metric of b_0..b_{n-1} against y."""
    b = as_symbols(b)
    y = as_symbols(y)
    x = np.convolve(b, f.array)[: len(b)]
    x[: f.L] += _head_offset(f, head)[: len(b)]
    d = y[: len(b)] - x
    return float(len(b) * B - np.sum(d.real**2 + d.imag**2))


def stack_decode(y, f: FilterPattern, tail, cfg: FanoConfig, head=None, truth=None) -> DecodeResult:
    """Stack decoding of one block.

    ``y`` has length N + L (see receiver_block); ``tail`` is b_{N-L}..b_{N-1};
    ``head`` the previous block's last L b's when streaming.  ``truth``
    (the transmitted b) only feeds the correct-path-loss statistic.
    """
    if f.is_arma:
        raise ValueError("decoding is implemented for FIR patterns")
    y, N, tail, off = _block_inputs(y, f, tail, head)
    d = _forward(y, f, N, tail, off, cfg, truth)
    while d.processed < cfg.node_budget:
        e = d.pop()
        if e is None:
            break
        if e.n == N:
            b = np.array(d.path(e), dtype=np.complex128)
            d.mem.release(e.h)
            d.release_all()
            st = d.stats()
            st["leaked"] = d.mem.live
            return DecodeResult(b, True, e.score, st)
        d.extend(e)
    st = d.stats()
    d.release_all()
    st["leaked"] = d.mem.live
    st["failure"] = "budget" if d.processed >= cfg.node_budget else "exhausted"
    return DecodeResult(None, False, -math.inf, st)


def bidirectional_decode(y, f: FilterPattern, tail, cfg: FanoConfig, head=None, truth=None) -> DecodeResult:
    """Forward and backward stack decoders, alternating one extraction each.

    Each extracted entry is looked up in the other decoder's live stack by
    (window start, last merge_len symbols in time order); the first match
    splices forward prefix and backward suffix.  With ``cfg.verify_merge`` a
    splice is only returned once no forward stack entry can still beat it.
    """
    if f.is_arma:
        raise ValueError("decoding is implemented for FIR patterns")
    y, N, tail, off = _block_inputs(y, f, tail, head)
    L = f.L
    ml = L if cfg.merge_len is None else cfg.merge_len
    if ml < L:
        raise ValueError("merge_len must be >= L")
    fw = _forward(y, f, N, tail, off, cfg, truth)
    bw = _backward(y, f, N, tail, off, cfg, truth)
    # keys name the absolute window b_s..b_{s+ml-1}
    if ml >= 1:
        def fkey(e):
            if e.n < ml:
                return None
            return (e.n - ml, e.win[::-1])

        def bkey(e):
            if e.n < ml or e.n > N:
                return None
            return (N - e.n, e.win)
        fw.index, fw.key_fn = MergeIndex(), fkey
        bw.index, bw.key_fn = MergeIndex(), bkey
        for d in (fw, bw):  # the roots predate the index and have n = 0
            d.win_len = ml
            for item in d.heap:
                item[3].win = (0j,) * ml

    B = cfg.B
    pending: tuple[float, np.ndarray] | None = None  # verify mode: best splice so far
    merge_pos = None

    def finish(b, ok, score, how, hold=None):
        if hold is not None:
            hold[0].mem.release(hold[1].h)
        fw.release_all()
        bw.release_all()
        st = {"entries_processed": fw.processed + bw.processed,
              "max_occupancy": max(fw.max_occ, bw.max_occ),
              "evictions": fw.heap.evictions + bw.heap.evictions,
              "cpl": fw.cpl and bw.cpl, "forward": fw.stats(), "backward": bw.stats(),
              "merge_position": merge_pos, "termination": how,
              "leaked": fw.mem.live + bw.mem.live}
        return DecodeResult(b, ok, score, st)

    def full_score(b):
        return path_score(b, y, f, B)

    def consistent(b):
        if not cfg.x_range_test:
            return True
        x = np.convolve(b, f.array)[:N]
        x[:L] += off
        M = cfg.X
        return bool(np.all((x.real >= -M) & (x.real < M) & (x.imag >= -M) & (x.imag < M)))

    def certified(score):
        # no forward entry can complete above ``score``
        up = max(B, 0.0)
        for s, negn, _, _ in fw.heap:
            if s + (N + negn) * up > score + 1e-12:
                return False
        return True

    def offer(b, how, hold=None):
        nonlocal pending
        if not consistent(b):
            return None
        sc = full_score(b)
        if not cfg.verify_merge:
            return finish(b, True, sc, how, hold)
        if pending is None or sc > pending[0]:
            pending = (sc, b)
        return None

    turn = 0
    while fw.processed + bw.processed < cfg.node_budget:
        if cfg.verify_merge and pending is not None and certified(pending[0]):
            return finish(pending[1], True, pending[0], "merge")
        d, other = (fw, bw) if turn == 0 else (bw, fw)
        turn ^= 1
        e = d.pop()
        if e is None:
            if other.heap:
                continue
            break
        if d is fw and e.n == N:
            b = np.array(fw.path(e), dtype=np.complex128)
            fw.mem.release(e.h)
            sc = e.score
            if cfg.verify_merge and pending is not None and pending[0] > sc:
                b, sc = pending[1], pending[0]
            return finish(b, True, sc, "forward")
        if d is bw and e.n == N + L:
            beta = bw.path(e)
            bw.mem.release(e.h)
            b = np.array(list(reversed(beta[:N])), dtype=np.complex128)
            r = offer(b, "backward")
            if r is not None:
                return r
            continue
        if d.index is not None and e.key is not None:
            hits = other.index.query(e.key)
            if hits:
                o = hits[min(hits)]
                fe, be = (e, o) if d is fw else (o, e)
                pre = fw.path(fe)
                suf = list(reversed(bw.path(be)[: N - fe.n]))
                b = np.array(pre + suf, dtype=np.complex128)
                if merge_pos is None:
                    merge_pos = fe.n
                r = offer(b, "merge", (d, e))
                if r is not None:
                    return r
        d.extend(e)
    if pending is not None:
        return finish(pending[1], True, pending[0], "merge")
    r = finish(None, False, -math.inf, "failure")
    r.stats["failure"] = "budget" if fw.processed + bw.processed >= cfg.node_budget else "exhausted"
    return r


def ml_decode_bruteforce(y, f: FilterPattern, tail, M: int, head=None, x_range: bool = True):
    """Exhaustive minimization of sum_{n<N} |y_n - x_n|^2 (tiny blocks only).

    Searches every b with odd components, the tail pinned, and, with
    ``x_range``, every x_n in the box [-M, M)^2; each free component ranges
    over the odd values that can keep x in the box.
    """
    y, N, tail, off = _block_inputs(y, f, tail, head)
    L = f.L
    taps = f.array
    free = N - L
    best = (math.inf, None)
    # b values that can keep x_n in the box lie within |sum f_l b_{n-l}| + M;
    # enumerate recursively so the box prunes as it goes
    def rec(prefix):
        nonlocal best
        n = len(prefix)
        if n == N:
            b = np.array(prefix, dtype=np.complex128)
            x = np.convolve(b, taps)[:N]
            x[:L] += off
            if x_range and not np.all((x.real >= -M) & (x.real < M) & (x.imag >= -M) & (x.imag < M)):
                return
            d = y[:N] - x
            c = float(np.sum(d.real**2 + d.imag**2))
            if c < best[0]:
                best = (c, b)
            return
        if n >= free:
            rec(prefix + [tail[n - free]])
            return
        s = sum(taps[l] * prefix[n - l] for l in range(1, min(L, n) + 1))
        if n < L:
            s += off[n]
        if x_range:
            vals = [complex(p, q) for p in _odd_range(-M - s.real, M - s.real)
                    for q in _odd_range(-M - s.imag, M - s.imag)]
        else:
            raise ValueError("unbounded ML search needs x_range")
        for v in vals:
            rec(prefix + [v])

    rec([])
    return best[1], best[0]
