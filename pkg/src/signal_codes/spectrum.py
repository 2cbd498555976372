"""Low-weight error events of a signal code lattice.

A depth-first tree search over even complex-integer error symbols.  Branches
are truncated as soon as the partial weight (the filtered error energy that
later symbols can no longer change) plus a lower bound on the convolution tail
reaches the search radius.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

from .lattice import FilterPattern

log = logging.getLogger(__name__)

DEFAULT_NODE_BUDGET = 10**9
WEIGHT_TOL = 1e-9


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class ErrorEvent:
    seq: tuple[tuple[int, int], ...]
    weight: float

    @property
    def length(self) -> int:
        return len(self.seq)

    def as_complex(self) -> np.ndarray:
        return np.array([complex(*s) for s in self.seq])


@dataclass
class SpectrumReport:
    events: list[ErrorEvent]
    d2_search: float
    n_max: int
    nodes_examined: int = 0
    complete: bool = True
    pattern: FilterPattern | None = None
    extra: dict = field(default_factory=dict)

    @property
    def d2_min(self) -> float:
        return min(e.weight for e in self.events) if self.events else math.inf

    @property
    def n_min(self) -> int:
        if not self.events:
            return 0
        d = self.d2_min
        return min(e.length for e in self.events if e.weight <= d + WEIGHT_TOL)

    def minimal_event(self) -> ErrorEvent | None:
        if not self.events:
            return None
        d = self.d2_min
        return min((e for e in self.events if e.weight <= d + WEIGHT_TOL), key=lambda e: e.length)

    def histogram(self, width: float = 1.0) -> dict[int, int]:
        """Counts per unit bin [k, k+1) keyed by bin start."""
        h: dict[int, int] = {}
        for e in self.events:
            k = int(math.floor(e.weight / width))
            h[k] = h.get(k, 0) + 1
        return dict(sorted(h.items()))

    def weights(self) -> list[float]:
        return sorted(e.weight for e in self.events)

    def to_json(self) -> dict:
        return {
            "pattern": self.pattern.to_json() if self.pattern else None,
            "d2_search": self.d2_search,
            "n_max": self.n_max,
            "d2_min": self.d2_min if self.events else None,
            "n_min": self.n_min,
            "nodes_examined": self.nodes_examined,
            "complete": self.complete,
            "events": [{"seq": [list(s) for s in e.seq], "weight": e.weight} for e in self.events],
            **self.extra,
        }

    def histogram_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["bin_start", "count"])
        for k, c in self.histogram().items():
            w.writerow([k, c])
        return buf.getvalue()


def _taps(f) -> np.ndarray:
    if isinstance(f, FilterPattern):
        return f.array
    return np.asarray(f, dtype=np.complex128)


def error_weight(e, f) -> float:
    """||e * f||^2 over the full convolution support.

    ``f`` may be a FilterPattern or any tap vector (non-monic taps are allowed,
    which is what allpass-invariance checks need).
    """
    e = np.asarray([complex(*s) if isinstance(s, tuple) else complex(s) for s in e])
    c = np.convolve(e, _taps(f))
    return float(np.sum(c.real**2 + c.imag**2))


def canonical_first(z: complex) -> bool:
    """The representative of {z, -z, jz, -jz}: Re > 0, Im >= 0."""
    return z.real > 0 and z.imag >= 0


def _candidates(center: complex, r2: float) -> list[tuple[float, complex]]:
    """Even complex integers e with |center + e|^2 < r2, sorted by that distance."""
    if r2 <= 0:
        return []
    R = math.sqrt(r2) / 2
    ur, ui = -center.real / 2, -center.imag / 2
    out = []
    for p in range(math.ceil(ur - R), math.floor(ur + R) + 1):
        dr = (p - ur) ** 2
        rem = R * R - dr
        if rem < 0:
            continue
        s = math.sqrt(rem)
        for q in range(math.ceil(ui - s), math.floor(ui + s) + 1):
            e = complex(2 * p, 2 * q)
            v = center + e
            d = v.real * v.real + v.imag * v.imag
            if d < r2:
                out.append((d, e))
    out.sort(key=lambda t: t[0])
    return out


class _Search:
    """Shared DFS machinery; ``radius`` is mutable for the dynamic-radius mode."""

    def __init__(self, f, d2_search: float, n_max: int, node_budget: int,
                 modified_bound: bool = True, dynamic: bool = False, keep: bool = True,
                 prune=None):
        self.f = [complex(t) for t in _taps(f)]
        self.L = len(self.f) - 1
        self.n_max = n_max
        self.radius = d2_search
        self.tail_lb = 4 * abs(self.f[-1]) ** 2 if (modified_bound and self.L > 0) else 0.0
        self.node_budget = node_budget
        self.dynamic = dynamic
        self.keep = keep
        self.prune = prune
        self.nodes = 0
        self.events: list[ErrorEvent] = []
        self.best: tuple[float, int, tuple] | None = None

    def run(self) -> bool:
        limit = sys.getrecursionlimit()
        sys.setrecursionlimit(max(limit, 4 * self.n_max + 200))
        try:
            bound = self.radius - self.tail_lb + (WEIGHT_TOL if self.dynamic else 0.0)
            for d, e0 in _candidates(0j, bound):
                if not canonical_first(e0):
                    continue
                bound = self.radius - self.tail_lb + (WEIGHT_TOL if self.dynamic else 0.0)
                if d >= bound:
                    break
                tail = [self.f[k] * e0 for k in range(1, self.L + 1)]
                self._visit([e0], d, tail, 0)
        except BudgetExceeded:
            return False
        finally:
            sys.setrecursionlimit(limit)
        return True

    def _visit(self, seq, w, tail, zrun):
        self.nodes += 1
        if self.nodes > self.node_budget:
            raise BudgetExceeded
        L = self.L
        if self.prune is not None and self.prune(seq, w):
            return
        if zrun == 0:
            full = w
            for t in tail:
                full += t.real * t.real + t.imag * t.imag
            lim = self.radius + (WEIGHT_TOL if self.dynamic else 0.0)
            if full < lim:
                self._record(seq, full)
        if len(seq) >= self.n_max or L == 0:
            return
        f = self.f
        t1 = tail[0]
        bound = self.radius - self.tail_lb + (WEIGHT_TOL if self.dynamic else 0.0)
        for d, e in _candidates(t1, bound - w):
            # radius may have shrunk since the list was built
            if self.dynamic and w + d >= self.radius - self.tail_lb + WEIGHT_TOL:
                break
            if e == 0:
                if zrun + 1 >= L:
                    continue
                nz = zrun + 1
            else:
                nz = 0
            ntail = [tail[k + 1] + f[k + 1] * e for k in range(L - 1)]
            ntail.append(f[L] * e)
            seq.append(e)
            self._visit(seq, w + d, ntail, nz)
            seq.pop()

    def _record(self, seq, weight):
        ev = tuple((int(z.real), int(z.imag)) for z in seq)
        if self.dynamic:
            n = len(seq)
            if self.best is None or weight < self.best[0] - WEIGHT_TOL:
                self.best = (weight, n, ev)
                self.radius = weight
            elif abs(weight - self.best[0]) <= WEIGHT_TOL and n < self.best[1]:
                self.best = (weight, n, ev)
        if self.keep:
            self.events.append(ErrorEvent(ev, weight))


def search_spectrum(f: FilterPattern, d2_search: float, n_max: int,
                    node_budget: int = DEFAULT_NODE_BUDGET, modified_bound: bool = True,
                    _prune=None) -> SpectrumReport:
    """All canonical error events with weight < d2_search and length <= n_max.

    Canonical: first symbol nonzero (no shifts) and in the quadrant Re > 0,
    Im >= 0 (no 90-degree rotations); no run of L zeros (no concatenations).
    """
    if d2_search <= 0:
        raise ValueError("d2_search must be positive")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    s = _Search(f, d2_search, n_max, node_budget, modified_bound=modified_bound, prune=_prune)
    complete = s.run()
    if not complete:
        log.warning("spectrum search stopped at node budget %d; result incomplete", node_budget)
    events = sorted(s.events, key=lambda e: (e.weight, e.length, e.seq))
    return SpectrumReport(events, d2_search, n_max, s.nodes, complete,
                          f if isinstance(f, FilterPattern) else None)


@dataclass
class MinDistance:
    d2_min: float
    n_min: int
    event: ErrorEvent
    nodes_examined: int
    complete: bool


def min_distance(f: FilterPattern, n_max: int, node_budget: int = DEFAULT_NODE_BUDGET,
                 d2_init: float | None = None, deepen: bool = True) -> MinDistance:
    """Minimum event weight via a radius that shrinks on every improvement.

    The radius starts at the weight of the single-symbol event [2], i.e.
    4 * sum |f_l|^2, which is always an admissible event.  With ``deepen`` the
    length limit grows in steps and each stage starts from the best weight of
    the previous one; any event found is admissible at larger lengths too, so
    the answer is unchanged while the early radius is far tighter.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    taps = _taps(f)
    w0 = error_weight([2], taps)
    best = (w0, 1, ((2, 0),))
    if d2_init is not None and d2_init < w0:
        best = (d2_init, n_max + 1, ())
    stages = list(range(2, n_max, 2)) + [n_max] if deepen else [n_max]
    nodes = 0
    complete = True
    for n in stages:
        s = _Search(f, best[0], n, node_budget - nodes, dynamic=True, keep=False)
        s.best = best
        complete = s.run()
        nodes += s.nodes
        best = s.best
        if not complete:
            break
    d2, n, ev = best
    if not ev:
        raise ValueError("d2_init below the minimum distance; no event found")
    return MinDistance(d2, n, ErrorEvent(ev, d2), nodes, complete)


# --- backward-forward search ----------------------------------------------------


def _tails_database(f, d2_tail: float, max_len: int, node_budget: int):
    """Map key (first L symbols) -> min tail weight over admissible tails.

    A tail s_0..s_{m-1} ends in a nonzero symbol and its tail weight is the
    energy of its convolution with f from output index L on, i.e. the part of
    an event's weight that lies after a forward prefix sharing s_0..s_{L-1}.
    Built backward in time: prepending s_k completes output index k + L.
    """
    taps = [complex(t) for t in _taps(f)]
    L = len(taps) - 1
    db: dict[tuple, float] = {}
    nodes = 0

    def visit(rev, w, zrun):
        # rev holds s_{m-1}, s_{m-2}, ..., s_k (newest prepended last)
        nonlocal nodes
        nodes += 1
        if nodes > node_budget:
            raise BudgetExceeded
        if len(rev) >= L:
            key = tuple(rev[-1 : -L - 1 : -1]) if L else ()
            if w < db.get(key, math.inf):
                db[key] = w
        if len(rev) >= max_len:
            return
        # next output completed: d_{k-1+L} = f_L s_{k-1} + sum_{l<L} f_l s_{k-1+L-l}
        k = len(rev)  # symbols known so far, counting from the end
        known = 0j
        for l in range(L):
            idx = L - l - 1  # position back from the newest-prepended element
            j = k - 1 - idx
            if 0 <= j < k:
                known += taps[l] * rev[j]
        fl = taps[L]
        for d, e in _scaled_candidates(known, fl, d2_tail - w):
            if e == 0:
                if zrun + 1 >= L:
                    continue
                nz = zrun + 1
            else:
                nz = 0
            rev.append(e)
            visit(rev, w + d, nz)
            rev.pop()

    if L == 0:
        return db, 0
    for d, e in _scaled_candidates(0j, taps[L], d2_tail):
        if e == 0:
            continue
        visit([e], d, 0)
    return db, nodes


def _scaled_candidates(known: complex, fl: complex, r2: float):
    """Even e with |known + fl * e|^2 < r2."""
    if r2 <= 0:
        return []
    if abs(fl) < 1e-15:
        d = abs(known) ** 2
        return [(d, 0j)] if d < r2 else []
    out = []
    for d, u in _candidates(known / fl, r2 / abs(fl) ** 2):
        e = u
        v = known + fl * e
        dd = v.real * v.real + v.imag * v.imag
        if dd < r2:
            out.append((dd, e))
    return out


def backward_forward_search(f: FilterPattern, d2_search: float, d2_tail: float, n_max: int,
                            node_budget: int = DEFAULT_NODE_BUDGET) -> SpectrumReport:
    """Same event set as search_spectrum, with the forward tree thinned by a tails database.

    A forward prefix with partial weight w (outputs up to its last symbol) is
    kept if w < d2_search - d2_tail, or if a stored tail starting with the
    prefix's last L symbols brings the total below d2_search.
    """
    if not 0 <= d2_tail < d2_search:
        raise ValueError("need 0 <= d2_tail < d2_search")
    taps = _taps(f)
    L = len(taps) - 1
    if d2_tail == 0 or L == 0:
        rep = search_spectrum(f, d2_search, n_max, node_budget)
        rep.extra.update(backward_nodes=0, forward_nodes=rep.nodes_examined, d2_tail=d2_tail)
        return rep
    try:
        db, bnodes = _tails_database(f, d2_tail, n_max + L - 1, node_budget)
    except BudgetExceeded:
        return SpectrumReport([], d2_search, n_max, node_budget, False,
                              f if isinstance(f, FilterPattern) else None)
    thresh = d2_search - d2_tail

    def prune(seq, w):
        if w < thresh:
            return False
        key = tuple(seq[-L:]) if len(seq) >= L else (0j,) * (L - len(seq)) + tuple(seq)
        t = db.get(key)
        return t is None or w + t >= d2_search

    rep = search_spectrum(f, d2_search, n_max, max(node_budget - bnodes, 1), _prune=prune)
    rep.extra.update(backward_nodes=bnodes, forward_nodes=rep.nodes_examined,
                     tails=len(db), d2_tail=d2_tail)
    rep.nodes_examined += bnodes
    return rep


# --- union bound, Cartesian oracle, histogram fit ----------------------------------


def qfunc(x):
    return 0.5 * erfc(np.asarray(x) / math.sqrt(2))


def union_bound_eer(report: SpectrumReport, sigma2: float) -> float:
    """Truncated union-bound approximation of the event error rate.

    Sums Q(sqrt(d^2 / 2 sigma^2)) over the reported events, each canonical
    event standing for its 4 rotations.  Events beyond the search radius are
    ignored, so this approximates the bound rather than bounding the EER.
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    if not report.events:
        return 0.0
    w = np.array([e.weight for e in report.events])
    return float(4 * np.sum(qfunc(np.sqrt(w / (2 * sigma2)))))


def single_symbol_counts(k_max: int) -> list[int]:
    """b(k): even complex integers of squared magnitude 4k, by enumeration."""
    out = []
    for k in range(1, k_max + 1):
        r = math.isqrt(k)
        out.append(sum(1 for x in range(-r, r + 1) for y in range(-r, r + 1) if x * x + y * y == k))
    return out


def cartesian_spectrum(k_max: int) -> tuple[list[int], list[int]]:
    """(a(1..k_max), b(1..k_max)) for the infinite Cartesian lattice F(z) = 1."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    b = single_symbol_counts(k_max)
    a: list[int] = []
    for k in range(1, k_max + 1):
        a.append(b[k - 1] + sum(a[i - 1] * b[k - i - 1] for i in range(1, k)))
    return a, b


@dataclass
class PowerLawFit:
    alpha: float
    beta: float
    residual: float
    n_bins: int


def fit_power_law(d, counts) -> PowerLawFit:
    """Least squares of log N = log alpha + beta log d."""
    d = np.asarray(d, dtype=float)
    counts = np.asarray(counts, dtype=float)
    mask = counts > 0
    if mask.sum() < 3:
        raise ValueError("need at least 3 nonempty bins for the fit")
    X = np.column_stack([np.ones(mask.sum()), np.log(d[mask])])
    coef, res, *_ = np.linalg.lstsq(X, np.log(counts[mask]), rcond=None)
    resid = float(res[0]) if len(res) else 0.0
    return PowerLawFit(float(np.exp(coef[0])), float(coef[1]), resid, int(mask.sum()))


def histogram_fit(report: SpectrumReport, fit_from: float | None = None) -> PowerLawFit:
    """Fit N(d) = alpha d^beta to the unit-bin histogram (bin centers).

    Bins start at ``fit_from`` (default: the bin above d_min^2).
    """
    h = report.histogram()
    start = math.floor(report.d2_min) + 1 if fit_from is None else fit_from
    ks = [k for k in h if k >= start]
    return fit_power_law([k + 0.5 for k in ks], [h[k] for k in ks])


def symmetry_observation(event: ErrorEvent) -> str | None:
    """How the reversed sequence relates to the original, if it does.

    Returns e.g. "conj*-1" when e(N-1-t) == -conj(e(t)) for all t, or None.
    """
    seq = event.as_complex()
    rev = seq[::-1]
    for name, base in (("", seq), ("conj", np.conj(seq))):
        for u, un in ((1, "1"), (-1, "-1"), (1j, "j"), (-1j, "-j")):
            if np.allclose(rev, u * base):
                return f"{name}*{un}" if name else un
    return None
