"""Complex-integer arithmetic, filter patterns and the encoding convolution.

Integer symbol sequences (b_n, a_n, e_n) are carried as complex128 numpy arrays
whose components are integers; doubles hold integers exactly below 2**53, far
beyond any symbol magnitude these codes produce.  ``GaussInt`` is the exact
scalar type used where hashing or serialization of single symbols matters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy import signal

MP_TOL = 1e-9
ALLPASS_EPS = 1e-12


class FilterError(ValueError):
    """Invalid filter pattern (not monic, not invertible, not minimum phase)."""


class RootFindingError(FilterError):
    pass


class GaussInt(NamedTuple):
    re: int
    im: int

    @classmethod
    def from_complex(cls, z: complex) -> "GaussInt":
        re, im = z.real, z.imag
        if re != int(re) or im != int(im):
            raise ValueError(f"{z!r} is not a complex integer")
        return cls(int(re), int(im))

    def __complex__(self) -> complex:
        return complex(self.re, self.im)

    def __add__(self, other):  # type: ignore[override]
        o = _as_gauss(other)
        return GaussInt(self.re + o.re, self.im + o.im)

    __radd__ = __add__

    def __sub__(self, other):
        o = _as_gauss(other)
        return GaussInt(self.re - o.re, self.im - o.im)

    def __neg__(self):
        return GaussInt(-self.re, -self.im)

    def __mul__(self, other):  # type: ignore[override]
        o = _as_gauss(other)
        return GaussInt(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)

    __rmul__ = __mul__

    def conj(self) -> "GaussInt":
        return GaussInt(self.re, -self.im)

    def norm(self) -> int:
        return self.re * self.re + self.im * self.im

    def is_odd(self) -> bool:
        return self.re % 2 == 1 and self.im % 2 == 1

    def is_even(self) -> bool:
        return self.re % 2 == 0 and self.im % 2 == 0


def _as_gauss(v) -> GaussInt:
    if isinstance(v, GaussInt):
        return v
    if isinstance(v, int):
        return GaussInt(v, 0)
    return GaussInt.from_complex(complex(v))


@dataclass(frozen=True)
class QamSymbol:
    """An M^2-QAM point: odd components bounded by M-1."""

    value: GaussInt
    M: int

    def __post_init__(self):
        if self.M < 2 or self.M % 2:
            raise ValueError("M must be an even integer >= 2")
        v = self.value
        if not v.is_odd() or abs(v.re) > self.M - 1 or abs(v.im) > self.M - 1:
            raise ValueError(f"{v} is not a {self.M ** 2}-QAM symbol")


def round_half_up(v: float) -> int:
    return math.floor(v + 0.5)


def cround(z: complex) -> complex:
    """Nearest complex integer, halves rounded toward +inf per component."""
    return complex(math.floor(z.real + 0.5), math.floor(z.imag + 0.5))


def qam_alphabet(M: int) -> np.ndarray:
    levels = np.arange(-(M - 1), M, 2)
    return (levels[:, None] + 1j * levels[None, :]).ravel()


def random_qam(n: int, M: int, rng: np.random.Generator) -> np.ndarray:
    re = 2 * rng.integers(0, M, n) - (M - 1)
    im = 2 * rng.integers(0, M, n) - (M - 1)
    return re + 1j * im


def constellation_energy(M: int, kind: str = "QAM") -> float:
    if M < 2:
        raise ValueError("M must be >= 2")
    pam = (M * M - 1) / 3
    if kind.upper() == "PAM":
        return pam
    if kind.upper() == "QAM":
        return 2 * pam
    raise ValueError(f"unknown constellation kind {kind!r}")


def _tap_bits(taps: tuple[complex, ...]) -> tuple[bytes, ...]:
    return tuple(np.asarray([t], dtype=np.complex128).tobytes() for t in taps)


@dataclass(frozen=True, eq=False)
class FilterPattern:
    """Monic filter F(z) = 1 + sum f_l z^-l, optionally ARMA G(z)/H(z).

    ``taps`` are the numerator (G for ARMA), ``den`` the denominator taps
    h_0..h_K (empty for FIR).  ``factor`` keeps (c, L) when the pattern was
    built as (1 + c z^-1)^L so tail compression can use the factored predictor.
    Equality and hashing are on the exact bit patterns of the taps.
    """

    taps: tuple[complex, ...]
    den: tuple[complex, ...] = ()
    factor: tuple[complex, int] | None = field(default=None)
    name: str = ""

    def __post_init__(self):
        taps = tuple(complex(t) for t in self.taps)
        den = tuple(complex(t) for t in self.den)
        object.__setattr__(self, "taps", taps)
        object.__setattr__(self, "den", den)
        if not taps or taps[0] != 1:
            raise FilterError("filter pattern must be monic (f0 = 1)")
        if den and den[0] != 1:
            raise FilterError("ARMA denominator must be monic (h0 = 1)")

    @classmethod
    def fir(cls, taps: Iterable[complex], name: str = "") -> "FilterPattern":
        return cls(tuple(taps), name=name)

    @classmethod
    def factored(cls, c: complex, L: int, name: str = "") -> "FilterPattern":
        """(1 + c z^-1)^L."""
        poly = np.array([1.0 + 0j])
        for _ in range(L):
            poly = np.convolve(poly, [1.0, c])
        poly[0] = 1.0
        return cls(tuple(poly), factor=(complex(c), L), name=name)

    @classmethod
    def arma(cls, g: Iterable[complex], h: Iterable[complex], name: str = "") -> "FilterPattern":
        return cls(tuple(g), den=tuple(h), name=name)

    @property
    def L(self) -> int:
        return len(self.taps) - 1

    @property
    def K(self) -> int:
        return max(len(self.den) - 1, 0)

    @property
    def is_arma(self) -> bool:
        return len(self.den) > 1

    @property
    def array(self) -> np.ndarray:
        return np.array(self.taps, dtype=np.complex128)

    def energy(self) -> float:
        return float(np.sum(np.abs(self.array) ** 2))

    def conj(self) -> "FilterPattern":
        fac = (self.factor[0].conjugate(), self.factor[1]) if self.factor else None
        return FilterPattern(
            tuple(t.conjugate() for t in self.taps),
            tuple(t.conjugate() for t in self.den),
            factor=fac,
            name=self.name + "*" if self.name else "",
        )

    def response(self, n_freq: int = 1024) -> np.ndarray:
        w = 2 * np.pi * np.arange(n_freq) / n_freq
        num = _dtft(self.array, w)
        if self.is_arma:
            num = num / _dtft(np.array(self.den), w)
        return num

    def __eq__(self, other):
        if not isinstance(other, FilterPattern):
            return NotImplemented
        return _tap_bits(self.taps) == _tap_bits(other.taps) and _tap_bits(self.den) == _tap_bits(
            other.den
        )

    def __hash__(self):
        return hash((_tap_bits(self.taps), _tap_bits(self.den)))

    def to_json(self) -> dict:
        d: dict = {"taps": [[t.real, t.imag] for t in self.taps]}
        if self.is_arma:
            d["den"] = [[t.real, t.imag] for t in self.den]
        if self.factor is not None:
            c, L = self.factor
            d["factor"] = {"c": [c.real, c.imag], "L": L}
        if self.name:
            d["name"] = self.name
        return d


def _dtft(h: np.ndarray, w: np.ndarray) -> np.ndarray:
    n = np.arange(len(h))
    return np.exp(-1j * np.outer(w, n)) @ h


def _pairs(v) -> tuple[complex, ...]:
    out = []
    for t in v:
        if isinstance(t, (list, tuple)):
            out.append(complex(t[0], t[1] if len(t) > 1 else 0.0))
        else:
            out.append(complex(t))
    return tuple(out)


def pattern_from_json(d: dict | str | Path) -> FilterPattern:
    """Load a pattern from explicit ``taps`` or the factored form.

    Factored form: ``{"zero": [r, theta_over_pi], "multiplicity": L, "sign": "+"}``
    builds (1 + c z^-1)^L with c = r e^{j pi theta}; ``"sign": "-"`` builds
    (1 - c z^-1)^L, the root-form convention with zero at z0 = c.
    """
    if isinstance(d, (str, Path)):
        d = json.loads(Path(d).read_text())
    name = d.get("name", "")
    if "taps" in d:
        taps = _pairs(d["taps"])
        if "den" in d:
            return FilterPattern.arma(taps, _pairs(d["den"]), name=name)
        fac = d.get("factor")
        if fac is not None:
            c = complex(*fac["c"])
            p = FilterPattern.factored(c, int(fac["L"]), name=name)
            if p.taps != taps:
                raise FilterError("factor does not reproduce the listed taps")
            return p
        return FilterPattern.fir(taps, name=name)
    if "zero" in d:
        r, th = d["zero"]
        c = r * np.exp(1j * np.pi * th)
        sign = d.get("sign", "+")
        if sign not in ("+", "-"):
            raise FilterError(f"sign must be '+' or '-', got {sign!r}")
        return FilterPattern.factored(c if sign == "+" else -c, int(d["multiplicity"]), name=name)
    raise FilterError("pattern JSON needs 'taps' or 'zero'")


# Reference high-gain patterns (1 + r e^{j pi theta} z^-1)^L with their (d2_min, N_min).
TABLE1 = {
    1: dict(r=0.90, theta=1 / 8, L=2, d2=14.81, n_min=3),
    2: dict(r=0.98, theta=1 / 8, L=2, d2=17.33, n_min=3),
    3: dict(r=0.95, theta=1 / 8, L=3, d2=20.53, n_min=10),
    4: dict(r=0.98, theta=0.09, L=3, d2=23.59, n_min=5),
    5: dict(r=0.95, theta=0.08, L=4, d2=31.27, n_min=12),
}


def table1_pattern(row: int, sign: int = +1) -> FilterPattern:
    p = TABLE1[row]
    c = sign * p["r"] * np.exp(1j * np.pi * p["theta"])
    return FilterPattern.factored(c, p["L"], name=f"table1:{row}" + ("" if sign > 0 else "-"))


def resolve_pattern(spec: str | dict | FilterPattern) -> FilterPattern:
    """Accept a pattern object, a JSON dict, ``identity``, ``table1:N`` or a JSON path."""
    if isinstance(spec, FilterPattern):
        return spec
    if isinstance(spec, dict):
        return pattern_from_json(spec)
    if spec == "identity":
        return FilterPattern((1.0,), name="identity")
    if spec.startswith("table1:"):
        try:
            row = int(spec.split(":", 1)[1])
        except ValueError:
            raise FilterError(f"bad pattern id {spec!r}") from None
        if row not in TABLE1:
            raise FilterError(f"table1 has rows 1-5, got {row}")
        return table1_pattern(row)
    path = Path(spec)
    if path.exists():
        return pattern_from_json(path)
    raise FilterError(f"unknown pattern {spec!r}")


# --- encoding -----------------------------------------------------------------


def as_symbols(b) -> np.ndarray:
    if isinstance(b, np.ndarray):
        return b.astype(np.complex128)
    return np.array([complex(v) for v in b], dtype=np.complex128)


def encode_convolve(b, f: FilterPattern) -> np.ndarray:
    """x_n = b_n + sum_l f_l b_{n-l}, n = 0..N+L-1."""
    if f.is_arma:
        raise FilterError("encode_convolve takes an FIR pattern; use arma_encode")
    return np.convolve(as_symbols(b), f.array)


def generator_matrix(f: FilterPattern, N: int) -> np.ndarray:
    """The (N+L) x N band-Toeplitz generator matrix."""
    if N < 1:
        raise ValueError("N must be >= 1")
    taps = f.array
    G = np.zeros((N + f.L, N), dtype=np.complex128)
    for col in range(N):
        G[col : col + f.L + 1, col] = taps
    if not np.iscomplexobj(taps) or not np.any(taps.imag):
        return G.real
    return G


def volume_scale(f: FilterPattern, N: int) -> float:
    """[det(G^H G)]^(1/2N): the scaling that equalizes lattice density."""
    G = generator_matrix(f, N)
    sign, logdet = np.linalg.slogdet(G.conj().T @ G)
    return float(np.exp(logdet.real / (2 * N)))


def arma_encode(b, g, h, n_out: int | None = None) -> np.ndarray:
    """x_n = b_n + sum g_l b_{n-l} - sum h_k x_{n-k}, truncated to the block."""
    g = np.asarray(_pairs(g), dtype=np.complex128)
    h = np.asarray(_pairs(h), dtype=np.complex128)
    if g[0] != 1 or h[0] != 1:
        raise FilterError("G and H must be monic")
    if not is_minimum_phase(FilterPattern(tuple(h))):
        raise FilterError("H is not minimum phase: the recursion is unstable")
    b = as_symbols(b)
    n_out = len(b) + len(g) - 1 if n_out is None else n_out
    padded = np.zeros(n_out, dtype=np.complex128)
    padded[: min(len(b), n_out)] = b[:n_out]
    return signal.lfilter(g, h, padded)


# --- phase analysis -------------------------------------------------------------


def _roots(taps: Sequence[complex]) -> np.ndarray:
    taps = np.asarray(taps, dtype=np.complex128)
    if len(taps) <= 1:
        return np.zeros(0, dtype=np.complex128)
    if not np.all(np.isfinite(taps)):
        raise RootFindingError("non-finite filter taps")
    try:
        r = np.roots(taps)
    except np.linalg.LinAlgError as exc:
        raise RootFindingError(str(exc)) from exc
    if len(r) != len(taps) - 1 or not np.all(np.isfinite(r)):
        raise RootFindingError("companion eigenvalue computation failed")
    return r


def zeros(f: FilterPattern) -> np.ndarray:
    return _roots(f.taps)


def is_minimum_phase(f: FilterPattern, tol: float = MP_TOL) -> bool:
    """All zeros (and poles for ARMA) strictly inside |z| < 1 - tol."""
    r = _roots(f.taps)
    if f.is_arma:
        r = np.concatenate([r, _roots(f.den)])
    return bool(np.all(np.abs(r) < 1 - tol))


def _poly_from_roots(roots: np.ndarray) -> np.ndarray:
    p = np.array([1.0 + 0j])
    for z0 in roots:
        p = np.convolve(p, [1.0, -z0])
    return p


@dataclass(frozen=True)
class AllpassSpec:
    """A(z) = gain * prod_k (z^-1 - conj(a_k)) / (1 - a_k z^-1) up to a delay.

    For reflected zeros z_k outside the unit circle, ``reflected`` stores z_k;
    the allpass maps the minimum-phase pattern back to the original one.
    """

    reflected: tuple[complex, ...] = ()
    gain: float = 1.0

    @property
    def is_identity(self) -> bool:
        return not self.reflected and self.gain == 1.0


def minimum_phase_equivalent(f: FilterPattern, tol: float = MP_TOL):
    """Reflect zeros outside the unit circle: F_MP = F_i(z) F_o*(1/z*), monic.

    Returns (f_mp, allpass) where |F(e^jw)| = allpass.gain * |F_mp(e^jw)|.
    """
    if f.is_arma:
        raise FilterError("minimum_phase_equivalent takes an FIR pattern")
    r = zeros(f)
    mags = np.abs(r)
    if np.any(np.abs(mags - 1) <= tol):
        raise FilterError("zero on the unit circle: pattern is not invertible")
    outside = r[mags > 1]
    if len(outside) == 0:
        return f, AllpassSpec()
    inside = r[mags < 1]
    new_roots = np.concatenate([inside, 1 / np.conj(outside)])
    taps = _poly_from_roots(new_roots)
    # recover the exact original scale: F(z) = c * prod(1 - z_k z^-1), c = 1 (monic)
    gain = float(np.prod(np.abs(outside)))
    taps[0] = 1.0
    return FilterPattern(tuple(taps), name=f.name + "_mp" if f.name else ""), AllpassSpec(
        tuple(complex(z) for z in outside), gain
    )


def inverse_impulse_length(f: FilterPattern, eps: float = ALLPASS_EPS, max_len: int = 200_000) -> int:
    """Samples after which the impulse response of 1/F stays below eps."""
    if f.L == 0:
        return 0
    imp = np.zeros(4096, dtype=np.complex128)
    imp[0] = 1.0
    zi = None
    taps = f.array
    n_total = 0
    last_big = 0
    chunk = imp
    while n_total < max_len:
        if zi is None:
            out, zi = signal.lfilter([1.0], taps, chunk, zi=np.zeros(f.L, dtype=np.complex128))
        else:
            out, zi = signal.lfilter([1.0], taps, np.zeros(4096, dtype=np.complex128), zi=zi)
        big = np.nonzero(np.abs(out) >= eps)[0]
        if len(big):
            last_big = n_total + int(big[-1])
        n_total += len(out)
        if np.all(np.abs(zi) < eps) and n_total - last_big > 4 * f.L + 16:
            return last_big + 1
    raise FilterError("1/F impulse response does not decay: pattern not minimum phase")


def allpass_filter(y, f: FilterPattern, eps: float = ALLPASS_EPS) -> np.ndarray:
    """Filter y by A(z) = F*(1/z*)/F(z); the output sample w_n is stored at index n+L.

    Stable causal 1/F followed by the anti-causal FIR F*(1/z*); the IIR part is
    run over the block extended by its truncation length.
    """
    if not is_minimum_phase(f):
        raise FilterError("allpass transform needs a minimum-phase pattern")
    y = np.asarray(y, dtype=np.complex128)
    T = inverse_impulse_length(f, eps)
    v = signal.lfilter([1.0], f.array, np.concatenate([y, np.zeros(T, dtype=np.complex128)]))
    # w_n = sum_l conj(f_l) v_{n+l}, n = -L .. len(v)-1
    return np.convolve(v, np.conj(f.array[::-1]))[: len(v) + f.L]


def backward_code_transform(f: FilterPattern, y, eps: float = ALLPASS_EPS):
    """Time-reversed allpass image of a received block of N+L samples.

    Returns (f_bwd, y_bwd) where f_bwd has taps conj(f_l) and y_bwd[m]
    corresponds to forward time n = N-1-m, m = 0..N+L-1.  In reversed time the
    code symbols are beta_m = b_{N-1-m}, so the block's tail becomes the
    backward decoder's starting state.  Samples after the block end carry only
    noise and are dropped.
    """
    y = np.asarray(y, dtype=np.complex128)
    L = f.L
    N = len(y) - L
    if N < 1:
        raise ValueError("received block shorter than the filter memory")
    w = allpass_filter(y, f, eps)
    # w[j] holds sample n = j - L; keep n = -L .. N-1, reversed
    y_bwd = w[: N + L][::-1].copy()
    return f.conj(), y_bwd


# --- allpass / pre-equalization algebra -------------------------------------------


def random_allpass(rng: np.random.Generator, n_sections: int = 1, rmax: float = 0.8,
                   eps: float = ALLPASS_EPS) -> np.ndarray:
    """Impulse response of a cascade of first-order allpass sections, truncated at eps."""
    h = np.array([1.0 + 0j])
    for _ in range(n_sections):
        a = rmax * np.sqrt(rng.uniform()) * np.exp(2j * np.pi * rng.uniform())
        n = int(math.ceil(math.log(eps) / math.log(abs(a)))) + 2 if abs(a) > 0 else 2
        imp = np.zeros(n, dtype=np.complex128)
        imp[0] = 1.0
        sec = signal.lfilter([-np.conj(a), 1.0], [1.0, -a], imp)
        h = np.convolve(h, sec)
    return h


@dataclass(frozen=True)
class PreEqualizer:
    encoder: FilterPattern  # ARMA F'(z) = F(z) / (H_i(z) * H_o*(1/z*) normalized)
    allpass: AllpassSpec
    gain: complex
    channel_mp: FilterPattern


def _split_phase(h: np.ndarray, tol: float):
    """Write h(z) = g * H_i(z) * H_o(z), H_i/H_o monic min/max phase."""
    g = complex(h[0])
    if g == 0:
        raise FilterError("channel must have a nonzero leading tap")
    r = _roots(h / g)
    if np.any(np.abs(np.abs(r) - 1) <= tol):
        raise FilterError("channel zero on the unit circle: not invertible")
    return g, r[np.abs(r) < 1], r[np.abs(r) > 1]


def preequalization_filter(f_target: FilterPattern, channel, tol: float = MP_TOL) -> PreEqualizer:
    """Encoder filter so that encoder * allpass * channel folds into g * F(z).

    With H(z) = g H_i(z) H_o(z) and A(z) = H_o*(1/z*)/H_o(z), the combined
    channel A(z)H(z) = g H_i(z) H_o*(1/z*) is minimum phase up to a constant.
    Writing H_o*(1/z*) = c_o * z^{K_o} * P(z) with P monic minimum phase, the
    encoder is the ARMA pattern F(z) / (H_i(z) P(z)) and the overall gain is
    g * c_o (the z^{K_o} advance is a pure delay).
    """
    h = np.asarray(channel.taps if isinstance(channel, FilterPattern) else _pairs(channel),
                   dtype=np.complex128)
    g, r_in, r_out = _split_phase(h, tol)
    # H_o(z) = prod(1 - z_k z^-1) -> H_o*(1/z*) = prod(1 - conj(z_k) z) = prod(-conj z_k) z^K prod(1 - z^-1/conj z_k)
    c_o = complex(np.prod(-np.conj(r_out))) if len(r_out) else 1.0 + 0j
    p_roots = np.concatenate([r_in, 1 / np.conj(r_out)])
    den = _poly_from_roots(p_roots)
    den[0] = 1.0
    den_fp = FilterPattern(tuple(den))
    if f_target.is_arma:
        num = f_target.array
        den = np.convolve(den, np.array(f_target.den))
    else:
        num = f_target.array
    enc = FilterPattern(tuple(num), den=tuple(den) if len(den) > 1 else (),
                        name=(f_target.name + "_preeq") if f_target.name else "")
    return PreEqualizer(enc, AllpassSpec(tuple(complex(z) for z in r_out), 1.0), g * c_o, den_fp)


def preeq_composed_response(pe: PreEqualizer, channel, n_freq: int = 1024) -> np.ndarray:
    """Frequency response of encoder * allpass * channel, delay removed."""
    h = np.asarray(channel.taps if isinstance(channel, FilterPattern) else _pairs(channel),
                   dtype=np.complex128)
    w = 2 * np.pi * np.arange(n_freq) / n_freq
    zinv = np.exp(-1j * w)
    enc = np.polyval(np.array(pe.encoder.taps)[::-1], zinv)
    if pe.encoder.is_arma:
        enc = enc / np.polyval(np.array(pe.encoder.den)[::-1], zinv)
    A = np.ones(n_freq, dtype=np.complex128)
    for zk in pe.allpass.reflected:
        # H_o*(1/z*)/H_o(z) for one factor: (1 - conj(zk) z) / (1 - zk z^-1)
        A *= (1 - np.conj(zk) / zinv) / (1 - zk * zinv)
    K = len(pe.allpass.reflected)
    H = np.polyval(h[::-1], zinv)
    return enc * A * H * zinv ** K
