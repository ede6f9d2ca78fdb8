"""Side-peak prediction, measured peak extraction and unambiguous-region analysis.

Positions are physical: ``tau`` in seconds within ``[0, T_s)`` and Doppler
in Hz.  A target at ``(tau0, f0)`` images at ``(tau0 + tau, f0 + f)`` for
every side peak ``(tau, f)`` reported here.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .checker import collision_oracle
from .patterns import (CombPattern, OfdmNumerology, Pattern, PatternError, realize_grid,
                       to_irregular)
from .sensing import DelayDopplerGrid, Spectrum2D, delay_sum_af, periodogram_2dfft
from .waveform import Target, apply_channel_freq, modulate

EQUAL_TOL = 1e-6
ALGORITHMS = ("delay_sum", "fft2d", "super_res")


@dataclass(frozen=True)
class SidePeak:
    tau: float
    doppler: float
    level: float = 1.0
    kind: str = "predicted"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Window:
    """Delay range ``[0, tau_max)`` and Doppler range ``[f_min, f_max]``."""

    tau_max: float
    f_min: float
    f_max: float

    def contains(self, tau: float, f: float, eps: float = 1e-9) -> bool:
        ft = eps * max(abs(self.f_min), abs(self.f_max), 1.0)
        return (-eps * self.tau_max <= tau < self.tau_max * (1 - eps)
                and self.f_min - ft <= f <= self.f_max + ft)


@dataclass
class EapReport:
    mainlobe: tuple[float, float]
    side_peaks: list[SidePeak]
    regions: list[tuple[float, float]]
    overhead: float | None = None
    algorithm: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"mainlobe": {"tau_s": self.mainlobe[0], "doppler_hz": self.mainlobe[1]},
             "side_peaks": [p.to_dict() for p in self.side_peaks],
             "regions": [{"tau_max_s": t, "f_max_hz": f} for t, f in self.regions],
             "overhead": self.overhead, "algorithm": self.algorithm}
        d.update(self.extra)
        return d


def linear_slope(pattern: CombPattern) -> int | None:
    """``p`` when ``F_i = F_0 + p*i (mod S_sub)`` for all ``i``, else ``None``."""
    S, F = pattern.S_sub, pattern.offsets
    p = (F[1] - F[0]) % S if len(F) > 1 else 0
    if all((F[i] - F[0] - p * i) % S == 0 for i in range(len(F))):
        return p
    return None


def _k_range(lo: float, hi: float, base: float, period: float) -> range:
    return range(math.floor((lo - base) / period) - 1, math.ceil((hi - base) / period) + 2)


def _ds_coherence(f: float, d: float, num: OfdmNumerology) -> float:
    """Delay-and-Sum gain of one symbol span: overlap fraction times the in-symbol Doppler loss."""
    Np = num.N_prime
    ov = max(Np - d, 0.0) / Np
    x = f * ov * num.T
    return ov * (abs(math.sin(math.pi * x) / (math.pi * x)) if x else 1.0)


def stagger_level(pattern: CombPattern, l: int, f: float, num: OfdmNumerology) -> float:
    """``|1/M sum_i exp(j2pi (f i S_sym T - F_i l / S_sub))|``."""
    i = np.arange(pattern.M)
    F = np.asarray(pattern.offsets)
    ph = f * i * pattern.S_sym * num.T - F * l / pattern.S_sub
    return float(abs(np.exp(2j * np.pi * ph).mean()))


def predict_side_peaks(pattern: Pattern, algorithm: str, numerology: OfdmNumerology,
                       window: Window, slope: int | None = None,
                       min_level: float = 10 ** (-13 / 20), f_resolution: int = 64) -> list[SidePeak]:
    """Predicted side-peak offsets relative to the mainlobe inside ``window``.

    Linearly staggered combs (schemes A, B, D and any constant slope ``p``)
    use the closed form ``(l T_s/S_sub, (p l/S_sub + k)/(S_sym T))``; ``slope``
    overrides the inferred ``p``.  Other combs use the staggering sum
    numerically.  ``super_res`` and non-comb patterns take the steering
    collisions of the oracle, tiled over the window.  Delay-and-Sum levels
    include the symbol-overlap and in-symbol Doppler losses, which removes
    ``f = m/T`` for ``m != 0``; peaks weaker than ``min_level`` are dropped
    for that algorithm only.
    """
    if algorithm not in ALGORITHMS:
        raise PatternError(f"unknown algorithm {algorithm!r}")
    num = numerology
    out: list[SidePeak] = []
    if algorithm == "super_res" or not isinstance(pattern, CombPattern):
        if algorithm == "delay_sum":
            raise PatternError("Delay-and-Sum prediction needs a comb pattern")
        irr = to_irregular(pattern, num.N)
        cols = collision_oracle(irr, y_max=Fraction(1))
        pts = [(float(x) * num.T_s, float(y) / num.T) for x, y in cols.collisions]
        pts.append((0.0, 0.0))
        period = 1.0 / num.T
        for tau, f in pts:
            for k in _k_range(window.f_min, window.f_max, f, period):
                ff = f + k * period
                if (tau, ff) != (0.0, 0.0) and window.contains(tau, ff):
                    out.append(SidePeak(tau, ff, 1.0))
        return _dedup(out, num)
    S, Ss = pattern.S_sub, pattern.S_sym
    period = 1.0 / (Ss * num.T)
    p = slope if slope is not None else linear_slope(pattern)
    for l in range(S):
        tau = l * num.T_s / S
        d = l * num.N / S
        if p is not None:
            base = (p * l / S) * period
            cands = [(base + k * period, 1.0) for k in _k_range(window.f_min, window.f_max, base, period)]
        else:
            grid = np.linspace(0, period, f_resolution * pattern.M, endpoint=False)
            lev = np.array([stagger_level(pattern, l, f, num) for f in grid])
            peak = (lev >= np.roll(lev, 1)) & (lev > np.roll(lev, -1)) & (lev > EQUAL_TOL)
            cands = []
            for j in np.flatnonzero(peak):
                for k in _k_range(window.f_min, window.f_max, grid[j], period):
                    cands.append((grid[j] + k * period, float(lev[j])))
        for f, lev in cands:
            if (l, abs(f) < 1e-9 * period) == (0, True) or not window.contains(tau, f):
                continue
            if algorithm == "delay_sum":
                lev = lev * _ds_coherence(f, d, num)
                if lev < min_level:
                    continue
            out.append(SidePeak(tau, f, lev))
    return _dedup(out, num)


def _dedup(peaks: list[SidePeak], num: OfdmNumerology) -> list[SidePeak]:
    seen: dict[tuple[int, int], SidePeak] = {}
    for pk in peaks:
        key = (round(pk.tau / num.T_s * 1e6), round(pk.doppler * num.T * 1e6))
        if key not in seen or seen[key].level < pk.level:
            seen[key] = pk
    return sorted(seen.values(), key=lambda p: (p.tau, p.doppler))


# --- measurement --------------------------------------------------------

def _grid_periodic(v: np.ndarray, period: float | None) -> bool:
    if period is None or v.size < 2:
        return False
    return abs((v[1] - v[0]) * v.size - period) <= 1e-9 * period


def local_maxima(values: np.ndarray, wrap: tuple[bool, bool] = (False, False)) -> np.ndarray:
    """Boolean map of strict local maxima over the 8-neighbourhood.

    Plateaus are resolved to their first cell in raster order.
    """
    v = values
    pad = np.pad(v, 1, mode="constant", constant_values=-np.inf)
    if wrap[0]:
        pad[0, 1:-1], pad[-1, 1:-1] = v[-1], v[0]
    if wrap[1]:
        pad[1:-1, 0], pad[1:-1, -1] = v[:, -1], v[:, 0]
    if wrap[0] and wrap[1]:
        pad[0, 0], pad[0, -1], pad[-1, 0], pad[-1, -1] = v[-1, -1], v[-1, 0], v[0, -1], v[0, 0]
    ok = np.ones(v.shape, dtype=bool)
    n0, n1 = v.shape
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == dj == 0:
                continue
            nb = pad[1 + di:1 + di + n0, 1 + dj:1 + dj + n1]
            earlier = di < 0 or (di == 0 and dj < 0)
            ok &= (v > nb) if earlier else (v >= nb)
    return ok


def _refine(vm: float, v0: float, vp: float) -> float:
    den = vm - 2 * v0 + vp
    if den >= 0 or not np.isfinite(den):
        return 0.0
    return float(np.clip(0.5 * (vm - vp) / den, -0.5, 0.5))


def extract_peaks(spectrum: Spectrum2D, rel_threshold_db: float = -13.0,
                  tau_period: float | None = None, f_period: float | None = None,
                  include_mainlobe: bool = False, reference: float | None = None) -> list[SidePeak]:
    """Local maxima above ``rel_threshold_db`` of the global maximum.

    ``reference`` replaces the global maximum as the 0 dB level, e.g. the
    response of a unit-amplitude target, so noise-only spectra stay low.

    Axes that span exactly one period wrap around.  Positions are refined
    by a parabola through the neighbours along each axis; the level is the
    normalized value at the grid maximum.  The global maximum is left out
    unless ``include_mainlobe``.
    """
    v = spectrum.values
    top, low = v.max(), v.min()
    if top <= 0 or top - low <= 1e-15 * top:
        raise PatternError("flat spectrum has no mainlobe")
    v = v / (reference if reference else top)
    g = spectrum.grid
    wrap = (_grid_periodic(g.taus, tau_period), _grid_periodic(g.freqs, f_period))
    k = 10.0 if spectrum.power else 20.0
    thr = 10 ** (rel_threshold_db / k)
    peaks = local_maxima(v, wrap) & (v >= thr)
    imain = np.unravel_index(np.argmax(v), v.shape)
    out = []
    n0, n1 = v.shape
    dt = g.taus[1] - g.taus[0] if n0 > 1 else 0.0
    df = g.freqs[1] - g.freqs[0] if n1 > 1 else 0.0
    for i, j in zip(*np.nonzero(peaks)):
        if (i, j) == imain and not include_mainlobe:
            continue

        def nb(a, b):
            if wrap[0]:
                a %= n0
            if wrap[1]:
                b %= n1
            if 0 <= a < n0 and 0 <= b < n1:
                return v[a, b]
            return v[i, j]

        oi = _refine(nb(i - 1, j), v[i, j], nb(i + 1, j))
        oj = _refine(nb(i, j - 1), v[i, j], nb(i, j + 1))
        tau = g.taus[i] + oi * dt
        if tau_period is not None:
            tau %= tau_period
        out.append(SidePeak(float(tau), float(g.freqs[j] + oj * df), float(v[i, j]), "measured"))
    return sorted(out, key=lambda p: -p.level)


def relative_to(peaks: Sequence[SidePeak], tau0: float, f0: float,
                tau_period: float, f_period: float | None = None) -> list[SidePeak]:
    """Shift measured peaks so the mainlobe sits at the origin."""
    out = []
    for p in peaks:
        f = p.doppler - f0
        if f_period:
            f = (f + f_period / 2) % f_period - f_period / 2
        out.append(SidePeak((p.tau - tau0) % tau_period, f, p.level, p.kind))
    return out


# --- regions ------------------------------------------------------------

def unambiguous_regions(peaks: Sequence[SidePeak], window: Window, tau_period: float | None = None,
                        min_level: float = 1 - EQUAL_TOL) -> list[tuple[float, float]]:
    """Pareto frontier of ``(tau_max, f_max)`` rectangles free of ambiguity.

    Two hypotheses inside a rectangle ``[0, tau_max) x (-f_max, f_max)``
    differ by less than ``tau_max`` in delay and ``2 f_max`` in Doppler; the
    rectangle is unambiguous when no side peak (with its mirror image) is
    such a difference.  Only peaks at or above ``min_level`` count.
    """
    period = tau_period or window.tau_max
    f_cap = min(abs(window.f_min), abs(window.f_max))
    strong = [p for p in peaks if p.level >= min_level]
    offs = []
    for p in strong:
        t = p.tau % period
        # a delay offset t and its wrap t - period are both differences
        offs.append((min(t, period - t) if t else 0.0, abs(p.doppler)))
    cuts = sorted({t for t, _ in offs if t > 0} | {window.tau_max})
    regions: list[tuple[float, float]] = []
    for c in cuts:
        if c > window.tau_max:
            break
        blocking = [f for t, f in offs if t < c * (1 - 1e-12)]
        fm = min([f_cap] + [f / 2 for f in blocking])
        if fm <= 0:
            continue
        regions = [r for r in regions if r[1] > fm * (1 + 1e-12)]
        regions.append((c, fm))
    return regions


# --- comparison ---------------------------------------------------------

@dataclass
class Comparison:
    matched: list[tuple[SidePeak, SidePeak]]
    missed: list[SidePeak]
    false: list[SidePeak]
    max_tau_error: float
    max_f_error: float

    @property
    def passed(self) -> bool:
        return not self.missed and not self.false

    def to_dict(self) -> dict:
        return {"pass": self.passed,
                "matched": [{"predicted": a.to_dict(), "measured": b.to_dict()}
                            for a, b in self.matched],
                "missed": [p.to_dict() for p in self.missed],
                "false": [p.to_dict() for p in self.false],
                "max_tau_error_s": self.max_tau_error, "max_f_error_hz": self.max_f_error}


def _wrapped(a: float, b: float, period: float | None) -> float:
    d = a - b
    if period:
        d = (d + period / 2) % period - period / 2
    return abs(d)


def compare(predicted: Sequence[SidePeak], measured: Sequence[SidePeak],
            tau_tol: float, f_tol: float, tau_period: float | None = None,
            f_period: float | None = None, strong_predicted: float = 1 - EQUAL_TOL,
            strong_measured: float = 1 - EQUAL_TOL) -> Comparison:
    """Match predicted and measured peaks within ``(tau_tol, f_tol)``.

    Every predicted peak is paired with the nearest measured peak in range.
    Only predicted peaks at or above ``strong_predicted`` count as missed
    and only measured peaks at or above ``strong_measured`` count as false.
    """
    def near(p: SidePeak, q: SidePeak) -> bool:
        return (_wrapped(p.tau, q.tau, tau_period) <= tau_tol
                and _wrapped(p.doppler, q.doppler, f_period) <= f_tol)

    def dist(p: SidePeak, q: SidePeak) -> float:
        return (_wrapped(p.tau, q.tau, tau_period) / tau_tol) ** 2 + \
            (_wrapped(p.doppler, q.doppler, f_period) / f_tol) ** 2

    matched, missed = [], []
    et = ef = 0.0
    for p in predicted:
        cands = [q for q in measured if near(p, q)]
        if cands:
            q = min(cands, key=lambda q: dist(p, q))
            matched.append((p, q))
            et = max(et, _wrapped(p.tau, q.tau, tau_period))
            ef = max(ef, _wrapped(p.doppler, q.doppler, f_period))
        elif p.level >= strong_predicted:
            missed.append(p)
    false = [q for q in measured if q.level >= strong_measured
             and not any(near(p, q) for p in predicted)]
    return Comparison(matched, missed, false, et, ef)


def verify_prediction(pattern: CombPattern, algorithm: str, numerology: OfdmNumerology,
                      rel_threshold_db: float = -13.0) -> Comparison:
    """Simulate a noiseless single target at the origin and compare its peaks with the prediction.

    ``fft2d`` uses the zero-padded 2D periodogram over one delay and one
    Doppler period, matched within one grid bin; only equal-level peaks
    count as missed or false.  ``delay_sum`` evaluates the ambiguity
    function on whole-sample delays over two Doppler periods and counts
    peaks at half amplitude or more.
    """
    num = numerology
    S, Ss = pattern.S_sub, pattern.S_sym
    period = 1.0 / (Ss * num.T)
    grid = realize_grid(pattern, num)
    if algorithm == "fft2d":
        spec = periodogram_2dfft(apply_channel_freq(grid, [Target(0.0, 0.0)]), 4, 4)
        measured = extract_peaks(spec, rel_threshold_db, num.T_s, period)
        window = Window(num.T_s, -period / 2, period / 2)
        predicted = predict_side_peaks(pattern, "fft2d", num, window)
        return compare(predicted, measured, num.T_s / (4 * num.N), period / (4 * S),
                       num.T_s, period)
    if algorithm == "delay_sum":
        dd = DelayDopplerGrid.uniform(num.T_s / num.N, num.T_s, period / (4 * S), -period, period)
        spec = delay_sum_af(modulate(grid), dd)
        measured = extract_peaks(spec, rel_threshold_db, num.T_s, None)
        predicted = predict_side_peaks(pattern, "delay_sum", num, Window(num.T_s, -period, period))
        return compare(predicted, measured, num.T_s / num.N, period / (4 * S), num.T_s, None,
                       strong_predicted=0.5, strong_measured=0.5)
    raise PatternError(f"no simulation check for algorithm {algorithm!r}")
