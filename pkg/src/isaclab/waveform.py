"""CP-OFDM modulation, delay-Doppler channels and the receiver front end."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .patterns import OfdmNumerology, PatternError, PatternGrid


@dataclass(frozen=True)
class Target:
    tau: float
    doppler: float
    alpha: complex = 1.0 + 0j

    def validate(self, num: OfdmNumerology) -> None:
        if not 0 <= self.tau < num.T_s:
            raise PatternError(f"target delay {self.tau} outside [0, T_s)")
        if abs(self.doppler) >= num.scs_hz / 10:
            raise PatternError(f"Doppler {self.doppler} Hz is not small against the SCS")

    def delay_samples(self, num: OfdmNumerology) -> int:
        """Delay as an integer sample count; raises for fractional delays."""
        n = self.tau * num.sample_rate
        k = int(round(n))
        if abs(n - k) > 1e-6:
            raise PatternError(f"delay {self.tau} s is not an integer number of samples")
        return k


@dataclass(frozen=True)
class TimeSignal:
    samples: np.ndarray = field(repr=False)
    numerology: OfdmNumerology
    symbol_boundaries: tuple[int, ...]

    @property
    def sample_rate(self) -> float:
        return self.numerology.sample_rate


@dataclass(frozen=True)
class SnapshotMatrix:
    """Descrambled frequency-domain RS symbols, one row per RS symbol.

    ``data[i]`` holds ``X_R`` of RS symbol ``symbols[i]`` over all ``N``
    subcarriers, zero off-pattern.  :meth:`vector` reads the pattern REs
    symbol by symbol with subcarriers ascending, the row order of
    :class:`isaclab.sensing.SteeringDictionary`.
    """

    data: np.ndarray = field(repr=False)
    mask: np.ndarray = field(repr=False)
    symbols: tuple[int, ...]
    numerology: OfdmNumerology
    gi_index: int = 0

    @property
    def M(self) -> int:
        return len(self.symbols)

    def vector(self) -> np.ndarray:
        return self.data[self.mask]

    def re_index(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(self.mask)
        return [(self.symbols[r], int(c)) for r, c in zip(rows, cols)]


def modulate(grid: PatternGrid) -> TimeSignal:
    """Per-symbol length-``N`` inverse DFT plus cyclic prefix; empty symbols are zeros."""
    num = grid.numerology
    N, Ncp = num.N, num.N_cp
    if grid.values.shape[1] != N:
        raise PatternError("grid width does not match N")
    Y = N * np.fft.ifft(grid.values, axis=1)
    frames = np.concatenate([Y[:, N - Ncp:], Y], axis=1)
    bounds = tuple(s * num.N_prime for s in range(grid.span_symbols))
    return TimeSignal(frames.reshape(-1), num, bounds)


def symbol_energy(signal: TimeSignal, s: int) -> float:
    """Energy of symbol ``s`` with the cyclic prefix removed."""
    num = signal.numerology
    start = signal.symbol_boundaries[s] + num.N_cp
    return float(np.sum(np.abs(signal.samples[start:start + num.N]) ** 2))


def _noise(rng: np.random.Generator, shape, var: float) -> np.ndarray:
    return math.sqrt(var / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def apply_channel_time(signal: TimeSignal, targets: Sequence[Target],
                       snr_db: float | None = None, rng: np.random.Generator | None = None,
                       rs_symbols: Sequence[int] | None = None) -> TimeSignal:
    """Sum of delayed, Doppler-rotated copies of ``signal`` plus optional noise.

    Delays must be whole samples.  Doppler is a constant phase per OFDM
    symbol, ``exp(j2*pi*f*s*T)`` for the symbol ``s`` the sample was sent in.
    The SNR is taken against the mean received power over RS-symbol samples.
    """
    num = signal.numerology
    x = signal.samples
    L = x.size
    sym = np.arange(L) // num.N_prime
    out = np.zeros(L, dtype=complex)
    for t in targets:
        t.validate(num)
        d = t.delay_samples(num)
        if d >= L:
            raise PatternError("delay exceeds the signal span")
        z = t.alpha * x * np.exp(2j * np.pi * t.doppler * sym * num.T)
        out[d:] += z[:L - d]
    if snr_db is not None:
        if rng is None:
            raise ValueError("noise needs a random generator")
        rs = rs_symbols if rs_symbols is not None else sorted(set(sym[np.abs(x) > 0]))
        idx = np.concatenate([np.arange(s * num.N_prime, (s + 1) * num.N_prime) for s in rs]) \
            if len(rs) else np.arange(0)
        p_tx = float(np.mean(np.abs(x[idx]) ** 2)) if idx.size else 0.0
        p_sig = p_tx * sum(abs(t.alpha) ** 2 for t in targets) if targets else p_tx
        out = out + _noise(rng, L, p_sig / 10 ** (snr_db / 10))
    return TimeSignal(out, num, signal.symbol_boundaries)


def _rs_rows(grid: PatternGrid) -> list[int]:
    return grid.rs_symbols


def apply_channel_freq(grid: PatternGrid, targets: Sequence[Target],
                       snr_db: float | None = None,
                       rng: np.random.Generator | None = None) -> SnapshotMatrix:
    """Ideal post-FFT model: ``sum_h alpha_h e^{j2pi f_h s T} e^{-j2pi tau_h k/T_s}`` on every RE.

    Fractional delays are allowed.  Noise, when requested, is added per RE
    against the summed target power.
    """
    num = grid.numerology
    rows = _rs_rows(grid)
    mask = grid.mask[rows]
    k = np.arange(num.N)
    s = np.asarray(rows, dtype=float)[:, None]
    data = np.zeros(mask.shape, dtype=complex)
    for t in targets:
        if not 0 <= t.tau < num.T_s:
            raise PatternError(f"target delay {t.tau} outside [0, T_s)")
        data += t.alpha * np.exp(2j * np.pi * t.doppler * s * num.T) \
            * np.exp(-2j * np.pi * t.tau * k[None, :] / num.T_s)
    if snr_db is not None:
        if rng is None:
            raise ValueError("noise needs a random generator")
        p = sum(abs(t.alpha) ** 2 for t in targets) or 1.0
        data = data + _noise(rng, data.shape, p / 10 ** (snr_db / 10))
    data = np.where(mask, data, 0)
    return SnapshotMatrix(data, mask, tuple(rows), num, 0)


def infer_comb_size(grid: PatternGrid) -> int:
    """Largest spacing shared by all RS REs within their symbols."""
    g = 0
    for row in grid.mask:
        ds = np.flatnonzero(row)
        for a in ds[1:] - ds[0]:
            g = math.gcd(g, int(a))
    return g or grid.numerology.N


def extended_gi_front_end(signal: TimeSignal, grid: PatternGrid, l: int,
                          S_sub: int | None = None, compensate: bool = True) -> SnapshotMatrix:
    """Receive RS symbols with a guard interval extended by ``l`` comb periods.

    Per RS symbol the first ``N_cp + l*N/S_sub`` samples are dropped, the
    rest is de-rotated by the symbol's comb offset, transformed with a DFT
    of length ``N*(S_sub-l)/S_sub`` and every ``(S_sub-l)``-th bin is mapped
    back onto the comb.  The retained bins carry a factor
    ``(S_sub-l)/S_sub`` which ``compensate`` undoes.  ``l=0`` is ordinary
    CP removal and works for any pattern.
    """
    num = signal.numerology
    N, Np, Ncp = num.N, num.N_prime, num.N_cp
    S = S_sub or infer_comb_size(grid)
    if not 0 <= l < S:
        raise PatternError(f"l={l} outside [0, {S})")
    if l and N % S:
        raise PatternError(f"S_sub={S} does not divide N={N}")
    rows = _rs_rows(grid)
    mask = grid.mask[rows]
    data = np.zeros(mask.shape, dtype=complex)
    x = signal.samples
    for r, s in enumerate(rows):
        ds = np.flatnonzero(mask[r])
        base = signal.symbol_boundaries[s] + Ncp
        if l == 0:
            B = np.fft.fft(x[base:base + N]) / N
            data[r, ds] = B[ds]
            continue
        F = int(ds[0] % S)
        if np.any(ds % S != F):
            raise PatternError(f"symbol {s} REs do not lie on one comb of size {S}")
        shift = l * N // S
        Lw = N - shift
        m = np.arange(Lw)
        g = x[base + shift:base + N] * np.exp(-2j * np.pi * F * (shift + m) / N)
        B = np.fft.fft(g) / N
        if compensate:
            B = B * (S / (S - l))
        w = (ds - F) // S
        data[r, ds] = B[(S - l) * w]
    vals = grid.values[rows]
    data[mask] = data[mask] / vals[mask]
    if signal.samples.size < signal.symbol_boundaries[rows[-1]] + Np:
        raise PatternError("signal shorter than the pattern span")
    return SnapshotMatrix(data, mask, tuple(rows), num, l)


def make_snapshot(columns: Sequence[np.ndarray], masks: Sequence[np.ndarray],
                  symbols: Sequence[int], numerology: OfdmNumerology,
                  gi_index: int = 0) -> SnapshotMatrix:
    """Stack per-symbol frequency vectors into a :class:`SnapshotMatrix`."""
    if not (len(columns) == len(masks) == len(symbols)) or not columns:
        raise PatternError("symbol count mismatch between columns, masks and symbols")
    data = np.vstack([np.asarray(c, dtype=complex) for c in columns])
    mask = np.vstack([np.asarray(m, dtype=bool) for m in masks])
    if data.shape[1] != numerology.N:
        raise PatternError("column length does not match N")
    return SnapshotMatrix(np.where(mask, data, 0), mask, tuple(int(s) for s in symbols),
                          numerology, gi_index)


def model_error(measured: SnapshotMatrix, reference: SnapshotMatrix) -> float:
    """Relative l2 error over pattern REs."""
    a, b = measured.vector(), reference.vector()
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


# --- I/O ----------------------------------------------------------------

def load_scene(path: str | Path) -> tuple[list[Target], float | None]:
    doc = json.loads(Path(path).read_text())
    snr = None
    if isinstance(doc, dict):
        snr = doc.get("snr_db")
        doc = doc.get("targets", [])
    targets = [Target(float(t["tau_s"]), float(t.get("doppler_hz", 0.0)),
                      complex(t.get("alpha_re", 1.0), t.get("alpha_im", 0.0))) for t in doc]
    return targets, (None if snr is None else float(snr))


def scene_to_dict(targets: Sequence[Target], snr_db: float | None = None) -> dict:
    return {"targets": [{"tau_s": t.tau, "doppler_hz": t.doppler,
                         "alpha_re": complex(t.alpha).real, "alpha_im": complex(t.alpha).imag}
                        for t in targets],
            "snr_db": snr_db}


def save_signal(signal: TimeSignal, path: str | Path) -> tuple[Path, Path]:
    """Write interleaved float64 re/im samples and a JSON sidecar."""
    path = Path(path)
    binp = path.with_suffix(".bin")
    np.ascontiguousarray(signal.samples, dtype=np.complex128).view(np.float64).tofile(binp)
    side = path.with_suffix(".json")
    side.write_text(json.dumps({"sample_rate": signal.sample_rate,
                                "boundaries": list(signal.symbol_boundaries),
                                "numerology": signal.numerology.to_dict(),
                                "dtype": "float64-interleaved"}, indent=2))
    return binp, side


def load_signal(path: str | Path) -> TimeSignal:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    raw = np.fromfile(path.with_suffix(".bin"), dtype=np.float64)
    return TimeSignal(raw.view(np.complex128), OfdmNumerology(**meta["numerology"]),
                      tuple(meta["boundaries"]))
