"""Delay-Doppler estimators: Delay-and-Sum, 2D periodogram, 2D IAA and 2D MUSIC.

Spectra are evaluated on a :class:`DelayDopplerGrid` and stored tau-major:
``values[i, j]`` belongs to ``(taus[i], freqs[j])`` and dictionary column
``i * len(freqs) + j``.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .patterns import IrregularPattern, OfdmNumerology, PatternError
from .waveform import SnapshotMatrix, TimeSignal

log = logging.getLogger(__name__)

# Column block for parallel evaluation; fixed so results do not depend on
# the number of workers.
BLOCK = 2048


@dataclass(frozen=True)
class DelayDopplerGrid:
    taus: np.ndarray = field(repr=False)
    freqs: np.ndarray = field(repr=False)

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=float)
        freqs = np.asarray(self.freqs, dtype=float)
        for name, v in (("taus", taus), ("freqs", freqs)):
            if v.ndim != 1 or v.size == 0:
                raise PatternError(f"{name} must be a nonempty 1-D sequence")
            if np.any(np.diff(v) <= 0):
                raise PatternError(f"{name} must be strictly increasing")
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "freqs", freqs)

    @property
    def shape(self) -> tuple[int, int]:
        return self.taus.size, self.freqs.size

    @classmethod
    def uniform(cls, tau_step: float, tau_max: float, f_step: float,
                f_min: float, f_max: float) -> "DelayDopplerGrid":
        """Half-open delay range ``[0, tau_max)``, Doppler ``[f_min, f_max)``."""
        nt = int(round(tau_max / tau_step))
        nf = int(round((f_max - f_min) / f_step))
        return cls(np.arange(nt) * tau_step, f_min + np.arange(nf) * f_step)

    @classmethod
    def default(cls, numerology: OfdmNumerology, M: int, S_sym: int = 1,
                tau_step: float | None = None, f_step: float | None = None) -> "DelayDopplerGrid":
        """``T_s/(4N)`` by ``1/(4*M*S_sym*T)`` over one delay and one Doppler period."""
        period = 1.0 / (S_sym * numerology.T)
        tau_step = tau_step or numerology.T_s / (4 * numerology.N)
        f_step = f_step or period / (4 * M)
        return cls.uniform(tau_step, numerology.T_s, f_step, -period / 2, period / 2)

    def to_dict(self) -> dict:
        def axis(v):
            step = float(v[1] - v[0]) if v.size > 1 else 0.0
            return {"start": float(v[0]), "step": step, "count": int(v.size)}
        return {"tau": axis(self.taus), "doppler": axis(self.freqs)}


@dataclass(frozen=True)
class Spectrum2D:
    """Nonnegative spectrum; ``power`` says whether values are squared magnitudes."""

    grid: DelayDopplerGrid
    values: np.ndarray = field(repr=False)
    power: bool = True
    normalized: bool = False
    algorithm: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise PatternError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if np.any(v < 0):
            raise PatternError("spectrum values must be nonnegative")
        object.__setattr__(self, "values", v)

    def normalize(self) -> "Spectrum2D":
        peak = self.values.max()
        if peak <= 0:
            raise PatternError("cannot normalize an all-zero spectrum")
        return Spectrum2D(self.grid, self.values / peak, self.power, True,
                          self.algorithm, self.params)

    def db(self, floor: float = -300.0) -> np.ndarray:
        k = 10.0 if self.power else 20.0
        with np.errstate(divide="ignore"):
            return np.maximum(k * np.log10(self.values), floor)

    def argmax(self) -> tuple[float, float]:
        i, j = np.unravel_index(np.argmax(self.values), self.values.shape)
        return float(self.grid.taus[i]), float(self.grid.freqs[j])

    def header(self) -> dict:
        return {"grid": self.grid.to_dict(), "normalized": self.normalized,
                "scale": "power" if self.power else "amplitude",
                "algorithm": self.algorithm, "params": self.params}

    def to_csv(self, path: str | Path) -> None:
        """Rows ``tau_s, doppler_hz, value_db`` in tau-major order."""
        db = self.db()
        T, F = np.meshgrid(self.grid.taus, self.grid.freqs, indexing="ij")
        with open(path, "w") as fh:
            fh.write("tau_s,doppler_hz,value_db\n")
            for t, f, v in zip(T.ravel(), F.ravel(), db.ravel()):
                fh.write(f"{t:.9e},{f:.6f},{v:.6f}\n")

    def write(self, csv_path: str | Path, json_path: str | Path | None = None) -> None:
        self.to_csv(csv_path)
        if json_path is not None:
            Path(json_path).write_text(json.dumps(self.header(), indent=2, sort_keys=True))


@dataclass(frozen=True)
class SteeringDictionary:
    grid: DelayDopplerGrid
    vectors: np.ndarray = field(repr=False)
    re_index: tuple[tuple[int, int], ...]


def _steer_factors(pattern: IrregularPattern, num: OfdmNumerology, grid: DelayDopplerGrid):
    res = np.array(pattern.res())
    s, d = res[:, 0].astype(float), res[:, 1].astype(float)
    dl = np.exp(-2j * np.pi * np.outer(d, grid.taus) / num.T_s)
    dp = np.exp(2j * np.pi * np.outer(s, grid.freqs) * num.T)
    return dl, dp


def build_dictionary(pattern: IrregularPattern, numerology: OfdmNumerology,
                     grid: DelayDopplerGrid) -> SteeringDictionary:
    """Steering vectors ``exp(-j2pi d tau/T_s) exp(j2pi S T f)`` for every grid point."""
    dl, dp = _steer_factors(pattern, numerology, grid)
    W = (dl[:, :, None] * dp[:, None, :]).reshape(dl.shape[0], -1)
    return SteeringDictionary(grid, W, tuple(pattern.res()))


def snapshot_pattern(snapshot: SnapshotMatrix) -> IrregularPattern:
    """Irregular pattern of the REs a snapshot carries."""
    return IrregularPattern(tuple((s, tuple(int(d) for d in np.flatnonzero(row)))
                                  for s, row in zip(snapshot.symbols, snapshot.mask)))


# --- Delay-and-Sum ------------------------------------------------------

def delay_sum_af(signal: TimeSignal, grid: DelayDopplerGrid,
                 rs_symbols: Sequence[int] | None = None) -> Spectrum2D:
    """Ambiguity magnitude ``|sum_i sum_n s_i*(n) s_i(n-d) e^{j2pi f n/fs}| / E_s``.

    Each RS symbol ``s_i`` (its CP-inclusive span, zero outside) is
    correlated with its own delayed, Doppler-shifted copy and the results
    are summed coherently; ``E_s`` is the total RS energy so
    ``A(0, 0) = 1``.  Neighbouring symbols do not cross-correlate.
    """
    num = signal.numerology
    x = signal.samples
    fs = num.sample_rate
    Np = num.N_prime
    if rs_symbols is None:
        rs_symbols = [i for i, b in enumerate(signal.symbol_boundaries)
                      if np.any(x[b:b + Np])]
    if not len(rs_symbols):
        raise PatternError("empty signal")
    starts = np.array([signal.symbol_boundaries[s] for s in rs_symbols])
    frames = np.stack([x[b:b + Np] for b in starts])
    E = float(np.sum(np.abs(frames) ** 2))
    if E <= 0:
        raise PatternError("empty signal")
    delays = grid.taus * fs
    d_int = np.round(delays).astype(int)
    if np.any(np.abs(delays - d_int) > 1e-6):
        raise PatternError("Delay-and-Sum needs integer-sample delays")
    dmax = int(d_int.max())
    fp = np.concatenate([np.zeros((frames.shape[0], dmax), complex), frames], axis=1)
    n = np.arange(Np)
    vals = np.zeros(grid.shape)
    ph = np.exp(2j * np.pi * np.outer(n, grid.freqs) / fs)            # Np x F
    sym_ph = np.exp(2j * np.pi * np.outer(starts, grid.freqs) / fs)   # M x F
    for r, d in enumerate(d_int):
        prod = np.conj(frames) * fp[:, dmax - d:dmax - d + Np]
        vals[r] = np.abs(np.sum((prod @ ph) * sym_ph, axis=0)) / E
    return Spectrum2D(grid, vals, power=False, algorithm="delay-sum")


# --- 2D periodogram -----------------------------------------------------

def periodogram(snapshot: SnapshotMatrix, grid: DelayDopplerGrid) -> Spectrum2D:
    """``|sum_s sum_k X(s,k) e^{-j2pi f s T} e^{j2pi tau k/T_s}|^2`` on an arbitrary grid."""
    num = snapshot.numerology
    k = np.arange(num.N)
    Z = snapshot.data @ np.exp(2j * np.pi * np.outer(k, grid.taus) / num.T_s)
    s = np.asarray(snapshot.symbols, dtype=float)
    Dop = np.exp(-2j * np.pi * np.outer(grid.freqs, s) * num.T)
    vals = np.abs((Dop @ Z).T) ** 2
    return Spectrum2D(grid, vals, power=True, algorithm="fft2d")


def periodogram_2dfft(snapshot: SnapshotMatrix, pad_tau: int = 4, pad_f: int = 4) -> Spectrum2D:
    """Zero-padded 2D FFT periodogram.

    Needs equally spaced RS symbols.  The delay axis covers ``[0, T_s)`` in
    ``N*pad_tau`` bins and the Doppler axis one period ``1/(dS*T)`` in
    ``M*pad_f`` bins, centered on zero.
    """
    num = snapshot.numerology
    sy = np.asarray(snapshot.symbols)
    M = sy.size
    step = int(sy[1] - sy[0]) if M > 1 else 1
    if M > 1 and np.any(np.diff(sy) != step):
        raise PatternError("2D FFT needs equally spaced RS symbols; use periodogram()")
    nt, nf = num.N * pad_tau, M * pad_f
    Z = np.fft.ifft(snapshot.data, n=nt, axis=1) * nt
    P = np.abs(np.fft.fft(Z, n=nf, axis=0)) ** 2
    P = np.fft.fftshift(P, axes=0).T
    period = 1.0 / (step * num.T)
    freqs = (np.arange(nf) - nf // 2) * period / nf
    grid = DelayDopplerGrid(np.arange(nt) * num.T_s / nt, freqs)
    return Spectrum2D(grid, P, power=True, algorithm="fft2d",
                      params={"pad_tau": pad_tau, "pad_f": pad_f})


# --- IAA ----------------------------------------------------------------

def _blocks(K: int) -> list[slice]:
    return [slice(a, min(a + BLOCK, K)) for a in range(0, K, BLOCK)]


def _map_blocks(fn, K: int, workers: int) -> list:
    blocks = _blocks(K)
    if workers <= 1 or len(blocks) == 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, blocks))


@dataclass(frozen=True)
class IaaInfo:
    iterations: int
    max_rel_change: float


def iaa_2d(snapshot: SnapshotMatrix, dictionary: SteeringDictionary, iterations: int = 15,
           loading: float = 1e-6, init: str = "matched", workers: int = 1,
           return_info: bool = False):
    """Iterative adaptive approach on a single vectorized snapshot.

    Powers start from the matched filter ``|w^H a|^2/||w||^4`` (or uniform
    with ``init="uniform"``) and are refined by
    ``p <- |w^H R^-1 a|^2 / (w^H R^-1 w)^2`` with
    ``R = sum p w w^H + loading*trace(R)/dim*I``.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    a = snapshot.vector()
    W = dictionary.vectors
    if W.shape[0] != a.size:
        raise PatternError(f"dictionary rows {W.shape[0]} != snapshot REs {a.size}")
    dim, K = W.shape
    norms2 = np.sum(np.abs(W) ** 2, axis=0)
    if init == "matched":
        p = np.abs(W.conj().T @ a) ** 2 / norms2 ** 2
    elif init == "uniform":
        p = np.ones(K)
    else:
        raise ValueError(f"unknown init {init!r}")
    change = np.inf
    for _ in range(iterations):
        R = (W * p) @ W.conj().T
        eps = loading * np.real(np.trace(R)) / dim
        if eps <= 0:
            if loading == 0:
                raise np.linalg.LinAlgError("singular covariance; use diagonal loading")
            eps = loading
        R[np.diag_indices(dim)] += eps
        try:
            C = np.linalg.cholesky(R)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("covariance not positive definite; increase loading") from exc
        Ci = np.linalg.inv(C)
        Ria = Ci.conj().T @ (Ci @ a)

        def update(b: slice) -> np.ndarray:
            Wb = W[:, b]
            num = np.abs(Wb.conj().T @ Ria) ** 2
            den = np.sum(np.abs(Ci @ Wb) ** 2, axis=0) ** 2
            return num / den

        new = np.concatenate(_map_blocks(update, K, workers))
        change = float(np.max(np.abs(new - p) / np.maximum(np.abs(p), 1e-300)))
        p = new
    spec = Spectrum2D(dictionary.grid, p.reshape(dictionary.grid.shape), power=True,
                      algorithm="iaa", params={"iterations": iterations, "loading": loading,
                                               "init": init})
    log.debug("iaa finished, max relative change %.3e", change)
    return (spec, IaaInfo(iterations, change)) if return_info else spec


def matched_filter(snapshot: SnapshotMatrix, dictionary: SteeringDictionary) -> Spectrum2D:
    a = snapshot.vector()
    W = dictionary.vectors
    p = np.abs(W.conj().T @ a) ** 2 / np.sum(np.abs(W) ** 2, axis=0) ** 2
    return Spectrum2D(dictionary.grid, p.reshape(dictionary.grid.shape), algorithm="matched")


# --- MUSIC --------------------------------------------------------------

def music_2d(snapshots: Sequence[SnapshotMatrix], dictionary: SteeringDictionary,
             H: int, loading: float = 0.0, workers: int = 1) -> Spectrum2D:
    """Noise-subspace pseudo-spectrum ``1/||E_n^H w||^2``.

    A single snapshot gives a rank-one covariance, so pass several
    realizations (or add loading) when ``H > 1``.
    """
    if not snapshots:
        raise ValueError("need at least one snapshot")
    A = np.column_stack([s.vector() for s in snapshots])
    dim = A.shape[0]
    if not 0 <= H < dim:
        raise ValueError(f"model order H={H} must be in [0, {dim})")
    if dictionary.vectors.shape[0] != dim:
        raise PatternError("dictionary rows do not match snapshot length")
    R = A @ A.conj().T / A.shape[1]
    R[np.diag_indices(dim)] += loading * np.real(np.trace(R)) / dim
    w, V = np.linalg.eigh(R)
    if w[0] < -1e-9 * max(abs(w[-1]), 1.0):
        raise np.linalg.LinAlgError("covariance is not positive semidefinite")
    En = V[:, : dim - H]
    W = dictionary.vectors

    def proj(b: slice) -> np.ndarray:
        return np.sum(np.abs(En.conj().T @ W[:, b]) ** 2, axis=0)

    q = np.concatenate(_map_blocks(proj, W.shape[1], workers))
    vals = 1.0 / np.maximum(q, 1e-300)
    return Spectrum2D(dictionary.grid, vals.reshape(dictionary.grid.shape), power=True,
                      algorithm="music", params={"H": H, "loading": loading,
                                                 "snapshots": len(snapshots)})
