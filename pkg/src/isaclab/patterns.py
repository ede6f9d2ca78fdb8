"""Reference-signal pattern types, scheme generators and grid realization.

Three parameterizations are supported:

* :class:`CombPattern` -- comb of size ``S_sub`` repeated every ``S_sym``
  symbols with a per-symbol staggering offset ``F_i``.
* :class:`SynthesizedPattern` -- a comb plus a PTRS-like component of ``U``
  symbols, each carrying ``U_F`` tones.
* :class:`IrregularPattern` -- arbitrary per-symbol RE offsets.

Every pattern is reduced to the irregular form with :func:`to_irregular`;
the checkers, the oracle and the grid realization all work on that form.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np


class PatternError(ValueError):
    """Raised when a pattern cannot be built or realized."""


@dataclass(frozen=True)
class OfdmNumerology:
    """CP-OFDM numerology.

    ``N`` subcarriers, ``N_cp`` cyclic-prefix samples and subcarrier spacing
    ``scs_hz``. Durations are derived: ``T_s = 1/scs``, ``T_cp = N_cp*T_s/N``
    and ``T = T_cp + T_s``.
    """

    N: int = 256
    N_cp: int = 16
    scs_hz: float = 15e3

    def __post_init__(self):
        if self.N < 2:
            raise PatternError(f"N must be >= 2, got {self.N}")
        if not 0 <= self.N_cp < self.N:
            raise PatternError(f"N_cp must lie in [0, N), got {self.N_cp}")
        if self.scs_hz <= 0:
            raise PatternError("scs_hz must be positive")

    @property
    def T_s(self) -> float:
        return 1.0 / self.scs_hz

    @property
    def T_cp(self) -> float:
        return self.N_cp * self.T_s / self.N

    @property
    def T(self) -> float:
        # N' samples of T_s/N each, so T_cp + T_s holds exactly in sample units
        return self.N_prime * self.T_s / self.N

    @property
    def N_prime(self) -> int:
        return self.N + self.N_cp

    @property
    def sample_rate(self) -> float:
        return self.N / self.T_s

    def to_dict(self) -> dict:
        return {"N": self.N, "N_cp": self.N_cp, "scs_hz": self.scs_hz}


@dataclass(frozen=True)
class CombPattern:
    S_sub: int
    S_sym: int
    offsets: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "offsets", tuple(int(f) for f in self.offsets))

    @property
    def M(self) -> int:
        return len(self.offsets)


@dataclass(frozen=True)
class SynthesizedPattern:
    comb: CombPattern
    C_1: int
    C_2: int
    S_F: int = 1
    S_PT: int = 1
    U_F: int = 1
    U: int = 1

    @property
    def M(self) -> int:
        return self.comb.M


@dataclass(frozen=True)
class IrregularPattern:
    """Symbols as ``((S_1, (d_11, d_12, ...)), (S_2, (...)), ...)``."""

    symbols: tuple[tuple[int, tuple[int, ...]], ...]

    def __post_init__(self):
        object.__setattr__(
            self,
            "symbols",
            tuple((int(s), tuple(int(d) for d in ds)) for s, ds in self.symbols),
        )

    @property
    def G(self) -> int:
        return len(self.symbols)

    @property
    def K(self) -> tuple[int, ...]:
        return tuple(len(ds) for _, ds in self.symbols)

    @property
    def n_res(self) -> int:
        return sum(self.K)

    def res(self) -> list[tuple[int, int]]:
        """(symbol index, subcarrier) of every RE in vectorization order."""
        return [(s, d) for s, ds in self.symbols for d in ds]

    @property
    def span(self) -> int:
        return self.symbols[-1][0] - self.symbols[0][0] + 1


Pattern = Union[CombPattern, SynthesizedPattern, IrregularPattern]


@dataclass(frozen=True)
class SequenceSpec:
    """Unit-magnitude scrambling sequence: ``"zc"`` or ``"qpsk"``."""

    kind: str = "zc"
    root: int | None = None
    seed: int = 0


@dataclass(frozen=True)
class PatternGrid:
    numerology: OfdmNumerology
    span_symbols: int
    mask: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    @property
    def rs_symbols(self) -> list[int]:
        return [int(s) for s in np.flatnonzero(self.mask.any(axis=1))]


# Relative RE offsets of the 5G PRS for each comb size; comb-8 is not a 5G
# comb and uses the bit-reversed full sweep.
PRS_OFFSETS = {
    2: (0, 1),
    4: (0, 2, 1, 3),
    6: (0, 3, 1, 4, 2, 5),
    8: (0, 4, 2, 6, 1, 5, 3, 7),
    12: (0, 6, 3, 9, 1, 7, 4, 10, 2, 8, 5, 11),
}


def scheme_e_example(S_sub: int) -> tuple[int, int, int]:
    """Three-symbol offset tuple passing the super-resolution anti-condition."""
    if S_sub == 4:
        return (0, 3, 1)
    # i=1 forces k2 = k1 and i=2 then forces -k1 = 0 (mod S_sub)
    return (0, 1 % S_sub, 3 % S_sub)


def make_scheme(scheme: str, S_sub: int, S_sym: int = 1, M: int | None = None,
                p: int = 1, F_0: int = 0) -> CombPattern:
    """Build a comb pattern of staggering scheme A, B, C, D or E.

    A keeps a constant offset, B alternates by half a comb, C follows the
    PRS full-sweep cycle, D staggers with slope ``p`` coprime to the comb size
    (``F_i = (p*i + F_0) mod S_sub``) and E returns a stored tuple known to
    pass :func:`isaclab.checker.check_comb_super`.
    """
    scheme = scheme.upper()
    if S_sub < 2:
        raise PatternError("S_sub must be >= 2")
    if S_sym < 1:
        raise PatternError("S_sym must be >= 1")
    if M is not None and M < 1:
        raise PatternError("M must be >= 1")
    if scheme == "A":
        offs = [F_0 % S_sub] * (M or S_sub)
    elif scheme == "B":
        if S_sub % 2:
            raise PatternError(f"scheme B needs an even comb size, got {S_sub}")
        offs = [(F_0 + (i % 2) * S_sub // 2) % S_sub for i in range(M or 2)]
    elif scheme == "C":
        if S_sub not in PRS_OFFSETS:
            raise PatternError(f"scheme C supports comb sizes {sorted(PRS_OFFSETS)}")
        cycle = PRS_OFFSETS[S_sub]
        offs = [(cycle[i % S_sub] + F_0) % S_sub for i in range(M or S_sub)]
    elif scheme == "D":
        if math.gcd(p, S_sub) != 1:
            raise PatternError(f"slope p={p} is not coprime to S_sub={S_sub}")
        offs = [(p * i + F_0) % S_sub for i in range(M or S_sub)]
    elif scheme == "E":
        base = list(scheme_e_example(S_sub))
        m = M or 3
        if m < 3:
            raise PatternError("scheme E needs M >= 3")
        offs = [(base[i] if i < 3 else p * i) % S_sub for i in range(m)]
        offs = [(f + F_0) % S_sub for f in offs]
    else:
        raise PatternError(f"unknown scheme {scheme!r}")
    return CombPattern(S_sub, S_sym, tuple(offs))


def _comb_symbol(F: int, S_sub: int, N: int) -> list[int]:
    return list(range(F, N, S_sub))


def ptrs_res(synth: SynthesizedPattern) -> list[tuple[int, int]]:
    return [(synth.C_2 + u * synth.S_PT, synth.C_1 + l * synth.S_F)
            for u in range(synth.U) for l in range(synth.U_F)]


def to_irregular(pattern: Pattern, N: int | None = None) -> IrregularPattern:
    """Canonical irregular form; comb REs are ``F_i + k*S_sub < N``."""
    if isinstance(pattern, IrregularPattern):
        if N is not None:
            for s, ds in pattern.symbols:
                if ds and ds[-1] >= N:
                    raise PatternError(f"offset {ds[-1]} on symbol {s} is >= N={N}")
        return pattern
    if N is None:
        raise PatternError("N is required to expand a comb pattern")
    cells: dict[int, list[int]] = {}

    def add(s: int, d: int) -> None:
        if d >= N or d < 0:
            raise PatternError(f"offset {d} on symbol {s} is outside [0, {N})")
        row = cells.setdefault(s, [])
        if d in row:
            raise PatternError(f"RE collision at symbol {s}, subcarrier {d}")
        row.append(d)

    comb = pattern.comb if isinstance(pattern, SynthesizedPattern) else pattern
    for i, F in enumerate(comb.offsets):
        res = _comb_symbol(F, comb.S_sub, N)
        if not res:
            raise PatternError(f"comb symbol {i} has no RE below N={N}")
        for d in res:
            add(i * comb.S_sym, d)
    if isinstance(pattern, SynthesizedPattern):
        for s, d in ptrs_res(pattern):
            add(s, d)
    return IrregularPattern(tuple((s, tuple(sorted(cells[s]))) for s in sorted(cells)))


def irregular_from_res(res: Iterable[tuple[int, int]]) -> IrregularPattern:
    cells: dict[int, set[int]] = {}
    for s, d in res:
        cells.setdefault(int(s), set()).add(int(d))
    return IrregularPattern(tuple((s, tuple(sorted(cells[s]))) for s in sorted(cells)))


def zadoff_chu(length: int, root: int | None = None) -> np.ndarray:
    if root is None:
        root = next((u for u in range(2, length) if math.gcd(u, length) == 1), 1)
    if math.gcd(root, length) != 1:
        raise PatternError(f"ZC root {root} is not coprime to length {length}")
    k = np.arange(length)
    return np.exp(-1j * np.pi * root * k * (k + length % 2) / length)


def scrambling_values(spec: SequenceSpec, counts: Sequence[int]) -> list[np.ndarray]:
    """One unit-magnitude sequence per RS symbol of the given lengths."""
    if spec.kind == "zc":
        return [zadoff_chu(c, spec.root) if c > 1 else np.ones(c, complex) for c in counts]
    if spec.kind == "qpsk":
        rng = np.random.default_rng(spec.seed)
        out = []
        for c in counts:
            bits = rng.integers(0, 4, size=c)
            out.append(np.exp(1j * (np.pi / 4 + np.pi / 2 * bits)))
        return out
    raise PatternError(f"unknown sequence kind {spec.kind!r}")


def realize_grid(pattern: Pattern, numerology: OfdmNumerology,
                 scramble: SequenceSpec = SequenceSpec()) -> PatternGrid:
    irr = to_irregular(pattern, numerology.N)
    L = irr.symbols[-1][0] + 1
    mask = np.zeros((L, numerology.N), dtype=bool)
    values = np.zeros((L, numerology.N), dtype=complex)
    seqs = scrambling_values(scramble, irr.K)
    for (s, ds), seq in zip(irr.symbols, seqs):
        mask[s, list(ds)] = True
        values[s, list(ds)] = seq
    return PatternGrid(numerology, L, mask, values)


def overhead(pattern: IrregularPattern, N: int) -> float:
    """RS REs over ``N * span``, span counted first to last RS symbol."""
    if pattern.n_res == 0:
        raise PatternError("empty pattern")
    return pattern.n_res / (N * pattern.span)


def validate(pattern: Pattern) -> list[str]:
    """Invariant violations; an empty list means the pattern is well formed."""
    out: list[str] = []
    if isinstance(pattern, CombPattern):
        if pattern.S_sub < 2:
            out.append("comb size S_sub must be >= 2")
        if pattern.S_sym < 1:
            out.append("symbol spacing S_sym must be >= 1")
        if pattern.M < 1:
            out.append("empty pattern")
        for i, F in enumerate(pattern.offsets):
            if not 0 <= F < max(pattern.S_sub, 1):
                out.append(f"offset out of range: F_{i}={F} not in [0, {pattern.S_sub})")
    elif isinstance(pattern, SynthesizedPattern):
        out.extend(validate(pattern.comb))
        if pattern.C_1 < 0:
            out.append("C_1 must be >= 0")
        if pattern.C_2 < 0:
            out.append("C_2 must be >= 0")
        if pattern.U < 0 or pattern.U_F < 1:
            out.append("U must be >= 0 and U_F >= 1")
        if pattern.U_F >= 2 and pattern.S_F < 1:
            out.append("S_F must be >= 1 when U_F >= 2")
        if pattern.U >= 2 and pattern.S_PT < 1:
            out.append("S_PT must be >= 1 when U >= 2")
        if not out:
            comb = pattern.comb
            for s, d in ptrs_res(pattern):
                i, r = divmod(s, comb.S_sym)
                if r == 0 and i < comb.M and d % comb.S_sub == comb.offsets[i]:
                    out.append(f"PTRS RE collides with comb RE at symbol {s}, subcarrier {d}")
    elif isinstance(pattern, IrregularPattern):
        if pattern.G < 1:
            out.append("empty pattern")
        prev = None
        for s, ds in pattern.symbols:
            if prev is not None and s <= prev:
                out.append(f"symbol indices not strictly increasing at S={s}")
            prev = s
            if not ds:
                out.append(f"symbol {s} has no RE")
            if any(b <= a for a, b in zip(ds, ds[1:])):
                out.append(f"offsets on symbol {s} not strictly increasing")
            if any(d < 0 for d in ds):
                out.append(f"negative offset on symbol {s}")
    else:
        out.append(f"unsupported pattern type {type(pattern).__name__}")
    return out


# --- JSON ---------------------------------------------------------------

def pattern_to_dict(pattern: Pattern) -> dict:
    if isinstance(pattern, CombPattern):
        return {"kind": "comb", "S_sub": pattern.S_sub, "S_sym": pattern.S_sym,
                "offsets": list(pattern.offsets), "M": pattern.M}
    if isinstance(pattern, SynthesizedPattern):
        d = pattern_to_dict(pattern.comb)
        d.update(kind="synthesized", C_1=pattern.C_1, C_2=pattern.C_2, S_F=pattern.S_F,
                 S_PT=pattern.S_PT, U_F=pattern.U_F, U=pattern.U)
        return d
    if isinstance(pattern, IrregularPattern):
        return {"kind": "irregular",
                "symbols": [{"S": s, "d": list(ds)} for s, ds in pattern.symbols]}
    raise PatternError(f"unsupported pattern type {type(pattern).__name__}")


def pattern_from_dict(doc: dict) -> Pattern:
    kind = doc.get("kind")
    try:
        if kind in ("comb", "synthesized"):
            src = doc.get("comb", doc)
            comb = CombPattern(int(src["S_sub"]), int(src.get("S_sym", 1)),
                               tuple(src["offsets"]))
            if "M" in src and int(src["M"]) != comb.M:
                raise PatternError(f"M={src['M']} disagrees with {comb.M} offsets")
            if kind == "comb":
                return comb
            return SynthesizedPattern(comb, int(doc["C_1"]), int(doc["C_2"]),
                                      int(doc.get("S_F", 1)), int(doc.get("S_PT", 1)),
                                      int(doc.get("U_F", 1)), int(doc.get("U", 1)))
        if kind == "irregular":
            return IrregularPattern(tuple((e["S"], tuple(e["d"])) for e in doc["symbols"]))
    except KeyError as exc:
        raise PatternError(f"pattern document lacks field {exc}") from None
    raise PatternError(f"unknown pattern kind {kind!r}")


def load_pattern(path: str | Path) -> tuple[Pattern, dict]:
    """Read a pattern file; returns the pattern and the raw document."""
    doc = json.loads(Path(path).read_text())
    return pattern_from_dict(doc), doc


def dump_pattern(pattern: Pattern, **extra) -> str:
    doc = pattern_to_dict(pattern)
    doc.update(extra)
    return json.dumps(doc, indent=2)
