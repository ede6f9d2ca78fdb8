"""Exact anti-condition checkers and the steering-collision oracle.

A pattern is free of equal-power side peaks for super-resolution
estimators when no two distinct delay-Doppler hypotheses produce the same
steering vector.  Writing ``x = (tau' - tau)/T_s`` and ``y = (f' - f)*T``,
two hypotheses collide when

    (S_g - S_1) * y - (d_gk - d_11) * x   is an integer for every RE (g, k).

The checkers reduce this to small modular systems over integer pairs; the
oracle enumerates the rational lattice directly.  All arithmetic is integer
or :class:`fractions.Fraction`.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator

import numpy as np

from .patterns import (CombPattern, IrregularPattern, Pattern, PatternError,
                       SynthesizedPattern, to_irregular, validate)

Collision = tuple[Fraction, Fraction]


@dataclass(frozen=True)
class CheckResult:
    """Verdict of an anti-condition check.

    ``witness`` holds the integer solution (e.g. ``(k1, k2)``) when the check
    fails and ``implied_collision`` the ``(x, y)`` it stands for.  Structural
    failures (too few REs/symbols to pin down delay or Doppler) carry a
    concrete collision and its numerators over a common denominator.
    """

    passed: bool
    rule: str
    witness: tuple[int, int] | None = None
    implied_collision: Collision | None = None
    reason: str = ""

    def to_dict(self) -> dict:
        return {
            "pass": self.passed,
            "rule": self.rule,
            "witness": list(self.witness) if self.witness is not None else None,
            "implied_collision": (None if self.implied_collision is None
                                  else [frac_to_json(v) for v in self.implied_collision]),
            "reason": self.reason,
        }


@dataclass(frozen=True)
class CollisionSet:
    collisions: list[Collision]
    lattice_bounds: tuple[int, int]
    continuous: bool = False

    def __bool__(self) -> bool:
        return bool(self.collisions)

    def to_dict(self) -> dict:
        return {
            "collisions": [[frac_to_json(x), frac_to_json(y)] for x, y in self.collisions],
            "lattice_bounds": {"P": self.lattice_bounds[0], "Q": self.lattice_bounds[1]},
            "continuous": self.continuous,
        }


@dataclass(frozen=True)
class IrregularDerived:
    d_star: int | None
    S_star: int | None
    S_star_mn: int | None = None
    pair: tuple[int, int] | None = None


def frac_to_json(v: Fraction) -> dict:
    v = Fraction(v)
    return {"num": v.numerator, "den": v.denominator}


def frac_from_json(d: dict) -> Fraction:
    return Fraction(int(d["num"]), int(d["den"]))


def _fail(rule: str, k: tuple[int, int], x: Fraction, y: Fraction, reason: str = "") -> CheckResult:
    if not reason:
        if k[0] == 0:
            reason = "Doppler-only alias (k1 = 0)"
        elif k[1] == 0:
            reason = "delay-only alias (second index = 0)"
        else:
            reason = "joint delay-Doppler alias"
    return CheckResult(False, rule, (int(k[0]), int(k[1])), (Fraction(x), Fraction(y)), reason)


def _structural(rule: str, x: Fraction, y: Fraction, reason: str) -> CheckResult:
    den = math.lcm(x.denominator, y.denominator)
    return CheckResult(False, rule, (int(x * den), int(y * den)), (x, y),
                       "structural: " + reason)


def _first_solution(ok: np.ndarray) -> tuple[int, int] | None:
    """First nonzero (i, j) with ok[i, j], in row-major order."""
    ok = ok.copy()
    ok[0, 0] = False
    hits = np.flatnonzero(ok)
    if hits.size == 0:
        return None
    return tuple(int(v) for v in np.unravel_index(hits[0], ok.shape))


# --- comb ---------------------------------------------------------------

def check_comb_super(pattern: CombPattern) -> CheckResult:
    """Staggered-comb anti-condition for super-resolution estimators.

    Searches ``(k1, k2)`` with ``(i*k2 - (F_i - F_0)*k1) % S_sub == 0`` for
    every RS symbol ``i``.  The residue only depends on ``k2 mod S_sub``, so
    ``k2`` ranges over ``[0, S_sub)``, i.e. Doppler offsets below
    ``1/(S_sym*T)``.
    """
    S = pattern.S_sub
    if pattern.M < 1:
        raise PatternError("empty comb pattern")
    rel = np.array([(F - pattern.offsets[0]) % S for F in pattern.offsets])
    i = np.arange(pattern.M)
    k1, k2 = np.meshgrid(np.arange(S), np.arange(S), indexing="ij")
    resid = (i[None, None, :] * k2[..., None] - rel[None, None, :] * k1[..., None]) % S
    hit = _first_solution((resid == 0).all(axis=-1))
    if hit is None:
        return CheckResult(True, "comb-super")
    return _fail("comb-super", hit, Fraction(hit[0], S), Fraction(hit[1], pattern.S_sym * S))


# --- synthesized --------------------------------------------------------

def _ptrs_grid(synth: SynthesizedPattern):
    c = synth.comb
    S, Ss = c.S_sub, c.S_sym
    k1, k2 = np.meshgrid(np.arange(S), np.arange(Ss * S), indexing="ij")
    return S, Ss, k1, k2


def _comb_ok(synth: SynthesizedPattern, k1, k2) -> np.ndarray:
    c = synth.comb
    S = c.S_sub
    ok = np.ones(k1.shape, dtype=bool)
    for i, F in enumerate(c.offsets):
        ok &= (i * k2 - (F - c.offsets[0]) * k1) % S == 0
    return ok


def check_synth_multi_comb(synth: SynthesizedPattern, method: str = "direct") -> CheckResult:
    """PTRS synthesized with at least two staggered comb symbols.

    ``method="direct"`` evaluates the PTRS condition for every ``(u, l)``;
    ``method="fast"`` uses the reduced systems for the ``U``/``U_F`` cases.
    """
    if synth.M < 2:
        raise PatternError("check_synth_multi_comb needs M >= 2")
    S, Ss, k1, k2 = _ptrs_grid(synth)
    F0 = synth.comb.offsets[0]
    mod = Ss * S
    ok = _comb_ok(synth, k1, k2)
    if synth.U >= 1:
        base = (synth.C_2 * k2 - (synth.C_1 - F0) * Ss * k1) % mod == 0
        if method == "direct":
            for u in range(synth.U):
                for l in range(synth.U_F):
                    ok &= ((synth.C_2 + u * synth.S_PT) * k2
                           - (synth.C_1 + l * synth.S_F - F0) * Ss * k1) % mod == 0
        elif method == "fast":
            ok &= base
            if synth.U >= 2:
                ok &= (synth.S_PT * k2) % mod == 0
            if synth.U_F >= 2:
                ok &= (synth.S_F * k1) % S == 0
        else:
            raise ValueError(f"unknown method {method!r}")
    hit = _first_solution(ok)
    if hit is None:
        return CheckResult(True, "synth-multi-comb")
    return _fail("synth-multi-comb", hit, Fraction(hit[0], S), Fraction(hit[1], mod))


def _one_comb_multi_ptrs(synth: SynthesizedPattern) -> CheckResult:
    S = synth.comb.S_sub
    F0 = synth.comb.offsets[0]
    for k1 in range(S):
        for k3 in range(synth.S_PT):
            if k1 == 0 and k3 == 0:
                continue
            v = Fraction(synth.C_2 * k3, synth.S_PT) - Fraction((synth.C_1 - F0) * k1, S)
            if v.denominator != 1:
                continue
            if synth.U_F >= 2 and (synth.S_F * k1) % S:
                continue
            return _fail("synth-one-comb-multi-ptrs", (k1, k3),
                         Fraction(k1, S), Fraction(k3, synth.S_PT))
    return CheckResult(True, "synth-one-comb-multi-ptrs")


def check_synth_one_comb_multi_ptrs(synth: SynthesizedPattern) -> CheckResult:
    """One comb symbol with at least two PTRS symbols, single- or multi-tone."""
    if synth.M != 1 or synth.U < 2:
        raise PatternError("check_synth_one_comb_multi_ptrs needs M = 1 and U >= 2")
    return _one_comb_multi_ptrs(synth)


def _one_comb_one_ptrs(synth: SynthesizedPattern) -> CheckResult:
    rule = "synth-one-comb-one-ptrs"
    S = synth.comb.S_sub
    F0 = synth.comb.offsets[0]
    if synth.C_2 == 0:
        return _structural(rule, Fraction(0), Fraction(1, 2),
                           "PTRS shares the comb symbol, Doppler is unobservable")
    for k1 in range(S):
        if synth.U_F >= 2 and (synth.S_F * k1) % S:
            continue
        for k4 in range(synth.C_2 * S):
            if (k1, k4) == (0, 0):
                continue
            if (k4 - (synth.C_1 - F0) * k1) % S == 0:
                return _fail(rule, (k1, k4), Fraction(k1, S), Fraction(k4, synth.C_2 * S))
    return CheckResult(True, rule)


def check_synth_one_comb_one_ptrs(synth: SynthesizedPattern) -> CheckResult:
    """One comb symbol with one multi-tone PTRS symbol (requires ``U_F >= 2``)."""
    if synth.M != 1 or synth.U != 1:
        raise PatternError("check_synth_one_comb_one_ptrs needs M = 1 and U = 1")
    if synth.U_F < 2:
        raise PatternError("U_F < 2 is structurally ambiguous for one comb + one PTRS symbol")
    return _one_comb_one_ptrs(synth)


# --- irregular ----------------------------------------------------------

def _line_collision(a: int, b: int) -> Collision:
    """Nonzero (x, y) on the line b*y - a*x = 0 (mod 1)."""
    if b == 0:
        return Fraction(0), Fraction(1, 2)
    if a == 0:
        return Fraction(1, 2), Fraction(0)
    g = math.gcd(a, b)
    a, b = a // g, b // g
    return Fraction(1, 2 * a) % 1, Fraction(1, 2 * b) % 1


def derive_irregular(irr: IrregularPattern) -> IrregularDerived:
    S1 = irr.symbols[0][0]
    d_star = None
    multi = [ds for _, ds in irr.symbols if len(ds) >= 2]
    if multi:
        d_star = min(b - a for ds in multi for a, b in zip(ds, ds[1:]))
    S_star = math.gcd(*[s - S1 for s, _ in irr.symbols[1:]]) if irr.G >= 2 else None
    S_mn = pair = None
    if not multi and irr.G >= 3:
        d1 = irr.symbols[0][1][0]
        best = None
        for m, n in itertools.combinations(range(1, irr.G), 2):
            sm, (dm,) = irr.symbols[m]
            sn, (dn,) = irr.symbols[n]
            det = abs((dm - d1) * (sn - S1) - (sm - S1) * (dn - d1))
            if det and (best is None or det < best[0]):
                best = (det, (m, n))
        if best is not None:
            S_mn, pair = best
    return IrregularDerived(d_star, S_star, S_mn, pair)


def check_irregular(irr: IrregularPattern) -> CheckResult:
    """Anti-condition for a general irregular pattern.

    With some symbol carrying two or more REs the delay is quantized by the
    smallest in-symbol spacing ``d*`` and the Doppler by ``S* d*``; with one
    RE per symbol both are quantized by the cross-determinant of the chosen
    pair of hops with distinct slopes.
    """
    rule = "irregular"
    problems = validate(irr)
    if problems:
        raise PatternError("; ".join(problems))
    res = irr.res()
    S1, d1 = res[0]
    if irr.G == 1:
        ds = irr.symbols[0][1]
        if len(ds) == 1:
            return _structural(rule, Fraction(1, 2), Fraction(0), "a single RE resolves nothing")
        return _structural(rule, Fraction(0), Fraction(1, 2),
                           "need G >= 2 to observe Doppler")
    der = derive_irregular(irr)
    dS = np.array([s - S1 for s, _ in res])
    dd = np.array([d - d1 for _, d in res])
    if der.d_star is not None:
        mod = der.S_star * der.d_star
        k1, k2 = np.meshgrid(np.arange(der.d_star), np.arange(mod), indexing="ij")
        ok = np.ones(k1.shape, dtype=bool)
        for a, b in zip(dS, dd):
            ok &= (a * k2 - b * der.S_star * k1) % mod == 0
        hit = _first_solution(ok)
        if hit is None:
            return CheckResult(True, rule + "-multi-re")
        return _fail(rule + "-multi-re", hit, Fraction(hit[0], der.d_star), Fraction(hit[1], mod))
    if der.S_star_mn is None:
        # every hop is a multiple of one primitive direction
        g = math.gcd(*[int(v) for v in np.concatenate([dd[1:], dS[1:]])])
        return _structural(rule + "-single-re", *_line_collision(int(dd[1]) // g, int(dS[1]) // g),
                           reason="collinear hopping, no pair with distinct slopes")
    mod = der.S_star_mn
    k1, k2 = np.meshgrid(np.arange(mod), np.arange(mod), indexing="ij")
    ok = np.ones(k1.shape, dtype=bool)
    for a, b in zip(dS, dd):
        ok &= (a * k2 - b * k1) % mod == 0
    hit = _first_solution(ok)
    if hit is None:
        return CheckResult(True, rule + "-single-re")
    return _fail(rule + "-single-re", hit, Fraction(hit[0], mod), Fraction(hit[1], mod))


# --- dispatch -----------------------------------------------------------

def check(pattern: Pattern) -> CheckResult:
    """Route a pattern to the matching anti-condition."""
    if isinstance(pattern, CombPattern):
        return check_comb_super(pattern)
    if isinstance(pattern, SynthesizedPattern):
        if pattern.M >= 2:
            return check_synth_multi_comb(pattern)
        if pattern.U >= 2:
            return _one_comb_multi_ptrs(pattern)
        if pattern.U == 1:
            # U_F = 1 runs the same search without the tone-spacing constraint
            return _one_comb_one_ptrs(pattern)
        return _structural("synth", Fraction(0), Fraction(1, 2),
                           "single comb symbol without PTRS, Doppler is unobservable")
    if isinstance(pattern, IrregularPattern):
        return check_irregular(pattern)
    raise PatternError(f"unsupported pattern type {type(pattern).__name__}")


def oracle_y_max(pattern: Pattern) -> Fraction:
    """Doppler extent (in units of 1/T) over which a check is exact."""
    if isinstance(pattern, CombPattern):
        return Fraction(1, pattern.S_sym)
    return Fraction(1)


# --- oracle -------------------------------------------------------------

def collision_oracle(irr: IrregularPattern, include_boundary: bool = False,
                     y_max: Fraction = Fraction(1)) -> CollisionSet:
    """Enumerate every colliding ``(x, y)`` with ``x`` in [0, 1), ``y`` in [0, y_max).

    Independent of the checkers: each RE contributes the integrality test
    directly.  When two RE difference vectors are independent, Cramer's rule
    puts every solution on the ``1/m`` lattice for any nonzero 2x2 minor
    ``m``, so scanning that lattice is complete.  When all difference
    vectors are parallel the solution set contains whole lines; the scan
    then uses a lattice fine enough to hit a point on them and the result is
    flagged ``continuous``.
    """
    res = irr.res()
    if len(res) < 2:
        raise PatternError("the oracle needs at least two REs")
    y_max = Fraction(y_max)
    S1, d1 = res[0]
    vecs = sorted({(s - S1, d - d1) for s, d in res[1:]})
    minors = {abs(da * sb - sa * db) for (sa, da), (sb, db) in itertools.combinations(vecs, 2)}
    minors.discard(0)
    continuous = not minors
    if minors:
        P = Q = min(minors)
    else:
        g = math.gcd(*[v for vec in vecs for v in vec])
        ds, dd = vecs[0][0] // g, vecs[0][1] // g
        # lines ds*y - dd*x in (1/g)Z
        P = 2 * g * max(abs(dd), 1) * y_max.denominator
        Q = 2 * g * max(abs(ds), 1) * y_max.denominator
    a = np.arange(P + 1 if include_boundary else P)
    b_hi = y_max * Q
    nb = math.floor(b_hi) + 1 if include_boundary else math.ceil(b_hi)
    b = np.arange(nb)
    A, B = np.meshgrid(a, b, indexing="ij")
    ok = np.ones(A.shape, dtype=bool)
    PQ = P * Q
    for s, d in vecs:
        ok &= (s * B * P - d * A * Q) % PQ == 0
    ok[0, 0] = False
    hits = [(Fraction(int(i), P), Fraction(int(j), Q)) for i, j in zip(*np.nonzero(ok))]
    return CollisionSet(sorted(set(hits)), (P, Q), continuous)


def oracle_agrees(pattern: Pattern, N: int) -> tuple[bool, CheckResult, CollisionSet]:
    """Run checker and oracle on the same pattern; ``True`` when they agree."""
    res = check(pattern)
    col = collision_oracle(to_irregular(pattern, N), y_max=oracle_y_max(pattern))
    return res.passed == (not col), res, col


# --- search -------------------------------------------------------------

@dataclass
class SearchConstraints:
    family: str = "comb"
    S_sub: tuple[int, int] = (4, 4)
    S_sym: tuple[int, int] = (1, 1)
    M: tuple[int, int] = (1, 4)
    max_symbols: int = 8
    max_res: int | None = None
    max_offset: int = 8
    N: int = 60
    U: tuple[int, int] = (1, 3)
    U_F: tuple[int, int] = (1, 2)
    S_PT: tuple[int, int] = (1, 3)
    S_F: tuple[int, int] = (1, 3)
    limit: int | None = None


@dataclass(frozen=True)
class SearchHit:
    n_res: int
    span: int
    pattern: Pattern = field(compare=False)


def _rng(t: tuple[int, int]) -> range:
    return range(t[0], t[1] + 1)


def _comb_candidates(c: SearchConstraints) -> Iterator[CombPattern]:
    for S in _rng(c.S_sub):
        for Ss in _rng(c.S_sym):
            for M in _rng(c.M):
                for tail in itertools.product(range(S), repeat=M - 1):
                    yield CombPattern(S, Ss, (0,) + tail)


def _synth_candidates(c: SearchConstraints) -> Iterator[SynthesizedPattern]:
    for comb in _comb_candidates(c):
        for U in _rng(c.U):
            for U_F in _rng(c.U_F):
                for S_PT in (_rng(c.S_PT) if U >= 2 else [1]):
                    for S_F in (_rng(c.S_F) if U_F >= 2 else [1]):
                        for C_1 in range(c.max_offset):
                            for C_2 in range(1, c.max_symbols):
                                syn = SynthesizedPattern(comb, C_1, C_2, S_F, S_PT, U_F, U)
                                if not validate(syn):
                                    yield syn


def _irregular_candidates(c: SearchConstraints) -> Iterator[IrregularPattern]:
    cells = [(s, d) for s in range(c.max_symbols) for d in range(c.max_offset)]
    top = c.max_res or 5
    for r in range(2, top + 1):
        for combo in itertools.combinations(cells, r):
            # canonical under shifts: first symbol 0 and smallest offset 0
            if combo[0][0] != 0 or min(d for _, d in combo) != 0:
                continue
            cells_by_s: dict[int, list[int]] = {}
            for s, d in combo:
                cells_by_s.setdefault(s, []).append(d)
            yield IrregularPattern(tuple((s, tuple(ds)) for s, ds in sorted(cells_by_s.items())))


def search_patterns(constraints: SearchConstraints) -> list[SearchHit]:
    """Exhaustively list passing patterns, fewest REs first, then shortest span."""
    c = constraints
    if c.family == "comb":
        cands: Iterator[Pattern] = _comb_candidates(c)
    elif c.family == "synth":
        cands = _synth_candidates(c)
    elif c.family == "irregular":
        cands = _irregular_candidates(c)
    else:
        raise ValueError(f"unknown family {c.family!r}")
    hits = []
    for pat in cands:
        try:
            irr = to_irregular(pat, c.N)
        except PatternError:
            continue
        if irr.span > c.max_symbols:
            continue
        if c.max_res is not None and irr.n_res > c.max_res:
            continue
        if check(pat).passed:
            hits.append(SearchHit(irr.n_res, irr.span, pat))
    hits.sort(key=lambda h: (h.n_res, h.span, repr(h.pattern)))
    return hits[: c.limit] if c.limit else hits
